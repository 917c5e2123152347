#include "g2s/gsplat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "g2s/ops.hpp"
#include "g2s/ply.hpp"

namespace g2s {

namespace {

void expect_rows(const char* field, const Tensor& t, std::size_t n,
                 std::size_t cols) {
  if (!t.defined()) {
    throw std::invalid_argument(std::string("GaussianSet: ") + field +
                                " is undefined");
  }
  const Shape want = cols ? Shape{n, cols} : Shape{n};
  if (t.shape() != want) {
    throw ShapeError("GaussianSet", {t.shape(), want},
                     std::string(field) + " has the wrong shape");
  }
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

void GaussianSet::validate() const {
  if (!mu.defined() || mu.dim() != 2 || mu.size(1) != 3) {
    throw std::invalid_argument("GaussianSet: mu must be N x 3");
  }
  const std::size_t n = mu.size(0);
  expect_rows("quat", quat, n, 4);
  expect_rows("log_scale", log_scale, n, 3);
  expect_rows("color_logit", color_logit, n, 3);
  expect_rows("opacity_logit", opacity_logit, n, 0);
}

std::vector<NamedTensor> GaussianSet::parameters() const {
  return {{"mu", mu},
          {"quat", quat},
          {"log_scale", log_scale},
          {"color_logit", color_logit},
          {"opacity_logit", opacity_logit}};
}

GaussianSet GaussianSet::clone(bool requires_grad) const {
  GaussianSet out;
  out.mu = mu.detach();
  out.quat = quat.detach();
  out.log_scale = log_scale.detach();
  out.color_logit = color_logit.detach();
  out.opacity_logit = opacity_logit.detach();
  for (auto& p : out.parameters()) p.tensor.set_requires_grad(requires_grad);
  return out;
}

GaussianSet GaussianSet::from_points(const PointCloud& pc, bool requires_grad) {
  pc.validate("GaussianSet::from_points");
  const std::size_t n = pc.size();
  std::vector<double> mu(n * 3), quat(n * 4, 0.0), ls(n * 3), col(n * 3, 0.0),
      op(n, logit(0.1));
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) mu[i * 3 + k] = pc.points[i][k];
    quat[i * 4] = 1.0;
    double dist = 0.0;
    std::size_t used = 0;
    if (n > 1) {
      for (std::size_t j : knn(pc, pc.points[i], std::min<std::size_t>(4, n))) {
        if (j == i || used == 3) continue;
        dist += std::sqrt(squared_distance(pc.points[i], pc.points[j]));
        ++used;
      }
    }
    const double scale = used ? std::max(dist / used, 1e-4) : 1e-2;
    for (int k = 0; k < 3; ++k) ls[i * 3 + k] = std::log(scale);
  }
  GaussianSet gs;
  gs.mu = Tensor::from({n, 3}, std::move(mu), requires_grad);
  gs.quat = Tensor::from({n, 4}, std::move(quat), requires_grad);
  gs.log_scale = Tensor::from({n, 3}, std::move(ls), requires_grad);
  gs.color_logit = Tensor::from({n, 3}, std::move(col), requires_grad);
  gs.opacity_logit = Tensor::from({n}, std::move(op), requires_grad);
  return gs;
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr", {a.shape(), b.shape()});
  if (a.numel() == 0) throw std::invalid_argument("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError("psnr", {{a.height, a.width, 3}, {b.height, b.width, 3}});
  }
  return psnr(a.to_tensor(), b.to_tensor());
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("l1_loss", {a.shape(), b.shape()});
  return mean(abs(a - b));
}

Tensor gs_photometric_loss(const Tensor& rendered, const Tensor& target,
                           const GaussianSet& gs, double lambda_ssim,
                           double gamma) {
  Tensor loss = l1_loss(rendered, target);
  if (lambda_ssim != 0.0) {
    loss = loss + (1.0 - ssim(rendered, target)) * lambda_ssim;
  }
  if (gamma != 0.0) {
    // prod_j s_ij = exp(sum_j log_scale_ij)
    loss = loss + mean(exp(sum(gs.log_scale, 1))) * gamma;
  }
  return loss;
}

Tensor gs_point_loss(const Tensor& centers, const Tensor& points) {
  if (centers.numel() == 0 || points.numel() == 0) {
    throw std::invalid_argument("gs_point_loss: empty point set");
  }
  return chamfer(centers, points);
}

Tensor gs_image_loss(const Tensor& rendered, const Tensor& target,
                     double lambda) {
  Tensor loss = l1_loss(rendered, target) * (1.0 - lambda);
  if (lambda != 0.0) loss = loss + (1.0 - ssim(rendered, target)) * lambda;
  return loss;
}

GaussianDivergence::GaussianDivergence(std::size_t iteration, double loss)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "Gaussian optimization diverged at iteration " << iteration
           << " (loss " << loss << ")";
        return os.str();
      }()),
      iteration_(iteration) {}

GaussianSet optimize_gaussians(const GaussianSet& init,
                               const std::vector<GaussianView>& views,
                               const FitOptions& opts, FitReport* report) {
  if (opts.iters == 0) throw std::invalid_argument("optimize_gaussians: iters must be >= 1");
  if (views.empty()) throw std::invalid_argument("optimize_gaussians: no views");
  init.validate();
  GaussianSet gs = init.clone(true);
  std::vector<Tensor> targets;
  targets.reserve(views.size());
  for (const auto& v : views) {
    if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
      throw std::invalid_argument("optimize_gaussians: image and camera extents differ");
    }
    targets.push_back(v.image.to_tensor());
  }

  AdamW adam(AdamWOptions{.lr = opts.lr_mu, .weight_decay = 0.0});
  adam.add_group({{"mu", gs.mu}}, opts.lr_mu, 0.0);
  adam.add_group({{"quat", gs.quat}}, opts.lr_quat, 0.0);
  adam.add_group({{"log_scale", gs.log_scale}}, opts.lr_scale, 0.0);
  adam.add_group({{"color_logit", gs.color_logit}}, opts.lr_color, 0.0);
  adam.add_group({{"opacity_logit", gs.opacity_logit}}, opts.lr_opacity, 0.0);

  if (report) report->losses.clear();
  for (std::size_t it = 0; it < opts.iters; ++it) {
    adam.zero_grad();
    double total = 0.0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Tensor img = render(gs, views[v].camera, opts.render).image;
      const Tensor loss = gs_photometric_loss(img, targets[v], gs,
                                              opts.lambda_ssim, opts.gamma);
      total += loss.item();
      loss.backward();
    }
    if (!std::isfinite(total)) throw GaussianDivergence(it, total);
    if (report) report->losses.push_back(total);
    adam.step();
  }
  return gs.clone(false);
}

void write_gaussian_ply(const std::string& path, const GaussianSet& gs) {
  gs.validate();
  const std::size_t n = gs.size();
  std::vector<std::string> names = {"x",     "y",     "z",       "scale_0",
                                    "scale_1", "scale_2", "rot_0", "rot_1",
                                    "rot_2", "rot_3", "opacity", "red",
                                    "green", "blue"};
  std::vector<std::vector<double>> cols(names.size(), std::vector<double>(n));
  const auto mu = gs.mu.data(), q = gs.quat.data(), ls = gs.log_scale.data(),
             cl = gs.color_logit.data(), op = gs.opacity_logit.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      cols[k][i] = mu[i * 3 + k];
      cols[3 + k][i] = ls[i * 3 + k];
      cols[11 + k][i] = 1.0 / (1.0 + std::exp(-cl[i * 3 + k]));
    }
    for (int k = 0; k < 4; ++k) cols[6 + k][i] = q[i * 4 + k];
    cols[10][i] = op[i];
  }
  write_ply_vertices(path, names, cols);
}

GaussianSet read_gaussian_ply(const std::string& path) {
  const PlyVertices v = read_ply_vertices(path);
  const std::size_t n = v.count;
  std::vector<double> mu(n * 3), quat(n * 4), ls(n * 3), col(n * 3), op(n);
  const char* xyz[] = {"x", "y", "z"};
  const char* rgb[] = {"red", "green", "blue"};
  for (int k = 0; k < 3; ++k) {
    const auto& m = v.column(xyz[k], path);
    const auto& s = v.column("scale_" + std::to_string(k), path);
    const auto& c = v.column(rgb[k], path);
    for (std::size_t i = 0; i < n; ++i) {
      mu[i * 3 + k] = m[i];
      ls[i * 3 + k] = s[i];
      // keep the logit finite for saturated 8-bit style colors
      const double p = std::clamp(c[i], 1e-6, 1.0 - 1e-6);
      col[i * 3 + k] = logit(p);
    }
  }
  for (int k = 0; k < 4; ++k) {
    const auto& r = v.column("rot_" + std::to_string(k), path);
    for (std::size_t i = 0; i < n; ++i) quat[i * 4 + k] = r[i];
  }
  const auto& o = v.column("opacity", path);
  for (std::size_t i = 0; i < n; ++i) op[i] = o[i];
  GaussianSet gs;
  gs.mu = Tensor::from({n, 3}, std::move(mu));
  gs.quat = Tensor::from({n, 4}, std::move(quat));
  gs.log_scale = Tensor::from({n, 3}, std::move(ls));
  gs.color_logit = Tensor::from({n, 3}, std::move(col));
  gs.opacity_logit = Tensor::from({n}, std::move(op));
  return gs;
}

}  // namespace g2s
