#include "g2s/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "g2s/camera.hpp"
#include "g2s/gsplat.hpp"
#include "g2s/ops.hpp"
#include "g2s/pointcloud.hpp"
#include "g2s/rng.hpp"

namespace g2s {

namespace {

Tensor leaf(Shape shape, Rng& rng, double lo, double hi) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor normal_leaf(Shape shape, Rng& rng) { return Tensor::randn(std::move(shape), rng, 1.0, true); }

// Values bounded away from zero, for kinks at the origin.
Tensor signed_leaf(Shape shape, Rng& rng) {
  Tensor t = leaf(std::move(shape), rng, 0.1, 1.5);
  for (auto& x : t.mutable_data())
    if (rng.uniform() < 0.5) x = -x;
  return t;
}

// Contracts an output with fixed random weights so every Jacobian row counts.
Tensor contract(const Tensor& out, const Tensor& weights) { return sum(out * weights); }

RegimeFn sign_regime(const Tensor& t) {
  return [t] {
    std::vector<std::uint8_t> r;
    for (double x : t.data()) r.push_back(x > 0.0);
    return r;
  };
}

// Position of the extremum along `dim` for every output element.
RegimeFn extremum_regime(const Tensor& t, std::size_t dim, bool largest) {
  return [t, dim, largest] {
    NoGradGuard guard;
    const Tensor sel = largest ? max(t, dim, true) : min(t, dim, true);
    const Tensor eq = sub(t, sel);
    std::vector<std::uint8_t> r;
    for (double x : eq.data()) r.push_back(x == 0.0);
    return r;
  };
}

// Nearest-neighbour assignment in both directions.
RegimeFn nearest_regime(const Tensor& a, const Tensor& b) {
  return [a, b] {
    std::vector<std::uint8_t> r;
    auto side = [&r](const Tensor& x, const Tensor& y) {
      const auto xd = x.data(), yd = y.data();
      for (std::size_t i = 0; i < x.size(0); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t j = 0; j < y.size(0); ++j) {
          double d = 0.0;
          for (int k = 0; k < 3; ++k) {
            const double e = xd[i * 3 + k] - yd[j * 3 + k];
            d += e * e;
          }
          if (d < best_d) best_d = d, best = j;
        }
        r.push_back(static_cast<std::uint8_t>(best & 0xff));
        r.push_back(static_cast<std::uint8_t>(best >> 8));
      }
    };
    side(a, b);
    side(b, a);
    return r;
  };
}

// Projection visibility, depth order and the per pixel skip/blend/clamp
// branch of every splat.
RegimeFn render_regime(const GaussianSet& gs, const CameraModel& cam) {
  return [gs, cam] {
    std::vector<Splat2D> splats;
    std::vector<std::uint8_t> r;
    for (std::size_t i = 0; i < gs.size(); ++i) {
      auto s = project_gaussian(gaussian_at(gs, i), cam, i);
      r.push_back(s.has_value());
      if (s) splats.push_back(*s);
    }
    std::stable_sort(splats.begin(), splats.end(),
                     [](const Splat2D& a, const Splat2D& b) { return a.depth < b.depth; });
    for (const auto& s : splats) r.push_back(static_cast<std::uint8_t>(s.index));
    for (std::size_t py = 0; py < cam.height; ++py)
      for (std::size_t px = 0; px < cam.width; ++px)
        for (const auto& s : splats) {
          const double dx = static_cast<double>(px) - s.mean2d[0];
          const double dy = static_cast<double>(py) - s.mean2d[1];
          const double q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy +
                           s.conic[2] * dy * dy;
          const double a = s.alpha * std::exp(-0.5 * q);
          r.push_back(a < kAlphaMin ? 0 : a > kAlphaClamp ? 2 : 1);
        }
    return r;
  };
}

GaussianSet random_gaussians(Rng& rng, std::size_t n) {
  std::vector<double> mu(n * 3), q(n * 4), ls(n * 3), cl(n * 3), op(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) mu[i * 3 + k] = rng.uniform(-0.4, 0.4);
    for (int k = 0; k < 4; ++k) q[i * 4 + k] = rng.normal();
    for (int k = 0; k < 3; ++k) {
      ls[i * 3 + k] = std::log(rng.uniform(0.05, 0.25));
      cl[i * 3 + k] = rng.uniform(-2.0, 2.0);
    }
    op[i] = rng.uniform(-1.5, 1.5);
  }
  GaussianSet gs;
  gs.mu = Tensor::from({n, 3}, mu, true);
  gs.quat = Tensor::from({n, 4}, q, true);
  gs.log_scale = Tensor::from({n, 3}, ls, true);
  gs.color_logit = Tensor::from({n, 3}, cl, true);
  gs.opacity_logit = Tensor::from({n}, op, true);
  return gs;
}

// A camera on a sphere of radius ~2 around the origin, looking at it.
CameraModel random_camera(Rng& rng, std::size_t size) {
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  const double z = rng.uniform(-0.8, 0.8);
  const double rad = rng.uniform(1.8, 2.4);
  const double s = std::sqrt(1.0 - z * z);
  const Vec3 eye{rad * s * std::cos(theta), rad * s * std::sin(theta), rad * z};
  const double f = static_cast<double>(size);
  const double c = (f - 1.0) / 2.0;
  return CameraModel::look_at(eye, {0, 0, 0}, {0, 0, 1}, f, f, c, c, size, size);
}

std::vector<Tensor> leaves_of(const GaussianSet& gs) {
  return {gs.mu, gs.quat, gs.log_scale, gs.color_logit, gs.opacity_logit};
}

struct OpCase {
  const char* name;
  std::function<void(Rng&, const GradcheckOptions&, GradcheckCase&)> run;
};

// Unary elementwise op on a 3 x 4 input drawn by `make`.
OpCase unary(const char* name, Tensor (*op)(const Tensor&),
             Tensor (*make)(Shape, Rng&), bool kink = false) {
  return {name, [=](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
            Tensor x = make({3, 4}, rng);
            Tensor w = Tensor::randn({3, 4}, rng, 1.0);
            compare_gradients([&] { return contract(op(x), w); }, {x}, o, acc,
                              kink ? sign_regime(x) : RegimeFn{});
          }};
}

Tensor positive_leaf(Shape shape, Rng& rng) { return leaf(std::move(shape), rng, 0.3, 2.0); }

std::vector<OpCase> autodiff_cases() {
  using F = Tensor (*)(const Tensor&);
  std::vector<OpCase> cases;
  auto binary = [](const char* name, Tensor (*op)(const Tensor&, const Tensor&)) {
    return OpCase{name, [op](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                    // second operand broadcasts over rows
                    Tensor a = normal_leaf({3, 4}, rng);
                    Tensor b = leaf({4}, rng, 0.5, 2.0);
                    Tensor w = Tensor::randn({3, 4}, rng, 1.0);
                    compare_gradients([&] { return contract(op(a, b), w); }, {a, b}, o, acc);
                  }};
  };
  cases.push_back(binary("add", &add));
  cases.push_back(binary("sub", &sub));
  cases.push_back(binary("mul", &mul));
  cases.push_back(binary("div", &div));
  cases.push_back({"add_scalar", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor x = normal_leaf({5}, rng);
                     Tensor w = Tensor::randn({5}, rng, 1.0);
                     compare_gradients([&] { return contract(add_scalar(x, 0.7), w); }, {x}, o, acc);
                   }});
  cases.push_back({"mul_scalar", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor x = normal_leaf({5}, rng);
                     Tensor w = Tensor::randn({5}, rng, 1.0);
                     compare_gradients([&] { return contract(mul_scalar(x, -1.3), w); }, {x}, o,
                                       acc);
                   }});
  cases.push_back(unary("neg", static_cast<F>(&neg), &normal_leaf));
  cases.push_back(unary("exp", static_cast<F>(&exp), &normal_leaf));
  cases.push_back(unary("log", static_cast<F>(&log), &positive_leaf));
  cases.push_back(unary("sigmoid", static_cast<F>(&sigmoid), &normal_leaf));
  cases.push_back(unary("relu", static_cast<F>(&relu), &signed_leaf, true));
  cases.push_back(unary("gelu", static_cast<F>(&gelu), &normal_leaf));
  cases.push_back(unary("abs", static_cast<F>(&abs), &signed_leaf, true));
  cases.push_back(unary("square", static_cast<F>(&square), &normal_leaf));
  cases.push_back(unary("sqrt", static_cast<F>(&sqrt), &positive_leaf));
  cases.push_back({"matmul", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 5}, rng), b = normal_leaf({5, 2}, rng);
                     Tensor w = Tensor::randn({3, 2}, rng, 1.0);
                     compare_gradients([&] { return contract(matmul(a, b), w); }, {a, b}, o, acc);
                   }});
  cases.push_back({"transpose", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 5}, rng);
                     Tensor w = Tensor::randn({5, 3}, rng, 1.0);
                     compare_gradients([&] { return contract(transpose(a), w); }, {a}, o, acc);
                   }});
  cases.push_back({"reshape", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 4}, rng);
                     Tensor w = Tensor::randn({2, 6}, rng, 1.0);
                     compare_gradients([&] { return contract(reshape(a, {2, 6}), w); }, {a}, o,
                                       acc);
                   }});
  cases.push_back({"sum", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 4}, rng);
                     compare_gradients([&] { return square(sum(a)); }, {a}, o, acc);
                   }});
  cases.push_back({"mean", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 4}, rng);
                     compare_gradients([&] { return square(mean(a)); }, {a}, o, acc);
                   }});
  for (std::size_t dim = 0; dim < 2; ++dim) {
    cases.push_back({dim == 0 ? "sum_dim0" : "sum_dim1",
                     [dim](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                       Tensor a = normal_leaf({3, 4}, rng);
                       Tensor w = Tensor::randn({dim == 0 ? 4u : 3u}, rng, 1.0);
                       compare_gradients([&] { return contract(sum(a, dim), w); }, {a}, o, acc);
                     }});
    cases.push_back({dim == 0 ? "mean_dim0" : "mean_dim1",
                     [dim](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                       Tensor a = normal_leaf({3, 4}, rng);
                       Tensor w = Tensor::randn({dim == 0 ? 4u : 3u}, rng, 1.0);
                       compare_gradients([&] { return contract(mean(a, dim), w); }, {a}, o, acc);
                     }});
    for (bool largest : {true, false}) {
      static const char* names[2][2] = {{"min_dim0", "max_dim0"}, {"min_dim1", "max_dim1"}};
      cases.push_back({names[dim][largest],
                       [dim, largest](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                         Tensor a = normal_leaf({3, 4}, rng);
                         Tensor w = Tensor::randn({dim == 0 ? 4u : 3u}, rng, 1.0);
                         compare_gradients(
                             [&] { return contract(largest ? max(a, dim) : min(a, dim), w); },
                             {a}, o, acc, extremum_regime(a, dim, largest));
                       }});
    }
  }
  cases.push_back({"softmax", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 5}, rng);
                     Tensor w = Tensor::randn({3, 5}, rng, 1.0);
                     compare_gradients([&] { return contract(softmax(a), w); }, {a}, o, acc);
                   }});
  cases.push_back({"layer_norm", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 6}, rng);
                     Tensor w = Tensor::randn({3, 6}, rng, 1.0);
                     compare_gradients([&] { return contract(layer_norm(a), w); }, {a}, o, acc);
                   }});
  cases.push_back({"gather_rows", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({4, 3}, rng);
                     std::vector<std::size_t> idx(6);
                     for (auto& i : idx) i = rng.below(4);
                     Tensor w = Tensor::randn({6, 3}, rng, 1.0);
                     compare_gradients([&] { return contract(gather_rows(a, idx), w); }, {a}, o,
                                       acc);
                   }});
  cases.push_back({"scatter_rows", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({4, 3}, rng);
                     std::vector<std::size_t> idx(4);
                     for (auto& i : idx) i = rng.below(5);
                     Tensor w = Tensor::randn({5, 3}, rng, 1.0);
                     compare_gradients([&] { return contract(scatter_rows(a, idx, 5), w); }, {a},
                                       o, acc);
                   }});
  cases.push_back({"concat", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({2, 3}, rng), b = normal_leaf({2, 2}, rng);
                     Tensor w = Tensor::randn({2, 5}, rng, 1.0);
                     compare_gradients([&] { return contract(concat({a, b}, 1), w); }, {a, b}, o,
                                       acc);
                   }});
  cases.push_back({"slice", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
                     Tensor a = normal_leaf({3, 5}, rng);
                     Tensor w = Tensor::randn({3, 2}, rng, 1.0);
                     compare_gradients([&] { return contract(slice(a, 1, 2, 2), w); }, {a}, o,
                                       acc);
                   }});
  return cases;
}

std::vector<OpCase> chamfer_cases() {
  return {{"chamfer", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
             Tensor a = normal_leaf({1 + rng.below(12), 3}, rng);
             Tensor b = normal_leaf({1 + rng.below(12), 3}, rng);
             compare_gradients([&] { return chamfer(a, b); }, {a, b}, o, acc,
                               nearest_regime(a, b));
           }},
          {"patch_chamfer", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
             const std::size_t k = 2 + rng.below(4);
             Tensor a = normal_leaf({3 * k, 3}, rng);
             Tensor b = normal_leaf({3 * k, 3}, rng);
             RegimeFn regime = [a, b, k] {
               std::vector<std::uint8_t> r;
               for (std::size_t p = 0; p < 3; ++p) {
                 auto part = nearest_regime(slice(a, 0, p * k, k), slice(b, 0, p * k, k))();
                 r.insert(r.end(), part.begin(), part.end());
               }
               return r;
             };
             compare_gradients([&] { return sum(patch_chamfer(a, b, k)); }, {a, b}, o, acc, regime);
           }}};
}

constexpr std::size_t kGaussians = 8;
constexpr std::size_t kPixels = 16;

RenderOptions full_composite() {
  RenderOptions r;
  r.early_exit = false;
  return r;
}

std::vector<OpCase> gsplat_cases() {
  return {{"rasterize", [](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
             const auto gs = random_gaussians(rng, kGaussians);
             const auto cam = random_camera(rng, kPixels);
             Tensor w = Tensor::randn({kPixels, kPixels, 3}, rng, 1.0);
             compare_gradients([&] { return contract(rasterize(gs, cam, full_composite()), w); },
                               leaves_of(gs), o, acc, render_regime(gs, cam));
           }}};
}

std::vector<OpCase> loss_cases() {
  auto target = [](Rng& rng) {
    Tensor t = Tensor::zeros({kPixels, kPixels, 3});
    for (auto& v : t.mutable_data()) v = rng.uniform();
    return t;
  };
  return {{"photometric", [target](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
             const auto gs = random_gaussians(rng, kGaussians);
             const auto cam = random_camera(rng, kPixels);
             const Tensor img = target(rng);
             compare_gradients(
                 [&] {
                   return gs_photometric_loss(rasterize(gs, cam, full_composite()), img, gs, 0.2,
                                              0.5);
                 },
                 leaves_of(gs), o, acc, render_regime(gs, cam));
           }},
          {"image", [target](Rng& rng, const GradcheckOptions& o, GradcheckCase& acc) {
             const auto gs = random_gaussians(rng, kGaussians);
             const auto cam = random_camera(rng, kPixels);
             const Tensor img = target(rng);
             compare_gradients(
                 [&] { return gs_image_loss(rasterize(gs, cam, full_composite()), img, 0.2); },
                 leaves_of(gs), o, acc, render_regime(gs, cam));
           }}};
}

}  // namespace

double GradcheckResult::max_rel_error() const {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.max_rel_error);
  return m;
}

bool GradcheckResult::passed(double tolerance) const {
  for (const auto& c : cases)
    if (!(c.max_rel_error < tolerance) || c.compared == 0) return false;
  return true;
}

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"autodiff", "chamfer", "gsplat", "losses"};
  return names;
}

void compare_gradients(const std::function<Tensor()>& build, const std::vector<Tensor>& leaves,
                       const GradcheckOptions& opts, GradcheckCase& acc, const RegimeFn& regime) {
  for (auto l : leaves) l.zero_grad();
  build().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) {
    analytic.emplace_back(l.grad().begin(), l.grad().end());
    if (analytic.back().empty()) analytic.back().assign(l.numel(), 0.0);
  }
  NoGradGuard guard;
  const auto base = regime ? regime() : std::vector<std::uint8_t>{};
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Tensor l = leaves[k];
    auto data = l.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + opts.step;
      const double fp = build().item();
      bool crossed = regime && regime() != base;
      data[i] = orig - opts.step;
      const double fm = build().item();
      crossed = crossed || (regime && regime() != base);
      data[i] = orig;
      if (crossed) {
        ++acc.excluded;
        continue;
      }
      const double n = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double den = std::max({std::abs(a), std::abs(n), opts.floor});
      const double err = std::abs(a - n) / den;
      acc.max_rel_error = std::isnan(err) ? INFINITY : std::max(acc.max_rel_error, err);
      ++acc.compared;
    }
  }
}

GradcheckResult run_gradcheck(const std::string& module, const GradcheckOptions& opts) {
  std::vector<OpCase> cases;
  if (module == "autodiff") cases = autodiff_cases();
  else if (module == "chamfer") cases = chamfer_cases();
  else if (module == "gsplat") cases = gsplat_cases();
  else if (module == "losses") cases = loss_cases();
  else throw std::invalid_argument("gradcheck: unknown module '" + module + "'");

  const auto start = std::chrono::steady_clock::now();
  GradcheckResult res;
  res.module = module;
  for (const auto& c : cases) {
    GradcheckCase acc;
    acc.name = c.name;
    Rng rng(derive_seed(opts.seed, std::string("gradcheck.") + c.name));
    for (std::size_t t = 0; t < opts.instances; ++t) {
      c.run(rng, opts, acc);
      ++acc.instances;
    }
    res.cases.push_back(acc);
  }
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace g2s
