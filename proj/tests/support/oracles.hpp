#pragma once

// Reference implementations used as test oracles. Nothing here calls into the
// library's kernels beyond reading tensor data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "g2s/camera.hpp"
#include "g2s/gsplat.hpp"
#include "g2s/rng.hpp"
#include "g2s/tensor.hpp"

namespace oracle {

using g2s::Tensor;
using g2s::Vec3;

// Identifies the piecewise-smooth region a function is evaluated in. Finite
// differences straddling a region change are meaningless, so such elements
// are left out of the comparison.
using Regime = std::function<std::vector<std::uint8_t>()>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t compared = 0;
  std::size_t excluded = 0;
};

// Central differences of a scalar function with respect to every element of
// `leaf`. The function is evaluated without recording a graph. Entries whose
// stencil crosses a regime change are NaN.
inline std::vector<double> numeric_grad(const std::function<double()>& f,
                                        Tensor leaf, double h,
                                        const Regime& regime = {}) {
  std::vector<double> out(leaf.numel());
  auto data = leaf.mutable_data();
  const auto base = regime ? regime() : std::vector<std::uint8_t>{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    bool crossed = false;
    data[i] = orig + h;
    const double fp = f();
    if (regime) crossed = crossed || regime() != base;
    data[i] = orig - h;
    const double fm = f();
    if (regime) crossed = crossed || regime() != base;
    data[i] = orig;
    out[i] = crossed ? std::nan("") : (fp - fm) / (2.0 * h);
  }
  return out;
}

// Accumulates |a - n| / max(|a|, |n|, floor) over all elements with a valid
// numeric derivative.
inline void compare(std::span<const double> analytic,
                    const std::vector<double>& numeric, double floor,
                    GradCheck& acc) {
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double n = numeric[i];
    if (std::isnan(n)) {
      ++acc.excluded;
      continue;
    }
    const double a = i < analytic.size() ? analytic[i] : 0.0;
    const double den = std::max({std::abs(a), std::abs(n), floor});
    acc.max_rel_error = std::max(acc.max_rel_error, std::abs(a - n) / den);
    ++acc.compared;
  }
}

// Runs backward once on `build()` and compares every leaf's gradient with
// central differences.
inline GradCheck gradcheck_detail(const std::function<Tensor()>& build,
                                  const std::vector<Tensor>& leaves,
                                  double h = 1e-5, double floor = 1e-6,
                                  const Regime& regime = {}) {
  for (auto leaf : leaves) leaf.zero_grad();
  build().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    if (analytic.back().empty()) analytic.back().assign(leaf.numel(), 0.0);
  }
  auto value = [&] {
    g2s::NoGradGuard guard;
    return build().item();
  };
  GradCheck acc;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    compare(analytic[k], numeric_grad(value, leaves[k], h, regime), floor, acc);
  }
  return acc;
}

inline double gradcheck(const std::function<Tensor()>& build,
                        const std::vector<Tensor>& leaves, double h = 1e-5,
                        double floor = 1e-6, const Regime& regime = {}) {
  return gradcheck_detail(build, leaves, h, floor, regime).max_rel_error;
}

inline double sq(const Vec3& a, const Vec3& b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

inline double brute_chamfer(const std::vector<Vec3>& a,
                            const std::vector<Vec3>& b) {
  auto side = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
    double total = 0.0;
    for (const auto& p : x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : y) best = std::min(best, sq(p, q));
      total += best;
    }
    return total / static_cast<double>(x.size());
  };
  return side(a, b) + side(b, a);
}

// k nearest by (distance, index) using a full sort.
inline std::vector<std::size_t> brute_knn(const std::vector<Vec3>& pts,
                                          const Vec3& q, std::size_t k) {
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return sq(pts[a], q) < sq(pts[b], q);
  });
  idx.resize(k);
  return idx;
}

// FPS from index 0, recomputing min distances from scratch every round.
inline std::vector<std::size_t> brute_fps(const std::vector<Vec3>& pts,
                                          std::size_t count) {
  std::vector<std::size_t> chosen{0};
  while (chosen.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (auto c : chosen) d = std::min(d, sq(pts[i], pts[c]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

struct NaiveSplat {
  double u, v, depth;
  double qa, qb, qc;  // inverse 2-D covariance
  double alpha;
  std::array<double, 3> color;
  std::size_t index;
};

// Per-pixel full-sum compositor: every Gaussian in front of the camera is
// evaluated at every pixel, with no tiling, culling radius or early exit.
// Projection is rebuilt here from the textbook formulas.
struct NaiveRender {
  std::vector<double> image;          // H x W x 3
  std::vector<double> transmittance;  // H x W
  std::vector<double> weight_sum;     // H x W
  // compositing order, then per pixel and splat: 0 skipped, 1 blended,
  // 2 clamped
  std::vector<std::uint8_t> regime;
};

inline NaiveRender naive_render(const g2s::GaussianSet& gs,
                                const g2s::CameraModel& cam) {
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::vector<NaiveSplat> splats;
  const auto mu = gs.mu.data(), q = gs.quat.data(), ls = gs.log_scale.data(),
             cl = gs.color_logit.data(), op = gs.opacity_logit.data();
  for (std::size_t i = 0; i < gs.size(); ++i) {
    double w = q[i * 4], x = q[i * 4 + 1], y = q[i * 4 + 2], z = q[i * 4 + 3];
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n, x /= n, y /= n, z /= n;
    const double r[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                            {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                            {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
    double s2[3];
    for (int k = 0; k < 3; ++k) s2[k] = std::exp(2.0 * ls[i * 3 + k]);
    double sigma[3][3];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        sigma[a][b] = 0.0;
        for (int k = 0; k < 3; ++k) sigma[a][b] += r[a][k] * s2[k] * r[b][k];
      }
    double pc[3];
    for (int a = 0; a < 3; ++a) {
      pc[a] = cam.translation[a];
      for (int k = 0; k < 3; ++k) pc[a] += cam.rotation[a * 3 + k] * mu[i * 3 + k];
    }
    if (pc[2] <= g2s::kZNear) continue;
    const double j[2][3] = {{cam.fx / pc[2], 0.0, -cam.fx * pc[0] / (pc[2] * pc[2])},
                            {0.0, cam.fy / pc[2], -cam.fy * pc[1] / (pc[2] * pc[2])}};
    double t[2][3];
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 3; ++b) {
        t[a][b] = 0.0;
        for (int k = 0; k < 3; ++k) t[a][b] += j[a][k] * cam.rotation[k * 3 + b];
      }
    double c2[2][2];
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        c2[a][b] = 0.0;
        for (int k = 0; k < 3; ++k)
          for (int l = 0; l < 3; ++l) c2[a][b] += t[a][k] * sigma[k][l] * t[b][l];
      }
    c2[0][0] += 0.3;
    c2[1][1] += 0.3;
    const double det = c2[0][0] * c2[1][1] - c2[0][1] * c2[1][0];
    NaiveSplat s;
    s.u = cam.fx * pc[0] / pc[2] + cam.cx;
    s.v = cam.fy * pc[1] / pc[2] + cam.cy;
    s.depth = pc[2];
    s.qa = c2[1][1] / det;
    s.qb = -c2[0][1] / det;
    s.qc = c2[0][0] / det;
    s.alpha = sig(op[i]);
    for (int k = 0; k < 3; ++k) s.color[k] = sig(cl[i * 3 + k]);
    s.index = i;
    splats.push_back(s);
  }
  std::stable_sort(splats.begin(), splats.end(),
                   [](const NaiveSplat& a, const NaiveSplat& b) {
                     return a.depth < b.depth;
                   });
  NaiveRender out;
  const std::size_t w = cam.width, h = cam.height;
  out.image.assign(w * h * 3, 0.0);
  out.transmittance.assign(w * h, 1.0);
  out.weight_sum.assign(w * h, 0.0);
  for (const auto& sp : splats) out.regime.push_back(static_cast<std::uint8_t>(sp.index));
  for (std::size_t py = 0; py < h; ++py)
    for (std::size_t px = 0; px < w; ++px) {
      double trans = 1.0;
      const std::size_t p = py * w + px;
      for (const auto& s : splats) {
        const double dx = px - s.u, dy = py - s.v;
        const double a =
            s.alpha * std::exp(-0.5 * (s.qa * dx * dx + 2 * s.qb * dx * dy + s.qc * dy * dy));
        if (a < 1.0 / 255.0) {
          out.regime.push_back(0);
          continue;
        }
        out.regime.push_back(a > 0.99 ? 2 : 1);
        const double ae = std::min(0.99, a);
        for (int c = 0; c < 3; ++c) out.image[p * 3 + c] += s.color[c] * ae * trans;
        out.weight_sum[p] += ae * trans;
        trans *= 1.0 - ae;
      }
      out.transmittance[p] = trans;
    }
  return out;
}

inline Regime render_regime(const g2s::GaussianSet& gs,
                            const g2s::CameraModel& cam) {
  return [&gs, &cam] { return naive_render(gs, cam).regime; };
}

// Random Gaussians scattered in front of a camera looking down +z.
inline g2s::GaussianSet random_gaussians(g2s::Rng& rng, std::size_t n,
                                         double spread, double depth,
                                         bool requires_grad = true) {
  std::vector<double> mu(n * 3), q(n * 4), ls(n * 3), cl(n * 3), op(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu[i * 3] = rng.uniform(-spread, spread);
    mu[i * 3 + 1] = rng.uniform(-spread, spread);
    mu[i * 3 + 2] = depth + rng.uniform(-0.5, 0.5);
    for (int k = 0; k < 4; ++k) q[i * 4 + k] = rng.normal();
    for (int k = 0; k < 3; ++k) {
      ls[i * 3 + k] = std::log(rng.uniform(0.05, 0.25));
      cl[i * 3 + k] = rng.uniform(-2.0, 2.0);
    }
    op[i] = rng.uniform(-1.5, 1.5);
  }
  g2s::GaussianSet gs;
  gs.mu = Tensor::from({n, 3}, mu, requires_grad);
  gs.quat = Tensor::from({n, 4}, q, requires_grad);
  gs.log_scale = Tensor::from({n, 3}, ls, requires_grad);
  gs.color_logit = Tensor::from({n, 3}, cl, requires_grad);
  gs.opacity_logit = Tensor::from({n}, op, requires_grad);
  return gs;
}

inline g2s::CameraModel test_camera(std::size_t w, std::size_t h) {
  g2s::CameraModel cam;
  cam.fx = cam.fy = static_cast<double>(w);
  cam.cx = (static_cast<double>(w) - 1.0) / 2.0;
  cam.cy = (static_cast<double>(h) - 1.0) / 2.0;
  cam.width = w;
  cam.height = h;
  return cam;
}

}  // namespace oracle
