#include <array>
#include <cmath>
#include <memory>

#include "g2s/gsplat.hpp"

namespace g2s {

namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> window() {
  std::array<double, 2 * kRadius + 1> g{};
  double s = 0.0;
  for (int k = -kRadius; k <= kRadius; ++k)
    s += g[k + kRadius] = std::exp(-(k * k) / (2.0 * kSigma * kSigma));
  for (auto& v : g) v /= s;
  return g;
}

// Separable Gaussian filter over one channel plane (w x h), truncated at the
// borders. With `normalize`, each output is divided by the in-bounds window
// mass; the transpose of that operator is obtained by pre-scaling with the
// same mass and filtering without normalization.
class Filter {
 public:
  Filter(std::size_t w, std::size_t h) : w_(w), h_(h), mass_x_(w), mass_y_(h) {
    const auto g = window();
    for (std::size_t x = 0; x < w; ++x) mass_x_[x] = mass(g, x, w);
    for (std::size_t y = 0; y < h; ++y) mass_y_[y] = mass(g, y, h);
    g_ = g;
  }

  std::vector<double> apply(const std::vector<double>& in) const {
    auto out = blur(in);
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x) out[y * w_ + x] /= mass_x_[x] * mass_y_[y];
    return out;
  }

  std::vector<double> apply_transpose(std::vector<double> in) const {
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x) in[y * w_ + x] /= mass_x_[x] * mass_y_[y];
    return blur(in);
  }

 private:
  static double mass(const std::array<double, 2 * kRadius + 1>& g, std::size_t i,
                     std::size_t n) {
    double s = 0.0;
    for (int k = -kRadius; k <= kRadius; ++k) {
      const long j = static_cast<long>(i) + k;
      if (j >= 0 && j < static_cast<long>(n)) s += g[k + kRadius];
    }
    return s;
  }

  std::vector<double> blur(const std::vector<double>& in) const {
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    const long w = static_cast<long>(w_), h = static_cast<long>(h_);
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const long j = x + k;
          if (j >= 0 && j < w) s += g_[k + kRadius] * in[y * w + j];
        }
        tmp[y * w + x] = s;
      }
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const long j = y + k;
          if (j >= 0 && j < h) s += g_[k + kRadius] * tmp[j * w + x];
        }
        out[y * w + x] = s;
      }
    return out;
  }

  std::size_t w_, h_;
  std::vector<double> mass_x_, mass_y_;
  std::array<double, 2 * kRadius + 1> g_{};
};

std::vector<double> channel(const std::vector<double>& img, std::size_t n,
                            int c) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = img[i * 3 + c];
  return out;
}

}  // namespace

Tensor ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dim() != 3 || a.size(2) != 3) {
    throw ShapeError("ssim", {a.shape(), b.shape()}, "expects equal H x W x 3");
  }
  const std::size_t h = a.size(0), w = a.size(1), n = h * w;
  auto filter = std::make_shared<Filter>(w, h);
  // per channel: partials of the SSIM map w.r.t. the five filtered moments
  struct Partials {
    std::vector<double> mx, my, exx, eyy, exy;
  };
  auto parts = std::make_shared<std::array<Partials, 3>>();
  const auto& xa = a.impl()->data;
  const auto& xb = b.impl()->data;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto x = channel(xa, n, c), y = channel(xb, n, c);
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter->apply(x), my = filter->apply(y);
    const auto exx = filter->apply(xx), eyy = filter->apply(yy),
               exy = filter->apply(xy);
    auto& p = (*parts)[c];
    p.mx.resize(n);
    p.my.resize(n);
    p.exx.resize(n);
    p.eyy.resize(n);
    p.exy.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a1 = 2.0 * mx[i] * my[i] + kC1;
      const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + kC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
      const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kC2;
      const double den = b1 * b2;
      const double s = a1 * a2 / den;
      total += s;
      const double cross = 2.0 * (a2 - a1) / den;
      p.mx[i] = cross * my[i] - s * 2.0 * mx[i] / b1 + s * 2.0 * mx[i] / b2;
      p.my[i] = cross * mx[i] - s * 2.0 * my[i] / b1 + s * 2.0 * my[i] / b2;
      p.exx[i] = -s / b2;
      p.eyy[i] = -s / b2;
      p.exy[i] = 2.0 * a1 / den;
    }
  }
  const double count = static_cast<double>(3 * n);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(
      "ssim", {}, {total / count}, {a, b},
      [filter, parts, ai, bi, n, count](const std::vector<double>& g,
                                        const std::vector<double>&,
                                        GradSink& sink) {
        auto* ga = sink[0];
        auto* gb = sink[1];
        const double scale = g[0] / count;
        for (int c = 0; c < 3; ++c) {
          const auto& p = (*parts)[c];
          auto scaled = [&](const std::vector<double>& v) {
            std::vector<double> out(n);
            for (std::size_t i = 0; i < n; ++i) out[i] = v[i] * scale;
            return filter->apply_transpose(std::move(out));
          };
          const auto t_exy = scaled(p.exy);
          const auto x = channel(ai->data, n, c), y = channel(bi->data, n, c);
          if (ga) {
            const auto t_mx = scaled(p.mx), t_exx = scaled(p.exx);
            for (std::size_t i = 0; i < n; ++i)
              (*ga)[i * 3 + c] += t_mx[i] + 2.0 * x[i] * t_exx[i] + y[i] * t_exy[i];
          }
          if (gb) {
            const auto t_my = scaled(p.my), t_eyy = scaled(p.eyy);
            for (std::size_t i = 0; i < n; ++i)
              (*gb)[i * 3 + c] += t_my[i] + 2.0 * y[i] * t_eyy[i] + x[i] * t_exy[i];
          }
        }
      });
}

double ssim(const Image& a, const Image& b) {
  NoGradGuard guard;
  return ssim(a.to_tensor(), b.to_tensor()).item();
}

}  // namespace g2s
