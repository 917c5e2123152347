#include "g2s/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace g2s {

namespace {

// Maps each output element of a broadcast binary op to its operand offsets.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_off;
  std::vector<std::size_t> b_off;
};

std::shared_ptr<BroadcastPlan> plan_broadcast(const char* op, const Shape& sa,
                                              const Shape& sb) {
  auto plan = std::make_shared<BroadcastPlan>();
  if (sa == sb) {
    plan->out = sa;
    plan->same = true;
    return plan;
  }
  const std::size_t nd = std::max(sa.size(), sb.size());
  Shape pa(nd, 1), pb(nd, 1);
  std::copy(sa.begin(), sa.end(), pa.begin() + (nd - sa.size()));
  std::copy(sb.begin(), sb.end(), pb.begin() + (nd - sb.size()));
  plan->out.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw ShapeError(op, {sa, sb}, "not broadcastable");
    }
    plan->out[d] = std::max(pa[d], pb[d]);
  }
  // strides with zero on broadcast axes
  std::vector<std::size_t> stride_a(nd), stride_b(nd);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = nd; d-- > 0;) {
    stride_a[d] = pa[d] == 1 ? 0 : acc_a;
    stride_b[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = numel(plan->out);
  plan->a_off.resize(n);
  plan->b_off.resize(n);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan->a_off[i] = oa;
    plan->b_off[i] = ob;
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      oa += stride_a[d];
      ob += stride_b[d];
      if (idx[d] < plan->out[d]) break;
      oa -= stride_a[d] * idx[d];
      ob -= stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

// f(x, y) -> value; da(x, y, out) and db(x, y, out) -> partials.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da,
              DB db) {
  auto plan = plan_broadcast(op, a.shape(), b.shape());
  const std::size_t n = numel(plan->out);
  std::vector<double> out(n);
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      out[i] = f(x[plan->a_off[i]], y[plan->b_off[i]]);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(
      op, plan->out, std::move(out), {a, b},
      [plan, ai, bi, da, db](const std::vector<double>& g,
                             const std::vector<double>& o, GradSink& sink) {
        const auto& x = ai->data;
        const auto& y = bi->data;
        const std::size_t n = g.size();
        if (auto* ga = sink[0]) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = plan->same ? i : plan->a_off[i];
            const std::size_t ib = plan->same ? i : plan->b_off[i];
            (*ga)[ia] += g[i] * da(x[ia], y[ib], o[i]);
          }
        }
        if (auto* gb = sink[1]) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = plan->same ? i : plan->a_off[i];
            const std::size_t ib = plan->same ? i : plan->b_off[i];
            (*gb)[ib] += g[i] * db(x[ia], y[ib], o[i]);
          }
        }
      });
}

// f(x) -> value; df(x, out) -> derivative.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  auto ai = a.impl();
  return make_result(op, a.shape(), std::move(out), {a},
                     [ai, df](const std::vector<double>& g,
                              const std::vector<double>& o, GradSink& sink) {
                       auto* ga = sink[0];
                       if (!ga) return;
                       const auto& x = ai->data;
                       for (std::size_t i = 0; i < g.size(); ++i)
                         (*ga)[i] += g[i] * df(x[i], o[i]);
                     });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t dim) {
  if (dim >= s.size()) throw ShapeError(op, {s}, "axis out of range");
  AxisSplit r{1, s[dim], 1};
  for (std::size_t d = 0; d < dim; ++d) r.outer *= s[d];
  for (std::size_t d = dim + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t dim, bool keepdim) {
  Shape out = s;
  if (keepdim)
    out[dim] = 1;
  else
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(dim));
  return out;
}

Tensor extremum(const char* op, const Tensor& a, std::size_t dim, bool keepdim,
                bool want_max) {
  const auto ax = split_axis(op, a.shape(), dim);
  if (ax.n == 0) throw ShapeError(op, {a.shape()}, "empty axis");
  const auto& x = a.impl()->data;
  std::vector<double> out(ax.outer * ax.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t o = 0; o < ax.outer; ++o) {
    for (std::size_t i = 0; i < ax.inner; ++i) {
      std::size_t best = o * ax.n * ax.inner + i;
      for (std::size_t k = 1; k < ax.n; ++k) {
        const std::size_t at = (o * ax.n + k) * ax.inner + i;
        if (want_max ? x[at] > x[best] : x[at] < x[best]) best = at;
      }
      out[o * ax.inner + i] = x[best];
      (*arg)[o * ax.inner + i] = best;
    }
  }
  return make_result(op, reduced_shape(a.shape(), dim, keepdim),
                     std::move(out), {a},
                     [arg](const std::vector<double>& g,
                           const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t j = 0; j < g.size(); ++j)
                           (*ga)[(*arg)[j]] += g[j];
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double o) { return o; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double o) { return o * (1.0 - o); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
               x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double o) { return 0.5 / o; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw ShapeError("matmul", {a.shape(), b.shape()});
  }
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yr = y.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += xv * yr[j];
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(
      "matmul", {n, m}, std::move(out), {a, b},
      [ai, bi, n, k, m](const std::vector<double>& g,
                        const std::vector<double>&, GradSink& sink) {
        const auto& x = ai->data;
        const auto& y = bi->data;
        if (auto* ga = sink[0]) {
          // dA = G B^T
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* gr = g.data() + i * m;
              const double* yr = y.data() + p * m;
              for (std::size_t j = 0; j < m; ++j) acc += gr[j] * yr[j];
              (*ga)[i * k + p] += acc;
            }
        }
        if (auto* gb = sink[1]) {
          // dB = A^T G
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x[i * k + p];
              double* br = gb->data() + p * m;
              const double* gr = g.data() + i * m;
              for (std::size_t j = 0; j < m; ++j) br[j] += xv * gr[j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw ShapeError("transpose", {a.shape()}, "expects 2-D");
  const std::size_t r = a.size(0), c = a.size(1);
  const auto& x = a.impl()->data;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a},
                     [r, c](const std::vector<double>& g,
                            const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             (*ga)[i * c + j] += g[j * r + i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape", {a.shape(), shape});
  }
  return make_result("reshape", std::move(shape), a.impl()->data, {a},
                     [](const std::vector<double>& g,
                        const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*ga)[i] += g[i];
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {}, {s}, {a},
                     [](const std::vector<double>& g,
                        const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (auto& v : *ga) v += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean", {a.shape()}, "empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, std::size_t dim, bool keepdim) {
  const auto ax = split_axis("sum", a.shape(), dim);
  const auto& x = a.impl()->data;
  std::vector<double> out(ax.outer * ax.inner, 0.0);
  for (std::size_t o = 0; o < ax.outer; ++o)
    for (std::size_t k = 0; k < ax.n; ++k)
      for (std::size_t i = 0; i < ax.inner; ++i)
        out[o * ax.inner + i] += x[(o * ax.n + k) * ax.inner + i];
  return make_result("sum_dim", reduced_shape(a.shape(), dim, keepdim),
                     std::move(out), {a},
                     [ax](const std::vector<double>& g,
                          const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t o = 0; o < ax.outer; ++o)
                           for (std::size_t k = 0; k < ax.n; ++k)
                             for (std::size_t i = 0; i < ax.inner; ++i)
                               (*ga)[(o * ax.n + k) * ax.inner + i] +=
                                   g[o * ax.inner + i];
                     });
}

Tensor mean(const Tensor& a, std::size_t dim, bool keepdim) {
  const auto ax = split_axis("mean", a.shape(), dim);
  if (ax.n == 0) throw ShapeError("mean", {a.shape()}, "empty axis");
  return mul_scalar(sum(a, dim, keepdim), 1.0 / static_cast<double>(ax.n));
}

Tensor max(const Tensor& a, std::size_t dim, bool keepdim) {
  return extremum("max", a, dim, keepdim, true);
}

Tensor min(const Tensor& a, std::size_t dim, bool keepdim) {
  return extremum("min", a, dim, keepdim, false);
}

Tensor softmax(const Tensor& a) {
  if (a.dim() == 0) throw ShapeError("softmax", {a.shape()}, "needs an axis");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* yr = out.data() + r * c;
    const double m = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yr[j] = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
  }
  return make_result("softmax", a.shape(), std::move(out), {a},
                     [rows, c](const std::vector<double>& g,
                               const std::vector<double>& y, GradSink& sink) {
                       auto* ga = sink[0];
                       if (!ga) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j)
                           dot += g[r * c + j] * y[r * c + j];
                         for (std::size_t j = 0; j < c; ++j)
                           (*ga)[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& a, double eps) {
  if (a.dim() == 0) {
    throw ShapeError("layer_norm", {a.shape()}, "needs an axis");
  }
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* yr = out.data() + r * c;
    const bool constant =
        std::all_of(xr, xr + c, [v = xr[0]](double e) { return e == v; });
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j)
      yr[j] = constant ? 0.0 : (xr[j] - mu) * is;
  }
  return make_result(
      "layer_norm", a.shape(), std::move(out), {a},
      [rows, c, inv_std](const std::vector<double>& g,
                         const std::vector<double>& y, GradSink& sink) {
        auto* ga = sink[0];
        if (!ga) return;
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double mg = 0.0, mgy = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            mg += g[r * c + j];
            mgy += g[r * c + j] * y[r * c + j];
          }
          mg *= inv_c;
          mgy *= inv_c;
          const double is = (*inv_std)[r];
          for (std::size_t j = 0; j < c; ++j)
            (*ga)[r * c + j] += is * (g[r * c + j] - mg - y[r * c + j] * mgy);
        }
      });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  if (a.dim() == 0) throw ShapeError("gather_rows", {a.shape()}, "needs rows");
  const std::size_t rows = a.size(0);
  const std::size_t w = rows ? a.numel() / rows : 0;
  const auto& x = a.impl()->data;
  std::vector<double> out(index.size() * w);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather_rows", {a.shape()},
                       "index " + std::to_string(index[i]) + " out of range");
    }
    std::copy_n(x.data() + index[i] * w, w, out.data() + i * w);
  }
  Shape shape = a.shape();
  shape[0] = index.size();
  auto idx = std::make_shared<std::vector<std::size_t>>(index);
  return make_result("gather_rows", std::move(shape), std::move(out), {a},
                     [idx, w](const std::vector<double>& g,
                              const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t i = 0; i < idx->size(); ++i)
                           for (std::size_t j = 0; j < w; ++j)
                             (*ga)[(*idx)[i] * w + j] += g[i * w + j];
                     });
}

Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& index,
                    std::size_t rows) {
  if (a.dim() == 0 || a.size(0) != index.size()) {
    throw ShapeError("scatter_rows", {a.shape(), {index.size()}});
  }
  const std::size_t w = index.empty() ? 0 : a.numel() / index.size();
  const auto& x = a.impl()->data;
  Shape shape = a.shape();
  shape[0] = rows;
  std::vector<double> out(numel(shape), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("scatter_rows", {a.shape()},
                       "index " + std::to_string(index[i]) + " out of range");
    }
    for (std::size_t j = 0; j < w; ++j) out[index[i] * w + j] += x[i * w + j];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index);
  return make_result("scatter_rows", std::move(shape), std::move(out), {a},
                     [idx, w](const std::vector<double>& g,
                              const std::vector<double>&, GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t i = 0; i < idx->size(); ++i)
                           for (std::size_t j = 0; j < w; ++j)
                             (*ga)[i * w + j] += g[(*idx)[i] * w + j];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t dim) {
  if (parts.empty()) throw ShapeError("concat", {}, "no inputs");
  const Shape& s0 = parts[0].shape();
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  if (dim >= s0.size()) throw ShapeError("concat", shapes, "axis out of range");
  Shape out_shape = s0;
  out_shape[dim] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      ok = d == dim || s[d] == s0[d];
    if (!ok) throw ShapeError("concat", shapes);
    out_shape[dim] += s[dim];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < dim; ++d) outer *= s0[d];
  for (std::size_t d = dim + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t total = out_shape[dim];
  std::vector<double> out(numel(out_shape));
  auto extents = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.shape()[dim];
    const auto& x = p.impl()->data;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * n * inner, n * inner,
                  out.data() + (o * total + offset) * inner);
    extents->push_back(n);
    offset += n;
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [extents, outer, inner, total](
                         const std::vector<double>& g,
                         const std::vector<double>&, GradSink& sink) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < extents->size(); ++p) {
                         const std::size_t n = (*extents)[p];
                         if (auto* gp = sink[p])
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < n * inner; ++j)
                               (*gp)[o * n * inner + j] +=
                                   g[(o * total + offset) * inner + j];
                         offset += n;
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t dim, std::size_t start,
             std::size_t length) {
  const auto ax = split_axis("slice", a.shape(), dim);
  if (start + length > ax.n) {
    throw ShapeError("slice", {a.shape()},
                     "range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of bounds");
  }
  Shape shape = a.shape();
  shape[dim] = length;
  const auto& x = a.impl()->data;
  std::vector<double> out(ax.outer * length * ax.inner);
  for (std::size_t o = 0; o < ax.outer; ++o)
    std::copy_n(x.data() + (o * ax.n + start) * ax.inner, length * ax.inner,
                out.data() + o * length * ax.inner);
  return make_result("slice", std::move(shape), std::move(out), {a},
                     [ax, start, length](const std::vector<double>& g,
                                         const std::vector<double>&,
                                         GradSink& sink) {
                       if (auto* ga = sink[0])
                         for (std::size_t o = 0; o < ax.outer; ++o)
                           for (std::size_t j = 0; j < length * ax.inner; ++j)
                             (*ga)[(o * ax.n + start) * ax.inner + j] +=
                                 g[o * length * ax.inner + j];
                     });
}

}  // namespace g2s
