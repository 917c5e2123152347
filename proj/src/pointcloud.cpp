#include "g2s/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace g2s {

void PointCloud::validate(const char* where) const {
  if (points.empty()) {
    throw std::invalid_argument(std::string(where) + ": empty point cloud");
  }
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw std::invalid_argument(std::string(where) +
                                  ": non-finite coordinate");
    }
  }
}

Tensor PointCloud::to_tensor(bool requires_grad) const {
  std::vector<double> data(points.size() * 3);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (int c = 0; c < 3; ++c) data[i * 3 + c] = points[i][c];
  return Tensor::from({points.size(), 3}, std::move(data), requires_grad);
}

PointCloud PointCloud::from_tensor(const Tensor& t) {
  if (t.dim() != 2 || t.size(1) != 3) {
    throw ShapeError("PointCloud::from_tensor", {t.shape()}, "expects N x 3");
  }
  PointCloud pc;
  pc.points.resize(t.size(0));
  auto d = t.data();
  for (std::size_t i = 0; i < pc.points.size(); ++i)
    pc.points[i] = {d[i * 3], d[i * 3 + 1], d[i * 3 + 2]};
  return pc;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& pc,
                                               std::size_t count) {
  pc.validate("farthest_point_sample");
  if (count > pc.size()) {
    throw std::invalid_argument("farthest_point_sample: count " +
                                std::to_string(count) + " exceeds " +
                                std::to_string(pc.size()) + " points");
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  if (count == 0) return chosen;
  const std::size_t n = pc.size();
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::size_t current = 0;
  chosen.push_back(current);
  while (chosen.size() < count) {
    const Vec3& c = pc.points[current];
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = squared_distance(pc.points[i], c);
      if (d < min_d[i]) min_d[i] = d;
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    current = best;
    chosen.push_back(current);
  }
  return chosen;
}

PointCloud downsample(const PointCloud& pc, std::size_t target) {
  pc.validate("downsample");
  if (target == 0) throw std::invalid_argument("downsample: target must be >= 1");
  PointCloud out;
  out.points.reserve(target);
  if (pc.size() >= target) {
    for (auto i : farthest_point_sample(pc, target))
      out.points.push_back(pc.points[i]);
  } else {
    for (std::size_t i = 0; i < target; ++i)
      out.points.push_back(pc.points[i % pc.size()]);
  }
  return out;
}

namespace {

struct Candidate {
  double d;
  std::size_t idx;
  bool operator<(const Candidate& o) const {
    return d < o.d || (d == o.d && idx < o.idx);
  }
};

std::vector<std::size_t> take_sorted(std::vector<Candidate>& cand,
                                     std::size_t k) {
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k),
                    cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].idx;
  return out;
}

void check_k(const PointCloud& pc, std::size_t k, const char* where) {
  pc.validate(where);
  if (k > pc.size()) {
    throw std::invalid_argument(std::string(where) + ": k=" + std::to_string(k) +
                                " exceeds " + std::to_string(pc.size()) +
                                " points");
  }
}

// Uniform grid over the cloud's bounding box with roughly k points per cell.
class GridIndex {
 public:
  GridIndex(const PointCloud& pc, std::size_t k) : pc_(pc) {
    lo_ = hi_ = pc.points[0];
    for (const auto& p : pc.points)
      for (int c = 0; c < 3; ++c) {
        lo_[c] = std::min(lo_[c], p[c]);
        hi_[c] = std::max(hi_[c], p[c]);
      }
    double vol = 1.0;
    int dims = 0;
    for (int c = 0; c < 3; ++c) {
      if (hi_[c] - lo_[c] > 0) {
        vol *= hi_[c] - lo_[c];
        ++dims;
      }
    }
    const double per_cell = static_cast<double>(std::max<std::size_t>(k, 8));
    cell_ = dims == 0 ? 1.0
                      : std::pow(vol * per_cell / static_cast<double>(pc.size()),
                                 1.0 / dims);
    if (!(cell_ > 0)) cell_ = 1.0;
    for (std::size_t i = 0; i < pc.size(); ++i)
      cells_[key(coord(pc.points[i]))].push_back(i);
  }

  std::vector<std::size_t> query(const Vec3& q, std::size_t k) const {
    const auto qc = coord(q);
    std::vector<Candidate> cand;
    for (long r = 0;; ++r) {
      for (long dx = -r; dx <= r; ++dx)
        for (long dy = -r; dy <= r; ++dy)
          for (long dz = -r; dz <= r; ++dz) {
            if (std::max({std::labs(dx), std::labs(dy), std::labs(dz)}) != r)
              continue;
            auto it = cells_.find(key({qc[0] + dx, qc[1] + dy, qc[2] + dz}));
            if (it == cells_.end()) continue;
            for (auto i : it->second)
              cand.push_back({squared_distance(pc_.points[i], q), i});
          }
      if (cand.size() >= k) {
        std::nth_element(cand.begin(),
                         cand.begin() + static_cast<std::ptrdiff_t>(k - 1),
                         cand.end());
        const double kth = cand[k - 1].d;
        const double bound = static_cast<double>(r) * cell_;
        if (kth < bound * bound || cand.size() == pc_.size()) break;
      }
    }
    return take_sorted(cand, k);
  }

 private:
  std::array<long, 3> coord(const Vec3& p) const {
    return {static_cast<long>(std::floor((p[0] - lo_[0]) / cell_)),
            static_cast<long>(std::floor((p[1] - lo_[1]) / cell_)),
            static_cast<long>(std::floor((p[2] - lo_[2]) / cell_))};
  }
  static std::uint64_t key(const std::array<long, 3>& c) {
    auto enc = [](long v) {
      return static_cast<std::uint64_t>(v + (1l << 20)) & 0x1FFFFFull;
    };
    return enc(c[0]) | (enc(c[1]) << 21) | (enc(c[2]) << 42);
  }

  const PointCloud& pc_;
  Vec3 lo_, hi_;
  double cell_ = 1.0;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace

std::vector<std::size_t> knn_exhaustive(const PointCloud& pc, const Vec3& query,
                                        std::size_t k) {
  check_k(pc, k, "knn");
  std::vector<Candidate> cand(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i)
    cand[i] = {squared_distance(pc.points[i], query), i};
  return take_sorted(cand, k);
}

std::vector<std::size_t> knn(const PointCloud& pc, const Vec3& query,
                             std::size_t k) {
  if (pc.size() <= kExhaustiveLimit) return knn_exhaustive(pc, query, k);
  check_k(pc, k, "knn");
  return GridIndex(pc, k).query(query, k);
}

PatchSet fps_knn_patches(const PointCloud& pc, std::size_t num_patches,
                         std::size_t k) {
  pc.validate("fps_knn_patches");
  if (num_patches > pc.size() || k > pc.size()) {
    throw std::invalid_argument(
        "fps_knn_patches: M=" + std::to_string(num_patches) +
        ", k=" + std::to_string(k) + " must not exceed N=" +
        std::to_string(pc.size()));
  }
  if (num_patches == 0 || k == 0) {
    throw std::invalid_argument("fps_knn_patches: M and k must be >= 1");
  }
  PatchSet ps;
  ps.k = k;
  ps.center_index = farthest_point_sample(pc, num_patches);
  ps.centers.reserve(num_patches);
  ps.members.reserve(num_patches * k);
  ps.local_coords.reserve(num_patches * k * 3);
  std::unique_ptr<GridIndex> grid;
  if (pc.size() > kExhaustiveLimit) grid = std::make_unique<GridIndex>(pc, k);
  for (auto ci : ps.center_index) {
    const Vec3& c = pc.points[ci];
    ps.centers.push_back(c);
    auto nn = grid ? grid->query(c, k) : knn_exhaustive(pc, c, k);
    // the center leads its own patch even when duplicates sit at distance 0
    auto self = std::find(nn.begin(), nn.end(), ci);
    if (self == nn.end()) {
      nn.pop_back();
      nn.insert(nn.begin(), ci);
    } else {
      std::rotate(nn.begin(), self, self + 1);
    }
    for (auto m : nn) {
      ps.members.push_back(m);
      for (int d = 0; d < 3; ++d)
        ps.local_coords.push_back(pc.points[m][d] - c[d]);
    }
  }
  return ps;
}

namespace {

// Nearest index in `to` for each point in `from` (ties to lowest index), and
// the squared distance.
void nearest(const double* from, std::size_t n, const double* to, std::size_t m,
             std::size_t* arg, double* dist) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = from + i * 3;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double* q = to + j * 3;
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        bi = j;
      }
    }
    arg[i] = bi;
    dist[i] = best;
  }
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[begin + i];
  return s / static_cast<double>(n);
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty cloud");
  return chamfer(a.to_tensor(), b.to_tensor()).item();
}

Tensor chamfer(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || a.size(1) != 3 || b.dim() != 2 || b.size(1) != 3) {
    throw ShapeError("chamfer", {a.shape(), b.shape()}, "expects N x 3");
  }
  const std::size_t n = a.size(0), m = b.size(0);
  if (n == 0 || m == 0) throw std::invalid_argument("chamfer: empty cloud");
  auto ab = std::make_shared<std::vector<std::size_t>>(n);
  auto ba = std::make_shared<std::vector<std::size_t>>(m);
  std::vector<double> dab(n), dba(m);
  nearest(a.data().data(), n, b.data().data(), m, ab->data(), dab.data());
  nearest(b.data().data(), m, a.data().data(), n, ba->data(), dba.data());
  const double value = mean_of(dab, 0, n) + mean_of(dba, 0, m);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(
      "chamfer", {}, {value}, {a, b},
      [ai, bi, ab, ba, n, m](const std::vector<double>& g,
                             const std::vector<double>&, GradSink& sink) {
        auto* ga = sink[0];
        auto* gb = sink[1];
        const auto& x = ai->data;
        const auto& y = bi->data;
        const double sa = 2.0 * g[0] / static_cast<double>(n);
        const double sb = 2.0 * g[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = (*ab)[i];
          for (int c = 0; c < 3; ++c) {
            const double diff = sa * (x[i * 3 + c] - y[j * 3 + c]);
            if (ga) (*ga)[i * 3 + c] += diff;
            if (gb) (*gb)[j * 3 + c] -= diff;
          }
        }
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t i = (*ba)[j];
          for (int c = 0; c < 3; ++c) {
            const double diff = sb * (y[j * 3 + c] - x[i * 3 + c]);
            if (gb) (*gb)[j * 3 + c] += diff;
            if (ga) (*ga)[i * 3 + c] -= diff;
          }
        }
      });
}

Tensor patch_chamfer(const Tensor& pred, const Tensor& target, std::size_t k) {
  if (pred.shape() != target.shape() || pred.dim() != 2 || pred.size(1) != 3 ||
      k == 0 || pred.size(0) % k != 0) {
    throw ShapeError("patch_chamfer", {pred.shape(), target.shape(), {k}});
  }
  const std::size_t batch = pred.size(0) / k;
  const std::size_t rows = pred.size(0);
  auto pt = std::make_shared<std::vector<std::size_t>>(rows);
  auto tp = std::make_shared<std::vector<std::size_t>>(rows);
  std::vector<double> dpt(rows), dtp(rows), out(batch);
  const double* x = pred.data().data();
  const double* y = target.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * k;
    nearest(x + off * 3, k, y + off * 3, k, pt->data() + off, dpt.data() + off);
    nearest(y + off * 3, k, x + off * 3, k, tp->data() + off, dtp.data() + off);
    out[b] = mean_of(dpt, off, k) + mean_of(dtp, off, k);
  }
  auto xi = pred.impl();
  auto yi = target.impl();
  return make_result(
      "patch_chamfer", {batch}, std::move(out), {pred, target},
      [xi, yi, pt, tp, k, batch](const std::vector<double>& g,
                                 const std::vector<double>&, GradSink& sink) {
        auto* gx = sink[0];
        auto* gy = sink[1];
        const auto& x = xi->data;
        const auto& y = yi->data;
        for (std::size_t b = 0; b < batch; ++b) {
          const double s = 2.0 * g[b] / static_cast<double>(k);
          const std::size_t off = b * k;
          for (std::size_t i = off; i < off + k; ++i) {
            const std::size_t j = off + (*pt)[i];
            for (int c = 0; c < 3; ++c) {
              const double diff = s * (x[i * 3 + c] - y[j * 3 + c]);
              if (gx) (*gx)[i * 3 + c] += diff;
              if (gy) (*gy)[j * 3 + c] -= diff;
            }
          }
          for (std::size_t j = off; j < off + k; ++j) {
            const std::size_t i = off + (*tp)[j];
            for (int c = 0; c < 3; ++c) {
              const double diff = s * (y[j * 3 + c] - x[i * 3 + c]);
              if (gy) (*gy)[j * 3 + c] += diff;
              if (gx) (*gx)[i * 3 + c] -= diff;
            }
          }
        }
      });
}

}  // namespace g2s
