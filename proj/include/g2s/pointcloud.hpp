#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "g2s/tensor.hpp"

namespace g2s {

using Vec3 = std::array<double, 3>;

/// N x 3 point positions in meters.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  /// Throws if the cloud is empty or holds non-finite coordinates.
  void validate(const char* where) const;

  /// Row-major N x 3 tensor of the coordinates.
  Tensor to_tensor(bool requires_grad = false) const;
  static PointCloud from_tensor(const Tensor& t);
};

/// M patches of k points each, grouped around FPS centers.
struct PatchSet {
  std::size_t k = 0;
  std::vector<std::size_t> center_index;  // M indices into the source cloud
  std::vector<Vec3> centers;              // M
  std::vector<std::size_t> members;       // M * k, row-major
  std::vector<double> local_coords;       // M * k * 3, points - center

  std::size_t count() const { return centers.size(); }
  std::size_t member(std::size_t patch, std::size_t j) const {
    return members[patch * k + j];
  }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Farthest point sampling seeded at index 0; ties go to the lowest index.
/// Returns `count` indices in selection order.
std::vector<std::size_t> farthest_point_sample(const PointCloud& pc,
                                               std::size_t count);

/// FPS down to `target` points, or cyclic repetition up to it.
PointCloud downsample(const PointCloud& pc, std::size_t target);

/// Indices of the k nearest points to `query`, nearest first, ties by lowest
/// index. Exhaustive up to kExhaustiveLimit points, grid buckets above.
std::vector<std::size_t> knn(const PointCloud& pc, const Vec3& query,
                             std::size_t k);

/// Same ordering contract as knn(), always exhaustive.
std::vector<std::size_t> knn_exhaustive(const PointCloud& pc, const Vec3& query,
                                        std::size_t k);

inline constexpr std::size_t kExhaustiveLimit = 4096;

/// Groups a cloud into M FPS-seeded patches of its k nearest points. Each
/// center is the first member of its own patch.
PatchSet fps_knn_patches(const PointCloud& pc, std::size_t num_patches,
                         std::size_t k);

/// Symmetric Chamfer distance with squared Euclidean terms, each side
/// averaged over its own points.
double chamfer(const PointCloud& a, const PointCloud& b);

/// Differentiable Chamfer between (n x 3) and (m x 3) tensors.
Tensor chamfer(const Tensor& a, const Tensor& b);

/// Chamfer between corresponding patches: pred and target are (B*k x 3)
/// grouped in consecutive runs of k rows; returns a length-B tensor.
Tensor patch_chamfer(const Tensor& pred, const Tensor& target, std::size_t k);

}  // namespace g2s
