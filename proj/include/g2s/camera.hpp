#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "g2s/pointcloud.hpp"

namespace g2s {

/// Row-major 3x3.
using Mat3 = std::array<double, 9>;

inline constexpr double kZNear = 1e-4;

inline Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

/// Pinhole intrinsics plus a world-to-camera rigid transform. Camera axes
/// follow the x-right, y-down, z-forward convention; pixel centers sit on
/// integer coordinates.
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 rotation = identity3();
  Vec3 translation{0.0, 0.0, 0.0};
  std::size_t width = 1;
  std::size_t height = 1;

  /// Throws unless focal lengths are positive and the rotation is proper
  /// orthonormal to 1e-9.
  void validate() const;

  Vec3 to_camera(const Vec3& p_world) const;
  Vec3 to_world(const Vec3& p_cam) const;
  /// World point at the given camera-z depth behind pixel (u, v).
  Vec3 unproject(double u, double v, double depth) const;
  Vec3 position() const;

  static CameraModel look_at(const Vec3& eye, const Vec3& target,
                             const Vec3& up, double fx, double fy, double cx,
                             double cy, std::size_t width, std::size_t height);

  bool operator==(const CameraModel&) const = default;
};

struct Projection {
  std::array<double, 2> pixel{0.0, 0.0};
  double depth = 0.0;
  bool valid = false;  // false when depth <= kZNear
};

Projection project(const CameraModel& cam, const Vec3& p_world);

/// Jacobian of the perspective map at a camera-space point, row-major 2x3.
std::array<double, 6> projection_jacobian(const CameraModel& cam,
                                          const Vec3& p_cam);

inline constexpr std::size_t kInvalidPatch =
    std::numeric_limits<std::size_t>::max();

struct PatchGrid {
  std::size_t patch_px = 16;
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t count() const { return rows * cols; }
};

/// Image-patch index hit by each point-patch center, or kInvalidPatch when
/// it lands behind the camera or outside the frame.
std::vector<std::size_t> align_patches(const std::vector<Vec3>& centers,
                                       const CameraModel& cam,
                                       const PatchGrid& grid);

struct MaskPair {
  std::vector<std::uint8_t> point_visible;
  std::vector<std::uint8_t> image_visible;
  /// Set when forced-visible image patches left fewer than the target number
  /// of maskable patches.
  bool relaxed = false;
  std::string warning;

  std::size_t masked_points() const;
  std::size_t masked_images() const;
};

/// Number of masked entries out of n for a ratio, floored.
std::size_t mask_count(double mask_ratio, std::size_t n);

/// Masks floor(ratio*M) point patches uniformly at random, keeps every image
/// patch aligned to a masked point patch visible, then masks image patches
/// among the rest up to floor(ratio*T).
MaskPair complementary_masks(const std::vector<std::size_t>& alignment,
                             std::size_t num_point_patches,
                             std::size_t num_image_patches, double mask_ratio,
                             std::uint64_t seed);

/// Camera text record: "fx fy cx cy", three rotation rows, translation,
/// "width height".
CameraModel read_camera(const std::string& path);
void write_camera(const std::string& path, const CameraModel& cam);

}  // namespace g2s
