#pragma once

#include "g2s/gsplat.hpp"

namespace g2s::detail {

// Projection of one Gaussian together with the intermediates its pullback
// needs.
struct ProjectedGaussian {
  Splat2D splat;
  Vec3 p_cam{};
  Mat3 cov3d{};
  std::array<double, 6> jw{};  // J * W, row-major 2x3
  Quat quat{};
  Vec3 log_scale{};
};

// Computes the footprint; false when culled.
bool project_detail(const GaussianParams& g, const CameraModel& cam,
                    std::size_t index, ProjectedGaussian& out);

// Cotangents arriving at a splat. conic is a full-entry symmetric cotangent
// stored as (00, 01, 11).
struct SplatGrad {
  std::array<double, 2> mean2d{};
  std::array<double, 3> conic{};
  Vec3 color{};
  double alpha = 0.0;
};

struct ParamGrad {
  Vec3 mu{};
  Quat quat{};
  Vec3 log_scale{};
};

// Pulls splat cotangents back through conic inversion, the EWA projection,
// the camera transform and the covariance factorization.
ParamGrad project_vjp(const ProjectedGaussian& pg, const CameraModel& cam,
                      const SplatGrad& g);

}  // namespace g2s::detail
