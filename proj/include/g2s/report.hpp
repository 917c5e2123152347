#pragma once

#include <cstdint>
#include <string>

namespace g2s {

/// Scalars logged per training step. Composite terms are the plain sums of
/// their parts as computed in double precision.
struct LossReport {
  std::uint64_t step = 0;
  double point_rec = 0.0;
  double image_rec = 0.0;
  double cross_rec = 0.0;
  double stage1 = 0.0;
  double gs_image = 0.0;
  double gs_point = 0.0;
  double gs_branch = 0.0;
  double stage2 = 0.0;
  double psnr = 0.0;

  /// Fills stage1, gs_branch and stage2 from the parts.
  void combine(double alpha, double beta);

  /// Largest violation of the three composite identities.
  double identity_error(double alpha, double beta) const;

  /// One JSON object; non-finite values are written as strings.
  std::string to_json() const;
};

}  // namespace g2s
