#include "g2s/report.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace g2s {

void LossReport::combine(double alpha, double beta) {
  stage1 = point_rec + image_rec + cross_rec;
  gs_branch = alpha * gs_image + beta * gs_point;
  stage2 = stage1 + gs_branch;
}

double LossReport::identity_error(double alpha, double beta) const {
  const double e1 = std::fabs(stage1 - (point_rec + image_rec + cross_rec));
  const double e7 = std::fabs(gs_branch - (alpha * gs_image + beta * gs_point));
  const double e8 = std::fabs(stage2 - (stage1 + gs_branch));
  return std::max({e1, e7, e8});
}

namespace {

nlohmann::ordered_json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

std::string LossReport::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["L_point-rec"] = number(point_rec);
  j["L_image-rec"] = number(image_rec);
  j["L_cross-rec"] = number(cross_rec);
  j["L_stage1"] = number(stage1);
  j["L_GS-image"] = number(gs_image);
  j["L_GS-point"] = number(gs_point);
  j["L_GS-branch"] = number(gs_branch);
  j["L_stage2"] = number(stage2);
  j["PSNR"] = number(psnr);
  return j.dump();
}

}  // namespace g2s
