#include <cmath>
#include <stdexcept>

#include "splat_detail.hpp"

namespace g2s {

namespace {

double quat_norm(const Quat& q) {
  return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
}

Mat3 rotation_of_unit(double w, double x, double y, double z) {
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

}  // namespace

Mat3 quat_to_rotation(const Quat& q) {
  const double n = quat_norm(q);
  if (!(n > 0.0)) throw std::invalid_argument("quaternion has zero norm");
  return rotation_of_unit(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
}

Mat3 build_covariance(const Quat& quat, const Vec3& log_scale) {
  const Mat3 r = quat_to_rotation(quat);
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i * 3 + j] = r[i * 3 + j] * std::exp(log_scale[j]);
  Mat3 cov{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * m[j * 3 + k];
      cov[i * 3 + j] = s;
    }
  // exact symmetry regardless of summation order
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) cov[j * 3 + i] = cov[i * 3 + j];
  return cov;
}

CovarianceGrad build_covariance_vjp(const Quat& quat, const Vec3& log_scale,
                                    const Mat3& g) {
  const double n = quat_norm(quat);
  if (!(n > 0.0)) throw std::invalid_argument("quaternion has zero norm");
  const double w = quat[0] / n, x = quat[1] / n, y = quat[2] / n, z = quat[3] / n;
  const Mat3 r = rotation_of_unit(w, x, y, z);
  const Vec3 s{std::exp(log_scale[0]), std::exp(log_scale[1]),
               std::exp(log_scale[2])};
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i * 3 + j] = r[i * 3 + j] * s[j];
  // cov = M M^T  ->  dM = (G + G^T) M
  Mat3 gm{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += (g[i * 3 + k] + g[k * 3 + i]) * m[k * 3 + j];
      gm[i * 3 + j] = acc;
    }
  CovarianceGrad out;
  Mat3 gr{};
  for (int j = 0; j < 3; ++j) {
    double ds = 0.0;
    for (int i = 0; i < 3; ++i) {
      ds += gm[i * 3 + j] * r[i * 3 + j];
      gr[i * 3 + j] = gm[i * 3 + j] * s[j];
    }
    out.d_log_scale[j] = ds * s[j];
  }
  // partial derivatives of R with respect to the unit quaternion
  const Mat3 dw{0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0};
  const Mat3 dx{0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x};
  const Mat3 dy{-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y};
  const Mat3 dz{-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0};
  Quat gu{};
  for (int k = 0; k < 9; ++k) {
    gu[0] += gr[k] * dw[k];
    gu[1] += gr[k] * dx[k];
    gu[2] += gr[k] * dy[k];
    gu[3] += gr[k] * dz[k];
  }
  const Quat u{w, x, y, z};
  const double dot = u[0] * gu[0] + u[1] * gu[1] + u[2] * gu[2] + u[3] * gu[3];
  for (int k = 0; k < 4; ++k) out.d_quat[k] = (gu[k] - u[k] * dot) / n;
  return out;
}

namespace detail {

bool project_detail(const GaussianParams& g, const CameraModel& cam,
                    std::size_t index, ProjectedGaussian& out) {
  out.quat = g.quat;
  out.log_scale = g.log_scale;
  out.cov3d = build_covariance(g.quat, g.log_scale);
  out.p_cam = cam.to_camera(g.mu);
  const double z = out.p_cam[2];
  if (!(z > kZNear)) return false;
  const auto j = projection_jacobian(cam, out.p_cam);
  const auto& w = cam.rotation;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += j[r * 3 + k] * w[k * 3 + c];
      out.jw[r * 3 + c] = acc;
    }
  // cov2d = JW cov3d (JW)^T
  double t[6];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += out.jw[r * 3 + k] * out.cov3d[k * 3 + c];
      t[r * 3 + c] = acc;
    }
  double c2[4];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += t[r * 3 + k] * out.jw[c * 3 + k];
      c2[r * 2 + c] = acc;
    }
  Splat2D& s = out.splat;
  s.index = index;
  s.cov2d = {c2[0] + kLowPass, c2[1], c2[3] + kLowPass};
  const double det = s.cov2d[0] * s.cov2d[2] - s.cov2d[1] * s.cov2d[1];
  if (!(det > 0.0)) return false;
  s.conic = {s.cov2d[2] / det, -s.cov2d[1] / det, s.cov2d[0] / det};
  s.mean2d = {cam.fx * out.p_cam[0] / z + cam.cx, cam.fy * out.p_cam[1] / z + cam.cy};
  s.depth = z;
  s.color = g.color;
  s.alpha = g.alpha;
  if (!(g.alpha >= kAlphaMin)) return false;
  const double half_tr = 0.5 * (s.cov2d[0] + s.cov2d[2]);
  const double half_diff = 0.5 * (s.cov2d[0] - s.cov2d[2]);
  const double lambda_max =
      half_tr + std::sqrt(half_diff * half_diff + s.cov2d[1] * s.cov2d[1]);
  // alpha * exp(-q/2) >= 1/255 needs q <= 2 ln(255 alpha); q >= |d|^2 / lambda_max
  s.radius = std::sqrt(std::max(0.0, 2.0 * std::log(g.alpha / kAlphaMin)) * lambda_max);
  const double wmax = static_cast<double>(cam.width) - 1.0;
  const double hmax = static_cast<double>(cam.height) - 1.0;
  if (s.mean2d[0] + s.radius < 0.0 || s.mean2d[0] - s.radius > wmax ||
      s.mean2d[1] + s.radius < 0.0 || s.mean2d[1] - s.radius > hmax)
    return false;
  return true;
}

ParamGrad project_vjp(const ProjectedGaussian& pg, const CameraModel& cam,
                      const SplatGrad& g) {
  const auto& q = pg.splat.conic;
  // dL/dcov2d = -Q G_Q Q for symmetric Q
  const double gq[4] = {g.conic[0], g.conic[1], g.conic[1], g.conic[2]};
  const double qm[4] = {q[0], q[1], q[1], q[2]};
  double tmp[4], gc[4];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      tmp[r * 2 + c] = qm[r * 2] * gq[c] + qm[r * 2 + 1] * gq[2 + c];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      gc[r * 2 + c] = -(tmp[r * 2] * qm[c] + tmp[r * 2 + 1] * qm[2 + c]);

  const auto& jw = pg.jw;
  Mat3 gcov{};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double acc = 0.0;
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) acc += jw[r * 3 + a] * gc[r * 2 + c] * jw[c * 3 + b];
      gcov[a * 3 + b] = acc;
    }
  // dL/d(JW) = 2 G_c JW cov3d
  double gjw[6];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 3; ++m)
          acc += gc[r * 2 + k] * jw[k * 3 + m] * pg.cov3d[m * 3 + c];
      gjw[r * 3 + c] = 2.0 * acc;
    }
  const auto& w = cam.rotation;
  double gj[6];
  for (int r = 0; r < 2; ++r)
    for (int k = 0; k < 3; ++k) {
      double acc = 0.0;
      for (int m = 0; m < 3; ++m) acc += gjw[r * 3 + m] * w[k * 3 + m];
      gj[r * 3 + k] = acc;
    }
  const double x = pg.p_cam[0], y = pg.p_cam[1], z = pg.p_cam[2];
  const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
  const double fx = cam.fx, fy = cam.fy;
  Vec3 gp{};
  gp[0] = gj[2] * (-fx * iz2) + g.mean2d[0] * fx * iz;
  gp[1] = gj[5] * (-fy * iz2) + g.mean2d[1] * fy * iz;
  gp[2] = gj[0] * (-fx * iz2) + gj[2] * (2.0 * fx * x * iz3) +
          gj[4] * (-fy * iz2) + gj[5] * (2.0 * fy * y * iz3) +
          g.mean2d[0] * (-fx * x * iz2) + g.mean2d[1] * (-fy * y * iz2);
  ParamGrad out;
  for (int k = 0; k < 3; ++k)
    out.mu[k] = w[k] * gp[0] + w[3 + k] * gp[1] + w[6 + k] * gp[2];
  const auto cg = build_covariance_vjp(pg.quat, pg.log_scale, gcov);
  out.quat = cg.d_quat;
  out.log_scale = cg.d_log_scale;
  return out;
}

}  // namespace detail

std::optional<Splat2D> project_gaussian(const GaussianParams& g,
                                        const CameraModel& cam,
                                        std::size_t index) {
  detail::ProjectedGaussian pg;
  if (!detail::project_detail(g, cam, index, pg)) return std::nullopt;
  return pg.splat;
}

}  // namespace g2s
