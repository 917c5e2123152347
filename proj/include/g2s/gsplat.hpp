#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "g2s/adamw.hpp"
#include "g2s/camera.hpp"
#include "g2s/image.hpp"
#include "g2s/pointcloud.hpp"
#include "g2s/tensor.hpp"

namespace g2s {

using Quat = std::array<double, 4>;  // (w, x, y, z)

/// Learnable anisotropic Gaussians. Activations: scale = exp(log_scale),
/// color = sigmoid(color_logit), opacity = sigmoid(opacity_logit).
struct GaussianSet {
  Tensor mu;             // N x 3
  Tensor quat;           // N x 4
  Tensor log_scale;      // N x 3
  Tensor color_logit;    // N x 3
  Tensor opacity_logit;  // N

  std::size_t size() const { return mu.defined() ? mu.size(0) : 0; }
  void validate() const;
  std::vector<NamedTensor> parameters() const;
  /// Deep copy with fresh leaves.
  GaussianSet clone(bool requires_grad = true) const;

  /// Seeds one Gaussian per point: isotropic scale from the mean distance to
  /// the 3 nearest other points, identity rotation, opacity 0.1, mid-gray.
  static GaussianSet from_points(const PointCloud& pc,
                                 bool requires_grad = true);
};

/// R S S^T R^T for a (not necessarily unit) quaternion and log-scales.
Mat3 build_covariance(const Quat& quat, const Vec3& log_scale);

struct CovarianceGrad {
  Quat d_quat{};
  Vec3 d_log_scale{};
};
/// Pullback of a covariance cotangent (full-entry 3x3) onto the inputs.
CovarianceGrad build_covariance_vjp(const Quat& quat, const Vec3& log_scale,
                                    const Mat3& d_cov);

/// Rotation matrix of the normalized quaternion; throws on a zero quaternion.
Mat3 quat_to_rotation(const Quat& quat);

/// Screen-space footprint of one Gaussian.
struct Splat2D {
  std::array<double, 2> mean2d{};
  std::array<double, 3> cov2d{};  // xx, xy, yy (low-pass dilation included)
  std::array<double, 3> conic{};  // inverse of cov2d: xx, xy, yy
  double depth = 0.0;
  Vec3 color{};
  double alpha = 0.0;
  double radius = 0.0;  // pixels beyond which alpha*w < 1/255
  std::size_t index = 0;
};

/// Activated parameters of a single Gaussian.
struct GaussianParams {
  Vec3 mu{};
  Quat quat{1.0, 0.0, 0.0, 0.0};
  Vec3 log_scale{};
  Vec3 color{0.5, 0.5, 0.5};
  double alpha = 0.5;
};

GaussianParams gaussian_at(const GaussianSet& gs, std::size_t i);

inline constexpr double kLowPass = 0.3;
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceMin = 1e-4;

/// Perspective projection of a Gaussian (EWA affine approximation). Returns
/// nullopt when the center is within z_near or the footprint misses the
/// frame entirely.
std::optional<Splat2D> project_gaussian(const GaussianParams& g,
                                        const CameraModel& cam,
                                        std::size_t index = 0);

struct RenderOptions {
  bool early_exit = true;  // stop compositing once transmittance < 1e-4
  std::size_t tile = 16;
  std::size_t threads = 1;
};

struct RenderOutput {
  Tensor image;                       // H x W x 3
  std::vector<double> transmittance;  // H x W, light left after compositing
  std::vector<double> weight_sum;     // H x W, sum of alpha_eff * T
};

/// Front-to-back alpha compositing over a black background, differentiable
/// with respect to every Gaussian parameter tensor.
RenderOutput render(const GaussianSet& gs, const CameraModel& cam,
                    const RenderOptions& opts = {});
inline Tensor rasterize(const GaussianSet& gs, const CameraModel& cam,
                        const RenderOptions& opts = {}) {
  return render(gs, cam, opts).image;
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2. Near borders the window is truncated and renormalized.
Tensor ssim(const Tensor& a, const Tensor& b);
double ssim(const Image& a, const Image& b);

/// 10 log10(1 / MSE) for peak 1; +infinity when the images are identical.
double psnr(const Image& a, const Image& b);
double psnr(const Tensor& a, const Tensor& b);

Tensor l1_loss(const Tensor& a, const Tensor& b);

/// L1 + lambda_ssim (1 - SSIM) + gamma * mean_i prod_j s_ij.
Tensor gs_photometric_loss(const Tensor& rendered, const Tensor& target,
                           const GaussianSet& gs, double lambda_ssim,
                           double gamma);
/// Symmetric Chamfer between Gaussian centers and a point cloud.
Tensor gs_point_loss(const Tensor& centers, const Tensor& points);
/// (1 - lambda) L1 + lambda (1 - SSIM).
Tensor gs_image_loss(const Tensor& rendered, const Tensor& target,
                     double lambda);

struct GaussianView {
  CameraModel camera;
  Image image;
};

struct FitOptions {
  std::size_t iters = 500;
  double lambda_ssim = 0.2;
  double gamma = 0.01;
  double lr_mu = 2e-3;
  double lr_quat = 1e-2;
  double lr_scale = 1e-2;
  double lr_color = 5e-2;
  double lr_opacity = 5e-2;
  RenderOptions render{};
};

struct FitReport {
  std::vector<double> losses;  // per iteration, summed over views
};

class GaussianDivergence : public std::runtime_error {
 public:
  GaussianDivergence(std::size_t iteration, double loss);
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Adam minimization of the photometric loss summed over views.
GaussianSet optimize_gaussians(const GaussianSet& init,
                               const std::vector<GaussianView>& views,
                               const FitOptions& opts,
                               FitReport* report = nullptr);

/// Vertex properties x,y,z, scale_0..2 (log), rot_0..3, opacity (logit),
/// red, green, blue (activated).
void write_gaussian_ply(const std::string& path, const GaussianSet& gs);
GaussianSet read_gaussian_ply(const std::string& path);

}  // namespace g2s
