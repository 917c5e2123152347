#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "g2s/gsplat.hpp"
#include "g2s/ops.hpp"
#include "oracles.hpp"

using namespace g2s;

namespace {

GaussianSet single(const Vec3& mu, const Vec3& scale, double alpha,
                   const Vec3& color, bool grad = false) {
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  GaussianSet gs;
  gs.mu = Tensor::from({1, 3}, {mu[0], mu[1], mu[2]}, grad);
  gs.quat = Tensor::from({1, 4}, {1, 0, 0, 0}, grad);
  gs.log_scale = Tensor::from(
      {1, 3}, {std::log(scale[0]), std::log(scale[1]), std::log(scale[2])}, grad);
  gs.color_logit =
      Tensor::from({1, 3}, {logit(color[0]), logit(color[1]), logit(color[2])}, grad);
  gs.opacity_logit = Tensor::from({1}, {logit(alpha)}, grad);
  return gs;
}

GaussianSet concat_sets(const GaussianSet& a, const GaussianSet& b) {
  GaussianSet out;
  out.mu = concat({a.mu, b.mu}, 0).detach();
  out.quat = concat({a.quat, b.quat}, 0).detach();
  out.log_scale = concat({a.log_scale, b.log_scale}, 0).detach();
  out.color_logit = concat({a.color_logit, b.color_logit}, 0).detach();
  out.opacity_logit = concat({a.opacity_logit, b.opacity_logit}, 0).detach();
  return out;
}

}  // namespace

TEST_CASE("build_covariance: identity rotation squares the scales") {
  const auto c = build_covariance({1, 0, 0, 0}, {0.0, std::log(2.0), std::log(3.0)});
  const Mat3 want{1, 0, 0, 0, 4, 0, 0, 0, 9};
  for (int i = 0; i < 9; ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("build_covariance: 90 degrees about z swaps the first two axes") {
  const double h = std::sqrt(0.5);
  const auto c = build_covariance({h, 0, 0, h}, {0.0, std::log(2.0), 0.0});
  const Mat3 want{4, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(c[i] == doctest::Approx(want[i]).scale(1).epsilon(1e-12));
}

TEST_CASE("build_covariance: symmetric and positive semi-definite") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const Vec3 ls{rng.uniform(-3, 1), rng.uniform(-3, 1), rng.uniform(-3, 1)};
    const auto c = build_covariance(q, ls);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(c[i * 3 + j] == c[j * 3 + i]);
    // Sylvester: leading principal minors of a PSD matrix are >= 0
    const double m1 = c[0];
    const double m2 = c[0] * c[4] - c[1] * c[3];
    const double m3 = c[0] * (c[4] * c[8] - c[5] * c[7]) -
                      c[1] * (c[3] * c[8] - c[5] * c[6]) +
                      c[2] * (c[3] * c[7] - c[4] * c[6]);
    const double scale = c[0] + c[4] + c[8];
    CHECK(m1 >= -1e-12 * scale);
    CHECK(m2 >= -1e-12 * scale * scale);
    CHECK(m3 >= -1e-12 * scale * scale * scale);
  }
}

TEST_CASE("build_covariance: zero quaternion throws") {
  CHECK_THROWS_AS(build_covariance({0, 0, 0, 0}, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("build_covariance_vjp matches finite differences") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    Vec3 ls{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    Mat3 g{};
    for (auto& v : g) v = rng.normal();
    auto f = [&] {
      const auto c = build_covariance(q, ls);
      double s = 0.0;
      for (int i = 0; i < 9; ++i) s += g[i] * c[i];
      return s;
    };
    const auto vjp = build_covariance_vjp(q, ls, g);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
      const double o = q[k];
      q[k] = o + h;
      const double fp = f();
      q[k] = o - h;
      const double fm = f();
      q[k] = o;
      CHECK(vjp.d_quat[k] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-6));
    }
    for (int k = 0; k < 3; ++k) {
      const double o = ls[k];
      ls[k] = o + h;
      const double fp = f();
      ls[k] = o - h;
      const double fm = f();
      ls[k] = o;
      CHECK(vjp.d_log_scale[k] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("project_gaussian: on-axis unit depth gives identity plus dilation") {
  CameraModel cam;
  cam.width = cam.height = 3;
  cam.cx = cam.cy = 1.0;
  GaussianParams g;
  g.mu = {0, 0, 1};
  g.alpha = 0.9;
  const auto s = project_gaussian(g, cam);
  REQUIRE(s.has_value());
  CHECK(s->cov2d[0] == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(s->cov2d[1] == doctest::Approx(0.0).scale(1));
  CHECK(s->cov2d[2] == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(s->depth == 1.0);
  CHECK(s->mean2d[0] == 1.0);
}

TEST_CASE("project_gaussian: behind the camera is culled") {
  CameraModel cam;
  cam.width = cam.height = 8;
  GaussianParams g;
  g.mu = {0, 0, -1};
  CHECK_FALSE(project_gaussian(g, cam).has_value());
}

TEST_CASE("project_gaussian: projected covariance is symmetric positive definite") {
  Rng rng(3);
  const auto cam = oracle::test_camera(32, 32);
  for (int t = 0; t < 200; ++t) {
    GaussianParams g;
    g.mu = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.5, 3)};
    g.quat = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    g.log_scale = {rng.uniform(-6, 0), rng.uniform(-6, 0), rng.uniform(-6, 0)};
    g.alpha = 0.5;
    const auto s = project_gaussian(g, cam);
    if (!s) continue;
    CHECK(s->cov2d[0] > 0.0);
    CHECK(s->cov2d[0] * s->cov2d[2] - s->cov2d[1] * s->cov2d[1] > 0.0);
    CHECK(s->depth > kZNear);
  }
}

TEST_CASE("rasterize: single opaque splat saturates at the alpha clamp") {
  auto cam = oracle::test_camera(5, 5);
  cam.fx = cam.fy = 1.0;
  const auto gs = single({0, 0, 1}, {0.01, 0.01, 0.01}, 0.999999, {0.2, 0.4, 0.8});
  const Tensor img = rasterize(gs, cam);
  const std::size_t p = 2 * 5 + 2;
  CHECK(img[p * 3 + 0] == doctest::Approx(0.99 * 0.2).epsilon(1e-9));
  CHECK(img[p * 3 + 2] == doctest::Approx(0.99 * 0.8).epsilon(1e-9));
}

TEST_CASE("rasterize: two coincident half-alpha splats") {
  auto cam = oracle::test_camera(5, 5);
  cam.fx = cam.fy = 1.0;
  // tiny footprints so w = 1 at the center pixel; nearer splat first
  const auto a = single({0, 0, 1.0}, {1e-3, 1e-3, 1e-3}, 0.5, {0.9, 0.1, 0.3});
  const auto b = single({0, 0, 1.5}, {1e-3, 1e-3, 1e-3}, 0.5, {0.2, 0.6, 0.7});
  const Tensor img = rasterize(concat_sets(b, a), cam);
  const std::size_t p = 2 * 5 + 2;
  CHECK(img[p * 3 + 0] == doctest::Approx(0.5 * 0.9 + 0.25 * 0.2).epsilon(1e-12));
  CHECK(img[p * 3 + 1] == doctest::Approx(0.5 * 0.1 + 0.25 * 0.6).epsilon(1e-12));
}

TEST_CASE("rasterize: zero Gaussians throws") {
  GaussianSet gs;
  gs.mu = Tensor::zeros({0, 3});
  gs.quat = Tensor::zeros({0, 4});
  gs.log_scale = Tensor::zeros({0, 3});
  gs.color_logit = Tensor::zeros({0, 3});
  gs.opacity_logit = Tensor::zeros({0});
  CHECK_THROWS(rasterize(gs, oracle::test_camera(4, 4)));
}

TEST_CASE("rasterize: tiled renderer equals the naive compositor") {
  Rng rng(2024);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + rng.below(64);
    const std::size_t w = 8 + rng.below(25), h = 8 + rng.below(25);
    const auto gs = oracle::random_gaussians(rng, n, 0.5, 2.0, false);
    const auto cam = oracle::test_camera(w, h);
    RenderOptions opts;
    opts.early_exit = false;
    opts.tile = 1 + rng.below(16);
    const auto got = render(gs, cam, opts);
    const auto want = oracle::naive_render(gs, cam);
    double worst = 0.0, conservation = 0.0;
    for (std::size_t i = 0; i < want.image.size(); ++i)
      worst = std::max(worst, std::abs(got.image[i] - want.image[i]));
    for (std::size_t p = 0; p < w * h; ++p)
      conservation = std::max(
          conservation, std::abs(got.weight_sum[p] + got.transmittance[p] - 1.0));
    CHECK(worst <= 1e-12);
    CHECK(conservation <= 1e-6);
  }
}

TEST_CASE("rasterize: deterministic across runs and thread counts") {
  Rng rng(9);
  auto gs = oracle::random_gaussians(rng, 40, 0.5, 2.0, false);
  // force depth ties
  auto mu = gs.mu.mutable_data();
  for (std::size_t i = 0; i < 40; ++i) mu[i * 3 + 2] = 2.0;
  const auto cam = oracle::test_camera(24, 20);
  RenderOptions one, four;
  four.threads = 4;
  const Tensor a = rasterize(gs, cam, one);
  const Tensor b = rasterize(gs, cam, one);
  const Tensor c = rasterize(gs, cam, four);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == b[i]);
    CHECK(a[i] == c[i]);
  }
}

TEST_CASE("rasterize: gradients match finite differences") {
  Rng rng(77);
  const auto cam = oracle::test_camera(16, 16);
  for (int t = 0; t < 4; ++t) {
    auto gs = oracle::random_gaussians(rng, 8, 0.4, 2.0);
    Tensor weights = Tensor::randn({16, 16, 3}, rng, 1.0);
    RenderOptions opts;
    opts.early_exit = false;
    const double err = oracle::gradcheck(
        [&] { return sum(rasterize(gs, cam, opts) * weights); },
        {gs.mu, gs.quat, gs.log_scale, gs.color_logit, gs.opacity_logit}, 1e-5,
        1e-6, oracle::render_regime(gs, cam));
    CHECK(err < 1e-3);
  }
}

TEST_CASE("ssim: identical images give one") {
  Rng rng(1);
  Tensor a = Tensor::randn({12, 9, 3}, rng, 0.2);
  CHECK(ssim(a, a).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim: black versus white") {
  const Tensor a = Tensor::zeros({16, 16, 3});
  const Tensor b = Tensor::full({16, 16, 3}, 1.0);
  const double c1 = 1e-4;
  CHECK(ssim(a, b).item() == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-9));
}

TEST_CASE("ssim: symmetric and shape-checked") {
  Rng rng(2);
  Tensor a = Tensor::randn({10, 14, 3}, rng, 0.3);
  Tensor b = Tensor::randn({10, 14, 3}, rng, 0.3);
  CHECK(std::abs(ssim(a, b).item() - ssim(b, a).item()) <= 1e-12);
  CHECK_THROWS_AS(ssim(a, Tensor::zeros({10, 13, 3})), ShapeError);
}

TEST_CASE("ssim: gradient matches finite differences") {
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    Tensor a = Tensor::from({9, 13, 3}, std::vector<double>(9 * 13 * 3), true);
    Tensor b = Tensor::from({9, 13, 3}, std::vector<double>(9 * 13 * 3), true);
    for (auto& v : a.mutable_data()) v = rng.uniform();
    for (auto& v : b.mutable_data()) v = rng.uniform();
    CHECK(oracle::gradcheck([&] { return ssim(a, b); }, {a, b}) < 1e-4);
  }
}

TEST_CASE("psnr examples") {
  Image zero(4, 4, 0.0), one(4, 4, 1.0), tenth(4, 4, 0.1);
  CHECK(psnr(zero, one) == doctest::Approx(0.0).scale(1));
  CHECK(psnr(zero, tenth) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(std::isinf(psnr(one, one)));
}

TEST_CASE("photometric loss examples") {
  const auto gs = single({0, 0, 1}, {1, 2, 3}, 0.5, {0.5, 0.5, 0.5});
  Rng rng(8);
  const Tensor img = Tensor::randn({6, 6, 3}, rng, 0.2);
  CHECK(gs_photometric_loss(img, img, gs, 0.2, 0.0).item() ==
        doctest::Approx(0.0).scale(1));
  CHECK(gs_photometric_loss(img, img, gs, 0.0, 1.0).item() ==
        doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("point loss examples") {
  const Tensor a = Tensor::from({1, 3}, {0, 0, 0});
  const Tensor b = Tensor::from({1, 3}, {1, 0, 0});
  CHECK(gs_point_loss(a, b).item() == 2.0);
  CHECK(gs_point_loss(a, a).item() == 0.0);
  CHECK_THROWS(gs_point_loss(Tensor::zeros({0, 3}), b));
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    std::vector<Vec3> p(1 + rng.below(10)), q(1 + rng.below(10));
    for (auto& v : p) v = {rng.normal(), rng.normal(), rng.normal()};
    for (auto& v : q) v = {rng.normal(), rng.normal(), rng.normal()};
    const double got =
        gs_point_loss(PointCloud{p}.to_tensor(), PointCloud{q}.to_tensor()).item();
    CHECK(got == doctest::Approx(oracle::brute_chamfer(p, q)).epsilon(1e-12));
  }
}

TEST_CASE("image loss examples") {
  Rng rng(3);
  Tensor a = Tensor::randn({12, 12, 3}, rng, 0.2);
  Tensor b = Tensor::randn({12, 12, 3}, rng, 0.2);
  CHECK(gs_image_loss(a, a, 0.2).item() == doctest::Approx(0.0).scale(1));
  CHECK(gs_image_loss(a, b, 0.0).item() == doctest::Approx(l1_loss(a, b).item()).epsilon(1e-15));
  const Tensor zero = Tensor::zeros({16, 16, 3});
  const Tensor one = Tensor::full({16, 16, 3}, 1.0);
  CHECK(gs_image_loss(zero, one, 1.0).item() ==
        doctest::Approx(1.0 - 1e-4 / (1.0 + 1e-4)).epsilon(1e-12));
}

TEST_CASE("losses: full gradient through the renderer") {
  Rng rng(31);
  const auto cam = oracle::test_camera(16, 16);
  for (int t = 0; t < 3; ++t) {
    auto gs = oracle::random_gaussians(rng, 8, 0.4, 2.0);
    Tensor target = Tensor::zeros({16, 16, 3});
    for (auto& v : target.mutable_data()) v = rng.uniform();
    RenderOptions opts;
    opts.early_exit = false;
    const std::vector<Tensor> leaves{gs.mu, gs.quat, gs.log_scale, gs.color_logit,
                                     gs.opacity_logit};
    CHECK(oracle::gradcheck(
              [&] {
                return gs_photometric_loss(rasterize(gs, cam, opts), target, gs, 0.2, 0.5);
              },
              leaves, 1e-5, 1e-6, oracle::render_regime(gs, cam)) < 1e-3);
    CHECK(oracle::gradcheck(
              [&] { return gs_image_loss(rasterize(gs, cam, opts), target, 0.2); },
              leaves, 1e-5, 1e-6, oracle::render_regime(gs, cam)) < 1e-3);
  }
}

TEST_CASE("optimize_gaussians: a perfect scene is a fixed point") {
  Rng rng(6);
  const auto cam = oracle::test_camera(16, 16);
  const auto gs = oracle::random_gaussians(rng, 6, 0.3, 2.0, false);
  const Image target = Image::from_tensor(rasterize(gs, cam));
  FitOptions opts;
  opts.iters = 5;
  opts.gamma = 0.0;
  opts.lambda_ssim = 0.0;
  FitReport report;
  const auto out = optimize_gaussians(gs, {{cam, target}}, opts, &report);
  CHECK(report.losses.front() == 0.0);
  for (std::size_t i = 0; i < gs.mu.numel(); ++i)
    CHECK(out.mu[i] == doctest::Approx(gs.mu[i]).epsilon(1e-9));
}

TEST_CASE("optimize_gaussians: loss decreases and volume term shrinks scales") {
  const auto cam = oracle::test_camera(16, 16);
  Image target(16, 16, 0.6);
  Rng rng(10);
  const auto init = oracle::random_gaussians(rng, 12, 0.4, 2.0, false);
  FitOptions opts;
  opts.iters = 60;
  opts.gamma = 0.0;
  FitReport plain;
  const auto a = optimize_gaussians(init, {{cam, target}}, opts, &plain);
  CHECK(plain.losses.back() <= plain.losses.front());
  opts.gamma = 50.0;
  const auto b = optimize_gaussians(init, {{cam, target}}, opts);
  auto volume = [](const GaussianSet& gs) {
    return mean(exp(sum(gs.log_scale, 1))).item();
  };
  CHECK(volume(b) < volume(a));
}

TEST_CASE("optimize_gaussians: rejects zero iterations and no views") {
  Rng rng(1);
  const auto gs = oracle::random_gaussians(rng, 2, 0.3, 2.0, false);
  FitOptions opts;
  opts.iters = 0;
  CHECK_THROWS(optimize_gaussians(gs, {{oracle::test_camera(4, 4), Image(4, 4)}}, opts));
  opts.iters = 1;
  CHECK_THROWS(optimize_gaussians(gs, {}, opts));
}

TEST_CASE("optimize_gaussians: NaN loss reports the iteration") {
  const auto cam = oracle::test_camera(8, 8);
  Image target(8, 8, 0.5);
  target.data[0] = std::nan("");
  Rng rng(1);
  const auto gs = oracle::random_gaussians(rng, 3, 0.2, 2.0, false);
  FitOptions opts;
  opts.iters = 3;
  try {
    optimize_gaussians(gs, {{cam, target}}, opts);
    FAIL("expected divergence");
  } catch (const GaussianDivergence& e) {
    CHECK(e.iteration() == 0);
  }
}

TEST_CASE("from_points: initialization rule") {
  PointCloud pc{{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}, {10, 10, 10}}};
  const auto gs = GaussianSet::from_points(pc, false);
  CHECK(gs.size() == 5);
  CHECK(gs.log_scale[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(gs.quat[0] == 1.0);
  CHECK(1.0 / (1.0 + std::exp(-gs.opacity_logit[0])) == doctest::Approx(0.1));
  CHECK(gs.color_logit[0] == 0.0);
  PointCloud dup{{{1, 1, 1}, {1, 1, 1}}};
  const auto d = GaussianSet::from_points(dup, false);
  CHECK(std::isfinite(d.log_scale[0]));
}

TEST_CASE("Gaussian PLY round trip") {
  Rng rng(15);
  const auto gs = oracle::random_gaussians(rng, 7, 0.5, 2.0, false);
  const auto path = std::filesystem::temp_directory_path() / "g2s_gauss.ply";
  write_gaussian_ply(path.string(), gs);
  const auto back = read_gaussian_ply(path.string());
  REQUIRE(back.size() == 7);
  for (std::size_t i = 0; i < gs.mu.numel(); ++i)
    CHECK(back.mu[i] == doctest::Approx(gs.mu[i]).epsilon(1e-6));
  for (std::size_t i = 0; i < gs.color_logit.numel(); ++i)
    CHECK(back.color_logit[i] == doctest::Approx(gs.color_logit[i]).epsilon(1e-4));
  std::filesystem::remove(path);
}
