#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "g2s/camera.hpp"
#include "g2s/image.hpp"
#include "g2s/rng.hpp"

using namespace g2s;

namespace {

CameraModel example_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = 128.0;
  cam.cy = 176.0;
  cam.width = 352;
  cam.height = 256;
  return cam;
}

CameraModel random_camera(Rng& rng) {
  const Vec3 eye{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
  const Vec3 target{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(3, 4)};
  return CameraModel::look_at(eye, target, {0, -1, 0}, rng.uniform(50, 200),
                              rng.uniform(50, 200), 32, 24, 64, 48);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("project examples") {
  const auto cam = example_camera();
  auto p = project(cam, {0, 0, 1});
  CHECK(p.valid);
  CHECK(p.pixel[0] == 128.0);
  CHECK(p.pixel[1] == 176.0);
  CHECK(p.depth == 1.0);
  p = project(cam, {0.5, 0, 1});
  CHECK(p.pixel[0] == 178.0);
  CHECK(p.pixel[1] == 176.0);
  CHECK_FALSE(project(cam, {0, 0, -1}).valid);
}

TEST_CASE("projection_jacobian examples") {
  CameraModel cam;
  const auto j = projection_jacobian(cam, {0, 0, 1});
  const std::array<double, 6> want{1, 0, 0, 0, 1, 0};
  CHECK(j == want);
  const Vec3 p{0.3, -0.2, 1.5};
  const Vec3 p2{0.3, -0.2, 3.0};
  const auto a = projection_jacobian(example_camera(), p);
  const auto b = projection_jacobian(example_camera(), p2);
  CHECK(b[0] == doctest::Approx(a[0] / 2).epsilon(1e-15));
  CHECK(b[2] == doctest::Approx(a[2] / 4).epsilon(1e-15));
  CHECK(b[5] == doctest::Approx(a[5] / 4).epsilon(1e-15));
  CHECK_THROWS(projection_jacobian(cam, {0, 0, 0}));
}

TEST_CASE("projection_jacobian matches finite differences of project") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto cam = random_camera(rng);
    const Vec3 pw{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 5)};
    const Vec3 pc = cam.to_camera(pw);
    if (pc[2] <= 0.1) continue;
    const auto j = projection_jacobian(cam, pc);
    // differentiate pixel w.r.t. camera-space coordinates
    CameraModel ident = cam;
    ident.rotation = identity3();
    ident.translation = {0, 0, 0};
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      Vec3 hi = pc, lo = pc;
      hi[c] += h;
      lo[c] -= h;
      const auto ph = project(ident, hi), pl = project(ident, lo);
      for (int r = 0; r < 2; ++r) {
        const double fd = (ph.pixel[r] - pl.pixel[r]) / (2 * h);
        CHECK(j[r * 3 + c] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("unproject inverts project") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto cam = random_camera(rng);
    const Vec3 pw{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 5)};
    const auto pr = project(cam, pw);
    if (!pr.valid) continue;
    const Vec3 back = cam.unproject(pr.pixel[0], pr.pixel[1], pr.depth);
    for (int c = 0; c < 3; ++c) CHECK(back[c] == doctest::Approx(pw[c]).scale(1).epsilon(1e-9));
  }
}

TEST_CASE("camera validation") {
  CameraModel cam;
  CHECK_NOTHROW(cam.validate());
  cam.fx = 0;
  CHECK_THROWS(cam.validate());
  cam = CameraModel{};
  cam.rotation = {1, 0, 0, 0, 1, 0, 0, 0, -1};
  CHECK_THROWS(cam.validate());
  cam.rotation = {1, 0.01, 0, 0, 1, 0, 0, 0, 1};
  CHECK_THROWS(cam.validate());
}

TEST_CASE("align_patches examples") {
  const auto cam = example_camera();
  const PatchGrid grid{16, 16, 22};
  // points that project onto the requested pixels at depth 1
  auto at_pixel = [&](double u, double v) {
    return cam.unproject(u, v, 1.0);
  };
  const auto idx = align_patches(
      {at_pixel(0, 0), at_pixel(351, 255), Vec3{0, 0, -1}, at_pixel(352, 10)}, cam, grid);
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 15 * 22 + 21);
  CHECK(idx[1] == 351);
  CHECK(idx[2] == kInvalidPatch);
  CHECK(idx[3] == kInvalidPatch);
}

TEST_CASE("complementary_masks: exact counts and complementarity") {
  Rng rng(4);
  const std::size_t M = 64, T = 352;
  for (int t = 0; t < 200; ++t) {
    std::vector<std::size_t> align(M);
    for (auto& a : align) a = rng.below(5) == 0 ? kInvalidPatch : rng.below(T);
    const auto masks = complementary_masks(align, M, T, 0.6, rng.next_u64());
    CHECK(masks.masked_points() == 38);
    CHECK(masks.point_visible.size() == M);
    CHECK(masks.image_visible.size() == T);
    for (std::size_t m = 0; m < M; ++m)
      if (!masks.point_visible[m] && align[m] != kInvalidPatch)
        CHECK(masks.image_visible[align[m]] == 1);
    if (!masks.relaxed) CHECK(masks.masked_images() == mask_count(0.6, T));
  }
}

TEST_CASE("complementary_masks: all patches on image patch zero") {
  const std::vector<std::size_t> align(64, 0);
  const auto masks = complementary_masks(align, 64, 4, 0.6, 1);
  CHECK(masks.image_visible[0] == 1);
  CHECK(masks.masked_images() == 2);
}

TEST_CASE("complementary_masks: relaxation emits a warning") {
  std::vector<std::size_t> align(10);
  for (std::size_t i = 0; i < 10; ++i) align[i] = i % 4;
  // 9 of 10 masked point patches cover every image patch
  const auto masks = complementary_masks(align, 10, 4, 0.9, 3);
  CHECK(masks.relaxed);
  CHECK_FALSE(masks.warning.empty());
  for (std::size_t m = 0; m < 10; ++m)
    if (!masks.point_visible[m]) CHECK(masks.image_visible[align[m]] == 1);
}

TEST_CASE("complementary_masks: deterministic per seed") {
  std::vector<std::size_t> align(64);
  for (std::size_t i = 0; i < 64; ++i) align[i] = (i * 7) % 352;
  const auto a = complementary_masks(align, 64, 352, 0.6, 42);
  const auto b = complementary_masks(align, 64, 352, 0.6, 42);
  const auto c = complementary_masks(align, 64, 352, 0.6, 43);
  CHECK(a.point_visible == b.point_visible);
  CHECK(a.image_visible == b.image_visible);
  CHECK(a.point_visible != c.point_visible);
}

TEST_CASE("complementary_masks: zero ratio masks nothing") {
  const std::vector<std::size_t> align(8, 1);
  const auto m = complementary_masks(align, 8, 4, 0.0, 5);
  CHECK(m.masked_points() == 0);
  CHECK(m.masked_images() == 0);
  CHECK_THROWS(complementary_masks(align, 8, 4, 1.0, 5));
}

TEST_CASE("camera file round trip and field errors") {
  Rng rng(5);
  const auto cam = random_camera(rng);
  const auto path = temp_file("g2s_cam.txt");
  write_camera(path.string(), cam);
  CHECK(read_camera(path.string()) == cam);
  {
    std::ofstream out(path);
    out << "100 100 32 24\n1 0 0\n0 1 0\n0 0 1\n0 0 0\n64\n";
  }
  try {
    read_camera(path.string());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.file() == path.string());
    CHECK(e.field().find("height") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("image and depth codecs round trip") {
  Rng rng(6);
  Image img(7, 5);
  for (auto& v : img.data) v = rng.uniform();
  for (const char* name : {"g2s_img.ppm", "g2s_img.png"}) {
    const auto path = temp_file(name);
    if (std::string(name).ends_with(".ppm"))
      write_ppm(path.string(), img);
    else
      write_png(path.string(), img);
    const auto back = read_image(path.string());
    REQUIRE(back.width == 7);
    REQUIRE(back.height == 5);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
    std::filesystem::remove(path);
  }
  DepthMap d{6, 4, std::vector<double>(24)};
  for (std::size_t i = 0; i < 24; ++i) d.meters[i] = i % 5 == 0 ? 0.0 : 0.001 * (100 + 37 * i);
  const auto path = temp_file("g2s_depth.png");
  write_depth_png(path.string(), d);
  const auto back = read_depth_png(path.string());
  for (std::size_t i = 0; i < 24; ++i) CHECK(back.meters[i] == doctest::Approx(d.meters[i]).epsilon(1e-12));
  std::filesystem::remove(path);
}
