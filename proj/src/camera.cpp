#include "g2s/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "g2s/error.hpp"
#include "g2s/rng.hpp"

namespace g2s {

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n == 0.0) throw std::invalid_argument("look_at: degenerate direction");
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("CameraModel: focal lengths must be positive");
  }
  if (width == 0 || height == 0) {
    throw std::invalid_argument("CameraModel: image extents must be positive");
  }
  const auto& r = rotation;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[i * 3 + k] * r[j * 3 + k];
      if (std::fabs(dot - (i == j ? 1.0 : 0.0)) > 1e-9) {
        throw std::invalid_argument("CameraModel: rotation not orthonormal");
      }
    }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                     r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::fabs(det - 1.0) > 1e-9) {
    throw std::invalid_argument("CameraModel: rotation determinant is not +1");
  }
}

Vec3 CameraModel::to_camera(const Vec3& p) const {
  const auto& r = rotation;
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + translation[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + translation[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + translation[2]};
}

Vec3 CameraModel::to_world(const Vec3& pc) const {
  const Vec3 d{pc[0] - translation[0], pc[1] - translation[1],
               pc[2] - translation[2]};
  const auto& r = rotation;
  return {r[0] * d[0] + r[3] * d[1] + r[6] * d[2],
          r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
          r[2] * d[0] + r[5] * d[1] + r[8] * d[2]};
}

Vec3 CameraModel::unproject(double u, double v, double depth) const {
  return to_world({(u - cx) / fx * depth, (v - cy) / fy * depth, depth});
}

Vec3 CameraModel::position() const { return to_world({0.0, 0.0, 0.0}); }

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target,
                                 const Vec3& up, double fx, double fy,
                                 double cx, double cy, std::size_t width,
                                 std::size_t height) {
  const Vec3 f = normalized({target[0] - eye[0], target[1] - eye[1],
                             target[2] - eye[2]});
  const Vec3 right = normalized(cross(f, up));
  const Vec3 down = cross(f, right);
  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  cam.rotation = {right[0], right[1], right[2], down[0], down[1],
                  down[2],  f[0],     f[1],     f[2]};
  for (int i = 0; i < 3; ++i) {
    cam.translation[i] = -(cam.rotation[i * 3] * eye[0] +
                           cam.rotation[i * 3 + 1] * eye[1] +
                           cam.rotation[i * 3 + 2] * eye[2]);
  }
  return cam;
}

Projection project(const CameraModel& cam, const Vec3& p_world) {
  const Vec3 pc = cam.to_camera(p_world);
  Projection out;
  out.depth = pc[2];
  out.valid = pc[2] > kZNear;
  if (out.valid) {
    out.pixel = {cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy};
  }
  return out;
}

std::array<double, 6> projection_jacobian(const CameraModel& cam,
                                          const Vec3& p) {
  if (!(p[2] > kZNear)) {
    throw std::invalid_argument("projection_jacobian: depth " +
                                std::to_string(p[2]) + " <= z_near");
  }
  const double iz = 1.0 / p[2];
  return {cam.fx * iz, 0.0, -cam.fx * p[0] * iz * iz,
          0.0, cam.fy * iz, -cam.fy * p[1] * iz * iz};
}

std::vector<std::size_t> align_patches(const std::vector<Vec3>& centers,
                                       const CameraModel& cam,
                                       const PatchGrid& grid) {
  if (grid.rows * grid.patch_px != cam.height ||
      grid.cols * grid.patch_px != cam.width) {
    throw ShapeError("align_patches",
                     {{grid.rows, grid.cols, grid.patch_px},
                      {cam.height, cam.width}},
                     "patch grid does not tile the image");
  }
  std::vector<std::size_t> out(centers.size(), kInvalidPatch);
  const double ps = static_cast<double>(grid.patch_px);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto pr = project(cam, centers[i]);
    if (!pr.valid) continue;
    const double u = pr.pixel[0], v = pr.pixel[1];
    if (!(u >= 0.0) || !(v >= 0.0) || u >= static_cast<double>(cam.width) ||
        v >= static_cast<double>(cam.height))
      continue;
    const auto col = static_cast<std::size_t>(std::floor(u / ps));
    const auto row = static_cast<std::size_t>(std::floor(v / ps));
    out[i] = row * grid.cols + col;
  }
  return out;
}

std::size_t MaskPair::masked_points() const {
  return static_cast<std::size_t>(
      std::count(point_visible.begin(), point_visible.end(), 0));
}

std::size_t MaskPair::masked_images() const {
  return static_cast<std::size_t>(
      std::count(image_visible.begin(), image_visible.end(), 0));
}

std::size_t mask_count(double mask_ratio, std::size_t n) {
  // tolerance absorbs products like 0.29 * 100 = 28.999999999999996
  return static_cast<std::size_t>(
      std::floor(mask_ratio * static_cast<double>(n) + 1e-9));
}

namespace {

// First `count` entries of a seeded Fisher-Yates shuffle of `items`.
std::vector<std::size_t> sample_without_replacement(
    std::vector<std::size_t> items, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(count);
  return items;
}

}  // namespace

MaskPair complementary_masks(const std::vector<std::size_t>& alignment,
                             std::size_t num_point_patches,
                             std::size_t num_image_patches, double mask_ratio,
                             std::uint64_t seed) {
  if (!(mask_ratio >= 0.0) || !(mask_ratio < 1.0)) {
    throw std::invalid_argument("complementary_masks: mask_ratio must be in [0, 1)");
  }
  if (alignment.size() != num_point_patches) {
    throw ShapeError("complementary_masks",
                     {{alignment.size()}, {num_point_patches}});
  }
  Rng rng(seed);
  MaskPair mp;
  mp.point_visible.assign(num_point_patches, 1);
  mp.image_visible.assign(num_image_patches, 1);

  std::vector<std::size_t> all(num_point_patches);
  std::iota(all.begin(), all.end(), 0);
  const std::size_t n_point = mask_count(mask_ratio, num_point_patches);
  std::vector<std::uint8_t> forced(num_image_patches, 0);
  for (auto i : sample_without_replacement(all, n_point, rng)) {
    mp.point_visible[i] = 0;
    const std::size_t img = alignment[i];
    if (img == kInvalidPatch) continue;
    if (img >= num_image_patches) {
      throw std::out_of_range("complementary_masks: alignment index " +
                              std::to_string(img) + " >= T");
    }
    forced[img] = 1;
  }

  std::vector<std::size_t> free;
  for (std::size_t t = 0; t < num_image_patches; ++t)
    if (!forced[t]) free.push_back(t);
  std::size_t n_image = mask_count(mask_ratio, num_image_patches);
  if (n_image > free.size()) {
    mp.relaxed = true;
    mp.warning = "complementary_masks: " +
                 std::to_string(num_image_patches - free.size()) +
                 " forced-visible image patches leave room for only " +
                 std::to_string(free.size()) + " of " +
                 std::to_string(n_image) + " image masks";
    n_image = free.size();
  }
  for (auto t : sample_without_replacement(std::move(free), n_image, rng))
    mp.image_visible[t] = 0;
  return mp;
}

CameraModel read_camera(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "file", "cannot open");
  CameraModel cam;
  auto read = [&](double& v, const char* field) {
    if (!(in >> v)) throw FormatError(path, field, "missing or not a number");
  };
  read(cam.fx, "fx");
  read(cam.fy, "fy");
  read(cam.cx, "cx");
  read(cam.cy, "cy");
  for (int i = 0; i < 9; ++i) read(cam.rotation[i], "rotation");
  for (int i = 0; i < 3; ++i) read(cam.translation[i], "translation");
  double w = 0, h = 0;
  read(w, "width");
  read(h, "height");
  if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h)) {
    throw FormatError(path, "width/height", "must be positive integers");
  }
  cam.width = static_cast<std::size_t>(w);
  cam.height = static_cast<std::size_t>(h);
  try {
    cam.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(path, "camera", e.what());
  }
  return cam;
}

void write_camera(const std::string& path, const CameraModel& cam) {
  std::ofstream out(path);
  if (!out) throw FormatError(path, "file", "cannot open for writing");
  out.precision(17);
  out << cam.fx << ' ' << cam.fy << ' ' << cam.cx << ' ' << cam.cy << '\n';
  for (int i = 0; i < 3; ++i)
    out << cam.rotation[i * 3] << ' ' << cam.rotation[i * 3 + 1] << ' '
        << cam.rotation[i * 3 + 2] << '\n';
  out << cam.translation[0] << ' ' << cam.translation[1] << ' '
      << cam.translation[2] << '\n';
  out << cam.width << ' ' << cam.height << '\n';
}

}  // namespace g2s
