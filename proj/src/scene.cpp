#include "g2s/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "g2s/error.hpp"
#include "g2s/ply.hpp"
#include "g2s/rng.hpp"
#include "parallel.hpp"

namespace g2s {

namespace fs = std::filesystem;

double Primitive::area() const {
  const double dx = hi[0] - lo[0], dy = hi[1] - lo[1], dz = hi[2] - lo[2];
  if (kind == Kind::kBox) return 2.0 * (dx * dy + dy * dz + dz * dx);
  switch (plane_axis()) {
    case 0: return dy * dz;
    case 1: return dx * dz;
    default: return dx * dy;
  }
}

int Primitive::plane_axis() const {
  if (kind == Kind::kBox) return -1;
  for (int a = 0; a < 3; ++a)
    if (lo[a] == hi[a]) return a;
  return -1;
}

namespace {

constexpr double kRoomSlack = 1e-9;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string vec_text(const Vec3& v) {
  return fmt(v[0]) + " " + fmt(v[1]) + " " + fmt(v[2]);
}

Primitive parse_primitive(const KeyValueFile& kv, const std::string& key,
                          const std::string& value) {
  const auto v = kv.doubles(key, value, 9);
  Primitive p;
  p.kind = key == "box" ? Primitive::Kind::kBox : Primitive::Kind::kPlane;
  p.lo = {v[0], v[1], v[2]};
  p.hi = {v[3], v[4], v[5]};
  p.albedo = {v[6], v[7], v[8]};
  return p;
}

void validate_primitive(const Primitive& p, const Vec3& room, std::size_t i) {
  const std::string where = "primitive " + std::to_string(i);
  for (int a = 0; a < 3; ++a) {
    if (!(p.lo[a] <= p.hi[a])) {
      throw std::invalid_argument(where + ": lo exceeds hi");
    }
    if (p.lo[a] < -kRoomSlack || p.hi[a] > room[a] + kRoomSlack) {
      throw std::invalid_argument(where + ": outside the room extents");
    }
    if (!(p.albedo[a] >= 0.0 && p.albedo[a] <= 1.0)) {
      throw std::invalid_argument(where + ": albedo outside [0, 1]");
    }
  }
  int flat = 0;
  for (int a = 0; a < 3; ++a) flat += p.lo[a] == p.hi[a];
  if (p.kind == Primitive::Kind::kBox && flat != 0) {
    throw std::invalid_argument(where + ": box has a zero extent");
  }
  if (p.kind == Primitive::Kind::kPlane && flat != 1) {
    throw std::invalid_argument(where + ": plane needs exactly one flat axis");
  }
}

Vec3 unit(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// One rectangular face: fixed coordinate on `axis`, ranges on the other two.
struct Face {
  int axis;
  double value;
  Vec3 lo, hi;
  double area;
};

std::vector<Face> faces_of(const Primitive& p) {
  std::vector<Face> out;
  auto face = [&](int a, double value) {
    Face f{a, value, p.lo, p.hi, 1.0};
    for (int b = 0; b < 3; ++b)
      if (b != a) f.area *= p.hi[b] - p.lo[b];
    out.push_back(f);
  };
  if (p.kind == Primitive::Kind::kPlane) {
    face(p.plane_axis(), p.lo[p.plane_axis()]);
    return out;
  }
  for (int a = 0; a < 3; ++a) {
    face(a, p.lo[a]);
    face(a, p.hi[a]);
  }
  return out;
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int axis = -1;
  std::size_t primitive = 0;
};

bool inside(double x, double lo, double hi) { return x >= lo && x <= hi; }

// Nearest positive hit of the ray o + t d, t > t_min. Ties keep the lower
// primitive index.
void intersect(const Primitive& p, std::size_t index, const Vec3& o,
               const Vec3& d, double t_min, Hit& best) {
  if (p.kind == Primitive::Kind::kPlane) {
    const int a = p.plane_axis();
    if (d[a] == 0.0) return;
    const double t = (p.lo[a] - o[a]) / d[a];
    if (!(t > t_min) || !(t < best.t)) return;
    for (int b = 0; b < 3; ++b) {
      if (b == a) continue;
      if (!inside(o[b] + t * d[b], p.lo[b], p.hi[b])) return;
    }
    best = {t, a, index};
    return;
  }
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int enter_axis = -1, exit_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (!inside(o[a], p.lo[a], p.hi[a])) return;
      continue;
    }
    double t0 = (p.lo[a] - o[a]) / d[a];
    double t1 = (p.hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = a;
    }
    if (t1 < t_exit) {
      t_exit = t1;
      exit_axis = a;
    }
  }
  if (t_enter > t_exit) return;
  // from inside a box the far wall is visible
  const bool front = t_enter > t_min;
  const double t = front ? t_enter : t_exit;
  const int axis = front ? enter_axis : exit_axis;
  if (axis < 0 || !(t > t_min) || !(t < best.t)) return;
  best = {t, axis, index};
}

}  // namespace

SceneSpec SceneSpec::from_config(const KeyValueFile& kv) {
  kv.require_known({"room", "box", "plane", "random_boxes", "walls", "seed",
                    "views", "image", "focal", "points"});
  SceneSpec s;
  if (kv.has("room")) {
    const auto r = kv.doubles("room", kv.get("room"), 3);
    s.room = {r[0], r[1], r[2]};
  }
  for (const auto& [key, value] : kv.entries()) {
    if (key == "box" || key == "plane") {
      s.primitives.push_back(parse_primitive(kv, key, value));
    }
  }
  s.random_boxes = kv.get_size("random_boxes", s.random_boxes);
  s.walls = kv.get_bool("walls", s.walls);
  s.seed = kv.get_u64("seed", s.seed);
  s.views = kv.get_size("views", s.views);
  if (kv.has("image")) {
    const auto wh = kv.doubles("image", kv.get("image"), 2);
    if (!(wh[0] >= 1.0) || !(wh[1] >= 1.0) || wh[0] != std::floor(wh[0]) ||
        wh[1] != std::floor(wh[1])) {
      throw FormatError(kv.source(), "image", "extents must be positive integers");
    }
    s.width = static_cast<std::size_t>(wh[0]);
    s.height = static_cast<std::size_t>(wh[1]);
  }
  s.focal = kv.get_double("focal", s.focal);
  s.points = kv.get_size("points", s.points);
  return s;
}

SceneSpec SceneSpec::load(const std::string& path) {
  return from_config(KeyValueFile::load(path));
}

KeyValueFile SceneSpec::to_config() const {
  KeyValueFile kv;
  kv.add("room", vec_text(room));
  for (const auto& p : primitives) {
    kv.add(p.kind == Primitive::Kind::kBox ? "box" : "plane",
           vec_text(p.lo) + " " + vec_text(p.hi) + " " + vec_text(p.albedo));
  }
  kv.add("random_boxes", std::to_string(random_boxes));
  kv.add("walls", walls ? "true" : "false");
  kv.add("seed", std::to_string(seed));
  kv.add("views", std::to_string(views));
  kv.add("image", std::to_string(width) + " " + std::to_string(height));
  kv.add("focal", fmt(focal));
  kv.add("points", std::to_string(points));
  return kv;
}

Scene generate_scene(const SceneSpec& spec) {
  for (int a = 0; a < 3; ++a)
    if (!(spec.room[a] > 0.0)) {
      throw std::invalid_argument("generate_scene: room extents must be positive");
    }
  Scene scene;
  scene.room = spec.room;
  scene.seed = spec.seed;
  scene.light = unit({0.35, 0.5, 0.8});
  scene.primitives = spec.primitives;
  const Vec3& r = spec.room;
  if (spec.walls) {
    using K = Primitive::Kind;
    scene.primitives.push_back({K::kPlane, {0, 0, 0}, {r[0], r[1], 0}, {0.55, 0.5, 0.45}});
    scene.primitives.push_back({K::kPlane, {0, 0, 0}, {0, r[1], r[2]}, {0.75, 0.7, 0.6}});
    scene.primitives.push_back({K::kPlane, {r[0], 0, 0}, {r[0], r[1], r[2]}, {0.6, 0.7, 0.75}});
    scene.primitives.push_back({K::kPlane, {0, 0, 0}, {r[0], 0, r[2]}, {0.7, 0.75, 0.6}});
    scene.primitives.push_back({K::kPlane, {0, r[1], 0}, {r[0], r[1], r[2]}, {0.7, 0.6, 0.7}});
  }
  Rng rng(derive_seed(spec.seed, "boxes"));
  for (std::size_t i = 0; i < spec.random_boxes; ++i) {
    const Vec3 size{rng.uniform(0.08, 0.2) * r[0], rng.uniform(0.08, 0.2) * r[1],
                    rng.uniform(0.15, 0.45) * r[2]};
    Primitive p;
    p.lo = {rng.uniform(0.25 * r[0], 0.75 * r[0] - size[0]),
            rng.uniform(0.25 * r[1], 0.75 * r[1] - size[1]), 0.0};
    p.hi = {p.lo[0] + size[0], p.lo[1] + size[1], size[2]};
    p.albedo = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95),
                rng.uniform(0.15, 0.95)};
    scene.primitives.push_back(p);
  }
  if (scene.primitives.empty()) {
    throw std::invalid_argument("generate_scene: scene has no primitives");
  }
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    validate_primitive(scene.primitives[i], spec.room, i);
  }
  return scene;
}

void FrameRecord::validate() const {
  camera.validate();
  if (image.width != camera.width || image.height != camera.height ||
      image.data.size() != image.width * image.height * 3) {
    throw std::invalid_argument("FrameRecord: image extents differ from the camera");
  }
  if (depth.width != camera.width || depth.height != camera.height ||
      depth.meters.size() != depth.width * depth.height) {
    throw std::invalid_argument("FrameRecord: depth extents differ from the camera");
  }
  for (double d : depth.meters)
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw std::invalid_argument("FrameRecord: negative or non-finite depth");
    }
}

FrameRecord render_ground_truth(const Scene& scene, const CameraModel& cam,
                                std::size_t threads) {
  cam.validate();
  FrameRecord out;
  out.camera = cam;
  out.image = Image(cam.width, cam.height, 0.0);
  out.depth = {cam.width, cam.height, std::vector<double>(cam.width * cam.height, 0.0)};
  const Vec3 origin = cam.position();
  const auto& R = cam.rotation;
  detail::parallel_for(cam.height, threads, [&](std::size_t y) {
    for (std::size_t x = 0; x < cam.width; ++x) {
      // camera-space direction with unit z, so the hit parameter is depth
      const double dc[3] = {(static_cast<double>(x) - cam.cx) / cam.fx,
                            (static_cast<double>(y) - cam.cy) / cam.fy, 1.0};
      const Vec3 d{R[0] * dc[0] + R[3] * dc[1] + R[6] * dc[2],
                   R[1] * dc[0] + R[4] * dc[1] + R[7] * dc[2],
                   R[2] * dc[0] + R[5] * dc[1] + R[8] * dc[2]};
      Hit best;
      for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        intersect(scene.primitives[i], i, origin, d, kZNear, best);
      }
      if (best.axis < 0) continue;
      // face normal on the side facing the camera
      const double n_dot_l = d[best.axis] > 0.0 ? -scene.light[best.axis]
                                                : scene.light[best.axis];
      const double shade = kAmbient + (1.0 - kAmbient) * std::max(0.0, n_dot_l);
      const Vec3& albedo = scene.primitives[best.primitive].albedo;
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = albedo[c] * shade;
      out.depth.meters[y * cam.width + x] = best.t;
    }
  });
  return out;
}

PointCloud sample_point_cloud(const Scene& scene, std::size_t count) {
  if (count == 0) throw std::invalid_argument("sample_point_cloud: count must be >= 1");
  std::vector<Face> faces;
  for (const auto& p : scene.primitives) {
    const auto f = faces_of(p);
    faces.insert(faces.end(), f.begin(), f.end());
  }
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& f : faces) cumulative.push_back(total += f.area);
  if (!(total > 0.0)) throw std::invalid_argument("sample_point_cloud: zero surface area");
  Rng rng(derive_seed(scene.seed, "points"));
  PointCloud pc;
  pc.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const Face& f = faces[std::min<std::size_t>(it - cumulative.begin(), faces.size() - 1)];
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = a == f.axis ? f.value : rng.uniform(f.lo[a], f.hi[a]);
    }
    pc.points.push_back(p);
  }
  return pc;
}

std::vector<CameraModel> rig_cameras(const SceneSpec& spec) {
  if (spec.views == 0 || spec.width == 0 || spec.height == 0 || !(spec.focal > 0.0)) {
    throw std::invalid_argument("rig_cameras: views, extents and focal must be positive");
  }
  const Vec3& r = spec.room;
  const Vec3 target{0.5 * r[0], 0.5 * r[1], 0.15 * r[2]};
  std::vector<CameraModel> cams;
  for (std::size_t i = 0; i < spec.views; ++i) {
    const double theta = 2.0 * M_PI * (static_cast<double>(i) + 0.5) /
                         static_cast<double>(spec.views);
    const Vec3 eye{0.5 * r[0] + 0.4 * r[0] * std::cos(theta),
                   0.5 * r[1] + 0.4 * r[1] * std::sin(theta), 0.75 * r[2]};
    cams.push_back(CameraModel::look_at(
        eye, target, {0.0, 0.0, 1.0}, spec.focal, spec.focal,
        0.5 * (static_cast<double>(spec.width) - 1.0),
        0.5 * (static_cast<double>(spec.height) - 1.0), spec.width, spec.height));
  }
  return cams;
}

SceneData synthesize_scene(const SceneSpec& spec, std::size_t threads) {
  const Scene scene = generate_scene(spec);
  SceneData out;
  out.name = "scene_" + std::to_string(spec.seed);
  for (const auto& cam : rig_cameras(spec)) {
    out.frames.push_back(render_ground_truth(scene, cam, threads));
  }
  out.cloud = sample_point_cloud(scene, spec.points);
  return out;
}

namespace {

std::string frame_stem(std::size_t i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return c >= '0' && c <= '9';
  });
}

}  // namespace

void write_scene_dir(const std::string& dir, const SceneData& scene) {
  const fs::path root(dir);
  fs::create_directories(root / "frames");
  fs::create_directories(root / "depth");
  fs::create_directories(root / "cams");
  for (std::size_t i = 0; i < scene.frames.size(); ++i) {
    const auto& f = scene.frames[i];
    f.validate();
    const std::string stem = frame_stem(i);
    write_ppm((root / "frames" / (stem + ".ppm")).string(), f.image);
    write_depth_png((root / "depth" / (stem + ".png")).string(), f.depth);
    write_camera((root / "cams" / (stem + ".txt")).string(), f.camera);
  }
  if (!scene.cloud.points.empty()) {
    write_ply_cloud((root / "cloud.ply").string(), scene.cloud);
  }
}

PointCloud back_project(const FrameRecord& frame) {
  PointCloud pc;
  const auto& d = frame.depth;
  for (std::size_t y = 0; y < d.height; ++y)
    for (std::size_t x = 0; x < d.width; ++x) {
      const double z = d.meters[y * d.width + x];
      if (z > 0.0) {
        pc.points.push_back(frame.camera.unproject(static_cast<double>(x),
                                                   static_cast<double>(y), z));
      }
    }
  return pc;
}

std::vector<std::pair<FrameRecord, PointCloud>> load_rgbd_frames(
    const std::string& dir) {
  const fs::path root(dir);
  const fs::path frames_dir = root / "frames";
  if (!fs::is_directory(frames_dir)) {
    throw FormatError(dir, "frames", "missing frames/ directory");
  }
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(frames_dir)) {
    const auto ext = e.path().extension().string();
    if ((ext == ".ppm" || ext == ".png") && all_digits(e.path().stem().string())) {
      images.push_back(e.path());
    }
  }
  if (images.empty()) throw FormatError(dir, "frames", "no frames found");
  std::sort(images.begin(), images.end());
  std::vector<std::pair<FrameRecord, PointCloud>> out;
  for (const auto& img_path : images) {
    const std::string stem = img_path.stem().string();
    const fs::path cam_path = root / "cams" / (stem + ".txt");
    if (!fs::exists(cam_path)) {
      throw FormatError(cam_path.string(), "camera", "missing camera record");
    }
    FrameRecord f;
    f.camera = read_camera(cam_path.string());
    f.image = read_image(img_path.string());
    if (f.image.width != f.camera.width || f.image.height != f.camera.height) {
      throw FormatError(img_path.string(), "extent", "image extents differ from the camera");
    }
    const fs::path png = root / "depth" / (stem + ".png");
    const fs::path raw = root / "depth" / (stem + ".raw");
    if (fs::exists(png)) {
      f.depth = read_depth_png(png.string());
      if (f.depth.width != f.camera.width || f.depth.height != f.camera.height) {
        throw FormatError(png.string(), "extent", "depth extents differ from the camera");
      }
    } else if (fs::exists(raw)) {
      f.depth = read_depth_raw(raw.string(), f.camera.width, f.camera.height);
    } else {
      throw FormatError(png.string(), "depth", "missing depth map");
    }
    PointCloud pc = back_project(f);
    out.emplace_back(std::move(f), std::move(pc));
  }
  return out;
}

SceneData load_scene_dir(const std::string& dir) {
  SceneData out;
  out.name = fs::path(dir).filename().string();
  if (out.name.empty()) out.name = fs::path(dir).parent_path().filename().string();
  for (auto& [frame, pc] : load_rgbd_frames(dir)) {
    out.frames.push_back(std::move(frame));
    out.cloud.points.insert(out.cloud.points.end(), pc.points.begin(), pc.points.end());
  }
  const fs::path cloud = fs::path(dir) / "cloud.ply";
  if (fs::exists(cloud)) out.cloud = read_ply_cloud(cloud.string());
  if (out.cloud.points.empty()) {
    throw FormatError(dir, "cloud", "scene has no valid depth and no cloud.ply");
  }
  return out;
}

std::vector<SceneData> load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw FormatError(dir, "<dir>", "not a directory");
  if (fs::is_directory(root / "frames")) return {load_scene_dir(dir)};
  std::vector<fs::path> scenes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::is_directory(e.path() / "frames")) {
      scenes.push_back(e.path());
    }
  }
  if (scenes.empty()) throw FormatError(dir, "frames", "no scene directories found");
  std::sort(scenes.begin(), scenes.end());
  std::vector<SceneData> out;
  for (const auto& s : scenes) out.push_back(load_scene_dir(s.string()));
  return out;
}

}  // namespace g2s
