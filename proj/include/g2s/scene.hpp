#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "g2s/camera.hpp"
#include "g2s/config.hpp"
#include "g2s/image.hpp"
#include "g2s/pointcloud.hpp"

namespace g2s {

/// Axis-aligned box, or an axis-aligned rectangle when exactly one axis has
/// lo == hi.
struct Primitive {
  enum class Kind { kBox, kPlane };

  Kind kind = Kind::kBox;
  Vec3 lo{0.0, 0.0, 0.0};
  Vec3 hi{1.0, 1.0, 1.0};
  Vec3 albedo{0.8, 0.8, 0.8};

  double area() const;
  /// Normal axis of a plane; -1 for boxes.
  int plane_axis() const;

  bool operator==(const Primitive&) const = default;
};

/// Scene description plus the camera rig used to synthesize its views.
/// World z points up and the room spans [0, room] on each axis.
struct SceneSpec {
  Vec3 room{4.0, 3.0, 2.5};
  std::vector<Primitive> primitives;
  /// Extra boxes placed on the floor from `seed`.
  std::size_t random_boxes = 0;
  /// Adds the floor and four walls.
  bool walls = false;
  std::uint64_t seed = 0;

  std::size_t views = 4;
  std::size_t width = 64;
  std::size_t height = 64;
  double focal = 42.0;
  std::size_t points = 2048;

  static SceneSpec from_config(const KeyValueFile& kv);
  static SceneSpec load(const std::string& path);
  KeyValueFile to_config() const;
};

struct Scene {
  Vec3 room{0.0, 0.0, 0.0};
  std::vector<Primitive> primitives;
  /// Unit vector toward the light.
  Vec3 light{0.0, 0.0, 1.0};
  std::uint64_t seed = 0;
};

inline constexpr double kAmbient = 0.3;

/// Throws std::invalid_argument when the scene spec yields no primitives or a
/// primitive leaves the room or has an albedo outside [0, 1].
Scene generate_scene(const SceneSpec& spec);

struct FrameRecord {
  Image image;
  DepthMap depth;
  CameraModel camera;

  void validate() const;
};

/// Raycasts every pixel center against the primitives; misses are black
/// with depth 0.
FrameRecord render_ground_truth(const Scene& scene, const CameraModel& cam,
                                std::size_t threads = 1);

/// Area-weighted uniform samples over all primitive surfaces, seeded from
/// the scene seed.
PointCloud sample_point_cloud(const Scene& scene, std::size_t count);

/// Cameras spaced around the room center, looking down at it.
std::vector<CameraModel> rig_cameras(const SceneSpec& spec);

struct SceneData {
  std::string name;
  std::vector<FrameRecord> frames;
  PointCloud cloud;
};

SceneData synthesize_scene(const SceneSpec& spec, std::size_t threads = 1);

/// Layout: frames/NNNN.ppm, depth/NNNN.png, cams/NNNN.txt, cloud.ply.
void write_scene_dir(const std::string& dir, const SceneData& scene);

/// Frames of one scene directory, each with its back-projected depth cloud.
/// Images may be .ppm or .png; depth may be a 16-bit millimeter .png or a
/// headerless .raw of the camera extents.
std::vector<std::pair<FrameRecord, PointCloud>> load_rgbd_frames(
    const std::string& dir);

/// World points of all valid depth pixels.
PointCloud back_project(const FrameRecord& frame);

/// One scene directory; the cloud comes from cloud.ply when present and
/// from the merged back-projections otherwise.
SceneData load_scene_dir(const std::string& dir);

/// A scene directory, or a directory whose subdirectories are scenes
/// (sorted by name).
std::vector<SceneData> load_dataset(const std::string& dir);

}  // namespace g2s
