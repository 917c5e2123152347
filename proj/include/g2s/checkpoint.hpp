#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "g2s/adamw.hpp"
#include "g2s/config.hpp"
#include "g2s/gsplat.hpp"
#include "g2s/nn.hpp"

namespace g2s {

inline constexpr char kCheckpointMagic[8] = {'G', '2', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Header: magic, u32 version, u64 config length, config text. Body: u64
/// blob count, then per blob u32 name length, name, u32 rank, u64 dims,
/// float32 values. All integers and floats little-endian.
struct Checkpoint {
  KeyValueFile config;
  std::vector<Blob> blobs;
  std::string source = "<checkpoint>";

  const Blob* find(const std::string& name) const;

  void add(const std::string& name, const Tensor& t);
  void add_gaussians(std::size_t index, const std::string& scene,
                     const GaussianSet& gs);

  /// Indices of stored Gaussian sets, ascending.
  std::vector<std::size_t> gaussian_indices() const;
  GaussianSet gaussians(std::size_t index) const;
  std::string gaussian_scene(std::size_t index) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

/// Copies blobs into same-named parameters. Throws FormatError naming the
/// parameter when one is missing or has a different shape.
void load_parameters(const Checkpoint& ckpt, const std::vector<NamedTensor>& params);

}  // namespace g2s
