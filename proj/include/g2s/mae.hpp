#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "g2s/camera.hpp"
#include "g2s/config.hpp"
#include "g2s/image.hpp"
#include "g2s/nn.hpp"
#include "g2s/pointcloud.hpp"
#include "g2s/report.hpp"

namespace g2s {

struct MAEConfig {
  std::size_t dim = 96;
  std::size_t heads = 4;
  std::size_t branch_depth = 2;
  std::size_t shared_depth = 2;
  std::size_t shared_decoder_depth = 1;
  std::size_t decoder_depth = 1;
  std::size_t mlp_ratio = 4;
  std::size_t tokenizer_hidden = 64;
  double mask_ratio = 0.6;
  std::size_t num_points = 2048;
  std::size_t num_patches = 64;  // M
  std::size_t patch_k = 32;      // k
  std::size_t patch_px = 16;
  std::size_t width = 64;
  std::size_t height = 64;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  std::size_t image_patches() const {
    return (width / patch_px) * (height / patch_px);
  }
  PatchGrid grid() const { return {patch_px, height / patch_px, width / patch_px}; }

  /// Reads the `mae.*` keys; absent keys keep their defaults.
  static MAEConfig from_config(const KeyValueFile& kv);
  void write_config(KeyValueFile& kv) const;
  bool operator==(const MAEConfig&) const = default;
};

enum class Modality { kPoint, kImage };

struct TokenBatch {
  Tensor tokens;     // count x C
  Tensor positions;  // count x C positional embeddings
  Modality modality = Modality::kPoint;
  std::vector<std::uint8_t> visible;

  std::size_t count() const { return tokens.defined() ? tokens.size(0) : 0; }
};

/// Selects which stage-1 terms enter the total.
struct LossTerms {
  bool point = true;
  bool image = true;
  bool cross = true;
};

struct Stage1Output {
  PatchSet patches;
  std::vector<std::size_t> alignment;
  MaskPair masks;
  std::vector<std::size_t> masked_points;  // patch indices
  std::vector<std::size_t> masked_images;
  /// (masked * k) x 3 predicted local offsets.
  Tensor pred_local;
  /// (M * k) x 3 world points: visible patches from the input, masked
  /// patches from the decoder.
  Tensor recon_points;
  /// H x W x 3: visible patches from the input, masked from the decoder.
  Tensor recon_image;
  Tensor cross_pred;
  Tensor cross_target;  // detached
  Tensor point_loss, image_loss, cross_loss, total;
  LossReport report;
};

/// Point and image masked autoencoders joined by shared fusion layers, with
/// a point-to-image feature prediction head.
class DualBranchMAE {
 public:
  DualBranchMAE(const MAEConfig& cfg, std::uint64_t seed);

  const MAEConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  TokenBatch tokenize_points(const PatchSet& patches) const;
  /// Throws ShapeError unless the extents are multiples of patch_px.
  TokenBatch tokenize_image(const Tensor& image) const;

  /// Shared encoder then shared decoder over concatenated tokens.
  Tensor shared_forward(const Tensor& tokens) const;

  /// The cloud is downsampled to cfg.num_points first when its size
  /// differs. `seed` drives the masks.
  Stage1Output stage1_forward(const PointCloud& pc, const Image& img,
                              const CameraModel& cam, std::uint64_t seed,
                              const LossTerms& terms = {}) const;

 private:
  MAEConfig cfg_;
  ParameterStore store_;
  Mlp point_embed_;  // shared per-point MLP before max pooling
  Mlp point_pos_;
  Linear image_embed_;
  Tensor image_pos_;
  Tensor point_modality_, image_modality_;
  Tensor point_mask_token_, image_mask_token_;
  TransformerStack point_encoder_, image_encoder_;
  TransformerStack shared_encoder_, shared_decoder_;
  TransformerStack point_decoder_, image_decoder_;
  Linear point_head_, image_head_;
  Mlp cross_head_;
};

/// H x W x 3 image to (T x patch_px*patch_px*3) rows in raster patch order.
Tensor patchify(const Tensor& image, std::size_t patch_px);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t patch_px,
                  std::size_t width, std::size_t height);

/// World points (M*k x 3): input patches where visible, centers plus
/// `pred_local` rows (masked patches in ascending order) elsewhere.
Tensor reconstruct_full_cloud(const Tensor& pred_local, const PatchSet& patches,
                              const std::vector<std::uint8_t>& visible);

}  // namespace g2s
