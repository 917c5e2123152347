#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "g2s/checkpoint.hpp"
#include "g2s/config.hpp"
#include "g2s/gsplat.hpp"
#include "g2s/mae.hpp"
#include "g2s/report.hpp"
#include "g2s/scene.hpp"

namespace g2s {

struct TrainConfig {
  int stage = 1;
  /// 0 picks the stage default: 50 for stage 1, 1 for stage 2.
  std::size_t epochs = 0;
  /// 0 freezes the network.
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::size_t batch_size = 1;
  double fraction = 1.0;
  std::size_t gs_iters = 500;
  double lambda_ssim = 0.2;
  double gamma = 0.01;
  double lambda = 0.2;
  double alpha = 1.0;
  double beta = 1.0;
  std::uint64_t seed = 0;
  /// Extra checkpoint every K epochs; 0 writes only the final one.
  std::size_t checkpoint_every = 0;
  /// Stops after this many optimizer steps; 0 runs every epoch.
  std::size_t max_steps = 0;
  /// Redraw masks and the input view at every step instead of fixing them
  /// per example.
  bool resample_masks = false;
  std::size_t threads = 1;
  MAEConfig mae;
  FitOptions fit;

  std::size_t effective_epochs() const;
  /// Throws std::invalid_argument on out-of-range settings.
  void validate() const;

  static TrainConfig from_config(const KeyValueFile& kv);
  static TrainConfig load(const std::string& path);
  KeyValueFile to_config() const;
};

/// Raised when a stage-1 loss turns non-finite. The parameters from before
/// the failing step are saved to `checkpoint()` when an output directory is
/// configured.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::uint64_t step, std::string checkpoint);
  std::uint64_t step() const { return step_; }
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::uint64_t step_;
  std::string checkpoint_;
};

struct TrainHooks {
  /// Receives one JSON line per logged record.
  std::ostream* metrics = nullptr;
  /// Called after every optimizer step.
  std::function<void(const LossReport&)> on_step;
  /// Directory for checkpoints; empty disables writing.
  std::string out_dir;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossReport> reports;
  std::vector<std::string> skipped;  // stage 2 scenes whose fit diverged
};

/// Prefix of the seeded shuffle of [0, n): ceil(fraction * n) indices, at
/// least one.
std::vector<std::size_t> select_examples(std::size_t n, double fraction, std::uint64_t seed);

/// Starts from a fresh network, or from `init` when given.
TrainResult train_stage1(const std::vector<SceneData>& data, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}, const Checkpoint* init = nullptr);

/// Starts from the stage-1 network in `stage1`; the model shape comes from
/// the checkpoint.
TrainResult train_stage2(const std::vector<SceneData>& data, const TrainConfig& cfg,
                         const Checkpoint& stage1, const TrainHooks& hooks = {});

/// Rebuilds the network stored in a checkpoint.
DualBranchMAE load_model(const Checkpoint& ckpt);

struct SceneMetrics {
  std::string name;
  double psnr = 0.0;
  double chamfer = 0.0;
};

struct EvalResult {
  std::vector<SceneMetrics> scenes;
  double mean_psnr = 0.0;
  double mean_chamfer = 0.0;

  std::string to_json() const;
};

/// PSNR of Gaussian renders against every view, and Chamfer between the
/// reconstructed and input clouds. Stored Gaussians are matched to scenes
/// by name; unmatched scenes are fitted from the reconstruction.
EvalResult evaluate(const Checkpoint& ckpt, const std::vector<SceneData>& data);

struct SceneReconstruction {
  PointCloud recon;
  GaussianSet gaussians;
  std::vector<Image> renders;  // one per frame
  bool stored = false;         // Gaussians came from the checkpoint
};

/// P_rec for scene `index`, plus Gaussians stored for it in the checkpoint
/// (or fitted from P_rec) and their render at every frame.
SceneReconstruction reconstruct_scene(const Checkpoint& ckpt, const std::vector<SceneData>& data,
                                      std::size_t index);

/// Camera-aligned views of a scene as fitting targets.
std::vector<GaussianView> scene_views(const SceneData& scene);

}  // namespace g2s
