#include "g2s/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "g2s/error.hpp"
#include "g2s/ops.hpp"
#include "json.hpp"

namespace g2s {

namespace fs = std::filesystem;

std::size_t TrainConfig::effective_epochs() const {
  if (epochs != 0) return epochs;
  return stage == 2 ? 1 : 50;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("TrainConfig: " + what);
  };
  if (stage != 1 && stage != 2) fail("stage must be 1 or 2");
  if (!(lr >= 0.0)) fail("lr must be non-negative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0)) fail("fraction must lie in (0, 1]");
  if (!(lambda_ssim >= 0.0) || !(gamma >= 0.0)) fail("lambda_ssim and gamma must be non-negative");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) fail("alpha and beta must be non-negative");
  if (threads == 0) fail("threads must be positive");
  mae.validate();
}

namespace {

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys{
      "stage", "epochs", "lr", "weight_decay", "batch_size", "fraction", "gs_iters",
      "lambda_ssim", "gamma", "lambda", "alpha", "beta", "seed", "checkpoint_every",
      "max_steps", "resample_masks", "threads", "data", "out", "init",
      "fit.lr_mu", "fit.lr_quat", "fit.lr_scale", "fit.lr_color", "fit.lr_opacity"};
  return keys;
}

}  // namespace

TrainConfig TrainConfig::from_config(const KeyValueFile& kv) {
  for (const auto& [k, v] : kv.entries()) {
    if (train_keys().count(k) || k.starts_with("mae.") || k.starts_with("gs.")) continue;
    throw FormatError(kv.source(), k, "unknown key");
  }
  TrainConfig c;
  const auto stage = kv.get_u64("stage", 1);
  c.stage = stage > 2 ? 0 : static_cast<int>(stage);
  c.epochs = kv.get_size("epochs", c.epochs);
  c.lr = kv.get_double("lr", c.lr);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.batch_size = kv.get_size("batch_size", c.batch_size);
  c.fraction = kv.get_double("fraction", c.fraction);
  c.gs_iters = kv.get_size("gs_iters", c.gs_iters);
  c.lambda_ssim = kv.get_double("lambda_ssim", c.lambda_ssim);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.alpha = kv.get_double("alpha", c.alpha);
  c.beta = kv.get_double("beta", c.beta);
  c.seed = kv.get_u64("seed", c.seed);
  c.checkpoint_every = kv.get_size("checkpoint_every", c.checkpoint_every);
  c.max_steps = kv.get_size("max_steps", c.max_steps);
  c.resample_masks = kv.get_bool("resample_masks", c.resample_masks);
  c.threads = kv.get_size("threads", c.threads);
  c.mae = MAEConfig::from_config(kv);
  c.fit.lr_mu = kv.get_double("fit.lr_mu", c.fit.lr_mu);
  c.fit.lr_quat = kv.get_double("fit.lr_quat", c.fit.lr_quat);
  c.fit.lr_scale = kv.get_double("fit.lr_scale", c.fit.lr_scale);
  c.fit.lr_color = kv.get_double("fit.lr_color", c.fit.lr_color);
  c.fit.lr_opacity = kv.get_double("fit.lr_opacity", c.fit.lr_opacity);
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  return from_config(KeyValueFile::load(path));
}

KeyValueFile TrainConfig::to_config() const {
  KeyValueFile kv;
  kv.set("stage", std::to_string(stage));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lr", real(lr));
  kv.set("weight_decay", real(weight_decay));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("fraction", real(fraction));
  kv.set("gs_iters", std::to_string(gs_iters));
  kv.set("lambda_ssim", real(lambda_ssim));
  kv.set("gamma", real(gamma));
  kv.set("lambda", real(lambda));
  kv.set("alpha", real(alpha));
  kv.set("beta", real(beta));
  kv.set("seed", std::to_string(seed));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("max_steps", std::to_string(max_steps));
  kv.set("resample_masks", resample_masks ? "true" : "false");
  kv.set("threads", std::to_string(threads));
  mae.write_config(kv);
  kv.set("fit.lr_mu", real(fit.lr_mu));
  kv.set("fit.lr_quat", real(fit.lr_quat));
  kv.set("fit.lr_scale", real(fit.lr_scale));
  kv.set("fit.lr_color", real(fit.lr_color));
  kv.set("fit.lr_opacity", real(fit.lr_opacity));
  return kv;
}

TrainingDiverged::TrainingDiverged(std::uint64_t step, std::string checkpoint)
    : std::runtime_error("training diverged: non-finite loss at step " +
                         std::to_string(step) +
                         (checkpoint.empty() ? std::string()
                                             : "; last good checkpoint " + checkpoint)),
      step_(step),
      checkpoint_(std::move(checkpoint)) {}

std::vector<std::size_t> select_examples(std::size_t n, double fraction,
                                         std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("select_examples: no examples");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("select_examples: fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "examples"));
  for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  order.resize(std::clamp<std::size_t>(keep, 1, n));
  return order;
}

std::vector<GaussianView> scene_views(const SceneData& scene) {
  std::vector<GaussianView> views;
  for (const auto& f : scene.frames) views.push_back({f.camera, f.image});
  return views;
}

DualBranchMAE load_model(const Checkpoint& ckpt) {
  DualBranchMAE model(MAEConfig::from_config(ckpt.config), 0);
  load_parameters(ckpt, model.store().all());
  return model;
}

namespace {

struct Sample {
  std::size_t scene;
  std::size_t view;
  std::uint64_t mask_seed;
};

Sample draw_sample(const TrainConfig& cfg, const std::vector<SceneData>& data,
                   std::size_t scene, std::uint64_t draw) {
  // fixed per example unless masks are resampled per draw
  const std::uint64_t key = cfg.resample_masks ? draw : scene;
  const std::size_t views = data[scene].frames.size();
  return {scene, static_cast<std::size_t>(derive_seed(cfg.seed, "view", key) % views),
          derive_seed(cfg.seed, "mask", key)};
}

Checkpoint make_checkpoint(const DualBranchMAE& model, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.config = cfg.to_config();
  model.config().write_config(ck.config);
  for (const auto& p : model.store().all()) ck.add(p.name, p.tensor);
  return ck;
}

void emit(const TrainHooks& hooks, const std::string& line) {
  if (hooks.metrics) *hooks.metrics << line << '\n' << std::flush;
}

std::string out_path(const TrainHooks& hooks, const std::string& file) {
  return (fs::path(hooks.out_dir) / file).string();
}

void check_data(const std::vector<SceneData>& data, const MAEConfig& mae) {
  if (data.empty()) throw std::invalid_argument("training needs at least one scene");
  for (const auto& s : data) {
    if (s.frames.empty()) throw std::invalid_argument("scene " + s.name + " has no frames");
    if (s.cloud.empty()) throw std::invalid_argument("scene " + s.name + " has no cloud");
    for (const auto& f : s.frames)
      if (f.camera.width != mae.width || f.camera.height != mae.height) {
        throw ShapeError("train", {{f.camera.height, f.camera.width}, {mae.height, mae.width}},
                         "frames of scene " + s.name + " differ from the model extents");
      }
  }
}

struct FitOutcome {
  GaussianSet gs;
  double image_loss = 0.0;
  double psnr = 0.0;
};

FitOutcome fit_scene(const GaussianSet& init, const std::vector<GaussianView>& views,
                     const TrainConfig& cfg) {
  FitOptions opts = cfg.fit;
  opts.iters = cfg.gs_iters;
  opts.lambda_ssim = cfg.lambda_ssim;
  opts.gamma = cfg.gamma;
  opts.render.threads = cfg.threads;
  FitOutcome out;
  out.gs = cfg.gs_iters > 0 ? optimize_gaussians(init, views, opts) : init.clone(false);
  NoGradGuard guard;
  for (const auto& v : views) {
    const Tensor rendered = rasterize(out.gs, v.camera, opts.render);
    const Tensor target = v.image.to_tensor();
    out.image_loss += gs_image_loss(rendered, target, cfg.lambda).item();
    out.psnr += psnr(rendered, target);
  }
  out.image_loss /= static_cast<double>(views.size());
  out.psnr /= static_cast<double>(views.size());
  return out;
}

class Loop {
 public:
  Loop(const std::vector<SceneData>& data, const TrainConfig& cfg, DualBranchMAE& model,
       const TrainHooks& hooks)
      : data_(data), cfg_(cfg), model_(model), hooks_(hooks),
        opt_(model.store().all(), AdamWOptions{.lr = cfg.lr, .weight_decay = cfg.weight_decay}) {}

  TrainResult run() {
    const auto examples = select_examples(data_.size(), cfg_.fraction, cfg_.seed);
    const std::size_t epochs = cfg_.effective_epochs();
    std::uint64_t draw = 0;
    for (std::size_t epoch = 0; epoch < epochs && !done(); ++epoch) {
      auto order = examples;
      Rng rng(derive_seed(cfg_.seed, "epoch", epoch));
      for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
      for (std::size_t b = 0; b < order.size() && !done(); b += cfg_.batch_size) {
        std::vector<Sample> batch;
        for (std::size_t j = b; j < std::min(order.size(), b + cfg_.batch_size); ++j) {
          batch.push_back(draw_sample(cfg_, data_, order[j], draw++));
        }
        step(batch);
      }
      if (cfg_.checkpoint_every && (epoch + 1) % cfg_.checkpoint_every == 0 &&
          !hooks_.out_dir.empty()) {
        checkpoint().save(out_path(hooks_, "stage" + std::to_string(cfg_.stage) + "_epoch" +
                                               std::to_string(epoch + 1) + ".ckpt"));
      }
    }
    result_.checkpoint = checkpoint();
    if (!hooks_.out_dir.empty()) {
      result_.checkpoint.save(out_path(hooks_, "stage" + std::to_string(cfg_.stage) + ".ckpt"));
    }
    return std::move(result_);
  }

 private:
  bool done() const { return cfg_.max_steps != 0 && steps_ >= cfg_.max_steps; }

  Checkpoint checkpoint() const {
    Checkpoint ck = make_checkpoint(model_, cfg_);
    for (const auto& [scene, gs] : fitted_) ck.add_gaussians(scene, data_[scene].name, gs);
    return ck;
  }

  [[noreturn]] void diverged(std::uint64_t step) {
    std::string path;
    if (!hooks_.out_dir.empty()) {
      path = out_path(hooks_, "stage" + std::to_string(cfg_.stage) + "_last_good.ckpt");
      checkpoint().save(path);
    }
    throw TrainingDiverged(step, path);
  }

  void step(const std::vector<Sample>& batch) {
    const std::uint64_t step_index = steps_ + 1;
    opt_.zero_grad();
    std::vector<Tensor> totals;
    LossReport rep;
    rep.step = step_index;
    for (const auto& s : batch) {
      const SceneData& scene = data_[s.scene];
      const FrameRecord& frame = scene.frames[s.view];
      Stage1Output out =
          model_.stage1_forward(scene.cloud, frame.image, frame.camera, s.mask_seed);
      if (!std::isfinite(out.report.stage1)) diverged(step_index);
      Tensor total = out.total;
      double gs_image = 0.0, gs_point = 0.0, quality = 0.0;
      if (cfg_.stage == 2) {
        const auto views = scene_views(scene);
        const Tensor p_rec = out.recon_points;
        const GaussianSet init =
            GaussianSet::from_points(PointCloud::from_tensor(p_rec.detach()), false);
        FitOutcome fit;
        try {
          fit = fit_scene(init, views, cfg_);
        } catch (const GaussianDivergence& e) {
          nlohmann::ordered_json j;
          j["step"] = step_index;
          j["skipped"] = scene.name;
          j["iteration"] = e.iteration();
          emit(hooks_, j.dump());
          result_.skipped.push_back(scene.name);
          continue;
        }
        // the fitted centers are a fixed target for the reconstruction
        const Tensor l_point = gs_point_loss(fit.gs.mu.detach(), p_rec);
        gs_point = l_point.item();
        gs_image = fit.image_loss;
        quality = fit.psnr;
        total = total + (Tensor::scalar(gs_image) * cfg_.alpha + l_point * cfg_.beta);
        fitted_[s.scene] = fit.gs;
      } else {
        quality = psnr(out.recon_image, frame.image.to_tensor());
      }
      totals.push_back(total);
      rep.point_rec += out.report.point_rec;
      rep.image_rec += out.report.image_rec;
      rep.cross_rec += out.report.cross_rec;
      rep.gs_image += gs_image;
      rep.gs_point += gs_point;
      rep.psnr += quality;
    }
    if (totals.empty()) return;
    const double inv = 1.0 / static_cast<double>(totals.size());
    rep.point_rec *= inv;
    rep.image_rec *= inv;
    rep.cross_rec *= inv;
    rep.gs_image *= inv;
    rep.gs_point *= inv;
    rep.psnr *= inv;
    rep.combine(cfg_.stage == 2 ? cfg_.alpha : 0.0, cfg_.stage == 2 ? cfg_.beta : 0.0);
    if (!std::isfinite(rep.stage2)) diverged(step_index);
    Tensor loss = totals[0];
    for (std::size_t i = 1; i < totals.size(); ++i) loss = loss + totals[i];
    (loss * inv).backward();
    opt_.step();
    ++steps_;
    result_.reports.push_back(rep);
    emit(hooks_, rep.to_json());
    if (hooks_.on_step) hooks_.on_step(rep);
  }

  const std::vector<SceneData>& data_;
  const TrainConfig& cfg_;
  DualBranchMAE& model_;
  const TrainHooks& hooks_;
  AdamW opt_;
  std::uint64_t steps_ = 0;
  std::map<std::size_t, GaussianSet> fitted_;
  TrainResult result_;
};

}  // namespace

TrainResult train_stage1(const std::vector<SceneData>& data, const TrainConfig& cfg,
                         const TrainHooks& hooks, const Checkpoint* init) {
  TrainConfig c = cfg;
  c.stage = 1;
  if (init) c.mae = MAEConfig::from_config(init->config);
  c.validate();
  check_data(data, c.mae);
  if (!hooks.out_dir.empty()) fs::create_directories(hooks.out_dir);
  DualBranchMAE model = init ? load_model(*init)
                             : DualBranchMAE(c.mae, derive_seed(c.seed, "model"));
  return Loop(data, c, model, hooks).run();
}

TrainResult train_stage2(const std::vector<SceneData>& data, const TrainConfig& cfg,
                         const Checkpoint& stage1, const TrainHooks& hooks) {
  TrainConfig c = cfg;
  c.stage = 2;
  c.mae = MAEConfig::from_config(stage1.config);
  c.validate();
  check_data(data, c.mae);
  if (!hooks.out_dir.empty()) fs::create_directories(hooks.out_dir);
  DualBranchMAE model = load_model(stage1);
  return Loop(data, c, model, hooks).run();
}

namespace {

nlohmann::ordered_json finite_or_text(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["mean_psnr"] = finite_or_text(mean_psnr);
  j["mean_chamfer"] = finite_or_text(mean_chamfer);
  auto& arr = j["scenes"] = nlohmann::ordered_json::array();
  for (const auto& s : scenes) {
    nlohmann::ordered_json e;
    e["name"] = s.name;
    e["psnr"] = finite_or_text(s.psnr);
    e["chamfer"] = finite_or_text(s.chamfer);
    arr.push_back(e);
  }
  return j.dump();
}

namespace {

SceneReconstruction reconstruct(const DualBranchMAE& model, const TrainConfig& cfg,
                                const Checkpoint& ckpt, const std::vector<SceneData>& data,
                                std::size_t index) {
  const SceneData& scene = data.at(index);
  const Sample s = draw_sample(cfg, data, index, index);
  Stage1Output out;
  {
    NoGradGuard guard;
    out = model.stage1_forward(scene.cloud, scene.frames[s.view].image,
                               scene.frames[s.view].camera, s.mask_seed);
  }
  SceneReconstruction r{PointCloud::from_tensor(out.recon_points), {}, {}, false};
  const auto views = scene_views(scene);
  for (std::size_t i : ckpt.gaussian_indices()) {
    if (ckpt.gaussian_scene(i) != scene.name) continue;
    r.gaussians = ckpt.gaussians(i);
    r.stored = true;
    break;
  }
  if (!r.stored) r.gaussians = fit_scene(GaussianSet::from_points(r.recon, false), views, cfg).gs;
  for (const auto& v : views) r.renders.push_back(Image::from_tensor(rasterize(r.gaussians, v.camera)));
  return r;
}

}  // namespace

SceneReconstruction reconstruct_scene(const Checkpoint& ckpt, const std::vector<SceneData>& data,
                                      std::size_t index) {
  const TrainConfig cfg = TrainConfig::from_config(ckpt.config);
  const DualBranchMAE model = load_model(ckpt);
  check_data(data, model.config());
  return reconstruct(model, cfg, ckpt, data, index);
}

EvalResult evaluate(const Checkpoint& ckpt, const std::vector<SceneData>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: no scenes");
  const TrainConfig cfg = TrainConfig::from_config(ckpt.config);
  const DualBranchMAE model = load_model(ckpt);
  check_data(data, model.config());
  EvalResult res;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = reconstruct(model, cfg, ckpt, data, i);
    SceneMetrics m;
    m.name = data[i].name;
    m.chamfer = chamfer(r.recon, data[i].cloud);
    for (std::size_t v = 0; v < r.renders.size(); ++v) m.psnr += psnr(r.renders[v], data[i].frames[v].image);
    m.psnr /= static_cast<double>(r.renders.size());
    res.scenes.push_back(m);
    res.mean_psnr += m.psnr;
    res.mean_chamfer += m.chamfer;
  }
  res.mean_psnr /= static_cast<double>(res.scenes.size());
  res.mean_chamfer /= static_cast<double>(res.scenes.size());
  return res;
}

}  // namespace g2s
