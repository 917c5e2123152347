// g2s: command-line front end for pre-training, rendering and checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "g2s/checkpoint.hpp"
#include "g2s/error.hpp"
#include "g2s/gradcheck.hpp"
#include "g2s/ply.hpp"
#include "g2s/scene.hpp"
#include "g2s/trainer.hpp"

namespace fs = std::filesystem;
using namespace g2s;

namespace {

std::string frame_name(const std::string& prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%04zu%s", prefix.c_str(), i, ext);
  return buf;
}

struct PretrainArgs {
  int stage = 1;
  std::string config;
  std::string data;
  std::string out;
  std::string init;
  std::optional<double> fraction;
  std::optional<std::uint64_t> seed;
};

int pretrain(const PretrainArgs& a) {
  KeyValueFile kv = KeyValueFile::load(a.config);
  TrainConfig cfg = TrainConfig::from_config(kv);
  cfg.stage = a.stage;
  if (a.fraction) cfg.fraction = *a.fraction;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  const std::string data_dir = !a.data.empty() ? a.data : kv.get("data", "");
  if (data_dir.empty()) throw std::invalid_argument("pretrain: no --data and no 'data' key");
  const std::string out_dir = !a.out.empty() ? a.out : kv.get("out", "runs/stage" + std::to_string(a.stage));
  const auto data = load_dataset(data_dir);
  fs::create_directories(out_dir);

  // the resolved settings, so a run can be repeated from its output directory
  {
    KeyValueFile resolved = cfg.to_config();
    resolved.set("data", data_dir);
    std::ofstream(fs::path(out_dir) / "config.txt") << resolved.to_text();
  }
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
  TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.out_dir = out_dir;
  hooks.on_step = [](const LossReport& r) {
    if (r.step % 10 == 0) std::cerr << r.to_json() << "\n";
  };

  TrainResult res;
  if (a.stage == 1) {
    res = train_stage1(data, cfg, hooks);
  } else {
    const std::string init = !a.init.empty() ? a.init : kv.get("init", "");
    if (init.empty()) throw std::invalid_argument("pretrain: stage 2 needs --init or an 'init' key");
    res = train_stage2(data, cfg, Checkpoint::load(init), hooks);
  }
  std::cout << "steps " << res.reports.size() << ", skipped " << res.skipped.size()
            << ", checkpoint " << (fs::path(out_dir) / ("stage" + std::to_string(a.stage) + ".ckpt")).string()
            << "\n";
  return 0;
}

int render(const std::string& ckpt_path, const std::string& scene_path, const std::string& out) {
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  std::vector<SceneData> data;
  if (fs::is_directory(scene_path)) {
    data.push_back(load_scene_dir(scene_path));
  } else {
    data.push_back(synthesize_scene(SceneSpec::load(scene_path)));
  }
  const auto r = reconstruct_scene(ckpt, data, 0);
  fs::create_directories(out);
  for (std::size_t i = 0; i < r.renders.size(); ++i) {
    write_ppm((fs::path(out) / frame_name("render_", i, ".ppm")).string(), r.renders[i]);
    write_ppm((fs::path(out) / frame_name("target_", i, ".ppm")).string(), data[0].frames[i].image);
  }
  write_ply_cloud((fs::path(out) / "recon.ply").string(), r.recon);
  write_gaussian_ply((fs::path(out) / "gaussians.ply").string(), r.gaussians);
  std::cout << r.renders.size() << " views rendered to " << out
            << (r.stored ? " from stored Gaussians\n" : " from a fresh fit\n");
  return 0;
}

int gradcheck(const std::string& module, std::size_t instances, std::uint64_t seed) {
  GradcheckOptions opts;
  opts.instances = instances;
  opts.seed = seed;
  const std::vector<std::string> modules =
      module == "all" ? gradcheck_modules() : std::vector<std::string>{module};
  bool ok = true;
  for (const auto& m : modules) {
    const auto res = run_gradcheck(m, opts);
    for (const auto& c : res.cases) {
      const bool pass = c.max_rel_error < opts.tolerance && c.compared > 0;
      std::printf("%-8s %-14s %s  max_rel=%.3e  compared=%zu excluded=%zu instances=%zu\n",
                  m.c_str(), c.name.c_str(), pass ? "ok  " : "FAIL", c.max_rel_error, c.compared,
                  c.excluded, c.instances);
    }
    std::printf("%-8s %s in %.2f s\n", m.c_str(), res.passed(opts.tolerance) ? "passed" : "FAILED",
                res.seconds);
    ok = ok && res.passed(opts.tolerance);
  }
  return ok ? 0 : 1;
}

int evaluate_cmd(const std::string& ckpt, const std::string& data) {
  std::cout << evaluate(Checkpoint::load(ckpt), load_dataset(data)).to_json() << "\n";
  return 0;
}

int export_ply(const std::string& ckpt_path, const std::string& out, std::optional<std::size_t> index) {
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const auto ids = ckpt.gaussian_indices();
  if (ids.empty()) throw std::invalid_argument("export-ply: checkpoint holds no Gaussians");
  const std::size_t id = index.value_or(ids.front());
  write_gaussian_ply(out, ckpt.gaussians(id));
  std::cout << "wrote Gaussians of scene '" << ckpt.gaussian_scene(id) << "' to " << out << "\n";
  return 0;
}

int synth(const std::string& spec_path, const std::string& out, std::size_t count,
          std::size_t threads) {
  SceneSpec spec = SceneSpec::load(spec_path);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.seed = spec.seed + i;
    const SceneData scene = synthesize_scene(s, threads);
    const auto dir = count == 1 && !fs::exists(out) ? fs::path(out) : fs::path(out) / scene.name;
    write_scene_dir(dir.string(), scene);
    std::cout << dir.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage point/image pre-training with Gaussian splatting supervision"};
  app.require_subcommand(1);

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "Run stage-1 or stage-2 pre-training");
  pre->add_option("--stage", pa.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  pre->add_option("--config", pa.config, "key = value training config")->required()->check(CLI::ExistingFile);
  pre->add_option("--data", pa.data, "scene directory or directory of scenes");
  pre->add_option("--fraction", pa.fraction, "share of the dataset to use, in (0, 1]");
  pre->add_option("--seed", pa.seed, "root seed");
  pre->add_option("--out", pa.out, "output directory");
  pre->add_option("--init", pa.init, "stage-1 checkpoint for stage 2");

  std::string ckpt, scene, out, data, module = "all";
  std::size_t instances = 20, count = 1, threads = 1;
  std::uint64_t seed = 0;
  std::optional<std::size_t> index;

  auto* ren = app.add_subcommand("render", "Render the Gaussians of one scene");
  ren->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ren->add_option("--scene", scene, "scene spec file or scene directory")->required()->check(CLI::ExistingPath);
  ren->add_option("--out", out)->required();

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gc->add_option("--module", module, "autodiff, chamfer, gsplat, losses or all")
      ->check(CLI::IsMember({"all", "autodiff", "chamfer", "gsplat", "losses"}));
  gc->add_option("--instances", instances, "random instances per case");
  gc->add_option("--seed", seed);

  auto* ev = app.add_subcommand("evaluate", "PSNR and Chamfer of a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data)->required()->check(CLI::ExistingDirectory);

  auto* ex = app.add_subcommand("export-ply", "Write stored Gaussians as PLY");
  ex->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ex->add_option("--out", out)->required();
  ex->add_option("--index", index, "Gaussian set index (default: first)");

  auto* sy = app.add_subcommand("synth", "Generate synthetic RGB-D scenes");
  sy->add_option("--spec", scene, "scene spec file")->required()->check(CLI::ExistingFile);
  sy->add_option("--out", out)->required();
  sy->add_option("--count", count, "scenes, with seeds spec.seed + i");
  sy->add_option("--threads", threads);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pre) return pretrain(pa);
    if (*ren) return render(ckpt, scene, out);
    if (*gc) return gradcheck(module, instances, seed);
    if (*ev) return evaluate_cmd(ckpt, data);
    if (*ex) return export_ply(ckpt, out, index);
    if (*sy) return synth(scene, out, count, threads);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
