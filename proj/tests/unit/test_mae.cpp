#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "g2s/mae.hpp"
#include "g2s/ops.hpp"
#include "g2s/scene.hpp"
#include "oracles.hpp"

using namespace g2s;

namespace {

MAEConfig small_config() {
  MAEConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.branch_depth = 1;
  cfg.shared_depth = 1;
  cfg.mlp_ratio = 2;
  cfg.tokenizer_hidden = 8;
  cfg.num_points = 256;
  cfg.num_patches = 16;
  cfg.patch_k = 8;
  cfg.patch_px = 8;
  cfg.width = 32;
  cfg.height = 32;
  return cfg;
}

SceneData example_scene(const MAEConfig& cfg, std::uint64_t seed = 1) {
  SceneSpec spec;
  spec.walls = true;
  spec.random_boxes = 4;
  spec.seed = seed;
  spec.views = 1;
  spec.width = cfg.width;
  spec.height = cfg.height;
  spec.focal = 0.65 * static_cast<double>(cfg.width);
  spec.points = cfg.num_points;
  return synthesize_scene(spec);
}

bool any_nonzero(std::span<const double> v) {
  return std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; });
}

}  // namespace

TEST_CASE("config validation") {
  MAEConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 5;
  CHECK_THROWS(cfg.validate());
  cfg = MAEConfig{};
  cfg.mask_ratio = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = MAEConfig{};
  cfg.width = 60;
  CHECK_THROWS(cfg.validate());
  KeyValueFile kv;
  small_config().write_config(kv);
  CHECK(MAEConfig::from_config(kv) == small_config());
}

TEST_CASE("tokenize_points: shapes, collapse and permutation invariance") {
  const MAEConfig cfg;
  const DualBranchMAE model(cfg, 3);
  Rng rng(4);
  PointCloud pc;
  for (int i = 0; i < 2048; ++i)
    pc.points.push_back({rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 1)});
  auto patches = fps_knn_patches(pc, 64, 32);
  const auto tb = model.tokenize_points(patches);
  CHECK(tb.tokens.shape() == Shape{64, 96});
  CHECK(tb.positions.shape() == Shape{64, 96});

  // reversing member order inside every patch leaves tokens unchanged
  PatchSet rev = patches;
  for (std::size_t m = 0; m < 64; ++m)
    for (std::size_t j = 0; j < 32; ++j)
      for (int c = 0; c < 3; ++c)
        rev.local_coords[(m * 32 + j) * 3 + c] = patches.local_coords[(m * 32 + 31 - j) * 3 + c];
  const auto tr = model.tokenize_points(rev);
  for (std::size_t i = 0; i < tb.tokens.numel(); ++i) CHECK(tr.tokens[i] == tb.tokens[i]);

  // patches of coincident points collapse to the same token
  PatchSet flat = patches;
  std::fill(flat.local_coords.begin(), flat.local_coords.end(), 0.0);
  const auto tf = model.tokenize_points(flat);
  for (std::size_t m = 1; m < 64; ++m)
    for (std::size_t c = 0; c < 96; ++c) CHECK(tf.tokens[m * 96 + c] == tf.tokens[c]);
}

TEST_CASE("tokenize_image: token counts and bias-only tokens") {
  MAEConfig cfg = small_config();
  cfg.width = 352;
  cfg.height = 256;
  cfg.patch_px = 16;
  const DualBranchMAE big(cfg, 1);
  CHECK(big.tokenize_image(Tensor::zeros({256, 352, 3})).count() == 352);

  cfg.width = cfg.height = 32;
  const DualBranchMAE model(cfg, 1);
  const auto tb = model.tokenize_image(Tensor::zeros({32, 32, 3}));
  REQUIRE(tb.count() == 4);
  for (std::size_t t = 1; t < 4; ++t)
    for (std::size_t c = 0; c < cfg.dim; ++c)
      CHECK(tb.tokens[t * cfg.dim + c] == tb.tokens[c]);
  CHECK_THROWS_AS(model.tokenize_image(Tensor::zeros({30, 32, 3})), ShapeError);
  CHECK_THROWS_AS(model.tokenize_image(Tensor::zeros({64, 32, 3})), ShapeError);
}

TEST_CASE("patchify round trip and gradient") {
  Rng rng(5);
  Tensor img = Tensor::randn({8, 12, 3}, rng, 1.0, true);
  const Tensor rows = patchify(img, 4);
  CHECK(rows.shape() == Shape{6, 48});
  // row t holds patch (t / 3, t % 3) in raster order
  CHECK(rows[1 * 48 + (2 * 4 + 1) * 3 + 2] == img[((2) * 12 + 4 + 1) * 3 + 2]);
  const Tensor back = unpatchify(rows, 4, 12, 8);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);
  Tensor w = Tensor::randn({6, 48}, rng, 1.0);
  CHECK(oracle::gradcheck([&] { return sum(patchify(img, 4) * w); }, {img}, 1e-6) < 1e-5);
  Tensor r = Tensor::randn({6, 48}, rng, 1.0, true);
  Tensor w2 = Tensor::randn({8, 12, 3}, rng, 1.0);
  CHECK(oracle::gradcheck([&] { return sum(unpatchify(r, 4, 12, 8) * w2); }, {r}, 1e-6) < 1e-5);
}

TEST_CASE("attention and transformer blocks match finite differences") {
  Rng rng(6);
  ParameterStore store;
  const TransformerStack stack(store, "t", 2, 8, 2, 16, rng);
  Tensor x = Tensor::randn({5, 8}, rng, 1.0, true);
  Tensor w = Tensor::randn({5, 8}, rng, 1.0);
  std::vector<Tensor> leaves{x};
  for (const auto& p : store.all()) leaves.push_back(p.tensor);
  // key biases shift every score in a row equally, so their exact gradient
  // is zero and the floor absorbs the difference noise
  CHECK(oracle::gradcheck([&] { return sum(stack(x) * w); }, leaves, 1e-5, 1e-4) < 1e-5);
}

TEST_CASE("shared layers are permutation equivariant") {
  const MAEConfig cfg = small_config();
  const DualBranchMAE model(cfg, 7);
  Rng rng(8);
  const std::size_t n = 9;
  const Tensor x = Tensor::randn({n, cfg.dim}, rng, 1.0);
  std::vector<std::size_t> perm{4, 0, 8, 2, 7, 1, 3, 6, 5};
  const Tensor y = model.shared_forward(x);
  const Tensor yp = model.shared_forward(gather_rows(x, perm));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cfg.dim; ++c)
      CHECK(yp[i * cfg.dim + c] == doctest::Approx(y[perm[i] * cfg.dim + c]).epsilon(1e-12));
}

TEST_CASE("reconstruct_full_cloud") {
  Rng rng(9);
  PointCloud pc;
  for (int i = 0; i < 2048; ++i)
    pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  const auto patches = fps_knn_patches(pc, 64, 32);
  auto expect_union = [&](const Tensor& out) {
    REQUIRE(out.shape() == Shape{2048, 3});
    for (std::size_t m = 0; m < 64; ++m)
      for (std::size_t j = 0; j < 32; ++j)
        for (int c = 0; c < 3; ++c)
          CHECK(out[(m * 32 + j) * 3 + c] ==
                patches.centers[m][c] + patches.local_coords[(m * 32 + j) * 3 + c]);
  };
  expect_union(reconstruct_full_cloud(Tensor(), patches, std::vector<std::uint8_t>(64, 1)));

  std::vector<std::uint8_t> visible(64, 1);
  std::vector<double> truth;
  for (std::size_t m = 0; m < 64; m += 3) {
    visible[m] = 0;
    truth.insert(truth.end(), patches.local_coords.begin() + m * 96,
                 patches.local_coords.begin() + (m + 1) * 96);
  }
  const std::size_t masked = truth.size() / 96;
  expect_union(reconstruct_full_cloud(Tensor::from({masked * 32, 3}, truth), patches, visible));
  CHECK_THROWS_AS(reconstruct_full_cloud(Tensor::zeros({5, 3}), patches, visible), ShapeError);
}

TEST_CASE("stage1_forward: losses, identities and determinism") {
  const MAEConfig cfg = small_config();
  const DualBranchMAE model(cfg, 11);
  const auto scene = example_scene(cfg);
  const auto& f = scene.frames[0];
  const auto out = model.stage1_forward(scene.cloud, f.image, f.camera, 5);
  CHECK(std::isfinite(out.report.stage1));
  CHECK(out.report.point_rec > 0.0);
  CHECK(out.report.image_rec > 0.0);
  CHECK(out.report.stage1 > 0.0);
  CHECK(out.report.stage1 == out.report.point_rec + out.report.image_rec + out.report.cross_rec);
  CHECK(out.total.item() == out.report.stage1);
  CHECK(out.masked_points.size() == mask_count(0.6, 16));
  CHECK(out.recon_points.shape() == Shape{16 * 8, 3});
  CHECK(out.recon_image.shape() == Shape{32, 32, 3});
  CHECK(out.pred_local.shape() == Shape{out.masked_points.size() * 8, 3});
  for (std::size_t m : out.masked_points)
    if (out.alignment[m] != kInvalidPatch)
      CHECK(out.masks.image_visible[out.alignment[m]] == 1);

  const auto again = model.stage1_forward(scene.cloud, f.image, f.camera, 5);
  CHECK(again.report.stage1 == out.report.stage1);
  CHECK(model.stage1_forward(scene.cloud, f.image, f.camera, 6).masks.point_visible !=
        out.masks.point_visible);

  // visible patches of the reconstruction come from the input
  for (std::size_t t = 0; t < 16; ++t) {
    if (!out.masks.image_visible[t]) continue;
    const std::size_t r0 = (t / 4) * 8, c0 = (t % 4) * 8;
    CHECK(out.recon_image[((r0 + 3) * 32 + c0 + 5) * 3 + 1] == f.image.at(c0 + 5, r0 + 3, 1));
  }
  CHECK_THROWS_AS(model.stage1_forward(scene.cloud, Image(16, 16), f.camera, 5), ShapeError);
}

TEST_CASE("stage1_forward: empty masks give zero losses") {
  MAEConfig cfg = small_config();
  cfg.mask_ratio = 0.0;
  const DualBranchMAE model(cfg, 12);
  const auto scene = example_scene(cfg);
  const auto out = model.stage1_forward(scene.cloud, scene.frames[0].image,
                                        scene.frames[0].camera, 1);
  CHECK(out.report.point_rec == 0.0);
  CHECK(out.report.image_rec == 0.0);
  CHECK(out.report.cross_rec == 0.0);
  CHECK(out.report.stage1 == 0.0);
  CHECK(out.masked_points.empty());
}

TEST_CASE("stage1 gradients reach every tokenizer parameter") {
  const MAEConfig cfg = small_config();
  DualBranchMAE model(cfg, 13);
  const auto scene = example_scene(cfg, 2);
  const auto out = model.stage1_forward(scene.cloud, scene.frames[0].image,
                                        scene.frames[0].camera, 3);
  out.total.backward();
  for (const char* prefix : {"point.embed", "point.pos", "image.embed", "image.pos"}) {
    const auto params = model.store().with_prefix(prefix);
    REQUIRE_FALSE(params.empty());
    for (const auto& p : params) {
      INFO(p.name);
      REQUIRE(p.tensor.has_grad());
      CHECK(any_nonzero(p.tensor.grad()));
    }
  }
}

TEST_CASE("cross-modal targets carry no gradient") {
  const MAEConfig cfg = small_config();
  DualBranchMAE model(cfg, 14);
  const auto scene = example_scene(cfg, 3);
  const auto& f = scene.frames[0];
  const LossTerms cross_only{.point = false, .image = false, .cross = true};
  const auto out = model.stage1_forward(scene.cloud, f.image, f.camera, 4, cross_only);
  REQUIRE(out.cross_pred.defined());
  CHECK_FALSE(out.cross_target.requires_grad());
  CHECK(out.report.stage1 == out.report.cross_rec);
  out.total.backward();
  const auto encoder = model.store().with_prefix("image.encoder");
  std::vector<std::vector<double>> full;
  for (const auto& p : encoder) full.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());

  // The same gradient through the prediction alone: d/dpred of the MSE held
  // as a constant and contracted with the prediction.
  model.store().zero_grad();
  const auto again = model.stage1_forward(scene.cloud, f.image, f.camera, 4, cross_only);
  std::vector<double> g(again.cross_pred.numel());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = 2.0 * (again.cross_pred[i] - again.cross_target[i]) / static_cast<double>(g.size());
  sum(again.cross_pred * Tensor::from(again.cross_pred.shape(), g)).backward();
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    INFO(encoder[i].name);
    const auto grad = encoder[i].tensor.grad();
    for (std::size_t j = 0; j < grad.size(); ++j)
      CHECK(grad[j] == doctest::Approx(full[i][j]).epsilon(1e-9).scale(1e-12));
  }
}
