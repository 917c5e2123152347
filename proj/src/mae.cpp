#include "g2s/mae.hpp"

#include <cstdio>
#include <stdexcept>

#include "g2s/error.hpp"
#include "g2s/ops.hpp"

namespace g2s {

void MAEConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("MAEConfig: " + what);
  };
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
  if (patch_px == 0 || width % patch_px != 0 || height % patch_px != 0) {
    fail("image extents must be multiples of patch_px");
  }
  if (width == 0 || height == 0) fail("image extents must be positive");
  if (num_patches == 0 || patch_k == 0) fail("M and k must be positive");
  if (num_patches > num_points || patch_k > num_points) fail("M and k cannot exceed num_points");
  if (mlp_ratio == 0 || tokenizer_hidden == 0) fail("hidden widths must be positive");
}

MAEConfig MAEConfig::from_config(const KeyValueFile& kv) {
  MAEConfig c;
  c.dim = kv.get_size("mae.dim", c.dim);
  c.heads = kv.get_size("mae.heads", c.heads);
  c.branch_depth = kv.get_size("mae.branch_depth", c.branch_depth);
  c.shared_depth = kv.get_size("mae.shared_depth", c.shared_depth);
  c.shared_decoder_depth = kv.get_size("mae.shared_decoder_depth", c.shared_decoder_depth);
  c.decoder_depth = kv.get_size("mae.decoder_depth", c.decoder_depth);
  c.mlp_ratio = kv.get_size("mae.mlp_ratio", c.mlp_ratio);
  c.tokenizer_hidden = kv.get_size("mae.tokenizer_hidden", c.tokenizer_hidden);
  c.mask_ratio = kv.get_double("mae.mask_ratio", c.mask_ratio);
  c.num_points = kv.get_size("mae.num_points", c.num_points);
  c.num_patches = kv.get_size("mae.num_patches", c.num_patches);
  c.patch_k = kv.get_size("mae.patch_k", c.patch_k);
  c.patch_px = kv.get_size("mae.patch_px", c.patch_px);
  c.width = kv.get_size("mae.width", c.width);
  c.height = kv.get_size("mae.height", c.height);
  return c;
}

void MAEConfig::write_config(KeyValueFile& kv) const {
  kv.set("mae.dim", std::to_string(dim));
  kv.set("mae.heads", std::to_string(heads));
  kv.set("mae.branch_depth", std::to_string(branch_depth));
  kv.set("mae.shared_depth", std::to_string(shared_depth));
  kv.set("mae.shared_decoder_depth", std::to_string(shared_decoder_depth));
  kv.set("mae.decoder_depth", std::to_string(decoder_depth));
  kv.set("mae.mlp_ratio", std::to_string(mlp_ratio));
  kv.set("mae.tokenizer_hidden", std::to_string(tokenizer_hidden));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", mask_ratio);
  kv.set("mae.mask_ratio", buf);
  kv.set("mae.num_points", std::to_string(num_points));
  kv.set("mae.num_patches", std::to_string(num_patches));
  kv.set("mae.patch_k", std::to_string(patch_k));
  kv.set("mae.patch_px", std::to_string(patch_px));
  kv.set("mae.width", std::to_string(width));
  kv.set("mae.height", std::to_string(height));
}

namespace {

// Flat index map between H x W x 3 and T x (P*P*3) raster patch order.
std::vector<std::size_t> patch_index(std::size_t p, std::size_t width,
                                     std::size_t height) {
  const std::size_t cols = width / p;
  std::vector<std::size_t> idx(width * height * 3);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t t = (y / p) * cols + x / p;
        const std::size_t within = ((y % p) * p + x % p) * 3 + c;
        idx[(y * width + x) * 3 + c] = t * p * p * 3 + within;
      }
  return idx;
}

// out[dst[i]] = in[i]
Tensor permute_flat(const char* op, const Tensor& a, Shape shape,
                    std::vector<std::size_t> dst, bool inverse) {
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (inverse) {
      out[i] = x[dst[i]];
    } else {
      out[dst[i]] = x[i];
    }
  }
  auto map = std::make_shared<std::vector<std::size_t>>(std::move(dst));
  return make_result(op, std::move(shape), std::move(out), {a},
                     [map, inverse](const std::vector<double>& g,
                                    const std::vector<double>&, GradSink& sink) {
                       auto* ga = sink[0];
                       if (!ga) return;
                       for (std::size_t i = 0; i < map->size(); ++i) {
                         if (inverse) {
                           (*ga)[(*map)[i]] += g[i];
                         } else {
                           (*ga)[i] += g[(*map)[i]];
                         }
                       }
                     });
}

std::vector<std::size_t> where(const std::vector<std::uint8_t>& flags,
                               std::uint8_t value) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i] == value) out.push_back(i);
  return out;
}

// Copies of a 1-D parameter stacked into n rows.
Tensor repeat_row(const Tensor& row, std::size_t n) {
  return gather_rows(reshape(row, {1, row.numel()}), std::vector<std::size_t>(n, 0));
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.dim() != 3 || image.size(2) != 3 || p == 0 || image.size(0) % p != 0 ||
      image.size(1) % p != 0) {
    throw ShapeError("patchify", {image.shape(), {p}},
                     "expects H x W x 3 with extents divisible by the patch size");
  }
  const std::size_t h = image.size(0), w = image.size(1);
  return permute_flat("patchify", image, {(h / p) * (w / p), p * p * 3},
                      patch_index(p, w, h), false);
}

Tensor unpatchify(const Tensor& patches, std::size_t p, std::size_t width,
                  std::size_t height) {
  if (p == 0 || width % p != 0 || height % p != 0 || patches.dim() != 2 ||
      patches.size(0) != (width / p) * (height / p) || patches.size(1) != p * p * 3) {
    throw ShapeError("unpatchify", {patches.shape(), {height, width, p}});
  }
  return permute_flat("unpatchify", patches, {height, width, 3},
                      patch_index(p, width, height), true);
}

Tensor reconstruct_full_cloud(const Tensor& pred_local, const PatchSet& patches,
                              const std::vector<std::uint8_t>& visible) {
  const std::size_t m_count = patches.count(), k = patches.k;
  if (visible.size() != m_count) {
    throw ShapeError("reconstruct_full_cloud", {{visible.size()}, {m_count}},
                     "mask length differs from the patch count");
  }
  const auto masked = where(visible, 0);
  std::vector<double> base(m_count * k * 3, 0.0);
  std::vector<double> centers;
  std::vector<std::size_t> rows;
  for (std::size_t m = 0; m < m_count; ++m)
    for (std::size_t j = 0; j < k; ++j)
      for (int c = 0; c < 3; ++c) {
        if (visible[m]) {
          base[(m * k + j) * 3 + c] =
              patches.centers[m][c] + patches.local_coords[(m * k + j) * 3 + c];
        }
      }
  const Tensor base_t = Tensor::from({m_count * k, 3}, std::move(base));
  if (masked.empty()) return base_t;
  if (!pred_local.defined() || pred_local.dim() != 2 ||
      pred_local.size(0) != masked.size() * k || pred_local.size(1) != 3) {
    throw ShapeError("reconstruct_full_cloud",
                     {pred_local.defined() ? pred_local.shape() : Shape{},
                      {masked.size() * k, 3}});
  }
  for (std::size_t m : masked)
    for (std::size_t j = 0; j < k; ++j) {
      rows.push_back(m * k + j);
      for (int c = 0; c < 3; ++c) centers.push_back(patches.centers[m][c]);
    }
  const Tensor center_t = Tensor::from({rows.size(), 3}, std::move(centers));
  return scatter_rows(pred_local + center_t, rows, m_count * k) + base_t;
}

DualBranchMAE::DualBranchMAE(const MAEConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "mae.init"));
  const std::size_t c = cfg_.dim, hidden = cfg_.dim * cfg_.mlp_ratio;
  const std::size_t pix = cfg_.patch_px * cfg_.patch_px * 3;
  point_embed_ = Mlp(store_, "point.embed", 3, cfg_.tokenizer_hidden, c, rng);
  point_pos_ = Mlp(store_, "point.pos", 3, c, c, rng);
  image_embed_ = Linear(store_, "image.embed", pix, c, rng);
  image_pos_ = store_.create("image.pos", {cfg_.image_patches(), c}, 0.02, rng);
  point_modality_ = store_.create("point.modality", {c}, 0.02, rng);
  image_modality_ = store_.create("image.modality", {c}, 0.02, rng);
  point_mask_token_ = store_.create("point.mask_token", {c}, 0.02, rng);
  image_mask_token_ = store_.create("image.mask_token", {c}, 0.02, rng);
  point_encoder_ = TransformerStack(store_, "point.encoder", cfg_.branch_depth, c,
                                    cfg_.heads, hidden, rng);
  image_encoder_ = TransformerStack(store_, "image.encoder", cfg_.branch_depth, c,
                                    cfg_.heads, hidden, rng);
  shared_encoder_ = TransformerStack(store_, "shared.encoder", cfg_.shared_depth, c,
                                     cfg_.heads, hidden, rng);
  shared_decoder_ = TransformerStack(store_, "shared.decoder", cfg_.shared_decoder_depth,
                                     c, cfg_.heads, hidden, rng);
  point_decoder_ = TransformerStack(store_, "point.decoder", cfg_.decoder_depth, c,
                                    cfg_.heads, hidden, rng);
  image_decoder_ = TransformerStack(store_, "image.decoder", cfg_.decoder_depth, c,
                                    cfg_.heads, hidden, rng);
  point_head_ = Linear(store_, "point.head", c, cfg_.patch_k * 3, rng);
  image_head_ = Linear(store_, "image.head", c, pix, rng);
  cross_head_ = Mlp(store_, "cross.head", c, c, c, rng);
}

TokenBatch DualBranchMAE::tokenize_points(const PatchSet& patches) const {
  const std::size_t m = patches.count(), k = patches.k;
  if (m == 0 || k == 0 || patches.local_coords.size() != m * k * 3) {
    throw ShapeError("tokenize_points", {{m, k}, {patches.local_coords.size()}});
  }
  const Tensor local = Tensor::from({m * k, 3}, patches.local_coords);
  const Tensor per_point = reshape(point_embed_(local), {m, k, cfg_.dim});
  std::vector<double> centers;
  centers.reserve(m * 3);
  for (const auto& p : patches.centers) centers.insert(centers.end(), p.begin(), p.end());
  TokenBatch out;
  out.tokens = max(per_point, 1);
  out.positions = point_pos_(Tensor::from({m, 3}, std::move(centers)));
  out.modality = Modality::kPoint;
  out.visible.assign(m, 1);
  return out;
}

TokenBatch DualBranchMAE::tokenize_image(const Tensor& image) const {
  const Tensor rows = patchify(image, cfg_.patch_px);
  if (rows.size(0) != cfg_.image_patches()) {
    throw ShapeError("tokenize_image", {image.shape(), {cfg_.height, cfg_.width, 3}},
                     "image extents differ from the model configuration");
  }
  TokenBatch out;
  out.tokens = image_embed_(rows);
  out.positions = image_pos_;
  out.modality = Modality::kImage;
  out.visible.assign(rows.size(0), 1);
  return out;
}

Tensor DualBranchMAE::shared_forward(const Tensor& tokens) const {
  return shared_decoder_(shared_encoder_(tokens));
}

Stage1Output DualBranchMAE::stage1_forward(const PointCloud& pc, const Image& img,
                                           const CameraModel& cam, std::uint64_t seed,
                                           const LossTerms& terms) const {
  if (img.width != cfg_.width || img.height != cfg_.height || cam.width != cfg_.width ||
      cam.height != cfg_.height) {
    throw ShapeError("stage1_forward",
                     {{img.height, img.width}, {cam.height, cam.width},
                      {cfg_.height, cfg_.width}},
                     "image and camera extents must match the model configuration");
  }
  pc.validate("stage1_forward");
  const PointCloud cloud = pc.size() == cfg_.num_points ? pc : downsample(pc, cfg_.num_points);
  const std::size_t k = cfg_.patch_k;
  const std::size_t num_m = cfg_.num_patches, num_t = cfg_.image_patches();

  Stage1Output out;
  out.patches = fps_knn_patches(cloud, num_m, k);
  out.alignment = align_patches(out.patches.centers, cam, cfg_.grid());
  out.masks = complementary_masks(out.alignment, num_m, num_t, cfg_.mask_ratio, seed);
  const auto vis_p = where(out.masks.point_visible, 1);
  const auto vis_i = where(out.masks.image_visible, 1);
  out.masked_points = where(out.masks.point_visible, 0);
  out.masked_images = where(out.masks.image_visible, 0);

  const Tensor image = img.to_tensor();
  const TokenBatch pt = tokenize_points(out.patches);
  const TokenBatch it = tokenize_image(image);

  const Tensor enc_p =
      point_encoder_(gather_rows(pt.tokens + pt.positions, vis_p) + point_modality_);
  const Tensor enc_i =
      image_encoder_(gather_rows(it.tokens + it.positions, vis_i) + image_modality_);
  const Tensor fused = shared_forward(concat({enc_p, enc_i}, 0));

  auto decoder_input = [&](const Tensor& vis_rows, const std::vector<std::size_t>& vis,
                           const std::vector<std::size_t>& masked, const Tensor& token,
                           const Tensor& positions, std::size_t n) {
    Tensor full = scatter_rows(vis_rows, vis, n) + positions;
    if (!masked.empty()) full = full + scatter_rows(repeat_row(token, masked.size()), masked, n);
    return full;
  };
  const Tensor dec_p = point_decoder_(
      decoder_input(slice(fused, 0, 0, vis_p.size()), vis_p, out.masked_points,
                    point_mask_token_, pt.positions, num_m));
  const Tensor dec_i = image_decoder_(
      decoder_input(slice(fused, 0, vis_p.size(), vis_i.size()), vis_i, out.masked_images,
                    image_mask_token_, it.positions, num_t));

  const Tensor zero = Tensor::scalar(0.0);
  out.point_loss = out.image_loss = out.cross_loss = zero;

  // point reconstruction in local coordinates
  if (!out.masked_points.empty()) {
    const std::size_t nm = out.masked_points.size();
    out.pred_local = reshape(point_head_(gather_rows(dec_p, out.masked_points)), {nm * k, 3});
    std::vector<double> target;
    target.reserve(nm * k * 3);
    for (std::size_t m : out.masked_points) {
      const auto first = out.patches.local_coords.begin() + static_cast<std::ptrdiff_t>(m * k * 3);
      target.insert(target.end(), first, first + static_cast<std::ptrdiff_t>(k * 3));
    }
    const Tensor target_t = Tensor::from({nm * k, 3}, std::move(target));
    if (terms.point) out.point_loss = mean(patch_chamfer(out.pred_local, target_t, k));
  }
  out.recon_points = reconstruct_full_cloud(out.pred_local, out.patches, out.masks.point_visible);

  // pixel reconstruction on raw [0, 1] values
  const Tensor pixel_rows = patchify(image, cfg_.patch_px);
  Tensor recon_rows;
  {
    std::vector<double> kept(pixel_rows.data().begin(), pixel_rows.data().end());
    const std::size_t width = pixel_rows.size(1);
    for (std::size_t t : out.masked_images)
      std::fill_n(kept.begin() + static_cast<std::ptrdiff_t>(t * width), width, 0.0);
    recon_rows = Tensor::from(pixel_rows.shape(), std::move(kept));
  }
  if (!out.masked_images.empty()) {
    const Tensor pred = image_head_(gather_rows(dec_i, out.masked_images));
    if (terms.image) {
      out.image_loss = mean(square(pred - gather_rows(pixel_rows, out.masked_images)));
    }
    recon_rows = recon_rows + scatter_rows(pred, out.masked_images, num_t);
  }
  out.recon_image = unpatchify(recon_rows, cfg_.patch_px, cfg_.width, cfg_.height);

  // masked point tokens predict the encoder features of their aligned,
  // visible image patches
  std::vector<std::size_t> vis_row(num_t, kInvalidPatch);
  for (std::size_t r = 0; r < vis_i.size(); ++r) vis_row[vis_i[r]] = r;
  std::vector<std::size_t> cross_src, cross_dst;
  for (std::size_t m : out.masked_points) {
    const std::size_t a = out.alignment[m];
    if (a == kInvalidPatch || vis_row[a] == kInvalidPatch) continue;
    cross_src.push_back(m);
    cross_dst.push_back(vis_row[a]);
  }
  if (!cross_src.empty()) {
    out.cross_pred = cross_head_(gather_rows(dec_p, cross_src));
    out.cross_target = gather_rows(enc_i, cross_dst).detach();
    if (terms.cross) out.cross_loss = mean(square(out.cross_pred - out.cross_target));
  }

  out.total = out.point_loss + out.image_loss + out.cross_loss;
  out.report.point_rec = out.point_loss.item();
  out.report.image_rec = out.image_loss.item();
  out.report.cross_rec = out.cross_loss.item();
  out.report.combine(0.0, 0.0);
  return out;
}

}  // namespace g2s
