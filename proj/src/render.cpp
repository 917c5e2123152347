#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "parallel.hpp"
#include "splat_detail.hpp"

namespace g2s {

namespace {

struct Contribution {
  std::uint32_t slot;  // position in the tile's depth-ordered list
  bool clamped;
  double w;       // Gaussian falloff at the pixel
  double a;       // effective alpha
  double t_before;
};

struct Tile {
  std::size_t x0, y0, x1, y1;          // pixel bounds, half-open
  std::vector<std::uint32_t> splats;   // indices into RenderState::proj
  std::vector<Contribution> contrib;   // all pixels, row-major within tile
  std::vector<std::size_t> pixel_end;  // end offset into contrib per pixel
};

struct RenderState {
  std::vector<detail::ProjectedGaussian> proj;  // visible, depth-sorted
  std::vector<Tile> tiles;
  std::size_t width = 0, height = 0;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void composite_tile(const RenderState& st, Tile& tile, bool early_exit,
                    std::vector<double>& image, std::vector<double>& trans,
                    std::vector<double>& weights) {
  tile.contrib.clear();
  tile.pixel_end.clear();
  for (std::size_t y = tile.y0; y < tile.y1; ++y) {
    for (std::size_t x = tile.x0; x < tile.x1; ++x) {
      double t = 1.0, wsum = 0.0;
      double c[3] = {0.0, 0.0, 0.0};
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      for (std::uint32_t slot = 0; slot < tile.splats.size(); ++slot) {
        const Splat2D& s = st.proj[tile.splats[slot]].splat;
        const double dx = px - s.mean2d[0], dy = py - s.mean2d[1];
        const double power = -0.5 * (s.conic[0] * dx * dx +
                                     2.0 * s.conic[1] * dx * dy +
                                     s.conic[2] * dy * dy);
        const double w = std::exp(power);
        const double raw = s.alpha * w;
        if (raw < kAlphaMin) continue;
        const bool clamped = raw > kAlphaClamp;
        const double a = clamped ? kAlphaClamp : raw;
        tile.contrib.push_back({slot, clamped, w, a, t});
        for (int ch = 0; ch < 3; ++ch) c[ch] += s.color[ch] * a * t;
        wsum += a * t;
        t *= 1.0 - a;
        if (early_exit && t < kTransmittanceMin) break;
      }
      tile.pixel_end.push_back(tile.contrib.size());
      const std::size_t p = y * st.width + x;
      for (int ch = 0; ch < 3; ++ch) image[p * 3 + ch] = c[ch];
      trans[p] = t;
      weights[p] = wsum;
    }
  }
}

void backprop_tile(const RenderState& st, const Tile& tile,
                   const std::vector<double>& g,
                   std::vector<detail::SplatGrad>& out) {
  out.assign(tile.splats.size(), detail::SplatGrad{});
  std::size_t begin = 0, pix = 0;
  for (std::size_t y = tile.y0; y < tile.y1; ++y) {
    for (std::size_t x = tile.x0; x < tile.x1; ++x, ++pix) {
      const std::size_t end = tile.pixel_end[pix];
      const std::size_t p = y * st.width + x;
      const double gp[3] = {g[p * 3], g[p * 3 + 1], g[p * 3 + 2]};
      double behind[3] = {0.0, 0.0, 0.0};
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      for (std::size_t k = end; k-- > begin;) {
        const Contribution& ct = tile.contrib[k];
        const Splat2D& s = st.proj[tile.splats[ct.slot]].splat;
        auto& sg = out[ct.slot];
        double d_a = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          sg.color[ch] += ct.a * ct.t_before * gp[ch];
          d_a += gp[ch] * (s.color[ch] * ct.t_before - behind[ch] / (1.0 - ct.a));
          behind[ch] += s.color[ch] * ct.a * ct.t_before;
        }
        if (ct.clamped) continue;
        sg.alpha += d_a * ct.w;
        const double d_w = d_a * s.alpha;
        const double dx = px - s.mean2d[0], dy = py - s.mean2d[1];
        const double gw = d_w * ct.w;
        // w = exp(-d^T Q d / 2), d = pixel - mean
        sg.mean2d[0] += gw * (s.conic[0] * dx + s.conic[1] * dy);
        sg.mean2d[1] += gw * (s.conic[1] * dx + s.conic[2] * dy);
        sg.conic[0] += -0.5 * gw * dx * dx;
        sg.conic[1] += -0.5 * gw * dx * dy;
        sg.conic[2] += -0.5 * gw * dy * dy;
      }
      begin = end;
    }
  }
}

}  // namespace

GaussianParams gaussian_at(const GaussianSet& gs, std::size_t i) {
  GaussianParams g;
  auto mu = gs.mu.data();
  auto q = gs.quat.data();
  auto ls = gs.log_scale.data();
  auto cl = gs.color_logit.data();
  for (int k = 0; k < 3; ++k) {
    g.mu[k] = mu[i * 3 + k];
    g.log_scale[k] = ls[i * 3 + k];
    g.color[k] = sigmoid(cl[i * 3 + k]);
  }
  for (int k = 0; k < 4; ++k) g.quat[k] = q[i * 4 + k];
  g.alpha = sigmoid(gs.opacity_logit.data()[i]);
  return g;
}

RenderOutput render(const GaussianSet& gs, const CameraModel& cam,
                    const RenderOptions& opts) {
  gs.validate();
  if (gs.size() == 0) throw std::invalid_argument("render: no Gaussians");
  if (opts.tile == 0) throw std::invalid_argument("render: tile size is zero");
  cam.validate();
  auto st = std::make_shared<RenderState>();
  st->width = cam.width;
  st->height = cam.height;

  for (std::size_t i = 0; i < gs.size(); ++i) {
    detail::ProjectedGaussian pg;
    if (detail::project_detail(gaussian_at(gs, i), cam, i, pg))
      st->proj.push_back(pg);
  }
  std::sort(st->proj.begin(), st->proj.end(), [](const auto& a, const auto& b) {
    if (a.splat.depth != b.splat.depth) return a.splat.depth < b.splat.depth;
    return a.splat.index < b.splat.index;
  });

  const std::size_t ts = opts.tile;
  const std::size_t tiles_x = (cam.width + ts - 1) / ts;
  const std::size_t tiles_y = (cam.height + ts - 1) / ts;
  st->tiles.resize(tiles_x * tiles_y);
  for (std::size_t ty = 0; ty < tiles_y; ++ty)
    for (std::size_t tx = 0; tx < tiles_x; ++tx) {
      Tile& t = st->tiles[ty * tiles_x + tx];
      t.x0 = tx * ts;
      t.y0 = ty * ts;
      t.x1 = std::min(cam.width, t.x0 + ts);
      t.y1 = std::min(cam.height, t.y0 + ts);
    }
  const double wmax = static_cast<double>(cam.width) - 1.0;
  const double hmax = static_cast<double>(cam.height) - 1.0;
  for (std::uint32_t k = 0; k < st->proj.size(); ++k) {
    const Splat2D& s = st->proj[k].splat;
    const double x0 = std::max(0.0, std::ceil(s.mean2d[0] - s.radius));
    const double x1 = std::min(wmax, std::floor(s.mean2d[0] + s.radius));
    const double y0 = std::max(0.0, std::ceil(s.mean2d[1] - s.radius));
    const double y1 = std::min(hmax, std::floor(s.mean2d[1] + s.radius));
    if (x0 > x1 || y0 > y1) continue;
    const auto tx0 = static_cast<std::size_t>(x0) / ts;
    const auto tx1 = static_cast<std::size_t>(x1) / ts;
    const auto ty0 = static_cast<std::size_t>(y0) / ts;
    const auto ty1 = static_cast<std::size_t>(y1) / ts;
    for (std::size_t ty = ty0; ty <= ty1; ++ty)
      for (std::size_t tx = tx0; tx <= tx1; ++tx)
        st->tiles[ty * tiles_x + tx].splats.push_back(k);
  }

  std::vector<double> image(cam.width * cam.height * 3, 0.0);
  RenderOutput out;
  out.transmittance.assign(cam.width * cam.height, 1.0);
  out.weight_sum.assign(cam.width * cam.height, 0.0);
  detail::parallel_for(st->tiles.size(), opts.threads, [&](std::size_t t) {
    composite_tile(*st, st->tiles[t], opts.early_exit, image, out.transmittance,
                   out.weight_sum);
  });

  const std::size_t threads = opts.threads;
  auto cam_copy = std::make_shared<CameraModel>(cam);
  out.image = make_result(
      "rasterize", {cam.height, cam.width, 3}, std::move(image),
      {gs.mu, gs.quat, gs.log_scale, gs.color_logit, gs.opacity_logit},
      [st, cam_copy, threads](const std::vector<double>& g,
                                 const std::vector<double>&, GradSink& sink) {
        std::vector<std::vector<detail::SplatGrad>> per_tile(st->tiles.size());
        detail::parallel_for(st->tiles.size(), threads, [&](std::size_t t) {
          backprop_tile(*st, st->tiles[t], g, per_tile[t]);
        });
        // ordered reduction keeps results independent of the thread count
        std::vector<detail::SplatGrad> acc(st->proj.size());
        for (std::size_t t = 0; t < st->tiles.size(); ++t) {
          const auto& tile = st->tiles[t];
          for (std::size_t s = 0; s < tile.splats.size(); ++s) {
            auto& dst = acc[tile.splats[s]];
            const auto& src = per_tile[t][s];
            for (int k = 0; k < 2; ++k) dst.mean2d[k] += src.mean2d[k];
            for (int k = 0; k < 3; ++k) {
              dst.conic[k] += src.conic[k];
              dst.color[k] += src.color[k];
            }
            dst.alpha += src.alpha;
          }
        }
        auto* g_mu = sink[0];
        auto* g_quat = sink[1];
        auto* g_ls = sink[2];
        auto* g_col = sink[3];
        auto* g_op = sink[4];
        for (std::size_t k = 0; k < st->proj.size(); ++k) {
          const auto& pg = st->proj[k];
          const std::size_t i = pg.splat.index;
          const auto& sg = acc[k];
          if (g_mu || g_quat || g_ls) {
            const auto pgrad = detail::project_vjp(pg, *cam_copy, sg);
            for (int c = 0; c < 3; ++c) {
              if (g_mu) (*g_mu)[i * 3 + c] += pgrad.mu[c];
              if (g_ls) (*g_ls)[i * 3 + c] += pgrad.log_scale[c];
            }
            if (g_quat)
              for (int c = 0; c < 4; ++c) (*g_quat)[i * 4 + c] += pgrad.quat[c];
          }
          if (g_col)
            for (int c = 0; c < 3; ++c) {
              const double col = pg.splat.color[c];
              (*g_col)[i * 3 + c] += sg.color[c] * col * (1.0 - col);
            }
          if (g_op) {
            const double a = pg.splat.alpha;
            (*g_op)[i] += sg.alpha * a * (1.0 - a);
          }
        }
      });
  return out;
}

}  // namespace g2s
