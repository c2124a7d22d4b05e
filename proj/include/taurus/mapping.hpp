#pragma once

#include "estimator.hpp"

#include <algorithm>
#include <array>
#include <cstdint>

namespace taurus {

/// Cartesian x–z raster. Pixel (ix, iz) is centred at (x0 + ix·dx, z0 + iz·dz); storage is row-major in z.
struct GridSpec
{
  Index  nx = 0, nz = 0;
  double x0 = 0.0, z0 = 0.0;
  double dx = 0.0, dz = 0.0;

  /// nx × nz pixels tiling [−fov_x/2, fov_x/2] × [−fov_z/2, fov_z/2].
  static auto covering(double fov_x, double fov_z, Index nx, Index nz) -> GridSpec
  {
    if (nx < 1 || nz < 1 || !(fov_x > 0.0 && fov_z > 0.0)) { throw ValidationError("grid: bad shape or FOV"); }
    double const dx = fov_x / static_cast<double>(nx), dz = fov_z / static_cast<double>(nz);
    return {nx, nz, -0.5 * fov_x + 0.5 * dx, -0.5 * fov_z + 0.5 * dz, dx, dz};
  }

  auto size() const -> Index { return nx * nz; }
  auto index(Index ix, Index iz) const -> Index { return iz * nx + ix; }
  auto x(Index ix) const -> double { return x0 + static_cast<double>(ix) * dx; }
  auto z(Index iz) const -> double { return z0 + static_cast<double>(iz) * dz; }
  auto operator==(GridSpec const &) const -> bool = default;
};

struct MapSample
{
  Vec3   center;
  double tau;
  double weight;
};

inline constexpr double kMaskedTau = std::numeric_limits<double>::quiet_NaN();

struct TauMap
{
  GridSpec               grid;
  std::vector<double>    tau;  // s; masked pixels hold kMaskedTau
  std::vector<std::uint8_t> mask; // 1 = valid
  std::vector<MapSample> provenance;
  double                 sigma_x = 0.0, sigma_z = 0.0; // gridding kernel, m
  bool                   all_masked = false;

  auto valid(Index i) const -> bool { return mask[i] != 0; }
};

struct ImageGrid
{
  GridSpec            grid;
  std::vector<double> value;
  double              sigma_x = 0.0, sigma_z = 0.0;

  auto max() const -> double { return value.empty() ? 0.0 : *std::max_element(value.begin(), value.end()); }
};

/// Truncated Gaussian gridding kernel. Zero sigmas are derived from the sample layout.
struct KernelSpec
{
  double sigma_x = 0.0, sigma_z = 0.0; // m
  double scale = 1.0;                  // multiplies the (given or derived) widths
  double spacing_factor = 1.5;         // derived width = factor × median neighbour spacing
  double truncate = 3.0;               // in sigmas
  double floor_fraction = 0.01;        // pixels below this fraction of the peak total weight are masked
};

/// Per-axis median neighbour spacing: for each sample, the distance to the nearest other sample
/// lying predominantly along that axis. Handles raster lines (LLT), grids (PWT) and sweeps (2DTT).
inline auto neighbour_spacing(std::span<Vec3 const> pts) -> std::pair<double, double>
{
  auto axis = [&](bool along_x) {
    std::vector<Index> order(pts.size());
    for (size_t i = 0; i < pts.size(); i++) { order[i] = static_cast<Index>(i); }
    auto key = [&](Index i) { return along_x ? pts[i].x : pts[i].z; };
    auto other = [&](Index i) { return along_x ? pts[i].z : pts[i].x; };
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return key(a) < key(b); });
    std::vector<double> nn;
    for (size_t r = 0; r < order.size(); r++) {
      Index const i = order[r];
      double      best = std::numeric_limits<double>::infinity();
      for (int dir : {-1, 1}) {
        for (auto s = static_cast<std::ptrdiff_t>(r) + dir; s >= 0 && s < static_cast<std::ptrdiff_t>(order.size()); s += dir) {
          Index const  j = order[s];
          double const dk = std::abs(key(j) - key(i));
          if (dk > best) { break; }
          double const dother = std::abs(other(j) - other(i));
          if (dk > dother && dk > 0.0) { best = std::min(best, std::hypot(dk, dother)); }
        }
      }
      if (std::isfinite(best)) { nn.push_back(best); }
    }
    if (nn.empty()) { return 0.0; }
    std::nth_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2), nn.end());
    return nn[nn.size() / 2];
  };
  return {axis(true), axis(false)};
}

/// Resolves the kernel widths, falling back to the other axis (then the pixel size) when an axis
/// has no neighbours, e.g. a single line.
inline auto resolve_kernel(KernelSpec const &k, std::span<Vec3 const> pts, GridSpec const &g) -> std::pair<double, double>
{
  double sx = k.sigma_x, sz = k.sigma_z;
  if (sx <= 0.0 || sz <= 0.0) {
    auto [nx, nz] = neighbour_spacing(pts);
    if (nx <= 0.0) { nx = nz; }
    if (nz <= 0.0) { nz = nx; }
    if (sx <= 0.0) { sx = nx > 0.0 ? k.spacing_factor * nx : g.dx; }
    if (sz <= 0.0) { sz = nz > 0.0 ? k.spacing_factor * nz : g.dz; }
  }
  return {sx * k.scale, sz * k.scale};
}

namespace detail {

/// Adds weight·K into `acc` (and weight·value·K into `num` if given) over the kernel footprint.
inline void splat(GridSpec const &g, double sx, double sz, double trunc, double x, double z, double weight, double value,
                  std::vector<double> &acc, std::vector<double> *num, std::vector<double> &gx, std::vector<double> &gz)
{
  double const fx = (x - g.x0) / g.dx, fz = (z - g.z0) / g.dz;
  auto const   ix0 = std::max<Index>(0, static_cast<Index>(std::ceil(fx - trunc * sx / g.dx)));
  auto const   ix1 = std::min<Index>(g.nx - 1, static_cast<Index>(std::floor(fx + trunc * sx / g.dx)));
  auto const   iz0 = std::max<Index>(0, static_cast<Index>(std::ceil(fz - trunc * sz / g.dz)));
  auto const   iz1 = std::min<Index>(g.nz - 1, static_cast<Index>(std::floor(fz + trunc * sz / g.dz)));
  if (ix0 > ix1 || iz0 > iz1) { return; }
  gx.resize(static_cast<size_t>(ix1 - ix0 + 1));
  gz.resize(static_cast<size_t>(iz1 - iz0 + 1));
  for (Index i = ix0; i <= ix1; i++) {
    double const d = (g.x(i) - x) / sx;
    gx[i - ix0] = std::exp(-0.5 * d * d);
  }
  for (Index j = iz0; j <= iz1; j++) {
    double const d = (g.z(j) - z) / sz;
    gz[j - iz0] = std::exp(-0.5 * d * d);
  }
  for (Index j = iz0; j <= iz1; j++) {
    double const wz = weight * gz[j - iz0];
    double      *a = acc.data() + g.index(ix0, j);
    for (Index i = ix0; i <= ix1; i++) { a[i - ix0] += wz * gx[i - ix0]; }
    if (num) {
      double *b = num->data() + g.index(ix0, j);
      for (Index i = ix0; i <= ix1; i++) { b[i - ix0] += wz * value * gx[i - ix0]; }
    }
  }
}

} // namespace detail

/// Weight-normalised kernel gridding of scattered per-period estimates.
/// The default kernel is one quarter of the image kernel derived from the same centres.
inline auto estimates_to_map(std::vector<MapSample> const &samples, GridSpec const &grid, KernelSpec kernel = {.scale = 0.25})
  -> TauMap
{
  if (samples.empty()) { throw ValidationError("estimates_to_map: no estimates"); }
  if (grid.size() < 1) { throw ValidationError("estimates_to_map: empty grid"); }
  std::vector<Vec3> pts;
  for (auto const &s : samples) { pts.push_back(s.center); }
  auto const [sx, sz] = resolve_kernel(kernel, pts, grid);
  TauMap m;
  m.grid = grid;
  m.provenance = samples;
  m.sigma_x = sx;
  m.sigma_z = sz;
  std::vector<double> acc(static_cast<size_t>(grid.size()), 0.0), num(acc.size(), 0.0), gx, gz;
  for (auto const &s : samples) {
    if (!(s.weight > 0.0) || !std::isfinite(s.tau)) { continue; }
    detail::splat(grid, sx, sz, kernel.truncate, s.center.x, s.center.z, s.weight, s.tau, acc, &num, gx, gz);
  }
  double const peak = *std::max_element(acc.begin(), acc.end());
  m.tau.assign(acc.size(), kMaskedTau);
  m.mask.assign(acc.size(), 0);
  for (size_t i = 0; i < acc.size(); i++) {
    if (peak > 0.0 && acc[i] > 0.0 && acc[i] >= kernel.floor_fraction * peak) {
      m.tau[i] = num[i] / acc[i];
      m.mask[i] = 1;
    }
  }
  m.all_masked = std::none_of(m.mask.begin(), m.mask.end(), [](auto v) { return v != 0; });
  return m;
}

/// Simplified x-space reconstruction: |s|/|v| at each instantaneous FFP position, gridded with
/// the given kernel and normalised by the local kernel weight. Samples slower than
/// `min_speed_fraction` of the peak drive speed are skipped.
inline auto reconstruct_amplitude_image(SampledSignal const &s, TrajectorySpec const &spec, GridSpec const &grid,
                                        double sigma_x, double sigma_z, double min_speed_fraction = 0.2,
                                        double truncate = 3.0) -> ImageGrid
{
  check_signal(s, "reconstruct_amplitude_image");
  if (s.t0 < 0.0 || s.time(s.size() - 1) > spec.scan_time * (1 + 1e-9)) {
    throw ValidationError("reconstruct_amplitude_image: signal extends beyond the trajectory");
  }
  if (!(sigma_x > 0.0 && sigma_z > 0.0)) { throw ValidationError("reconstruct_amplitude_image: kernel widths must be positive"); }
  double const vmax = spec.drive_amplitude / std::abs(spec.gradient.z) * kTwoPi * spec.drive_frequency;
  ImageGrid    img{grid, std::vector<double>(static_cast<size_t>(grid.size()), 0.0), sigma_x, sigma_z};
  std::vector<double> acc(img.value.size(), 0.0), gx, gz;
  for (Index n = 0; n < s.size(); n++) {
    auto const   st = ffp_state(spec, std::min(spec.scan_time, s.time(n)));
    double const v = st.velocity.norm();
    if (v < min_speed_fraction * vmax) { continue; }
    detail::splat(grid, sigma_x, sigma_z, truncate, st.position.x, st.position.z, 1.0, std::abs(s.samples[n]) / v, acc,
                  &img.value, gx, gz);
  }
  double const peak = acc.empty() ? 0.0 : *std::max_element(acc.begin(), acc.end());
  for (size_t i = 0; i < acc.size(); i++) {
    img.value[i] = (peak > 0.0 && acc[i] >= 0.01 * peak) ? img.value[i] / acc[i] : 0.0;
  }
  return img;
}

/// Masks pixels whose image intensity is below threshold·max (boundary kept).
inline auto mask_map(TauMap m, ImageGrid const &img, double threshold = 0.10) -> TauMap
{
  if (!(m.grid == img.grid)) { throw ValidationError("mask_map: map and image rasters differ"); }
  double const peak = img.max();
  for (Index i = 0; i < m.grid.size(); i++) {
    if (!(peak > 0.0) || img.value[i] < threshold * peak) {
      m.mask[i] = 0;
      m.tau[i] = kMaskedTau;
    }
  }
  m.all_masked = std::none_of(m.mask.begin(), m.mask.end(), [](auto v) { return v != 0; });
  return m;
}

/// Bilinear resampling of a map onto another raster. Output pixels touching a masked input are masked.
inline auto resize_bilinear(TauMap const &m, GridSpec const &to) -> TauMap
{
  if (m.grid == to) { return m; }
  TauMap out = m;
  out.grid = to;
  out.tau.assign(static_cast<size_t>(to.size()), kMaskedTau);
  out.mask.assign(static_cast<size_t>(to.size()), 0);
  auto const &g = m.grid;
  for (Index j = 0; j < to.nz; j++) {
    double const fz = std::clamp((to.z(j) - g.z0) / g.dz, 0.0, static_cast<double>(g.nz - 1));
    auto const   j0 = std::min<Index>(static_cast<Index>(fz), std::max<Index>(0, g.nz - 2));
    double const tz = g.nz > 1 ? fz - static_cast<double>(j0) : 0.0;
    for (Index i = 0; i < to.nx; i++) {
      double const fx = std::clamp((to.x(i) - g.x0) / g.dx, 0.0, static_cast<double>(g.nx - 1));
      auto const   i0 = std::min<Index>(static_cast<Index>(fx), std::max<Index>(0, g.nx - 2));
      double const tx = g.nx > 1 ? fx - static_cast<double>(i0) : 0.0;
      double       v = 0.0;
      bool         ok = true;
      for (Index dj = 0; dj < std::min<Index>(2, g.nz); dj++) {
        for (Index di = 0; di < std::min<Index>(2, g.nx); di++) {
          double const w = (di ? tx : 1.0 - tx) * (dj ? tz : 1.0 - tz);
          if (w == 0.0) { continue; }
          Index const k = g.index(i0 + di, j0 + dj);
          if (!m.valid(k)) {
            ok = false;
          } else {
            v += w * m.tau[k];
          }
        }
      }
      if (ok) {
        out.tau[to.index(i, j)] = v;
        out.mask[to.index(i, j)] = 1;
      }
    }
  }
  out.all_masked = std::none_of(out.mask.begin(), out.mask.end(), [](auto v) { return v != 0; });
  return out;
}

struct RGB
{
  double r = 0.0, g = 0.0, b = 0.0;
};

/// Hue ramp from blue (tau_min) to red (tau_max) at full saturation and value.
struct Colormap
{
  double tau_min = 2e-6, tau_max = 4e-6;

  auto degenerate() const -> bool { return !(tau_max > tau_min); }

  auto operator()(double tau) const -> RGB
  {
    double const u = degenerate() ? 0.5 : std::clamp((tau - tau_min) / (tau_max - tau_min), 0.0, 1.0);
    return hsv(240.0 * (1.0 - u), 1.0, 1.0);
  }

  static auto hsv(double h, double s, double v) -> RGB
  {
    double const c = v * s;
    double const hp = std::fmod(h, 360.0) / 60.0;
    double const x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    RGB          rgb;
    if (hp < 1) {
      rgb = {c, x, 0};
    } else if (hp < 2) {
      rgb = {x, c, 0};
    } else if (hp < 3) {
      rgb = {0, c, x};
    } else if (hp < 4) {
      rgb = {0, x, c};
    } else if (hp < 5) {
      rgb = {x, 0, c};
    } else {
      rgb = {c, 0, x};
    }
    double const m = v - c;
    return {rgb.r + m, rgb.g + m, rgb.b + m};
  }
};

/// Hue in degrees of an RGB triple; NaN for greys.
inline auto hue(RGB const &c) -> double
{
  double const mx = std::max({c.r, c.g, c.b}), mn = std::min({c.r, c.g, c.b});
  double const d = mx - mn;
  if (!(d > 0.0)) { return std::numeric_limits<double>::quiet_NaN(); }
  double h;
  if (mx == c.r) {
    h = std::fmod((c.g - c.b) / d, 6.0);
  } else if (mx == c.g) {
    h = (c.b - c.r) / d + 2.0;
  } else {
    h = (c.r - c.g) / d + 4.0;
  }
  h *= 60.0;
  return h < 0.0 ? h + 360.0 : h;
}

struct Overlay
{
  GridSpec         grid;
  std::vector<RGB> pixels;
  bool             degenerate_range = false;
};

/// Colourised τ-map times the max-normalised grey image, channel by channel. Masked pixels are black.
inline auto overlay(ImageGrid const &img, TauMap const &m, Colormap const &cmap) -> Overlay
{
  if (!(m.grid == img.grid)) { throw ValidationError("overlay: map and image rasters differ"); }
  Overlay      o{img.grid, std::vector<RGB>(static_cast<size_t>(img.grid.size())), cmap.degenerate()};
  double const peak = img.max();
  for (Index i = 0; i < img.grid.size(); i++) {
    if (!m.valid(i)) { continue; }
    double const g = peak > 0.0 ? std::clamp(img.value[i] / peak, 0.0, 1.0) : 0.0;
    RGB const    c = cmap(m.tau[i]);
    o.pixels[i] = {c.r * g, c.g * g, c.b * g};
  }
  return o;
}

} // namespace taurus
