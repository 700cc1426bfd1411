#include "wastescan/saliency.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "wastescan/error.hpp"

namespace wastescan {

SaliencyMap grad_cam(const ActivationStack& acts, std::span<const double> weights) {
  if (weights.size() != static_cast<std::size_t>(acts.k)) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("{} weights for {} channels", weights.size(), acts.k));
  }
  acts.validate();
  for (double w : weights) {
    if (!std::isfinite(w)) throw Error(ErrorCode::InvalidActivations, "non-finite channel weight");
  }
  const std::size_t plane = static_cast<std::size_t>(acts.h) * acts.w;
  SaliencyMap m{acts.h, acts.w, std::vector<double>(plane, 0.0)};
  for (int c = 0; c < acts.k; ++c) {
    const double* a = acts.values.data() + plane * c;
    for (std::size_t i = 0; i < plane; ++i) m.values[i] += weights[c] * a[i];
  }
  for (auto& v : m.values) {
    v = std::max(0.0, v);
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidActivations, "weighted sum overflowed");
  }
  const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(m.values.begin(), m.values.end(), 0.0);
    return m;
  }
  for (auto& v : m.values) v = (v - lo) / (hi - lo);
  return m;
}

SaliencyMap upsample_map(const SaliencyMap& m, int out_w, int out_h) {
  if (out_w < m.w || out_h < m.h) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("cannot upsample {}x{} map to {}x{}", m.w, m.h, out_w, out_h));
  }
  SaliencyMap out{out_h, out_w, std::vector<double>(static_cast<std::size_t>(out_w) * out_h)};
  // Corner alignment: output index i samples source coordinate i * (n - 1) / (out - 1).
  auto coord = [](int i, int n, int out_n) {
    return out_n > 1 ? static_cast<double>(i) * (n - 1) / (out_n - 1) : 0.0;
  };
  for (int y = 0; y < out_h; ++y) {
    const double v = coord(y, m.h, out_h);
    const int y0 = std::min(static_cast<int>(std::floor(v)), m.h - 1);
    const int y1 = std::min(y0 + 1, m.h - 1);
    const double fy = v - y0;
    for (int x = 0; x < out_w; ++x) {
      const double u = coord(x, m.w, out_w);
      const int x0 = std::min(static_cast<int>(std::floor(u)), m.w - 1);
      const int x1 = std::min(x0 + 1, m.w - 1);
      const double fx = u - x0;
      const double top = (1.0 - fx) * m.at(y0, x0) + fx * m.at(y0, x1);
      const double bottom = (1.0 - fx) * m.at(y1, x0) + fx * m.at(y1, x1);
      out.values[static_cast<std::size_t>(y) * out_w + x] =
          std::clamp((1.0 - fy) * top + fy * bottom, 0.0, 1.0);
    }
  }
  return out;
}

Overlay render_overlay(const GeoRaster& tile, const SaliencyMap& m) {
  if (m.w != tile.width() || m.h != tile.height()) {
    throw Error(ErrorCode::SizeMismatch, fmt::format("map {}x{} vs tile {}x{}", m.w, m.h,
                                                     tile.width(), tile.height()));
  }
  constexpr double kBlend = 0.5;
  GrayImage gray{tile.width(), tile.height(), std::vector<std::uint8_t>(m.values.size()),
                 tile.transform()};
  std::vector<std::uint8_t> color(tile.pixels().begin(), tile.pixels().end());
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    gray.pixels[i] = to_u8(255.0 * m.values[i]);
    color[i * 3] = to_u8(color[i * 3] + kBlend * 255.0 * m.values[i]);
  }
  return {std::move(gray),
          GeoRaster(tile.width(), tile.height(), std::move(color), tile.transform(),
                    tile.crs_id())};
}

}  // namespace wastescan
