#pragma once

#include <span>
#include <vector>

#include "wastescan/backend.hpp"
#include "wastescan/georaster.hpp"

namespace wastescan {

struct SaliencyMap {
  int h = 0;
  int w = 0;
  std::vector<double> values;  ///< row-major, each in [0, 1]

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * w + col]; }
};

/// ReLU of the channel-weighted sum of activations, min-max normalized per map.
/// A flat map (max == min) normalizes to all zeros.
SaliencyMap grad_cam(const ActivationStack& acts, std::span<const double> weights);

/// Corner-aligned bilinear upsampling to out_h x out_w.
SaliencyMap upsample_map(const SaliencyMap& m, int out_w, int out_h);
inline SaliencyMap upsample_map(const SaliencyMap& m, int out) { return upsample_map(m, out, out); }

struct Overlay {
  GrayImage grayscale;  ///< round(255 * m), carries the tile's transform
  GeoRaster colorized;  ///< tile with red raised by 0.5 * 255 * m
};

Overlay render_overlay(const GeoRaster& tile, const SaliencyMap& m);

}  // namespace wastescan
