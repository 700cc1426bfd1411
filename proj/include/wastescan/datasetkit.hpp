#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wastescan/georaster.hpp"
#include "wastescan/tiler.hpp"

namespace wastescan {

enum class Label { Positive, Negative };

std::string_view to_string(Label l);
Label parse_label(std::string_view s);

struct LocationRecord {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  Label label = Label::Positive;
  std::string source;
  std::string notes;
};

struct SamplingConfig {
  int ratio = 2;  ///< negatives per positive
  double r_min = 300.0;
  double r_max = 2000.0;
  double min_separation = 300.0;
  std::uint64_t seed = 0;
  int max_attempts = 1000;

  void validate() const;
  /// Separation needed so that tiles of this context never overlap.
  static double separation_for(double context_m);
};

/// Deterministic 64-bit generator with portable uniform draws (std
/// distributions are implementation-defined).
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  double uniform();  ///< [0, 1)
  std::uint64_t below(std::uint64_t n);  ///< [0, n), unbiased

private:
  std::uint64_t state_;
};

/// ratio negatives per positive, each in the annulus [r_min, r_max] around its
/// seed positive (area-uniform) and at least min_separation from every
/// positive and every previously accepted negative. Throws SamplingExhausted
/// naming the positive whose slot could not be filled.
std::vector<LocationRecord> sample_negatives(std::span<const LocationRecord> positives,
                                             const SamplingConfig& cfg);

struct SourceRaster {
  std::string name;
  GeoRaster raster;
};

struct ManifestEntry {
  std::string location_id;
  Label label = Label::Positive;
  std::string tile_file;
  double context_m = 0.0;
  double gsd_cm = 0.0;
  int image_px = 0;
  std::string source;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::map<Label, std::size_t> counts() const;
  std::size_t count(Label l) const;
};

/// One tile per (location, source) pair whose tile fits inside the source,
/// centered on the location. Every location must be covered by at least one
/// source (LocationOutsideCoverage otherwise). When `out_dir` is given the tile
/// images and world files are written there and tile_file is relative to it.
Manifest build_manifest(std::span<const LocationRecord> locations,
                        std::span<const SourceRaster> sources, const TileSpec& spec,
                        const std::filesystem::path& out_dir = {});

struct Split {
  Manifest train;
  Manifest test;
};

/// Stratified, location-level split: per label, round(test_fraction * count)
/// tiles go to test, and all tiles of one location land on the same side.
Split split_manifest(const Manifest& m, double test_fraction, std::uint64_t seed);

// Files -----------------------------------------------------------------------

/// CSV with header `id,x,y,label,source` (an optional trailing `notes` column is kept).
std::vector<LocationRecord> read_locations_csv(const std::filesystem::path& path);
void write_locations_csv(std::span<const LocationRecord> locs, const std::filesystem::path& path);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
void write_split_report(const Split& s, double test_fraction, std::uint64_t seed,
                        const std::filesystem::path& path);

}  // namespace wastescan
