#include "wastescan/datasetkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "wastescan/error.hpp"

namespace wastescan {

namespace fs = std::filesystem;

std::string_view to_string(Label l) { return l == Label::Positive ? "positive" : "negative"; }

Label parse_label(std::string_view s) {
  if (s == "positive") return Label::Positive;
  if (s == "negative") return Label::Negative;
  throw Error(ErrorCode::InvalidArgument, fmt::format("label must be positive|negative, got '{}'", s));
}

void SamplingConfig::validate() const {
  if (!(0.0 < r_min && r_min < r_max)) {
    throw Error(ErrorCode::InvalidArgument, "sampling radii must satisfy 0 < r_min < r_max");
  }
  if (ratio < 1) throw Error(ErrorCode::InvalidArgument, "ratio must be at least 1");
  if (!(min_separation >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "min_separation must be non-negative");
  }
  if (max_attempts < 1) throw Error(ErrorCode::InvalidArgument, "max_attempts must be positive");
}

double SamplingConfig::separation_for(double context_m) { return context_m * std::numbers::sqrt2; }

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t SplitMix64::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "empty range");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next();
  } while (v >= limit);
  return v % n;
}

std::vector<LocationRecord> sample_negatives(std::span<const LocationRecord> positives,
                                             const SamplingConfig& cfg) {
  cfg.validate();
  if (positives.empty()) throw Error(ErrorCode::InvalidArgument, "no positive locations");
  for (const auto& p : positives) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("location {} is not finite", p.id));
    }
  }
  SplitMix64 rng(cfg.seed);
  const double sep2 = cfg.min_separation * cfg.min_separation;
  const double r0 = cfg.r_min * cfg.r_min;
  const double r1 = cfg.r_max * cfg.r_max;
  auto far_enough = [&](double x, double y, std::span<const LocationRecord> others) {
    for (const auto& o : others) {
      const double dx = x - o.x, dy = y - o.y;
      if (dx * dx + dy * dy < sep2) return false;
    }
    return true;
  };

  std::vector<LocationRecord> negatives;
  negatives.reserve(positives.size() * static_cast<std::size_t>(cfg.ratio));
  for (const auto& seed : positives) {
    for (int k = 0; k < cfg.ratio; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
        // Area-uniform over the annulus.
        const double r = std::sqrt(r0 + rng.uniform() * (r1 - r0));
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        const double x = seed.x + r * std::cos(theta);
        const double y = seed.y + r * std::sin(theta);
        if (!far_enough(x, y, positives) || !far_enough(x, y, negatives)) continue;
        LocationRecord neg;
        neg.id = fmt::format("{}-neg{}", seed.id, k + 1);
        neg.x = x;
        neg.y = y;
        neg.label = Label::Negative;
        neg.source = seed.source;
        neg.notes = fmt::format("sampled near {}", seed.id);
        negatives.push_back(std::move(neg));
        placed = true;
      }
      if (!placed) {
        throw Error(ErrorCode::SamplingExhausted,
                    fmt::format("no valid negative #{} for positive {} after {} attempts", k + 1,
                                seed.id, cfg.max_attempts));
      }
    }
  }
  return negatives;
}

std::map<Label, std::size_t> Manifest::counts() const {
  std::map<Label, std::size_t> c{{Label::Positive, 0}, {Label::Negative, 0}};
  for (const auto& e : entries) ++c[e.label];
  return c;
}

std::size_t Manifest::count(Label l) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [l](const auto& e) { return e.label == l; }));
}

namespace {

std::optional<Tile> tile_around(const GeoRaster& r, double x, double y, double context_m) {
  const auto& t = r.transform();
  const int side_x = static_cast<int>(std::lround(context_m / t.gsd_x));
  const int side_y = static_cast<int>(std::lround(context_m / t.gsd_y));
  const auto c = world_to_pixel(t, x, y);
  const int col0 = static_cast<int>(std::lround(c.col + 0.5 - side_x / 2.0));
  const int row0 = static_cast<int>(std::lround(c.row + 0.5 - side_y / 2.0));
  if (col0 < 0 || row0 < 0 || col0 + side_x > r.width() || row0 + side_y > r.height()) {
    return std::nullopt;
  }
  Tile tile;
  tile.window = {col0, row0, side_x, side_y};
  tile.polygon = window_polygon(t, tile.window);
  return tile;
}

}  // namespace

Manifest build_manifest(std::span<const LocationRecord> locations,
                        std::span<const SourceRaster> sources, const TileSpec& spec,
                        const fs::path& out_dir) {
  struct Planned {
    const LocationRecord* loc;
    const SourceRaster* src;
    Tile tile;
  };
  std::vector<Planned> plan;
  std::vector<std::string> offenders;
  for (const auto& loc : locations) {
    bool covered = false;
    for (const auto& src : sources) {
      if (auto tile = tile_around(src.raster, loc.x, loc.y, spec.context_m)) {
        plan.push_back({&loc, &src, *tile});
        covered = true;
      }
    }
    if (!covered) offenders.push_back(loc.id);
  }
  if (!offenders.empty()) {
    std::string list;
    for (const auto& id : offenders) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::LocationOutsideCoverage,
                fmt::format("{} location(s) without full tile coverage: {}", offenders.size(), list));
  }

  Manifest m;
  for (const auto& p : plan) {
    ManifestEntry e;
    e.location_id = p.loc->id;
    e.label = p.loc->label;
    e.tile_file = (fs::path(p.src->name) / (p.loc->id + ".png")).generic_string();
    e.context_m = spec.context_m;
    e.gsd_cm = spec.gsd_cm;
    e.image_px = spec.image_px;
    e.source = p.src->name;
    if (!out_dir.empty()) {
      const auto img = extract_tile(p.src->raster, p.tile, spec);
      const fs::path file = out_dir / e.tile_file;
      fs::create_directories(file.parent_path());
      write_png(img, file);
      write_world_file(img.transform(), fs::path(file).replace_extension(".wld"));
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Split split_manifest(const Manifest& m, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "test fraction must be in (0, 1)");
  }
  // Group tiles by location, keeping first-appearance order.
  std::unordered_map<std::string, std::size_t> tiles_per_loc;
  std::map<Label, std::vector<std::string>> locs_by_label;
  for (const auto& e : m.entries) {
    if (tiles_per_loc[e.location_id]++ == 0) locs_by_label[e.label].push_back(e.location_id);
  }
  SplitMix64 rng(seed);
  std::set<std::string> test_locs;
  for (Label label : {Label::Positive, Label::Negative}) {
    auto& locs = locs_by_label[label];
    if (locs.size() < 2) {
      throw Error(ErrorCode::SplitInfeasible,
                  fmt::format("label {} has {} location(s), need at least 2", to_string(label),
                              locs.size()));
    }
    std::size_t tiles = 0;
    for (const auto& id : locs) tiles += tiles_per_loc[id];
    const auto target = static_cast<std::size_t>(std::llround(test_fraction * tiles));
    for (std::size_t i = locs.size() - 1; i > 0; --i) {
      std::swap(locs[i], locs[static_cast<std::size_t>(rng.below(i + 1))]);
    }
    std::size_t taken = 0;
    for (const auto& id : locs) {
      if (taken == target) break;
      if (taken + tiles_per_loc[id] <= target) {
        test_locs.insert(id);
        taken += tiles_per_loc[id];
      }
    }
  }
  Split s;
  for (const auto& e : m.entries) {
    (test_locs.count(e.location_id) ? s.test : s.train).entries.push_back(e);
  }
  return s;
}

// Files -----------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    auto a = cell.find_first_not_of(" \t\r");
    auto b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::vector<LocationRecord> read_locations_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidArgument, "empty locations file");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"id", "x", "y", "label", "source"};
  if (header.size() < expected.size() ||
      !std::equal(expected.begin(), expected.end(), header.begin())) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("{}: header must start with id,x,y,label,source", path.string()));
  }
  std::vector<LocationRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < 5) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("{}:{}: expected 5 columns", path.string(), lineno));
    }
    LocationRecord r;
    r.id = cells[0];
    try {
      r.x = std::stod(cells[1]);
      r.y = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("{}:{}: bad coordinates", path.string(), lineno));
    }
    if (!std::isfinite(r.x) || !std::isfinite(r.y)) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("{}:{}: bad coordinates", path.string(), lineno));
    }
    r.label = parse_label(cells[3]);
    r.source = cells[4];
    if (cells.size() > 5) r.notes = cells[5];
    out.push_back(std::move(r));
  }
  return out;
}

void write_locations_csv(std::span<const LocationRecord> locs, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << "id,x,y,label,source,notes\n";
  for (const auto& r : locs) {
    out << fmt::format("{},{:.3f},{:.3f},{},{},{}\n", r.id, r.x, r.y, to_string(r.label), r.source,
                       r.notes);
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.location_id = j.at("location_id").get<std::string>();
      e.label = parse_label(j.at("label").get<std::string>());
      e.tile_file = j.at("tile_file").get<std::string>();
      e.context_m = j.at("context_m").get<double>();
      e.gsd_cm = j.at("gsd_cm").get<double>();
      e.image_px = j.value("image_px", 0);
      e.source = j.value("source", std::string());
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("{}:{}: {}", path.string(), lineno, ex.what()));
    }
  }
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["location_id"] = e.location_id;
    j["label"] = to_string(e.label);
    j["tile_file"] = e.tile_file;
    j["context_m"] = e.context_m;
    j["gsd_cm"] = e.gsd_cm;
    j["image_px"] = e.image_px;
    j["source"] = e.source;
    out << j.dump() << '\n';
  }
}

void write_split_report(const Split& s, double test_fraction, std::uint64_t seed,
                        const fs::path& path) {
  auto counts = [](const Manifest& m) {
    nlohmann::ordered_json j;
    j["positive"] = m.count(Label::Positive);
    j["negative"] = m.count(Label::Negative);
    j["total"] = m.entries.size();
    return j;
  };
  nlohmann::ordered_json j;
  j["test_fraction"] = test_fraction;
  j["seed"] = seed;
  j["train"] = counts(s.train);
  j["test"] = counts(s.test);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

}  // namespace wastescan
