#include <doctest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "support.hpp"
#include "wastescan/backend.hpp"
#include "wastescan/error.hpp"

using namespace wastescan;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

// Direct population variance of one block.
double block_variance(const GeoRaster& img, int bx, int by, int block) {
  double sum = 0.0, sq = 0.0;
  for (int y = by * block; y < (by + 1) * block; ++y) {
    for (int x = bx * block; x < (bx + 1) * block; ++x) {
      // luma in thousandths, rounded half up
      const long milli = 299L * img.at(x, y, 0) + 587L * img.at(x, y, 1) + 114L * img.at(x, y, 2);
      const double g = static_cast<double>((2 * milli + 1000) / 2000);
      sum += g;
      sq += g * g;
    }
  }
  const double n = block * block;
  return sq / n - (sum / n) * (sum / n);
}

GeoRaster half_and_half(int w, int h) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3, 128);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w / 2; ++x) {
      const std::uint8_t v = (x + y) % 2 ? 255 : 0;
      for (int b = 0; b < 3; ++b) px[(static_cast<std::size_t>(y) * w + x) * 3 + b] = v;
    }
  }
  return GeoRaster(w, h, std::move(px), testing::utm(1.0), "");
}

// Runs respond_once in a loop until stopped.
class Responder {
public:
  Responder(fs::path dir, std::function<ClassifierOutput(const GeoRaster&)> scorer)
      : thread_([this, dir = std::move(dir), scorer = std::move(scorer)] {
          while (!stop_) {
            try {
              if (!respond_once(dir, scorer)) std::this_thread::sleep_for(std::chrono::milliseconds(2));
            } catch (...) {
              std::this_thread::sleep_for(std::chrono::milliseconds(2));
            }
          }
        }) {}
  ~Responder() {
    stop_ = true;
    thread_.join();
  }

private:
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

BackendConfig external(const fs::path& dir) {
  BackendConfig cfg = BackendConfig::parse("external:" + dir.string());
  cfg.poll_interval = std::chrono::milliseconds(2);
  cfg.timeout = std::chrono::milliseconds(5000);
  return cfg;
}

}  // namespace

TEST_SUITE("backend") {

TEST_CASE("uniform image scores zero") {
  const auto out = heuristic_score(testing::uniform(64, 64, 90), 100.0, 8);
  CHECK(out.score == 0.0);
  REQUIRE(out.activations);
  CHECK(out.activations->k == 1);
  CHECK(out.activations->h == 8);
  CHECK(out.activations->w == 8);
  for (double v : out.activations->values) CHECK(v == 0.0);
  CHECK(*out.channel_weights == std::vector<double>{1.0});
}

TEST_CASE("checkerboard block variance") {
  const auto img = testing::checkerboard(32, 24);
  const auto out = heuristic_score(img, 100.0, 8);
  CHECK(out.score == 1.0);
  for (double v : out.activations->values) CHECK(v == 16256.25);
  CHECK(block_variance(img, 0, 0, 8) == 16256.25);
}

TEST_CASE("half checkerboard scores one half") {
  const auto out = heuristic_score(half_and_half(64, 32), 100.0, 8);
  CHECK(out.score == 0.5);
}

TEST_CASE("activations match a direct variance over random images") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto img = testing::random_raster(rng, 37, 29);
    const auto out = heuristic_score(img, 5000.0, 6);
    const auto& a = *out.activations;
    REQUIRE(a.w == 6);
    REQUIRE(a.h == 4);
    int hot = 0;
    for (int by = 0; by < a.h; ++by) {
      for (int bx = 0; bx < a.w; ++bx) {
        const double ref = block_variance(img, bx, by, 6);
        REQUIRE(a.at(0, by, bx) == doctest::Approx(ref).epsilon(1e-9));
        hot += a.at(0, by, bx) >= 5000.0;
      }
    }
    REQUIRE(out.score == doctest::Approx(hot / 24.0));
  }
}

TEST_CASE("score is invariant to a brightness offset") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> d(40, 200), off(-40, 55);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::uint8_t> px(48 * 48 * 3);
    for (std::size_t k = 0; k < px.size(); k += 3) px[k] = px[k + 1] = px[k + 2] = std::uint8_t(d(rng));
    const GeoRaster a(48, 48, px, testing::utm(1), "");
    const int o = off(rng);
    for (auto& p : px) p = static_cast<std::uint8_t>(p + o);
    const GeoRaster b(48, 48, px, testing::utm(1), "");
    REQUIRE(heuristic_score(a, 100.0, 8).score == heuristic_score(b, 100.0, 8).score);
  }
}

TEST_CASE("score is monotone in the number of textured blocks") {
  auto px = testing::uniform(64, 64, 100).pixels();
  std::vector<std::uint8_t> buf(px.begin(), px.end());
  double last = -1.0;
  for (int blk = 0; blk < 64; ++blk) {
    const int bx = blk % 8, by = blk / 8;
    for (int y = by * 8; y < by * 8 + 8; ++y) {
      for (int x = bx * 8; x < bx * 8 + 8; ++x) {
        const std::uint8_t v = (x + y) % 2 ? 200 : 20;
        for (int b = 0; b < 3; ++b) buf[(static_cast<std::size_t>(y) * 64 + x) * 3 + b] = v;
      }
    }
    const double s = heuristic_score(GeoRaster(64, 64, buf, testing::utm(1), ""), 100.0, 8).score;
    REQUIRE(s >= last);
    REQUIRE(s == doctest::Approx((blk + 1) / 64.0));
    last = s;
  }
}

TEST_CASE("image smaller than a block") {
  CHECK(code_of([] { heuristic_score(testing::uniform(7, 50, 0), 100.0, 8); }) ==
        ErrorCode::ImageTooSmall);
}

TEST_CASE("classify_batch heuristic") {
  BackendConfig cfg;
  CHECK(classify_batch({}, cfg).empty());
  const std::vector<GeoRaster> imgs{testing::uniform(32, 32, 10), testing::checkerboard(32, 32)};
  const auto out = classify_batch(imgs, cfg);
  REQUIRE(out.size() == 2);
  CHECK(out[0].score == 0.0);
  CHECK(out[1].score == 1.0);
  const std::vector<GeoRaster> mixed{testing::uniform(32, 32, 10), testing::uniform(40, 32, 10)};
  CHECK(code_of([&] { classify_batch(mixed, cfg); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("batching is transparent") {
  std::mt19937_64 rng(77);
  std::vector<GeoRaster> imgs;
  for (int i = 0; i < 23; ++i) imgs.push_back(testing::random_raster(rng, 24, 24));
  BackendConfig whole;
  whole.variance_threshold = 5200.0;
  const auto all = classify_batch(imgs, whole);
  for (int bs : {1, 4, 7, 120}) {
    BackendConfig cfg = whole;
    cfg.batch_size = bs;
    const auto part = classify_batch(imgs, cfg);
    REQUIRE(part.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      REQUIRE(part[i].score == all[i].score);
      REQUIRE(part[i].activations->values == all[i].activations->values);
    }
  }
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    REQUIRE(classify_batch(std::span(&imgs[i], 1), whole)[0].score == all[i].score);
  }
}

TEST_CASE("backend config parsing") {
  CHECK(BackendConfig::parse("heuristic").kind == BackendKind::Heuristic);
  const auto ext = BackendConfig::parse("external:/tmp/x");
  CHECK(ext.kind == BackendKind::External);
  CHECK(ext.exchange_dir == fs::path("/tmp/x"));
  CHECK_THROWS_AS(BackendConfig::parse("torch"), Error);
  CHECK_THROWS_AS(BackendConfig::parse("external:"), Error);
}

TEST_CASE("request and response files") {
  TempDir dir;
  const std::vector<GeoRaster> imgs{testing::uniform(16, 16, 1), testing::checkerboard(16, 16)};
  const std::vector<std::string> ids{"r0000_c0000", "r0000_c0001"};
  const auto req = write_batch_request(imgs, ids, dir.path(), "batch-x");
  CHECK(fs::exists(dir / "request.json"));
  const auto doc = nlohmann::json::parse(std::ifstream(dir / "request.json"));
  CHECK(doc["entries"].size() == 2);
  for (const auto& f : req.image_files) CHECK(fs::exists(dir / f));
  const auto back = read_batch_request(dir.path());
  CHECK(back.tile_ids == ids);
  CHECK(read_image(dir / back.image_files[1]).pixels().size() == 16 * 16 * 3);

  std::vector<ClassifierOutput> outs;
  for (const auto& img : imgs) outs.push_back(heuristic_score(img, 100.0, 8));
  write_batch_response(dir.path(), req, outs);
  CHECK(fs::exists(dir / "response.done"));
  const auto got = read_batch_response(dir.path(), req);
  REQUIRE(got.size() == 2);
  CHECK(got[0].score == 0.0);
  CHECK(got[1].score == 1.0);
  CHECK(got[1].activations->values == outs[1].activations->values);
}

TEST_CASE("malformed responses are rejected") {
  TempDir dir;
  const std::vector<GeoRaster> imgs{testing::uniform(16, 16, 1), testing::uniform(16, 16, 2)};
  const std::vector<std::string> ids{"a", "b"};
  const auto req = write_batch_request(imgs, ids, dir.path(), "batch-y");
  auto respond = [&](const nlohmann::json& doc) {
    std::ofstream(dir / "response.json") << doc.dump();
    return code_of([&] { read_batch_response(dir.path(), req); });
  };
  using nlohmann::json;
  CHECK(respond({{"batch_id", "batch-y"}, {"entries", {{{"tile_id", "a"}, {"score", 0.1}}}}}) ==
        ErrorCode::BackendError);
  CHECK(respond({{"batch_id", "batch-y"},
                 {"entries", {{{"tile_id", "a"}, {"score", 1.2}}, {{"tile_id", "b"}, {"score", 0.1}}}}}) ==
        ErrorCode::BackendError);
  CHECK(respond({{"batch_id", "other"},
                 {"entries", {{{"tile_id", "a"}, {"score", 0.2}}, {{"tile_id", "b"}, {"score", 0.1}}}}}) ==
        ErrorCode::BackendError);
  CHECK(respond({{"batch_id", "batch-y"},
                 {"entries", {{{"tile_id", "a"}, {"score", 0.2}}, {{"tile_id", "a"}, {"score", 0.1}}}}}) ==
        ErrorCode::BackendError);
  std::ofstream(dir / "acts.f32", std::ios::binary) << std::string(4 * 2 * 3 - 4, '\0');
  CHECK(respond({{"batch_id", "batch-y"},
                 {"entries",
                  {{{"tile_id", "a"}, {"score", 0.2}, {"activations_file", "acts.f32"}, {"K", 1},
                    {"h", 2}, {"w", 3}, {"channel_weights", {1.0}}},
                   {{"tile_id", "b"}, {"score", 0.1}}}}}) == ErrorCode::BackendError);
  std::ofstream(dir / "acts.f32", std::ios::binary) << std::string(4 * 2 * 3, '\0');
  CHECK(respond({{"batch_id", "batch-y"},
                 {"entries",
                  {{{"tile_id", "a"}, {"score", 0.2}, {"activations_file", "acts.f32"}, {"K", 1},
                    {"h", 2}, {"w", 3}, {"channel_weights", {1.0, 2.0}}},
                   {{"tile_id", "b"}, {"score", 0.1}}}}}) == ErrorCode::BackendError);
  std::ofstream(dir / "response.json") << "{not json";
  CHECK(code_of([&] { read_batch_response(dir.path(), req); }) == ErrorCode::BackendError);
}

TEST_CASE("external backend round trip through a responder") {
  TempDir dir;
  Responder responder(dir.path(), [](const GeoRaster& img) { return heuristic_score(img, 100.0, 8); });
  std::vector<GeoRaster> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(i % 2 ? testing::checkerboard(24, 24) : testing::uniform(24, 24, 5));
  auto cfg = external(dir.path());
  cfg.batch_size = 2;
  const auto out = classify_batch(imgs, cfg);
  REQUIRE(out.size() == 5);
  const auto ref = classify_batch(imgs, BackendConfig{});
  for (int i = 0; i < 5; ++i) {
    CHECK(out[i].score == ref[i].score);
    CHECK(out[i].activations->values == ref[i].activations->values);
  }
  // Exchange directory is left clean.
  CHECK(fs::is_empty(dir.path()));
}

TEST_CASE("external backend returning too few records") {
  TempDir dir;
  std::atomic<bool> stop{false};
  std::thread rogue([&] {
    while (!stop) {
      if (fs::exists(dir / "request.json") && !fs::exists(dir / "response.done")) {
        try {
          auto req = read_batch_request(dir.path());
          req.tile_ids.pop_back();
          req.image_files.pop_back();
          std::vector<ClassifierOutput> outs(req.tile_ids.size());
          write_batch_response(dir.path(), req, outs);
        } catch (...) {
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  });
  const std::vector<GeoRaster> imgs(3, testing::uniform(16, 16, 0));
  CHECK(code_of([&] { classify_batch(imgs, external(dir.path())); }) == ErrorCode::BackendError);
  stop = true;
  rogue.join();
}

TEST_CASE("external backend timeout names the batch") {
  TempDir dir;
  auto cfg = external(dir.path());
  cfg.timeout = std::chrono::milliseconds(30);
  const std::vector<GeoRaster> imgs(2, testing::uniform(16, 16, 0));
  try {
    classify_batch(imgs, cfg);
    FAIL("expected BackendError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BackendError);
    CHECK(std::string(e.what()).find("batch-") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(dir / "request.json"));
}

}  // TEST_SUITE
