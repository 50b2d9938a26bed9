#include "omf/dataset.hpp"
#include "omf/losses.hpp"
#include "omf/metrics.hpp"
#include "omf/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace omf;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.num_frames = 16;
  cfg.height = 32;
  cfg.width = 32;
  cfg.min_radius = 4;
  cfg.max_radius = 6;
  cfg.num_samples = 4;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("omf_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

int count_matching(const VideoSample& s) {
  auto matches = [&](const ObjectSpec& o) {
    return o.color == s.target.color && o.shape == s.target.shape && o.motion == s.target.motion;
  };
  int n = matches(s.target);
  for (const auto& d : s.distractors) n += matches(d);
  return n;
}

}  // namespace

TEST_CASE("vocabulary and query text") {
  const auto& v = vocabulary();
  CHECK(v[0] == "<pad>");
  CHECK(v.size() == 6 + kColorCount + kShapeCount + kMotionCount);
  CHECK(token_id("red") > 0);
  CHECK_THROWS(token_id("zebra"));
  const auto s = generate_sample(3, small_config());
  const std::string text = query_text(s.query);
  CHECK(text.find(color_name(s.target.color)) != std::string::npos);
  CHECK(text.find(shape_name(s.target.shape)) != std::string::npos);
  CHECK(text.find(motion_word(s.target.motion)) != std::string::npos);
}

TEST_CASE("generate_sample is deterministic and self-consistent") {
  const auto cfg = small_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = generate_sample(seed, cfg), b = generate_sample(seed, cfg);
    CHECK(a == b);
    CHECK(a.frames.data() == b.frames.data());
    CHECK(a.frames.data().minCoeff() >= 0.0);
    CHECK(a.frames.data().maxCoeff() <= 1.0);
    for (Index i = 0; i < a.frames.size(); i += 97) CHECK(a.frames[i] * 255 == std::round(a.frames[i] * 255));

    // Masks are non-empty exactly on the segment frames; TI follows.
    std::vector<int> in_segment(16, 0);
    int covered = 0;
    for (const auto& [s, e] : a.segments) {
      CHECK(s < e);
      for (int t = s; t < e; ++t) in_segment[t] = 1, ++covered;
    }
    CHECK(occupied_frames(a.masks) == in_segment);
    CHECK(a.relevance() == in_segment);
    CHECK(a.ti() == doctest::Approx(1.0 - covered / 16.0).epsilon(1e-15));
    CHECK(count_matching(a) == 1);
    for (const auto& d : a.distractors) {
      const bool shares = d.color == a.target.color || d.shape == a.target.shape || d.motion == a.target.motion;
      CHECK(shares);
    }

    // Exact analytic membership at pixel centres, and boxes from the masks.
    for (int t = 0; t < 16; ++t) {
      if (!in_segment[t]) continue;
      const auto [cx, cy] = a.target.centre(t, 32, 32);
      bool same = true;
      for (Index y = 0; y < 32; ++y)
        for (Index x = 0; x < 32; ++x) same &= a.masks[t](y, x) == a.target.contains(cx, cy, x + 0.5, y + 0.5);
      CHECK(same);
      CHECK(a.boxes[t] == mask_box(a.masks[t]));
    }
  }
  CHECK_FALSE(generate_sample(1, cfg) == generate_sample(2, cfg));
}

TEST_CASE("generator TI extremes and config errors") {
  auto cfg = small_config();
  const auto full = generate_sample(5, cfg, 0.0);
  CHECK(full.ti() == 0.0);
  CHECK(full.segments == std::vector<Segment>{{0, 16}});

  const auto absent = generate_sample(5, cfg, 1.0);
  CHECK(absent.ti() == 1.0);
  CHECK(absent.segments.empty());
  for (int r : absent.relevance()) CHECK(r == 0);

  cfg.num_segments = 0;
  CHECK(generate_sample(6, cfg).ti() == 1.0);

  auto bad = small_config();
  bad.max_radius = 20;
  CHECK_THROWS_AS(generate_sample(1, bad), ConfigError);
  bad = small_config();
  bad.num_frames = 4;
  CHECK_THROWS_AS(generate_sample(1, bad), ConfigError);
  bad = small_config();
  bad.ti_max = 1.5;
  CHECK_THROWS_AS(generate_sample(1, bad), ConfigError);
}

TEST_CASE("multiple segments and scene cuts") {
  auto cfg = small_config();
  cfg.num_frames = 40;
  cfg.num_segments = 3;
  cfg.scene_cuts = 3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_sample(seed, cfg, 0.5);
    CHECK(s.scene_starts.size() == 3);
    CHECK(detect_scenes(s.frames, EvalConfig{}.scene_threshold) == 4);
    for (std::size_t i = 1; i < s.segments.size(); ++i) CHECK(s.segments[i].first > s.segments[i - 1].second);
  }
}

TEST_CASE("TI suite hits requested rates within one frame") {
  auto cfg = small_config();
  cfg.num_frames = 100;
  const std::vector<double> targets = {0.0, 0.25, 0.5, 0.77, 1.0};
  const auto suite = make_ti_suite(10, cfg, targets);
  REQUIRE(suite.size() == targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) CHECK(std::abs(suite[i].ti() - targets[i]) <= 1.0 / 100);
  CHECK(std::abs(suite[2].ti() - 0.5) <= 0.01);
  CHECK(suite.front().ti() == 0.0);
  CHECK(suite.back().ti() == 1.0);
  CHECK_THROWS_AS(make_ti_suite(1, cfg, {1.2}), ConfigError);
}

TEST_CASE("RLE, blob and PNG codecs are lossless") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 20; ++trial) {
    Mask m(7, 9);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = coin(rng);
    CHECK((decode_rle(encode_rle(m), 7, 9) == m).all());
  }
  CHECK(encode_rle(Mask::Zero(2, 2)) == "4");
  CHECK((decode_rle(encode_rle(Mask::Ones(2, 3)), 2, 3) == Mask::Ones(2, 3)).all());
  CHECK_THROWS(decode_rle("3 2", 2, 3));

  TempDir dir("codecs");
  const auto s = generate_sample(2, small_config());
  Tensor<double> frame({3, 32, 32});
  frame.data() = s.frames.data().head(frame.size());
  write_blob(dir.str() + "/f.bin", s.frames);
  CHECK(read_blob(dir.str() + "/f.bin") == s.frames);
  write_png(dir.str() + "/f.png", frame);
  CHECK(read_png(dir.str() + "/f.png") == frame);
  CHECK_THROWS(read_blob(dir.str() + "/missing.bin"));
}

TEST_CASE("dataset round trip in both frame formats") {
  const auto cfg = small_config();
  auto samples = generate_dataset(40, cfg);
  auto ti_cfg = small_config();
  ti_cfg.ti_targets = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.35};
  for (auto& s : generate_dataset(100, ti_cfg)) samples.push_back(std::move(s));
  REQUIRE(samples.size() == 16);

  for (const char* format : {"bin", "png"}) {
    TempDir dir(std::string("dataset_") + format);
    const auto manifest = write_dataset(samples, dir.str(), format);
    CHECK(manifest["version"] == kDatasetVersion);
    CHECK(fs::exists(dir.path / "manifest.json"));
    CHECK(fs::exists(dir.path / "samples" / samples[0].id / "masks.rle"));
    CHECK(fs::exists(dir.path / "samples" / samples[0].id / "anno.json"));
    const auto data = read_dataset(dir.str());
    CHECK(data.vocabulary == vocabulary());
    REQUIRE(data.samples.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(data.samples[i] == samples[i]);
      CHECK(data.samples[i].ti() == samples[i].ti());
    }
  }
}

TEST_CASE("read_dataset rejects missing files and version mismatches") {
  const auto samples = generate_dataset(7, small_config());
  {
    TempDir dir("missing");
    write_dataset(samples, dir.str());
    fs::remove(dir.path / "samples" / samples[1].id / "masks.rle");
    CHECK_THROWS_AS(read_dataset(dir.str()), SchemaError);
  }
  {
    TempDir dir("version");
    auto manifest = write_dataset(samples, dir.str());
    manifest["version"] = kDatasetVersion + 1;
    std::ofstream(dir.path / "manifest.json") << manifest.dump();
    CHECK_THROWS_AS(read_dataset(dir.str()), SchemaError);
  }
  CHECK_THROWS_AS(read_dataset("/nonexistent/omf"), SchemaError);
}

TEST_CASE("dataset statistics") {
  auto cfg = small_config();
  cfg.scene_cuts = 2;
  Dataset data{vocabulary(), make_ti_suite(3, cfg, {0.0, 0.5, 1.0})};
  const EvalConfig eval;
  const auto st = dataset_stats(data, eval);
  CHECK(st.videos == 3);
  CHECK(st.expressions == 3);
  CHECK(st.objects == 3 * (1 + cfg.num_distractors));
  CHECK(st.scenes == std::vector<Index>{3, 3, 3});
  CHECK(st.expression_duration[0] == st.video_duration[0]);
  CHECK(st.expression_duration[1] == doctest::Approx(8 / eval.fps));
  CHECK(st.expression_duration[2] == 0.0);
  CHECK(st.ti == std::vector<double>{0.0, 0.5, 1.0});
  const auto j = stats_to_json(st);
  CHECK(j["ti"] == doctest::Approx(0.5));
  CHECK(j["scenes_per_video"] == doctest::Approx(3.0));
}

TEST_CASE("prediction files round trip") {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.5);
  std::vector<PredictionRecord> preds;
  for (int i = 0; i < 3; ++i) {
    PredictionRecord p;
    p.id = "sample_" + std::to_string(i);
    p.query = i;
    p.t_start = i;
    p.t_end = i + 2;
    p.scores = {0.1 * i, 0.25, 1.0 / 3.0};
    for (int t = 0; t < 4; ++t) {
      Mask m(5, 6);
      for (Index k = 0; k < m.size(); ++k) m.data()[k] = coin(rng);
      p.masks.push_back(m);
    }
    preds.push_back(p);
  }
  TempDir dir("preds");
  write_predictions(preds, dir.str() + "/p.json");
  const auto back = read_predictions(dir.str() + "/p.json");
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == preds[i]);
}
