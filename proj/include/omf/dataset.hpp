#pragma once

#include "omf/binary_io.hpp"
#include "omf/synth.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace omf {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kDatasetVersion = 1;

struct Dataset {
  std::vector<std::string> vocabulary;
  std::vector<VideoSample> samples;
};

/// Writes manifest.json and samples/<id>/{frames/NNN.(bin|png), masks.rle,
/// anno.json} under `dir`; returns the manifest.
nlohmann::json write_dataset(const std::vector<VideoSample>& samples, const std::string& dir,
                             const std::string& frame_format = "bin");
Dataset read_dataset(const std::string& dir);

// Run-length masks: one line per frame, alternating background/foreground run
// lengths in row-major order, starting with background.
std::string encode_rle(const Mask& m);
Mask decode_rle(const std::string& line, Index height, Index width);

// Tensor blob: magic "OMFT", u8 dtype (0 = f64, 1 = f32, 2 = u8), u8 rank,
// u64 dims, then little-endian values.
void write_blob(const std::string& path, const Tensor<double>& t);
Tensor<double> read_blob(const std::string& path);

/// 8-bit RGB PNG of a [3, H, W] frame with values k/255.
void write_png(const std::string& path, const Tensor<double>& frame);
Tensor<double> read_png(const std::string& path);

struct DatasetStats {
  Index videos = 0, objects = 0, expressions = 0;
  std::vector<Index> scenes;             // per video
  std::vector<double> expression_duration;  // Dur(e), seconds of target presence
  std::vector<double> video_duration;       // Dur(v)
  std::vector<double> ti;
};

DatasetStats dataset_stats(const Dataset& data, const EvalConfig& cfg);
nlohmann::json stats_to_json(const DatasetStats& s);

/// Per-expression inference output for third-party scoring.
struct PredictionRecord {
  std::string id;
  Index query = 0;
  Index t_start = 0, t_end = -1;
  std::vector<double> scores;  // sequence alignment c per query
  std::vector<Mask> masks;
};

void write_predictions(const std::vector<PredictionRecord>& preds, const std::string& path);
std::vector<PredictionRecord> read_predictions(const std::string& path);
bool operator==(const PredictionRecord& a, const PredictionRecord& b);

}  // namespace omf
