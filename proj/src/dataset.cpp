#include "omf/dataset.hpp"

#include "omf/metrics.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace omf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(Index t, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03ld.%s", static_cast<long>(t), ext.c_str());
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

json object_json(const ObjectSpec& o) {
  return {{"color", static_cast<int>(o.color)}, {"shape", static_cast<int>(o.shape)},
          {"motion", static_cast<int>(o.motion)}, {"radius", o.radius},
          {"x0", o.x0}, {"y0", o.y0}, {"vx", o.vx}, {"vy", o.vy}};
}

ObjectSpec object_from(const json& j) {
  ObjectSpec o;
  o.color = static_cast<Color>(j.at("color").get<int>());
  o.shape = static_cast<ShapeKind>(j.at("shape").get<int>());
  o.motion = static_cast<Motion>(j.at("motion").get<int>());
  o.radius = j.at("radius").get<double>();
  o.x0 = j.at("x0").get<double>(), o.y0 = j.at("y0").get<double>();
  o.vx = j.at("vx").get<double>(), o.vy = j.at("vy").get<double>();
  return o;
}

std::uint8_t to_level(double v) {
  const long k = std::lround(v * 255.0);
  if (k < 0 || k > 255 || std::abs(static_cast<double>(k) / 255.0 - v) > 1e-12)
    throw IoError("frame value is not an 8-bit level");
  return static_cast<std::uint8_t>(k);
}

}  // namespace

// ---- RLE -------------------------------------------------------------------

std::string encode_rle(const Mask& m) {
  std::ostringstream os;
  const bool* p = m.data();
  const Index n = m.size();
  bool current = false;
  Index run = 0;
  bool first = true;
  for (Index i = 0; i < n; ++i) {
    if (p[i] == current) {
      ++run;
      continue;
    }
    os << (first ? "" : " ") << run;
    first = false;
    current = p[i];
    run = 1;
  }
  os << (first ? "" : " ") << run;
  return os.str();
}

Mask decode_rle(const std::string& line, Index height, Index width) {
  Mask m = Mask::Zero(height, width);
  std::istringstream is(line);
  Index pos = 0, run = 0;
  bool value = false;
  while (is >> run) {
    if (run < 0 || pos + run > m.size()) throw SchemaError("RLE run exceeds mask size");
    for (Index i = 0; i < run; ++i) m.data()[pos + i] = value;
    pos += run;
    value = !value;
  }
  if (!is.eof()) throw SchemaError("malformed RLE line");
  if (pos != m.size()) throw SchemaError("RLE runs do not cover the mask");
  return m;
}

// ---- blobs -----------------------------------------------------------------

void write_blob(const std::string& path, const Tensor<double>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  le::write_magic(out, "OMFT");
  le::write<std::uint8_t>(out, 0);
  le::write<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) le::write<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (Index i = 0; i < t.size(); ++i) le::write<double>(out, t[i]);
  if (!out) throw IoError("write failed: " + path);
}

Tensor<double> read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("missing file " + path);
  le::expect_magic(in, "OMFT", path);
  const auto dtype = le::read<std::uint8_t>(in);
  const auto rank = le::read<std::uint8_t>(in);
  Shape shape;
  for (int i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(le::read<std::uint64_t>(in)));
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) {
    switch (dtype) {
      case 0: t[i] = le::read<double>(in); break;
      case 1: t[i] = static_cast<double>(le::read<float>(in)); break;
      case 2: t[i] = le::read<std::uint8_t>(in) / 255.0; break;
      default: throw SchemaError("unknown blob dtype in " + path);
    }
  }
  return t;
}

// ---- PNG -------------------------------------------------------------------

void write_png(const std::string& path, const Tensor<double>& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) throw ShapeError("write_png: frame must be [3, H, W]");
  const Index h = frame.dim(1), w = frame.dim(2);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) pixels[(y * w + x) * 3 + c] = to_level(frame.at({c, y, x}));
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + image.message);
}

Tensor<double> read_png(const std::string& path) {
  if (!fs::exists(path)) throw SchemaError("missing file " + path);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw IoError("cannot read PNG " + path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  const Index h = image.height, w = image.width;
  Tensor<double> frame({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) frame.at({c, y, x}) = pixels[(y * w + x) * 3 + c] / 255.0;
  return frame;
}

// ---- dataset ---------------------------------------------------------------

json write_dataset(const std::vector<VideoSample>& samples, const std::string& dir, const std::string& frame_format) {
  if (frame_format != "bin" && frame_format != "png") throw ConfigError("frame_format must be bin or png");
  fs::create_directories(fs::path(dir) / "samples");
  json manifest;
  manifest["version"] = kDatasetVersion;
  manifest["vocabulary"] = vocabulary();
  manifest["samples"] = json::array();
  for (const auto& s : samples) {
    const fs::path rel = fs::path("samples") / s.id;
    const fs::path root = fs::path(dir) / rel;
    fs::create_directories(root / "frames");
    const Index frames = s.num_frames(), h = s.frames.dim(2), w = s.frames.dim(3);
    for (Index t = 0; t < frames; ++t) {
      Tensor<double> frame({3, h, w});
      frame.data() = s.frames.data().segment(t * 3 * h * w, 3 * h * w);
      const auto path = (root / "frames" / frame_name(t, frame_format)).string();
      if (frame_format == "png") {
        write_png(path, frame);
      } else {
        write_blob(path, frame);
      }
    }
    std::ostringstream rle;
    rle << frames << ' ' << h << ' ' << w << '\n';
    for (const auto& m : s.masks) rle << encode_rle(m) << '\n';
    write_text(root / "masks.rle", rle.str());

    json anno;
    anno["id"] = s.id;
    anno["seed"] = s.seed;
    anno["num_frames"] = frames;
    anno["height"] = h;
    anno["width"] = w;
    anno["frame_format"] = frame_format;
    anno["query"] = s.query;
    anno["text"] = query_text(s.query);
    anno["segments"] = s.segments;
    anno["boxes"] = s.boxes;
    anno["scene_starts"] = s.scene_starts;
    anno["target"] = object_json(s.target);
    anno["distractors"] = json::array();
    for (const auto& d : s.distractors) anno["distractors"].push_back(object_json(d));
    write_text(root / "anno.json", anno.dump(1) + "\n");

    manifest["samples"].push_back({{"id", s.id},
                                   {"path", rel.generic_string()},
                                   {"query", s.query},
                                   {"segments", s.segments},
                                   {"ti", s.ti()}});
  }
  write_text(fs::path(dir) / "manifest.json", manifest.dump(1) + "\n");
  return manifest;
}

Dataset read_dataset(const std::string& dir) {
  const json manifest = read_json(fs::path(dir) / "manifest.json");
  Dataset data;
  try {
    if (manifest.at("version").get<int>() != kDatasetVersion)
      throw SchemaError("dataset version " + manifest.at("version").dump() + " is not supported");
    data.vocabulary = manifest.at("vocabulary").get<std::vector<std::string>>();
    if (data.vocabulary != vocabulary()) throw SchemaError("dataset vocabulary differs from this build");
    for (const auto& rec : manifest.at("samples")) {
      const fs::path root = fs::path(dir) / rec.at("path").get<std::string>();
      const json anno = read_json(root / "anno.json");
      VideoSample s;
      s.id = anno.at("id").get<std::string>();
      s.seed = anno.at("seed").get<std::uint64_t>();
      const Index frames = anno.at("num_frames").get<Index>(), h = anno.at("height").get<Index>(),
                  w = anno.at("width").get<Index>();
      const auto format = anno.at("frame_format").get<std::string>();
      s.query = anno.at("query").get<std::vector<int>>();
      s.segments = anno.at("segments").get<std::vector<Segment>>();
      s.boxes = anno.at("boxes").get<std::vector<std::array<double, 4>>>();
      s.scene_starts = anno.at("scene_starts").get<std::vector<int>>();
      s.target = object_from(anno.at("target"));
      for (const auto& d : anno.at("distractors")) s.distractors.push_back(object_from(d));
      if (s.query != rec.at("query").get<std::vector<int>>()) throw SchemaError("manifest query differs from " + s.id);

      s.frames = Tensor<double>({frames, 3, h, w});
      for (Index t = 0; t < frames; ++t) {
        const auto path = (root / "frames" / frame_name(t, format)).string();
        const Tensor<double> frame = format == "png" ? read_png(path) : read_blob(path);
        if (frame.shape() != Shape{3, h, w}) throw SchemaError("frame size mismatch in " + path);
        s.frames.data().segment(t * 3 * h * w, 3 * h * w) = frame.data();
      }

      std::ifstream rle(root / "masks.rle");
      if (!rle) throw SchemaError("missing file " + (root / "masks.rle").string());
      Index rt = 0, rh = 0, rw = 0;
      rle >> rt >> rh >> rw;
      if (rt != frames || rh != h || rw != w) throw SchemaError("mask header mismatch in " + s.id);
      std::string line;
      std::getline(rle, line);
      for (Index t = 0; t < frames; ++t) {
        if (!std::getline(rle, line)) throw SchemaError("truncated masks in " + s.id);
        s.masks.push_back(decode_rle(line, h, w));
      }
      if (static_cast<Index>(s.boxes.size()) != frames) throw SchemaError("box count mismatch in " + s.id);
      data.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("dataset schema: ") + e.what());
  }
  return data;
}

// ---- statistics ------------------------------------------------------------

DatasetStats dataset_stats(const Dataset& data, const EvalConfig& cfg) {
  DatasetStats st;
  st.videos = st.expressions = static_cast<Index>(data.samples.size());
  for (const auto& s : data.samples) {
    st.objects += 1 + static_cast<Index>(s.distractors.size());
    st.scenes.push_back(detect_scenes(s.frames, cfg.scene_threshold));
    const auto occupied = occupied_frames(s.masks);
    const auto present = std::count(occupied.begin(), occupied.end(), 1);
    st.expression_duration.push_back(static_cast<double>(present) / cfg.fps);
    st.video_duration.push_back(static_cast<double>(s.num_frames()) / cfg.fps);
    st.ti.push_back(ti_rate(occupied));
  }
  return st;
}

json stats_to_json(const DatasetStats& s) {
  auto mean = [](const auto& v) {
    double total = 0;
    for (auto x : v) total += static_cast<double>(x);
    return v.empty() ? 0.0 : total / static_cast<double>(v.size());
  };
  return {{"videos", s.videos},
          {"objects", s.objects},
          {"expressions", s.expressions},
          {"scenes_per_video", mean(s.scenes)},
          {"dur_e", mean(s.expression_duration)},
          {"dur_v", mean(s.video_duration)},
          {"ti", mean(s.ti)},
          {"per_video", {{"scenes", s.scenes}, {"dur_e", s.expression_duration}, {"dur_v", s.video_duration}, {"ti", s.ti}}}};
}

// ---- predictions -----------------------------------------------------------

void write_predictions(const std::vector<PredictionRecord>& preds, const std::string& path) {
  json j;
  j["version"] = kDatasetVersion;
  j["predictions"] = json::array();
  for (const auto& p : preds) {
    const Index h = p.masks.empty() ? 0 : p.masks[0].rows(), w = p.masks.empty() ? 0 : p.masks[0].cols();
    json masks = json::array();
    for (const auto& m : p.masks) masks.push_back(encode_rle(m));
    j["predictions"].push_back({{"id", p.id},
                                {"query", p.query},
                                {"span", {p.t_start, p.t_end}},
                                {"scores", p.scores},
                                {"height", h},
                                {"width", w},
                                {"masks", masks}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(1) << '\n';
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  const json j = read_json(path);
  std::vector<PredictionRecord> out;
  try {
    if (j.at("version").get<int>() != kDatasetVersion) throw SchemaError("predictions version mismatch");
    for (const auto& r : j.at("predictions")) {
      PredictionRecord p;
      p.id = r.at("id").get<std::string>();
      p.query = r.at("query").get<Index>();
      p.t_start = r.at("span").at(0).get<Index>();
      p.t_end = r.at("span").at(1).get<Index>();
      p.scores = r.at("scores").get<std::vector<double>>();
      const Index h = r.at("height").get<Index>(), w = r.at("width").get<Index>();
      for (const auto& line : r.at("masks")) p.masks.push_back(decode_rle(line.get<std::string>(), h, w));
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("predictions schema: ") + e.what());
  }
  return out;
}

bool operator==(const PredictionRecord& a, const PredictionRecord& b) {
  if (a.id != b.id || a.query != b.query || a.t_start != b.t_start || a.t_end != b.t_end || a.scores != b.scores ||
      a.masks.size() != b.masks.size())
    return false;
  for (std::size_t i = 0; i < a.masks.size(); ++i)
    if (a.masks[i].rows() != b.masks[i].rows() || a.masks[i].cols() != b.masks[i].cols() || (a.masks[i] != b.masks[i]).any())
      return false;
  return true;
}

}  // namespace omf
