// Command-line driver: gen, train, infer, eval, stats, ablate.

#include "omf/dataset.hpp"
#include "omf/metrics.hpp"
#include "omf/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace omf;

namespace {

enum Exit { kOk = 0, kConfigError = 2, kDataError = 3, kNumericError = 4 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  bool no_span = false, no_rel = false, coupled_srd = false;
  std::optional<int> t_train, steps;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "RunConfig JSON");
  cmd->add_option("--seed", o.seed, "Run seed");
}

void add_training(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--precision", o.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_flag("--no-span", o.no_span, "Disable the span loss; predict whole-clip spans");
  cmd->add_flag("--no-rel", o.no_rel, "Disable the relevance loss");
  cmd->add_flag("--coupled-srd", o.coupled_srd, "Joint self-attention SRD instead of two branches");
  cmd->add_option("--t-train", o.t_train, "Frames per training clip")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", o.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.precision) cfg.precision = *o.precision;
  if (o.no_span) cfg.train.span_enabled = false;
  if (o.no_rel) cfg.train.rel_enabled = false;
  if (o.coupled_srd) cfg.model.coupled_srd = true;
  if (o.t_train) cfg.train.t_train = *o.t_train;
  if (o.steps) cfg.train.steps = *o.steps;
  if (cfg.precision != "f32" && cfg.precision != "f64") throw ConfigError("precision must be f32 or f64");
  cfg.model.validate();
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

// ---- train / infer ---------------------------------------------------------

template <typename Scalar>
void train_run(const RunConfig& cfg, const std::vector<VideoSample>& data, const std::string& out_dir) {
  ensure_dir(out_dir);
  save_run_config(cfg, out_dir + "/config.json");
  auto params = init_parameters<Scalar>(cfg.model, cfg.seed);

  std::ofstream curve(out_dir + "/loss_curve.csv");
  curve << "step,sample,clip_start,matched,total,cls,box,mask,span,rel\n";
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train<Scalar>(cfg, data, std::move(params), [&](const LossRecord& r) {
    char line[256];
    std::snprintf(line, sizeof line, "%d,%ld,%ld,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, long(r.sample),
                  long(r.clip_start), long(r.matched), r.total, r.cls, r.box, r.mask, r.span, r.rel);
    curve << line;
    if (cfg.train.log_every > 0 && (r.step + 1) % cfg.train.log_every == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %d  loss %.4f  (%.0fs)\n", r.step + 1, r.total, s);
    }
  });
  save_parameters(result.params, out_dir + "/params.bin");
  if (result.matching_checks > 0) std::fprintf(stderr, "matching verified on %d steps\n", result.matching_checks);
}

template <typename Scalar>
std::vector<PredictionRecord> infer_all(const RunConfig& cfg, const ParameterSet<Scalar>& params,
                                        const std::vector<VideoSample>& data) {
  std::vector<PredictionRecord> out;
  for (const auto& s : data) out.push_back(infer_sample(params, cfg, s));
  return out;
}

std::vector<PredictionRecord> infer_checkpoint(const std::string& run_dir, const std::vector<VideoSample>& data) {
  const RunConfig cfg = load_run_config(run_dir + "/config.json");
  if (cfg.precision == "f32") return infer_all(cfg, load_parameters<float>(run_dir + "/params.bin"), data);
  return infer_all(cfg, load_parameters<double>(run_dir + "/params.bin"), data);
}

MetricsReport evaluate(const std::vector<PredictionRecord>& preds, const Dataset& data, const EvalConfig& eval) {
  std::map<std::string, const VideoSample*> by_id;
  for (const auto& s : data.samples) by_id[s.id] = &s;
  std::vector<ExpressionMetrics> metrics;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) throw SchemaError("prediction for unknown sample " + p.id);
    FinalOutput fo;
    fo.query = p.query, fo.t_start = p.t_start, fo.t_end = p.t_end, fo.masks = p.masks;
    metrics.push_back(evaluate_expression(fo, it->second->masks, eval, p.id));
  }
  if (metrics.size() != data.samples.size()) throw SchemaError("predictions do not cover the dataset");
  return grouped_report(metrics);
}

// ---- commands --------------------------------------------------------------

int cmd_gen(const Overrides& o, const std::string& out, bool ti_suite) {
  RunConfig cfg = resolve(o);
  if (ti_suite && cfg.synth.ti_targets.empty())
    cfg.synth.ti_targets = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto samples = generate_dataset(cfg.seed, cfg.synth);
  write_dataset(samples, out, cfg.synth.frame_format);
  std::printf("wrote %zu samples to %s\n", samples.size(), out.c_str());
  return kOk;
}

int cmd_train(const Overrides& o, const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = resolve(o);
  const auto data = read_dataset(data_dir);
  if (cfg.precision == "f32")
    train_run<float>(cfg, data.samples, out);
  else
    train_run<double>(cfg, data.samples, out);
  std::printf("checkpoint written to %s\n", out.c_str());
  return kOk;
}

int cmd_infer(const std::string& run_dir, const std::string& data_dir, const std::string& out) {
  const auto data = read_dataset(data_dir);
  write_predictions(infer_checkpoint(run_dir, data.samples), out);
  std::printf("predictions written to %s\n", out.c_str());
  return kOk;
}

int cmd_eval(const Overrides& o, const std::string& preds_path, const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = resolve(o);
  const auto report = evaluate(read_predictions(preds_path), read_dataset(data_dir), cfg.eval);
  std::cout << report_table(report);
  if (!out.empty()) write_json(report_to_json(report), out);
  return kOk;
}

int cmd_stats(const Overrides& o, const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = resolve(o);
  const auto j = stats_to_json(dataset_stats(read_dataset(data_dir), cfg.eval));
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) write_json(j, out);
  return kOk;
}

int cmd_ablate(const Overrides& o, const std::string& data_dir, const std::string& out,
               const std::vector<int>& t_train_sweep) {
  const RunConfig base = resolve(Overrides{o.config, o.seed, o.precision, false, false, false, o.t_train, o.steps});
  struct Variant {
    std::string name;
    RunConfig cfg;
  };
  std::vector<Variant> variants = {{"full", base}};
  const bool any = o.no_span || o.no_rel || o.coupled_srd || !t_train_sweep.empty();
  if (o.no_span || !any) {
    variants.push_back({"no-span", base});
    variants.back().cfg.train.span_enabled = false;
  }
  if (o.no_rel || !any) {
    variants.push_back({"no-rel", base});
    variants.back().cfg.train.rel_enabled = false;
  }
  if (o.coupled_srd || !any) {
    variants.push_back({"coupled-srd", base});
    variants.back().cfg.model.coupled_srd = true;
  }
  for (int t : t_train_sweep) {
    variants.push_back({"t-train-" + std::to_string(t), base});
    variants.back().cfg.train.t_train = t;
  }

  const auto data = read_dataset(data_dir);
  ensure_dir(out);
  nlohmann::json summary = nlohmann::json::array();
  std::string table = "variant          J&F     J       F       tIoU\n";
  for (const auto& v : variants) {
    const std::string dir = out + "/" + v.name;
    std::fprintf(stderr, "== %s\n", v.name.c_str());
    if (v.cfg.precision == "f32")
      train_run<float>(v.cfg, data.samples, dir);
    else
      train_run<double>(v.cfg, data.samples, dir);
    const auto preds = infer_checkpoint(dir, data.samples);
    write_predictions(preds, dir + "/predictions.json");
    const auto report = evaluate(preds, data, v.cfg.eval);
    write_json(report_to_json(report), dir + "/report.json");
    const auto& g = report.overall;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %6.1f  %6.1f  %6.1f  %6.1f\n", v.name.c_str(), 100 * g.jf, 100 * g.j,
                  100 * g.f, 100 * g.tiou);
    table += line;
    summary.push_back({{"variant", v.name}, {"jf", g.jf}, {"j", g.j}, {"f", g.f}, {"tiou", g.tiou}});
  }
  write_json(summary, out + "/ablation.json");
  std::ofstream(out + "/ablation.txt") << table;
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring segmentation of untrimmed synthetic videos"};
  app.require_subcommand(1);
  Overrides o;
  std::string out, data_dir, run_dir, preds;
  bool ti_suite = false;
  std::vector<int> sweep;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, o);
  gen->add_option("--out", out, "Dataset directory")->required();
  gen->add_flag("--ti-suite", ti_suite, "One sample per TI rate 0, 0.1, ..., 0.9");

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, o);
  add_training(tr, o);
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Run directory")->required();

  auto* inf = app.add_subcommand("infer", "Predict masks and spans");
  inf->add_option("--checkpoint", run_dir, "Run directory written by train")->required();
  inf->add_option("--data", data_dir, "Dataset directory")->required();
  inf->add_option("--out", out, "Predictions JSON")->required();

  auto* ev = app.add_subcommand("eval", "Score predictions");
  add_common(ev, o);
  ev->add_option("--predictions", preds, "Predictions JSON")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--out", out, "Report JSON");

  auto* st = app.add_subcommand("stats", "Dataset statistics");
  add_common(st, o);
  st->add_option("--data", data_dir, "Dataset directory")->required();
  st->add_option("--out", out, "Statistics JSON");

  auto* ab = app.add_subcommand("ablate", "Train and score ablation variants");
  add_common(ab, o);
  add_training(ab, o);
  ab->add_option("--data", data_dir, "Dataset directory")->required();
  ab->add_option("--out", out, "Output directory")->required();
  ab->add_option("--t-train-sweep", sweep, "Extra runs at these clip lengths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_gen(o, out, ti_suite);
    if (*tr) return cmd_train(o, data_dir, out);
    if (*inf) return cmd_infer(run_dir, data_dir, out);
    if (*ev) return cmd_eval(o, preds, data_dir, out);
    if (*st) return cmd_stats(o, data_dir, out);
    if (*ab) return cmd_ablate(o, data_dir, out, sweep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NonFiniteError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const VocabError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
