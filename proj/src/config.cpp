#include "omf/config.hpp"

#include <fstream>

namespace omf {

void ModelConfig::validate() const {
  if (num_scales < 2) throw ConfigError("num_scales must be at least 2");
  if (static_cast<int>(scale_channels.size()) != num_scales)
    throw ConfigError("scale_channels must list one width per scale");
  if (stem_stride < 1) throw ConfigError("stem_stride must be positive");
  if (text_dim < 2 || text_dim % 4 != 0) throw ConfigError("text_dim must be a positive multiple of 4");
  if (num_heads < 1 || text_dim % num_heads != 0) throw ConfigError("num_heads must divide text_dim");
  if (num_queries < 1) throw ConfigError("num_queries must be positive");
  if (vocab_size < 1 || max_query_len < 1) throw ConfigError("vocabulary and query length must be positive");
  if (mask_dim < 1 || dynamic_hidden < 1) throw ConfigError("mask head widths must be positive");
  if (temporal_layers < 0 || srd_layers < 1) throw ConfigError("layer counts out of range");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    RunConfig config = nlohmann::json::parse(in).get<RunConfig>();
    config.model.validate();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path + ": " + e.what());
  }
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path);
  out << nlohmann::json(config).dump(2) << '\n';
}

}  // namespace omf
