#include "relpose/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "relpose/error.hpp"

namespace relpose {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad integer '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad number '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw ConfigError("key '" + key + "': bad boolean '" + v + "'");
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(line_no) +
                        ": empty key or value");

    if (key == "data.manifest") cfg.manifest = value;
    else if (key == "data.convention") {
      if (value == "rectified") cfg.convention = data::Convention::kRectified;
      else if (value == "erroneous")
        cfg.convention = data::Convention::kErroneous;
      else
        throw ConfigError("key 'data.convention': expected "
                          "rectified|erroneous, got '" + value + "'");
    } else if (key == "data.swap_pairs") cfg.swap_pairs = to_bool(key, value);
    else if (key == "data.split") {
      std::istringstream vs(value);
      if (!(vs >> cfg.split_ratios[0] >> cfg.split_ratios[1] >>
            cfg.split_ratios[2]))
        throw ConfigError("key 'data.split': expected three ratios");
    } else if (key == "data.split_seed")
      cfg.split_seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "extractor.in_channels")
      cfg.model.extractor.in_channels = to_int(key, value);
    else if (key == "extractor.channels")
      cfg.model.extractor.channels = to_int(key, value);
    else if (key == "extractor.layers")
      cfg.model.extractor.layers = to_int(key, value);
    else if (key == "extractor.heads")
      cfg.model.extractor.heads = to_int(key, value);
    else if (key == "extractor.conv_widths") {
      std::istringstream vs(value);
      if (!(vs >> cfg.model.extractor.conv_width1 >>
            cfg.model.extractor.conv_width2))
        throw ConfigError("key 'extractor.conv_widths': expected two widths");
    } else if (key == "matcher.temperature")
      cfg.model.temperature = to_double(key, value);
    else if (key == "regressor.block_channels")
      cfg.model.regressor.block_channels = to_int(key, value);
    else if (key == "regressor.hidden")
      cfg.model.regressor.hidden = to_int(key, value);
    else if (key == "regressor.pooling") {
      if (value == "mean")
        cfg.model.regressor.pooling = net::RegressorConfig::Pooling::kMean;
      else if (value == "max")
        cfg.model.regressor.pooling = net::RegressorConfig::Pooling::kMax;
      else
        throw ConfigError("key 'regressor.pooling': expected mean|max, got '" +
                          value + "'");
    } else if (key == "train.epochs") cfg.epochs = to_int(key, value);
    else if (key == "train.lr") cfg.lr = to_double(key, value);
    else if (key == "train.batch") cfg.batch = to_int(key, value);
    else if (key == "train.step_size") cfg.step_size = to_int(key, value);
    else if (key == "train.gamma") cfg.gamma = to_double(key, value);
    else if (key == "train.seed")
      cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "train.resume") cfg.resume = value;
    else if (key == "variant") cfg.model.variant = net::parse_variant(value);
    else if (key == "out_dir") cfg.out_dir = value;
    else
      throw ConfigError("unknown key '" + key + "' at line " +
                        std::to_string(line_no));
  }
  if (cfg.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (cfg.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (cfg.step_size < 1) throw ConfigError("train.step_size must be >= 1");
  if (cfg.lr <= 0) throw ConfigError("train.lr must be positive");
  if (cfg.model.temperature <= 0)
    throw ConfigError("matcher.temperature must be positive");
  cfg.model.extractor.validate();
  cfg.model.regressor.validate();
  return cfg;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_run_config_text(buf.str());
}

void validate_paths(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.manifest.empty())
    throw ConfigError("data.manifest is required");
  if (!fs::exists(cfg.manifest))
    throw ConfigError("data.manifest path does not exist: " + cfg.manifest);
  if (!cfg.resume.empty() && !fs::exists(cfg.resume))
    throw ConfigError("train.resume path does not exist: " + cfg.resume);
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is required");
}

}  // namespace relpose
