// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wid/models.hpp"
#include "wid/train.hpp"

namespace wid {

// ---------------------------------------------------------------------------
// Flat key=value configuration. One `key = value` pair per line, `#` comments,
// whitespace-insensitive; later lines override earlier ones. The same keys are
// exposed as CLI flags, and flags override the file.

inline std::vector<std::pair<std::string, std::string>> parse_kv_text(
    const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    pairs.emplace_back(key, value);
  }
  return pairs;
}

inline std::vector<std::pair<std::string, std::string>> load_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::ostringstream body;
  body << f.rdbuf();
  return parse_kv_text(body.str(), path);
}

// ---------------------------------------------------------------------------

inline std::string normalize_arch(std::string a) {
  for (auto& c : a) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (a == "sa" || a == "sa-net" || a == "sanet") return "sa";
  if (a == "msrf" || a == "msrf-net" || a == "msrf-classification") return "msrf";
  if (a == "patch" || a == "patchnet" || a == "patch-net") return "patch";
  throw ConfigError("unknown architecture '" + a + "' (expected sa|msrf|patch)");
}

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  std::string manifest;
  std::string out_dir;
  std::string checkpoint;
  std::string image;
  std::string level = "word";
  bool csv = false;
  bool writers_given = false;  // --writers pins num_writers; otherwise the dataset decides
  int synth_writers = 10, synth_words_per_page = 20, synth_pages = 2;
};

namespace detail {

inline std::int64_t kv_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + value + "'");
  }
}

inline double kv_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + value + "'");
  }
}

inline std::vector<std::int64_t> kv_int_list(const std::string& key, const std::string& value) {
  std::vector<std::int64_t> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t comma = value.find(',', start);
    const std::string item = trim(value.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start));
    out.push_back(kv_int(key, item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

// Applies one configuration pair; same vocabulary for files and CLI flags.
inline void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  if (key == "arch") rc.net.arch = normalize_arch(value);
  else if (key == "writers" || key == "num_writers") {
    rc.net.num_writers = detail::kv_int(key, value);
    rc.writers_given = true;
  }
  else if (key == "input_h") rc.net.input_h = detail::kv_int(key, value);
  else if (key == "input_w") rc.net.input_w = detail::kv_int(key, value);
  else if (key == "widths") rc.net.widths = detail::kv_int_list(key, value);
  else if (key == "patch_widths") rc.net.patch_widths = detail::kv_int_list(key, value);
  else if (key == "growth_msrf") rc.net.growth_msrf = detail::kv_int(key, value);
  else if (key == "growth_patch") rc.net.growth_patch = detail::kv_int(key, value);
  else if (key == "init_seed") rc.net.init_seed =
      static_cast<std::uint64_t>(detail::kv_int(key, value));
  else if (key == "batch_size") rc.train.batch_size = detail::kv_int(key, value);
  else if (key == "epochs") rc.train.epochs = static_cast<int>(detail::kv_int(key, value));
  else if (key == "lr") rc.train.lr = detail::kv_double(key, value);
  else if (key == "weight_decay") rc.train.weight_decay = detail::kv_double(key, value);
  else if (key == "lr_decay_factor") rc.train.lr_decay_factor = detail::kv_double(key, value);
  else if (key == "lr_decay_every")
    rc.train.lr_decay_every = static_cast<int>(detail::kv_int(key, value));
  else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(detail::kv_int(key, value));
  else if (key == "manifest") rc.manifest = value;
  else if (key == "out_dir") rc.out_dir = value;
  else if (key == "level") {
    if (value != "word" && value != "page")
      throw ConfigError("level must be word|page, got '" + value + "'");
    rc.level = value;
  }
  else if (key == "synth_writers") rc.synth_writers = static_cast<int>(detail::kv_int(key, value));
  else if (key == "synth_words_per_page")
    rc.synth_words_per_page = static_cast<int>(detail::kv_int(key, value));
  else if (key == "synth_pages") rc.synth_pages = static_cast<int>(detail::kv_int(key, value));
  else throw ConfigError("unknown config key '" + key + "'");
}

// ---------------------------------------------------------------------------
// Canonical architecture-config serialization: embedded in checkpoints so
// evaluation rebuilds the exact network that was trained.

inline std::string join_int_list(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::map<std::string, std::string> net_config_kv(const NetConfig& nc) {
  return {
      {"config.arch", nc.arch},
      {"config.num_writers", std::to_string(nc.num_writers)},
      {"config.input_h", std::to_string(nc.input_h)},
      {"config.input_w", std::to_string(nc.input_w)},
      {"config.widths", join_int_list(nc.widths)},
      {"config.patch_widths", join_int_list(nc.patch_widths)},
      {"config.growth_msrf", std::to_string(nc.growth_msrf)},
      {"config.growth_patch", std::to_string(nc.growth_patch)},
      {"config.init_seed", std::to_string(nc.init_seed)},
  };
}

inline NetConfig net_config_from_kv(const std::map<std::string, std::string>& kv,
                                    const std::string& origin) {
  NetConfig nc;
  const auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(origin + ": missing checkpoint key '" + key + "'");
    return it->second;
  };
  nc.arch = need("config.arch");
  nc.num_writers = detail::kv_int("num_writers", need("config.num_writers"));
  nc.input_h = detail::kv_int("input_h", need("config.input_h"));
  nc.input_w = detail::kv_int("input_w", need("config.input_w"));
  nc.widths = detail::kv_int_list("widths", need("config.widths"));
  nc.patch_widths = detail::kv_int_list("patch_widths", need("config.patch_widths"));
  nc.growth_msrf = detail::kv_int("growth_msrf", need("config.growth_msrf"));
  nc.growth_patch = detail::kv_int("growth_patch", need("config.growth_patch"));
  nc.init_seed = static_cast<std::uint64_t>(detail::kv_int("init_seed", need("config.init_seed")));
  nc.validate();
  return nc;
}

inline std::string config_hash(const NetConfig& nc) {
  std::string blob;
  for (const auto& [k, v] : net_config_kv(nc)) blob += k + "=" + v + "\n";
  return hex64(fnv1a(blob));
}

}  // namespace wid
