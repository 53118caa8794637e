#include "mpser/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mpser/errors.hpp"

namespace mpser {

namespace {

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v +
                      "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_size(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

#define STR_FIELD(name)                                                       \
  Field {                                                                     \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = v; },     \
        [](const ExperimentConfig& c) { return c.name; }                      \
  }
#define SIZE_FIELD(name)                                                      \
  Field {                                                                     \
    #name,                                                                    \
        [](ExperimentConfig& c, const std::string& v) {                       \
          c.name = parse_size(#name, v);                                      \
        },                                                                    \
        [](const ExperimentConfig& c) { return std::to_string(c.name); }      \
  }
#define DOUBLE_FIELD(name)                                                    \
  Field {                                                                     \
    #name,                                                                    \
        [](ExperimentConfig& c, const std::string& v) {                       \
          c.name = parse_double(#name, v);                                    \
        },                                                                    \
        [](const ExperimentConfig& c) { return fmt_double(c.name); }          \
  }
#define BOOL_FIELD(name)                                                      \
  Field {                                                                     \
    #name,                                                                    \
        [](ExperimentConfig& c, const std::string& v) {                       \
          c.name = parse_bool(#name, v);                                      \
        },                                                                    \
        [](const ExperimentConfig& c) { return c.name ? "true" : "false"; }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      STR_FIELD(scenario),
      STR_FIELD(upstream),
      STR_FIELD(manifest),
      STR_FIELD(embeddings),
      STR_FIELD(out_dir),
      STR_FIELD(test_annotator),
      STR_FIELD(val_annotator),
      SIZE_FIELD(hidden),
      DOUBLE_FIELD(cb_beta),
      SIZE_FIELD(train_steps),
      SIZE_FIELD(test_steps),
      SIZE_FIELD(shots),
      SIZE_FIELD(query),
      SIZE_FIELD(meta_batch),
      SIZE_FIELD(outer_steps),
      SIZE_FIELD(val_interval),
      DOUBLE_FIELD(inner_rate),
      DOUBLE_FIELD(outer_rate),
      DOUBLE_FIELD(first_order_fraction),
      DOUBLE_FIELD(weight_decay),
      BOOL_FIELD(ini),
      BOOL_FIELD(csmt),
      BOOL_FIELD(da),
      BOOL_FIELD(lslr),
      SIZE_FIELD(pretrain_epochs),
      SIZE_FIELD(pretrain_batch),
      DOUBLE_FIELD(pretrain_rate),
      STR_FIELD(methods),
      Field{"shot_sweep",
            [](ExperimentConfig& c, const std::string& v) {
              c.shot_sweep = parse_size_list("shot_sweep", v);
            },
            [](const ExperimentConfig& c) { return fmt_list(c.shot_sweep); }},
      SIZE_FIELD(seeds),
      DOUBLE_FIELD(finetune_rate),
      Field{"seed",
            [](ExperimentConfig& c, const std::string& v) {
              c.seed = static_cast<std::uint64_t>(parse_size("seed", v));
            },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      STR_FIELD(synth_preset),
      SIZE_FIELD(synth_annotators),
      SIZE_FIELD(synth_samples),
      DOUBLE_FIELD(synth_agreement),
      DOUBLE_FIELD(synth_separation),
  };
  return table;
}

#undef STR_FIELD
#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.scenario != "seen" && cfg.scenario != "unseen") {
    throw ConfigError("config key 'scenario': must be 'seen' or 'unseen', got '" + cfg.scenario +
                      "'");
  }
  if (cfg.cb_beta < 0.0 || cfg.cb_beta >= 1.0) {
    throw ConfigError("config key 'cb_beta': must be in [0, 1)");
  }
  if (cfg.first_order_fraction < 0.0 || cfg.first_order_fraction > 1.0) {
    throw ConfigError("config key 'first_order_fraction': must be in [0, 1]");
  }
  if (cfg.train_steps == 0) throw ConfigError("config key 'train_steps': must be >= 1");
  if (cfg.shots == 0) throw ConfigError("config key 'shots': must be >= 1");
  if (cfg.meta_batch == 0) throw ConfigError("config key 'meta_batch': must be >= 1");
  if (cfg.seeds == 0) throw ConfigError("config key 'seeds': must be >= 1");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = parse_config_text(buf.str());
  return apply_overrides(std::move(cfg), overrides);
}

ExperimentConfig apply_overrides(ExperimentConfig cfg, const std::vector<std::string>& overrides) {
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + kv + "': expected key=value");
    }
    set_key(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

std::string config_text(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  for (const Field& f : fields()) kv.emplace_back(f.key, f.get(cfg));
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  const std::string text = config_text(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mpser
