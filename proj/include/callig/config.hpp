#pragma once

// Run configuration: one TOML-style file (a subset: [section] headers,
// key = value lines, strings, integers, floats, booleans, flat arrays, '#'
// comments) plus CALLIG_<SECTION>_<KEY> environment overrides. Unknown keys
// are rejected.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "callig/ablation.hpp"
#include "callig/dataset.hpp"
#include "callig/eval.hpp"
#include "callig/fsutil.hpp"
#include "callig/training.hpp"

namespace callig {

struct ConfigValue {
  std::variant<bool, std::int64_t, double, std::string, std::vector<ConfigValue>> v;
};

namespace detail {

class ValueParser {
 public:
  ValueParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

  ConfigValue parse_all() {
    ConfigValue v = value();
    skip_space();
    if (pos_ != s_.size()) fail("unexpected trailing characters");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + ": " + msg); }

  void skip_space() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  ConfigValue value() {
    skip_space();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return {string()};
    if (c == '[') return {array()};
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return {true};
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return {false};
    }
    return number();
  }

  std::string string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\') {
        if (++pos_ >= s_.size()) break;
        const char e = s_[pos_];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += s_[pos_];
      }
      ++pos_;
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  std::vector<ConfigValue> array() {
    ++pos_;
    std::vector<ConfigValue> out;
    skip_space();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return out;
    }
    for (;;) {
      out.push_back(value());
      skip_space();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ']') {
        ++pos_;
        return out;
      }
      if (s_[pos_] != ',') fail("expected ',' in array");
      ++pos_;
      skip_space();
      if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        return out;
      }
    }
  }

  ConfigValue number() {
    std::size_t end = pos_;
    while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '+' || s_[end] == '-' ||
                               s_[end] == '.' || s_[end] == '_'))
      ++end;
    std::string tok;
    for (char c : s_.substr(pos_, end - pos_))
      if (c != '_') tok += c;
    if (tok.empty()) fail("invalid value");
    pos_ = end;
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
    if (!is_float) {
      std::int64_t i = 0;
      const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(first, tok.data() + tok.size(), i);
      if (ec == std::errc() && p == tok.data() + tok.size()) return {i};
      fail("invalid integer '" + tok + "'");
    }
    char* stop = nullptr;
    const double d = std::strtod(tok.c_str(), &stop);
    if (stop != tok.c_str() + tok.size()) fail("invalid number '" + tok + "'");
    return {d};
  }

  std::string_view s_;
  std::string where_;
  std::size_t pos_ = 0;
};

inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string format_value(const ConfigValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(x);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(x);
        } else if constexpr (std::is_same_v<T, std::string>) {
          std::string out = "\"";
          for (char c : x) {
            if (c == '"' || c == '\\') out += '\\';
            out += c;
          }
          return out + "\"";
        } else {
          std::string out = "[";
          for (std::size_t i = 0; i < x.size(); ++i) out += (i ? ", " : "") + format_value(x[i]);
          return out + "]";
        }
      },
      v.v);
}

}  // namespace detail

// section -> key -> value.
using ConfigDocument = std::map<std::string, std::map<std::string, ConfigValue>>;

inline ConfigDocument parse_config_text(const std::string& text, const std::string& source) {
  ConfigDocument doc;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = detail::trim(detail::strip_comment(text.substr(start, end - start)));
    start = end + 1;
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of a section");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (doc[section].contains(key)) throw ConfigError(where + ": duplicate key " + section + "." + key);
    doc[section][key] = detail::ValueParser(detail::trim(line.substr(eq + 1)), where).parse_all();
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Run configuration

struct DataConfig {
  std::string dataset;  // directory; empty = generate from `templates`
  std::vector<std::string> templates{"line1"};
  std::size_t count = 1;
  std::uint64_t seed = 1;
  double jitter = 0.01;
};

struct EvalConfig {
  RolloutOptions rollout;
  double iou_threshold = 0.5;
  std::vector<std::string> templates;  // empty = the training templates
  std::uint64_t seed = 1000003;        // style seed of the held-out evaluation demos
};

struct AblateConfig {
  std::vector<std::string> variants{"full", "no_bilstm", "no_variational", "resnet_only", "no_image_aug", "no_pose_aug"};
};

struct RunConfig {
  std::uint64_t seed = 1;
  bool deterministic = false;
  SimConfig sim;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  AblateConfig ablate;

  // Copies shared settings into the nested configs.
  void finalize() {
    train.seed = seed;
    train.deterministic = deterministic;
    train.model.image_channels = sim.image_channels;
    train.model.image_height = sim.image_height;
    train.model.image_width = sim.image_width;
    eval.rollout.noise = train.augment;
    eval.rollout.noise_seed = derive_seed(seed, "rollout");
  }

  void validate() const {
    sim.validate();
    train.validate();
    train.model.check_compatible(sim);
    if (data.dataset.empty()) {
      if (data.templates.empty()) throw ConfigError("data: need a dataset path or templates");
      for (const auto& t : data.templates) find_template(t);
      if (data.count < 1) throw ConfigError("data: count must be >= 1");
    }
    if (data.jitter < 0.0) throw ConfigError("data: jitter must be >= 0");
    for (const auto& t : eval.templates) find_template(t);
    if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0)) throw ConfigError("eval: iou_threshold must be in (0,1]");
    if (!(eval.rollout.bound_low < eval.rollout.bound_high)) throw ConfigError("eval: bound_low must be below bound_high");
    for (const auto& v : ablate.variants) parse_variant(v);
  }
};

namespace detail {

struct ConfigField {
  std::string section, key;
  std::function<void(const ConfigValue&, const std::string& where)> set;
  std::function<ConfigValue()> get;
};

[[noreturn]] inline void type_error(const std::string& where, const char* expected) {
  throw ConfigError(where + ": expected " + expected);
}

inline double as_double(const ConfigValue& v, const std::string& where) {
  if (const auto* d = std::get_if<double>(&v.v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v.v)) return static_cast<double>(*i);
  type_error(where, "a number");
}

inline std::int64_t as_int(const ConfigValue& v, const std::string& where) {
  if (const auto* i = std::get_if<std::int64_t>(&v.v)) return *i;
  type_error(where, "an integer");
}

inline std::size_t as_size(const ConfigValue& v, const std::string& where) {
  const auto i = as_int(v, where);
  if (i < 0) type_error(where, "a nonnegative integer");
  return static_cast<std::size_t>(i);
}

inline bool as_bool(const ConfigValue& v, const std::string& where) {
  if (const auto* b = std::get_if<bool>(&v.v)) return *b;
  type_error(where, "true or false");
}

inline std::string as_string(const ConfigValue& v, const std::string& where) {
  if (const auto* s = std::get_if<std::string>(&v.v)) return *s;
  type_error(where, "a string");
}

inline const std::vector<ConfigValue>& as_array(const ConfigValue& v, const std::string& where) {
  if (const auto* a = std::get_if<std::vector<ConfigValue>>(&v.v)) return *a;
  type_error(where, "an array");
}

inline std::vector<ConfigField> config_fields(RunConfig& c) {
  std::vector<ConfigField> f;
  auto num = [&](const char* s, const char* k, double& ref) {
    f.push_back({s, k, [&ref](const ConfigValue& v, const std::string& w) { ref = as_double(v, w); },
                 [&ref] { return ConfigValue{ref}; }});
  };
  auto size = [&](const char* s, const char* k, std::size_t& ref) {
    f.push_back({s, k, [&ref](const ConfigValue& v, const std::string& w) { ref = as_size(v, w); },
                 [&ref] { return ConfigValue{static_cast<std::int64_t>(ref)}; }});
  };
  auto u64 = [&](const char* s, const char* k, std::uint64_t& ref) {
    f.push_back({s, k, [&ref](const ConfigValue& v, const std::string& w) { ref = as_size(v, w); },
                 [&ref] { return ConfigValue{static_cast<std::int64_t>(ref)}; }});
  };
  auto integer = [&](const char* s, const char* k, int& ref) {
    f.push_back({s, k, [&ref](const ConfigValue& v, const std::string& w) { ref = static_cast<int>(as_int(v, w)); },
                 [&ref] { return ConfigValue{static_cast<std::int64_t>(ref)}; }});
  };
  auto flag = [&](const char* s, const char* k, bool& ref) {
    f.push_back({s, k, [&ref](const ConfigValue& v, const std::string& w) { ref = as_bool(v, w); },
                 [&ref] { return ConfigValue{ref}; }});
  };
  auto str = [&](const char* s, const char* k, std::string& ref) {
    f.push_back({s, k, [&ref](const ConfigValue& v, const std::string& w) { ref = as_string(v, w); },
                 [&ref] { return ConfigValue{ref}; }});
  };
  auto sizes = [&](const char* s, const char* k, std::vector<std::size_t>& ref) {
    f.push_back({s, k,
                 [&ref](const ConfigValue& v, const std::string& w) {
                   ref.clear();
                   for (const auto& e : as_array(v, w)) ref.push_back(as_size(e, w));
                 },
                 [&ref] {
                   std::vector<ConfigValue> a;
                   for (auto x : ref) a.push_back({static_cast<std::int64_t>(x)});
                   return ConfigValue{a};
                 }});
  };
  auto strs = [&](const char* s, const char* k, std::vector<std::string>& ref) {
    f.push_back({s, k,
                 [&ref](const ConfigValue& v, const std::string& w) {
                   ref.clear();
                   for (const auto& e : as_array(v, w)) ref.push_back(as_string(e, w));
                 },
                 [&ref] {
                   std::vector<ConfigValue> a;
                   for (const auto& x : ref) a.push_back({x});
                   return ConfigValue{a};
                 }});
  };

  u64("run", "seed", c.seed);
  flag("run", "deterministic", c.deterministic);

  str("data", "dataset", c.data.dataset);
  strs("data", "templates", c.data.templates);
  size("data", "count", c.data.count);
  u64("data", "seed", c.data.seed);
  num("data", "jitter", c.data.jitter);

  auto& s = c.sim;
  size("sim", "image_channels", s.image_channels);
  size("sim", "image_height", s.image_height);
  size("sim", "image_width", s.image_width);
  num("sim", "footprint_radius_px", s.footprint_radius_px);
  num("sim", "travel_height", s.travel_height);
  num("sim", "contact_threshold", s.contact_threshold);
  size("sim", "lift_steps", s.lift_steps);
  size("sim", "descend_steps", s.descend_steps);
  num("sim", "travel_step", s.travel_step);
  size("sim", "hold_steps", s.hold_steps);
  num("sim", "marker_length", s.marker_length);
  num("sim", "marker_half_width_px", s.marker_half_width_px);
  num("sim", "cue_radius_px", s.cue_radius_px);

  auto& m = c.train.model;
  size("model", "latent_dim", m.latent_dim);
  sizes("model", "stage_channels", m.stage_channels);
  size("model", "pyramid_channels", m.pyramid_channels);
  size("model", "pyramid_levels", m.pyramid_levels);
  sizes("model", "pose_widths", m.pose_widths);
  size("model", "fusion_width", m.fusion_width);
  size("model", "lstm_hidden", m.lstm_hidden);
  size("model", "window", m.window);
  sizes("model", "decoder_channels", m.decoder_channels);
  sizes("model", "pose_head_widths", m.pose_head_widths);
  size("model", "mc_samples", m.mc_samples);
  num("model", "log_sigma_min", m.log_sigma_min);
  num("model", "log_sigma_max", m.log_sigma_max);
  flag("model", "bidirectional", m.bidirectional);
  flag("model", "variational", m.variational);
  flag("model", "feature_pyramid", m.feature_pyramid);
  num("model", "lambda_mae_translation", m.weights.mae_translation);
  num("model", "lambda_mse_translation", m.weights.mse_translation);
  num("model", "lambda_mae_rotation", m.weights.mae_rotation);
  num("model", "lambda_mse_rotation", m.weights.mse_rotation);
  num("model", "lambda_mse_image", m.weights.mse_image);
  num("model", "lambda_kl", m.weights.kl);

  auto& a = c.train.augment;
  num("augment", "sigma_translation", a.sigma_translation);
  num("augment", "sigma_rotation", a.sigma_rotation);
  integer("augment", "shift_max", a.shift_max);
  num("augment", "brightness_range", a.brightness_range);
  num("augment", "saturation_range", a.saturation_range);
  num("augment", "hue_range", a.hue_range);
  flag("augment", "enable_pose", a.enable_pose);
  flag("augment", "enable_shift", a.enable_shift);
  flag("augment", "enable_brightness", a.enable_brightness);
  flag("augment", "enable_saturation", a.enable_saturation);
  flag("augment", "enable_hue", a.enable_hue);
  flag("augment", "noisy_targets", a.noisy_targets);

  auto& t = c.train;
  size("train", "batch_size", t.batch_size);
  size("train", "steps", t.steps);
  num("train", "learning_rate", t.learning_rate);
  num("train", "beta1", t.beta1);
  num("train", "beta2", t.beta2);
  num("train", "epsilon", t.epsilon);
  num("train", "clip_norm", t.clip_norm);
  size("train", "checkpoint_interval", t.checkpoint_interval);
  size("train", "patience", t.patience);
  num("train", "convergence_threshold", t.convergence_threshold);

  auto& e = c.eval;
  size("eval", "max_steps", e.rollout.max_steps);
  num("eval", "completion_tolerance", e.rollout.completion_tolerance);
  size("eval", "completion_steps", e.rollout.completion_steps);
  num("eval", "bound_low", e.rollout.bound_low);
  num("eval", "bound_high", e.rollout.bound_high);
  flag("eval", "pose_noise", e.rollout.pose_noise);
  flag("eval", "image_noise", e.rollout.image_noise);
  num("eval", "iou_threshold", e.iou_threshold);
  strs("eval", "templates", e.templates);
  u64("eval", "seed", e.seed);

  strs("ablate", "variants", c.ablate.variants);
  return f;
}

inline std::string env_name(const std::string& section, const std::string& key) {
  std::string out = "CALLIG_";
  for (char ch : section + "_" + key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace detail

// Applies a parsed document, then environment overrides, then finalizes and
// validates. `env` looks up a variable; nullptr means "not set".
inline RunConfig build_run_config(const ConfigDocument& doc, const std::string& source,
                                  const std::function<const char*(const char*)>& env = [](const char* n) {
                                    return std::getenv(n);
                                  }) {
  RunConfig cfg;
  auto fields = detail::config_fields(cfg);
  for (const auto& [section, keys] : doc) {
    if (std::none_of(fields.begin(), fields.end(), [&](const auto& fd) { return fd.section == section; })) {
      throw ConfigError(source + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : keys) {
      const auto it = std::find_if(fields.begin(), fields.end(),
                                   [&](const auto& fd) { return fd.section == section && fd.key == key; });
      if (it == fields.end()) throw ConfigError(source + ": unknown key " + section + "." + key);
      it->set(value, source + ": " + section + "." + key);
    }
  }
  for (auto& fd : fields) {
    const std::string name = detail::env_name(fd.section, fd.key);
    const char* raw = env(name.c_str());
    if (!raw) continue;
    ConfigValue v;
    try {
      v = detail::ValueParser(raw, name).parse_all();
    } catch (const ConfigError&) {
      v = {std::string(raw)};  // bare strings are accepted from the environment
    }
    fd.set(v, name);
  }
  if (const char* d = env("CALLIG_DETERMINISTIC"); d && std::string(d) == "1") cfg.deterministic = true;
  cfg.finalize();
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const fs::path& path) {
  return build_run_config(parse_config_text(read_file(path), path.string()), path.string());
}

// Canonical text form: every key, fixed order, round-trips through
// parse_config_text + build_run_config.
inline std::string canonical_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  std::string section;
  for (const auto& fd : detail::config_fields(copy)) {
    if (fd.section != section) {
      out += (section.empty() ? "[" : "\n[") + fd.section + "]\n";
      section = fd.section;
    }
    out += fd.key + " = " + detail::format_value(fd.get()) + "\n";
  }
  return out;
}

}  // namespace callig
