#pragma once

// Flat key=value configuration text.
//
// One "key = value" per line; blank lines and lines starting with '#' are
// skipped. Keys are listed in config_keys(); any other key is an error. List
// values are comma separated. model_config_text() writes the model keys
// back in the same syntax (used inside checkpoints).

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/model.hpp"
#include "ducseg/trainer.hpp"

namespace ducseg {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  /// Trailing fraction of the manifest held out for per-epoch validation.
  double val_fraction = 0.2;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

template <class N>
std::string format_number(N v) {
  if constexpr (std::is_floating_point_v<N>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

inline std::string format_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool model = false;  // part of the model definition (stored in checkpoints)
};

}  // namespace detail

/// Every accepted key with its setter and getter.
inline const std::map<std::string, detail::KeyHandler>& config_keys() {
  using detail::format_number;
  using detail::parse_number;
  static const std::map<std::string, detail::KeyHandler> keys = [] {
    std::map<std::string, detail::KeyHandler> k;
    auto num = [&k](const std::string& name, auto access, bool model) {
      using N = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
      k[name] = {[name, access](RunConfig& c, const std::string& v) {
                   access(c) = parse_number<N>(name, v);
                 },
                 [access](const RunConfig& c) {
                   return format_number(access(const_cast<RunConfig&>(c)));
                 },
                 model};
    };
    auto list = [&k](const std::string& name, auto access) {
      k[name] = {[name, access](RunConfig& c, const std::string& v) {
                   access(c) = detail::parse_int_list(name, v);
                 },
                 [access](const RunConfig& c) {
                   return detail::format_list(access(const_cast<RunConfig&>(c)));
                 },
                 true};
    };
    k["decoder"] = {[](RunConfig& c, const std::string& v) { c.model.decoder = parse_decoder(v); },
                    [](const RunConfig& c) { return to_string(c.model.decoder); }, true};
    num("num_classes", [](RunConfig& c) -> int& { return c.model.num_classes; }, true);
    num("backbone.in_channels", [](RunConfig& c) -> int& { return c.model.backbone.in_channels; }, true);
    num("backbone.stem_channels", [](RunConfig& c) -> int& { return c.model.backbone.stem_channels; }, true);
    list("backbone.widths", [](RunConfig& c) -> std::vector<int>& { return c.model.backbone.widths; });
    list("backbone.strides", [](RunConfig& c) -> std::vector<int>& { return c.model.backbone.strides; });
    num("backbone.blocks_per_stage", [](RunConfig& c) -> int& { return c.model.backbone.blocks_per_stage; }, true);
    num("backbone.tap_im", [](RunConfig& c) -> int& { return c.model.backbone.tap_im; }, true);
    num("backbone.tap_il", [](RunConfig& c) -> int& { return c.model.backbone.tap_il; }, true);
    num("duc.guidance_channels", [](RunConfig& c) -> int& { return c.model.duc.guidance_channels; }, true);
    num("duc.guide_stride", [](RunConfig& c) -> int& { return c.model.duc.guide_stride; }, true);
    num("duc.lowres_dilation", [](RunConfig& c) -> int& { return c.model.duc.lowres_dilation; }, true);
    num("duc.out_channels", [](RunConfig& c) -> int& { return c.model.duc.out_channels; }, true);
    num("dlc.reduce_channels", [](RunConfig& c) -> int& { return c.model.dlc.reduce_channels; }, true);
    num("dlc.pre_channels", [](RunConfig& c) -> int& { return c.model.dlc.pre_channels; }, true);
    num("dlc.branch_channels", [](RunConfig& c) -> int& { return c.model.dlc.branch_channels; }, true);
    num("dlc.fuse_channels", [](RunConfig& c) -> int& { return c.model.dlc.fuse_channels; }, true);
    list("dlc.rates", [](RunConfig& c) -> std::vector<int>& { return c.model.dlc.rates; });
    num("train.base_lr", [](RunConfig& c) -> double& { return c.train.base_lr; }, false);
    num("train.power", [](RunConfig& c) -> double& { return c.train.power; }, false);
    num("train.momentum", [](RunConfig& c) -> double& { return c.train.momentum; }, false);
    num("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }, false);
    num("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }, false);
    num("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }, false);
    num("train.crop", [](RunConfig& c) -> int& { return c.train.augment.crop; }, false);
    num("train.scale_min", [](RunConfig& c) -> double& { return c.train.augment.scale_min; }, false);
    num("train.scale_max", [](RunConfig& c) -> double& { return c.train.augment.scale_max; }, false);
    k["train.flip"] = {[](RunConfig& c, const std::string& v) { c.train.augment.flip = parse_flip_axis(v); },
                       [](const RunConfig& c) { return to_string(c.train.augment.flip); }, false};
    num("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }, false);
    num("train.val_fraction", [](RunConfig& c) -> double& { return c.val_fraction; }, false);
    return k;
  }();
  return keys;
}

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

/// Applies every line of `text` to `cfg` (later lines win).
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    try {
      apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// key=value lines for every model key, in key order.
inline std::string model_config_text(const ModelConfig& m) {
  RunConfig c;
  c.model = m;
  std::string out;
  for (const auto& [key, h] : config_keys()) {
    if (h.model) out += key + "=" + h.get(c) + "\n";
  }
  return out;
}

inline ModelConfig parse_model_config(const std::string& text) {
  RunConfig c;
  apply_config_text(c, text, "checkpoint config");
  return c.model.resolved();
}

}  // namespace ducseg
