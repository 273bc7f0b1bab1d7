#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/trainer.hpp"

// INI run configuration:
//
//   [model]  g m c scale esa_reduction adcca_dilations adcca_reduction
//   [train]  lr beta1 beta2 epsilon batch epochs decay_every decay_factor seed
//            w_pix w_per w_gra per_pixel_mean extractor output
//   [data]   root crop ratios
//
// Missing keys keep their defaults; unknown sections or keys are errors.
namespace haspn {

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"model", {"g", "m", "c", "scale", "esa_reduction", "adcca_dilations", "adcca_reduction"}},
      {"train",
       {"lr", "beta1", "beta2", "epsilon", "batch", "epochs", "decay_every", "decay_factor", "seed", "w_pix", "w_per",
        "w_gra", "per_pixel_mean", "extractor", "output"}},
      {"data", {"root", "crop", "ratios"}},
  };
  return schema;
}

template <class V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  V v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("config key " + key + ": cannot parse '" + text + "'");
  return v;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace detail

// Parses an INI document; relative paths resolve against `base`.
inline TrainConfig parse_run_config(const std::string& text, const std::filesystem::path& base = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const auto& schema = detail::config_schema();
  for (const auto& [section, body] : tree) {
    auto it = schema.find(section);
    if (it == schema.end()) {
      if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
      throw ConfigError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError("config: unknown key '" + section + "." + key + "'");
    }
  }

  TrainConfig c;
  auto get = [&](const std::string& path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(path, '.'))) return *v;
    return std::nullopt;
  };
  auto set_int = [&](const std::string& path, int& dst) {
    if (auto v = get(path)) dst = detail::parse_value<int>(path, *v);
  };
  auto set_real = [&](const std::string& path, double& dst) {
    if (auto v = get(path)) dst = detail::parse_value<double>(path, *v);
  };
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };

  set_int("model.g", c.model.g);
  set_int("model.m", c.model.m);
  set_int("model.c", c.model.c);
  set_int("model.scale", c.model.scale);
  set_int("model.esa_reduction", c.model.esa_reduction);
  set_int("model.adcca_reduction", c.model.adcca_reduction);
  if (auto v = get("model.adcca_dilations")) {
    c.model.adcca_dilations.clear();
    for (const auto& item : detail::split_list(*v)) {
      c.model.adcca_dilations.push_back(detail::parse_value<int>("model.adcca_dilations", item));
    }
  }

  set_real("train.lr", c.initial_rate);
  set_real("train.beta1", c.adam.beta1);
  set_real("train.beta2", c.adam.beta2);
  set_real("train.epsilon", c.adam.epsilon);
  set_int("train.batch", c.batch);
  set_int("train.epochs", c.epochs);
  set_int("train.decay_every", c.decay_every);
  set_real("train.decay_factor", c.decay_factor);
  if (auto v = get("train.seed")) c.seed = detail::parse_value<std::uint64_t>("train.seed", *v);
  set_real("train.w_pix", c.loss.weights.pix);
  set_real("train.w_per", c.loss.weights.per);
  set_real("train.w_gra", c.loss.weights.gra);
  if (auto v = get("train.per_pixel_mean")) c.loss.per_pixel_mean = detail::parse_value<bool>("train.per_pixel_mean", *v);
  if (auto v = get("train.extractor")) {
    c.extractor = *v;
    if (c.extractor.rfind("file:", 0) == 0) c.extractor = "file:" + resolve(c.extractor.substr(5)).string();
  }
  if (auto v = get("train.output")) c.output_dir = resolve(*v);

  if (auto v = get("data.root")) c.data_root = resolve(*v);
  set_int("data.crop", c.crop);
  if (auto v = get("data.ratios")) {
    const auto items = detail::split_list(*v);
    if (items.size() != 3) throw ConfigError("config key data.ratios: expected three comma-separated values");
    for (std::size_t i = 0; i < 3; ++i) c.ratios[i] = detail::parse_value<double>("data.ratios", items[i]);
  }

  c.validate();
  return c;
}

inline TrainConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

}  // namespace haspn
