#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

#include "haspn/archive.hpp"
#include "haspn/error.hpp"
#include "haspn/model.hpp"
#include "haspn/optim.hpp"

namespace haspn {

inline nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"g", m.g},
          {"m", m.m},
          {"c", m.c},
          {"scale", m.scale},
          {"esa_reduction", m.esa_reduction},
          {"adcca_dilations", m.adcca_dilations},
          {"adcca_reduction", m.adcca_reduction}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  try {
    ModelConfig m;
    m.g = j.at("g").get<int>();
    m.m = j.at("m").get<int>();
    m.c = j.at("c").get<int>();
    m.scale = j.at("scale").get<int>();
    m.esa_reduction = j.at("esa_reduction").get<int>();
    m.adcca_dilations = j.at("adcca_dilations").get<std::vector<int>>();
    m.adcca_reduction = j.at("adcca_reduction").get<int>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint model block: ") + e.what());
  }
}

// Saved training state. `architecture` is "haspn", or "identity" for the
// stub that upsamples by repeating columns (used to validate the evaluation
// harness).
struct Checkpoint {
  std::string architecture = "haspn";
  ModelConfig model;
  int scale = 4;
  nlohmann::json train = nlohmann::json::object();
  int epoch = 0;
  ParameterSet<float> params;
  AdamState<float> adam;
  nlohmann::json metrics = nlohmann::json::object();
};

inline Checkpoint identity_checkpoint(int scale) {
  Checkpoint c;
  c.architecture = "identity";
  c.scale = scale;
  return c;
}

inline Archive checkpoint_to_archive(const Checkpoint& c) {
  Archive a;
  a.header = {{"architecture", c.architecture},
              {"scale", c.scale},
              {"train", c.train},
              {"epoch", c.epoch},
              {"adam_step", c.adam.step},
              {"metrics", c.metrics}};
  if (c.architecture == "haspn") a.header["model"] = model_to_json(c.model);
  for (const auto& e : c.params.entries()) a.arrays.push_back(to_archive_array(e.name, e.value));
  for (const auto& e : c.adam.m.entries()) a.arrays.push_back(to_archive_array("adam.m/" + e.name, e.value));
  for (const auto& e : c.adam.v.entries()) a.arrays.push_back(to_archive_array("adam.v/" + e.name, e.value));
  return a;
}

inline Checkpoint checkpoint_from_archive(const Archive& a) {
  Checkpoint c;
  try {
    c.architecture = a.header.at("architecture").get<std::string>();
    c.scale = a.header.at("scale").get<int>();
    c.train = a.header.value("train", nlohmann::json::object());
    c.epoch = a.header.at("epoch").get<int>();
    c.adam.step = a.header.at("adam_step").get<std::uint64_t>();
    c.metrics = a.header.value("metrics", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  if (c.architecture == "identity") return c;
  if (c.architecture != "haspn") throw CheckpointError("unknown architecture '" + c.architecture + "'");
  if (!a.header.contains("model")) throw CheckpointError("checkpoint header lacks a model block");
  c.model = model_from_json(a.header.at("model"));
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint model block: ") + e.what());
  }
  if (c.model.scale != c.scale) throw CheckpointError("checkpoint scale disagrees with its model block");

  const auto layout = parameter_layout(c.model);
  auto fetch = [&](const std::string& name, const Shape4& shape) {
    const ArchiveArray* arr = a.find(name);
    if (!arr) throw CheckpointError("checkpoint lacks array " + name);
    Tensor4<float> t = from_archive_array<float>(*arr);
    if (!(t.shape() == shape)) throw CheckpointError("checkpoint array " + name + " has shape " + to_string(t.shape()));
    return t;
  };
  for (const auto& spec : layout) c.params.add(spec.name, fetch(spec.name, spec.shape));
  const bool has_moments = a.find("adam.m/" + layout.front().name) != nullptr;
  for (const auto& spec : layout) {
    c.adam.m.add(spec.name, has_moments ? fetch("adam.m/" + spec.name, spec.shape) : Tensor4<float>(spec.shape));
    c.adam.v.add(spec.name, has_moments ? fetch("adam.v/" + spec.name, spec.shape) : Tensor4<float>(spec.shape));
  }
  const std::size_t expected = layout.size() * (has_moments ? 3 : 1);
  if (a.arrays.size() != expected) throw CheckpointError("checkpoint holds unexpected arrays");
  return c;
}

inline std::string serialize_checkpoint(const Checkpoint& c) { return serialize_archive(checkpoint_to_archive(c)); }

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_archive(path, checkpoint_to_archive(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_archive(read_archive(path)); }

}  // namespace haspn
