#include "beliefid/pomdp_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "beliefid/error.hpp"
#include "json.hpp"

namespace beliefid {

namespace {

using json = nlohmann::ordered_json;

json nest(const std::vector<double>& flat, const std::vector<std::size_t>& dims, std::size_t level = 0,
          std::size_t offset = 0) {
  if (level + 1 == dims.size()) {
    return json(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                    flat.begin() + static_cast<std::ptrdiff_t>(offset + dims[level])));
  }
  std::size_t stride = 1;
  for (std::size_t i = level + 1; i < dims.size(); ++i) {
    stride *= dims[i];
  }
  json out = json::array();
  for (std::size_t i = 0; i < dims[level]; ++i) {
    out.push_back(nest(flat, dims, level + 1, offset + i * stride));
  }
  return out;
}

void flatten(const json& j, const std::vector<std::size_t>& dims, std::size_t level, const std::string& field,
             std::vector<double>& out) {
  if (!j.is_array() || j.size() != dims[level]) {
    throw FormatError("field '" + field + "': expected an array of length " + std::to_string(dims[level]) +
                      " at nesting level " + std::to_string(level));
  }
  for (const auto& x : j) {
    if (level + 1 == dims.size()) {
      if (!x.is_number()) {
        throw FormatError("field '" + field + "': expected a number");
      }
      out.push_back(x.get<double>());
    } else {
      flatten(x, dims, level + 1, field, out);
    }
  }
}

std::vector<double> read_table(const json& doc, const std::string& field, const std::vector<std::size_t>& dims) {
  if (!doc.contains(field)) {
    throw FormatError("missing field '" + field + "'");
  }
  std::vector<double> out;
  flatten(doc.at(field), dims, 0, field, out);
  return out;
}

std::vector<std::size_t> noise_dims(NoiseClass c, const Sizes& s) {
  switch (c) {
    case NoiseClass::kA:
      return {s.noises, s.noises};
    case NoiseClass::kB:
      return {s.actions, s.noises, s.noises};
    case NoiseClass::kC:
    case NoiseClass::kD:
      return {s.actions, s.noises, s.states, s.noises};
    case NoiseClass::kE:
      return {s.actions, s.noises, s.states, s.states, s.noises};
  }
  return {};
}

}  // namespace

std::string pomdp_to_json(const FactoredPOMDP& p) {
  const auto& s = p.sizes;
  json doc;
  doc["sizes"] = {{"states", s.states}, {"noises", s.noises}, {"actions", s.actions}, {"observations", s.observations}};
  doc["decomposition_class"] = std::string(1, to_char(p.noise_transition.decomposition_class));
  doc["state_transition"] = nest(p.state_transition, {s.actions, s.states, s.states});
  doc["noise_transition"] = nest(p.noise_transition.table, noise_dims(p.noise_transition.decomposition_class, s));
  doc["emission"] = nest(p.emission, {s.states, s.noises, s.observations});
  doc["reward"] = nest(p.reward, {s.states, s.actions, s.states});
  doc["reward_bound"] = p.reward_bound;
  doc["discount"] = p.discount;
  doc["initial_belief"] = nest(p.initial_belief, {s.states, s.noises});
  doc["invertible"] = p.invertible;
  doc["channels"] = {p.channels.first, p.channels.second};
  return doc.dump(2);
}

FactoredPOMDP pomdp_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("POMDP document is not valid JSON: ") + e.what());
  }
  FactoredPOMDP p;
  try {
    const auto& sz = doc.at("sizes");
    p.sizes = {sz.at("states").get<std::size_t>(), sz.at("noises").get<std::size_t>(),
               sz.at("actions").get<std::size_t>(), sz.at("observations").get<std::size_t>()};
    const auto& s = p.sizes;
    p.noise_transition.decomposition_class = noise_class_from(doc.at("decomposition_class").get<std::string>());
    p.state_transition = read_table(doc, "state_transition", {s.actions, s.states, s.states});
    p.noise_transition.table =
        read_table(doc, "noise_transition", noise_dims(p.noise_transition.decomposition_class, s));
    p.emission = read_table(doc, "emission", {s.states, s.noises, s.observations});
    p.reward = read_table(doc, "reward", {s.states, s.actions, s.states});
    p.discount = doc.at("discount").get<double>();
    p.initial_belief = read_table(doc, "initial_belief", {s.states, s.noises});
    p.invertible = doc.at("invertible").get<bool>();
    if (doc.contains("reward_bound")) {
      p.reward_bound = doc.at("reward_bound").get<double>();
    } else {
      p.reward_bound = 0.0;
      for (double r : p.reward) {
        p.reward_bound = std::max(p.reward_bound, std::abs(r));
      }
    }
    if (doc.contains("channels")) {
      const auto& c = doc.at("channels");
      p.channels = {c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>()};
    } else {
      p.channels = {s.observations, 1};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed POMDP document: ") + e.what());
  }
  require_valid(p);
  return p;
}

void save_pomdp(const std::filesystem::path& path, const FactoredPOMDP& p) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  out << pomdp_to_json(p) << '\n';
}

FactoredPOMDP load_pomdp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return pomdp_from_json(buf.str());
}

}  // namespace beliefid
