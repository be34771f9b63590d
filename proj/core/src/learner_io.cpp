#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "beliefid/error.hpp"
#include "beliefid/format.hpp"
#include "beliefid/learner.hpp"
#include "json.hpp"

namespace beliefid {

namespace {

// Logits of impossible entries are -inf, which JSON numbers cannot carry.
nlohmann::ordered_json encode_table(const std::vector<double>& t) {
  auto out = nlohmann::ordered_json::array();
  for (double x : t) {
    if (std::isinf(x) && x < 0) {
      out.push_back("-inf");
    } else {
      out.push_back(x);
    }
  }
  return out;
}

std::vector<double> decode_table(const nlohmann::json& j) {
  std::vector<double> t;
  t.reserve(j.size());
  for (const auto& x : j) {
    if (x.is_string()) {
      if (x.get<std::string>() != "-inf") {
        throw FormatError("table entry must be a number or \"-inf\"");
      }
      t.push_back(-std::numeric_limits<double>::infinity());
    } else {
      t.push_back(x.get<double>());
    }
  }
  return t;
}

}  // namespace

std::string model_to_json(const LearnedWorldModel& model) {
  require_valid(model);
  const auto& s = model.sizes;
  nlohmann::ordered_json doc;
  doc["sizes"] = {{"state_codes", s.state_codes},
                  {"noise_codes", s.noise_codes},
                  {"actions", s.actions},
                  {"observations", s.observations},
                  {"channels", {s.channels.first, s.channels.second}}};
  doc["asymmetric"] = model.asymmetric;
  doc["alpha"] = model.alpha;
  doc["beta"] = model.beta;
  nlohmann::ordered_json tables;
  model.params.for_each([&](const char* name, const std::vector<double>& t) { tables[name] = encode_table(t); });
  doc["tables"] = std::move(tables);
  return doc.dump(2);
}

LearnedWorldModel model_from_json(const std::string& text) {
  LearnedWorldModel m;
  try {
    const auto doc = nlohmann::json::parse(text);
    const auto& s = doc.at("sizes");
    m.sizes.state_codes = s.at("state_codes").get<std::size_t>();
    m.sizes.noise_codes = s.at("noise_codes").get<std::size_t>();
    m.sizes.actions = s.at("actions").get<std::size_t>();
    m.sizes.observations = s.at("observations").get<std::size_t>();
    m.sizes.channels = {s.at("channels").at(0).get<std::size_t>(), s.at("channels").at(1).get<std::size_t>()};
    m.asymmetric = doc.at("asymmetric").get<bool>();
    m.alpha = doc.at("alpha").get<double>();
    m.beta = doc.at("beta").get<double>();
    const auto& tables = doc.at("tables");
    m.params.for_each([&](const char* name, std::vector<double>& t) {
      t = decode_table(tables.at(name));
    });
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model checkpoint: ") + e.what());
  }
  require_valid(m);
  return m;
}

void save_model(const std::filesystem::path& path, const LearnedWorldModel& model) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  out << model_to_json(model) << '\n';
}

LearnedWorldModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

void write_loss_csv(std::ostream& out, std::span<const LossPoint> curve) {
  out << "step,total,recon_o,recon_r,kl_s,kl_z\n";
  for (const auto& p : curve) {
    out << p.step << ',' << format_double(p.loss.total) << ',' << format_double(p.loss.recon_o) << ','
        << format_double(p.loss.recon_r) << ',' << format_double(p.loss.kl_s) << ','
        << format_double(p.loss.kl_z) << '\n';
  }
}

}  // namespace beliefid
