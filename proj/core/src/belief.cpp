#include "beliefid/belief.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "beliefid/error.hpp"
#include "json.hpp"

namespace beliefid {

FactoredBelief factorize_belief(std::span<const double> joint, std::size_t states, std::size_t noises) {
  if (joint.size() != states * noises) {
    throw InvalidArgument("factorize_belief: joint has " + std::to_string(joint.size()) +
                          " entries, expected " + std::to_string(states * noises));
  }
  FactoredBelief b;
  b.states = states;
  b.noises = noises;
  b.joint.assign(joint.begin(), joint.end());
  b.state_marginal.assign(states, 0.0);
  b.noise_conditional.assign(states * noises, 0.0);
  b.zero_marginal.assign(states, false);
  for (std::size_t s = 0; s < states; ++s) {
    double m = 0.0;
    for (std::size_t z = 0; z < noises; ++z) {
      m += joint[s * noises + z];
    }
    b.state_marginal[s] = m;
    if (m > 0.0) {
      for (std::size_t z = 0; z < noises; ++z) {
        b.noise_conditional[s * noises + z] = joint[s * noises + z] / m;
      }
    } else {
      b.zero_marginal[s] = true;
      for (std::size_t z = 0; z < noises; ++z) {
        b.noise_conditional[s * noises + z] = 1.0 / static_cast<double>(noises);
      }
    }
  }
  return b;
}

FactoredBelief initial_belief(const FactoredPOMDP& p) {
  return factorize_belief(p.initial_belief, p.sizes.states, p.sizes.noises);
}

std::vector<double> predict(const FactoredPOMDP& p, const FactoredBelief& b, std::size_t action) {
  const auto S = p.sizes.states;
  const auto Z = p.sizes.noises;
  if (action >= p.sizes.actions) {
    throw InvalidArgument("action out of range");
  }
  std::vector<double> pred(S * Z, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t z = 0; z < Z; ++z) {
      const double w = b.at(s, z);
      if (w == 0.0) {
        continue;
      }
      for (std::size_t ns = 0; ns < S; ++ns) {
        const double ps = p.transition(action, s, ns);
        if (ps == 0.0) {
          continue;
        }
        for (std::size_t nz = 0; nz < Z; ++nz) {
          pred[ns * Z + nz] += w * ps * p.noise(action, s, z, ns, nz);
        }
      }
    }
  }
  return pred;
}

namespace {

// Posterior from a predictive joint; returns the normalizer, 0 when impossible.
double condition(const FactoredPOMDP& p, const std::vector<double>& pred, std::size_t observation,
                 std::vector<double>& joint) {
  joint.assign(pred.size(), 0.0);
  double norm = 0.0;
  for (std::size_t s = 0; s < p.sizes.states; ++s) {
    for (std::size_t z = 0; z < p.sizes.noises; ++z) {
      const auto j = s * p.sizes.noises + z;
      joint[j] = pred[j] * p.emit(s, z, observation);
      norm += joint[j];
    }
  }
  if (!(norm > kImpossibleObservation)) {
    return 0.0;
  }
  for (auto& x : joint) {
    x /= norm;
  }
  return norm;
}

}  // namespace

BeliefUpdate belief_update(const FactoredPOMDP& p, const FactoredBelief& b, std::size_t action,
                           std::size_t observation) {
  if (observation >= p.sizes.observations) {
    throw InvalidArgument("observation out of range");
  }
  std::vector<double> joint;
  const double norm = condition(p, predict(p, b, action), observation, joint);
  if (norm == 0.0) {
    throw ZeroProbabilityObservation("observation " + std::to_string(observation) +
                                     " has zero probability after action " + std::to_string(action));
  }
  return {factorize_belief(joint, p.sizes.states, p.sizes.noises), norm};
}

double belief_reward(const FactoredPOMDP& p, const FactoredBelief& b, std::size_t action,
                     const FactoredBelief& next) {
  double r = 0.0;
  for (std::size_t s = 0; s < p.sizes.states; ++s) {
    if (b.state_marginal[s] == 0.0) {
      continue;
    }
    for (std::size_t ns = 0; ns < p.sizes.states; ++ns) {
      r += p.reward_of(s, action, ns) * b.state_marginal[s] * next.state_marginal[ns];
    }
  }
  return r;
}

std::size_t BeliefMDP::truncated_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const BeliefNode& n) { return n.truncated; }));
}

std::string belief_key(std::span<const double> joint, double quantization) {
  std::string key(joint.size() * sizeof(std::int64_t), '\0');
  for (std::size_t i = 0; i < joint.size(); ++i) {
    const std::int64_t q = std::llround(joint[i] / quantization);
    std::memcpy(key.data() + i * sizeof(q), &q, sizeof(q));
  }
  return key;
}

BeliefMDP build_belief_mdp(const FactoredPOMDP& p, const BeliefMdpOptions& options) {
  if (options.horizon_cap < 1) {
    throw InvalidArgument("build_belief_mdp: horizon_cap must be at least 1");
  }
  if (!(options.quantization > 0.0)) {
    throw InvalidArgument("build_belief_mdp: quantization must be positive");
  }
  BeliefMDP g;
  g.states = p.sizes.states;
  g.noises = p.sizes.noises;
  g.actions = p.sizes.actions;
  g.observations = p.sizes.observations;
  g.discount = p.discount;
  g.quantization = options.quantization;
  g.horizon_cap = options.horizon_cap;
  g.truncation_bound =
      std::pow(p.discount, static_cast<double>(options.horizon_cap)) * p.reward_bound / (1.0 - p.discount);

  std::unordered_map<std::string, std::size_t> index;
  auto intern = [&](FactoredBelief belief, std::size_t depth) {
    auto key = belief_key(belief.joint, options.quantization);
    auto [it, inserted] = index.try_emplace(std::move(key), g.nodes.size());
    if (inserted) {
      if (g.nodes.size() >= options.node_limit) {
        throw BeliefOverflow("belief expansion exceeded " + std::to_string(options.node_limit) +
                                 " nodes at frontier depth " + std::to_string(depth),
                             depth);
      }
      g.nodes.push_back({std::move(belief), depth, false, {}});
    }
    return it->second;
  };

  g.initial = intern(initial_belief(p), 0);
  // Nodes are appended in breadth-first order, so a cursor doubles as the queue.
  for (std::size_t cursor = 0; cursor < g.nodes.size(); ++cursor) {
    const auto depth = g.nodes[cursor].depth;
    const bool frontier = depth >= options.horizon_cap;
    std::vector<std::vector<BeliefEdge>> edges(g.actions);
    bool closed = true;
    std::vector<double> joint;
    for (std::size_t a = 0; a < g.actions && closed; ++a) {
      const auto pred = predict(p, g.nodes[cursor].belief, a);
      for (std::size_t o = 0; o < g.observations; ++o) {
        const double po = condition(p, pred, o, joint);
        if (po == 0.0) {
          continue;
        }
        auto belief = factorize_belief(joint, g.states, g.noises);
        const double r = belief_reward(p, g.nodes[cursor].belief, a, belief);
        std::size_t next = 0;
        if (frontier) {
          const auto it = index.find(belief_key(belief.joint, options.quantization));
          if (it == index.end()) {
            closed = false;
            break;
          }
          next = it->second;
        } else {
          next = intern(std::move(belief), depth + 1);
        }
        edges[a].push_back({o, next, po, r});
      }
    }
    auto& node = g.nodes[cursor];
    if (!closed) {
      node.truncated = true;
      edges.assign(g.actions, {});
      for (auto& e : edges) {
        e.push_back({0, cursor, 1.0, 0.0});
      }
    }
    node.edges = std::move(edges);
  }
  return g;
}

ValueFunction belief_value(const BeliefMDP& g, double tol) {
  if (!(tol > 0.0)) {
    throw InvalidArgument("belief_value: tolerance must be positive");
  }
  const auto n = g.nodes.size();
  std::vector<double> v(n, 0.0);
  std::vector<double> next(n, 0.0);
  auto backup = [&]() {
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& edges : g.nodes[i].edges) {
        double q = 0.0;
        for (const auto& e : edges) {
          q += e.probability * (e.reward + g.discount * v[e.next]);
        }
        best = std::max(best, q);
      }
      next[i] = best;
      delta = std::max(delta, std::abs(best - v[i]));
    }
    return delta;
  };
  while (true) {
    const double delta = backup();
    v.swap(next);
    if (delta <= tol) {
      break;
    }
  }
  ValueFunction out;
  out.residual = backup();
  out.values = std::move(v);
  return out;
}

void write_belief_graph_json(std::ostream& out, const BeliefMDP& g) {
  nlohmann::ordered_json doc;
  doc["states"] = g.states;
  doc["noises"] = g.noises;
  doc["actions"] = g.actions;
  doc["observations"] = g.observations;
  doc["discount"] = g.discount;
  doc["quantization"] = g.quantization;
  doc["horizon_cap"] = g.horizon_cap;
  doc["truncation_bound"] = g.truncation_bound;
  doc["initial"] = g.initial;
  auto nodes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& node = g.nodes[i];
    nlohmann::ordered_json j;
    j["id"] = i;
    j["depth"] = node.depth;
    j["truncated"] = node.truncated;
    j["joint"] = node.belief.joint;
    j["state_marginal"] = node.belief.state_marginal;
    j["noise_conditional"] = node.belief.noise_conditional;
    auto edges = nlohmann::ordered_json::array();
    for (std::size_t a = 0; a < node.edges.size(); ++a) {
      for (const auto& e : node.edges[a]) {
        edges.push_back({{"action", a},
                         {"observation", e.observation},
                         {"next", e.next},
                         {"probability", e.probability},
                         {"reward", e.reward}});
      }
    }
    j["edges"] = std::move(edges);
    nodes.push_back(std::move(j));
  }
  doc["nodes"] = std::move(nodes);
  out << doc.dump(2) << '\n';
}

}  // namespace beliefid
