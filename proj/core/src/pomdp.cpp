#include "beliefid/pomdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "beliefid/error.hpp"
#include "beliefid/rng.hpp"
#include "beliefid/solver.hpp"

namespace beliefid {

char to_char(NoiseClass c) noexcept {
  return static_cast<char>('A' + static_cast<int>(c));
}

NoiseClass noise_class_from(std::string_view name) {
  if (name.size() == 1 && name[0] >= 'A' && name[0] <= 'E') {
    return static_cast<NoiseClass>(name[0] - 'A');
  }
  throw InvalidArgument("unknown noise decomposition class '" + std::string(name) + "'");
}

bool is_nested_in(NoiseClass narrow, NoiseClass wide) noexcept {
  if (narrow == wide || narrow == NoiseClass::kA || wide == NoiseClass::kE) {
    return true;
  }
  // B sits below C and D; C and D are incomparable.
  return narrow == NoiseClass::kB && (wide == NoiseClass::kC || wide == NoiseClass::kD);
}

std::size_t NoiseTransition::row_count(NoiseClass c, const Sizes& n) noexcept {
  switch (c) {
    case NoiseClass::kA:
      return n.noises;
    case NoiseClass::kB:
      return n.actions * n.noises;
    case NoiseClass::kC:
    case NoiseClass::kD:
      return n.actions * n.noises * n.states;
    case NoiseClass::kE:
      return n.actions * n.noises * n.states * n.states;
  }
  return 0;
}

std::size_t NoiseTransition::row_index(NoiseClass c, const Sizes& n, std::size_t a, std::size_t s,
                                       std::size_t z, std::size_t next_s) noexcept {
  switch (c) {
    case NoiseClass::kA:
      return z;
    case NoiseClass::kB:
      return a * n.noises + z;
    case NoiseClass::kC:
      return (a * n.noises + z) * n.states + s;
    case NoiseClass::kD:
      return (a * n.noises + z) * n.states + next_s;
    case NoiseClass::kE:
      return ((a * n.noises + z) * n.states + s) * n.states + next_s;
  }
  return 0;
}

std::size_t FactoredPOMDP::observation_of(std::size_t s, std::size_t z) const noexcept {
  const auto* row = emission.data() + (s * sizes.noises + z) * sizes.observations;
  return static_cast<std::size_t>(std::max_element(row, row + sizes.observations) - row);
}

std::vector<std::size_t> FactoredPOMDP::latent_of_observation() const {
  if (!invertible) {
    throw InvalidModel("emission is not invertible");
  }
  std::vector<std::size_t> inverse(sizes.observations, 0);
  for (std::size_t s = 0; s < sizes.states; ++s) {
    for (std::size_t z = 0; z < sizes.noises; ++z) {
      inverse[observation_of(s, z)] = joint_index(s, z);
    }
  }
  return inverse;
}

double MDP::expected_reward(std::size_t s, std::size_t a) const noexcept {
  double total = 0.0;
  for (std::size_t n = 0; n < states; ++n) {
    total += prob(a, s, n) * reward_of(s, a, n);
  }
  return total;
}

double MDP::reward_bound() const noexcept {
  double bound = 0.0;
  for (double r : reward) {
    bound = std::max(bound, std::abs(r));
  }
  return bound;
}

StochasticPolicy StochasticPolicy::uniform(std::size_t states, std::size_t actions) {
  StochasticPolicy p;
  p.actions = actions;
  p.probs.assign(states * actions, 1.0 / static_cast<double>(actions));
  return p;
}

StochasticPolicy StochasticPolicy::from(const DeterministicPolicy& d, std::size_t actions) {
  StochasticPolicy p;
  p.actions = actions;
  p.probs.assign(d.action.size() * actions, 0.0);
  for (std::size_t s = 0; s < d.action.size(); ++s) {
    p.probs[s * actions + d.action[s]] = 1.0;
  }
  return p;
}

std::string ValidationReport::summary() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) {
      out << "; ";
    }
    out << violations[i].rule << " at " << violations[i].location;
  }
  return out.str();
}

namespace {

class Validator {
 public:
  explicit Validator(ValidationReport& report) : report_(report) {}

  void fail(std::string rule, std::string location) {
    report_.violations.push_back({std::move(rule), std::move(location)});
  }

  // Checks `rows` consecutive rows of width `width`; `locate` renders a row index.
  template <typename Locate>
  void stochastic_rows(const std::vector<double>& table, std::size_t rows, std::size_t width,
                       const std::string& name, Locate locate) {
    if (table.size() != rows * width) {
      fail("table size mismatch", name);
      return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      bool in_range = true;
      for (std::size_t c = 0; c < width; ++c) {
        const double x = table[r * width + c];
        if (!(x >= 0.0 && x <= 1.0)) {
          in_range = false;
        }
        sum += x;
      }
      if (!in_range) {
        fail("probability outside [0,1]", name + locate(r));
      }
      if (!(std::abs(sum - 1.0) <= kStochasticTolerance)) {
        fail("row-sum violation", name + locate(r));
      }
    }
  }

 private:
  ValidationReport& report_;
};

std::string idx(std::string_view label, std::size_t v) {
  return "[" + std::string(label) + "=" + std::to_string(v) + "]";
}

}  // namespace

ValidationReport validate_pomdp(const FactoredPOMDP& p) {
  ValidationReport report;
  Validator check(report);
  const auto& n = p.sizes;
  if (n.states == 0 || n.noises == 0 || n.actions == 0 || n.observations == 0) {
    check.fail("sizes must be positive", "sizes");
    return report;
  }

  check.stochastic_rows(p.state_transition, n.actions * n.states, n.states, "state_transition",
                        [&](std::size_t r) { return idx("a", r / n.states) + idx("s", r % n.states); });

  const auto cls = p.noise_transition.decomposition_class;
  const auto noise_rows = NoiseTransition::row_count(cls, n);
  check.stochastic_rows(p.noise_transition.table, noise_rows, n.noises,
                        std::string("noise_transition(") + to_char(cls) + ")",
                        [](std::size_t r) { return idx("row", r); });

  check.stochastic_rows(p.emission, n.states * n.noises, n.observations, "emission",
                        [&](std::size_t r) { return idx("s", r / n.noises) + idx("z", r % n.noises); });

  check.stochastic_rows(p.initial_belief, 1, n.states * n.noises, "initial_belief",
                        [](std::size_t) { return std::string(); });

  if (p.reward.size() != n.states * n.actions * n.states) {
    check.fail("table size mismatch", "reward");
  } else {
    for (std::size_t i = 0; i < p.reward.size(); ++i) {
      const double r = p.reward[i];
      if (!std::isfinite(r) || std::abs(r) > p.reward_bound) {
        const std::size_t s = i / (n.actions * n.states);
        const std::size_t a = (i / n.states) % n.actions;
        check.fail("reward not finite or above reward_bound",
                   "reward" + idx("s", s) + idx("a", a) + idx("s'", i % n.states));
      }
    }
  }

  if (!(p.discount > 0.0 && p.discount < 1.0)) {
    check.fail("discount outside (0,1)", "discount");
  }
  if (p.channels.first * p.channels.second != n.observations) {
    check.fail("channel sizes do not multiply to |O|", "channels");
  }

  if (p.invertible && p.emission.size() == n.states * n.noises * n.observations) {
    if (n.observations != n.states * n.noises) {
      check.fail("invertible emission requires |O| = |S|*|Z|", "emission");
    }
    std::vector<int> hit(n.observations, 0);
    for (std::size_t s = 0; s < n.states; ++s) {
      for (std::size_t z = 0; z < n.noises; ++z) {
        const auto o = p.observation_of(s, z);
        if (std::abs(p.emit(s, z, o) - 1.0) > kStochasticTolerance) {
          check.fail("bijection violation: emission row is not a point mass",
                     "emission" + idx("s", s) + idx("z", z));
        }
        ++hit[o];
      }
    }
    for (std::size_t o = 0; o < n.observations; ++o) {
      if (hit[o] != 1) {
        check.fail("bijection violation: observation hit " + std::to_string(hit[o]) + " times",
                   "emission" + idx("o", o));
      }
    }
  }
  return report;
}

void require_valid(const FactoredPOMDP& p) {
  const auto report = validate_pomdp(p);
  if (!report.valid()) {
    throw InvalidModel("invalid POMDP: " + report.summary());
  }
}

std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return mix64(mix64(base) + 0x51ed270b27f1a3c5ULL * (index + 1));
}

Episode sample_episode(const FactoredPOMDP& p, const Policy& policy, std::size_t horizon,
                       std::uint64_t seed, std::optional<std::pair<std::size_t, std::size_t>> start) {
  if (horizon == 0) {
    throw InvalidArgument("sample_episode: horizon must be at least 1");
  }
  const auto& n = p.sizes;
  if (const auto* d = std::get_if<DeterministicPolicy>(&policy)) {
    if (d->action.size() != n.states ||
        std::any_of(d->action.begin(), d->action.end(), [&](auto a) { return a >= n.actions; })) {
      throw InvalidArgument("sample_episode: deterministic policy arity does not match the POMDP");
    }
  } else if (const auto* st = std::get_if<StochasticPolicy>(&policy)) {
    if (st->actions != n.actions || st->probs.size() != n.states * n.actions) {
      throw InvalidArgument("sample_episode: stochastic policy arity does not match the POMDP");
    }
  } else if (!std::get<std::shared_ptr<ObservationPolicy>>(policy)) {
    throw InvalidArgument("sample_episode: null observation policy");
  }

  CounterRng rng(seed, Stream::kEpisode);
  Episode ep;
  ep.seed = seed;
  ep.steps.reserve(horizon);

  std::size_t s = 0;
  std::size_t z = 0;
  if (start) {
    s = start->first;
    z = start->second;
    if (s >= n.states || z >= n.noises) {
      throw InvalidArgument("sample_episode: start latent out of range");
    }
  } else {
    const auto j = rng.categorical(p.initial_belief);
    s = j / n.noises;
    z = j % n.noises;
  }

  auto emit = [&](std::size_t ss, std::size_t zz) {
    const auto* row = p.emission.data() + (ss * n.noises + zz) * n.observations;
    return rng.categorical(std::span<const double>(row, n.observations));
  };

  if (auto* obs_policy = std::get_if<std::shared_ptr<ObservationPolicy>>(&policy)) {
    (*obs_policy)->reset();
  }

  std::vector<double> row(std::max(n.states, std::max(n.noises, n.actions)));
  for (std::size_t t = 0; t < horizon; ++t) {
    Step step;
    step.state = s;
    step.noise = z;
    step.observation = emit(s, z);
    if (const auto* d = std::get_if<DeterministicPolicy>(&policy)) {
      step.action = d->action[s];
    } else if (const auto* st = std::get_if<StochasticPolicy>(&policy)) {
      step.action = rng.categorical(std::span<const double>(st->probs.data() + s * n.actions, n.actions));
    } else {
      step.action = std::get<std::shared_ptr<ObservationPolicy>>(policy)->act(step.observation);
      if (step.action >= n.actions) {
        throw InvalidArgument("sample_episode: observation policy returned an invalid action");
      }
    }
    const auto a = step.action;
    const auto next_s = rng.categorical(
        std::span<const double>(p.state_transition.data() + (a * n.states + s) * n.states, n.states));
    for (std::size_t nz = 0; nz < n.noises; ++nz) {
      row[nz] = p.noise(a, s, z, next_s, nz);
    }
    const auto next_z = rng.categorical(std::span<const double>(row.data(), n.noises));
    step.reward = p.reward_of(s, a, next_s);
    ep.steps.push_back(step);
    s = next_s;
    z = next_z;
  }
  ep.final_state = s;
  ep.final_noise = z;
  ep.final_observation = emit(s, z);
  return ep;
}

MDP underlying_mdp(const FactoredPOMDP& p) {
  MDP m;
  m.states = p.sizes.states;
  m.actions = p.sizes.actions;
  m.transition = p.state_transition;
  m.reward = p.reward;
  m.discount = p.discount;
  return m;
}

FactoredPOMDP generate_random(const GeneratorSpec& spec) {
  const auto& n = spec.sizes;
  if (n.states == 0 || n.noises == 0 || n.actions == 0 || n.observations == 0) {
    throw InvalidArgument("generate_random: sizes must be at least 1");
  }
  if (spec.invertible && n.observations != n.states * n.noises) {
    throw InvalidArgument("generate_random: invertible emission needs |O| = |S|*|Z| (got " +
                          std::to_string(n.observations) + " != " +
                          std::to_string(n.states * n.noises) + ")");
  }

  CounterRng rng(spec.seed, Stream::kGenerator);
  FactoredPOMDP p;
  p.sizes = n;
  p.discount = spec.discount;
  p.invertible = spec.invertible;
  p.reward_bound = 1.0;
  p.channels = {n.observations, 1};

  auto fill_rows = [&](std::vector<double>& table, std::size_t rows, std::size_t width) {
    table.clear();
    table.reserve(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = rng.dirichlet_one(width);
      table.insert(table.end(), row.begin(), row.end());
    }
  };

  fill_rows(p.state_transition, n.actions * n.states, n.states);
  p.noise_transition.decomposition_class = spec.decomposition_class;
  fill_rows(p.noise_transition.table, NoiseTransition::row_count(spec.decomposition_class, n), n.noises);

  if (spec.invertible) {
    std::vector<std::size_t> perm(n.observations);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      perm[i] = i;
    }
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    p.emission.assign(n.states * n.noises * n.observations, 0.0);
    for (std::size_t j = 0; j < n.states * n.noises; ++j) {
      p.emission[j * n.observations + perm[j]] = 1.0;
    }
  } else {
    fill_rows(p.emission, n.states * n.noises, n.observations);
  }
  p.initial_belief.assign(n.states * n.noises, 1.0 / static_cast<double>(n.states * n.noises));

  // Rewards come from their own stream so resampling does not shift the tables above.
  CounterRng reward_rng(spec.seed, Stream::kRewards);
  constexpr int kMaxRewardDraws = 100;
  for (int attempt = 0; attempt < kMaxRewardDraws; ++attempt) {
    p.reward.resize(n.states * n.actions * n.states);
    for (auto& r : p.reward) {
      r = reward_rng.uniform();
    }
    if (n.states == 1) {
      return p;
    }
    const auto redundancy = no_redundancy_check(underlying_mdp(p), 16, spec.seed);
    if (redundancy.all_distinct()) {
      return p;
    }
  }
  throw InvalidModel("generate_random: no redundancy-free reward table after 100 draws");
}

}  // namespace beliefid
