#include "beliefid/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "beliefid/error.hpp"
#include "beliefid/rng.hpp"
#include "beliefid/solver.hpp"

namespace beliefid {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;
constexpr std::size_t kDivergencePatience = 100;

double log_normal(double r, double mean) { return -0.5 * (r - mean) * (r - mean) - kHalfLogTwoPi; }

struct Shape {
  std::size_t Ks, Kz, A, O, C1, C2;
  bool asymmetric;

  explicit Shape(const LearnedWorldModel& m)
      : Ks(m.sizes.state_codes),
        Kz(m.sizes.noise_codes),
        A(m.sizes.actions),
        O(m.sizes.observations),
        C1(m.sizes.channels.first),
        C2(m.sizes.channels.second),
        asymmetric(m.asymmetric) {}

  std::size_t C() const { return Ks * Kz; }
  std::size_t c1(std::size_t o) const { return o / C2; }
  std::size_t c2(std::size_t o) const { return o % C2; }
  // Row offsets (already multiplied by the row width).
  std::size_t ps(std::size_t i, std::size_t a) const { return (i * A + a) * Ks; }
  std::size_t pz(std::size_t j) const { return j * Kz; }
  std::size_t qs0(std::size_t o) const { return o * Ks; }
  std::size_t qz0(std::size_t o) const { return o * Kz; }
  std::size_t qs(std::size_t i, std::size_t a, std::size_t o, std::size_t j) const {
    return (((i * A + a) * O + o) * Kz + j) * Ks;
  }
  std::size_t qz(std::size_t j, std::size_t o, std::size_t i, std::size_t a) const {
    return (((j * O + o) * Ks + i) * A + a) * Kz;
  }
  std::size_t ds(std::size_t i, std::size_t j) const { return (asymmetric ? i : i * Kz + j) * C1; }
  std::size_t dz(std::size_t i, std::size_t j) const { return (asymmetric ? j : i * Kz + j) * C2; }
  std::size_t mu(std::size_t i, std::size_t a) const { return (i * A + a) * Ks; }
};

void softmax_rows(const std::vector<double>& logits, std::size_t width, std::vector<double>& p,
                  std::vector<double>& lp) {
  p.resize(logits.size());
  lp.resize(logits.size());
  for (std::size_t r = 0; r < logits.size(); r += width) {
    const double m = *std::max_element(logits.begin() + static_cast<std::ptrdiff_t>(r),
                                       logits.begin() + static_cast<std::ptrdiff_t>(r + width));
    if (!std::isfinite(m)) {
      throw InvalidModel("logit row has no finite entry");
    }
    double z = 0.0;
    for (std::size_t k = r; k < r + width; ++k) {
      z += std::exp(logits[k] - m);
    }
    const double lz = m + std::log(z);
    for (std::size_t k = r; k < r + width; ++k) {
      lp[k] = logits[k] - lz;
      p[k] = std::exp(lp[k]);
    }
  }
}

// Divergence between a posterior row q and a prior row p in the configured order.
double divergence(const double* q, const double* lq, const double* p, const double* lp, std::size_t n,
                  KlOrder order) {
  double kl = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (order == KlOrder::kPosteriorPrior) {
      if (q[k] > 0.0) {
        kl += q[k] * (lq[k] - lp[k]);
      }
    } else if (p[k] > 0.0) {
      kl += p[k] * (lp[k] - lq[k]);
    }
  }
  return kl;
}

// Adds weight * dKL/du to gq and weight * dKL/dv to gp (u, v: posterior and prior logits).
void add_divergence_gradient(const double* q, const double* lq, const double* p, const double* lp, std::size_t n,
                             double kl, KlOrder order, double weight, double* gq, double* gp) {
  for (std::size_t k = 0; k < n; ++k) {
    if (order == KlOrder::kPosteriorPrior) {
      gq[k] += q[k] > 0.0 ? weight * q[k] * (lq[k] - lp[k] - kl) : 0.0;
      gp[k] += weight * (p[k] - q[k]);
    } else {
      gq[k] += weight * (q[k] - p[k]);
      gp[k] += p[k] > 0.0 ? weight * p[k] * (lp[k] - lq[k] - kl) : 0.0;
    }
  }
}

// Softmax backprop: g_u = q * (G - q.G), accumulated with a weight.
void add_softmax_gradient(const double* q, const double* G, std::size_t n, double weight, double* gu) {
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mean += q[k] * G[k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    gu[k] += weight * q[k] * (G[k] - mean);
  }
}

// Probabilities, log-probabilities and per-row divergences of a model.
struct Prepared {
  Shape sh;
  double alpha, beta;
  KlOrder order;
  std::vector<double> p_s0, lp_s0, p_s, lp_s, p_z0, lp_z0, p_z, lp_z;
  std::vector<double> q_s0, lq_s0, q_s, lq_s, q_z0, lq_z0, q_z, lq_z;
  std::vector<double> d_s, ld_s, d_z, ld_z;
  std::vector<double> kl_s0, kl_z0, kl_s, kl_z;  // one per posterior row
  std::vector<double> mu;

  Prepared(const LearnedWorldModel& m, KlOrder kl_order)
      : sh(m), alpha(m.alpha), beta(m.beta), order(kl_order), mu(m.params.reward_mean) {
    const auto& t = m.params;
    softmax_rows(t.prior_state_initial, sh.Ks, p_s0, lp_s0);
    softmax_rows(t.prior_state, sh.Ks, p_s, lp_s);
    softmax_rows(t.prior_noise_initial, sh.Kz, p_z0, lp_z0);
    softmax_rows(t.prior_noise, sh.Kz, p_z, lp_z);
    softmax_rows(t.posterior_state_initial, sh.Ks, q_s0, lq_s0);
    softmax_rows(t.posterior_state, sh.Ks, q_s, lq_s);
    softmax_rows(t.posterior_noise_initial, sh.Kz, q_z0, lq_z0);
    softmax_rows(t.posterior_noise, sh.Kz, q_z, lq_z);
    softmax_rows(t.decoder_state, sh.C1, d_s, ld_s);
    softmax_rows(t.decoder_noise, sh.C2, d_z, ld_z);

    kl_s0.resize(sh.O);
    kl_z0.resize(sh.O);
    for (std::size_t o = 0; o < sh.O; ++o) {
      const auto rs = sh.qs0(o);
      const auto rz = sh.qz0(o);
      kl_s0[o] = divergence(&q_s0[rs], &lq_s0[rs], p_s0.data(), lp_s0.data(), sh.Ks, order);
      kl_z0[o] = divergence(&q_z0[rz], &lq_z0[rz], p_z0.data(), lp_z0.data(), sh.Kz, order);
    }
    kl_s.resize(q_s.size() / sh.Ks);
    kl_z.resize(q_z.size() / sh.Kz);
    for (std::size_t i = 0; i < sh.Ks; ++i) {
      for (std::size_t a = 0; a < sh.A; ++a) {
        for (std::size_t o = 0; o < sh.O; ++o) {
          for (std::size_t j = 0; j < sh.Kz; ++j) {
            const auto rq = sh.qs(i, a, o, j);
            const auto rp = sh.ps(i, a);
            kl_s[rq / sh.Ks] = divergence(&q_s[rq], &lq_s[rq], &p_s[rp], &lp_s[rp], sh.Ks, order);
            const auto rz = sh.qz(j, o, i, a);
            const auto pz = sh.pz(j);
            kl_z[rz / sh.Kz] = divergence(&q_z[rz], &lq_z[rz], &p_z[pz], &lp_z[pz], sh.Kz, order);
          }
        }
      }
    }
  }

  double recon(std::size_t i, std::size_t j, std::size_t o) const {
    return ld_s[sh.ds(i, j) + sh.c1(o)] + ld_z[sh.dz(i, j) + sh.c2(o)];
  }

  void initial_marginal(std::size_t o, double* m) const {
    for (std::size_t i = 0; i < sh.Ks; ++i) {
      for (std::size_t j = 0; j < sh.Kz; ++j) {
        m[i * sh.Kz + j] = q_s0[sh.qs0(o) + i] * q_z0[sh.qz0(o) + j];
      }
    }
  }

  void propagate(const double* m, std::size_t a, std::size_t o, double* next) const {
    std::fill(next, next + sh.C(), 0.0);
    for (std::size_t i = 0; i < sh.Ks; ++i) {
      for (std::size_t j = 0; j < sh.Kz; ++j) {
        const double w = m[i * sh.Kz + j];
        if (w == 0.0) {
          continue;
        }
        const double* qs = &q_s[sh.qs(i, a, o, j)];
        const double* qz = &q_z[sh.qz(j, o, i, a)];
        for (std::size_t ni = 0; ni < sh.Ks; ++ni) {
          const double ws = w * qs[ni];
          for (std::size_t nj = 0; nj < sh.Kz; ++nj) {
            next[ni * sh.Kz + nj] += ws * qz[nj];
          }
        }
      }
    }
  }
};

void require_episode(const Shape& sh, const Episode& ep) {
  for (std::size_t t = 0; t <= ep.horizon(); ++t) {
    if (ep.observation_at(t) >= sh.O) {
      throw InvalidArgument("episode observation out of range for the model");
    }
    if (t < ep.horizon() && ep.steps[t].action >= sh.A) {
      throw InvalidArgument("episode action out of range for the model");
    }
  }
}

// Negative ELBO; accumulates its gradient into `grad` when given.
ElboBreakdown evaluate(const LearnedWorldModel& model, std::span<const Episode> episodes,
                       const ObjectiveSwitches& sw, ModelTables* grad) {
  require_valid(model);
  if (episodes.empty()) {
    throw InvalidArgument("elbo: no episodes");
  }
  if (sw.asymmetric_emission != model.asymmetric) {
    throw InvalidArgument("objective switch asymmetric_emission does not match the model");
  }
  const Prepared P(model, sw.kl_order);
  const Shape& sh = P.sh;
  const auto C = sh.C();
  const double alpha = sw.use_kl_terms ? model.alpha : 0.0;
  const double beta = sw.use_kl_terms ? model.beta : 0.0;

  ModelTables g_elbo;  // gradient of the ELBO (sign flipped at the end)
  if (grad) {
    g_elbo = zero_tables(model.sizes, model.asymmetric);
  }

  double recon_o = 0.0;
  double recon_r = 0.0;
  double kl_s = 0.0;
  double kl_z = 0.0;

  std::vector<double> m, w, g;
  std::vector<double> Gs(sh.Ks), Gz(sh.Kz);
  for (const auto& ep : episodes) {
    require_episode(sh, ep);
    const auto T = ep.horizon();
    m.assign((T + 1) * C, 0.0);
    w.assign((T + 1) * C, 0.0);
    P.initial_marginal(ep.observation_at(0), m.data());
    for (std::size_t t = 1; t <= T; ++t) {
      P.propagate(&m[(t - 1) * C], ep.steps[t - 1].action, ep.observation_at(t), &m[t * C]);
    }

    const auto o0 = ep.observation_at(0);
    if (sw.use_kl_terms) {
      kl_s += P.kl_s0[o0];
      kl_z += P.kl_z0[o0];
    }
    for (std::size_t t = 0; t <= T; ++t) {
      const auto o = ep.observation_at(t);
      for (std::size_t i = 0; i < sh.Ks; ++i) {
        for (std::size_t j = 0; j < sh.Kz; ++j) {
          const auto c = i * sh.Kz + j;
          const double mc = m[t * C + c];
          if (mc == 0.0) {
            continue;
          }
          const double rec = P.recon(i, j, o);
          double wc = rec;
          recon_o -= mc * rec;
          if (t < T) {
            const auto a = ep.steps[t].action;
            const auto on = ep.observation_at(t + 1);
            const double* qs = &P.q_s[sh.qs(i, a, on, j)];
            if (sw.use_reward_term) {
              double rho = 0.0;
              for (std::size_t ni = 0; ni < sh.Ks; ++ni) {
                if (qs[ni] > 0.0) {
                  rho += qs[ni] * log_normal(ep.steps[t].reward, P.mu[sh.mu(i, a) + ni]);
                }
              }
              wc += rho;
              recon_r -= mc * rho;
            }
            if (sw.use_kl_terms) {
              const double ks = P.kl_s[sh.qs(i, a, on, j) / sh.Ks];
              const double kz = P.kl_z[sh.qz(j, on, i, a) / sh.Kz];
              wc -= alpha * ks + beta * kz;
              kl_s += mc * ks;
              kl_z += mc * kz;
            }
          }
          w[t * C + c] = wc;
        }
      }
    }

    if (!grad) {
      continue;
    }
    auto& G = g_elbo;
    g.assign((T + 1) * C, 0.0);
    std::copy(&w[T * C], &w[T * C] + C, &g[T * C]);
    for (std::size_t t = T; t-- > 0;) {
      const auto a = ep.steps[t].action;
      const auto on = ep.observation_at(t + 1);
      const double r = ep.steps[t].reward;
      const double* gn = &g[(t + 1) * C];
      for (std::size_t i = 0; i < sh.Ks; ++i) {
        for (std::size_t j = 0; j < sh.Kz; ++j) {
          const auto c = i * sh.Kz + j;
          const auto rs = sh.qs(i, a, on, j);
          const auto rz = sh.qz(j, on, i, a);
          const double* qs = &P.q_s[rs];
          const double* qz = &P.q_z[rz];
          double future = 0.0;
          for (std::size_t ni = 0; ni < sh.Ks; ++ni) {
            double acc = 0.0;
            for (std::size_t nj = 0; nj < sh.Kz; ++nj) {
              acc += qz[nj] * gn[ni * sh.Kz + nj];
            }
            Gs[ni] = acc;
            future += qs[ni] * acc;
          }
          g[t * C + c] = w[t * C + c] + future;

          const double mc = m[t * C + c];
          if (mc == 0.0) {
            continue;
          }
          for (std::size_t nj = 0; nj < sh.Kz; ++nj) {
            double acc = 0.0;
            for (std::size_t ni = 0; ni < sh.Ks; ++ni) {
              acc += qs[ni] * gn[ni * sh.Kz + nj];
            }
            Gz[nj] = acc;
          }
          if (sw.use_reward_term) {
            for (std::size_t ni = 0; ni < sh.Ks; ++ni) {
              const double mean = P.mu[sh.mu(i, a) + ni];
              Gs[ni] += log_normal(r, mean);
              G.reward_mean[sh.mu(i, a) + ni] += mc * qs[ni] * (r - mean);
            }
          }
          add_softmax_gradient(qs, Gs.data(), sh.Ks, mc, &G.posterior_state[rs]);
          add_softmax_gradient(qz, Gz.data(), sh.Kz, mc, &G.posterior_noise[rz]);
          if (sw.use_kl_terms) {
            const auto ps = sh.ps(i, a);
            const auto pz = sh.pz(j);
            add_divergence_gradient(qs, &P.lq_s[rs], &P.p_s[ps], &P.lp_s[ps], sh.Ks, P.kl_s[rs / sh.Ks],
                                    P.order, -alpha * mc, &G.posterior_state[rs], &G.prior_state[ps]);
            add_divergence_gradient(qz, &P.lq_z[rz], &P.p_z[pz], &P.lp_z[pz], sh.Kz, P.kl_z[rz / sh.Kz],
                                    P.order, -beta * mc, &G.posterior_noise[rz], &G.prior_noise[pz]);
          }
        }
      }
    }

    // Initial posterior and prior.
    const auto rs0 = sh.qs0(o0);
    const auto rz0 = sh.qz0(o0);
    for (std::size_t i = 0; i < sh.Ks; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < sh.Kz; ++j) {
        acc += P.q_z0[rz0 + j] * g[i * sh.Kz + j];
      }
      Gs[i] = acc;
    }
    for (std::size_t j = 0; j < sh.Kz; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < sh.Ks; ++i) {
        acc += P.q_s0[rs0 + i] * g[i * sh.Kz + j];
      }
      Gz[j] = acc;
    }
    add_softmax_gradient(&P.q_s0[rs0], Gs.data(), sh.Ks, 1.0, &G.posterior_state_initial[rs0]);
    add_softmax_gradient(&P.q_z0[rz0], Gz.data(), sh.Kz, 1.0, &G.posterior_noise_initial[rz0]);
    if (sw.use_kl_terms) {
      add_divergence_gradient(&P.q_s0[rs0], &P.lq_s0[rs0], P.p_s0.data(), P.lp_s0.data(), sh.Ks, P.kl_s0[o0],
                              P.order, -alpha, &G.posterior_state_initial[rs0], G.prior_state_initial.data());
      add_divergence_gradient(&P.q_z0[rz0], &P.lq_z0[rz0], P.p_z0.data(), P.lp_z0.data(), sh.Kz, P.kl_z0[o0],
                              P.order, -beta, &G.posterior_noise_initial[rz0], G.prior_noise_initial.data());
    }

    // Decoders.
    for (std::size_t t = 0; t <= T; ++t) {
      const auto o = ep.observation_at(t);
      for (std::size_t i = 0; i < sh.Ks; ++i) {
        for (std::size_t j = 0; j < sh.Kz; ++j) {
          const double mc = m[t * C + i * sh.Kz + j];
          const auto rs = sh.ds(i, j);
          const auto rz = sh.dz(i, j);
          for (std::size_t k = 0; k < sh.C1; ++k) {
            G.decoder_state[rs + k] += mc * ((k == sh.c1(o) ? 1.0 : 0.0) - P.d_s[rs + k]);
          }
          for (std::size_t k = 0; k < sh.C2; ++k) {
            G.decoder_noise[rz + k] += mc * ((k == sh.c2(o) ? 1.0 : 0.0) - P.d_z[rz + k]);
          }
        }
      }
    }
  }

  if (grad) {
    g_elbo.for_each([](const char*, std::vector<double>& t) {
      for (auto& x : t) {
        x = -x;
      }
    });
    *grad = std::move(g_elbo);
  }

  ElboBreakdown out;
  out.recon_o = recon_o;
  out.recon_r = sw.use_reward_term ? recon_r : 0.0;
  out.kl_s = kl_s;
  out.kl_z = kl_z;
  out.total = out.recon_o + out.recon_r + alpha * out.kl_s + beta * out.kl_z;
  return out;
}

std::vector<double> permute_axes(const std::vector<double>& table, const std::vector<std::size_t>& dims,
                                 const std::vector<std::span<const std::size_t>>& perms) {
  std::vector<double> out(table.size());
  std::vector<std::size_t> idx(dims.size(), 0);
  for (std::size_t flat = 0; flat < table.size(); ++flat) {
    std::size_t dst = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const auto v = perms[k].empty() ? idx[k] : perms[k][idx[k]];
      dst = dst * dims[k] + v;
    }
    out[dst] = table[flat];
    for (std::size_t k = dims.size(); k-- > 0;) {
      if (++idx[k] < dims[k]) {
        break;
      }
      idx[k] = 0;
    }
  }
  return out;
}

void require_permutation(std::span<const std::size_t> perm, std::size_t n) {
  std::vector<bool> seen(n, false);
  if (perm.size() != n) {
    throw InvalidArgument("permutation has the wrong length");
  }
  for (auto v : perm) {
    if (v >= n || seen[v]) {
      throw InvalidArgument("not a permutation");
    }
    seen[v] = true;
  }
}

// Joint code permutation induced by a state or noise permutation.
std::vector<std::size_t> joint_perm(const LatentSizes& s, std::span<const std::size_t> state_perm,
                                    std::span<const std::size_t> noise_perm) {
  std::vector<std::size_t> out(s.codes());
  for (std::size_t i = 0; i < s.state_codes; ++i) {
    for (std::size_t j = 0; j < s.noise_codes; ++j) {
      const auto ni = state_perm.empty() ? i : state_perm[i];
      const auto nj = noise_perm.empty() ? j : noise_perm[j];
      out[i * s.noise_codes + j] = ni * s.noise_codes + nj;
    }
  }
  return out;
}

LearnedWorldModel relabel(const LearnedWorldModel& model, std::span<const std::size_t> sp,
                          std::span<const std::size_t> zp, bool decoders) {
  const auto& s = model.sizes;
  const auto Ks = s.state_codes, Kz = s.noise_codes, A = s.actions, O = s.observations;
  const std::span<const std::size_t> none;
  LearnedWorldModel out = model;
  auto& t = out.params;
  const auto& src = model.params;
  t.prior_state_initial = permute_axes(src.prior_state_initial, {Ks}, {sp});
  t.prior_state = permute_axes(src.prior_state, {Ks, A, Ks}, {sp, none, sp});
  t.prior_noise_initial = permute_axes(src.prior_noise_initial, {Kz}, {zp});
  t.prior_noise = permute_axes(src.prior_noise, {Kz, Kz}, {zp, zp});
  t.posterior_state_initial = permute_axes(src.posterior_state_initial, {O, Ks}, {none, sp});
  t.posterior_state = permute_axes(src.posterior_state, {Ks, A, O, Kz, Ks}, {sp, none, none, zp, sp});
  t.posterior_noise_initial = permute_axes(src.posterior_noise_initial, {O, Kz}, {none, zp});
  t.posterior_noise = permute_axes(src.posterior_noise, {Kz, O, Ks, A, Kz}, {zp, none, sp, none, zp});
  t.reward_mean = permute_axes(src.reward_mean, {Ks, A, Ks}, {sp, none, sp});
  if (decoders) {
    const auto C1 = s.channels.first, C2 = s.channels.second;
    if (model.asymmetric) {
      t.decoder_state = permute_axes(src.decoder_state, {Ks, C1}, {sp, none});
      t.decoder_noise = permute_axes(src.decoder_noise, {Kz, C2}, {zp, none});
    } else {
      const auto jp = joint_perm(s, sp, zp);
      t.decoder_state = permute_axes(src.decoder_state, {s.codes(), C1}, {jp, none});
      t.decoder_noise = permute_axes(src.decoder_noise, {s.codes(), C2}, {jp, none});
    }
  }
  return out;
}

class GreedyModelPolicy final : public ObservationPolicy {
 public:
  GreedyModelPolicy(const LearnedWorldModel& model, double discount)
      : prepared_(model, KlOrder::kPosteriorPrior) {
    const auto mdp = extract_latent_mdp(model, discount);
    policy_ = value_iteration(mdp).policy.action;
    belief_.assign(model.sizes.codes(), 0.0);
    scratch_.assign(model.sizes.codes(), 0.0);
  }

  void reset() override { started_ = false; }

  std::size_t act(std::size_t observation) override {
    const auto& sh = prepared_.sh;
    if (observation >= sh.O) {
      throw InvalidArgument("observation out of range for the model");
    }
    if (!started_) {
      prepared_.initial_marginal(observation, belief_.data());
      started_ = true;
    } else {
      prepared_.propagate(belief_.data(), last_action_, observation, scratch_.data());
      belief_.swap(scratch_);
    }
    std::size_t best = 0;
    double best_mass = -1.0;
    for (std::size_t i = 0; i < sh.Ks; ++i) {
      double mass = 0.0;
      for (std::size_t j = 0; j < sh.Kz; ++j) {
        mass += belief_[i * sh.Kz + j];
      }
      if (mass > best_mass) {
        best_mass = mass;
        best = i;
      }
    }
    last_action_ = policy_[best];
    return last_action_;
  }

 private:
  Prepared prepared_;
  std::vector<std::size_t> policy_;
  std::vector<double> belief_;
  std::vector<double> scratch_;
  std::size_t last_action_ = 0;
  bool started_ = false;
};

}  // namespace

ModelTables zero_tables(const LatentSizes& s, bool asymmetric) {
  const auto Ks = s.state_codes, Kz = s.noise_codes, A = s.actions, O = s.observations;
  ModelTables t;
  t.prior_state_initial.assign(Ks, 0.0);
  t.prior_state.assign(Ks * A * Ks, 0.0);
  t.prior_noise_initial.assign(Kz, 0.0);
  t.prior_noise.assign(Kz * Kz, 0.0);
  t.posterior_state_initial.assign(O * Ks, 0.0);
  t.posterior_state.assign(Ks * A * O * Kz * Ks, 0.0);
  t.posterior_noise_initial.assign(O * Kz, 0.0);
  t.posterior_noise.assign(Kz * O * Ks * A * Kz, 0.0);
  t.decoder_state.assign((asymmetric ? Ks : Ks * Kz) * s.channels.first, 0.0);
  t.decoder_noise.assign((asymmetric ? Kz : Ks * Kz) * s.channels.second, 0.0);
  t.reward_mean.assign(Ks * A * Ks, 0.0);
  return t;
}

LatentSizes latent_sizes_for(const FactoredPOMDP& p, std::size_t state_codes, std::size_t noise_codes) {
  return {state_codes, noise_codes, p.sizes.actions, p.sizes.observations, p.channels};
}

LearnedWorldModel init_model(const LatentSizes& sizes, std::uint64_t seed, bool asymmetric) {
  if (sizes.state_codes < 1 || sizes.noise_codes < 1) {
    throw InvalidArgument("init_model: K_s and K_z must be at least 1");
  }
  if (sizes.actions < 1 || sizes.observations < 1) {
    throw InvalidArgument("init_model: need at least one action and one observation");
  }
  if (sizes.channels.first * sizes.channels.second != sizes.observations) {
    throw InvalidArgument("init_model: channel sizes do not multiply to the observation count");
  }
  LearnedWorldModel m;
  m.sizes = sizes;
  m.asymmetric = asymmetric;
  m.params = zero_tables(sizes, asymmetric);
  CounterRng rng(seed, Stream::kModelInit);
  m.params.for_each([&](const char*, std::vector<double>& t) {
    for (auto& x : t) {
      x = rng.uniform(-0.01, 0.01);
    }
  });
  return m;
}

void require_valid(const LearnedWorldModel& m) {
  const auto& s = m.sizes;
  if (s.state_codes < 1 || s.noise_codes < 1 || s.actions < 1 || s.observations < 1) {
    throw InvalidModel("learned model has an empty dimension");
  }
  if (s.channels.first * s.channels.second != s.observations) {
    throw InvalidModel("learned model channels do not multiply to the observation count");
  }
  if (!(m.alpha >= 0.0) || !(m.beta >= 0.0)) {
    throw InvalidModel("alpha and beta must be nonnegative");
  }
  const auto expected = zero_tables(s, m.asymmetric);
  std::vector<std::size_t> want;
  expected.for_each([&](const char*, const std::vector<double>& t) { want.push_back(t.size()); });
  std::size_t k = 0;
  m.params.for_each([&](const char* name, const std::vector<double>& t) {
    if (t.size() != want[k++]) {
      throw InvalidModel(std::string("table ") + name + " has " + std::to_string(t.size()) + " entries, expected " +
                         std::to_string(want[k - 1]));
    }
  });
}

std::vector<CodeBelief> filter_posterior(const LearnedWorldModel& model, const Episode& episode, std::size_t length) {
  require_valid(model);
  const Prepared P(model, KlOrder::kPosteriorPrior);
  const auto& sh = P.sh;
  require_episode(sh, episode);
  const auto n = length == 0 ? episode.horizon() + 1 : std::min(length, episode.horizon() + 1);
  std::vector<CodeBelief> out;
  std::vector<double> m(sh.C()), next(sh.C());
  for (std::size_t t = 0; t < n; ++t) {
    if (t == 0) {
      P.initial_marginal(episode.observation_at(0), m.data());
    } else {
      P.propagate(m.data(), episode.steps[t - 1].action, episode.observation_at(t), next.data());
      m.swap(next);
    }
    CodeBelief b{std::vector<double>(sh.Ks, 0.0), std::vector<double>(sh.Kz, 0.0), m};
    for (std::size_t i = 0; i < sh.Ks; ++i) {
      for (std::size_t j = 0; j < sh.Kz; ++j) {
        b.state[i] += m[i * sh.Kz + j];
        b.noise[j] += m[i * sh.Kz + j];
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

ElboBreakdown elbo(const LearnedWorldModel& model, std::span<const Episode> episodes, const ObjectiveSwitches& sw) {
  return evaluate(model, episodes, sw, nullptr);
}

ModelTables elbo_gradients(const LearnedWorldModel& model, std::span<const Episode> episodes,
                           const ObjectiveSwitches& sw, ElboBreakdown* value) {
  ModelTables grad;
  const auto v = evaluate(model, episodes, sw, &grad);
  if (value) {
    *value = v;
  }
  return grad;
}

TrainingResult train(LearnedWorldModel model, std::span<const Episode> episodes, const TrainingConfig& config) {
  if (!(config.step_size > 0.0)) {
    throw InvalidArgument("train: step_size must be positive");
  }
  if (episodes.empty()) {
    throw InvalidArgument("train: no episodes");
  }
  double count = 0.0;
  for (const auto& ep : episodes) {
    count += static_cast<double>(ep.horizon() + 1);
  }
  auto per_observation = [&](ElboBreakdown v) {
    v.total /= count;
    v.recon_o /= count;
    v.recon_r /= count;
    v.kl_s /= count;
    v.kl_z /= count;
    return v;
  };

  TrainingResult result;
  double step = config.step_size;
  double previous = std::numeric_limits<double>::infinity();
  std::size_t worsening = 0;
  for (std::size_t k = 0; k < config.step_count; ++k) {
    ElboBreakdown value;
    auto grad = elbo_gradients(model, episodes, config.switches, &value);
    const auto v = per_observation(value);
    result.loss_curve.push_back({k, v});
    if (!std::isfinite(v.total)) {
      throw TrainingDiverged("loss is not finite at step " + std::to_string(k));
    }
    worsening = v.total > previous ? worsening + 1 : 0;
    previous = v.total;
    if (worsening >= kDivergencePatience) {
      if (result.step_halved) {
        throw TrainingDiverged("loss worsened for " + std::to_string(kDivergencePatience) +
                               " consecutive steps at step " + std::to_string(k) + " even after halving the step size to " +
                               std::to_string(step));
      }
      step *= 0.5;
      result.step_halved = true;
      worsening = 0;
    }
    std::vector<std::vector<double>*> g;
    grad.for_each([&](const char*, std::vector<double>& t) { g.push_back(&t); });
    std::size_t n = 0;
    model.params.for_each([&](const char*, std::vector<double>& t) {
      const auto& d = *g[n++];
      for (std::size_t e = 0; e < t.size(); ++e) {
        t[e] -= step * d[e] / count;
      }
    });
  }
  result.loss_curve.push_back({config.step_count, per_observation(elbo(model, episodes, config.switches))});
  result.final_step_size = step;
  result.model = std::move(model);
  return result;
}

MDP extract_latent_mdp(const LearnedWorldModel& model, double discount) {
  require_valid(model);
  const auto Ks = model.sizes.state_codes;
  const auto A = model.sizes.actions;
  std::vector<double> p, lp;
  softmax_rows(model.params.prior_state, Ks, p, lp);
  MDP mdp;
  mdp.states = Ks;
  mdp.actions = A;
  mdp.discount = discount;
  mdp.transition.assign(A * Ks * Ks, 0.0);
  for (std::size_t i = 0; i < Ks; ++i) {
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t ni = 0; ni < Ks; ++ni) {
        mdp.transition[(a * Ks + i) * Ks + ni] = p[(i * A + a) * Ks + ni];
      }
    }
  }
  mdp.reward = model.params.reward_mean;
  return mdp;
}

std::shared_ptr<ObservationPolicy> make_greedy_policy(const LearnedWorldModel& model, double discount) {
  require_valid(model);
  return std::make_shared<GreedyModelPolicy>(model, discount);
}

std::vector<std::pair<std::size_t, std::size_t>> argmax_codes(const LearnedWorldModel& model, const Episode& episode) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& b : filter_posterior(model, episode)) {
    const auto i = static_cast<std::size_t>(std::max_element(b.state.begin(), b.state.end()) - b.state.begin());
    const auto j = static_cast<std::size_t>(std::max_element(b.noise.begin(), b.noise.end()) - b.noise.begin());
    out.emplace_back(i, j);
  }
  return out;
}

LearnedWorldModel relabel_noise_codes(const LearnedWorldModel& model, std::span<const std::size_t> perm,
                                      bool decoders) {
  require_valid(model);
  require_permutation(perm, model.sizes.noise_codes);
  return relabel(model, {}, perm, decoders);
}

LearnedWorldModel relabel_state_codes(const LearnedWorldModel& model, std::span<const std::size_t> perm,
                                      bool decoders) {
  require_valid(model);
  require_permutation(perm, model.sizes.state_codes);
  return relabel(model, perm, {}, decoders);
}

double channel1_log_likelihood(const LearnedWorldModel& model, std::span<const Episode> episodes) {
  require_valid(model);
  const Prepared P(model, KlOrder::kPosteriorPrior);
  const auto& sh = P.sh;
  double total = 0.0;
  for (const auto& ep : episodes) {
    const auto beliefs = filter_posterior(model, ep);
    for (std::size_t t = 0; t < beliefs.size(); ++t) {
      const auto o = ep.observation_at(t);
      for (std::size_t i = 0; i < sh.Ks; ++i) {
        for (std::size_t j = 0; j < sh.Kz; ++j) {
          const double mc = beliefs[t].joint[i * sh.Kz + j];
          if (mc > 0.0) {
            total += mc * P.ld_s[sh.ds(i, j) + sh.c1(o)];
          }
        }
      }
    }
  }
  return total;
}

PermutationTest emission_permutation_test(const LearnedWorldModel& model, std::span<const Episode> episodes,
                                          double tol) {
  PermutationTest out;
  const double base = channel1_log_likelihood(model, episodes);
  std::vector<std::size_t> perm(model.sizes.noise_codes);
  std::iota(perm.begin(), perm.end(), 0);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double v = channel1_log_likelihood(relabel_noise_codes(model, perm, false), episodes);
    out.max_change = std::max(out.max_change, std::abs(v - base));
  }
  out.passed = out.max_change <= tol * std::max(1.0, std::abs(base));
  return out;
}

}  // namespace beliefid
