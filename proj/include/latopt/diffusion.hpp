#pragma once

// Denoising diffusion over the autoencoder's latent space. The topology
// latent is corrupted by a linear-in-beta Gaussian schedule; a residual MLP
// predicts the added noise from the noisy latent, a sinusoidal time
// embedding, and the untouched condition latent concatenated at the input.
// Ancestral sampling walks the learned reverse chain and hands the result to
// the decoder.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "latopt/autodiff.hpp"
#include "latopt/optim.hpp"
#include "latopt/rng.hpp"
#include "latopt/tensor.hpp"
#include "latopt/vae.hpp"

namespace latopt {

struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;       // beta[t-1] is the step-t variance increment
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  // whether the terminal marginal is close enough to the prior that z_T
  // carries essentially no signal; required before training or sampling
  bool fully_corrupting(double tol = 1e-3) const {
    return !alpha_bar.empty() && alpha_bar.back() < tol;
  }
};

inline NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::invalid_argument("schedule betas must satisfy 0 < start <= end < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    s.beta[t] = steps == 1 ? beta_start
                           : beta_start + (beta_end - beta_start) * t / (steps - 1.0);
    s.alpha[t] = 1.0 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

// standard long schedule and a shortened one with the same terminal
// signal-to-noise for quick runs
inline NoiseSchedule default_schedule() { return make_schedule(1000, 1e-4, 0.02); }
inline NoiseSchedule short_schedule() { return make_schedule(200, 1e-4, 0.08); }

namespace detail {

inline void check_schedule_usable(const NoiseSchedule& s, const char* what) {
  if (!s.fully_corrupting())
    throw std::invalid_argument(std::string(what) +
                                ": schedule does not fully corrupt (terminal "
                                "signal fraction " +
                                std::to_string(s.alpha_bar.empty() ? 1.0
                                                                   : s.alpha_bar.back()) +
                                ")");
}

}  // namespace detail

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps; t=0 returns z0 untouched
template <typename T>
ArrayND<T> forward_corrupt(const ArrayND<T>& z0, int t, const NoiseSchedule& s,
                           const ArrayND<T>& eps) {
  if (t < 0 || t > s.steps)
    throw std::invalid_argument("corruption step " + std::to_string(t) +
                                " outside [0, " + std::to_string(s.steps) + "]");
  if (t == 0) return z0;
  if (eps.shape != z0.shape)
    throw std::invalid_argument("noise shape " + shape_str(eps.shape) +
                                " does not match latent " + shape_str(z0.shape));
  const double ab = s.alpha_bar[t - 1];
  const T ks = static_cast<T>(std::sqrt(ab));
  const T kn = static_cast<T>(std::sqrt(1.0 - ab));
  ArrayND<T> zt(z0.shape);
  for (std::int64_t i = 0; i < z0.numel(); ++i)
    zt.data[i] = ks * z0.data[i] + kn * eps.data[i];
  return zt;
}

// ---- denoiser --------------------------------------------------------------

struct DenoiserConfig {
  int latent_dim = 64;
  int time_dim = 64;    // sinusoidal embedding width, half sin half cos
  int hidden = 256;

  void validate() const {
    if (latent_dim < 1 || hidden < 1)
      throw std::invalid_argument("denoiser dims must be positive");
    if (time_dim < 2 || time_dim % 2 != 0)
      throw std::invalid_argument("time embedding width must be even and >= 2");
  }
};

// interleaved-frequency sin/cos features of the integer step index
template <typename T>
ArrayND<T> time_embedding(const std::vector<int>& t, const DenoiserConfig& cfg) {
  const int half = cfg.time_dim / 2;
  ArrayND<T> out({static_cast<int>(t.size()), cfg.time_dim});
  for (std::size_t b = 0; b < t.size(); ++b)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double ang = t[b] * freq;
      out.data[b * cfg.time_dim + i] = static_cast<T>(std::sin(ang));
      out.data[b * cfg.time_dim + half + i] = static_cast<T>(std::cos(ang));
    }
  return out;
}

template <typename T>
ParamStore<T> init_denoiser_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> s;
  const int in = 2 * cfg.latent_dim + cfg.time_dim;
  detail::init_linear(s, "ldm.in", in, cfg.hidden, seed);
  detail::init_linear(s, "ldm.mid0", cfg.hidden, cfg.hidden, seed);
  detail::init_linear(s, "ldm.mid1", cfg.hidden, cfg.hidden, seed);
  detail::init_linear(s, "ldm.mid2", cfg.hidden, cfg.hidden, seed);
  detail::init_linear(s, "ldm.mid3", cfg.hidden, cfg.hidden, seed);
  detail::init_linear(s, "ldm.out", cfg.hidden, cfg.latent_dim, seed);
  return s;
}

// residual MLP with skips between mirrored hidden layers
template <typename T>
Var<T> denoiser_forward(GraphBinding<T>& bind, Var<T> zt, Var<T> c, Var<T> temb) {
  Var<T> in = concat<T>({zt, c, temb}, 1);
  Var<T> h0 = relu(detail::linear_layer(bind, in, "ldm.in"));
  Var<T> h1 = relu(detail::linear_layer(bind, h0, "ldm.mid0"));
  Var<T> h2 = relu(detail::linear_layer(bind, h1, "ldm.mid1"));
  Var<T> h3 = add(relu(detail::linear_layer(bind, h2, "ldm.mid2")), h1);
  Var<T> h4 = add(relu(detail::linear_layer(bind, h3, "ldm.mid3")), h0);
  return detail::linear_layer(bind, h4, "ldm.out");
}

// plain-array denoiser evaluation for inference paths
template <typename T>
ArrayND<T> denoiser_eval(ParamStore<T>& params, const DenoiserConfig& cfg,
                         const ArrayND<T>& zt, const ArrayND<T>& c,
                         const std::vector<int>& t) {
  Graph<T> g;
  GraphBinding<T> bind{&g, &params, false};
  Var<T> vz{&g, g.input(zt, false)};
  Var<T> vc{&g, g.input(c, false)};
  Var<T> vt{&g, g.input(time_embedding<T>(t, cfg), false)};
  Var<T> out = denoiser_forward(bind, vz, vc, vt);
  return g.val(out.id);
}

// ---- reverse process ---------------------------------------------------------

// One reverse transition given the model's noise estimate:
//   mean = (z_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)
// with fixed variance beta_t; the final step (t=1) adds no noise.
template <typename T>
ArrayND<T> denoise_from_eps(const ArrayND<T>& zt, int t, const NoiseSchedule& s,
                            const ArrayND<T>& eps_hat, const ArrayND<T>& eps_draw) {
  if (t < 1 || t > s.steps)
    throw std::invalid_argument("reverse step " + std::to_string(t) + " outside [1, " +
                                std::to_string(s.steps) + "]");
  if (eps_hat.shape != zt.shape || eps_draw.shape != zt.shape)
    throw std::invalid_argument("denoise: mismatched shapes");
  const double beta = s.beta[t - 1];
  const double k_eps = beta / std::sqrt(1.0 - s.alpha_bar[t - 1]);
  const double k_mean = 1.0 / std::sqrt(s.alpha[t - 1]);
  const double k_noise = t > 1 ? std::sqrt(beta) : 0.0;
  ArrayND<T> out(zt.shape);
  for (std::int64_t i = 0; i < zt.numel(); ++i)
    out.data[i] = static_cast<T>(
        k_mean * (static_cast<double>(zt.data[i]) -
                  k_eps * static_cast<double>(eps_hat.data[i])) +
        k_noise * static_cast<double>(eps_draw.data[i]));
  return out;
}

// ---- training ----------------------------------------------------------------

// One noise-prediction step on frozen latents: per-sample step indices drawn
// uniformly from [1, T], targets are the injected noise.
template <typename T>
double ldm_train_step(ParamStore<T>& params, const DenoiserConfig& cfg,
                      const NoiseSchedule& sched, const ArrayND<T>& z0,
                      const ArrayND<T>& c, double lr, double weight_decay, Rng& rng,
                      std::int64_t step_index) {
  detail::check_schedule_usable(sched, "ldm training");
  if (z0.rank() != 2 || c.shape != z0.shape)
    throw std::invalid_argument("ldm training wants matching [B,D] latents, got " +
                                shape_str(z0.shape) + " and " + shape_str(c.shape));
  const int bsz = z0.shape[0], d = z0.shape[1];

  std::vector<int> t(bsz);
  for (int b = 0; b < bsz; ++b)
    t[b] = 1 + static_cast<int>(rng.uniform_int(sched.steps));
  ArrayND<T> eps({bsz, d});
  fill_normal(eps, rng);

  ArrayND<T> zt({bsz, d});
  for (int b = 0; b < bsz; ++b) {
    const double ab = sched.alpha_bar[t[b] - 1];
    const T ks = static_cast<T>(std::sqrt(ab));
    const T kn = static_cast<T>(std::sqrt(1.0 - ab));
    for (int i = 0; i < d; ++i)
      zt.data[b * d + i] = ks * z0.data[b * d + i] + kn * eps.data[b * d + i];
  }

  Graph<T> g;
  GraphBinding<T> bind{&g, &params, true};
  Var<T> vz{&g, g.input(zt, false)};
  Var<T> vc{&g, g.input(c, false)};
  Var<T> vt{&g, g.input(time_embedding<T>(t, cfg), false)};
  Var<T> ve{&g, g.input(eps, false)};
  Var<T> eps_hat = denoiser_forward(bind, vz, vc, vt);
  Var<T> diff = sub(eps_hat, ve);
  Var<T> loss = mean_all(mul(diff, diff));
  g.backward(loss.id);
  bind.harvest();

  const double lv = static_cast<double>(g.val(loss.id).data[0]);
  if (!std::isfinite(lv))
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_index));
  adamw_step(params, lr, weight_decay);
  return lv;
}

// ---- sampling ------------------------------------------------------------------

// Ancestral chain from pure noise down to z0 for a batch of condition
// latents. Pure function of (seed, conditions, parameters): the rng draws
// z_T first, then one noise batch per step.
template <typename T>
ArrayND<T> sample_latents(ParamStore<T>& params, const DenoiserConfig& cfg,
                          const NoiseSchedule& sched, const ArrayND<T>& c,
                          std::uint64_t seed) {
  detail::check_schedule_usable(sched, "sampling");
  if (c.rank() != 2 || c.shape[1] != cfg.latent_dim)
    throw std::invalid_argument("conditions must be [B," +
                                std::to_string(cfg.latent_dim) + "], got " +
                                shape_str(c.shape));
  const int bsz = c.shape[0];
  Rng rng(seed);
  ArrayND<T> z({bsz, cfg.latent_dim});
  fill_normal(z, rng);
  ArrayND<T> draw({bsz, cfg.latent_dim});
  for (int t = sched.steps; t >= 1; --t) {
    const ArrayND<T> eps_hat =
        denoiser_eval(params, cfg, z, c, std::vector<int>(bsz, t));
    if (t > 1)
      fill_normal(draw, rng);
    else
      for (auto& v : draw.data) v = T(0);
    z = denoise_from_eps(z, t, sched, eps_hat, draw);
  }
  return z;
}

// full pipeline: condition records -> latents -> decoded rasters [B,1,n,n]
template <typename T>
ArrayND<T> sample_topologies(ParamStore<T>& vae_params, const VaeConfig& vae_cfg,
                             ParamStore<T>& ldm_params, const DenoiserConfig& cfg,
                             const NoiseSchedule& sched,
                             const std::vector<const SampleRecord*>& batch,
                             std::uint64_t seed) {
  ArrayND<T> c = encode_condition_batch(vae_params, vae_cfg, batch);
  ArrayND<T> z = sample_latents(ldm_params, cfg, sched, c, seed);
  return decode_topology_batch(vae_params, vae_cfg, z);
}

}  // namespace latopt
