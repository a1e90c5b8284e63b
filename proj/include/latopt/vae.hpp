#pragma once

// Generative autoencoder pair over optimized-topology rasters: a variational
// encoder/decoder on the topology channel and a deterministic autoencoder on
// the five conditioning channels, trained jointly. The latent pair (z from
// the topology, c from the conditions) feeds the latent denoiser.
//
// Layout: stem conv, then four stride-2 stages of patch-merge downsampling
// with depthwise/pointwise residual blocks and 8-group normalization; linear
// heads to the latent; the decoder mirrors the trunk with nearest-neighbor
// upsampling and squashes the topology output through a sigmoid.

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latopt/autodiff.hpp"
#include "latopt/losses.hpp"
#include "latopt/optim.hpp"
#include "latopt/record.hpp"
#include "latopt/rng.hpp"
#include "latopt/tensor.hpp"

namespace latopt {

struct VaeConfig {
  int resolution = 64;   // square input edge; four stride-2 stages need /16
  int latent_dim = 64;
  int base_width = 32;   // stem channels; stages run at w, 2w, 4w, 8w
  int norm_groups = 8;

  std::vector<int> stage_widths() const {
    return {base_width, 2 * base_width, 4 * base_width, 8 * base_width};
  }
  int bottom_edge() const { return resolution / 16; }
  int flat_dim() const { return 8 * base_width * bottom_edge() * bottom_edge(); }

  void validate() const {
    if (resolution < 16 || resolution % 16 != 0)
      throw std::invalid_argument("resolution must be a positive multiple of 16, got " +
                                  std::to_string(resolution));
    if (base_width < norm_groups || base_width % norm_groups != 0)
      throw std::invalid_argument("base width " + std::to_string(base_width) +
                                  " must be a multiple of the " +
                                  std::to_string(norm_groups) + " norm groups");
    if (latent_dim < 1) throw std::invalid_argument("latent dim must be positive");
  }
};

inline constexpr int kConditionChannels = 5;  // vf plane, stress, energy, load x/y

// Binds store parameters into a graph on demand and routes gradients back
// after the backward pass. One binding per graph per pass.
template <typename T>
struct GraphBinding {
  Graph<T>* g = nullptr;
  ParamStore<T>* store = nullptr;
  bool train = false;
  std::map<std::string, int> bound;

  Var<T> param(const std::string& name) {
    auto it = bound.find(name);
    if (it == bound.end())
      it = bound.emplace(name, g->input(store->at(name), train)).first;
    return {g, it->second};
  }

  void harvest() {
    for (const auto& [name, id] : bound)
      if (g->needs_grad(id)) store->add_grad(name, g->grad(id));
  }
};

namespace detail {

inline std::uint64_t param_seed(const std::string& name, std::uint64_t seed) {
  std::uint64_t h = 14695981039346656037ull ^ seed;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
void init_conv(ParamStore<T>& s, const std::string& prefix, int cout, int cin_g,
               int kh, int kw, std::uint64_t seed) {
  s.values.emplace(prefix + ".w",
                   seeded_init<T>({cout, cin_g, kh, kw}, InitScheme::kFanInUniform,
                                  param_seed(prefix + ".w", seed)));
  s.values.emplace(prefix + ".b", ArrayND<T>({cout}));
}

template <typename T>
void init_gn(ParamStore<T>& s, const std::string& prefix, int c) {
  s.values.emplace(prefix + ".g", ArrayND<T>({c}, T(1)));
  s.values.emplace(prefix + ".b", ArrayND<T>({c}));
}

// matmul weights are [din, dout], so the fan-in bound is set explicitly
template <typename T>
void init_linear(ParamStore<T>& s, const std::string& prefix, int din, int dout,
                 std::uint64_t seed) {
  ArrayND<T> w({din, dout});
  Rng rng(param_seed(prefix + ".w", seed));
  const double b = 1.0 / std::sqrt(static_cast<double>(din));
  fill_uniform(w, rng, -b, b);
  s.values.emplace(prefix + ".w", std::move(w));
  s.values.emplace(prefix + ".b", ArrayND<T>({dout}));
}

template <typename T>
Var<T> conv_layer(GraphBinding<T>& bind, Var<T> h, const std::string& prefix,
                  int stride, int pad, int groups = 1) {
  Var<T> w = bind.param(prefix + ".w");
  Var<T> b = bind.param(prefix + ".b");
  const int cout = bind.g->val(w.id).shape[0];
  return add(conv2d(h, w, stride, pad, groups), reshape(b, {cout, 1, 1}));
}

template <typename T>
Var<T> gn_layer(GraphBinding<T>& bind, Var<T> h, const std::string& prefix,
                int groups) {
  return group_norm(h, bind.param(prefix + ".g"), bind.param(prefix + ".b"), groups);
}

template <typename T>
Var<T> linear_layer(GraphBinding<T>& bind, Var<T> h, const std::string& prefix) {
  return add(matmul(h, bind.param(prefix + ".w")), bind.param(prefix + ".b"));
}

// x + pw(relu(gn(dw(x)))): cheap residual refinement at constant width
template <typename T>
Var<T> res_block(GraphBinding<T>& bind, Var<T> h, const std::string& prefix, int c,
                 int groups) {
  Var<T> y = conv_layer(bind, h, prefix + ".dw", 1, 1, c);
  y = gn_layer(bind, y, prefix + ".gn", groups);
  y = relu(y);
  y = conv_layer(bind, y, prefix + ".pw", 1, 0);
  return add(h, y);
}

template <typename T>
void init_trunk(ParamStore<T>& s, const std::string& net, int in_ch,
                const VaeConfig& cfg, std::uint64_t seed) {
  const auto ws = cfg.stage_widths();
  init_conv(s, net + ".stem", ws[0], in_ch, 3, 3, seed);
  init_gn(s, net + ".stem_gn", ws[0]);
  int prev = ws[0];
  for (int st = 0; st < 4; ++st) {
    const std::string tag = std::to_string(st);
    init_conv(s, net + ".down" + tag, ws[st], prev, 2, 2, seed);
    init_gn(s, net + ".down" + tag + "_gn", ws[st]);
    init_conv(s, net + ".block" + tag + ".dw", ws[st], 1, 3, 3, seed);
    init_gn(s, net + ".block" + tag + ".gn", ws[st]);
    init_conv(s, net + ".block" + tag + ".pw", ws[st], ws[st], 1, 1, seed);
    prev = ws[st];
  }
}

template <typename T>
Var<T> trunk_forward(GraphBinding<T>& bind, Var<T> x, const std::string& net,
                     const VaeConfig& cfg) {
  const auto ws = cfg.stage_widths();
  const int groups = cfg.norm_groups;
  Var<T> h = conv_layer(bind, x, net + ".stem", 1, 1);
  h = relu(gn_layer(bind, h, net + ".stem_gn", groups));
  for (int st = 0; st < 4; ++st) {
    const std::string tag = std::to_string(st);
    h = conv_layer(bind, h, net + ".down" + tag, 2, 0);
    h = relu(gn_layer(bind, h, net + ".down" + tag + "_gn", groups));
    h = res_block(bind, h, net + ".block" + tag, ws[st], groups);
  }
  const int bsz = bind.g->val(h.id).shape[0];
  return reshape(h, {bsz, cfg.flat_dim()});
}

template <typename T>
void init_head(ParamStore<T>& s, const std::string& net, int out_ch,
               const VaeConfig& cfg, std::uint64_t seed) {
  const auto ws = cfg.stage_widths();
  init_linear(s, net + ".proj", cfg.latent_dim, cfg.flat_dim(), seed);
  for (int st = 3; st >= 0; --st) {
    const std::string tag = std::to_string(st);
    const int cout = st == 0 ? ws[0] : ws[st - 1];
    init_conv(s, net + ".ublock" + tag + ".dw", ws[st], 1, 3, 3, seed);
    init_gn(s, net + ".ublock" + tag + ".gn", ws[st]);
    init_conv(s, net + ".ublock" + tag + ".pw", ws[st], ws[st], 1, 1, seed);
    init_conv(s, net + ".up" + tag, cout, ws[st], 3, 3, seed);
    init_gn(s, net + ".up" + tag + "_gn", cout);
  }
  init_conv(s, net + ".out", out_ch, ws[0], 3, 3, seed);
}

// latent vector back up to a [B, out_ch, res, res] raster, no squashing
template <typename T>
Var<T> decoder_forward(GraphBinding<T>& bind, Var<T> z, const std::string& net,
                       const VaeConfig& cfg) {
  const auto ws = cfg.stage_widths();
  const int groups = cfg.norm_groups;
  const int bsz = bind.g->val(z.id).shape[0];
  Var<T> h = linear_layer(bind, z, net + ".proj");
  h = reshape(h, {bsz, ws[3], cfg.bottom_edge(), cfg.bottom_edge()});
  for (int st = 3; st >= 0; --st) {
    const std::string tag = std::to_string(st);
    h = res_block(bind, h, net + ".ublock" + tag, ws[st], groups);
    h = upsample2x(h);
    h = conv_layer(bind, h, net + ".up" + tag, 1, 1);
    h = relu(gn_layer(bind, h, net + ".up" + tag + "_gn", groups));
  }
  return conv_layer(bind, h, net + ".out", 1, 1);
}

}  // namespace detail

// Creates every parameter for the four networks under one deterministic seed.
template <typename T>
ParamStore<T> init_vae_params(const VaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> s;
  detail::init_trunk(s, "tenc", 1, cfg, seed);
  detail::init_linear(s, "tenc.mu", cfg.flat_dim(), cfg.latent_dim, seed);
  detail::init_linear(s, "tenc.lv", cfg.flat_dim(), cfg.latent_dim, seed);
  detail::init_trunk(s, "cenc", kConditionChannels, cfg, seed);
  detail::init_linear(s, "cenc.head", cfg.flat_dim(), cfg.latent_dim, seed);
  detail::init_head(s, "tdec", 1, cfg, seed);
  detail::init_head(s, "cdec", kConditionChannels, cfg, seed);
  return s;
}

// ---- graph-level model pieces ----------------------------------------------

template <typename T>
std::pair<Var<T>, Var<T>> encode_topology_graph(GraphBinding<T>& bind, Var<T> x,
                                                const VaeConfig& cfg) {
  Var<T> flat = detail::trunk_forward(bind, x, "tenc", cfg);
  return {detail::linear_layer(bind, flat, "tenc.mu"),
          detail::linear_layer(bind, flat, "tenc.lv")};
}

template <typename T>
Var<T> decode_topology_graph(GraphBinding<T>& bind, Var<T> z, const VaeConfig& cfg) {
  return sigmoid(detail::decoder_forward(bind, z, "tdec", cfg));
}

template <typename T>
Var<T> encode_condition_graph(GraphBinding<T>& bind, Var<T> cond,
                              const VaeConfig& cfg) {
  return detail::linear_layer(bind, detail::trunk_forward(bind, cond, "cenc", cfg),
                              "cenc.head");
}

// load components are signed, so the condition reconstruction squashes
// through tanh instead of a sigmoid
template <typename T>
Var<T> decode_condition_graph(GraphBinding<T>& bind, Var<T> c, const VaeConfig& cfg) {
  return tanh_op(detail::decoder_forward(bind, c, "cdec", cfg));
}

// z = mu + exp(log_var / 2) * eps; the draw enters as a constant so gradients
// reach only mu and log_var
template <typename T>
Var<T> reparameterize(Var<T> mu, Var<T> log_var, const ArrayND<T>& eps) {
  Graph<T>& g = *mu.g;
  if (eps.shape != g.val(mu.id).shape)
    throw std::invalid_argument("reparameterize: noise shape " + shape_str(eps.shape) +
                                " does not match mu " +
                                shape_str(g.val(mu.id).shape));
  Var<T> ev{&g, g.input(eps, false)};
  return add(mu, mul(exp_op(affine(log_var, 0.5)), ev));
}

// 1/2 sum_d (mu^2 + e^lv - 1 - lv), meaned over the batch
template <typename T>
Var<T> kl_divergence_graph(Var<T> mu, Var<T> log_var) {
  Graph<T>& g = *mu.g;
  const int d = g.val(mu.id).shape.back();
  Var<T> term = sub(add(mul(mu, mu), exp_op(log_var)), affine(log_var, 1.0, 1.0));
  return affine(mean_all(term), 0.5 * d);
}

inline double kl_divergence(const std::vector<double>& mu,
                            const std::vector<double>& log_var) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    s += mu[i] * mu[i] + std::exp(log_var[i]) - 1.0 - log_var[i];
  return 0.5 * s;
}

// ---- batch staging -----------------------------------------------------------

namespace detail {

template <typename T>
void copy_channel(const Field2D& f, T* dst) {
  for (std::size_t i = 0; i < f.v.size(); ++i) dst[i] = static_cast<T>(f.v[i]);
}

}  // namespace detail

template <typename T>
ArrayND<T> topology_batch(const std::vector<const SampleRecord*>& recs) {
  const int n = recs[0]->chan[kChanTopology].w;
  ArrayND<T> out({static_cast<int>(recs.size()), 1, n, n});
  for (std::size_t b = 0; b < recs.size(); ++b)
    detail::copy_channel(recs[b]->chan[kChanTopology],
                         out.data.data() + b * static_cast<std::size_t>(n) * n);
  return out;
}

template <typename T>
ArrayND<T> condition_batch(const std::vector<const SampleRecord*>& recs) {
  const int n = recs[0]->chan[kChanTopology].w;
  const std::size_t hw = static_cast<std::size_t>(n) * n;
  ArrayND<T> out({static_cast<int>(recs.size()), kConditionChannels, n, n});
  for (std::size_t b = 0; b < recs.size(); ++b)
    for (int c = 0; c < kConditionChannels; ++c)
      detail::copy_channel(recs[b]->chan[c + 1],
                           out.data.data() + (b * kConditionChannels + c) * hw);
  return out;
}

template <typename T>
ArrayND<T> load_magnitude_batch(const std::vector<const SampleRecord*>& recs) {
  std::vector<const Field2D*> fx, fy;
  for (const SampleRecord* r : recs) {
    fx.push_back(&r->chan[kChanLoadX]);
    fy.push_back(&r->chan[kChanLoadY]);
  }
  return load_magnitude_field<T>(fx, fy);
}

inline std::vector<double> target_vf_batch(const std::vector<const SampleRecord*>& recs) {
  std::vector<double> t;
  for (const SampleRecord* r : recs) t.push_back(r->problem.target_vf);
  return t;
}

// ---- training ------------------------------------------------------------------

struct LossBreakdown {
  double recon = 0.0;       // topology reconstruction MSE
  double kl = 0.0;
  double vf = 0.0;
  double ld = 0.0;
  double fm = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double cond_recon = 0.0;  // condition pathway MSE, optimized alongside
  double total = 0.0;       // recon + beta1*kl + beta2*(vf+ld+fm)

  void compose_total() { total = recon + beta1 * kl + beta2 * (vf + ld + fm); }
};

inline std::string loss_log_line(std::int64_t step, const LossBreakdown& lb) {
  std::ostringstream os;
  os << "step=" << step << " recon=" << lb.recon << " kl=" << lb.kl
     << " vf=" << lb.vf << " ld=" << lb.ld << " fm=" << lb.fm
     << " cond=" << lb.cond_recon << " total=" << lb.total;
  return os.str();
}

struct VaeTrainOptions {
  double beta1 = 0.075;
  double beta2 = 0.3;
  double lr = 1e-4;
  double weight_decay = 0.05;
};

// One optimization step over both pathways. The objective applied to the
// parameters is total + cond_recon; the reported breakdown keeps them apart.
template <typename T>
LossBreakdown vae_train_step(ParamStore<T>& params, const VaeConfig& cfg,
                             const std::vector<const SampleRecord*>& batch,
                             const VaeTrainOptions& opt, Rng& rng,
                             std::int64_t step_index) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const int bsz = static_cast<int>(batch.size());
  const int n = cfg.resolution;
  if (batch[0]->chan[kChanTopology].w != n)
    throw std::invalid_argument("record resolution " +
                                std::to_string(batch[0]->chan[kChanTopology].w) +
                                " does not match configured " + std::to_string(n));

  Graph<T> g;
  GraphBinding<T> bind{&g, &params, true};

  Var<T> x{&g, g.input(topology_batch<T>(batch), false)};
  Var<T> cond{&g, g.input(condition_batch<T>(batch), false)};

  auto [mu, lv] = encode_topology_graph(bind, x, cfg);
  ArrayND<T> eps({bsz, cfg.latent_dim});
  fill_normal(eps, rng);
  Var<T> z = reparameterize(mu, lv, eps);
  Var<T> xr = decode_topology_graph(bind, z, cfg);

  Var<T> diff = sub(xr, x);
  Var<T> recon = mean_all(mul(diff, diff));
  Var<T> kl = kl_divergence_graph(mu, lv);

  Var<T> xr_flat = reshape(xr, {bsz, n, n});
  Var<T> vf = mean_all(vf_loss_ad(xr_flat, target_vf_batch(batch)));
  Var<T> ld = mean_all(ld_loss_ad(xr_flat, load_magnitude_batch<T>(batch)));
  Var<T> fm = mean_all(fm_loss_surrogate_ad(xr_flat));

  Var<T> aux = add(add(vf, ld), fm);
  Var<T> total =
      add(recon, add(affine(kl, opt.beta1), affine(aux, opt.beta2)));

  Var<T> c = encode_condition_graph(bind, cond, cfg);
  Var<T> cr = decode_condition_graph(bind, c, cfg);
  Var<T> cdiff = sub(cr, cond);
  Var<T> cond_recon = mean_all(mul(cdiff, cdiff));

  Var<T> objective = add(total, cond_recon);
  g.backward(objective.id);
  bind.harvest();

  LossBreakdown lb;
  lb.recon = static_cast<double>(g.val(recon.id).data[0]);
  lb.kl = static_cast<double>(g.val(kl.id).data[0]);
  lb.vf = static_cast<double>(g.val(vf.id).data[0]);
  lb.ld = static_cast<double>(g.val(ld.id).data[0]);
  lb.fm = static_cast<double>(g.val(fm.id).data[0]);
  lb.beta1 = opt.beta1;
  lb.beta2 = opt.beta2;
  lb.cond_recon = static_cast<double>(g.val(cond_recon.id).data[0]);
  lb.compose_total();
  if (!std::isfinite(lb.total) || !std::isfinite(lb.cond_recon))
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_index));

  adamw_step(params, opt.lr, opt.weight_decay);
  return lb;
}

// ---- deterministic inference helpers -------------------------------------------

template <typename T>
struct ReconstructionResult {
  double topo_mse = 0.0;
  double cond_mse = 0.0;
  ArrayND<T> reconstruction;  // [B,1,n,n]
};

// encode to the posterior mean, decode back; no sampling anywhere
template <typename T>
ReconstructionResult<T> vae_reconstruct(ParamStore<T>& params, const VaeConfig& cfg,
                                        const std::vector<const SampleRecord*>& batch) {
  Graph<T> g;
  GraphBinding<T> bind{&g, &params, false};
  Var<T> x{&g, g.input(topology_batch<T>(batch), false)};
  Var<T> cond{&g, g.input(condition_batch<T>(batch), false)};
  auto [mu, lv] = encode_topology_graph(bind, x, cfg);
  (void)lv;
  Var<T> xr = decode_topology_graph(bind, mu, cfg);
  Var<T> cr = decode_condition_graph(bind, encode_condition_graph(bind, cond, cfg), cfg);

  ReconstructionResult<T> out;
  const auto& xv = g.val(x.id);
  const auto& rv = g.val(xr.id);
  double se = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const double d = static_cast<double>(rv.data[i]) - static_cast<double>(xv.data[i]);
    se += d * d;
  }
  out.topo_mse = se / static_cast<double>(xv.numel());
  const auto& cv = g.val(cond.id);
  const auto& crv = g.val(cr.id);
  se = 0.0;
  for (std::int64_t i = 0; i < cv.numel(); ++i) {
    const double d = static_cast<double>(crv.data[i]) - static_cast<double>(cv.data[i]);
    se += d * d;
  }
  out.cond_mse = se / static_cast<double>(cv.numel());
  out.reconstruction = rv;
  return out;
}

template <typename T>
ArrayND<T> encode_condition_batch(ParamStore<T>& params, const VaeConfig& cfg,
                                  const std::vector<const SampleRecord*>& batch) {
  Graph<T> g;
  GraphBinding<T> bind{&g, &params, false};
  Var<T> cond{&g, g.input(condition_batch<T>(batch), false)};
  Var<T> c = encode_condition_graph(bind, cond, cfg);
  return g.val(c.id);
}

template <typename T>
ArrayND<T> encode_topology_mean(ParamStore<T>& params, const VaeConfig& cfg,
                                const std::vector<const SampleRecord*>& batch) {
  Graph<T> g;
  GraphBinding<T> bind{&g, &params, false};
  Var<T> x{&g, g.input(topology_batch<T>(batch), false)};
  auto [mu, lv] = encode_topology_graph(bind, x, cfg);
  (void)lv;
  return g.val(mu.id);
}

// decode latents straight to rasters, used after latent sampling
template <typename T>
ArrayND<T> decode_topology_batch(ParamStore<T>& params, const VaeConfig& cfg,
                                 const ArrayND<T>& z) {
  Graph<T> g;
  GraphBinding<T> bind{&g, &params, false};
  Var<T> zv{&g, g.input(z, false)};
  Var<T> xr = decode_topology_graph(bind, zv, cfg);
  return g.val(xr.id);
}

}  // namespace latopt
