#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "latopt/diffusion.hpp"
#include "latopt/rng.hpp"

using namespace latopt;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= xs.size();
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= xs.size() - 1;
  return m;
}

// plain matrix-vector walk through one hidden layer, kept free of the graph
// machinery so it can stand witness against the denoiser's wiring
std::vector<double> two_layer_reference(ParamStore<double>& p,
                                        const std::vector<double>& in) {
  const auto& w_in = p.at("ldm.in.w");
  const auto& b_in = p.at("ldm.in.b");
  const auto& w_out = p.at("ldm.out.w");
  const auto& b_out = p.at("ldm.out.b");
  const int din = w_in.shape[0], h = w_in.shape[1], dout = w_out.shape[1];
  std::vector<double> hid(h);
  for (int j = 0; j < h; ++j) {
    double acc = b_in.data[j];
    for (int i = 0; i < din; ++i) acc += in[i] * w_in.data[i * h + j];
    hid[j] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> out(dout);
  for (int j = 0; j < dout; ++j) {
    double acc = b_out.data[j];
    for (int i = 0; i < h; ++i) acc += hid[i] * w_out.data[i * dout + j];
    out[j] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("schedule construction and terminal corruption") {
  // single-step schedule: the one beta is taken literally
  const NoiseSchedule one = make_schedule(1, 0.5, 0.5);
  REQUIRE(one.steps == 1);
  REQUIRE(one.beta == std::vector<double>{0.5});
  REQUIRE(one.alpha == std::vector<double>{0.5});
  REQUIRE(one.alpha_bar == std::vector<double>{0.5});
  REQUIRE_FALSE(one.fully_corrupting());

  const NoiseSchedule def = default_schedule();
  REQUIRE(def.steps == 1000);
  REQUIRE(def.beta.front() == Catch::Approx(1e-4).margin(1e-18));
  REQUIRE(def.beta.back() == Catch::Approx(0.02).margin(1e-15));
  for (int t = 0; t < def.steps; ++t) {
    REQUIRE(def.beta[t] > 0.0);
    REQUIRE(def.beta[t] < 1.0);
    if (t > 0) {
      REQUIRE(def.beta[t] >= def.beta[t - 1]);
      REQUIRE(def.alpha_bar[t] < def.alpha_bar[t - 1]);
    }
  }
  REQUIRE(def.alpha_bar.back() < 1e-3);
  REQUIRE(def.fully_corrupting());

  const NoiseSchedule sh = short_schedule();
  REQUIRE(sh.steps == 200);
  REQUIRE(sh.fully_corrupting());

  REQUIRE_THROWS_AS(make_schedule(0, 0.1, 0.2), std::invalid_argument);
  REQUIRE_THROWS_AS(make_schedule(10, 0.0, 0.2), std::invalid_argument);
  REQUIRE_THROWS_AS(make_schedule(10, 0.1, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(make_schedule(10, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("forward corruption closed form") {
  const NoiseSchedule one = make_schedule(1, 0.5, 0.5);
  ArrayND<double> z0({4});
  ArrayND<double> eps({4});
  for (int i = 0; i < 4; ++i) {
    z0.data[i] = 0.5 * i - 1.0;
    eps.data[i] = 1.0 - 0.3 * i;
  }

  // t=0 leaves the latent untouched
  const ArrayND<double> same = forward_corrupt(z0, 0, one, eps);
  REQUIRE(same.data == z0.data);

  const ArrayND<double> z1 = forward_corrupt(z0, 1, one, eps);
  const double r = std::sqrt(0.5);
  for (int i = 0; i < 4; ++i)
    REQUIRE(z1.data[i] == Catch::Approx(r * z0.data[i] + r * eps.data[i]).margin(1e-15));

  REQUIRE_THROWS_AS(forward_corrupt(z0, -1, one, eps), std::invalid_argument);
  REQUIRE_THROWS_AS(forward_corrupt(z0, 2, one, eps), std::invalid_argument);
  ArrayND<double> short_eps({3});
  REQUIRE_THROWS_AS(forward_corrupt(z0, 1, one, short_eps), std::invalid_argument);
}

TEST_CASE("single-shot corruption matches the sequential chain") {
  // oracle: apply the per-step transition z_t = sqrt(1-b) z + sqrt(b) e with
  // fresh noise, entirely outside the implementation under test
  const NoiseSchedule s = default_schedule();
  const double x0 = 1.7;
  const int n = 20000;

  for (int t : {10, 100, 1000}) {
    Rng seq_rng(9000 + t);
    std::vector<double> seq(n);
    for (int k = 0; k < n; ++k) {
      double z = x0;
      for (int step = 1; step <= t; ++step)
        z = std::sqrt(1.0 - s.beta[step - 1]) * z +
            std::sqrt(s.beta[step - 1]) * seq_rng.normal();
      seq[k] = z;
    }

    ArrayND<double> z0({n}, x0);
    ArrayND<double> eps({n});
    Rng jump_rng(100 + t);
    fill_normal(eps, jump_rng);
    const ArrayND<double> zt = forward_corrupt(z0, t, s, eps);
    std::vector<double> jump(zt.data.begin(), zt.data.end());

    const Moments ms = moments(seq);
    const Moments mj = moments(jump);
    const double mean_ana = std::sqrt(s.alpha_bar[t - 1]) * x0;
    const double var_ana = 1.0 - s.alpha_bar[t - 1];
    INFO("t=" << t << " seq=(" << ms.mean << "," << ms.var << ") jump=(" << mj.mean
              << "," << mj.var << ") analytic=(" << mean_ana << "," << var_ana << ")");
    REQUIRE(std::abs(ms.mean - mj.mean) < 0.02 * std::max(1.0, std::abs(mean_ana)));
    REQUIRE(std::abs(ms.var - mj.var) < 0.02 * std::max(1.0, var_ana));
    REQUIRE(std::abs(mj.mean - mean_ana) < 0.02 * std::max(1.0, std::abs(mean_ana)));
    REQUIRE(std::abs(mj.var - var_ana) < 0.02 * std::max(1.0, var_ana));
  }
}

TEST_CASE("corruption preserves unit variance at every depth") {
  const NoiseSchedule s = short_schedule();
  const int n = 50000;
  ArrayND<double> z0({n});
  Rng rng(31);
  fill_normal(z0, rng);
  for (int t : {1, 50, 120, 200}) {
    ArrayND<double> eps({n});
    fill_normal(eps, rng);
    const ArrayND<double> zt = forward_corrupt(z0, t, s, eps);
    const Moments m = moments(std::vector<double>(zt.data.begin(), zt.data.end()));
    INFO("t=" << t << " var=" << m.var);
    REQUIRE(m.var == Catch::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("reverse step algebra at pinned noise estimates") {
  const NoiseSchedule s = short_schedule();
  ArrayND<double> z({2, 3});
  for (int i = 0; i < 6; ++i) z.data[i] = 0.4 * i - 1.0;
  ArrayND<double> zero({2, 3});
  ArrayND<double> draw({2, 3});
  for (int i = 0; i < 6; ++i) draw.data[i] = 0.2 * i - 0.5;

  // zero noise estimate: pure rescale plus the injected draw
  const int t = 50;
  const ArrayND<double> out = denoise_from_eps(z, t, s, zero, draw);
  const double ka = 1.0 / std::sqrt(s.alpha[t - 1]);
  const double kb = std::sqrt(s.beta[t - 1]);
  for (int i = 0; i < 6; ++i)
    REQUIRE(out.data[i] == Catch::Approx(ka * z.data[i] + kb * draw.data[i]).margin(1e-15));

  // final step ignores the draw entirely
  const ArrayND<double> last = denoise_from_eps(z, 1, s, zero, draw);
  const double k1 = 1.0 / std::sqrt(s.alpha[0]);
  for (int i = 0; i < 6; ++i)
    REQUIRE(last.data[i] == Catch::Approx(k1 * z.data[i]).margin(1e-15));

  REQUIRE_THROWS_AS(denoise_from_eps(z, 0, s, zero, draw), std::invalid_argument);
  REQUIRE_THROWS_AS(denoise_from_eps(z, 201, s, zero, draw), std::invalid_argument);
}

TEST_CASE("oracle noise estimates walk the chain back to the origin") {
  // an estimator with access to the clean latent reports the exact noise
  // content of the current state; the deterministic reverse chain must then
  // land back on the clean latent, because the final step sees a zero
  // residual coefficient
  const NoiseSchedule s = short_schedule();
  ArrayND<double> z0({4, 8});
  Rng rng(62);
  fill_uniform(z0, rng, -2.0, 2.0);
  ArrayND<double> eps({4, 8});
  fill_normal(eps, rng);

  ArrayND<double> z = forward_corrupt(z0, s.steps, s, eps);
  ArrayND<double> zero({4, 8});
  for (int t = s.steps; t >= 1; --t) {
    const double ab = s.alpha_bar[t - 1];
    ArrayND<double> eps_hat({4, 8});
    for (int i = 0; i < 32; ++i)
      eps_hat.data[i] =
          (z.data[i] - std::sqrt(ab) * z0.data[i]) / std::sqrt(1.0 - ab);
    z = denoise_from_eps(z, t, s, eps_hat, zero);
  }
  double linf = 0.0;
  for (int i = 0; i < 32; ++i) linf = std::max(linf, std::abs(z.data[i] - z0.data[i]));
  REQUIRE(linf < 1e-3);
}

TEST_CASE("time embedding separates every step index") {
  DenoiserConfig cfg;
  cfg.latent_dim = 4;
  cfg.time_dim = 64;
  const int steps = 200;
  std::vector<int> all(steps);
  for (int t = 1; t <= steps; ++t) all[t - 1] = t;
  const ArrayND<double> emb = time_embedding<double>(all, cfg);
  REQUIRE(emb.shape == std::vector<int>{steps, 64});
  for (double v : emb.data) {
    REQUIRE(v >= -1.0);
    REQUIRE(v <= 1.0);
  }
  // sin block then cos block at matching frequencies
  REQUIRE(emb.data[0] == Catch::Approx(std::sin(1.0)).margin(1e-15));
  REQUIRE(emb.data[32] == Catch::Approx(std::cos(1.0)).margin(1e-15));

  for (int a = 0; a < steps; ++a)
    for (int b = a + 1; b < steps; ++b) {
      double d = 0.0;
      for (int i = 0; i < 64; ++i)
        d = std::max(d, std::abs(emb.data[a * 64 + i] - emb.data[b * 64 + i]));
      if (d <= 1e-6) FAIL("steps " << a + 1 << " and " << b + 1 << " collide");
    }

  REQUIRE_THROWS_AS([] {
    DenoiserConfig bad;
    bad.time_dim = 7;
    bad.validate();
  }(), std::invalid_argument);
}

TEST_CASE("denoiser skips connect mirrored layers") {
  DenoiserConfig cfg;
  cfg.latent_dim = 5;
  cfg.time_dim = 6;
  cfg.hidden = 12;
  ParamStore<double> p = init_denoiser_params<double>(cfg, 19);
  REQUIRE(p.values.size() == 12);  // six linear layers, weight and bias each
  REQUIRE(p.at("ldm.in.w").shape == std::vector<int>{16, 12});
  REQUIRE(p.at("ldm.out.w").shape == std::vector<int>{12, 5});

  // silence the two layers feeding the skip sums: the network collapses to
  // out(relu(in(x))), which a hand-rolled forward reproduces. This only
  // holds when the skips connect h3 to h1 and h4 to h0.
  for (double& v : p.at("ldm.mid2.w").data) v = 0.0;
  for (double& v : p.at("ldm.mid3.w").data) v = 0.0;

  ArrayND<double> z({2, 5});
  ArrayND<double> c({2, 5});
  Rng rng(5);
  fill_uniform(z, rng, -1.0, 1.0);
  fill_uniform(c, rng, -1.0, 1.0);
  const std::vector<int> t = {3, 40};
  const ArrayND<double> out = denoiser_eval(p, cfg, z, c, t);
  REQUIRE(out.shape == std::vector<int>{2, 5});

  const ArrayND<double> temb = time_embedding<double>(t, cfg);
  for (int b = 0; b < 2; ++b) {
    std::vector<double> in;
    for (int i = 0; i < 5; ++i) in.push_back(z.data[b * 5 + i]);
    for (int i = 0; i < 5; ++i) in.push_back(c.data[b * 5 + i]);
    for (int i = 0; i < 6; ++i) in.push_back(temb.data[b * 6 + i]);
    const std::vector<double> ref = two_layer_reference(p, in);
    for (int i = 0; i < 5; ++i)
      REQUIRE(out.data[b * 5 + i] == Catch::Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("noise prediction training learns a conditioned toy task") {
  DenoiserConfig cfg;
  cfg.latent_dim = 4;
  cfg.time_dim = 8;
  cfg.hidden = 32;
  const NoiseSchedule sched = short_schedule();

  // conditioning hands the network the clean latent outright, so the noise
  // is recoverable and the loss has real headroom below its starting value
  ArrayND<double> z0({16, 4});
  Rng data_rng(88);
  fill_uniform(z0, data_rng, -1.0, 1.0);
  const ArrayND<double> c = z0;

  auto run = [&](std::uint64_t seed) {
    ParamStore<double> p = init_denoiser_params<double>(cfg, seed);
    Rng rng(seed + 1);
    std::vector<double> losses;
    for (int s = 0; s < 400; ++s)
      losses.push_back(ldm_train_step(p, cfg, sched, z0, c, 3e-3, 0.01, rng, s));
    return losses;
  };
  const std::vector<double> l1 = run(7);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += l1[i];
    tail += l1[l1.size() - 50 + i];
  }
  INFO("head=" << head / 50 << " tail=" << tail / 50);
  REQUIRE(tail < 0.9 * head);
  for (double v : l1) REQUIRE(std::isfinite(v));

  // bit-identical reruns under the same seeds
  const std::vector<double> l2 = run(7);
  REQUIRE(l1 == l2);
}

TEST_CASE("training rejects bad inputs and weak schedules") {
  DenoiserConfig cfg;
  cfg.latent_dim = 4;
  cfg.time_dim = 8;
  cfg.hidden = 16;
  ParamStore<double> p = init_denoiser_params<double>(cfg, 1);
  Rng rng(1);
  ArrayND<double> z0({4, 4});
  ArrayND<double> c_bad({4, 3});
  REQUIRE_THROWS_WITH(
      ldm_train_step(p, cfg, make_schedule(1, 0.5, 0.5), z0, z0, 1e-3, 0.0, rng, 0),
      Catch::Matchers::ContainsSubstring("fully corrupt"));
  REQUIRE_THROWS_AS(
      ldm_train_step(p, cfg, short_schedule(), z0, c_bad, 1e-3, 0.0, rng, 0),
      std::invalid_argument);

  ParamStore<double> poisoned = init_denoiser_params<double>(cfg, 1);
  poisoned.at("ldm.out.b").data[0] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_WITH(
      ldm_train_step(poisoned, cfg, short_schedule(), z0, z0, 1e-3, 0.0, rng, 12),
      Catch::Matchers::ContainsSubstring("step 12"));
}

TEST_CASE("latent sampling is a pure function of the seed") {
  DenoiserConfig cfg;
  cfg.latent_dim = 4;
  cfg.time_dim = 8;
  cfg.hidden = 16;
  ParamStore<double> p = init_denoiser_params<double>(cfg, 23);
  const NoiseSchedule sched = short_schedule();
  ArrayND<double> c({3, 4});
  Rng rng(2);
  fill_uniform(c, rng, -1.0, 1.0);

  const ArrayND<double> a = sample_latents(p, cfg, sched, c, 99);
  const ArrayND<double> b = sample_latents(p, cfg, sched, c, 99);
  REQUIRE(a.shape == std::vector<int>{3, 4});
  REQUIRE(a.data == b.data);
  for (double v : a.data) REQUIRE(std::isfinite(v));

  const ArrayND<double> other = sample_latents(p, cfg, sched, c, 100);
  REQUIRE(a.data != other.data);

  REQUIRE_THROWS_WITH(sample_latents(p, cfg, make_schedule(1, 0.5, 0.5), c, 99),
                      Catch::Matchers::ContainsSubstring("fully corrupt"));
  ArrayND<double> c_bad({3, 5});
  REQUIRE_THROWS_AS(sample_latents(p, cfg, sched, c_bad, 99), std::invalid_argument);
}
