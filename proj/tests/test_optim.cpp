#include "latopt/optim.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "latopt/autodiff.hpp"

using namespace latopt;

namespace {

std::string temp_path(const std::string& name) {
  return "/tmp/latopt_optim_test_" + name;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<char>(std::istreambuf_iterator<char>(f),
                           std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(f.good());
}

}  // namespace

TEST_CASE("one step on a unit scalar with unit gradient") {
  ParamStore<double> s;
  s.values.emplace("p", ArrayND<double>({1}, 1.0));
  s.add_grad("p", ArrayND<double>({1}, 1.0));
  adamw_step(s, 1e-4, 0.0);
  // bias correction makes the first update exactly lr / (1 + eps)
  REQUIRE(s.at("p").data[0] == Catch::Approx(0.9999).margin(1e-10));
  REQUIRE(s.step_count == 1);
  REQUIRE(s.grads.empty());
}

TEST_CASE("zero gradient with zero decay leaves parameters unchanged") {
  ParamStore<double> s;
  s.values.emplace("p", ArrayND<double>({3}, 2.5));
  s.add_grad("p", ArrayND<double>({3}, 0.0));
  adamw_step(s, 1e-2, 0.0);
  for (double v : s.at("p").data) REQUIRE(v == 2.5);
}

TEST_CASE("zero gradient with decay shrinks by the decoupled factor") {
  const double lr = 1e-4, wd = 0.05;
  ParamStore<double> s;
  s.values.emplace("p", ArrayND<double>({2}, 3.0));
  s.add_grad("p", ArrayND<double>({2}, 0.0));
  adamw_step(s, lr, wd);
  for (double v : s.at("p").data)
    REQUIRE(v == Catch::Approx(3.0 * (1.0 - lr * wd)).epsilon(1e-15));
}

TEST_CASE("missing gradient is an error that names the parameter") {
  ParamStore<double> s;
  s.values.emplace("weight", ArrayND<double>({2}, 1.0));
  s.values.emplace("bias", ArrayND<double>({2}, 0.0));
  s.add_grad("weight", ArrayND<double>({2}, 0.1));
  REQUIRE_THROWS_WITH(adamw_step(s, 1e-3, 0.0),
                      Catch::Matchers::ContainsSubstring("bias"));
}

TEST_CASE("gradient accumulation adds contributions with shape checks") {
  ParamStore<double> s;
  s.values.emplace("p", ArrayND<double>({2}, 0.0));
  s.add_grad("p", ArrayND<double>({2}, 1.0));
  s.add_grad("p", ArrayND<double>({2}, 0.5));
  REQUIRE(s.grads.at("p").data[0] == 1.5);
  REQUIRE_THROWS_AS(s.add_grad("p", ArrayND<double>({3}, 1.0)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(s.add_grad("q", ArrayND<double>({2}, 1.0)),
                    std::invalid_argument);
}

TEST_CASE("optimizer drives a quadratic to its minimum") {
  ParamStore<double> s;
  s.values.emplace("x", ArrayND<double>({1}, 0.0));
  for (int it = 0; it < 600; ++it) {
    Graph<double> g;
    Var<double> x{&g, g.input(s.at("x"), true)};
    Var<double> r = affine(x, 1.0, -3.0);
    Var<double> loss = sum_all(mul(r, r));
    g.backward(loss.id);
    s.add_grad("x", x.grad());
    adamw_step(s, 0.05, 0.0);
  }
  REQUIRE(s.at("x").data[0] == Catch::Approx(3.0).margin(0.01));
}

TEST_CASE("seeded init reproduces and respects schemes") {
  const auto a = seeded_init<float>({4, 7}, InitScheme::kFanInUniform, 42);
  const auto b = seeded_init<float>({4, 7}, InitScheme::kFanInUniform, 42);
  REQUIRE(a.data == b.data);
  const auto c = seeded_init<float>({4, 7}, InitScheme::kFanInUniform, 43);
  REQUIRE(a.data != c.data);

  const auto z = seeded_init<double>({3, 3}, InitScheme::kZeros, 1);
  for (double v : z.data) REQUIRE(v == 0.0);
  const auto o = seeded_init<double>({3, 3}, InitScheme::kOnes, 1);
  for (double v : o.data) REQUIRE(v == 1.0);

  const auto empty = seeded_init<float>({0}, InitScheme::kFanInUniform, 7);
  REQUIRE(empty.numel() == 0);
}

TEST_CASE("fan-in uniform stays in range with near-zero mean") {
  // fan_in = 25, so draws live in (-0.2, 0.2)
  const auto t = seeded_init<double>({10000, 25}, InitScheme::kFanInUniform, 99);
  const double bound = 1.0 / std::sqrt(25.0);
  double mean = 0.0;
  for (double v : t.data) {
    REQUIRE(std::abs(v) < bound);
    mean += v;
  }
  const double n = static_cast<double>(t.numel());
  mean /= n;
  // standard error of the mean of U(-b, b) is b / sqrt(3 n)
  const double se = bound / std::sqrt(3.0 * n);
  REQUIRE(std::abs(mean) < 3.0 * se);

  double var = 0.0;
  for (double v : t.data) var += (v - mean) * (v - mean);
  var /= n;
  REQUIRE(var == Catch::Approx(bound * bound / 3.0).epsilon(0.05));
}

TEST_CASE("checkpoint round-trips parameters") {
  ParamStore<float> s;
  s.values.emplace("decoder.w", seeded_init<float>({4, 3, 2, 2},
                                                   InitScheme::kFanInUniform, 3));
  s.values.emplace("encoder.b", seeded_init<float>({8}, InitScheme::kNormal, 4));
  s.values.emplace("head", ArrayND<float>({1}, 2.5f));
  const std::string path = temp_path("roundtrip.tckp");
  save_checkpoint(path, s);
  const auto loaded = load_checkpoint<float>(path);
  REQUIRE(loaded.values.size() == 3);
  for (const auto& [name, t] : s.values) {
    const auto& lt = loaded.values.at(name);
    REQUIRE(lt.shape == t.shape);
    REQUIRE(lt.data == t.data);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint bytes do not depend on insertion order") {
  ParamStore<float> a, b;
  a.values.emplace("x", ArrayND<float>({2}, 1.0f));
  a.values.emplace("y", ArrayND<float>({2}, 2.0f));
  b.values.emplace("y", ArrayND<float>({2}, 2.0f));
  b.values.emplace("x", ArrayND<float>({2}, 1.0f));
  const std::string pa = temp_path("order_a.tckp");
  const std::string pb = temp_path("order_b.tckp");
  save_checkpoint(pa, a);
  save_checkpoint(pb, b);
  REQUIRE(slurp(pa) == slurp(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("double-precision parameters survive the f32 container within eps") {
  ParamStore<double> s;
  s.values.emplace("p", ArrayND<double>({3}, 0.0));
  s.at("p").data = {0.125, -2.75, 1e-3};  // exactly representable in f32
  const std::string path = temp_path("f64.tckp");
  save_checkpoint(path, s);
  const auto loaded = load_checkpoint<double>(path);
  REQUIRE(loaded.values.at("p").data[0] == 0.125);
  REQUIRE(loaded.values.at("p").data[1] == -2.75);
  REQUIRE(loaded.values.at("p").data[2] ==
          static_cast<double>(static_cast<float>(1e-3)));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects malformed files") {
  ParamStore<float> s;
  s.values.emplace("p", ArrayND<float>({2, 2}, 1.5f));
  const std::string good_path = temp_path("good.tckp");
  save_checkpoint(good_path, s);
  const auto good = slurp(good_path);

  SECTION("bad magic") {
    auto bytes = good;
    bytes[0] = 'X';
    dump(temp_path("bad.tckp"), bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<float>(temp_path("bad.tckp")),
                        Catch::Matchers::ContainsSubstring("bad magic"));
  }
  SECTION("unsupported version") {
    auto bytes = good;
    bytes[4] = 9;
    dump(temp_path("bad.tckp"), bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<float>(temp_path("bad.tckp")),
                        Catch::Matchers::ContainsSubstring("unsupported version"));
  }
  SECTION("truncated tensor data") {
    auto bytes = good;
    bytes.resize(bytes.size() - 3);
    dump(temp_path("bad.tckp"), bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<float>(temp_path("bad.tckp")),
                        Catch::Matchers::ContainsSubstring("truncated data"));
  }
  SECTION("trailing partial record") {
    auto bytes = good;
    bytes.push_back(42);
    dump(temp_path("bad.tckp"), bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<float>(temp_path("bad.tckp")),
                        Catch::Matchers::ContainsSubstring("truncated tensor header"));
  }
  SECTION("duplicate tensor name") {
    auto bytes = good;
    bytes.insert(bytes.end(), good.begin() + 8, good.end());
    dump(temp_path("bad.tckp"), bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<float>(temp_path("bad.tckp")),
                        Catch::Matchers::ContainsSubstring("duplicate tensor"));
  }
  SECTION("missing file") {
    REQUIRE_THROWS_WITH(load_checkpoint<float>(temp_path("nope.tckp")),
                        Catch::Matchers::ContainsSubstring("cannot open"));
  }
  std::remove(good_path.c_str());
  std::remove(temp_path("bad.tckp").c_str());
}

TEST_CASE("training step determinism over a small loop") {
  auto run = [] {
    ParamStore<float> s;
    s.values.emplace("w", seeded_init<float>({5, 4}, InitScheme::kFanInUniform, 11));
    ArrayND<float> x = seeded_init<float>({2, 5}, InitScheme::kNormal, 12);
    std::vector<float> losses;
    for (int it = 0; it < 5; ++it) {
      Graph<float> g;
      Var<float> vw{&g, g.input(s.at("w"), true)};
      Var<float> vx{&g, g.input(x, false)};
      Var<float> loss = mean_all(mul(matmul(vx, vw), matmul(vx, vw)));
      g.backward(loss.id);
      s.add_grad("w", vw.grad());
      adamw_step(s, 1e-2, 0.01);
      losses.push_back(loss.val().data[0]);
    }
    return losses;
  };
  REQUIRE(run() == run());
}
