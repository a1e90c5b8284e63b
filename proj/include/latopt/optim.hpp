#pragma once

// Parameter container, AdamW, deterministic initialization, and the named
// tensor checkpoint format shared by the training tools.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "latopt/rng.hpp"
#include "latopt/tensor.hpp"

namespace latopt {

// Named parameters plus optimizer state. Value-semantic: copying a store
// snapshots parameters and moments together. Gradients are staged per step
// by the training loop and consumed (cleared) by adamw_step.
template <typename T>
struct ParamStore {
  std::map<std::string, ArrayND<T>> values;
  std::map<std::string, ArrayND<T>> grads;
  std::map<std::string, ArrayND<T>> moment1;
  std::map<std::string, ArrayND<T>> moment2;
  std::int64_t step_count = 0;

  ArrayND<T>& at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end())
      throw std::invalid_argument("no parameter named '" + name + "'");
    return it->second;
  }
  const ArrayND<T>& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end())
      throw std::invalid_argument("no parameter named '" + name + "'");
    return it->second;
  }

  void add_grad(const std::string& name, const ArrayND<T>& g) {
    const auto& v = at(name);
    if (g.shape != v.shape)
      throw std::invalid_argument("gradient shape " + shape_str(g.shape) +
                                  " does not match parameter '" + name + "' shape " +
                                  shape_str(v.shape));
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, g);
    } else {
      for (std::int64_t i = 0; i < g.numel(); ++i) it->second.data[i] += g.data[i];
    }
  }
};

enum class InitScheme { kFanInUniform, kZeros, kOnes, kNormal };

// Deterministic parameter draw. Fan-in uniform samples U(-b, b) with
// b = 1/sqrt(fan_in); fan_in is the product of all dims past the first
// (kernel receptive field for convs, input width for linear layers), or 1
// for vectors.
template <typename T>
ArrayND<T> seeded_init(const std::vector<int>& shape, InitScheme scheme,
                       std::uint64_t seed) {
  ArrayND<T> out(shape);
  if (out.numel() == 0) return out;
  Rng rng(seed);
  switch (scheme) {
    case InitScheme::kZeros:
      break;
    case InitScheme::kOnes:
      for (auto& v : out.data) v = T(1);
      break;
    case InitScheme::kNormal:
      for (auto& v : out.data) v = static_cast<T>(rng.normal());
      break;
    case InitScheme::kFanInUniform: {
      std::int64_t fan_in = 1;
      for (std::size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
      const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : out.data) v = static_cast<T>(rng.uniform(-b, b));
      break;
    }
  }
  return out;
}

// One AdamW step over every parameter in the store. Moments carry bias
// correction; weight decay is decoupled from the gradient term:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// Gradients must be present for all parameters and are cleared on exit.
template <typename T>
void adamw_step(ParamStore<T>& store, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  for (const auto& [name, v] : store.values) {
    (void)v;
    if (store.grads.find(name) == store.grads.end())
      throw std::runtime_error("adamw_step: missing gradient for parameter '" + name +
                               "'");
  }
  store.step_count += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(store.step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(store.step_count));
  for (auto& [name, p] : store.values) {
    const ArrayND<T>& g = store.grads.at(name);
    auto m_it = store.moment1.find(name);
    if (m_it == store.moment1.end())
      m_it = store.moment1.emplace(name, ArrayND<T>(p.shape)).first;
    auto v_it = store.moment2.find(name);
    if (v_it == store.moment2.end())
      v_it = store.moment2.emplace(name, ArrayND<T>(p.shape)).first;
    ArrayND<T>& m = m_it->second;
    ArrayND<T>& v2 = v_it->second;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m.data[i] = static_cast<T>(beta1) * m.data[i] +
                  static_cast<T>(1.0 - beta1) * g.data[i];
      v2.data[i] = static_cast<T>(beta2) * v2.data[i] +
                   static_cast<T>(1.0 - beta2) * g.data[i] * g.data[i];
      const double m_hat = static_cast<double>(m.data[i]) / bc1;
      const double v_hat = static_cast<double>(v2.data[i]) / bc2;
      const double upd = m_hat / (std::sqrt(v_hat) + eps) +
                         weight_decay * static_cast<double>(p.data[i]);
      p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) - lr * upd);
    }
  }
  store.grads.clear();
}

// ---- checkpoint container ----------------------------------------------------
//
// Layout (little-endian throughout):
//   magic "TCKP" | u32 version | repeated { u32 name_len | name bytes |
//   u32 rank | u32 dims[rank] | f32 data[prod(dims)] } until end of file.
// Tensors are written in sorted name order so files are byte-reproducible.

inline constexpr char kCheckpointMagic[4] = {'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void ckpt_error(const std::string& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path + ": " + what);
}

template <typename U>
void write_pod(std::ofstream& f, U v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
bool read_pod(std::ifstream& f, U& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(U));
  return f.gcount() == static_cast<std::streamsize>(sizeof(U));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) detail::ckpt_error(path, "cannot open for writing");
  f.write(kCheckpointMagic, 4);
  detail::write_pod(f, kCheckpointVersion);
  for (const auto& [name, t] : store.values) {  // std::map iterates sorted
    detail::write_pod(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(f, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) detail::write_pod(f, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const float v = static_cast<float>(t.data[i]);
      f.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  if (!f) detail::ckpt_error(path, "write failed");
}

template <typename T>
ParamStore<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) detail::ckpt_error(path, "cannot open");
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    detail::ckpt_error(path, "bad magic");
  std::uint32_t version = 0;
  if (!detail::read_pod(f, version)) detail::ckpt_error(path, "truncated header");
  if (version != kCheckpointVersion)
    detail::ckpt_error(path, "unsupported version " + std::to_string(version));

  ParamStore<T> store;
  for (;;) {
    std::uint32_t name_len = 0;
    f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (f.gcount() == 0 && f.eof()) break;  // clean end of file
    if (f.gcount() != static_cast<std::streamsize>(sizeof(name_len)))
      detail::ckpt_error(path, "truncated tensor header");
    if (name_len == 0 || name_len > 4096)
      detail::ckpt_error(path, "implausible name length " + std::to_string(name_len));
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (f.gcount() != static_cast<std::streamsize>(name_len))
      detail::ckpt_error(path, "truncated tensor name");
    std::uint32_t rank = 0;
    if (!detail::read_pod(f, rank)) detail::ckpt_error(path, "truncated rank");
    if (rank > 8) detail::ckpt_error(path, "implausible rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint32_t dim = 0;
      if (!detail::read_pod(f, dim)) detail::ckpt_error(path, "truncated dims");
      shape[d] = static_cast<int>(dim);
      numel *= dim;
    }
    if (rank == 0) shape = {1};
    ArrayND<T> t(shape);
    for (std::int64_t i = 0; i < numel; ++i) {
      float v = 0;
      f.read(reinterpret_cast<char*>(&v), sizeof(float));
      if (f.gcount() != static_cast<std::streamsize>(sizeof(float)))
        detail::ckpt_error(path, "truncated data for tensor '" + name + "'");
      t.data[i] = static_cast<T>(v);
    }
    if (store.values.count(name))
      detail::ckpt_error(path, "duplicate tensor '" + name + "'");
    store.values.emplace(std::move(name), std::move(t));
  }
  return store;
}

}  // namespace latopt
