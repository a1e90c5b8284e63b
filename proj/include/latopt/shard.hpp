#pragma once

// Dataset persistence. A shard is a flat binary file of fixed-size records
// (six float32 channels each) plus a text manifest sitting next to it. The
// manifest pins each record's provenance; together with the sampler being a
// pure function of the seed, a shard can be rebuilt bit-for-bit or audited
// without touching the binary.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latopt/record.hpp"

namespace latopt {

static_assert(std::endian::native == std::endian::little,
              "shard files are little-endian; big-endian hosts need swaps");

inline constexpr char kShardMagic[4] = {'T', 'O', 'P', 'O'};
inline constexpr std::uint32_t kShardVersion = 1;

namespace detail {

inline std::string manifest_path(const std::string& shard_path) {
  return shard_path + ".manifest";
}

inline std::string fmt_g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

[[noreturn]] inline void shard_error(const std::string& path, std::uint64_t offset,
                                     const std::string& what) {
  std::ostringstream os;
  os << "shard " << path << " at byte " << offset << ": " << what;
  throw std::runtime_error(os.str());
}

}  // namespace detail

// Writes the binary shard and its manifest. All records must share the
// resolution and normalization flag.
inline void write_shard(const std::string& path,
                        const std::vector<SampleRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("write_shard: no records");
  const int n = records[0].problem.resolution;
  const bool normalized = records[0].normalized;
  for (const auto& r : records) {
    if (r.problem.resolution != n || r.normalized != normalized)
      throw std::invalid_argument("write_shard: mixed record shapes");
    for (const auto& c : r.chan)
      if (c.w != n || c.h != n)
        throw std::invalid_argument("write_shard: channel shape mismatch");
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_shard: cannot open " + path);
  const auto put_u32 = [&f](std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  };
  f.write(kShardMagic, 4);
  put_u32(kShardVersion);
  put_u32(static_cast<std::uint32_t>(n));
  put_u32(static_cast<std::uint32_t>(n));
  put_u32(static_cast<std::uint32_t>(kChannelCount));
  const std::uint64_t count = records.size();
  f.write(reinterpret_cast<const char*>(&count), 8);

  std::vector<float> buf(static_cast<std::size_t>(n) * n);
  for (const auto& r : records)
    for (const auto& c : r.chan) {
      for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(c.v[i]);
      f.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  if (!f) throw std::runtime_error("write_shard: write failed for " + path);
  f.close();

  std::ofstream m(detail::manifest_path(path), std::ios::trunc);
  if (!m)
    throw std::runtime_error("write_shard: cannot open " + detail::manifest_path(path));
  m << "version=" << kShardVersion << " h=" << n << " w=" << n
    << " c=" << kChannelCount << " count=" << count
    << " normalize=" << (normalized ? 1 : 0) << "\n";
  for (const auto& r : records) {
    m << "seed=" << r.problem.seed << " bc=";
    for (std::size_t i = 0; i < r.problem.bc_ids.size(); ++i) {
      if (i) m << ',';
      m << r.problem.bc_ids[i];
    }
    m << " angle_idx=" << r.problem.angle_index
      << " vf=" << detail::fmt_g17(r.problem.target_vf)
      << " compliance=" << detail::fmt_g17(r.gt_compliance) << "\n";
  }
  if (!m) throw std::runtime_error("write_shard: manifest write failed");
}

namespace detail {

// key=value tokens separated by spaces; unknown keys are an error so that
// manifest corruption never passes silently.
struct ManifestLine {
  std::uint64_t seed = 0;
  std::vector<int> bc_ids;
  int angle_index = 0;
  double vf = 0.0;
  double compliance = 0.0;
};

inline ManifestLine parse_manifest_line(const std::string& line, int lineno) {
  ManifestLine out;
  std::istringstream is(line);
  std::string tok;
  bool saw[5] = {false, false, false, false, false};
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": token without '=': " + tok);
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "seed") {
      out.seed = std::stoull(val);
      saw[0] = true;
    } else if (key == "bc") {
      std::istringstream vs(val);
      std::string part;
      while (std::getline(vs, part, ',')) out.bc_ids.push_back(std::stoi(part));
      saw[1] = true;
    } else if (key == "angle_idx") {
      out.angle_index = std::stoi(val);
      saw[2] = true;
    } else if (key == "vf") {
      out.vf = std::stod(val);
      saw[3] = true;
    } else if (key == "compliance") {
      out.compliance = std::stod(val);
      saw[4] = true;
    } else {
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": unknown key " + key);
    }
  }
  for (bool s : saw)
    if (!s)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": missing required key");
  return out;
}

}  // namespace detail

// Reads a shard back. Problems are rebuilt by replaying each manifest seed
// through the sampler and cross-checked against the manifest's own fields, so
// a stale or edited manifest fails loudly instead of mislabeling data.
inline std::vector<SampleRecord> read_shard(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_shard: cannot open " + path);

  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kShardMagic, 4) != 0)
    detail::shard_error(path, 0, "bad magic");
  const auto get_u32 = [&](const char* what) {
    std::uint32_t v = 0;
    const std::uint64_t off = static_cast<std::uint64_t>(f.tellg());
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) detail::shard_error(path, off, std::string("truncated ") + what);
    return v;
  };
  const std::uint32_t version = get_u32("version");
  if (version != kShardVersion)
    detail::shard_error(path, 4, "unsupported version " + std::to_string(version));
  const std::uint32_t h = get_u32("height");
  const std::uint32_t w = get_u32("width");
  const std::uint32_t c = get_u32("channel count");
  if (h != w || h < 2 || h % 2 != 0)
    detail::shard_error(path, 8, "unsupported grid shape");
  if (c != kChannelCount)
    detail::shard_error(path, 16, "expected " + std::to_string(kChannelCount) +
                                      " channels, got " + std::to_string(c));
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 8);
  if (!f) detail::shard_error(path, 20, "truncated record count");

  std::ifstream m(detail::manifest_path(path));
  if (!m)
    throw std::runtime_error("read_shard: missing manifest " +
                             detail::manifest_path(path));
  std::string header;
  if (!std::getline(m, header))
    throw std::runtime_error("read_shard: empty manifest");
  bool normalized = false;
  {
    std::istringstream is(header);
    std::string tok;
    while (is >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "normalize") normalized = val == "1";
      else if (key == "count" && std::stoull(val) != count)
        throw std::runtime_error("read_shard: manifest count disagrees with shard");
    }
  }

  const int n = static_cast<int>(h);
  std::vector<SampleRecord> out;
  out.reserve(count);
  std::vector<float> buf(static_cast<std::size_t>(n) * n);
  std::string line;
  for (std::uint64_t rec = 0; rec < count; ++rec) {
    if (!std::getline(m, line))
      throw std::runtime_error("read_shard: manifest ends early at record " +
                               std::to_string(rec));
    const auto ml = detail::parse_manifest_line(line, static_cast<int>(rec) + 2);

    SampleRecord r;
    r.problem = sample_problem(ml.seed, n);
    if (r.problem.bc_ids != ml.bc_ids || r.problem.angle_index != ml.angle_index ||
        r.problem.target_vf != ml.vf)
      throw std::runtime_error("read_shard: manifest record " + std::to_string(rec) +
                               " does not match its seed replay");
    r.gt_compliance = ml.compliance;
    r.normalized = normalized;
    for (int ch = 0; ch < kChannelCount; ++ch) {
      const std::uint64_t off = static_cast<std::uint64_t>(f.tellg());
      f.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!f)
        detail::shard_error(path, off, "truncated record " + std::to_string(rec));
      r.chan[ch] = Field2D(n, n);
      for (std::size_t i = 0; i < buf.size(); ++i)
        r.chan[ch].v[i] = static_cast<double>(buf[i]);
    }
    out.push_back(std::move(r));
  }
  f.peek();
  if (!f.eof())
    detail::shard_error(path, static_cast<std::uint64_t>(f.tellg()),
                        "trailing bytes after last record");
  return out;
}

}  // namespace latopt
