// latopt: dataset generation, model training, sampling, and scoring for
// topology generation experiments, as one binary with per-command configs.
//
// Every command accepts --config <file.json> holding defaults for its flags
// (explicit flags win) and writes the resolved parameters it actually ran
// with next to its primary output, so any artifact can be regenerated from
// the sidecar alone. LATOPT_OUT, when set, roots all default output paths.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "latopt/dataset.hpp"
#include "latopt/diffusion.hpp"
#include "latopt/evaluation.hpp"
#include "latopt/image.hpp"
#include "latopt/optim.hpp"
#include "latopt/record.hpp"
#include "latopt/shard.hpp"
#include "latopt/simp.hpp"
#include "latopt/vae.hpp"

namespace {

using nlohmann::json;
using namespace latopt;

// Missing or unreadable artifacts get their own exit category, distinct from
// bad flag values (usage) and numeric failures (runtime).
struct file_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string out_root() {
  const char* env = std::getenv("LATOPT_OUT");
  return (env && *env) ? std::string(env) : std::string(".");
}

std::string rooted(const std::string& name) {
  const std::string root = out_root();
  return root == "." ? name : root + "/" + name;
}

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw file_error(what + " not found: " + path);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw file_error("cannot open " + path + " for writing");
  f << content;
  if (!f.good()) throw file_error("short write to " + path);
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  std::ifstream f(path, std::ios::binary);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw file_error("cannot parse " + path + ": " + e.what());
  }
  return j;
}

// Config files are flat JSON objects keyed by long flag names. Keys whose
// flags already appear on the command line are skipped, which gives the
// precedence order: explicit flags, then config file, then built-in defaults.
// The merged keys are appended to the argument list as --key=value tokens
// before parsing, so they go through exactly the same validation as flags.
std::vector<std::string> merge_config_args(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      break;
    }
  }
  if (path.empty()) return args;

  const json j = read_json_file(path, "config file");
  if (!j.is_object())
    throw std::invalid_argument("config file must hold a JSON object: " + path);
  for (const auto& [key, value] : j.items()) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    bool present = false;
    for (std::size_t i = 1; i < args.size() && !present; ++i)
      present = args[i] == flag || args[i].rfind(flag + "=", 0) == 0;
    if (present) continue;

    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& e : value)
        text += (text.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
    } else {
      text = value.dump();
    }
    args.push_back(flag + "=" + text);
  }
  return args;
}

void attach_config(CLI::App* sub, std::string& slot) {
  sub->add_option("--config", slot,
                  "JSON object with defaults for these flags; explicit flags win");
}

std::vector<const SampleRecord*> record_pointers(const std::vector<SampleRecord>& v) {
  std::vector<const SampleRecord*> out;
  out.reserve(v.size());
  for (const auto& r : v) out.push_back(&r);
  return out;
}

std::vector<SampleRecord> load_shard(const std::string& path) {
  require_file(path, "dataset shard");
  return read_shard(path);
}

int shard_resolution(const std::vector<SampleRecord>& recs) {
  if (recs.empty()) throw file_error("shard holds no records");
  return recs[0].chan[kChanTopology].w;
}

Field2D raster_from_batch(const ArrayND<float>& x, int index) {
  const int n = x.shape[2];
  Field2D f(n, n);
  const std::size_t base = static_cast<std::size_t>(index) * n * n;
  for (std::size_t i = 0; i < f.v.size(); ++i)
    f.v[i] = static_cast<double>(x.data[base + i]);
  return f;
}

// ---- gen -----------------------------------------------------------------------

struct GenOpts {
  int n = 64;
  int res = 64;
  std::uint64_t seed = 1;
  std::string out = rooted("data.topo");
  bool normalize = false;
  int threads = 1;
};

void run_gen(const GenOpts& o) {
  DatasetSpec spec;
  spec.count = o.n;
  spec.resolution = o.res;
  spec.base_seed = o.seed;
  spec.normalize = o.normalize;
  spec.threads = o.threads;

  const DatasetResult res = generate_dataset(spec);
  write_shard(o.out, res.records);
  write_json_file(o.out + ".json",
                  {{"command", "gen"},
                   {"n", o.n},
                   {"res", o.res},
                   {"seed", o.seed},
                   {"out", o.out},
                   {"normalize", o.normalize},
                   {"threads", o.threads}});
  std::cout << "wrote " << res.records.size() << " records at " << o.res << "x"
            << o.res << " to " << o.out << " (tried " << res.seeds_tried
            << " seeds, " << res.rejected_failed << " solver failures, "
            << res.rejected_quality << " quality rejects)\n";
}

// ---- optimize ------------------------------------------------------------------

struct OptimizeOpts {
  std::uint64_t seed = 7;
  int res = 64;
  std::string out = rooted("design.pgm");
  std::string trace;
  double vf = 0.0;  // 0 keeps the sampled problem's own target
  double rmin = 2.0;
  double penal = 3.0;
  int max_iters = 200;
};

void run_optimize(const OptimizeOpts& o) {
  Problem p = sample_problem(o.seed, o.res);
  if (o.vf > 0.0) p.target_vf = o.vf;

  MaterialModel mat;
  mat.penal = o.penal;
  OptimizerConfig cfg;
  cfg.r_min = o.rmin;
  cfg.max_iters = o.max_iters;

  const OptimizeResult r = optimize(to_fea_problem(p), p.target_vf, mat, cfg);
  write_pgm(o.out, r.physical);
  if (!o.trace.empty()) {
    std::ostringstream os;
    os << "iter\tcompliance\n";
    for (std::size_t i = 0; i < r.trace.size(); ++i)
      os << i << "\t" << detail::fmt_g17(r.trace[i]) << "\n";
    write_text_file(o.trace, os.str());
  }

  json bc = json::array();
  for (int b : p.bc_ids) bc.push_back(b);
  write_json_file(o.out + ".json", {{"command", "optimize"},
                                    {"seed", o.seed},
                                    {"res", o.res},
                                    {"out", o.out},
                                    {"trace", o.trace},
                                    {"vf", p.target_vf},
                                    {"rmin", o.rmin},
                                    {"penal", o.penal},
                                    {"max-iters", o.max_iters},
                                    {"bc_ids", bc},
                                    {"load_element", p.load_element},
                                    {"load_angle", p.load_angle}});
  std::cout << "seed=" << o.seed << " load_element=" << p.load_element
            << " target_vf=" << p.target_vf << " compliance=" << r.compliance
            << " iterations=" << r.iterations << " final_change=" << r.final_change
            << "\n"
            << "design written to " << o.out << "\n";
}

// ---- train-vae -----------------------------------------------------------------

struct TrainVaeOpts {
  std::string data;
  std::string out = rooted("vae.ckpt");
  int steps = 5000;
  int batch = 32;
  int d = 64;
  int width = 32;
  double beta1 = 0.075;
  double beta2 = 0.3;
  double lr = 1e-4;
  double wd = 0.05;
  std::uint64_t seed = 1;
  bool fp64 = false;
  int log_every = 50;
};

template <typename T>
LossBreakdown train_vae_loop(const TrainVaeOpts& o, const VaeConfig& cfg,
                             const std::vector<SampleRecord>& recs,
                             std::ostream& log) {
  ParamStore<T> params = init_vae_params<T>(cfg, o.seed);
  VaeTrainOptions opt;
  opt.beta1 = o.beta1;
  opt.beta2 = o.beta2;
  opt.lr = o.lr;
  opt.weight_decay = o.wd;

  Rng rng(o.seed + 1);
  std::vector<const SampleRecord*> batch(o.batch);
  const int echo_every = std::max(o.steps / 20, 1);
  LossBreakdown lb;
  for (int step = 0; step < o.steps; ++step) {
    for (int b = 0; b < o.batch; ++b)
      batch[b] = &recs[rng.uniform_int(recs.size())];
    lb = vae_train_step(params, cfg, batch, opt, rng, step);
    if (step % o.log_every == 0 || step == o.steps - 1)
      log << loss_log_line(step, lb) << "\n";
    if (step % echo_every == 0 || step == o.steps - 1)
      std::cout << loss_log_line(step, lb) << std::endl;
  }
  save_checkpoint(o.out, params);
  return lb;
}

void run_train_vae(const TrainVaeOpts& o) {
  const std::vector<SampleRecord> recs = load_shard(o.data);
  VaeConfig cfg;
  cfg.resolution = shard_resolution(recs);
  cfg.latent_dim = o.d;
  cfg.base_width = o.width;
  cfg.validate();

  std::ofstream log(o.out + ".log", std::ios::trunc);
  if (!log) throw file_error("cannot open " + o.out + ".log for writing");

  const LossBreakdown lb = o.fp64 ? train_vae_loop<double>(o, cfg, recs, log)
                                  : train_vae_loop<float>(o, cfg, recs, log);

  write_json_file(o.out + ".json", {{"command", "train-vae"},
                                    {"data", o.data},
                                    {"out", o.out},
                                    {"steps", o.steps},
                                    {"batch", o.batch},
                                    {"d", o.d},
                                    {"width", o.width},
                                    {"resolution", cfg.resolution},
                                    {"norm-groups", cfg.norm_groups},
                                    {"beta1", o.beta1},
                                    {"beta2", o.beta2},
                                    {"lr", o.lr},
                                    {"wd", o.wd},
                                    {"seed", o.seed},
                                    {"fp64", o.fp64},
                                    {"log-every", o.log_every},
                                    {"normalized", recs[0].normalized},
                                    {"final_total", lb.total},
                                    {"final_recon", lb.recon}});
  std::cout << "checkpoint written to " << o.out << "\n";
}

// ---- train-ldm -----------------------------------------------------------------

struct TrainLdmOpts {
  std::string data;
  std::string vae;
  std::string out = rooted("ldm.ckpt");
  int steps = 5000;
  int batch = 32;
  double lr = 1e-4;
  double wd = 0.01;
  int t_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int time_dim = 64;
  int hidden = 256;
  std::uint64_t seed = 1;
  int log_every = 50;
};

VaeConfig vae_config_from_json(const json& j, const std::string& path) {
  try {
    VaeConfig cfg;
    cfg.resolution = j.at("resolution").get<int>();
    cfg.latent_dim = j.at("d").get<int>();
    cfg.base_width = j.at("width").get<int>();
    cfg.norm_groups = j.at("norm-groups").get<int>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw file_error("malformed checkpoint sidecar " + path + ": " + e.what());
  }
}

void run_train_ldm(const TrainLdmOpts& o) {
  const std::vector<SampleRecord> recs = load_shard(o.data);
  require_file(o.vae, "autoencoder checkpoint");
  const json vj = read_json_file(o.vae + ".json", "autoencoder sidecar");
  const VaeConfig vcfg = vae_config_from_json(vj, o.vae + ".json");
  if (vcfg.resolution != shard_resolution(recs))
    throw std::invalid_argument(
        "checkpoint resolution " + std::to_string(vcfg.resolution) +
        " does not match shard resolution " + std::to_string(shard_resolution(recs)));
  ParamStore<float> vparams = load_checkpoint<float>(o.vae);

  DenoiserConfig dcfg;
  dcfg.latent_dim = vcfg.latent_dim;
  dcfg.time_dim = o.time_dim;
  dcfg.hidden = o.hidden;
  dcfg.validate();
  const NoiseSchedule sched = make_schedule(o.t_steps, o.beta_start, o.beta_end);

  // encode the whole dataset once; the denoiser trains against frozen
  // posterior means and condition codes
  const int n = static_cast<int>(recs.size());
  const int d = vcfg.latent_dim;
  ArrayND<float> z0_all({n, d}), c_all({n, d});
  const auto ptrs = record_pointers(recs);
  for (int at = 0; at < n; at += 64) {
    const int take = std::min(64, n - at);
    const std::vector<const SampleRecord*> chunk(ptrs.begin() + at,
                                                 ptrs.begin() + at + take);
    const ArrayND<float> mu = encode_topology_mean(vparams, vcfg, chunk);
    const ArrayND<float> c = encode_condition_batch(vparams, vcfg, chunk);
    std::copy(mu.data.begin(), mu.data.end(), z0_all.data.begin() + at * d);
    std::copy(c.data.begin(), c.data.end(), c_all.data.begin() + at * d);
  }

  std::ofstream log(o.out + ".log", std::ios::trunc);
  if (!log) throw file_error("cannot open " + o.out + ".log for writing");

  ParamStore<float> params = init_denoiser_params<float>(dcfg, o.seed);
  Rng rng(o.seed + 1);
  ArrayND<float> z0({o.batch, d}), c({o.batch, d});
  const int echo_every = std::max(o.steps / 20, 1);
  double loss = 0.0;
  for (int step = 0; step < o.steps; ++step) {
    for (int b = 0; b < o.batch; ++b) {
      const std::size_t row = rng.uniform_int(recs.size());
      std::copy_n(z0_all.data.begin() + row * d, d, z0.data.begin() + b * d);
      std::copy_n(c_all.data.begin() + row * d, d, c.data.begin() + b * d);
    }
    loss = ldm_train_step(params, dcfg, sched, z0, c, o.lr, o.wd, rng, step);
    if (step % o.log_every == 0 || step == o.steps - 1)
      log << "step=" << step << " loss=" << loss << "\n";
    if (step % echo_every == 0 || step == o.steps - 1)
      std::cout << "step=" << step << " loss=" << loss << std::endl;
  }
  save_checkpoint(o.out, params);

  write_json_file(o.out + ".json", {{"command", "train-ldm"},
                                    {"data", o.data},
                                    {"vae", o.vae},
                                    {"out", o.out},
                                    {"steps", o.steps},
                                    {"batch", o.batch},
                                    {"lr", o.lr},
                                    {"wd", o.wd},
                                    {"T", o.t_steps},
                                    {"beta-start", o.beta_start},
                                    {"beta-end", o.beta_end},
                                    {"time-dim", o.time_dim},
                                    {"hidden", o.hidden},
                                    {"d", dcfg.latent_dim},
                                    {"seed", o.seed},
                                    {"log-every", o.log_every},
                                    {"final_loss", loss}});
  std::cout << "checkpoint written to " << o.out << "\n";
}

// ---- sample --------------------------------------------------------------------

struct SampleOpts {
  std::string vae;
  std::string ldm;
  std::string data;
  std::uint64_t problem_seed = 0;
  bool problem_seed_given = false;
  int n = 16;
  std::uint64_t seed = 1;
  std::string out = rooted("samples.topo");
  int threads = 1;
};

void run_sample(const SampleOpts& o) {
  require_file(o.vae, "autoencoder checkpoint");
  require_file(o.ldm, "denoiser checkpoint");
  const json vj = read_json_file(o.vae + ".json", "autoencoder sidecar");
  const json lj = read_json_file(o.ldm + ".json", "denoiser sidecar");
  const VaeConfig vcfg = vae_config_from_json(vj, o.vae + ".json");

  DenoiserConfig dcfg;
  NoiseSchedule sched;
  try {
    dcfg.latent_dim = lj.at("d").get<int>();
    dcfg.time_dim = lj.at("time-dim").get<int>();
    dcfg.hidden = lj.at("hidden").get<int>();
    sched = make_schedule(lj.at("T").get<int>(), lj.at("beta-start").get<double>(),
                          lj.at("beta-end").get<double>());
  } catch (const json::exception& e) {
    throw file_error("malformed checkpoint sidecar " + o.ldm + ".json: " + e.what());
  }
  if (dcfg.latent_dim != vcfg.latent_dim)
    throw std::invalid_argument("denoiser latent size " +
                                std::to_string(dcfg.latent_dim) +
                                " does not match autoencoder latent size " +
                                std::to_string(vcfg.latent_dim));

  const bool vae_normalized = vj.value("normalized", false);
  std::vector<SampleRecord> recs;
  if (!o.data.empty()) {
    recs = load_shard(o.data);
    if (static_cast<int>(recs.size()) < o.n)
      throw file_error("shard holds " + std::to_string(recs.size()) +
                       " records, need " + std::to_string(o.n));
    recs.resize(o.n);
    if (recs[0].normalized != vae_normalized)
      throw std::invalid_argument(
          "conditioning scale mismatch: checkpoint was trained on " +
          std::string(vae_normalized ? "normalized" : "raw") +
          " fields but the shard holds the other kind");
  } else {
    DatasetSpec spec;
    spec.count = o.n;
    spec.resolution = vcfg.resolution;
    spec.base_seed = o.problem_seed;
    spec.normalize = vae_normalized;
    spec.threads = o.threads;
    recs = generate_dataset(spec).records;
  }
  if (shard_resolution(recs) != vcfg.resolution)
    throw std::invalid_argument("condition resolution " +
                                std::to_string(shard_resolution(recs)) +
                                " does not match checkpoint resolution " +
                                std::to_string(vcfg.resolution));

  ParamStore<float> vparams = load_checkpoint<float>(o.vae);
  ParamStore<float> lparams = load_checkpoint<float>(o.ldm);
  const ArrayND<float> gen = sample_topologies(vparams, vcfg, lparams, dcfg, sched,
                                               record_pointers(recs), o.seed);

  // keep each source record's conditioning fields, problem, and reference
  // compliance; only the topology channel carries the drawn design
  for (int i = 0; i < o.n; ++i) recs[i].chan[kChanTopology] = raster_from_batch(gen, i);
  write_shard(o.out, recs);

  write_json_file(o.out + ".json",
                  {{"command", "sample"},
                   {"vae", o.vae},
                   {"ldm", o.ldm},
                   {"data", o.data},
                   {"problem-seed", o.problem_seed_given ? json(o.problem_seed) : json()},
                   {"n", o.n},
                   {"seed", o.seed},
                   {"out", o.out},
                   {"threads", o.threads}});
  std::cout << "wrote " << o.n << " sampled designs to " << o.out << "\n";
}

// ---- evaluate ------------------------------------------------------------------

struct EvaluateOpts {
  std::string data;
  std::string out = rooted("report");
  double threshold = 30.0;
  int bins = 31;
};

void run_evaluate(const EvaluateOpts& o) {
  const std::vector<SampleRecord> recs = load_shard(o.data);
  std::vector<Field2D> generated;
  generated.reserve(recs.size());
  for (const auto& r : recs) generated.push_back(r.chan[kChanTopology]);

  std::vector<SampleMetrics> per_sample;
  const MetricsReport rep = evaluate_batch(generated, record_pointers(recs), {},
                                           o.threshold, &per_sample);

  std::vector<double> errors;
  for (const auto& m : per_sample)
    errors.push_back(m.defective ? std::numeric_limits<double>::infinity()
                                 : m.compliance_error_pct);
  const std::vector<int> counts = histogram(errors, o.bins, o.threshold);

  const std::string text = report_text(rep);
  std::cout << text;
  write_text_file(o.out + ".txt", text);
  write_text_file(o.out + ".tsv", report_dsv(rep));

  std::ostringstream hist;
  hist << "bin_lo\tbin_hi\tcount\n";
  const double width = o.threshold / (o.bins - 1);
  for (int i = 0; i + 1 < o.bins; ++i)
    hist << detail::fmt_g17(i * width) << "\t" << detail::fmt_g17((i + 1) * width)
         << "\t" << counts[i] << "\n";
  hist << detail::fmt_g17(o.threshold) << "\tinf\t" << counts[o.bins - 1] << "\n";
  write_text_file(o.out + ".hist.tsv", hist.str());
  write_histogram_ppm(o.out + ".hist.ppm", counts);

  std::ostringstream rows;
  rows << "index\tcompliance_error_pct\tdefective\tfloating_material"
       << "\tload_discrepancy\tsoft_ld\tvf_gen\tvf_gt\n";
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    const SampleMetrics& m = per_sample[i];
    rows << i << "\t" << detail::fmt_g17(m.compliance_error_pct) << "\t"
         << (m.defective ? 1 : 0) << "\t" << (m.floating_material ? 1 : 0) << "\t"
         << (m.load_discrepancy ? 1 : 0) << "\t" << detail::fmt_g17(m.soft_ld)
         << "\t" << detail::fmt_g17(m.vf_gen) << "\t" << detail::fmt_g17(m.vf_gt)
         << "\n";
  }
  write_text_file(o.out + ".samples.tsv", rows.str());

  write_json_file(o.out + ".json", {{"command", "evaluate"},
                                    {"data", o.data},
                                    {"out", o.out},
                                    {"threshold", o.threshold},
                                    {"bins", o.bins}});
  std::cout << "report written to " << o.out << ".{txt,tsv,hist.tsv,hist.ppm,samples.tsv}\n";
}

// ---- grid ----------------------------------------------------------------------

struct GridOpts {
  std::string data;
  std::vector<int> d = {64, 128, 192, 256};
  std::vector<double> b1 = {0.075, 0.15, 0.3};
  std::vector<double> b2 = {0.1, 0.3};
  int steps = 40;
  int batch = 8;
  int width = 32;
  int tail = 10;
  double lr = 1e-4;
  double wd = 0.05;
  std::uint64_t seed = 1;
  std::string out = rooted("grid");
};

void grid_progress(const GridCell& c) {
  std::cout << "cell d=" << c.latent_dim << " b1=" << c.beta1 << " b2=" << c.beta2;
  if (c.failed)
    std::cout << " failed: " << c.failure;
  else
    std::cout << " recon=" << c.recon;
  std::cout << std::endl;
}

void run_grid(const GridOpts& o) {
  const std::vector<SampleRecord> recs = load_shard(o.data);
  GridSpec spec;
  spec.latent_dims = o.d;
  spec.beta1s = o.b1;
  spec.beta2s = o.b2;
  spec.base.resolution = shard_resolution(recs);
  spec.base.base_width = o.width;
  spec.steps = o.steps;
  spec.batch = o.batch;
  spec.tail_window = o.tail;
  spec.init_seed = o.seed;
  spec.train_seed = o.seed + 1;
  spec.lr = o.lr;
  spec.weight_decay = o.wd;

  const std::vector<GridCell> cells =
      latopt::run_grid(spec, record_pointers(recs), &grid_progress);
  const std::string table = grid_table_text(cells);
  std::cout << table;
  write_text_file(o.out + ".txt", table);
  write_text_file(o.out + ".tsv", grid_table_dsv(cells));

  write_json_file(o.out + ".json", {{"command", "grid"},
                                    {"data", o.data},
                                    {"d", o.d},
                                    {"b1", o.b1},
                                    {"b2", o.b2},
                                    {"steps", o.steps},
                                    {"batch", o.batch},
                                    {"width", o.width},
                                    {"tail", o.tail},
                                    {"lr", o.lr},
                                    {"wd", o.wd},
                                    {"seed", o.seed},
                                    {"out", o.out}});
  std::cout << "tables written to " << o.out << ".{txt,tsv}\n";
}

// ---- plot ----------------------------------------------------------------------

struct PlotOpts {
  std::string data;
  std::string out = rooted("plots");
  int n = 0;  // 0 renders every record
  std::string channel = "topology";
};

void run_plot(const PlotOpts& o) {
  static const std::map<std::string, int> channels = {
      {"topology", kChanTopology},  {"vf", kChanVolFrac},  {"stress", kChanVonMises},
      {"energy", kChanStrainEnergy}, {"loadx", kChanLoadX}, {"loady", kChanLoadY}};
  const auto it = channels.find(o.channel);
  if (it == channels.end()) {
    std::string names;
    for (const auto& [k, v] : channels) names += (names.empty() ? "" : ", ") + k;
    throw std::invalid_argument("unknown channel '" + o.channel + "', expected one of " +
                                names);
  }

  const std::vector<SampleRecord> recs = load_shard(o.data);
  const int count = o.n > 0 ? std::min<int>(o.n, recs.size()) : static_cast<int>(recs.size());
  std::filesystem::create_directories(o.out);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d.pgm", i);
    write_pgm(o.out + "/" + name, recs[i].chan[it->second]);
  }
  write_json_file(o.out + "/config.json", {{"command", "plot"},
                                           {"data", o.data},
                                           {"out", o.out},
                                           {"n", o.n},
                                           {"channel", o.channel}});
  std::cout << "wrote " << count << " rasters to " << o.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"topology generation pipeline: datasets, training, sampling, scoring"};
  app.require_subcommand(1);
  app.footer("exit codes: 0 ok, 2 bad flags or config, 3 missing file, 4 runtime failure\n"
             "LATOPT_OUT roots all default output paths");
  std::string config_path;

  GenOpts gen;
  CLI::App* g = app.add_subcommand("gen", "generate an optimized-topology dataset shard");
  g->add_option("--n", gen.n, "record count")->capture_default_str();
  g->add_option("--res", gen.res, "square grid edge in elements")->capture_default_str();
  g->add_option("--seed", gen.seed, "base seed; records draw seed, seed+1, ...")
      ->capture_default_str();
  g->add_option("--out", gen.out, "output shard path")->capture_default_str();
  g->add_flag("--normalize", gen.normalize,
              "scale stress and energy channels to [0,1] (recommended before training)");
  g->add_option("--threads", gen.threads, "worker threads")->capture_default_str();
  attach_config(g, config_path);
  g->callback([&gen] { run_gen(gen); });

  OptimizeOpts opt;
  CLI::App* op = app.add_subcommand("optimize", "run the density optimizer on one sampled problem");
  op->add_option("--seed", opt.seed, "problem seed")->capture_default_str();
  op->add_option("--res", opt.res, "square grid edge in elements")->capture_default_str();
  op->add_option("--out", opt.out, "design raster output path")->capture_default_str();
  op->add_option("--trace", opt.trace, "optional compliance trace output path");
  op->add_option("--vf", opt.vf, "override the target volume fraction (0 keeps the problem's)")
      ->capture_default_str();
  op->add_option("--rmin", opt.rmin, "density filter radius")->capture_default_str();
  op->add_option("--penal", opt.penal, "stiffness penalization exponent")->capture_default_str();
  op->add_option("--max-iters", opt.max_iters, "iteration budget")->capture_default_str();
  attach_config(op, config_path);
  op->callback([&opt] { run_optimize(opt); });

  TrainVaeOpts tv;
  CLI::App* v = app.add_subcommand("train-vae", "train the autoencoder on a shard");
  v->add_option("--data", tv.data, "training shard")->required();
  v->add_option("--out", tv.out, "checkpoint output path")->capture_default_str();
  v->add_option("--steps", tv.steps, "training steps")->capture_default_str();
  v->add_option("--batch", tv.batch, "batch size")->capture_default_str();
  v->add_option("--d", tv.d, "latent vector size")->capture_default_str();
  v->add_option("--width", tv.width, "stem channel width")->capture_default_str();
  v->add_option("--beta1", tv.beta1, "divergence weight")->capture_default_str();
  v->add_option("--beta2", tv.beta2, "physics penalty weight")->capture_default_str();
  v->add_option("--lr", tv.lr, "learning rate")->capture_default_str();
  v->add_option("--wd", tv.wd, "weight decay")->capture_default_str();
  v->add_option("--seed", tv.seed, "init and batch seed")->capture_default_str();
  v->add_flag("--fp64", tv.fp64, "train in 64-bit (bit-reproducible across builds)");
  v->add_option("--log-every", tv.log_every, "log file cadence")->capture_default_str();
  attach_config(v, config_path);
  v->callback([&tv] { run_train_vae(tv); });

  TrainLdmOpts tl;
  CLI::App* l = app.add_subcommand("train-ldm", "train the latent denoiser against a frozen autoencoder");
  l->add_option("--data", tl.data, "training shard")->required();
  l->add_option("--vae", tl.vae, "autoencoder checkpoint")->required();
  l->add_option("--out", tl.out, "checkpoint output path")->capture_default_str();
  l->add_option("--steps", tl.steps, "training steps")->capture_default_str();
  l->add_option("--batch", tl.batch, "batch size")->capture_default_str();
  l->add_option("--lr", tl.lr, "learning rate")->capture_default_str();
  l->add_option("--wd", tl.wd, "weight decay")->capture_default_str();
  l->add_option("--T", tl.t_steps, "corruption steps")->capture_default_str();
  l->add_option("--beta-start", tl.beta_start, "first-step noise variance")->capture_default_str();
  l->add_option("--beta-end", tl.beta_end, "last-step noise variance")->capture_default_str();
  l->add_option("--time-dim", tl.time_dim, "time embedding size")->capture_default_str();
  l->add_option("--hidden", tl.hidden, "denoiser hidden width")->capture_default_str();
  l->add_option("--seed", tl.seed, "init and batch seed")->capture_default_str();
  l->add_option("--log-every", tl.log_every, "log file cadence")->capture_default_str();
  attach_config(l, config_path);
  l->callback([&tl] { run_train_ldm(tl); });

  SampleOpts sm;
  CLI::App* s = app.add_subcommand("sample", "draw designs from trained checkpoints");
  s->add_option("--vae", sm.vae, "autoencoder checkpoint")->required();
  s->add_option("--ldm", sm.ldm, "denoiser checkpoint")->required();
  s->add_option("--data", sm.data, "shard supplying conditioning fields");
  CLI::Option* ps = s->add_option("--problem-seed", sm.problem_seed,
                                  "build fresh conditioning problems from this seed instead");
  s->add_option("--n", sm.n, "designs to draw")->capture_default_str();
  s->add_option("--seed", sm.seed, "sampling noise seed")->capture_default_str();
  s->add_option("--out", sm.out, "output shard path")->capture_default_str();
  s->add_option("--threads", sm.threads, "worker threads for fresh problems")
      ->capture_default_str();
  attach_config(s, config_path);
  s->callback([&sm, ps] {
    sm.problem_seed_given = ps->count() > 0;
    if (sm.data.empty() == !sm.problem_seed_given)
      throw std::invalid_argument("provide exactly one of --data or --problem-seed");
    run_sample(sm);
  });

  EvaluateOpts ev;
  CLI::App* e = app.add_subcommand("evaluate", "score a shard of candidate designs against stored references");
  e->add_option("--data", ev.data, "shard whose topology channel holds the designs under test")
      ->required();
  e->add_option("--out", ev.out, "report path stem")->capture_default_str();
  e->add_option("--threshold", ev.threshold, "error percentage treated as failure and pruned")
      ->capture_default_str();
  e->add_option("--bins", ev.bins, "histogram bins including the pooled tail")
      ->capture_default_str();
  attach_config(e, config_path);
  e->callback([&ev] { run_evaluate(ev); });

  GridOpts gr;
  CLI::App* gd = app.add_subcommand("grid", "sweep latent size and loss weights, emit comparison tables");
  gd->add_option("--data", gr.data, "training shard")->required();
  gd->add_option("--d", gr.d, "latent sizes, comma separated")->delimiter(',')->capture_default_str();
  gd->add_option("--b1", gr.b1, "divergence weights, comma separated")->delimiter(',')->capture_default_str();
  gd->add_option("--b2", gr.b2, "physics penalty weights, comma separated")->delimiter(',')->capture_default_str();
  gd->add_option("--steps", gr.steps, "training steps per cell")->capture_default_str();
  gd->add_option("--batch", gr.batch, "batch size")->capture_default_str();
  gd->add_option("--width", gr.width, "stem channel width")->capture_default_str();
  gd->add_option("--tail", gr.tail, "steps averaged into each cell's losses")->capture_default_str();
  gd->add_option("--lr", gr.lr, "learning rate")->capture_default_str();
  gd->add_option("--wd", gr.wd, "weight decay")->capture_default_str();
  gd->add_option("--seed", gr.seed, "init seed; batches draw from seed+1")->capture_default_str();
  gd->add_option("--out", gr.out, "table path stem")->capture_default_str();
  attach_config(gd, config_path);
  gd->callback([&gr] { run_grid(gr); });

  PlotOpts pl;
  CLI::App* p = app.add_subcommand("plot", "dump rasters from a shard as grayscale images");
  p->add_option("--data", pl.data, "shard to render")->required();
  p->add_option("--out", pl.out, "output directory")->capture_default_str();
  p->add_option("--n", pl.n, "rasters to write (0 = all)")->capture_default_str();
  p->add_option("--channel", pl.channel, "topology|vf|stress|energy|loadx|loady")
      ->capture_default_str();
  attach_config(p, config_path);
  p->callback([&pl] { run_plot(pl); });

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty()) args = merge_config_args(std::move(args));
    std::reverse(args.begin(), args.end());  // the vector overload pops from the back
    app.parse(std::move(args));
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);  // prints the message or the help text
    return code == 0 ? 0 : 2;
  } catch (const file_error& err) {
    std::cerr << "latopt: file error: " << err.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& err) {
    std::cerr << "latopt: usage error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "latopt: runtime error: " << err.what() << "\n";
    return 4;
  }
  return 0;
}
