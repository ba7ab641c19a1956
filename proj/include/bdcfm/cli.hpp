#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>

#include <Eigen/Core>

#include "bdcfm/ebinit.hpp"
#include "bdcfm/errors.hpp"
#include "bdcfm/gibbs.hpp"
#include "bdcfm/io.hpp"
#include "bdcfm/posterior.hpp"
#include "bdcfm/simgen.hpp"

namespace bdcfm {

inline constexpr const char* kVersion = "1.0.0";

enum class Mode { Simulate, Fit, Summarize };

inline Mode parse_mode(std::string_view s) {
  if (s == "simulate") return Mode::Simulate;
  if (s == "fit") return Mode::Fit;
  if (s == "summarize") return Mode::Summarize;
  fail(ErrorCode::InvalidConfig, "unknown mode '" + std::string(s) + "'");
}

struct RunConfig {
  Mode mode = Mode::Fit;
  int G = 4;
  int L = 3;
  SamplerConfig sampler;
  bool standardize = true;
  // simulate only
  int S = 200;
  int T = 5;
  int R = 20;
  double uniqueness = 1.0;
  std::string data;   // fit input / simulate output (default <out>/data.csv)
  std::string truth;  // summarize input / simulate output (default <out>/truth.json)
  std::string out = "bdcfm_out";
  std::string chains;  // summarize input (default <out>)
};

using ConfigMap = std::map<std::string, std::string>;

/// Flat `key = value` lines; `#` starts a comment; string values may be double-quoted.
/// Dashes in keys are read as underscores.
inline ConfigMap parse_config_text(std::string_view text, const std::string& origin = "config") {
  ConfigMap kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::InvalidConfig, origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(detail::trim(line.substr(0, eq)));
    std::string_view value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '-', '_');
    kv[key] = std::string(value);
  }
  return kv;
}

inline ConfigMap read_config_file(const fs::path& path) {
  std::ifstream in = detail::open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

namespace detail {

inline int config_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    fail(ErrorCode::InvalidConfig, key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

inline bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::InvalidConfig, key + ": expected a boolean, got '" + v + "'");
}

}  // namespace detail

/// Applies the key-value map onto a config; unknown keys are rejected.
inline void apply_config(RunConfig& c, const ConfigMap& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "mode") c.mode = parse_mode(v);
    else if (key == "G") c.G = detail::config_int(key, v);
    else if (key == "L") c.L = detail::config_int(key, v);
    else if (key == "S") c.S = detail::config_int(key, v);
    else if (key == "T") c.T = detail::config_int(key, v);
    else if (key == "R") c.R = detail::config_int(key, v);
    else if (key == "iterations") c.sampler.total_iterations = detail::config_int(key, v);
    else if (key == "burn_in") c.sampler.burn_in = detail::config_int(key, v);
    else if (key == "thin") c.sampler.thin = detail::config_int(key, v);
    else if (key == "seed") {
      std::uint64_t s = 0;
      const auto res = std::from_chars(v.data(), v.data() + v.size(), s);
      if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        fail(ErrorCode::InvalidConfig, "seed: expected a nonnegative integer");
      }
      c.sampler.seed = s;
    } else if (key == "parallel") c.sampler.parallel_subjects = detail::config_bool(key, v);
    else if (key == "include_initial_prob_in_z1") c.sampler.include_initial_prob_in_z1 = detail::config_bool(key, v);
    else if (key == "standardize") c.standardize = detail::config_bool(key, v);
    else if (key == "uniqueness") {
      const auto d = detail::parse_double(v);
      if (!d || !(*d > 0.0)) fail(ErrorCode::InvalidConfig, "uniqueness: expected a positive number");
      c.uniqueness = *d;
    } else if (key == "data") c.data = v;
    else if (key == "truth") c.truth = v;
    else if (key == "out") c.out = v;
    else if (key == "chains") c.chains = v;
    else fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
  }
}

/// 64-bit FNV-1a over the effective configuration.
inline std::string config_hash(const RunConfig& c) {
  std::ostringstream canon;
  canon << "G=" << c.G << ";L=" << c.L << ";iterations=" << c.sampler.total_iterations
        << ";burn_in=" << c.sampler.burn_in << ";thin=" << c.sampler.thin << ";seed=" << c.sampler.seed
        << ";z1=" << c.sampler.include_initial_prob_in_z1 << ";standardize=" << c.standardize
        << ";data=" << c.data;
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canon.str()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void validate_run_config(const RunConfig& c) {
  if (c.G < 1 || c.L < 1) fail(ErrorCode::InvalidConfig, "G and L must be >= 1");
  if (c.out.empty()) fail(ErrorCode::InvalidConfig, "output directory must be set");
}

inline void command_simulate(const RunConfig& c, std::ostream& log) {
  SimConfig sim = paper_simulation_config(c.sampler.seed);
  if (c.G != sim.G || c.L != sim.L) {
    fail(ErrorCode::InvalidConfig, "the built-in simulation design has G = 4 and L = 3");
  }
  sim.S = c.S;
  sim.T = c.T;
  sim.R = c.R;
  sim.constant_uniqueness = c.uniqueness;
  auto [data, truth] = simulate_dataset(sim);
  const fs::path data_path = c.data.empty() ? fs::path(c.out) / "data.csv" : fs::path(c.data);
  const fs::path truth_path = c.truth.empty() ? fs::path(c.out) / "truth.json" : fs::path(c.truth);
  write_dataset_csv(data_path, data);
  write_json(truth_path, truth_to_json(truth));
  log << "wrote " << data_path.string() << " and " << truth_path.string() << '\n';
}

inline void command_fit(const RunConfig& c, std::ostream& log) {
  if (c.data.empty()) fail(ErrorCode::InvalidConfig, "fit needs a data file (--data)");
  IngestResult in = ingest_csv(c.data, c.standardize);
  const Dataset& data = in.data;
  if (c.L > data.R) fail(ErrorCode::InvalidConfig, "L must not exceed the number of variables");
  validate_sampler_config(c.sampler);

  RngStream eb_rng(c.sampler.seed, make_stream_id(StreamKind::KMeans, 0, 0));
  EbResult eb = empirical_bayes(data, c.G, c.L, eb_rng);

  const fs::path dir(c.out);
  ChainCsvWriter writer(dir, make_draw_blocks(data.R, c.L, c.G));
  RunHooks hooks;
  hooks.flush_every = 1000;
  hooks.on_flush = [&writer](const std::vector<DrawBlock>& chunk, const std::vector<int>& its) {
    writer.append(chunk, its);
  };
  const ChainOutput chain = run_gibbs(data, eb.prior, eb.initial, c.sampler, hooks);
  write_assignment_tables(dir, data, chain.z_prob, chain.z_mode);

  json meta;
  meta["version"] = kVersion;
  meta["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                          "." + std::to_string(EIGEN_MINOR_VERSION);
  meta["config_hash"] = config_hash(c);
  meta["seed"] = c.sampler.seed;
  meta["iterations"] = c.sampler.total_iterations;
  meta["burn_in"] = c.sampler.burn_in;
  meta["thin"] = c.sampler.thin;
  meta["stored_iterations"] = chain.stored_iterations;
  meta["include_initial_prob_in_z1"] = c.sampler.include_initial_prob_in_z1;
  meta["parallel"] = c.sampler.parallel_subjects;
  meta["standardize"] = c.standardize;
  meta["data"] = c.data;
  meta["S"] = data.S;
  meta["T"] = data.T;
  meta["R"] = data.R;
  meta["L"] = c.L;
  meta["G"] = c.G;
  meta["subjects"] = data.subject_ids;
  meta["times"] = data.times;
  meta["variables"] = data.variable_names;
  if (in.standardization) {
    meta["standardization"] = {{"mean", to_json(in.standardization->mean)},
                               {"sd", to_json(in.standardization->sd)}};
  }
  meta["wall_seconds"] = chain.meta.wall_seconds;
  write_json(dir / "meta.json", meta);
  log << "stored " << chain.stored_iterations << " draws in " << dir.string() << " ("
      << chain.meta.wall_seconds << " s)\n";
}

inline json report_to_json(const SummaryReport& rep, const ChainOutput& chain) {
  json j;
  j["stored_iterations"] = chain.stored_iterations;
  j["parameters"] = json::array();
  for (const auto& p : rep.parameters) {
    j["parameters"].push_back({{"name", p.name}, {"family", p.family}, {"mean", p.mean}, {"sd", p.sd},
                               {"lower", p.lower}, {"median", p.median}, {"upper", p.upper}});
  }
  json zmode = json::array();
  for (int i = 0; i < chain.S; ++i) {
    json row = json::array();
    for (int t = 0; t < chain.T; ++t) row.push_back(rep.z_mode[static_cast<std::size_t>(i) * chain.T + t]);
    zmode.push_back(std::move(row));
  }
  j["z_mode"] = std::move(zmode);
  if (rep.coverage) {
    const auto& cov = *rep.coverage;
    json fams = json::object();
    for (const auto& f : cov.families) {
      fams[f.family] = {{"covered", f.covered}, {"total", f.total},
                        {"fraction", f.total ? static_cast<double>(f.covered) / f.total : 1.0}};
    }
    json flags = json::array();
    for (const auto& f : cov.flags) {
      flags.push_back({{"name", f.name}, {"family", f.family}, {"truth", f.truth}, {"lower", f.lower},
                       {"upper", f.upper}, {"covered", f.covered}});
    }
    j["coverage"] = {{"fraction", cov.fraction}, {"miss_rate", cov.miss_rate()}, {"covered", cov.covered},
                     {"total", cov.total}, {"families", fams}, {"label_map", cov.label_map},
                     {"parameters", flags}};
  }
  if (rep.misclassification) j["misclassification"] = *rep.misclassification;
  return j;
}

inline void command_summarize(const RunConfig& c, std::ostream& log) {
  const fs::path dir = c.chains.empty() ? fs::path(c.out) : fs::path(c.chains);
  const ChainOutput chain = read_chain_dir(dir);
  SummaryReport rep = summarize(chain);
  if (!c.truth.empty()) {
    const SimTruth truth = truth_from_json(read_json(c.truth));
    rep.coverage = coverage_report(chain, truth);
    rep.misclassification = misclassification(chain, truth);
  }
  const fs::path out = fs::path(c.out) / "report.json";
  write_json(out, report_to_json(rep, chain));
  log << "wrote " << out.string() << '\n';
}

/// Runs one command. Errors are reported as a JSON object on `err`; returns the exit status.
inline int run_command(const RunConfig& c, std::ostream& log, std::ostream& err) {
  try {
    validate_run_config(c);
    switch (c.mode) {
      case Mode::Simulate: command_simulate(c, log); break;
      case Mode::Fit: command_fit(c, log); break;
      case Mode::Summarize: command_summarize(c, log); break;
    }
    return 0;
  } catch (const Error& e) {
    err << json{{"error", std::string(to_string(e.code()))}, {"message", e.detail()}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  }
}

}  // namespace bdcfm
