#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "bdcfm/errors.hpp"
#include "bdcfm/model.hpp"
#include "bdcfm/simgen.hpp"

namespace bdcfm {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Shortest text that round-trips exactly (17 significant digits).
inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Fields may be wrapped in double quotes to hold commas; embedded quotes are not supported.
inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t from = start;
    while (from < line.size() && (line[from] == ' ' || line[from] == '\t')) ++from;
    if (from < line.size() && line[from] == '"') {
      const std::size_t close = line.find('"', from + 1);
      if (close != std::string_view::npos) {
        out.push_back(line.substr(from + 1, close - from - 1));
        const std::size_t comma = line.find(',', close);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
        continue;
      }
    }
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string quote_csv(const std::string& field) {
  return field.find(',') == std::string::npos ? field : '"' + field + '"';
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) return std::nullopt;
  return v;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Panel CSV: subject,time,var1,...,varR (long format, one row per subject-time cell)

struct Standardization {
  Vector mean;
  Vector sd;
};

struct IngestResult {
  Dataset data;
  std::optional<Standardization> standardization;
};

/// z-scores each variable over all S*T cells (sample sd, divisor n - 1).
inline Standardization standardize_dataset(Dataset& data) {
  const Eigen::Index n = data.y.cols();
  Standardization st{data.y.rowwise().mean(), Vector(data.R)};
  for (int r = 0; r < data.R; ++r) {
    const auto centered = data.y.row(r).array() - st.mean(r);
    st.sd(r) = n > 1 ? std::sqrt(centered.square().sum() / static_cast<double>(n - 1)) : 0.0;
    if (!(st.sd(r) > 0.0)) {
      fail(ErrorCode::InvalidParameter, "variable " + data.variable_names[static_cast<std::size_t>(r)] +
                                            " is constant and cannot be standardized");
    }
    data.y.row(r) = (centered / st.sd(r)).matrix();
  }
  return st;
}

inline IngestResult ingest_csv(const fs::path& path, bool standardize = false) {
  std::ifstream in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, path.string() + ": missing header row");
  const auto header = detail::split_csv(line);
  if (header.size() < 3 || header[0] != "subject" || header[1] != "time") {
    fail(ErrorCode::ParseError, path.string() + ": header must start with subject,time and name at least one variable");
  }
  IngestResult res;
  Dataset& d = res.data;
  for (std::size_t c = 2; c < header.size(); ++c) d.variable_names.emplace_back(header[c]);
  d.R = static_cast<int>(d.variable_names.size());

  struct Row {
    std::size_t subject;
    double time;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  std::unordered_map<std::string, std::size_t> subject_index;
  std::vector<double> all_times;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) fail(ErrorCode::ParseError, where + ": wrong number of fields");
    const std::string subject(fields[0]);
    auto [it, inserted] = subject_index.emplace(subject, d.subject_ids.size());
    if (inserted) d.subject_ids.push_back(subject);
    const auto time = detail::parse_double(fields[1]);
    if (!time) fail(ErrorCode::ParseError, where + ": cannot parse time '" + std::string(fields[1]) + "'");
    if (!std::isfinite(*time)) fail(ErrorCode::NonFiniteValue, where + ": non-finite time");
    Row row{it->second, *time, {}};
    for (std::size_t c = 2; c < fields.size(); ++c) {
      const auto v = detail::parse_double(fields[c]);
      if (!v) fail(ErrorCode::ParseError, where + ": cannot parse value '" + std::string(fields[c]) + "'");
      if (!std::isfinite(*v)) {
        fail(ErrorCode::NonFiniteValue, where + ": non-finite value in column " + std::string(header[c]));
      }
      row.values.push_back(*v);
    }
    all_times.push_back(*time);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::ParseError, path.string() + ": no data rows");
  std::sort(all_times.begin(), all_times.end());
  all_times.erase(std::unique(all_times.begin(), all_times.end()), all_times.end());
  d.times = all_times;
  d.S = static_cast<int>(d.subject_ids.size());
  d.T = static_cast<int>(d.times.size());
  d.y = Matrix::Zero(d.R, static_cast<Eigen::Index>(d.S) * d.T);

  std::vector<char> seen(static_cast<std::size_t>(d.S) * d.T, 0);
  for (const auto& row : rows) {
    const auto t = static_cast<int>(std::lower_bound(d.times.begin(), d.times.end(), row.time) - d.times.begin());
    const Eigen::Index k = d.obs_index(static_cast<int>(row.subject), t);
    if (seen[static_cast<std::size_t>(k)]) {
      fail(ErrorCode::DuplicateCell, "duplicate row for subject " + d.subject_ids[row.subject] +
                                         " at time " + format_double(row.time));
    }
    seen[static_cast<std::size_t>(k)] = 1;
    for (int r = 0; r < d.R; ++r) d.y(r, k) = row.values[static_cast<std::size_t>(r)];
  }
  std::string missing;
  int n_missing = 0;
  for (int i = 0; i < d.S; ++i) {
    for (int t = 0; t < d.T; ++t) {
      if (seen[static_cast<std::size_t>(d.obs_index(i, t))]) continue;
      if (n_missing++ < 20) {
        missing += (missing.empty() ? "" : "; ") + std::string("(") + d.subject_ids[static_cast<std::size_t>(i)] +
                   "," + format_double(d.times[static_cast<std::size_t>(t)]) + ")";
      }
    }
  }
  if (n_missing > 0) {
    fail(ErrorCode::IncompletePanel, std::to_string(n_missing) + " missing (subject,time) cells: " + missing);
  }
  if (standardize) res.standardization = standardize_dataset(d);
  return res;
}

inline void write_dataset_csv(const fs::path& path, const Dataset& d) {
  std::ofstream out = detail::open_out(path);
  out << "subject,time";
  for (const auto& v : d.variable_names) out << ',' << detail::quote_csv(v);
  out << '\n';
  for (int i = 0; i < d.S; ++i) {
    for (int t = 0; t < d.T; ++t) {
      out << detail::quote_csv(d.subject_ids[static_cast<std::size_t>(i)]) << ',' << format_double(d.times[static_cast<std::size_t>(t)]);
      const auto y = d.observation(i, t);
      for (int r = 0; r < d.R; ++r) out << ',' << format_double(y(r));
      out << '\n';
    }
  }
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------------------
// JSON helpers

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector vector_from_json(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) v(static_cast<Eigen::Index>(k)) = a[k].get<double>();
  return v;
}

inline Matrix matrix_from_json(const json& a) {
  const auto rows = static_cast<Eigen::Index>(a.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(a[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(a[static_cast<std::size_t>(r)].size()) != cols) {
      fail(ErrorCode::ParseError, "ragged matrix in JSON");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline json read_json(const fs::path& path) {
  std::ifstream in = detail::open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------------------
// Truth JSON: blocks B, V, mu, Omega, p, Q, Z (S x T, 1-based), X (S x T x L)

inline json truth_to_json(const SimTruth& truth) {
  const ModelState& s = truth.state;
  json j;
  j["S"] = s.S();
  j["T"] = s.T();
  j["R"] = s.R();
  j["L"] = s.L();
  j["G"] = s.G();
  j["B"] = to_json(s.loadings.B);
  j["V"] = to_json(s.uniqueness.sigma2);
  j["tau2"] = to_json(s.loadings.tau2);
  j["mu"] = json::array();
  j["Omega"] = json::array();
  for (int g = 0; g < s.G(); ++g) {
    j["mu"].push_back(to_json(s.clusters.mu[static_cast<std::size_t>(g)]));
    j["Omega"].push_back(to_json(s.clusters.omega[static_cast<std::size_t>(g)]));
  }
  j["p"] = to_json(s.markov.p);
  j["Q"] = to_json(s.markov.Q);
  j["Z"] = json::array();
  j["X"] = json::array();
  for (int i = 0; i < s.S(); ++i) {
    json zrow = json::array();
    json xrow = json::array();
    for (int t = 0; t < s.T(); ++t) {
      zrow.push_back(s.latent.z(i, t));
      xrow.push_back(to_json(Vector(s.latent.x(i, t))));
    }
    j["Z"].push_back(std::move(zrow));
    j["X"].push_back(std::move(xrow));
  }
  return j;
}

inline SimTruth truth_from_json(const json& j) {
  try {
    SimTruth truth;
    ModelState& s = truth.state;
    const int S = j.at("S").get<int>();
    const int T = j.at("T").get<int>();
    const int L = j.at("L").get<int>();
    const int G = j.at("G").get<int>();
    s.loadings.B = matrix_from_json(j.at("B"));
    s.uniqueness.sigma2 = vector_from_json(j.at("V"));
    s.loadings.tau2 = j.contains("tau2") ? vector_from_json(j.at("tau2")) : Vector::Ones(L);
    for (int g = 0; g < G; ++g) {
      s.clusters.mu.push_back(vector_from_json(j.at("mu").at(static_cast<std::size_t>(g))));
      s.clusters.omega.push_back(matrix_from_json(j.at("Omega").at(static_cast<std::size_t>(g))));
    }
    s.markov.p = vector_from_json(j.at("p"));
    s.markov.Q = matrix_from_json(j.at("Q"));
    s.latent.S = S;
    s.latent.T = T;
    s.latent.X.resize(L, static_cast<Eigen::Index>(S) * T);
    s.latent.Z.resize(static_cast<std::size_t>(S) * T);
    for (int i = 0; i < S; ++i) {
      for (int t = 0; t < T; ++t) {
        s.latent.z(i, t) = j.at("Z").at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(t)).get<int>();
        s.latent.x(i, t) = vector_from_json(j.at("X").at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(t)));
      }
    }
    if (s.R() != j.at("R").get<int>() || s.L() != L) fail(ErrorCode::ParseError, "truth B shape mismatch");
    return truth;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("truth JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------------------
// Chain directory: <block>.csv (iteration + one column per scalar), z_probs.csv,
// mode_path.csv, meta.json

/// Appends draw chunks to one CSV per block.
class ChainCsvWriter {
 public:
  ChainCsvWriter(const fs::path& dir, const std::vector<DrawBlock>& layout) : dir_(dir) {
    fs::create_directories(dir);
    for (const auto& b : layout) {
      auto out = detail::open_out(dir / (b.name + ".csv"));
      out << "iteration";
      for (const auto& c : b.columns) out << ',' << detail::quote_csv(c);
      out << '\n';
    }
  }

  void append(const std::vector<DrawBlock>& chunk, const std::vector<int>& iterations) {
    for (const auto& b : chunk) {
      std::ofstream out(dir_ / (b.name + ".csv"), std::ios::binary | std::ios::app);
      if (!out) fail(ErrorCode::IoError, "cannot append to " + (dir_ / (b.name + ".csv")).string());
      std::string text;
      for (std::size_t r = 0; r < b.rows(); ++r) {
        text += std::to_string(iterations[r]);
        for (std::size_t c = 0; c < b.cols(); ++c) {
          text += ',';
          text += format_double(b.at(r, c));
        }
        text += '\n';
      }
      out << text;
    }
  }

 private:
  fs::path dir_;
};

inline void write_assignment_tables(const fs::path& dir, const Dataset& data, const Matrix& prob,
                                    const std::vector<int>& mode) {
  auto zp = detail::open_out(dir / "z_probs.csv");
  zp << "subject,time,cluster,probability\n";
  auto mp = detail::open_out(dir / "mode_path.csv");
  mp << "subject,time,mode\n";
  for (int i = 0; i < data.S; ++i) {
    for (int t = 0; t < data.T; ++t) {
      const Eigen::Index k = data.obs_index(i, t);
      const std::string key = detail::quote_csv(data.subject_ids[static_cast<std::size_t>(i)]) + "," +
                              format_double(data.times[static_cast<std::size_t>(t)]);
      for (Eigen::Index g = 0; g < prob.cols(); ++g) {
        zp << key << ',' << g + 1 << ',' << format_double(prob(k, g)) << '\n';
      }
      mp << key << ',' << mode[static_cast<std::size_t>(k)] << '\n';
    }
  }
}

inline DrawBlock read_block_csv(const fs::path& path, std::string name, std::vector<int>* iterations) {
  std::ifstream in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, path.string() + ": empty file");
  const auto header = detail::split_csv(line);
  DrawBlock b{std::move(name), {}, {}};
  for (std::size_t c = 1; c < header.size(); ++c) b.columns.emplace_back(header[c]);
  if (iterations) iterations->clear();
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) fail(ErrorCode::ParseError, path.string() + ": ragged row");
    if (iterations) iterations->push_back(static_cast<int>(*detail::parse_double(fields[0])));
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto v = detail::parse_double(fields[c]);
      if (!v) fail(ErrorCode::ParseError, path.string() + ": bad number");
      b.values.push_back(*v);
    }
  }
  return b;
}

/// Reads a chain directory written by the fit command. The draws are loaded in memory.
inline ChainOutput read_chain_dir(const fs::path& dir) {
  if (!fs::is_directory(dir) || !fs::exists(dir / "meta.json")) {
    fail(ErrorCode::MissingChains, "no chain directory at " + dir.string());
  }
  const json meta = read_json(dir / "meta.json");
  ChainOutput ch;
  try {
    ch.S = meta.at("S").get<int>();
    ch.T = meta.at("T").get<int>();
    ch.R = meta.at("R").get<int>();
    ch.L = meta.at("L").get<int>();
    ch.G = meta.at("G").get<int>();
    ch.stored_iterations = meta.at("stored_iterations").get<int>();
    ch.meta.seed = meta.at("seed").get<std::uint64_t>();
    ch.meta.total_iterations = meta.at("iterations").get<int>();
    ch.meta.burn_in = meta.at("burn_in").get<int>();
    ch.meta.thin = meta.at("thin").get<int>();
    ch.meta.include_initial_prob_in_z1 = meta.at("include_initial_prob_in_z1").get<bool>();
    ch.meta.wall_seconds = meta.value("wall_seconds", 0.0);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("meta.json: ") + e.what());
  }
  for (const auto& name : draw_block_names()) {
    const fs::path p = dir / (name + ".csv");
    if (!fs::exists(p)) fail(ErrorCode::MissingChains, "missing " + p.string());
    ch.blocks.push_back(read_block_csv(p, name, name == "B" ? &ch.iterations : nullptr));
    if (static_cast<int>(ch.blocks.back().rows()) != ch.stored_iterations) {
      fail(ErrorCode::ParseError, p.string() + ": row count disagrees with meta.json");
    }
  }
  ch.z_prob = Matrix::Zero(static_cast<Eigen::Index>(ch.S) * ch.T, ch.G);
  {
    std::ifstream in = detail::open_in(dir / "z_probs.csv");
    std::string line;
    std::getline(in, line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      const auto f = detail::split_csv(line);
      if (f.size() != 4) fail(ErrorCode::ParseError, "z_probs.csv: ragged row");
      const std::size_t k = row / static_cast<std::size_t>(ch.G);
      const int g = static_cast<int>(*detail::parse_double(f[2])) - 1;
      if (k >= static_cast<std::size_t>(ch.z_prob.rows()) || g < 0 || g >= ch.G) {
        fail(ErrorCode::ParseError, "z_probs.csv: unexpected row");
      }
      ch.z_prob(static_cast<Eigen::Index>(k), g) = *detail::parse_double(f[3]);
      ++row;
    }
  }
  ch.z_mode = modal_labels(ch.z_prob);
  return ch;
}

}  // namespace bdcfm
