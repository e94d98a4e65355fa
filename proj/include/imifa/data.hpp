#pragma once

// Dataset ingestion (CSV), column preprocessing and synthetic data drawn
// from a mixture of factor analysers.

#include <imifa/dist.hpp>
#include <imifa/types.hpp>

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace imifa {

enum class ScaleMode { None, Unit, Pareto };

inline std::string to_string(ScaleMode m) {
  switch (m) {
    case ScaleMode::None: return "none";
    case ScaleMode::Unit: return "unit";
    case ScaleMode::Pareto: return "pareto";
  }
  return "none";
}

inline ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "none") return ScaleMode::None;
  if (s == "unit") return ScaleMode::Unit;
  if (s == "pareto") return ScaleMode::Pareto;
  throw ParameterError("unknown scale mode '" + s + "' (expected none, unit or pareto)");
}

struct PreprocessSpec {
  bool center = false;
  ScaleMode scale = ScaleMode::None;
};

struct Dataset {
  Matrix x;  // N x p
  std::vector<std::string> var_names;
  std::optional<std::vector<int>> true_labels;  // 1..L
  PreprocessSpec preprocessing;
  Vector column_means;   // subtracted (zeros when not centred)
  Vector column_scales;  // divided by (ones when not scaled)

  Index n() const { return x.rows(); }
  Index p() const { return x.cols(); }
};

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Distinct label strings -> 1..L. Integer labels keep their numeric order,
// anything else is numbered by first appearance.
inline std::vector<int> encode_labels(const std::vector<std::string>& raw) {
  bool all_int = true;
  for (const auto& s : raw) {
    const auto v = parse_double(s);
    if (!v || std::floor(*v) != *v) {
      all_int = false;
      break;
    }
  }
  std::vector<std::string> order;
  if (all_int) {
    std::map<double, std::string> sorted;
    for (const auto& s : raw) sorted.emplace(*parse_double(s), s);
    for (auto& [_, s] : sorted) order.push_back(s);
  } else {
    for (const auto& s : raw)
      if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
  }
  std::vector<int> out;
  out.reserve(raw.size());
  for (const auto& s : raw) {
    if (all_int) {
      const double v = *parse_double(s);
      for (std::size_t k = 0; k < order.size(); ++k)
        if (*parse_double(order[k]) == v) out.push_back(static_cast<int>(k) + 1);
    } else {
      out.push_back(static_cast<int>(std::find(order.begin(), order.end(), s) - order.begin()) + 1);
    }
  }
  return out;
}

}  // namespace detail

/// Read a rectangular numeric CSV. Errors report 1-based file line and column.
inline Dataset read_matrix(std::istream& in, bool has_header,
                           const std::optional<std::string>& label_column = std::nullopt) {
  if (label_column && !has_header) throw ParameterError("a label column needs a header row");
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  long label_idx = -1;
  std::size_t width = 0;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (has_header && header.empty()) {
      header = cells;
      if (label_column) {
        auto it = std::find(header.begin(), header.end(), *label_column);
        if (it == header.end()) throw ParameterError("label column '" + *label_column + "' not in header");
        label_idx = it - header.begin();
      }
      width = header.size();
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw ShapeError("ragged CSV: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(width));
    std::vector<double> row;
    row.reserve(width);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (static_cast<long>(c) == label_idx) {
        raw_labels.push_back(cells[c]);
        continue;
      }
      const auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ParseError("non-numeric cell '" + cells[c] + "' at line " + std::to_string(line_no) + ", column " +
                             std::to_string(c + 1),
                         line_no, static_cast<long>(c + 1));
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) throw ShapeError("need at least 2 data rows, got " + std::to_string(rows.size()));
  Dataset d;
  const auto p = static_cast<Index>(rows.front().size());
  if (p < 1) throw ShapeError("no numeric columns");
  d.x.resize(static_cast<Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < p; ++j) d.x(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  for (std::size_t c = 0; c < width; ++c) {
    if (static_cast<long>(c) == label_idx) continue;
    d.var_names.push_back(has_header ? header[c] : "V" + std::to_string(d.var_names.size() + 1));
  }
  if (label_idx >= 0) d.true_labels = detail::encode_labels(raw_labels);
  d.column_means = Vector::Zero(p);
  d.column_scales = Vector::Ones(p);
  return d;
}

inline Dataset load_matrix(const std::string& path, bool has_header,
                           const std::optional<std::string>& label_column = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_matrix(in, has_header, label_column);
}

/// Read a single labels column (with header) such as the one written next
/// to simulated data.
inline std::vector<int> load_labels(const std::string& path, const std::optional<std::string>& column = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::vector<std::string> header;
  std::vector<std::string> raw;
  std::size_t idx = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (header.empty()) {
      header = cells;
      if (column) {
        auto it = std::find(header.begin(), header.end(), *column);
        if (it == header.end()) throw ParameterError("label column '" + *column + "' not in " + path);
        idx = static_cast<std::size_t>(it - header.begin());
      }
      continue;
    }
    if (idx >= cells.size()) throw ShapeError("ragged label file " + path);
    raw.push_back(cells[idx]);
  }
  if (raw.empty()) throw ShapeError("label file " + path + " has no rows");
  return detail::encode_labels(raw);
}

inline Vector column_means(const Matrix& x) { return x.colwise().mean().transpose(); }

/// Sample standard deviations (N - 1 denominator).
inline Vector column_sds(const Matrix& x) {
  const Vector m = column_means(x);
  return ((x.rowwise() - m.transpose()).array().square().colwise().sum() / static_cast<double>(x.rows() - 1))
      .sqrt()
      .transpose();
}

inline Matrix sample_covariance(const Matrix& x) {
  const Matrix c = x.rowwise() - column_means(x).transpose();
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

inline Dataset preprocess(const Dataset& d, const PreprocessSpec& spec) {
  Dataset out = d;
  const Index p = d.p();
  Vector shift = Vector::Zero(p);
  Vector scale = Vector::Ones(p);
  if (spec.center) shift = column_means(d.x);
  if (spec.scale != ScaleMode::None) {
    const Vector sd = column_sds(d.x);
    for (Index j = 0; j < p; ++j) {
      if (!(sd(j) > 0.0)) {
        const std::string name = j < static_cast<Index>(d.var_names.size()) ? d.var_names[j] : std::to_string(j + 1);
        throw ParameterError("degenerate column '" + name + "': zero variance cannot be scaled");
      }
      scale(j) = spec.scale == ScaleMode::Unit ? sd(j) : std::sqrt(sd(j));
    }
  }
  out.x = (d.x.rowwise() - shift.transpose()).array().rowwise() / scale.transpose().array();
  out.preprocessing = spec;
  out.column_means = shift;
  out.column_scales = scale;
  return out;
}

struct SimSpec {
  Index n = 300;
  Index p = 50;
  std::vector<int> q{4, 4, 4};  // one entry per cluster
  std::vector<double> pi{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double separation = 1.0;
  std::uint64_t seed = 1;

  Index groups() const { return static_cast<Index>(q.size()); }
};

struct SimTruth {
  std::vector<int> z;  // 1-based
  Matrix mu;           // G x p
  std::vector<Matrix> lambda;
  Matrix psi;  // G x p
  Vector pi;
  std::uint64_t seed = 0;

  Matrix covariance(Index g) const {
    const auto& l = lambda[static_cast<std::size_t>(g)];
    Matrix s = l * l.transpose();
    s.diagonal() += psi.row(g).transpose();
    return s;
  }
};

inline void validate(const SimSpec& s) {
  if (s.n < 2 || s.p < 1) throw ParameterError("simulation needs N >= 2 and p >= 1");
  if (s.q.empty()) throw ParameterError("simulation needs at least one cluster");
  if (s.pi.size() != s.q.size()) throw ParameterError("pi and q must have one entry per cluster");
  double total = 0.0;
  for (double w : s.pi) {
    if (!(w >= 0.0)) throw ParameterError("mixing proportions must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ParameterError("mixing proportions must sum to 1");
  for (int qg : s.q)
    if (qg < 0 || qg > s.p) throw ParameterError("every q_g must lie in [0, p]");
  if (!(s.separation > 0.0)) throw ParameterError("separation scale must be > 0");
}

/// Means ~ MVN(0, s^2 I), loadings iid N(0, 1), uniquenesses iid U(0.2, 1),
/// labels ~ Mult(pi), then x_i ~ MVN(mu_g, Lambda_g Lambda_g^T + Psi_g).
inline std::pair<Dataset, SimTruth> simulate_mfa(const SimSpec& spec) {
  validate(spec);
  RngStream rng(spec.seed);
  const Index G = spec.groups();
  const Index p = spec.p;
  SimTruth t;
  t.seed = spec.seed;
  t.pi = Eigen::Map<const Vector>(spec.pi.data(), G);
  t.mu.resize(G, p);
  t.psi.resize(G, p);
  for (Index g = 0; g < G; ++g) {
    t.mu.row(g) = spec.separation * rng.normal_vector(p).transpose();
    Matrix l(p, spec.q[static_cast<std::size_t>(g)]);
    for (Index j = 0; j < l.rows(); ++j)
      for (Index k = 0; k < l.cols(); ++k) l(j, k) = rng.normal();
    t.lambda.push_back(std::move(l));
    for (Index j = 0; j < p; ++j) t.psi(g, j) = sample_uniform(rng, 0.2, 1.0);
  }
  std::vector<double> log_pi(static_cast<std::size_t>(G));
  for (Index g = 0; g < G; ++g) log_pi[g] = std::log(t.pi(g));
  Dataset d;
  d.x.resize(spec.n, p);
  t.z.resize(static_cast<std::size_t>(spec.n));
  for (Index i = 0; i < spec.n; ++i) {
    const auto g = static_cast<Index>(gumbel_max_categorical(rng, log_pi));
    t.z[static_cast<std::size_t>(i)] = static_cast<int>(g) + 1;
    const auto& l = t.lambda[static_cast<std::size_t>(g)];
    Vector xi = t.mu.row(g).transpose();
    if (l.cols() > 0) xi += l * rng.normal_vector(l.cols());
    for (Index j = 0; j < p; ++j) xi(j) += std::sqrt(t.psi(g, j)) * rng.normal();
    d.x.row(i) = xi.transpose();
  }
  for (Index j = 0; j < p; ++j) d.var_names.push_back("x" + std::to_string(j + 1));
  d.true_labels = t.z;
  d.column_means = Vector::Zero(p);
  d.column_scales = Vector::Ones(p);
  return {std::move(d), std::move(t)};
}

inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (Index j = 0; j < d.p(); ++j) out << (j ? "," : "") << d.var_names[static_cast<std::size_t>(j)];
  out << '\n' << std::setprecision(17);
  for (Index i = 0; i < d.n(); ++i) {
    for (Index j = 0; j < d.p(); ++j) out << (j ? "," : "") << d.x(i, j);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline void write_labels_csv(const std::vector<int>& labels, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "label\n";
  for (int z : labels) out << z << '\n';
}

inline nlohmann::json to_json(const SimTruth& t) {
  nlohmann::json j;
  j["z"] = t.z;
  auto rows = [](const Matrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
    return out;
  };
  j["mu"] = rows(t.mu);
  j["lambda"] = nlohmann::json::array();
  for (const auto& l : t.lambda) j["lambda"].push_back(rows(l));
  j["psi"] = rows(t.psi);
  j["pi"] = std::vector<double>(t.pi.data(), t.pi.data() + t.pi.size());
  j["seed"] = t.seed;
  return j;
}

}  // namespace imifa
