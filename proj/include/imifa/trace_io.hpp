#pragma once

// Run-directory persistence of a ChainTrace:
//   trace.meta.json    dimensions, control settings, diagnostics, layout notes
//   trace.scalars.csv  iter, G0, G_active, loglik, alpha, d, q_1..q_K, pi_1..pi_K
//   trace.z.bin        int32 little-endian, samples x N, labels 1..G0
//   trace.params.bin   float64 little-endian (only when loadings are stored)

#include <imifa/sampler.hpp>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace imifa {

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("binary trace file is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

/// Shortest text that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

}  // namespace detail

inline nlohmann::json to_json(const Diagnostics& d) {
  return {{"alpha_proposals", d.alpha_proposals},     {"alpha_accepts", d.alpha_accepts},
          {"discount_proposals", d.discount_proposals}, {"discount_accepts", d.discount_accepts},
          {"move1_proposals", d.move1_proposals},     {"move1_accepts", d.move1_accepts},
          {"move2_proposals", d.move2_proposals},     {"move2_accepts", d.move2_accepts},
          {"adaptations", d.adaptations},             {"init_fallback", d.init_fallback},
          {"alpha_step", d.alpha_step},               {"discount_step", d.discount_step}};
}

inline Diagnostics diagnostics_from_json(const nlohmann::json& j) {
  Diagnostics d;
  d.alpha_proposals = j.value("alpha_proposals", 0L);
  d.alpha_accepts = j.value("alpha_accepts", 0L);
  d.discount_proposals = j.value("discount_proposals", 0L);
  d.discount_accepts = j.value("discount_accepts", 0L);
  d.move1_proposals = j.value("move1_proposals", 0L);
  d.move1_accepts = j.value("move1_accepts", 0L);
  d.move2_proposals = j.value("move2_proposals", 0L);
  d.move2_accepts = j.value("move2_accepts", 0L);
  d.adaptations = j.value("adaptations", 0L);
  d.init_fallback = j.value("init_fallback", false);
  d.alpha_step = j.value("alpha_step", 0.5);
  d.discount_step = j.value("discount_step", 0.5);
  return d;
}

inline void write_trace(const std::filesystem::path& dir, const ChainTrace& t,
                        const nlohmann::json& config = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const bool params = t.has_params();
  const bool scores = params && t.samples.front().eta.rows() > 0;
  nlohmann::json meta;
  meta["format"] = "imifa-trace";
  meta["version"] = 1;
  meta["kind"] = to_string(t.kind);
  meta["N"] = t.n;
  meta["p"] = t.p;
  meta["G"] = t.G;
  meta["q"] = t.q;
  meta["n_iter"] = t.control.n_iter;
  meta["burnin"] = t.control.burnin;
  meta["thin"] = t.control.thin;
  meta["seed"] = t.control.seed;
  meta["samples"] = t.samples.size();
  meta["store_loadings"] = params;
  meta["store_scores"] = scores;
  meta["kappa_hat"] = t.kappa_hat;
  meta["diagnostics"] = to_json(t.diag);
  meta["layout"] = {
      {"z", "int32 little-endian, one row of N labels per stored sample, labels 1..G0"},
      {"params",
       "float64 little-endian; per sample, per non-empty cluster g = 1..G0: mu[p], psi[p], "
       "lambda[p x q_g] row-major; then, if store_scores, eta[N x max_g q_g] row-major"}};
  meta["config"] = config;
  {
    auto out = detail::open_out(dir / "trace.meta.json");
    out << meta.dump(2) << '\n';
  }
  std::size_t width = 0;
  for (const auto& s : t.samples) width = std::max(width, static_cast<std::size_t>(s.G0));
  {
    auto out = detail::open_out(dir / "trace.scalars.csv");
    out << "iter,G0,G_active,loglik,alpha,d";
    for (std::size_t g = 1; g <= width; ++g) out << ",q_" << g;
    for (std::size_t g = 1; g <= width; ++g) out << ",pi_" << g;
    out << '\n';
    for (const auto& s : t.samples) {
      out << s.iter << ',' << s.G0 << ',' << s.G_active << ',' << detail::format_double(s.loglik) << ','
          << detail::format_double(s.alpha) << ',' << detail::format_double(s.discount);
      for (std::size_t g = 0; g < width; ++g) {
        out << ',';
        if (g < s.q.size()) out << s.q[g];
      }
      for (std::size_t g = 0; g < width; ++g) {
        out << ',';
        if (g < s.pi.size()) out << detail::format_double(s.pi[g]);
      }
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "trace.z.bin", true);
    for (const auto& s : t.samples)
      for (int z : s.z) detail::write_le<std::int32_t>(out, z);
  }
  if (params) {
    auto out = detail::open_out(dir / "trace.params.bin", true);
    for (const auto& s : t.samples) {
      for (const auto& c : s.clusters) {
        for (Index j = 0; j < c.mu.size(); ++j) detail::write_le<double>(out, c.mu(j));
        for (Index j = 0; j < c.psi.size(); ++j) detail::write_le<double>(out, c.psi(j));
        for (Index j = 0; j < c.lambda.rows(); ++j)
          for (Index k = 0; k < c.lambda.cols(); ++k) detail::write_le<double>(out, c.lambda(j, k));
      }
      if (scores) {
        // width = max q over the stored clusters
        Index w = 0;
        for (Index q : s.q) w = std::max(w, q);
        for (Index i = 0; i < s.eta.rows(); ++i)
          for (Index k = 0; k < w; ++k) detail::write_le<double>(out, k < s.eta.cols() ? s.eta(i, k) : 0.0);
      }
    }
  }
}

struct LoadedTrace {
  ChainTrace trace;
  nlohmann::json meta;
};

inline LoadedTrace read_trace(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* f : {"trace.meta.json", "trace.scalars.csv", "trace.z.bin"})
    if (!fs::exists(dir / f)) throw IoError("missing " + (dir / f).string());
  LoadedTrace out;
  {
    auto in = detail::open_in(dir / "trace.meta.json");
    try {
      in >> out.meta;
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed trace.meta.json: ") + e.what());
    }
  }
  const auto& m = out.meta;
  auto& t = out.trace;
  t.kind = parse_model_kind(m.at("kind").get<std::string>());
  t.n = m.at("N").get<Index>();
  t.p = m.at("p").get<Index>();
  t.G = m.value("G", Index{1});
  t.q = m.value("q", Index{0});
  t.control.n_iter = m.at("n_iter").get<long>();
  t.control.burnin = m.at("burnin").get<long>();
  t.control.thin = m.at("thin").get<long>();
  t.control.seed = m.at("seed").get<std::uint64_t>();
  t.control.store_loadings = m.at("store_loadings").get<bool>();
  t.control.store_scores = m.at("store_scores").get<bool>();
  t.kappa_hat = m.value("kappa_hat", 0.0);
  if (m.contains("diagnostics")) t.diag = diagnostics_from_json(m["diagnostics"]);
  const auto count = m.at("samples").get<std::size_t>();

  auto in = detail::open_in(dir / "trace.scalars.csv");
  std::string line;
  std::getline(in, line);  // header
  t.samples.reserve(count);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() < 6) throw IoError("malformed trace.scalars.csv row");
    TraceSample s;
    s.iter = std::stol(cells[0]);
    s.G0 = std::stol(cells[1]);
    s.G_active = std::stol(cells[2]);
    s.loglik = std::stod(cells[3]);
    s.alpha = std::stod(cells[4]);
    s.discount = std::stod(cells[5]);
    const std::size_t width = (cells.size() - 6) / 2;
    for (Index g = 0; g < s.G0; ++g) {
      s.q.push_back(std::stol(cells[6 + static_cast<std::size_t>(g)]));
      s.pi.push_back(std::stod(cells[6 + width + static_cast<std::size_t>(g)]));
    }
    t.samples.push_back(std::move(s));
  }
  if (t.samples.size() != count) throw IoError("trace.scalars.csv sample count disagrees with metadata");

  auto zin = detail::open_in(dir / "trace.z.bin", true);
  for (auto& s : t.samples) {
    s.z.resize(static_cast<std::size_t>(t.n));
    for (auto& z : s.z) z = detail::read_le<std::int32_t>(zin);
  }
  if (t.control.store_loadings) {
    if (!fs::exists(dir / "trace.params.bin")) throw IoError("missing " + (dir / "trace.params.bin").string());
    auto pin = detail::open_in(dir / "trace.params.bin", true);
    for (auto& s : t.samples) {
      for (Index g = 0; g < s.G0; ++g) {
        ClusterDraw c;
        c.mu.resize(t.p);
        c.psi.resize(t.p);
        c.lambda.resize(t.p, s.q[static_cast<std::size_t>(g)]);
        for (Index j = 0; j < t.p; ++j) c.mu(j) = detail::read_le<double>(pin);
        for (Index j = 0; j < t.p; ++j) c.psi(j) = detail::read_le<double>(pin);
        for (Index j = 0; j < c.lambda.rows(); ++j)
          for (Index k = 0; k < c.lambda.cols(); ++k) c.lambda(j, k) = detail::read_le<double>(pin);
        s.clusters.push_back(std::move(c));
      }
      if (t.control.store_scores) {
        Index w = 0;
        for (Index q : s.q) w = std::max(w, q);
        s.eta.resize(t.n, w);
        for (Index i = 0; i < t.n; ++i)
          for (Index k = 0; k < w; ++k) s.eta(i, k) = detail::read_le<double>(pin);
      }
    }
  }
  return out;
}

}  // namespace imifa
