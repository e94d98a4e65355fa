#pragma once

// Command implementations behind the `imifa` executable. Each command is a
// function of (config, seed, input files); only run_info.json records wall time.

#include <imifa/config.hpp>
#include <imifa/criteria.hpp>
#include <imifa/metrics.hpp>
#include <imifa/posthoc.hpp>
#include <imifa/sampler.hpp>
#include <imifa/trace_io.hpp>

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace imifa {

namespace fs = std::filesystem;

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool force = false;
};

/// Create an empty output directory; an existing non-empty one is only
/// replaced with `force`.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ValidationError("output directory '" + dir.string() + "' exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Seed of the k-th derived job (k = 0 keeps the base seed).
inline std::uint64_t derived_seed(std::uint64_t base, std::uint64_t k) {
  if (k == 0) return base;
  std::uint64_t state = base + 0x9E3779B97F4A7C15ULL * k;
  return detail::splitmix64(state);
}

inline fs::path output_path(const RunConfig& rc, const CommandOptions& opts) {
  const std::string out = opts.out.value_or(rc.output);
  if (out.empty()) throw ValidationError("no output directory: set 'output' in the config or pass --out");
  return out;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline std::vector<fs::path> cmd_simulate(const RunConfig& rc, const CommandOptions& opts) {
  if (!rc.simulate) throw ValidationError("config has no 'simulate' section");
  SimulateSpec sim = *rc.simulate;
  if (opts.seed) sim.spec.seed = *opts.seed;
  if (sim.replicates < 1) throw ParameterError("replicate count must be >= 1");
  validate(sim.spec);
  const fs::path dir = output_path(rc, opts);
  prepare_output_dir(dir, opts.force);
  std::vector<fs::path> written;
  json manifest;
  manifest["N"] = sim.spec.n;
  manifest["p"] = sim.spec.p;
  manifest["q"] = sim.spec.q;
  manifest["pi"] = sim.spec.pi;
  manifest["separation"] = sim.spec.separation;
  manifest["seed"] = sim.spec.seed;
  manifest["replicates"] = json::array();
  for (int r = 1; r <= sim.replicates; ++r) {
    SimSpec spec = sim.spec;
    spec.seed = derived_seed(sim.spec.seed, static_cast<std::uint64_t>(r));
    auto [data, truth] = simulate_mfa(spec);
    char stem[32];
    std::snprintf(stem, sizeof stem, "rep_%02d", r);
    const fs::path csv = dir / (std::string(stem) + ".csv");
    write_csv(data, csv.string());
    write_labels_csv(truth.z, (dir / (std::string(stem) + ".labels.csv")).string());
    write_json_file(dir / (std::string(stem) + ".truth.json"), to_json(truth));
    manifest["replicates"].push_back({{"file", csv.filename().string()}, {"seed", spec.seed}});
    written.push_back(csv);
  }
  write_json_file(dir / "simulate.json", manifest);
  return written;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct GridMember {
  std::string name;  // subdirectory; empty for a single run
  ModelSettings settings;
};

inline std::vector<GridMember> grid_members(const RunConfig& rc, std::uint64_t seed) {
  std::vector<GridMember> out;
  const auto& base = rc.model;
  if (!rc.is_grid()) {
    GridMember m{"", base};
    m.settings.control.seed = seed;
    out.push_back(m);
    return out;
  }
  const std::vector<Index> Gs = rc.G_values.empty() ? std::vector<Index>{base.G} : rc.G_values;
  const std::vector<Index> qs = rc.q_values.empty() ? std::vector<Index>{base.q} : rc.q_values;
  std::uint64_t k = 0;
  for (Index G : Gs) {
    for (Index q : qs) {
      GridMember m{"", base};
      m.settings.G = G;
      m.settings.q = q;
      switch (base.kind) {
        case ModelKind::FA: m.name = "q" + std::to_string(q); break;
        case ModelKind::MIFA: m.name = "G" + std::to_string(G); break;
        default: m.name = "G" + std::to_string(G) + "_q" + std::to_string(q); break;
      }
      m.settings.control.seed = derived_seed(seed, ++k);
      out.push_back(m);
    }
  }
  return out;
}

/// BIC-MCMC for models with fixed G and q; BICM otherwise.
inline std::string criterion_name(ModelKind kind) {
  return kind == ModelKind::FA || kind == ModelKind::MFA ? "bic_mcmc" : "bicm";
}

struct MemberResult {
  std::string name;
  ModelKind kind = ModelKind::IMIFA;
  Index G = 0;
  Index q = 0;
  std::string criterion;
  double value = 0.0;
};

inline double trace_criterion(const ChainTrace& t) {
  CriteriaInput ci;
  for (const auto& s : t.samples) ci.loglik.push_back(s.loglik);
  ci.n = t.n;
  ci.p = t.p;
  ci.G = t.G;
  if (!is_adaptive(t.kind)) ci.q = t.q;
  return criterion_name(t.kind) == "bic_mcmc" ? bic_mcmc(ci) : bicm(ci);
}

inline std::string template_name(TemplateChoice t) { return t == TemplateChoice::Earliest ? "earliest" : "max_loglik"; }

inline TemplateChoice parse_template(const std::string& s) {
  return s == "max_loglik" ? TemplateChoice::MaxLoglik : TemplateChoice::Earliest;
}

inline MemberResult fit_member(const Dataset& data, const GridMember& member, const fs::path& dir, TemplateChoice templ) {
  const ModelConfig cfg = resolve(member.settings, data);
  if (cfg.control.stored_samples() < 2) throw ParameterError("need at least 2 stored samples");
  fs::create_directories(dir);
  json resolved = to_json(cfg);
  resolved["summary"] = {{"template", template_name(templ)}};
  write_json_file(dir / "config.resolved.json", resolved);
  const ChainTrace trace = fit(data.x, cfg);
  write_trace(dir, trace, resolved);
  MemberResult r;
  r.name = member.name;
  r.kind = cfg.kind;
  r.G = cfg.G;
  r.q = cfg.q;
  r.criterion = criterion_name(cfg.kind);
  r.value = trace_criterion(trace);
  write_json_file(dir / "criteria.json", {{"criterion", r.criterion}, {"value", r.value}});
  return r;
}

inline Dataset load_dataset(const DataSpec& spec) {
  if (spec.path.empty()) throw ValidationError("config has no 'data.path'");
  return preprocess(load_matrix(spec.path, spec.header, spec.label_column), spec.preprocess);
}

/// Run `jobs` on a pool of `threads` workers; rethrows the first failure.
template <typename Job>
void run_pool(std::size_t count, int threads, Job job) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto worker = [&] {
    for (std::size_t k = next++; k < count; k = next++) {
      try {
        job(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(n, count); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void summarise_run(const fs::path& dir);

inline void write_comparison(const fs::path& path, const std::vector<MemberResult>& results) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < results.size(); ++k)
    if (results[k].value > results[best].value) best = k;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "model,G,q,criterion,value,chosen\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    out << (r.name.empty() ? to_string(r.kind) : r.name) << ',' << r.G << ',' << r.q << ',' << r.criterion << ','
        << detail::format_double(r.value) << ',' << (k == best ? 1 : 0) << '\n';
  }
}

struct FitReport {
  fs::path dir;
  std::vector<MemberResult> results;
  std::size_t chosen = 0;
  double wall_seconds = 0.0;
};

inline FitReport cmd_fit(RunConfig rc, const CommandOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  if (opts.seed) rc.model.control.seed = *opts.seed;
  if (opts.threads) rc.threads = *opts.threads;
  if (rc.threads < 1) throw ParameterError("--threads must be >= 1");
  const Dataset data = load_dataset(rc.data);
  const auto members = grid_members(rc, rc.model.control.seed);
  // resolve everything up front so that configuration errors surface before any output
  for (const auto& m : members) (void)resolve(m.settings, data);
  FitReport report;
  report.dir = output_path(rc, opts);
  prepare_output_dir(report.dir, opts.force);
  if (rc.is_grid()) write_json_file(report.dir / "config.resolved.json", to_json(rc));
  report.results.resize(members.size());
  run_pool(members.size(), rc.threads, [&](std::size_t k) {
    const fs::path dir = members[k].name.empty() ? report.dir : report.dir / members[k].name;
    report.results[k] = fit_member(data, members[k], dir, rc.templ);
  });
  if (!rc.is_grid()) {
    // a single run echoes both the user-level and the resolved settings
    json resolved = read_json_file(report.dir / "config.resolved.json");
    resolved["run"] = to_json(rc);
    write_json_file(report.dir / "config.resolved.json", resolved);
  }
  for (std::size_t k = 1; k < report.results.size(); ++k)
    if (report.results[k].value > report.results[report.chosen].value) report.chosen = k;
  write_comparison(report.dir / "comparison.csv", report.results);
  summarise_run(report.dir);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json_file(report.dir / "run_info.json", {{"n_models", report.results.size()},
                                                 {"wall_time_seconds", report.wall_seconds},
                                                 {"threads", rc.threads},
                                                 {"chosen", report.results[report.chosen].name}});
  return report;
}

// ---------------------------------------------------------------------------
// summarise
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::string model;
  Index G = 0;
  Index q = 0;
  std::string criterion;
  double value = 0.0;
  bool chosen = false;
};

inline std::vector<ComparisonRow> read_comparison(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ComparisonRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> c;
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (c.size() != 6) throw IoError("malformed row in " + path.string());
    rows.push_back({c[0], std::stol(c[1]), std::stol(c[2]), c[3], std::stod(c[4]), c[5] == "1"});
  }
  return rows;
}

/// Directory holding the trace of the chosen model of a run.
inline fs::path chosen_dir(const fs::path& run_dir) {
  if (fs::exists(run_dir / "trace.meta.json")) return run_dir;
  if (fs::exists(run_dir / "comparison.csv")) {
    for (const auto& r : read_comparison(run_dir / "comparison.csv"))
      if (r.chosen) return run_dir / r.model;
  }
  throw IoError("no trace files in '" + run_dir.string() + "'");
}

inline void write_plot_data(const fs::path& dir, const PosteriorSummary& s) {
  fs::create_directories(dir / "plots");
  {
    std::ofstream out(dir / "plots" / "q_barchart.csv");
    out << "cluster,q,frequency\n";
    for (std::size_t g = 0; g < s.clusters.size(); ++g)
      for (const auto& [q, c] : s.clusters[g].q.frequency) out << g + 1 << ',' << q << ',' << c << '\n';
  }
  {
    std::ofstream out(dir / "plots" / "loadings_heatmap.csv");
    out << "cluster,row,col,value\n";
    for (std::size_t g = 0; g < s.clusters.size(); ++g) {
      const auto& l = s.clusters[g].loadings;
      for (Index j = 0; j < l.rows(); ++j)
        for (Index k = 0; k < l.cols(); ++k)
          out << g + 1 << ',' << j + 1 << ',' << k + 1 << ',' << detail::format_double(l(j, k)) << '\n';
    }
  }
  {
    std::ofstream out(dir / "plots" / "g0_frequency.csv");
    out << "G0,frequency\n";
    for (const auto& [g, c] : s.G_distribution) out << g << ',' << c << '\n';
  }
}

inline PosteriorSummary summarise_dir(const fs::path& dir) {
  const LoadedTrace loaded = read_trace(dir);
  SummaryOptions opts;
  const auto& cfg = loaded.meta.value("config", json::object());
  if (cfg.contains("summary") && cfg["summary"].contains("template"))
    opts.templ = parse_template(cfg["summary"]["template"].get<std::string>());
  const PosteriorSummary s = summarize(loaded.trace, opts);
  json j = to_json(s);
  j["kind"] = to_string(loaded.trace.kind);
  j["diagnostics"] = to_json(loaded.trace.diag);
  write_json_file(dir / "summary.json", j);
  write_plot_data(dir, s);
  return s;
}

/// Summarise a single-run directory, or every member of a grid run plus a
/// root summary pointing at the chosen member.
inline void summarise_run(const fs::path& run_dir) {
  if (!fs::exists(run_dir) || !fs::is_directory(run_dir)) throw IoError("no run directory '" + run_dir.string() + "'");
  if (fs::exists(run_dir / "trace.meta.json")) {
    summarise_dir(run_dir);
    return;
  }
  if (!fs::exists(run_dir / "comparison.csv")) throw IoError("no trace files in '" + run_dir.string() + "'");
  std::string chosen;
  for (const auto& r : read_comparison(run_dir / "comparison.csv")) {
    summarise_dir(run_dir / r.model);
    if (r.chosen) chosen = r.model;
  }
  json root = read_json_file(run_dir / chosen / "summary.json");
  root["chosen_model"] = chosen;
  write_json_file(run_dir / "summary.json", root);
  fs::create_directories(run_dir / "plots");
  for (const char* f : {"q_barchart.csv", "loadings_heatmap.csv", "g0_frequency.csv"})
    fs::copy_file(run_dir / chosen / "plots" / f, run_dir / "plots" / f, fs::copy_options::overwrite_existing);
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreReport {
  double ari = 0.0;
  ErrorRate error;
};

inline ScoreReport cmd_score(const fs::path& run_dir, const std::string& labels_path,
                             const std::optional<std::string>& column = std::nullopt) {
  const fs::path dir = chosen_dir(run_dir);
  if (!fs::exists(dir / "summary.json")) summarise_run(run_dir);
  const json summary = read_json_file(dir / "summary.json");
  const auto map_z = summary.at("map_z").get<std::vector<int>>();
  const auto truth = load_labels(labels_path, column);
  if (truth.size() != map_z.size())
    throw ShapeError("label file has " + std::to_string(truth.size()) + " rows but the run has " +
                     std::to_string(map_z.size()) + " observations");
  ScoreReport r;
  r.ari = adjusted_rand(map_z, truth);
  r.error = error_rate(map_z, truth);
  json m;
  m["adjusted_rand"] = r.ari;
  m["error_rate"] = r.error.rate;
  m["error_percent"] = 100.0 * r.error.rate;
  m["N"] = map_z.size();
  m["modal_G"] = summary.at("modal_G");
  m["true_groups"] = std::count_if(r.error.true_values.begin(), r.error.true_values.end(), [](int v) { return v >= 0; });
  m["matched_clusters"] = r.error.pred_values;
  m["labels"] = labels_path;
  write_json_file(run_dir / "metrics.json", m);
  std::ofstream out(run_dir / "confusion.csv");
  if (!out) throw IoError("cannot write confusion.csv");
  out << "truth";
  for (int v : r.error.pred_values) out << ",cluster_" << (v < 0 ? std::string("none") : std::to_string(v));
  out << '\n';
  for (Index i = 0; i < r.error.confusion.rows(); ++i) {
    const int tv = r.error.true_values[static_cast<std::size_t>(i)];
    if (tv < 0 && r.error.confusion.row(i).sum() == 0) continue;  // padding row
    out << (tv < 0 ? std::string("none") : std::to_string(tv));
    for (Index j = 0; j < r.error.confusion.cols(); ++j) out << ',' << r.error.confusion(i, j);
    out << '\n';
  }
  return r;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Pool the comparison tables of several runs; within each criterion the
/// largest value is marked chosen.
inline std::string cmd_compare(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ValidationError("compare needs at least one run directory");
  struct Row {
    std::string run;
    ComparisonRow row;
  };
  std::vector<Row> rows;
  for (const auto& d : run_dirs) {
    const fs::path p = fs::path(d) / "comparison.csv";
    if (!fs::exists(p)) throw IoError("no comparison.csv in '" + d + "'");
    for (auto& r : read_comparison(p)) rows.push_back({fs::path(d).filename().string(), r});
  }
  std::map<std::string, std::size_t> best;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto it = best.find(rows[k].row.criterion);
    if (it == best.end() || rows[k].row.value > rows[it->second].row.value) best[rows[k].row.criterion] = k;
  }
  std::ostringstream out;
  out << "run,model,G,q,criterion,value,chosen\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k].row;
    out << rows[k].run << ',' << r.model << ',' << r.G << ',' << r.q << ',' << r.criterion << ','
        << detail::format_double(r.value) << ',' << (best[r.criterion] == k ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace imifa
