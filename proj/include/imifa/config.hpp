#pragma once

// Declarative run configuration (JSON) and its resolved echo.
//
// {
//   "data":    {"path": "x.csv", "header": true, "label_column": "area",
//               "center": true, "scale": "unit"},
//   "model":   {"kind": "IMIFA", "G": 3, "q": 2, "G_range": [1, 9] | {"from": 1, "to": 9},
//               "q_range": ..., "G_ceiling": 25, "isotropic": false, "uniqueness_shape": 2.5},
//   "priors":  {"mgp": {"nu": 3, ...}},
//   "process": {"kind": "py", "alpha": "learn" | 0.5, "alpha_start": 0.5, "alpha_hyper": [2, 1],
//               "discount": "learn" | 0.1, "kappa": 0.5, "discount_hyper": [1, 1],
//               "gamma": 0.2, "rho": 0.75},
//   "mcmc":    {"n_iter": 50000, "burnin": 10000, "thin": 2, "seed": 1,
//               "store_loadings": true, "store_scores": false,
//               "label_switch_moves": true, "init": "gmm"},
//   "summary": {"template": "earliest" | "max_loglik"},
//   "simulate": {"N": 300, "p": 50, "q": [4, 4, 4], "pi": [...], "separation": 1,
//                "seed": 1, "replicates": 10},
//   "output": "runs/example", "threads": 1
// }
//
// Unknown keys are rejected so that typos do not silently fall back to defaults.

#include <imifa/data.hpp>
#include <imifa/model.hpp>
#include <imifa/posthoc.hpp>

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace imifa {

using nlohmann::json;

struct DataSpec {
  std::string path;
  bool header = true;
  std::optional<std::string> label_column;
  PreprocessSpec preprocess{true, ScaleMode::Unit};
};

struct SimulateSpec {
  SimSpec spec;
  int replicates = 1;
};

struct RunConfig {
  DataSpec data;
  ModelSettings model;
  std::vector<Index> G_values;  // grid over G (MFA, MIFA)
  std::vector<Index> q_values;  // grid over q (FA, MFA)
  TemplateChoice templ = TemplateChoice::Earliest;
  std::optional<SimulateSpec> simulate;
  std::string output;
  int threads = 1;

  bool is_grid() const { return !G_values.empty() || !q_values.empty(); }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ParameterError("'" + where + "' must be a JSON object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw ParameterError("unknown key '" + key + "' in '" + where + "'");
}

template <typename T>
T get(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParameterError("'" + where + "." + key + "' has the wrong type");
  }
}

template <typename T>
void maybe(const json& obj, const std::string& key, const std::string& where, T& target) {
  if (obj.contains(key)) target = get<T>(obj, key, where);
}

inline std::vector<Index> parse_range(const json& v, const std::string& where) {
  std::vector<Index> out;
  if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ParameterError("'" + where + "' entries must be integers");
      out.push_back(e.get<Index>());
    }
  } else if (v.is_object()) {
    reject_unknown(v, {"from", "to"}, where);
    const auto from = get<Index>(v, "from", where);
    const auto to = get<Index>(v, "to", where);
    if (to < from) throw ParameterError("'" + where + "' has to < from");
    for (Index k = from; k <= to; ++k) out.push_back(k);
  } else {
    throw ParameterError("'" + where + "' must be a list or {from, to}");
  }
  if (out.empty()) throw ParameterError("'" + where + "' is empty");
  return out;
}

inline std::pair<double, double> parse_pair(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ParameterError("'" + where + "' must be a pair of numbers");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace detail

inline MgpHyper parse_mgp(const json& j, MgpHyper h) {
  const std::string w = "priors.mgp";
  detail::reject_unknown(j, {"nu", "alpha1", "beta1", "alpha2", "beta2", "b0", "b1", "epsilon", "prop",
                             "adapt_after_burnin"},
                         w);
  detail::maybe(j, "nu", w, h.nu);
  detail::maybe(j, "alpha1", w, h.alpha1);
  detail::maybe(j, "beta1", w, h.beta1);
  detail::maybe(j, "alpha2", w, h.alpha2);
  detail::maybe(j, "beta2", w, h.beta2);
  detail::maybe(j, "b0", w, h.b0);
  detail::maybe(j, "b1", w, h.b1);
  detail::maybe(j, "epsilon", w, h.epsilon);
  detail::maybe(j, "prop", w, h.prop);
  detail::maybe(j, "adapt_after_burnin", w, h.adapt_after_burnin);
  return h;
}

inline ProcessPrior parse_process(const json& j, ProcessPrior pp) {
  const std::string w = "process";
  detail::reject_unknown(
      j, {"kind", "alpha", "alpha_start", "alpha_hyper", "discount", "kappa", "discount_hyper", "gamma", "rho"}, w);
  if (j.contains("kind")) pp.kind = parse_process_kind(detail::get<std::string>(j, "kind", w));
  detail::maybe(j, "alpha_start", w, pp.alpha);  // starting value when alpha is learned
  if (j.contains("alpha")) {
    const auto& a = j["alpha"];
    if (a.is_string() && a.get<std::string>() == "learn") {
      pp.learn_alpha = true;
    } else if (a.is_number()) {
      pp.alpha = a.get<double>();
      pp.learn_alpha = false;
    } else {
      throw ParameterError("'process.alpha' must be a number or \"learn\"");
    }
  }
  if (j.contains("discount")) {
    const auto& d = j["discount"];
    if (d.is_string() && d.get<std::string>() == "learn") {
      pp.learn_discount = true;
    } else if (d.is_number()) {
      pp.discount = d.get<double>();
      pp.learn_discount = false;
    } else {
      throw ParameterError("'process.discount' must be a number or \"learn\"");
    }
  }
  if (pp.kind == ProcessKind::Dirichlet && !j.contains("discount")) {
    pp.discount = 0.0;
    pp.learn_discount = false;
  }
  if (j.contains("alpha_hyper")) std::tie(pp.alpha_shape, pp.alpha_rate) = detail::parse_pair(j["alpha_hyper"], w + ".alpha_hyper");
  if (j.contains("discount_hyper"))
    std::tie(pp.discount_a, pp.discount_b) = detail::parse_pair(j["discount_hyper"], w + ".discount_hyper");
  detail::maybe(j, "kappa", w, pp.kappa);
  detail::maybe(j, "gamma", w, pp.gamma);
  detail::maybe(j, "rho", w, pp.rho);
  if (pp.kind == ProcessKind::Overfitted && j.contains("gamma") && !j.contains("alpha")) pp.alpha = 0.0;
  return pp;
}

inline RunConfig parse_run_config(const json& root) {
  RunConfig rc;
  detail::reject_unknown(root, {"data", "model", "priors", "process", "mcmc", "summary", "simulate", "output", "threads"},
                         "config");
  if (root.contains("data")) {
    const auto& d = root["data"];
    const std::string w = "data";
    detail::reject_unknown(d, {"path", "header", "label_column", "center", "scale"}, w);
    detail::maybe(d, "path", w, rc.data.path);
    detail::maybe(d, "header", w, rc.data.header);
    if (d.contains("label_column") && !d["label_column"].is_null()) rc.data.label_column = detail::get<std::string>(d, "label_column", w);
    detail::maybe(d, "center", w, rc.data.preprocess.center);
    if (d.contains("scale")) rc.data.preprocess.scale = parse_scale_mode(detail::get<std::string>(d, "scale", w));
  }
  auto& ms = rc.model;
  if (root.contains("model")) {
    const auto& m = root["model"];
    const std::string w = "model";
    detail::reject_unknown(m, {"kind", "G", "q", "G_range", "q_range", "G_ceiling", "isotropic", "uniqueness_shape"}, w);
    if (m.contains("kind")) ms.kind = parse_model_kind(detail::get<std::string>(m, "kind", w));
    detail::maybe(m, "G", w, ms.G);
    detail::maybe(m, "q", w, ms.q);
    detail::maybe(m, "G_ceiling", w, ms.cluster_ceiling);
    detail::maybe(m, "uniqueness_shape", w, ms.uniqueness_shape);
    if (m.contains("isotropic") && m["isotropic"] != "auto") ms.isotropic = detail::get<bool>(m, "isotropic", w);
    if (m.contains("G_range")) rc.G_values = detail::parse_range(m["G_range"], "model.G_range");
    if (m.contains("q_range")) rc.q_values = detail::parse_range(m["q_range"], "model.q_range");
  }
  if (root.contains("priors")) {
    const auto& p = root["priors"];
    detail::reject_unknown(p, {"mgp"}, "priors");
    if (p.contains("mgp")) {
      (void)parse_mgp(p["mgp"], MgpHyper{});
      for (const auto& [key, v] : p["mgp"].items())
        ms.mgp_overrides[key] = v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>();
    }
  }
  if (root.contains("process")) ms.process = parse_process(root["process"], default_process(ms.kind));
  if (root.contains("mcmc")) {
    const auto& m = root["mcmc"];
    const std::string w = "mcmc";
    detail::reject_unknown(m, {"n_iter", "burnin", "thin", "seed", "store_loadings", "store_scores",
                               "label_switch_moves", "init"},
                           w);
    auto& c = ms.control;
    detail::maybe(m, "n_iter", w, c.n_iter);
    detail::maybe(m, "burnin", w, c.burnin);
    detail::maybe(m, "thin", w, c.thin);
    detail::maybe(m, "seed", w, c.seed);
    detail::maybe(m, "store_loadings", w, c.store_loadings);
    detail::maybe(m, "store_scores", w, c.store_scores);
    detail::maybe(m, "label_switch_moves", w, c.label_switch_moves);
    if (m.contains("init")) c.init = parse_init_method(detail::get<std::string>(m, "init", w));
  }
  if (root.contains("summary")) {
    const auto& s = root["summary"];
    detail::reject_unknown(s, {"template"}, "summary");
    if (s.contains("template")) {
      const auto t = detail::get<std::string>(s, "template", "summary");
      if (t == "earliest") {
        rc.templ = TemplateChoice::Earliest;
      } else if (t == "max_loglik") {
        rc.templ = TemplateChoice::MaxLoglik;
      } else {
        throw ParameterError("'summary.template' must be \"earliest\" or \"max_loglik\"");
      }
    }
  }
  if (root.contains("simulate")) {
    const auto& s = root["simulate"];
    const std::string w = "simulate";
    detail::reject_unknown(s, {"N", "p", "q", "pi", "separation", "seed", "replicates"}, w);
    SimulateSpec sim;
    detail::maybe(s, "N", w, sim.spec.n);
    detail::maybe(s, "p", w, sim.spec.p);
    detail::maybe(s, "q", w, sim.spec.q);
    if (s.contains("pi")) {
      sim.spec.pi = detail::get<std::vector<double>>(s, "pi", w);
    } else if (s.contains("q")) {
      sim.spec.pi.assign(sim.spec.q.size(), 1.0 / static_cast<double>(sim.spec.q.size()));
    }
    detail::maybe(s, "separation", w, sim.spec.separation);
    detail::maybe(s, "seed", w, sim.spec.seed);
    detail::maybe(s, "replicates", w, sim.replicates);
    rc.simulate = sim;
  }
  detail::maybe(root, "output", "config", rc.output);
  detail::maybe(root, "threads", "config", rc.threads);
  if (rc.threads < 1) throw ParameterError("'threads' must be >= 1");

  // grids only where the kind has a finite dimension to search over
  const bool G_grid_ok = ms.kind == ModelKind::MFA || ms.kind == ModelKind::MIFA;
  const bool q_grid_ok = ms.kind == ModelKind::FA || ms.kind == ModelKind::MFA;
  if (!rc.G_values.empty() && !G_grid_ok) throw ParameterError("G_range applies to MFA and MIFA only");
  if (!rc.q_values.empty() && !q_grid_ok) throw ParameterError("q_range applies to FA and MFA only");
  for (Index g : rc.G_values)
    if (g < 1) throw ParameterError("G_range values must be >= 1");
  for (Index q : rc.q_values)
    if (q < 0) throw ParameterError("q_range values must be >= 0");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), 0, static_cast<long>(e.byte));
  }
  return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Echo
// ---------------------------------------------------------------------------

inline json to_json(const MgpHyper& h) {
  return {{"nu", h.nu},     {"alpha1", h.alpha1}, {"beta1", h.beta1},     {"alpha2", h.alpha2},
          {"beta2", h.beta2}, {"b0", h.b0},       {"b1", h.b1},           {"epsilon", h.epsilon},
          {"prop", h.prop}, {"adapt_after_burnin", h.adapt_after_burnin}};
}

inline json to_json(const ProcessPrior& pp) {
  json j;
  j["kind"] = to_string(pp.kind);
  j["alpha"] = pp.learn_alpha ? json("learn") : json(pp.alpha);
  j["alpha_start"] = pp.alpha;
  j["alpha_hyper"] = {pp.alpha_shape, pp.alpha_rate};
  j["discount"] = pp.learn_discount ? json("learn") : json(pp.discount);
  j["kappa"] = pp.kappa;
  j["discount_hyper"] = {pp.discount_a, pp.discount_b};
  j["gamma"] = pp.gamma;
  j["rho"] = pp.rho;
  return j;
}

inline json to_json(const McmcControl& c) {
  return {{"n_iter", c.n_iter},
          {"burnin", c.burnin},
          {"thin", c.thin},
          {"seed", c.seed},
          {"store_loadings", c.store_loadings},
          {"store_scores", c.store_scores},
          {"label_switch_moves", c.label_switch_moves},
          {"init", to_string(c.init)}};
}

/// Every resolved setting of one fit, including data-derived hyperparameters.
inline json to_json(const ModelConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["G"] = c.G;
  j["q"] = c.q;
  j["q_max"] = c.q_max;
  j["uniqueness"] = {{"shape", c.uniqueness.shape},
                     {"rates", vector_json(c.uniqueness.rates)},
                     {"isotropic", c.uniqueness.isotropic},
                     {"used_pseudoinverse", c.uniqueness.used_pseudoinverse}};
  j["mean_prior"] = {{"mean", vector_json(c.mean.mean)},
                     {"covariance", c.mean.diagonal ? "diagonal of the sample covariance" : "sample covariance"}};
  if (is_adaptive(c.kind)) j["mgp"] = to_json(c.mgp);
  j["process"] = to_json(c.process);
  j["mcmc"] = to_json(c.control);
  return j;
}

inline json to_json(const RunConfig& rc) {
  json j;
  const auto& ms = rc.model;
  j["data"] = {{"path", rc.data.path},
               {"header", rc.data.header},
               {"label_column", rc.data.label_column ? json(*rc.data.label_column) : json(nullptr)},
               {"center", rc.data.preprocess.center},
               {"scale", to_string(rc.data.preprocess.scale)}};
  json m;
  m["kind"] = to_string(ms.kind);
  m["G"] = ms.G;
  m["q"] = ms.q;
  m["G_ceiling"] = ms.cluster_ceiling;
  m["uniqueness_shape"] = ms.uniqueness_shape;
  m["isotropic"] = ms.isotropic ? json(*ms.isotropic) : json("auto");
  if (!rc.G_values.empty()) m["G_range"] = rc.G_values;
  if (!rc.q_values.empty()) m["q_range"] = rc.q_values;
  j["model"] = m;
  if (!ms.mgp_overrides.empty()) {
    json o = json::object();
    for (const auto& [key, v] : ms.mgp_overrides) o[key] = key == "adapt_after_burnin" ? json(v != 0.0) : json(v);
    j["priors"] = {{"mgp", o}};
  }
  j["process"] = to_json(ms.process.value_or(default_process(ms.kind)));
  j["mcmc"] = to_json(ms.control);
  j["summary"] = {{"template", rc.templ == TemplateChoice::Earliest ? "earliest" : "max_loglik"}};
  j["output"] = rc.output;
  j["threads"] = rc.threads;
  return j;
}

}  // namespace imifa
