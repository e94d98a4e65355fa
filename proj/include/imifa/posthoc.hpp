#pragma once

// Post-hoc identification and summaries of a stored chain: modal G0,
// relabelling against a template partition, Procrustes alignment of
// loadings, and posterior summaries.

#include <imifa/assignment.hpp>
#include <imifa/criteria.hpp>
#include <imifa/sampler.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

namespace imifa {

enum class TemplateChoice { Earliest, MaxLoglik };

/// Mode of a frequency table; ties go to the smaller value.
template <typename K>
K modal_value(const std::map<K, long>& freq) {
  K best{};
  long count = -1;
  for (const auto& [k, c] : freq)
    if (c > count) {
      best = k;
      count = c;
    }
  return best;
}

/// Type-7 empirical quantile of sorted data.
inline double empirical_quantile(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw ParameterError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct CountSummary {
  Index mode = 0;
  Index lower = 0;
  Index upper = 0;
  std::map<Index, long> frequency;
};

/// Modal value plus central 95% interval, endpoints rounded outward.
inline CountSummary summarize_counts(const std::vector<Index>& values, double level = 0.95) {
  if (values.empty()) throw ParameterError("no samples to summarise");
  CountSummary out;
  std::vector<double> sorted;
  for (Index v : values) {
    ++out.frequency[v];
    sorted.push_back(static_cast<double>(v));
  }
  std::sort(sorted.begin(), sorted.end());
  out.mode = modal_value(out.frequency);
  const double tail = (1.0 - level) / 2.0;
  out.lower = static_cast<Index>(std::floor(empirical_quantile(sorted, tail) + 1e-9));
  out.upper = static_cast<Index>(std::ceil(empirical_quantile(sorted, 1.0 - tail) - 1e-9));
  out.lower = std::min(out.lower, out.mode);
  out.upper = std::max(out.upper, out.mode);
  return out;
}

// ---------------------------------------------------------------------------
// Relabelling
// ---------------------------------------------------------------------------

/// Permutation mapping sample labels (0-based) to template labels maximising
/// agreement. Keeps the identity whenever it is already optimal.
inline std::vector<Index> match_to_template(const std::vector<int>& z, const std::vector<int>& templ, Index k) {
  if (z.size() != templ.size()) throw ShapeError("template and sample lengths differ");
  Matrix cost = Matrix::Zero(k, k);
  for (std::size_t i = 0; i < z.size(); ++i) cost(z[i] - 1, templ[i] - 1) -= 1.0;
  const Assignment a = solve_assignment(cost);
  if (cost.trace() <= a.cost) {
    std::vector<Index> id(static_cast<std::size_t>(k));
    std::iota(id.begin(), id.end(), 0);
    return id;
  }
  return a.perm;
}

inline void apply_label_permutation(TraceSample& s, const std::vector<Index>& perm) {
  const auto k = perm.size();
  for (auto& l : s.z) l = static_cast<int>(perm[static_cast<std::size_t>(l - 1)]) + 1;
  std::vector<Index> q(k);
  std::vector<double> pi(k);
  for (std::size_t a = 0; a < k; ++a) {
    q[static_cast<std::size_t>(perm[a])] = s.q[a];
    pi[static_cast<std::size_t>(perm[a])] = s.pi[a];
  }
  s.q = std::move(q);
  s.pi = std::move(pi);
  if (!s.clusters.empty()) {
    std::vector<ClusterDraw> c(k);
    for (std::size_t a = 0; a < k; ++a) c[static_cast<std::size_t>(perm[a])] = std::move(s.clusters[a]);
    s.clusters = std::move(c);
  }
}

struct RelabelResult {
  ChainTrace trace;  // samples with the template's cluster count, relabelled
  long excluded = 0;
};

inline RelabelResult relabel_trace(const ChainTrace& trace, const std::vector<int>& templ) {
  int k_int = 0;
  for (int l : templ) k_int = std::max(k_int, l);
  const auto k = static_cast<Index>(k_int);
  RelabelResult out;
  out.trace = trace;
  out.trace.samples.clear();
  for (const auto& s : trace.samples) {
    if (s.G0 != k) {
      ++out.excluded;
      continue;
    }
    TraceSample r = s;
    apply_label_permutation(r, match_to_template(r.z, templ, k));
    out.trace.samples.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Procrustes
// ---------------------------------------------------------------------------

struct Rotation {
  Matrix R;
  bool rank_deficient = false;
};

/// Orthogonal R minimising ||A R - B||_F: R = U V^T from the SVD of A^T B.
inline Rotation procrustes_rotation(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("Procrustes inputs differ in shape");
  Rotation out;
  if (a.cols() == 0) {
    out.R = Matrix(0, 0);
    return out;
  }
  const Matrix cross = a.transpose() * b;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.R = svd.matrixU() * svd.matrixV().transpose();
  const Vector& sv = svd.singularValues();
  out.rank_deficient = sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0));
  return out;
}

/// Rotate the first q_g loadings columns of every sample (with at least that
/// many) onto the template, and the matching score columns of its members.
/// Returns the number of rank-deficient rotations.
inline long procrustes_align(ChainTrace& trace, const std::vector<Matrix>& templates) {
  long flagged = 0;
  for (auto& s : trace.samples) {
    if (s.clusters.empty()) continue;
    const auto k = std::min(templates.size(), s.clusters.size());
    for (std::size_t g = 0; g < k; ++g) {
      const Index q = templates[g].cols();
      auto& lambda = s.clusters[g].lambda;
      if (q == 0 || lambda.cols() < q) continue;
      const Rotation rot = procrustes_rotation(lambda.leftCols(q), templates[g]);
      if (rot.rank_deficient) ++flagged;
      lambda.leftCols(q) = (lambda.leftCols(q) * rot.R).eval();
      if (s.eta.rows() == static_cast<Index>(s.z.size()) && s.eta.cols() >= q) {
        for (std::size_t i = 0; i < s.z.size(); ++i)
          if (s.z[i] == static_cast<int>(g) + 1)
            s.eta.row(static_cast<Index>(i)).head(q) = (s.eta.row(static_cast<Index>(i)).head(q) * rot.R).eval();
      }
    }
  }
  return flagged;
}

/// Flip each column so its largest-magnitude entry is positive.
inline void align_signs(Matrix& m) {
  for (Index k = 0; k < m.cols(); ++k) {
    Index r = 0;
    m.col(k).cwiseAbs().maxCoeff(&r);
    if (m(r, k) < 0.0) m.col(k) *= -1.0;
  }
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct ClusterSummary {
  CountSummary q;
  double pi_mean = 0.0;
  Vector mean;
  Vector uniquenesses;
  Matrix loadings;  // p x modal q
  long loadings_samples = 0;
};

struct PosteriorSummary {
  Index modal_G = 0;
  bool modal_G_tie = false;
  std::map<Index, long> G_distribution;
  std::vector<ClusterSummary> clusters;
  std::vector<int> map_z;  // 1..modal_G
  double kappa_hat = 0.0;
  long total_samples = 0;
  long retained_samples = 0;
  long excluded_samples = 0;
  long template_index = 0;  // index among all stored samples
  long rank_deficient_rotations = 0;
  std::optional<double> bic_mcmc;
  std::optional<double> bicm;
  double alpha_mean = 0.0;
  double discount_mean = 0.0;
};

struct SummaryOptions {
  TemplateChoice templ = TemplateChoice::Earliest;
};

inline PosteriorSummary summarize(const ChainTrace& trace, const SummaryOptions& opts = {}) {
  if (trace.samples.empty()) throw ParameterError("trace has no stored samples");
  PosteriorSummary out;
  out.total_samples = static_cast<long>(trace.samples.size());
  out.kappa_hat = trace.kappa_hat;
  for (const auto& s : trace.samples) {
    ++out.G_distribution[s.G0];
    out.alpha_mean += s.alpha;
    out.discount_mean += s.discount;
  }
  out.alpha_mean /= static_cast<double>(out.total_samples);
  out.discount_mean /= static_cast<double>(out.total_samples);
  out.modal_G = modal_value(out.G_distribution);
  const long top = out.G_distribution.at(out.modal_G);
  out.modal_G_tie = std::count_if(out.G_distribution.begin(), out.G_distribution.end(),
                                  [&](const auto& e) { return e.second == top; }) > 1;

  // template among modal samples
  long templ = -1;
  for (std::size_t t = 0; t < trace.samples.size(); ++t) {
    const auto& s = trace.samples[t];
    if (s.G0 != out.modal_G) continue;
    if (templ < 0 || (opts.templ == TemplateChoice::MaxLoglik && s.loglik > trace.samples[templ].loglik))
      templ = static_cast<long>(t);
    if (opts.templ == TemplateChoice::Earliest) break;
  }
  out.template_index = templ;
  RelabelResult rel = relabel_trace(trace, trace.samples[static_cast<std::size_t>(templ)].z);
  auto& kept = rel.trace.samples;
  out.retained_samples = static_cast<long>(kept.size());
  out.excluded_samples = rel.excluded;

  const auto G = static_cast<std::size_t>(out.modal_G);
  out.clusters.resize(G);
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<Index> qs;
    double pi = 0.0;
    for (const auto& s : kept) {
      qs.push_back(s.q[g]);
      pi += s.pi[g];
    }
    out.clusters[g].q = summarize_counts(qs);
    out.clusters[g].pi_mean = pi / static_cast<double>(kept.size());
  }

  // per-observation modal label
  const auto n = kept.front().z.size();
  out.map_z.assign(n, 1);
  std::vector<long> votes(G);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const auto& s : kept) ++votes[static_cast<std::size_t>(s.z[i] - 1)];
    out.map_z[i] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin()) + 1;
  }

  if (rel.trace.has_params()) {
    const Index p = kept.front().clusters.front().mu.size();
    std::vector<Matrix> templates(G);
    for (std::size_t g = 0; g < G; ++g) {
      const Index mq = out.clusters[g].q.mode;
      templates[g] = Matrix(p, 0);
      for (const auto& s : kept)
        if (s.clusters[g].lambda.cols() >= mq) {
          templates[g] = s.clusters[g].lambda.leftCols(mq);
          break;
        }
    }
    out.rank_deficient_rotations = procrustes_align(rel.trace, templates);
    for (std::size_t g = 0; g < G; ++g) {
      auto& cs = out.clusters[g];
      const Index mq = cs.q.mode;
      cs.mean = Vector::Zero(p);
      cs.uniquenesses = Vector::Zero(p);
      cs.loadings = Matrix::Zero(p, mq);
      for (const auto& s : kept) {
        cs.mean += s.clusters[g].mu;
        cs.uniquenesses += s.clusters[g].psi;
        if (mq > 0 && s.clusters[g].lambda.cols() >= mq) {
          cs.loadings += s.clusters[g].lambda.leftCols(mq);
          ++cs.loadings_samples;
        }
      }
      cs.mean /= static_cast<double>(kept.size());
      cs.uniquenesses /= static_cast<double>(kept.size());
      if (cs.loadings_samples > 0) cs.loadings /= static_cast<double>(cs.loadings_samples);
      align_signs(cs.loadings);
    }
  }

  CriteriaInput ci;
  for (const auto& s : trace.samples) ci.loglik.push_back(s.loglik);
  ci.n = trace.n;
  ci.p = trace.p;
  ci.G = trace.G;
  if (!is_adaptive(trace.kind)) ci.q = trace.q;
  if (ci.loglik.size() >= 2) out.bicm = bicm(ci);
  if (trace.kind == ModelKind::FA || trace.kind == ModelKind::MFA) out.bic_mcmc = bic_mcmc(ci);
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const CountSummary& c) {
  nlohmann::json freq = nlohmann::json::object();
  for (const auto& [k, v] : c.frequency) freq[std::to_string(k)] = v;
  return {{"mode", c.mode}, {"interval", {c.lower, c.upper}}, {"frequency", freq}};
}

inline nlohmann::json matrix_rows(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json to_json(const PosteriorSummary& s) {
  nlohmann::json j;
  j["modal_G"] = s.modal_G;
  j["modal_G_tie"] = s.modal_G_tie;
  nlohmann::json gd = nlohmann::json::object();
  for (const auto& [g, c] : s.G_distribution) gd[std::to_string(g)] = c;
  j["G_distribution"] = gd;
  j["total_samples"] = s.total_samples;
  j["retained_samples"] = s.retained_samples;
  j["excluded_samples"] = s.excluded_samples;
  j["template_sample"] = s.template_index;
  j["rank_deficient_rotations"] = s.rank_deficient_rotations;
  j["kappa_hat"] = s.kappa_hat;
  j["alpha_mean"] = s.alpha_mean;
  j["discount_mean"] = s.discount_mean;
  j["criteria"] = nlohmann::json::object();
  if (s.bic_mcmc) j["criteria"]["bic_mcmc"] = *s.bic_mcmc;
  if (s.bicm) j["criteria"]["bicm"] = *s.bicm;
  j["map_z"] = s.map_z;
  nlohmann::json cl = nlohmann::json::array();
  for (const auto& c : s.clusters) {
    nlohmann::json e;
    e["q"] = to_json(c.q);
    e["pi_mean"] = c.pi_mean;
    if (c.mean.size() > 0) {
      e["mean"] = vector_json(c.mean);
      e["uniquenesses"] = vector_json(c.uniquenesses);
      e["loadings"] = matrix_rows(c.loadings);
      e["loadings_samples"] = c.loadings_samples;
    }
    cl.push_back(e);
  }
  j["clusters"] = cl;
  return j;
}

}  // namespace imifa
