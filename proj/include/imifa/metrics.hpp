#pragma once

// External cluster validity: adjusted Rand index and the misclassification
// rate under the best matching of predicted to true labels.

#include <imifa/assignment.hpp>
#include <imifa/types.hpp>

#include <algorithm>
#include <map>
#include <vector>

namespace imifa {

/// Map arbitrary integer labels to 0..k-1 in increasing label order.
inline std::vector<int> canonical_labels(const std::vector<int>& labels, int* count = nullptr) {
  std::map<int, int> code;
  for (int l : labels) code.emplace(l, 0);
  int next = 0;
  for (auto& [label, c] : code) c = next++;
  if (count) *count = next;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(code[l]);
  return out;
}

/// Rows: first argument's labels, columns: second's (both canonicalised).
inline Eigen::MatrixXi contingency(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ShapeError("partitions have different lengths");
  int ka = 0, kb = 0;
  const auto ca = canonical_labels(a, &ka);
  const auto cb = canonical_labels(b, &kb);
  Eigen::MatrixXi t = Eigen::MatrixXi::Zero(ka, kb);
  for (std::size_t i = 0; i < a.size(); ++i) ++t(ca[i], cb[i]);
  return t;
}

namespace detail {
inline double choose2(double n) { return n * (n - 1.0) / 2.0; }
}  // namespace detail

/// Hubert-Arabie adjusted Rand index. The denominator vanishes only when both
/// partitions are a single cluster or both are all singletons, i.e. identical;
/// that case gives 1.
inline double adjusted_rand(const std::vector<int>& a, const std::vector<int>& b) {
  const Eigen::MatrixXi t = contingency(a, b);
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (Index i = 0; i < t.rows(); ++i)
    for (Index j = 0; j < t.cols(); ++j) sum_ij += detail::choose2(t(i, j));
  for (Index i = 0; i < t.rows(); ++i) sum_a += detail::choose2(t.row(i).sum());
  for (Index j = 0; j < t.cols(); ++j) sum_b += detail::choose2(t.col(j).sum());
  const double expected = sum_a * sum_b / detail::choose2(static_cast<double>(a.size()));
  const double denom = 0.5 * (sum_a + sum_b) - expected;
  if (denom == 0.0) return 1.0;
  return (sum_ij - expected) / denom;
}

struct ErrorRate {
  double rate = 0.0;
  std::vector<Index> perm;    // true label index -> matched predicted label index
  Eigen::MatrixXi confusion;  // k x k; rows true labels, columns matched predicted labels
  std::vector<int> true_values;
  std::vector<int> pred_values;  // predicted label in each column (-1 for padding)
};

/// 1 - max_perm trace / N over the zero-padded square confusion matrix.
inline ErrorRate error_rate(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("partitions have different lengths");
  if (pred.empty()) throw ShapeError("partitions are empty");
  const Eigen::MatrixXi t = contingency(truth, pred);
  const Index k = std::max(t.rows(), t.cols());
  Eigen::MatrixXi square = Eigen::MatrixXi::Zero(k, k);
  square.topLeftCorner(t.rows(), t.cols()) = t;
  const Assignment a = solve_assignment(-square.cast<double>());
  ErrorRate out;
  out.perm = a.perm;
  out.confusion.resize(k, k);
  Index matched = 0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) out.confusion(j, i) = square(j, a.perm[static_cast<std::size_t>(i)]);
    matched += square(i, a.perm[static_cast<std::size_t>(i)]);
  }
  out.rate = 1.0 - static_cast<double>(matched) / static_cast<double>(pred.size());
  std::map<int, int> tv, pv;
  for (int l : truth) tv.emplace(l, 0);
  for (int l : pred) pv.emplace(l, 0);
  std::vector<int> tvals, pvals;
  for (auto& e : tv) tvals.push_back(e.first);
  for (auto& e : pv) pvals.push_back(e.first);
  for (Index i = 0; i < k; ++i) {
    out.true_values.push_back(i < static_cast<Index>(tvals.size()) ? tvals[static_cast<std::size_t>(i)] : -1);
    const Index col = a.perm[static_cast<std::size_t>(i)];
    out.pred_values.push_back(col < static_cast<Index>(pvals.size()) ? pvals[static_cast<std::size_t>(col)] : -1);
  }
  return out;
}

}  // namespace imifa
