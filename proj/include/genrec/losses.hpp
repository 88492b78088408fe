#pragma once

// Partition functions, the teacher-forced NTP loss, the full-vocabulary MLE
// loss, their gradients, and the per-(context, item) equivalence checker.
//
// Every partition value is kept in log space. Four routes to the normalizer
// are exposed so they can be checked against each other:
//
//   path_log_partition      sum_m log Z_m(h, prefix of one sequence)
//   nested_log_partition    log of nested per-node sums (distributive law)
//   sequence_log_partition  log-sum-exp over all X^k sequences, flat
//   full_log_partition      log-sum-exp over the items of a token map
//
// Nested and sequence routes agree for every model. Sequence and full routes
// agree under a strict map. The path route equals the others only when every
// node at a given depth has the same partition, which holds for parallel
// models and fails for cascaded models in general.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <variant>
#include <vector>

#include "genrec/errors.hpp"
#include "genrec/logits.hpp"
#include "genrec/vocab.hpp"

namespace genrec {

/// log(sum(exp(v))) with max subtraction.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw EmptyInput("log_sum_exp of an empty list");
  const double mx = *std::max_element(values.begin(), values.end());
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lz = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lz);
  return p;
}

/// log Z_m(h, prefix): normalizer of the node the prefix leads to.
template <LogitModel M>
double token_partition(const M& model, ContextId h, std::span<const Token> prefix) {
  const auto& spec = model.spec();
  if (prefix.size() >= spec.k) throw IndexError("prefix too long for token_partition");
  for (Token t : prefix)
    if (t >= spec.X) throw IndexError("prefix token out of range");
  return log_sum_exp(model.node_logits(prefix.size(), h, prefix_index(spec.X, prefix)));
}

/// sum_m log Z_m along the prefixes of one full sequence.
template <LogitModel M>
double path_log_partition(const M& model, ContextId h, std::span<const Token> tokens) {
  validate_sequence(model.spec(), tokens);
  const auto X = model.spec().X;
  double total = 0.0;
  std::uint64_t prefix = 0;
  for (std::size_t m = 0; m < tokens.size(); ++m) {
    total += log_sum_exp(model.node_logits(m, h, prefix));
    prefix = prefix * X + tokens[m];
  }
  return total;
}

/// Teacher-forced NTP loss: -sum_m log softmax(node)[t_m] with every prefix
/// taken from the target's own sequence. Reads exactly k rows of X logits.
template <LogitModel M>
double ntp_loss(const M& model, ContextId h, const TokenMap& map, ItemId target) {
  require_same_spec(model.spec(), map.spec());
  const auto& seq = map.forward(target);
  const auto X = model.spec().X;
  double loss = 0.0;
  std::uint64_t prefix = 0;
  for (std::size_t m = 0; m < seq.size(); ++m) {
    const auto row = model.node_logits(m, h, prefix);
    loss -= row[seq[m]] - log_sum_exp(row);
    prefix = prefix * X + seq[m];
  }
  return loss;
}

/// l(h, i) for every item of the map, in item order.
template <LogitModel M>
std::vector<double> all_item_logits(const M& model, ContextId h, const TokenMap& map) {
  require_same_spec(model.spec(), map.spec());
  std::vector<double> out(map.size());
  for (ItemId i = 0; i < map.size(); ++i) out[i] = sequence_score(model, h, map.forward(i).view());
  return out;
}

/// log Z_full(h) = log sum_{items} exp(l(h, i)), by enumerating the map.
template <LogitModel M>
double full_log_partition(const M& model, ContextId h, const TokenMap& map) {
  return log_sum_exp(all_item_logits(model, h, map));
}

/// Flat enumeration of all X^k sequences, each scored independently.
template <LogitModel M>
double sequence_log_partition(const M& model, ContextId h) {
  const auto& spec = model.spec();
  const auto n = spec.sequence_space_size();
  std::vector<double> scores(n);
  for (std::uint64_t s = 0; s < n; ++s)
    scores[s] = sequence_score(model, h, sequence_from_index(spec, s).view());
  return log_sum_exp(scores);
}

namespace detail {
template <LogitModel M>
double subtree_log_partition(const M& model, ContextId h, std::size_t m, std::uint64_t prefix) {
  const auto& spec = model.spec();
  const auto row = model.node_logits(m, h, prefix);
  if (m + 1 == spec.k) return log_sum_exp(row);
  std::vector<double> terms(spec.X);
  for (Token t = 0; t < spec.X; ++t)
    terms[t] = row[t] + subtree_log_partition(model, h, m + 1, prefix * spec.X + t);
  return log_sum_exp(terms);
}
}  // namespace detail

/// Nested sums over codebooks folded from the leaves up:
/// log S(node) = logsumexp_t [ l(t | node) + log S(child_t) ].
template <LogitModel M>
double nested_log_partition(const M& model, ContextId h) {
  return detail::subtree_log_partition(model, h, 0, 0);
}

/// sum_m log Z_m(h) for prefix-independent models.
inline double factored_log_partition(const ParallelLogitModel& model, ContextId h) {
  double total = 0.0;
  for (std::size_t m = 0; m < model.spec().k; ++m)
    total += log_sum_exp(model.node_logits(m, h, 0));
  return total;
}

inline double factored_log_partition(const AnyLogitModel& model, ContextId h) {
  const auto* p = std::get_if<ParallelLogitModel>(&model);
  if (!p) throw FormError("factored_log_partition needs a parallel model");
  return factored_log_partition(*p, h);
}

/// Full-vocabulary MLE loss -l(h, i+) + log Z_full(h). Reads N * k entries.
template <LogitModel M>
double fv_mle_loss(const M& model, ContextId h, const TokenMap& map, ItemId target) {
  const auto logits = all_item_logits(model, h, map);
  if (target >= logits.size()) throw IndexError("target item not in token map");
  return -(logits[target] - log_sum_exp(logits));
}

/// p(i | h) = exp(l(h, i) - log Z_full(h)) over the items of the map.
template <LogitModel M>
std::vector<double> full_item_distribution(const M& model, ContextId h, const TokenMap& map) {
  auto logits = all_item_logits(model, h, map);
  const double lz = log_sum_exp(logits);
  for (auto& v : logits) v = std::exp(v - lz);
  return logits;
}

/// Chain-rule probability prod_m softmax(node_m)[t_m] of one sequence.
template <LogitModel M>
double autoregressive_log_prob(const M& model, ContextId h, std::span<const Token> tokens) {
  return sequence_score(model, h, tokens) - path_log_partition(model, h, tokens);
}

// ---------------------------------------------------------------------------
// Gradients

inline ParamTable zeros_like(const ParamTable& p) {
  ParamTable z(p.size());
  for (std::size_t m = 0; m < p.size(); ++m) z[m].assign(p[m].size(), 0.0);
  return z;
}

inline double max_abs_difference(const ParamTable& a, const ParamTable& b) {
  double d = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m)
    for (std::size_t j = 0; j < a[m].size(); ++j) d = std::max(d, std::abs(a[m][j] - b[m][j]));
  return d;
}

/// Gradient of the NTP loss restricted to one visited row.
struct NodeGradient {
  std::size_t position = 0;
  std::uint64_t prefix = 0;
  std::vector<double> values;  // softmax(row) - onehot(target token)
};

/// The k nonzero rows of the NTP gradient, in position order.
template <LogitModel M>
std::vector<NodeGradient> ntp_node_gradients(const M& model, ContextId h, const TokenMap& map,
                                             ItemId target) {
  require_same_spec(model.spec(), map.spec());
  const auto& seq = map.forward(target);
  const auto X = model.spec().X;
  std::vector<NodeGradient> out;
  out.reserve(seq.size());
  std::uint64_t prefix = 0;
  for (std::size_t m = 0; m < seq.size(); ++m) {
    NodeGradient g{m, prefix, softmax(model.node_logits(m, h, prefix))};
    g.values[seq[m]] -= 1.0;
    out.push_back(std::move(g));
    prefix = prefix * X + seq[m];
  }
  return out;
}

/// Dense dL_NTP/dtheta in the model's parameter layout. Rows off the target's
/// teacher-forced path are exactly zero.
template <class M>
ParamTable ntp_grad(const M& model, ContextId h, const TokenMap& map, ItemId target) {
  auto grad = zeros_like(model.params());
  for (const auto& g : ntp_node_gradients(model, h, map, target)) {
    const auto off = model.row_offset(g.position, h, g.prefix);
    for (std::size_t t = 0; t < g.values.size(); ++t) grad[g.position][off + t] += g.values[t];
  }
  return grad;
}

/// Dense dL_FV/dtheta: every item j pushes p(j|h) onto each entry along its
/// path, and the target's path receives -1.
template <class M>
ParamTable fv_mle_grad(const M& model, ContextId h, const TokenMap& map, ItemId target) {
  auto grad = zeros_like(model.params());
  const auto p = full_item_distribution(model, h, map);
  if (target >= p.size()) throw IndexError("target item not in token map");
  const auto X = model.spec().X;
  auto walk = [&](const TokenSequence& seq, double w) {
    std::uint64_t prefix = 0;
    for (std::size_t m = 0; m < seq.size(); ++m) {
      grad[m][model.row_offset(m, h, prefix) + seq[m]] += w;
      prefix = prefix * X + seq[m];
    }
  };
  for (ItemId j = 0; j < map.size(); ++j) walk(map.forward(j), p[j]);
  walk(map.forward(target), -1.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Equivalence check

struct EquivalenceReport {
  ContextId context = 0;
  ItemId item = 0;
  double log_z_path = 0.0;      // sum_m log Z_m along the target's prefixes
  double log_z_sequence = 0.0;  // all X^k sequences of the codebook product
  double log_z_full = 0.0;      // sum over the items of the map
  double loss_ntp = 0.0;
  double loss_fv_mle = 0.0;
  double abs_partition_gap = 0.0;  // |log_z_sequence - log_z_full|
  double abs_path_gap = 0.0;       // |log_z_path - log_z_sequence|
  double abs_loss_gap = 0.0;       // |loss_ntp - loss_fv_mle|
  double max_grad_gap = 0.0;       // max |ntp_grad - fv_mle_grad| over all entries
};

/// Works for strict and probe maps. Under a probe map the partition gap
/// measures double counting of colliding items and missing sequences.
template <class M>
EquivalenceReport check_equivalence(const M& model, ContextId h, const TokenMap& map,
                                    ItemId target) {
  EquivalenceReport r;
  r.context = h;
  r.item = target;
  r.log_z_path = path_log_partition(model, h, map.forward(target).view());
  r.log_z_sequence = sequence_log_partition(model, h);
  r.log_z_full = full_log_partition(model, h, map);
  r.loss_ntp = ntp_loss(model, h, map, target);
  r.loss_fv_mle = fv_mle_loss(model, h, map, target);
  r.abs_partition_gap = std::abs(r.log_z_sequence - r.log_z_full);
  r.abs_path_gap = std::abs(r.log_z_path - r.log_z_sequence);
  r.abs_loss_gap = std::abs(r.loss_ntp - r.loss_fv_mle);
  r.max_grad_gap =
      max_abs_difference(ntp_grad(model, h, map, target), fv_mle_grad(model, h, map, target));
  return r;
}

}  // namespace genrec
