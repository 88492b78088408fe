#pragma once

// Fixed-length decoding: width-B beam search, exhaustive item ranking, and
// one-pass best-first decoding for prefix-independent models.
//
// Ranked lists are ordered by score descending, then by token sequence
// lexicographically ascending (items: by id ascending).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <queue>
#include <set>
#include <span>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrec/errors.hpp"
#include "genrec/logits.hpp"
#include "genrec/vocab.hpp"

namespace genrec {

struct ScoredSequence {
  TokenSequence sequence;
  double score = 0.0;

  bool operator==(const ScoredSequence&) const = default;
};

/// Strict weak order: higher score first, then lexicographically smaller.
inline bool ranks_before(const ScoredSequence& a, const ScoredSequence& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.sequence < b.sequence;
}

/// Width-B beam over exactly k steps scoring prefixes by summed conditional
/// logits. Returns the best K completed sequences. Exhaustive once
/// B >= X^(k-1).
template <LogitModel M>
std::vector<ScoredSequence> beam_search(const M& model, ContextId h, std::size_t beam_width,
                                        std::size_t top_k) {
  if (top_k < 1 || top_k > beam_width)
    throw InvalidArgument("beam_search needs 1 <= K <= B");
  const auto& spec = model.spec();

  struct Hyp {
    ScoredSequence s;
    std::uint64_t prefix = 0;
  };
  std::vector<Hyp> beam{Hyp{}};
  std::vector<Hyp> next;
  for (std::size_t m = 0; m < spec.k; ++m) {
    next.clear();
    next.reserve(beam.size() * spec.X);
    for (const auto& hyp : beam) {
      const auto row = model.node_logits(m, h, hyp.prefix);
      for (Token t = 0; t < spec.X; ++t) {
        Hyp ext = hyp;
        ext.s.sequence.tokens.push_back(t);
        ext.s.score += row[t];
        ext.prefix = hyp.prefix * spec.X + t;
        next.push_back(std::move(ext));
      }
    }
    const auto keep = std::min(beam_width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                      [](const Hyp& a, const Hyp& b) { return ranks_before(a.s, b.s); });
    next.resize(keep);
    std::swap(beam, next);
  }

  std::vector<ScoredSequence> out;
  for (std::size_t i = 0; i < std::min(top_k, beam.size()); ++i) out.push_back(std::move(beam[i].s));
  return out;
}

struct ScoredItem {
  ItemId item = 0;
  double score = 0.0;

  bool operator==(const ScoredItem&) const = default;
};

/// Ranks every item by l(h, i). Ranking by logit is ranking by p(i|h) under
/// the full-vocabulary softmax, since the normalizer is shared.
template <LogitModel M>
std::vector<ScoredItem> exact_topk(const M& model, ContextId h, const TokenMap& map,
                                   std::size_t top_k) {
  require_same_spec(model.spec(), map.spec());
  if (top_k > map.size()) throw InvalidArgument("exact_topk: K exceeds item count");
  std::vector<ScoredItem> all(map.size());
  for (ItemId i = 0; i < map.size(); ++i) all[i] = {i, sequence_score(model, h, map.forward(i).view())};
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(top_k), all.end(),
                    [](const ScoredItem& a, const ScoredItem& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.item < b.item;
                    });
  all.resize(top_k);
  return all;
}

/// Best-first enumeration of joint sequences from per-position sorted logit
/// lists. The joint score separates across positions, so the frontier of
/// rank tuples yields sequences in exact ranking order.
inline std::vector<ScoredSequence> mtp_decode(const ParallelLogitModel& model, ContextId h,
                                              std::size_t top_k) {
  const auto& spec = model.spec();
  if (top_k < 1 || top_k > spec.sequence_space_size())
    throw InvalidArgument("mtp_decode needs 1 <= K <= X^k");

  // order[m][r] = token with rank r at position m.
  std::vector<std::vector<Token>> order(spec.k);
  std::vector<std::span<const double>> rows(spec.k);
  for (std::size_t m = 0; m < spec.k; ++m) {
    rows[m] = model.node_logits(m, h, 0);
    order[m].resize(spec.X);
    for (Token t = 0; t < spec.X; ++t) order[m][t] = t;
    std::stable_sort(order[m].begin(), order[m].end(),
                     [&](Token a, Token b) { return rows[m][a] > rows[m][b]; });
  }

  auto make = [&](const std::vector<std::size_t>& ranks) {
    ScoredSequence s;
    for (std::size_t m = 0; m < spec.k; ++m) {
      const Token t = order[m][ranks[m]];
      s.sequence.tokens.push_back(t);
      s.score += rows[m][t];
    }
    return s;
  };

  struct Entry {
    ScoredSequence s;
    std::vector<std::size_t> ranks;
  };
  auto worse = [](const Entry& a, const Entry& b) { return ranks_before(b.s, a.s); };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> frontier(worse);
  std::set<std::vector<std::size_t>> seen;

  std::vector<std::size_t> start(spec.k, 0);
  frontier.push({make(start), start});
  seen.insert(start);

  std::vector<ScoredSequence> out;
  while (out.size() < top_k && !frontier.empty()) {
    Entry e = frontier.top();
    frontier.pop();
    for (std::size_t m = 0; m < spec.k; ++m) {
      if (e.ranks[m] + 1 >= spec.X) continue;
      auto r = e.ranks;
      ++r[m];
      if (seen.insert(r).second) frontier.push({make(r), r});
    }
    out.push_back(std::move(e.s));
  }
  return out;
}

inline std::vector<ScoredSequence> mtp_decode(const AnyLogitModel& model, ContextId h,
                                              std::size_t top_k) {
  const auto* p = std::get_if<ParallelLogitModel>(&model);
  if (!p) throw FormError("mtp_decode needs a parallel model");
  return mtp_decode(*p, h, top_k);
}

}  // namespace genrec
