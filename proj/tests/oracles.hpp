#pragma once

// Brute-force reference computations used to check the library. They read
// the model only through logit(m, h, prefix, t) and recompute everything else
// directly: plain exp sums in long double, explicit enumeration, central
// finite differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "genrec/genrec.hpp"

namespace oracle {

using genrec::ContextId;
using genrec::Token;

/// All X^k sequences in lexicographic order.
inline std::vector<std::vector<Token>> all_sequences(std::size_t k, std::size_t X) {
  std::vector<std::vector<Token>> out{{}};
  for (std::size_t m = 0; m < k; ++m) {
    std::vector<std::vector<Token>> next;
    for (const auto& s : out)
      for (Token t = 0; t < X; ++t) {
        auto e = s;
        e.push_back(t);
        next.push_back(std::move(e));
      }
    out = std::move(next);
  }
  return out;
}

inline std::uint64_t prefix_of(const std::vector<Token>& seq, std::size_t len, std::size_t X) {
  std::uint64_t p = 0;
  for (std::size_t m = 0; m < len; ++m) p = p * X + seq[m];
  return p;
}

template <class M>
double item_logit(const M& model, ContextId h, const std::vector<Token>& seq) {
  double s = 0.0;
  for (std::size_t m = 0; m < seq.size(); ++m)
    s += model.logit(m, h, prefix_of(seq, m, model.spec().X), seq[m]);
  return s;
}

/// Z_m(h, prefix) as a plain sum of exponentials.
template <class M>
long double node_partition(const M& model, std::size_t m, ContextId h, std::uint64_t prefix) {
  long double z = 0.0L;
  for (Token t = 0; t < model.spec().X; ++t) z += std::exp((long double)model.logit(m, h, prefix, t));
  return z;
}

template <class M>
double ntp_loss(const M& model, ContextId h, const std::vector<Token>& seq) {
  long double loss = 0.0L;
  for (std::size_t m = 0; m < seq.size(); ++m) {
    const auto prefix = prefix_of(seq, m, model.spec().X);
    const long double z = node_partition(model, m, h, prefix);
    loss -= std::log(std::exp((long double)model.logit(m, h, prefix, seq[m])) / z);
  }
  return static_cast<double>(loss);
}

/// log of the sum over the given item sequences of exp(l(h, i)).
template <class M>
double log_z_items(const M& model, ContextId h, const std::vector<std::vector<Token>>& items) {
  long double z = 0.0L;
  for (const auto& s : items) z += std::exp((long double)item_logit(model, h, s));
  return static_cast<double>(std::log(z));
}

template <class M>
double fv_mle_loss(const M& model, ContextId h, const std::vector<std::vector<Token>>& items,
                   std::size_t target) {
  return log_z_items(model, h, items) - item_logit(model, h, items[target]);
}

/// log prod_m Z_m along one sequence's prefixes.
template <class M>
double path_log_partition(const M& model, ContextId h, const std::vector<Token>& seq) {
  long double prod = 1.0L;
  for (std::size_t m = 0; m < seq.size(); ++m)
    prod *= node_partition(model, m, h, prefix_of(seq, m, model.spec().X));
  return static_cast<double>(std::log(prod));
}

/// Central difference of f with respect to params()[m][j].
template <class M, class F>
double central_difference(M& model, std::size_t m, std::size_t j, double step, F&& f) {
  auto& p = model.params()[m][j];
  const double saved = p;
  p = saved + step;
  const double up = f(model);
  p = saved - step;
  const double down = f(model);
  p = saved;
  return (up - down) / (2.0 * step);
}

struct Ranked {
  std::vector<Token> tokens;
  double score;
};

/// Every sequence scored and sorted by (score desc, lexicographic asc).
template <class M>
std::vector<Ranked> full_ranking(const M& model, ContextId h) {
  std::vector<Ranked> out;
  for (auto& s : all_sequences(model.spec().k, model.spec().X)) {
    const double sc = item_logit(model, h, s);
    out.push_back({std::move(s), sc});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  return out;
}

/// Deterministic small-integer and normal draws for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}
  std::size_t pick(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  template <class T>
  const T& choose(const std::vector<T>& v) { return v[pick(0, v.size() - 1)]; }
  double normal(double sigma = 1.0) { return std::normal_distribution<double>(0.0, sigma)(rng_); }
  std::uint64_t seed() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

}  // namespace oracle
