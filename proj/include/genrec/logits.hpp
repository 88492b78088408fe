#pragma once

// Tabular token-level conditional logits l(t_m | h, t_1..t_{m-1}).
//
// Position m (0-based) of a model is addressed by node = (context, prefix),
// where prefix is the base-X index of the m preceding tokens. Each node owns
// X logits. Parameter storage per position is context-major, then prefix,
// then token:
//
//   cascaded: params[m][(h * X^m + prefix) * X + t]   (C * X^m * X entries)
//   parallel: params[m][h * X + t]                    (C * X entries)

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrec/errors.hpp"
#include "genrec/vocab.hpp"

namespace genrec {

using ContextId = std::size_t;

/// One flat table per token position; gradients share the model's layout.
using ParamTable = std::vector<std::vector<double>>;

enum class LogitForm { cascaded, parallel };

inline std::string to_string(LogitForm f) {
  return f == LogitForm::cascaded ? "cascaded" : "parallel";
}

inline LogitForm logit_form_from_string(const std::string& s) {
  if (s == "cascaded") return LogitForm::cascaded;
  if (s == "parallel") return LogitForm::parallel;
  throw InvalidArgument("unknown model form '" + s + "'");
}

/// Anything exposing per-node logit rows. `logit` reads one entry and
/// `node_logits` reads a whole row of X; the distinction lets instrumented
/// wrappers count touched entries.
template <class M>
concept LogitModel = requires(const M& m, std::size_t pos, ContextId h, std::uint64_t prefix,
                              Token t) {
  { m.spec() } -> std::convertible_to<CodebookSpec>;
  { m.contexts() } -> std::convertible_to<std::size_t>;
  { m.form() } -> std::convertible_to<LogitForm>;
  { m.node_logits(pos, h, prefix) } -> std::convertible_to<std::span<const double>>;
  { m.logit(pos, h, prefix, t) } -> std::convertible_to<double>;
};

namespace detail {

template <LogitForm Form>
class TabularLogits {
 public:
  TabularLogits(CodebookSpec spec, std::size_t contexts) : spec_(spec), contexts_(contexts) {
    spec_.validate();
    if (contexts_ < 1) throw InvalidArgument("logit model: need at least one context");
    params_.resize(spec_.k);
    for (std::size_t m = 0; m < spec_.k; ++m) params_[m].assign(nodes_at(m) * spec_.X, 0.0);
  }

  const CodebookSpec& spec() const noexcept { return spec_; }
  std::size_t contexts() const noexcept { return contexts_; }
  static constexpr LogitForm form() noexcept { return Form; }

  /// Number of distinct logit rows at position m.
  std::size_t nodes_at(std::size_t m) const {
    if constexpr (Form == LogitForm::cascaded)
      return contexts_ * static_cast<std::size_t>(int_pow(spec_.X, m));
    else
      return contexts_;
  }

  std::size_t row_offset(std::size_t m, ContextId h, std::uint64_t prefix) const {
    if (m >= spec_.k) throw IndexError("position " + std::to_string(m) + " >= k");
    if (h >= contexts_) throw IndexError("context " + std::to_string(h) + " out of range");
    if constexpr (Form == LogitForm::cascaded) {
      const auto width = int_pow(spec_.X, m);
      if (prefix >= width) throw IndexError("prefix index out of range");
      return static_cast<std::size_t>((h * width + prefix) * spec_.X);
    } else {
      return h * spec_.X;
    }
  }

  std::span<const double> node_logits(std::size_t m, ContextId h, std::uint64_t prefix) const {
    return std::span<const double>(params_[m]).subspan(row_offset(m, h, prefix), spec_.X);
  }
  std::span<double> node_logits(std::size_t m, ContextId h, std::uint64_t prefix) {
    return std::span<double>(params_[m]).subspan(row_offset(m, h, prefix), spec_.X);
  }

  double logit(std::size_t m, ContextId h, std::uint64_t prefix, Token t) const {
    if (t >= spec_.X) throw IndexError("token " + std::to_string(t) + " >= X");
    return params_[m][row_offset(m, h, prefix) + t];
  }

  const ParamTable& params() const noexcept { return params_; }
  ParamTable& params() noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  /// i.i.d. normal(0, sigma) in storage order.
  void randomize(double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& table : params_)
      for (auto& v : table) v = normal(rng);
  }

  bool operator==(const TabularLogits&) const = default;

 private:
  CodebookSpec spec_;
  std::size_t contexts_;
  ParamTable params_;
};

}  // namespace detail

/// Token m conditions on the full prefix: one row per (context, prefix).
using CascadedLogitModel = detail::TabularLogits<LogitForm::cascaded>;

/// Token m ignores the prefix: one row per context at each position.
using ParallelLogitModel = detail::TabularLogits<LogitForm::parallel>;

using AnyLogitModel = std::variant<CascadedLogitModel, ParallelLogitModel>;

/// Entries a cascaded model of this shape would hold: C * X * (X^k - 1)/(X - 1).
inline std::uint64_t cascaded_parameter_count(const CodebookSpec& spec, std::size_t contexts) {
  std::uint64_t rows = 0;
  for (std::size_t m = 0; m < spec.k; ++m) rows += int_pow(spec.X, m);
  return rows * spec.X * contexts;
}

/// Broadcasts each parallel row across every prefix at its position.
inline CascadedLogitModel embed_as_cascaded(const ParallelLogitModel& p) {
  CascadedLogitModel c(p.spec(), p.contexts());
  const auto X = p.spec().X;
  for (std::size_t m = 0; m < p.spec().k; ++m)
    for (ContextId h = 0; h < p.contexts(); ++h)
      for (std::uint64_t prefix = 0; prefix < int_pow(X, m); ++prefix) {
        auto src = p.node_logits(m, h, 0);
        auto dst = c.node_logits(m, h, prefix);
        std::copy(src.begin(), src.end(), dst.begin());
      }
  return c;
}

/// l(t | h, prefix), the prefix length selecting the position. Parallel models
/// validate and then ignore the prefix.
template <LogitModel M>
double token_logit(const M& model, ContextId h, std::span<const Token> prefix, Token t) {
  const auto& spec = model.spec();
  if (prefix.size() >= spec.k)
    throw IndexError("prefix of length " + std::to_string(prefix.size()) +
                     " leaves no position for k=" + std::to_string(spec.k));
  for (Token p : prefix)
    if (p >= spec.X) throw IndexError("prefix token out of range");
  return model.logit(prefix.size(), h, prefix_index(spec.X, prefix), t);
}

/// Sum of conditional logits along a full sequence, accumulated left to right
/// from 0.0. Every scoring path in the library uses this order so scores of
/// the same sequence are bit-identical.
template <LogitModel M>
double sequence_score(const M& model, ContextId h, std::span<const Token> tokens) {
  const auto X = model.spec().X;
  double score = 0.0;
  std::uint64_t prefix = 0;
  for (std::size_t m = 0; m < tokens.size(); ++m) {
    score += model.logit(m, h, prefix, tokens[m]);
    prefix = prefix * X + tokens[m];
  }
  return score;
}

inline void require_same_spec(const CodebookSpec& model, const CodebookSpec& map) {
  if (!(model == map)) throw InvalidArgument("model and token map disagree on (k, X)");
}

/// Item logit l(h, i): sum of token logits along the item's sequence.
template <LogitModel M>
double item_logit(const M& model, ContextId h, const TokenMap& map, ItemId i) {
  require_same_spec(model.spec(), map.spec());
  return sequence_score(model, h, map.forward(i).view());
}

// Checkpoint JSON: {"form", "k", "X", "C", "params": [[position 0], ...]}.

namespace detail {
template <LogitForm Form>
void to_json(nlohmann::json& j, const TabularLogits<Form>& m) {
  j = nlohmann::json{{"form", to_string(Form)},
                     {"k", m.spec().k},
                     {"X", m.spec().X},
                     {"C", m.contexts()},
                     {"params", m.params()}};
}
}  // namespace detail

inline AnyLogitModel logit_model_from_json(const nlohmann::json& j) {
  try {
    const CodebookSpec spec{j.at("k").get<std::size_t>(), j.at("X").get<std::size_t>()};
    const auto C = j.at("C").get<std::size_t>();
    auto params = j.at("params").get<ParamTable>();
    auto fill = [&](auto model) {
      if (params.size() != model.params().size())
        throw FormatError("checkpoint: wrong number of position tables");
      for (std::size_t m = 0; m < params.size(); ++m)
        if (params[m].size() != model.params()[m].size())
          throw FormatError("checkpoint: position " + std::to_string(m) + " has wrong size");
      model.params() = std::move(params);
      return AnyLogitModel(std::move(model));
    };
    switch (logit_form_from_string(j.at("form").get<std::string>())) {
      case LogitForm::cascaded:
        return fill(CascadedLogitModel(spec, C));
      case LogitForm::parallel:
        return fill(ParallelLogitModel(spec, C));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint json: ") + e.what());
  }
  throw FormatError("checkpoint json: unreachable form");
}

inline nlohmann::json checkpoint_json(const AnyLogitModel& m) {
  return std::visit([](const auto& model) { return nlohmann::json(model); }, m);
}

}  // namespace genrec
