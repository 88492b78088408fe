#pragma once

// Item identifiers, k-token sequences and the item <-> sequence map.
//
// A sequence (t_1, ..., t_k) with every t_m in [0, X) is addressed by its
// base-X index with t_1 as the most significant digit, so index order and
// lexicographic token order coincide.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrec/errors.hpp"

namespace genrec {

using Token = std::uint32_t;
using ItemId = std::size_t;

struct CodebookSpec {
  std::size_t k = 1;  // tokens per item
  std::size_t X = 2;  // codebook size per position

  static constexpr std::uint64_t kMaxSequenceSpace = std::uint64_t{1} << 31;

  /// X^k, or nullopt when it exceeds kMaxSequenceSpace.
  std::optional<std::uint64_t> checked_sequence_space() const {
    std::uint64_t n = 1;
    for (std::size_t m = 0; m < k; ++m) {
      n *= X;
      if (n > kMaxSequenceSpace) return std::nullopt;
    }
    return n;
  }

  void validate() const {
    if (k < 1) throw InvalidArgument("codebook spec: k must be >= 1");
    if (X < 2) throw InvalidArgument("codebook spec: X must be >= 2");
    if (!checked_sequence_space())
      throw InvalidArgument("codebook spec: X^k exceeds 2^31");
  }

  std::uint64_t sequence_space_size() const {
    validate();
    return *checked_sequence_space();
  }

  bool operator==(const CodebookSpec&) const = default;
};

/// X^p without the 2^31 cap; callers stay within a validated spec.
inline std::uint64_t int_pow(std::uint64_t base, std::size_t p) {
  std::uint64_t r = 1;
  while (p-- > 0) r *= base;
  return r;
}

struct TokenSequence {
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  Token operator[](std::size_t m) const { return tokens[m]; }
  std::span<const Token> view() const noexcept { return tokens; }

  auto operator<=>(const TokenSequence&) const = default;
  bool operator==(const TokenSequence&) const = default;
};

inline void validate_sequence(const CodebookSpec& spec,
                              std::span<const Token> tokens) {
  if (tokens.size() != spec.k)
    throw MalformedSequence("sequence has length " +
                            std::to_string(tokens.size()) + ", expected " +
                            std::to_string(spec.k));
  for (Token t : tokens)
    if (t >= spec.X)
      throw MalformedSequence("token " + std::to_string(t) +
                              " out of range for X=" + std::to_string(spec.X));
}

/// Base-X index of a (possibly partial) sequence; the empty prefix is 0.
inline std::uint64_t prefix_index(std::size_t X, std::span<const Token> prefix) {
  std::uint64_t idx = 0;
  for (Token t : prefix) idx = idx * X + t;
  return idx;
}

inline std::uint64_t sequence_index(const CodebookSpec& spec,
                                    std::span<const Token> tokens) {
  validate_sequence(spec, tokens);
  return prefix_index(spec.X, tokens);
}

inline TokenSequence sequence_from_index(const CodebookSpec& spec,
                                         std::uint64_t index) {
  TokenSequence s;
  s.tokens.assign(spec.k, 0);
  for (std::size_t m = spec.k; m-- > 0;) {
    s.tokens[m] = static_cast<Token>(index % spec.X);
    index /= spec.X;
  }
  if (index != 0) throw IndexError("sequence index out of range");
  return s;
}

enum class MapMode { strict, probe };

inline std::string to_string(MapMode mode) {
  return mode == MapMode::strict ? "strict" : "probe";
}

inline MapMode map_mode_from_string(const std::string& s) {
  if (s == "strict") return MapMode::strict;
  if (s == "probe") return MapMode::probe;
  throw InvalidArgument("unknown map mode '" + s + "'");
}

using Assignment = std::pair<ItemId, TokenSequence>;

/// The item -> k-token sequence map. Strict maps are bijections onto the full
/// Cartesian product of codebooks; probe maps tolerate collisions and gaps.
/// Immutable once built.
class TokenMap {
 public:
  /// Throws MalformedSequence, CollisionError (strict) or CoverageError
  /// (strict). Item ids must be exactly 0..N-1.
  static TokenMap build(const CodebookSpec& spec,
                        std::span<const Assignment> assignments, MapMode mode) {
    spec.validate();
    if (assignments.empty()) throw InvalidArgument("token map needs >= 1 item");

    const std::size_t n = assignments.size();
    std::vector<const TokenSequence*> by_id(n, nullptr);
    for (const auto& [item, seq] : assignments) {
      if (item >= n)
        throw InvalidArgument("item id " + std::to_string(item) +
                              " outside 0.." + std::to_string(n - 1));
      if (by_id[item] != nullptr)
        throw InvalidArgument("duplicate item id " + std::to_string(item));
      validate_sequence(spec, seq.tokens);
      by_id[item] = &seq;
    }

    TokenMap map;
    map.spec_ = spec;
    map.mode_ = mode;
    map.forward_.reserve(n);
    for (ItemId i = 0; i < n; ++i) {
      map.forward_.push_back(*by_id[i]);
      const auto key = prefix_index(spec.X, by_id[i]->tokens);
      // Items are visited in id order, so the first holder is the lowest id.
      auto [it, inserted] = map.inverse_.try_emplace(key, i);
      if (!inserted && mode == MapMode::strict) throw CollisionError(it->second, i);
    }
    if (mode == MapMode::strict && n != spec.sequence_space_size())
      throw CoverageError("strict map has " + std::to_string(n) +
                          " items but X^k = " +
                          std::to_string(spec.sequence_space_size()));
    return map;
  }

  const CodebookSpec& spec() const noexcept { return spec_; }
  MapMode mode() const noexcept { return mode_; }
  bool is_strict() const noexcept { return mode_ == MapMode::strict; }
  std::size_t size() const noexcept { return forward_.size(); }

  const TokenSequence& forward(ItemId i) const {
    if (i >= forward_.size())
      throw IndexError("item " + std::to_string(i) + " not in token map");
    return forward_[i];
  }

  /// Item owning the sequence; on collisions, the lowest item id.
  std::optional<ItemId> inverse(std::span<const Token> tokens) const {
    validate_sequence(spec_, tokens);
    auto it = inverse_.find(prefix_index(spec_.X, tokens));
    if (it == inverse_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<ItemId> inverse(const TokenSequence& s) const {
    return inverse(s.view());
  }

  std::size_t distinct_sequences() const noexcept { return inverse_.size(); }

 private:
  TokenMap() = default;

  CodebookSpec spec_;
  MapMode mode_ = MapMode::strict;
  std::vector<TokenSequence> forward_;
  std::unordered_map<std::uint64_t, ItemId> inverse_;
};

inline TokenMap build_token_map(const CodebookSpec& spec,
                                std::span<const Assignment> assignments,
                                MapMode mode) {
  return TokenMap::build(spec, assignments, mode);
}

/// Item i -> base-X digits of i. Strict over all X^k sequences.
inline TokenMap identity_token_map(const CodebookSpec& spec) {
  const auto n = spec.sequence_space_size();
  std::vector<Assignment> a;
  a.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) a.emplace_back(i, sequence_from_index(spec, i));
  return TokenMap::build(spec, a, MapMode::strict);
}

/// Assignments in item-id order, for rebuilding a map in another mode.
inline std::vector<Assignment> assignments_of(const TokenMap& map) {
  std::vector<Assignment> a;
  a.reserve(map.size());
  for (ItemId i = 0; i < map.size(); ++i) a.emplace_back(i, map.forward(i));
  return a;
}

struct BijectionReport {
  std::size_t n_items = 0;
  std::size_t n_distinct_sequences = 0;
  std::size_t collision_count = 0;
  std::vector<double> per_position_utilization;
  std::vector<bool> collapse_flags;
  bool is_bijective_onto_product = false;

  bool operator==(const BijectionReport&) const = default;
};

inline constexpr double kDefaultCollapseThreshold = 0.75;

inline BijectionReport audit_bijection(
    const TokenMap& map, double collapse_threshold = kDefaultCollapseThreshold) {
  const auto& spec = map.spec();
  BijectionReport r;
  r.n_items = map.size();
  r.n_distinct_sequences = map.distinct_sequences();
  r.collision_count = r.n_items - r.n_distinct_sequences;

  std::vector<std::vector<bool>> used(spec.k, std::vector<bool>(spec.X, false));
  for (ItemId i = 0; i < map.size(); ++i) {
    const auto& s = map.forward(i);
    for (std::size_t m = 0; m < spec.k; ++m) used[m][s[m]] = true;
  }
  for (std::size_t m = 0; m < spec.k; ++m) {
    const auto distinct = std::count(used[m].begin(), used[m].end(), true);
    const double u = static_cast<double>(distinct) / static_cast<double>(spec.X);
    r.per_position_utilization.push_back(u);
    r.collapse_flags.push_back(u < collapse_threshold);
  }
  r.is_bijective_onto_product =
      r.collision_count == 0 && r.n_distinct_sequences == spec.sequence_space_size();
  return r;
}

inline void to_json(nlohmann::json& j, const TokenMap& map) {
  auto forward = nlohmann::json::array();
  for (ItemId i = 0; i < map.size(); ++i) forward.push_back(map.forward(i).tokens);
  j = nlohmann::json{{"k", map.spec().k},
                     {"X", map.spec().X},
                     {"mode", to_string(map.mode())},
                     {"forward", std::move(forward)}};
}

inline TokenMap token_map_from_json(const nlohmann::json& j) {
  try {
    CodebookSpec spec{j.at("k").get<std::size_t>(), j.at("X").get<std::size_t>()};
    const auto mode = map_mode_from_string(j.at("mode").get<std::string>());
    std::vector<Assignment> a;
    const auto& fwd = j.at("forward");
    a.reserve(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i)
      a.emplace_back(i, TokenSequence{fwd[i].get<std::vector<Token>>()});
    return TokenMap::build(spec, a, mode);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("token map json: ") + e.what());
  }
}

inline void to_json(nlohmann::json& j, const BijectionReport& r) {
  j = nlohmann::json{{"n_items", r.n_items},
                     {"n_distinct_sequences", r.n_distinct_sequences},
                     {"collision_count", r.collision_count},
                     {"per_position_utilization", r.per_position_utilization},
                     {"collapse_flags", r.collapse_flags},
                     {"is_bijective_onto_product", r.is_bijective_onto_product}};
}

}  // namespace genrec
