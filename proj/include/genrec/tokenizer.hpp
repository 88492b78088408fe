#pragma once

// Semantic-ID tokenizers over item embeddings: residual k-means (cascaded),
// product quantization (parallel) and finite scalar quantization.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrec/errors.hpp"
#include "genrec/random.hpp"
#include "genrec/vocab.hpp"

namespace genrec {

/// Row-major n_items x dim matrix.
struct ItemEmbeddings {
  std::size_t n_items = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  ItemEmbeddings() = default;
  ItemEmbeddings(std::size_t n, std::size_t d, std::vector<double> v)
      : n_items(n), dim(d), values(std::move(v)) {
    validate();
  }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * dim, dim);
  }

  void validate() const {
    if (n_items < 1) throw InvalidArgument("embeddings: need at least one item");
    if (dim < 1) throw InvalidArgument("embeddings: dim must be >= 1");
    if (values.size() != n_items * dim)
      throw InvalidArgument("embeddings: value count does not match shape");
    for (double v : values)
      if (!std::isfinite(v)) throw InvalidArgument("embeddings: non-finite entry");
  }

  bool operator==(const ItemEmbeddings&) const = default;
};

/// Standard normal entries, deterministic per seed.
inline ItemEmbeddings synth_embeddings(std::size_t n_items, std::size_t dim,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n_items * dim);
  for (auto& x : v) x = normal(rng);
  return ItemEmbeddings(n_items, dim, std::move(v));
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

/// Index of the nearest row of `centroids` (n_centroids x dim); ties go to the
/// lowest index.
inline std::size_t nearest_centroid(std::span<const double> point,
                                    std::span<const double> centroids,
                                    std::size_t dim, double* best_dist = nullptr) {
  const std::size_t n = centroids.size() / dim;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double d = squared_distance(point, centroids.subspan(j * dim, dim));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best_dist) *best_dist = best_d;
  return best;
}

inline std::size_t count_distinct_rows(std::span<const double> points, std::size_t dim) {
  std::set<std::vector<double>> rows;
  for (std::size_t i = 0; i < points.size() / dim; ++i) {
    auto r = points.subspan(i * dim, dim);
    rows.emplace(r.begin(), r.end());
  }
  return rows.size();
}

}  // namespace detail

struct KMeansOptions {
  std::size_t max_iters = 50;
  std::uint64_t seed = 0;
  // Level-0 fits reject inputs with fewer distinct points than clusters;
  // residual levels may legitimately collapse onto duplicate centroids.
  bool require_distinct = true;
};

/// k-means++ seeding then Lloyd iterations until the assignment is a fixpoint
/// or max_iters is reached. Empty clusters are re-seeded to the point farthest
/// from its current centroid. Returns n_clusters x dim centroids.
inline std::vector<double> kmeans(std::span<const double> points, std::size_t dim,
                                  std::size_t n_clusters, const KMeansOptions& opt) {
  const std::size_t n = points.size() / dim;
  if (n < n_clusters)
    throw DegenerateInput("k-means: " + std::to_string(n) + " points for " +
                          std::to_string(n_clusters) + " clusters");
  if (opt.require_distinct && detail::count_distinct_rows(points, dim) < n_clusters)
    throw DegenerateInput("k-means: fewer distinct points than clusters");
  if (opt.max_iters < 1) throw InvalidArgument("k-means: max_iters must be >= 1");

  auto point = [&](std::size_t i) { return points.subspan(i * dim, dim); };

  std::mt19937_64 rng(opt.seed);
  std::vector<double> centroids(n_clusters * dim);
  auto set_centroid = [&](std::size_t c, std::span<const double> p) {
    std::copy(p.begin(), p.end(), centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
  };

  const std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  set_centroid(0, point(first));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = detail::squared_distance(point(i), point(first));
  for (std::size_t c = 1; c < n_clusters; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      pick = n;
      std::size_t last_positive = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        last_positive = i;
        acc += d2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = last_positive;
    }
    set_centroid(c, point(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], detail::squared_distance(point(i), point(pick)));
  }

  std::vector<std::size_t> assign(n), prev;
  std::vector<double> dist(n);
  for (std::size_t iter = 0; iter < opt.max_iters; ++iter) {
    for (std::size_t i = 0; i < n; ++i)
      assign[i] = detail::nearest_centroid(point(i), centroids, dim, &dist[i]);
    if (assign == prev) break;
    prev = assign;

    std::vector<double> sums(n_clusters * dim, 0.0);
    std::vector<std::size_t> counts(n_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      auto p = point(i);
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i] * dim + d] += p[d];
    }
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d)
        centroids[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (counts[c] != 0) continue;
      const auto far = static_cast<std::size_t>(
          std::max_element(dist.begin(), dist.end()) - dist.begin());
      set_centroid(c, point(far));
      dist[far] = 0.0;
    }
  }
  return centroids;
}

// ---------------------------------------------------------------------------
// Residual k-means (cascaded tokenization)

struct RqKmeansModel {
  CodebookSpec spec;
  std::size_t dim = 0;
  std::vector<std::vector<double>> codebooks;  // k tables, each X x dim
  std::vector<double> level_sse;               // residual SSE after each level

  std::span<const double> centroid(std::size_t level, std::size_t j) const {
    return std::span<const double>(codebooks[level]).subspan(j * dim, dim);
  }
};

inline std::vector<TokenSequence> encode_rq(const RqKmeansModel& model,
                                            const ItemEmbeddings& emb) {
  if (emb.dim != model.dim) throw InvalidArgument("encode_rq: dimension mismatch");
  std::vector<TokenSequence> out(emb.n_items);
  std::vector<double> residual(model.dim);
  for (std::size_t i = 0; i < emb.n_items; ++i) {
    auto r = emb.row(i);
    residual.assign(r.begin(), r.end());
    out[i].tokens.reserve(model.spec.k);
    for (std::size_t m = 0; m < model.spec.k; ++m) {
      const auto j = detail::nearest_centroid(residual, model.codebooks[m], model.dim);
      out[i].tokens.push_back(static_cast<Token>(j));
      auto c = model.centroid(m, j);
      for (std::size_t d = 0; d < model.dim; ++d) residual[d] -= c[d];
    }
  }
  return out;
}

/// Level m is fit on the residuals left after levels < m.
inline RqKmeansModel fit_rq_kmeans(const ItemEmbeddings& emb, const CodebookSpec& spec,
                                   std::size_t max_iters = 50, std::uint64_t seed = 0) {
  spec.validate();
  emb.validate();
  if (emb.n_items < spec.X)
    throw DegenerateInput("fit_rq_kmeans: n_items < X");

  RqKmeansModel model{spec, emb.dim, {}, {}};
  std::vector<double> residual = emb.values;
  for (std::size_t m = 0; m < spec.k; ++m) {
    model.codebooks.push_back(kmeans(residual, emb.dim, spec.X,
                                     {max_iters, derive_seed(seed, m), /*require_distinct=*/m == 0}));
    double sse = 0.0;
    for (std::size_t i = 0; i < emb.n_items; ++i) {
      std::span<double> r(residual.data() + i * emb.dim, emb.dim);
      const auto j = detail::nearest_centroid(r, model.codebooks[m], emb.dim);
      auto c = model.centroid(m, j);
      for (std::size_t d = 0; d < emb.dim; ++d) {
        r[d] -= c[d];
        sse += r[d] * r[d];
      }
    }
    model.level_sse.push_back(sse);
  }
  return model;
}

/// Sum of squared distances between each embedding and its reconstruction
/// from the first `levels` codebooks.
inline double rq_reconstruction_error(const RqKmeansModel& model, const ItemEmbeddings& emb,
                                      std::size_t levels) {
  const auto codes = encode_rq(model, emb);
  double sse = 0.0;
  for (std::size_t i = 0; i < emb.n_items; ++i) {
    auto x = emb.row(i);
    for (std::size_t d = 0; d < model.dim; ++d) {
      double recon = 0.0;
      for (std::size_t m = 0; m < levels; ++m) recon += model.centroid(m, codes[i][m])[d];
      sse += (x[d] - recon) * (x[d] - recon);
    }
  }
  return sse;
}

// ---------------------------------------------------------------------------
// Product quantization (parallel tokenization)

struct PqModel {
  CodebookSpec spec;
  std::vector<std::size_t> subspace_dims;
  std::vector<std::vector<double>> codebooks;  // k tables, X x subspace_dims[m]

  std::size_t dim() const {
    std::size_t d = 0;
    for (auto s : subspace_dims) d += s;
    return d;
  }
  std::size_t subspace_offset(std::size_t m) const {
    std::size_t off = 0;
    for (std::size_t j = 0; j < m; ++j) off += subspace_dims[j];
    return off;
  }
};

/// Contiguous split of `dim` into k parts whose widths differ by at most one.
inline std::vector<std::size_t> split_subspaces(std::size_t dim, std::size_t k) {
  if (k == 0 || dim < k)
    throw SubspaceSplitError("cannot split " + std::to_string(dim) +
                             " dimensions into " + std::to_string(k) + " subspaces");
  std::vector<std::size_t> dims(k, dim / k);
  for (std::size_t m = 0; m < dim % k; ++m) ++dims[m];
  return dims;
}

namespace detail {
inline std::vector<double> subspace_points(const ItemEmbeddings& emb, std::size_t offset,
                                           std::size_t width) {
  std::vector<double> out;
  out.reserve(emb.n_items * width);
  for (std::size_t i = 0; i < emb.n_items; ++i) {
    auto r = emb.row(i).subspan(offset, width);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}
}  // namespace detail

inline std::vector<TokenSequence> encode_pq(const PqModel& model, const ItemEmbeddings& emb) {
  if (emb.dim != model.dim()) throw InvalidArgument("encode_pq: dimension mismatch");
  std::vector<TokenSequence> out(emb.n_items);
  for (std::size_t i = 0; i < emb.n_items; ++i) {
    out[i].tokens.reserve(model.spec.k);
    for (std::size_t m = 0; m < model.spec.k; ++m) {
      auto sub = emb.row(i).subspan(model.subspace_offset(m), model.subspace_dims[m]);
      out[i].tokens.push_back(static_cast<Token>(
          detail::nearest_centroid(sub, model.codebooks[m], model.subspace_dims[m])));
    }
  }
  return out;
}

/// Independent k-means per contiguous subspace. Subspaces may hold duplicate
/// centroids when a subspace has fewer than X distinct values.
inline PqModel fit_pq(const ItemEmbeddings& emb, const CodebookSpec& spec,
                      std::size_t max_iters = 50, std::uint64_t seed = 0) {
  spec.validate();
  emb.validate();
  PqModel model{spec, split_subspaces(emb.dim, spec.k), {}};
  for (std::size_t m = 0; m < spec.k; ++m) {
    const auto pts =
        detail::subspace_points(emb, model.subspace_offset(m), model.subspace_dims[m]);
    model.codebooks.push_back(
        kmeans(pts, model.subspace_dims[m], spec.X, {max_iters, derive_seed(seed, m), false}));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Finite scalar quantization

struct FsqModel {
  std::vector<std::size_t> levels;               // per kept dimension
  std::vector<std::pair<double, double>> bounds;  // (low, high) per kept dimension

  std::size_t k() const noexcept { return levels.size(); }

  /// Uniform-X spec covering every level count.
  CodebookSpec spec() const {
    std::size_t x = 2;
    for (auto l : levels) x = std::max(x, l);
    return CodebookSpec{levels.size(), x};
  }

  std::uint64_t grid_size() const {
    std::uint64_t g = 1;
    for (auto l : levels) g *= l;
    return g;
  }
};

/// Bounds taken from the per-dimension range of the first k dimensions.
inline FsqModel fit_fsq(const ItemEmbeddings& emb, std::vector<std::size_t> levels) {
  emb.validate();
  if (levels.empty()) throw InvalidArgument("fit_fsq: need at least one level");
  if (emb.dim < levels.size()) throw InvalidArgument("fit_fsq: dim < k");
  FsqModel model{std::move(levels), {}};
  for (std::size_t m = 0; m < model.k(); ++m) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < emb.n_items; ++i) {
      lo = std::min(lo, emb.row(i)[m]);
      hi = std::max(hi, emb.row(i)[m]);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    model.bounds.emplace_back(lo, hi);
  }
  return model;
}

inline Token fsq_quantize(double x, std::size_t levels, std::pair<double, double> bounds) {
  const auto [lo, hi] = bounds;
  const double top = static_cast<double>(levels - 1);
  const double scaled = (x - lo) / (hi - lo) * top;
  const double q = std::clamp(std::floor(scaled + 0.5), 0.0, top);
  return static_cast<Token>(q);
}

inline std::vector<TokenSequence> encode_fsq(const FsqModel& model, const ItemEmbeddings& emb) {
  if (emb.dim < model.k()) throw InvalidArgument("encode_fsq: embedding has < k dims");
  std::vector<TokenSequence> out(emb.n_items);
  for (std::size_t i = 0; i < emb.n_items; ++i)
    for (std::size_t m = 0; m < model.k(); ++m)
      out[i].tokens.push_back(fsq_quantize(emb.row(i)[m], model.levels[m], model.bounds[m]));
  return out;
}

/// Grid-cell centre for a token sequence (k-dimensional).
inline std::vector<double> decode_fsq(const FsqModel& model, const TokenSequence& s) {
  std::vector<double> out(model.k());
  for (std::size_t m = 0; m < model.k(); ++m) {
    const auto [lo, hi] = model.bounds[m];
    if (model.levels[m] < 2) {
      out[m] = lo;
      continue;
    }
    out[m] = lo + static_cast<double>(s[m]) / static_cast<double>(model.levels[m] - 1) * (hi - lo);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const RqKmeansModel& m) {
  j = {{"scheme", "rq_kmeans"}, {"k", m.spec.k},         {"X", m.spec.X},
       {"dim", m.dim},          {"codebooks", m.codebooks}, {"level_sse", m.level_sse}};
}

inline void to_json(nlohmann::json& j, const PqModel& m) {
  j = {{"scheme", "pq"},
       {"k", m.spec.k},
       {"X", m.spec.X},
       {"subspace_dims", m.subspace_dims},
       {"codebooks", m.codebooks}};
}

inline void to_json(nlohmann::json& j, const FsqModel& m) {
  auto b = nlohmann::json::array();
  for (const auto& [lo, hi] : m.bounds) b.push_back({lo, hi});
  j = {{"scheme", "fsq"}, {"levels", m.levels}, {"bounds", std::move(b)}};
}

inline RqKmeansModel rq_model_from_json(const nlohmann::json& j) {
  RqKmeansModel m;
  m.spec = {j.at("k").get<std::size_t>(), j.at("X").get<std::size_t>()};
  m.dim = j.at("dim").get<std::size_t>();
  m.codebooks = j.at("codebooks").get<std::vector<std::vector<double>>>();
  m.level_sse = j.value("level_sse", std::vector<double>{});
  return m;
}

inline PqModel pq_model_from_json(const nlohmann::json& j) {
  PqModel m;
  m.spec = {j.at("k").get<std::size_t>(), j.at("X").get<std::size_t>()};
  m.subspace_dims = j.at("subspace_dims").get<std::vector<std::size_t>>();
  m.codebooks = j.at("codebooks").get<std::vector<std::vector<double>>>();
  return m;
}

inline FsqModel fsq_model_from_json(const nlohmann::json& j) {
  FsqModel m;
  m.levels = j.at("levels").get<std::vector<std::size_t>>();
  for (const auto& b : j.at("bounds")) m.bounds.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
  return m;
}

// CSV: header `dim0,...,dim{D-1}` then one row per item. Values are written
// in shortest round-trip form.

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline void write_embeddings_csv(std::ostream& os, const ItemEmbeddings& emb) {
  for (std::size_t d = 0; d < emb.dim; ++d) os << (d ? "," : "") << "dim" << d;
  os << '\n';
  for (std::size_t i = 0; i < emb.n_items; ++i) {
    auto r = emb.row(i);
    for (std::size_t d = 0; d < emb.dim; ++d) os << (d ? "," : "") << format_double(r[d]);
    os << '\n';
  }
}

inline ItemEmbeddings read_embeddings_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("embeddings csv: missing header");
  std::size_t dim = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      if (cell != "dim" + std::to_string(dim))
        throw FormatError("embeddings csv: bad header cell '" + cell + "'");
      ++dim;
    }
  }
  std::vector<double> values;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size())
        throw FormatError("embeddings csv: bad number '" + cell + "'");
      values.push_back(v);
      ++cols;
    }
    if (cols != dim) throw FormatError("embeddings csv: ragged row " + std::to_string(n));
    ++n;
  }
  try {
    return ItemEmbeddings(n, dim, std::move(values));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("embeddings csv: ") + e.what());
  }
}

// Binary: 16-byte header (8-byte magic, uint32 n_items, uint32 dim), then
// n_items * dim little-endian IEEE-754 doubles, row-major.

inline constexpr std::array<char, 8> kEmbeddingMagic{'G', 'R', 'E', 'M', 'B', '0', '0', '1'};

namespace detail {
inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xff));
}
inline std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("embeddings bin: truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}
}  // namespace detail

inline void write_embeddings_bin(std::ostream& os, const ItemEmbeddings& emb) {
  os.write(kEmbeddingMagic.data(), kEmbeddingMagic.size());
  detail::put_le(os, emb.n_items, 4);
  detail::put_le(os, emb.dim, 4);
  for (double v : emb.values) detail::put_le(os, std::bit_cast<std::uint64_t>(v), 8);
}

inline ItemEmbeddings read_embeddings_bin(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kEmbeddingMagic)
    throw FormatError("embeddings bin: bad magic");
  const auto n = static_cast<std::size_t>(detail::get_le(is, 4));
  const auto dim = static_cast<std::size_t>(detail::get_le(is, 4));
  std::vector<double> values(n * dim);
  for (auto& v : values) v = std::bit_cast<double>(detail::get_le(is, 8));
  try {
    return ItemEmbeddings(n, dim, std::move(values));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("embeddings bin: ") + e.what());
  }
}

/// Dispatches on extension: `.csv` or anything else as binary.
inline ItemEmbeddings load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embeddings file '" + path + "'");
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return read_embeddings_csv(in);
  return read_embeddings_bin(in);
}

}  // namespace genrec
