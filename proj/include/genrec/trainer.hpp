#pragma once

// Synthetic ground truth p*(i|h), session sampling, and per-sample SGD on the
// teacher-forced NTP loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/errors.hpp"
#include "genrec/logits.hpp"
#include "genrec/losses.hpp"
#include "genrec/random.hpp"
#include "genrec/vocab.hpp"

namespace genrec {

struct SyntheticWorld {
  std::size_t contexts = 0;
  std::size_t items = 0;
  std::vector<double> p_star;  // contexts x items, row-stochastic
  std::uint64_t seed = 0;

  std::span<const double> row(ContextId h) const {
    return std::span<const double>(p_star).subspan(h * items, items);
  }
};

/// Rows drawn from a symmetric Dirichlet(alpha) via normalized Gamma draws.
/// `uniform` selects the alpha -> infinity limit exactly.
inline SyntheticWorld synth_world(std::size_t contexts, std::size_t items, double alpha,
                                  std::uint64_t seed, bool uniform = false) {
  if (contexts < 1 || items < 1) throw InvalidArgument("synth_world: C and N must be >= 1");
  if (!uniform && !(alpha > 0.0)) throw InvalidArgument("synth_world: alpha must be > 0");
  SyntheticWorld w{contexts, items, std::vector<double>(contexts * items), seed};
  if (uniform) {
    std::fill(w.p_star.begin(), w.p_star.end(), 1.0 / static_cast<double>(items));
    return w;
  }
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (ContextId h = 0; h < contexts; ++h) {
    double* row = w.p_star.data() + h * items;
    double total = 0.0;
    for (std::size_t i = 0; i < items; ++i) total += (row[i] = gamma(rng));
    if (total <= 0.0) {
      // Every draw underflowed; put the mass on one item.
      std::fill(row, row + items, 0.0);
      row[std::uniform_int_distribution<std::size_t>(0, items - 1)(rng)] = 1.0;
      continue;
    }
    for (std::size_t i = 0; i < items; ++i) row[i] /= total;
  }
  return w;
}

struct Sample {
  ContextId context = 0;
  ItemId item = 0;

  bool operator==(const Sample&) const = default;
};

using Dataset = std::vector<Sample>;

/// Contexts uniform over C; items from p*(.|h).
inline Dataset sample_dataset(const SyntheticWorld& world, std::size_t n_samples,
                              std::uint64_t seed) {
  if (n_samples < 1) throw InvalidArgument("sample_dataset: n_samples must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<ContextId> pick_context(0, world.contexts - 1);
  std::vector<std::discrete_distribution<ItemId>> pick_item;
  for (ContextId h = 0; h < world.contexts; ++h) {
    auto r = world.row(h);
    pick_item.emplace_back(r.begin(), r.end());
  }
  Dataset data(n_samples);
  for (auto& s : data) {
    s.context = pick_context(rng);
    s.item = pick_item[s.context](rng);
  }
  return data;
}

/// (1/C) sum_h KL(p*(.|h) || p_model(.|h)), with p_model the full-vocabulary
/// softmax over item logits and 0 log 0 = 0.
template <LogitModel M>
double eval_kl(const M& model, const TokenMap& map, const SyntheticWorld& world) {
  if (world.items != map.size()) throw InvalidArgument("eval_kl: world and map disagree on N");
  if (world.contexts != model.contexts())
    throw InvalidArgument("eval_kl: world and model disagree on C");
  double total = 0.0;
  for (ContextId h = 0; h < world.contexts; ++h) {
    const auto logits = all_item_logits(model, h, map);
    const double lz = log_sum_exp(logits);
    const auto p = world.row(h);
    double kl = 0.0;
    for (ItemId i = 0; i < map.size(); ++i)
      if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - (logits[i] - lz));
    total += kl;
  }
  return total / static_cast<double>(world.contexts);
}

struct EpochStats {
  std::size_t epoch = 0;  // 0 = before any update
  double mean_ntp_loss = 0.0;
  double mean_fv_mle_loss = 0.0;
  double kl = 0.0;  // NaN when no world was supplied
  double max_step_loss_gap = 0.0;  // max |ntp - fv_mle| over the epoch's samples

  bool operator==(const EpochStats&) const = default;
};

struct TrainingTrace {
  std::vector<EpochStats> epochs;
};

struct SgdOptions {
  double lr = 0.1;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
};

/// Plain per-sample SGD, theta <- theta - lr * ntp_grad, with the sample
/// order reshuffled every epoch. Each sample's NTP and full-vocabulary losses
/// are recorded at the parameters the update is computed from. Epoch 0 holds
/// the losses of the initial parameters without updating them.
template <class M>
TrainingTrace train_sgd(M& model, const TokenMap& map, const Dataset& data,
                        const SgdOptions& opt, const SyntheticWorld* world = nullptr) {
  if (!map.is_strict()) throw InvalidArgument("train_sgd needs a strict token map");
  if (!(opt.lr >= 0.0)) throw InvalidArgument("train_sgd: lr must be >= 0");
  require_same_spec(model.spec(), map.spec());
  for (const auto& s : data)
    if (s.context >= model.contexts() || s.item >= map.size())
      throw InvalidArgument("train_sgd: sample outside model or map");

  const auto kl = [&] {
    return world ? eval_kl(model, map, *world) : std::numeric_limits<double>::quiet_NaN();
  };
  const double n = static_cast<double>(data.size());

  TrainingTrace trace;
  {
    EpochStats s{0, 0.0, 0.0, kl(), 0.0};
    for (const auto& x : data) {
      const double a = ntp_loss(model, x.context, map, x.item);
      const double b = fv_mle_loss(model, x.context, map, x.item);
      s.mean_ntp_loss += a;
      s.mean_fv_mle_loss += b;
      s.max_step_loss_gap = std::max(s.max_step_loss_gap, std::abs(a - b));
    }
    s.mean_ntp_loss /= n;
    s.mean_fv_mle_loss /= n;
    trace.epochs.push_back(s);
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(opt.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats s{epoch, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t idx : order) {
      const auto& x = data[idx];
      const double a = ntp_loss(model, x.context, map, x.item);
      const double b = fv_mle_loss(model, x.context, map, x.item);
      s.mean_ntp_loss += a;
      s.mean_fv_mle_loss += b;
      s.max_step_loss_gap = std::max(s.max_step_loss_gap, std::abs(a - b));
      for (const auto& g : ntp_node_gradients(model, x.context, map, x.item)) {
        auto row = model.node_logits(g.position, x.context, g.prefix);
        for (std::size_t t = 0; t < row.size(); ++t) row[t] -= opt.lr * g.values[t];
      }
    }
    s.mean_ntp_loss /= n;
    s.mean_fv_mle_loss /= n;
    if (!std::isfinite(s.mean_ntp_loss))
      throw DivergenceError("mean NTP loss became non-finite at epoch " + std::to_string(epoch));
    s.kl = kl();
    trace.epochs.push_back(s);
  }
  return trace;
}

}  // namespace genrec
