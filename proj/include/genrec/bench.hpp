#pragma once

// Cost of the token-factored softmax against the full-vocabulary softmax,
// counted in exponential units and in logit entries actually read.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "genrec/logits.hpp"
#include "genrec/losses.hpp"
#include "genrec/tokenizer.hpp"
#include "genrec/vocab.hpp"

namespace genrec {

struct SoftmaxOpCount {
  std::uint64_t ntp_ops = 0;   // k softmaxes of width X
  std::uint64_t full_ops = 0;  // one softmax of width X^k
  double ratio = 0.0;          // full_ops / ntp_ops

  bool operator==(const SoftmaxOpCount&) const = default;
};

inline SoftmaxOpCount count_softmax_ops(const CodebookSpec& spec) {
  const auto full = spec.sequence_space_size();
  const std::uint64_t ntp = spec.k * spec.X;
  return {ntp, full, static_cast<double>(full) / static_cast<double>(ntp)};
}

/// Forwards to a model and counts logit entries read: one per `logit` call,
/// X per `node_logits` call.
template <LogitModel M>
class CountingModel {
 public:
  explicit CountingModel(const M& model) : model_(&model) {}

  const CodebookSpec& spec() const { return model_->spec(); }
  std::size_t contexts() const { return model_->contexts(); }
  LogitForm form() const { return model_->form(); }

  std::span<const double> node_logits(std::size_t m, ContextId h, std::uint64_t prefix) const {
    lookups_ += model_->spec().X;
    return model_->node_logits(m, h, prefix);
  }
  double logit(std::size_t m, ContextId h, std::uint64_t prefix, Token t) const {
    ++lookups_;
    return model_->logit(m, h, prefix, t);
  }

  std::uint64_t lookups() const noexcept { return lookups_; }
  void reset() noexcept { lookups_ = 0; }

 private:
  const M* model_;
  mutable std::uint64_t lookups_ = 0;
};

/// Closed-form entry counts per loss evaluation: the NTP path reads k rows of
/// X, the full-vocabulary path walks k entries for each of N items. Their
/// ratio is X^(k-1), i.e. k times count_softmax_ops().ratio.
struct LookupCounts {
  std::uint64_t ntp = 0;
  std::uint64_t fv = 0;

  bool operator==(const LookupCounts&) const = default;
};

inline LookupCounts closed_form_lookups(const CodebookSpec& spec) {
  return {spec.k * spec.X, spec.sequence_space_size() * spec.k};
}

/// Instrumented counts from one (context 0, item 0) evaluation of each loss
/// on a random cascaded model with the identity map.
inline LookupCounts measure_lookups(const CodebookSpec& spec, std::uint64_t seed = 0) {
  CascadedLogitModel model(spec, 1);
  model.randomize(0.5, seed);
  const auto map = identity_token_map(spec);
  CountingModel counting(model);
  LookupCounts out;
  (void)ntp_loss(counting, 0, map, 0);
  out.ntp = counting.lookups();
  counting.reset();
  (void)fv_mle_loss(counting, 0, map, 0);
  out.fv = counting.lookups();
  return out;
}

struct TimingStats {
  double median_us = 0.0;
  double min_us = 0.0;
  double max_us = 0.0;
};

struct TimingRow {
  CodebookSpec spec;
  std::uint64_t items = 0;
  LookupCounts counted;
  LookupCounts closed_form;
  TimingStats ntp;
  TimingStats fv;
};

namespace detail {
inline TimingStats summarize(std::vector<double> us) {
  std::sort(us.begin(), us.end());
  const auto n = us.size();
  const double median = n % 2 ? us[n / 2] : 0.5 * (us[n / 2 - 1] + us[n / 2]);
  return {median, us.front(), us.back()};
}
}  // namespace detail

/// Counts lookups for one (context, item) evaluation of each loss, then
/// times `repeats` passes over `contexts` contexts x `max_items` evenly
/// spaced target items (all items when N is smaller). Timings are per loss
/// evaluation, in microseconds.
inline TimingRow time_losses(const CodebookSpec& spec, std::size_t contexts, std::size_t repeats,
                             std::uint64_t seed, std::size_t max_items = 16) {
  if (contexts < 1 || repeats < 1 || max_items < 1)
    throw InvalidArgument("time_losses: contexts, repeats and max_items must be >= 1");
  CascadedLogitModel model(spec, contexts);
  model.randomize(0.5, seed);
  const auto map = identity_token_map(spec);

  TimingRow row{spec, map.size(), measure_lookups(spec, seed), closed_form_lookups(spec), {}, {}};

  std::vector<ItemId> targets;
  const auto n_targets = std::min<std::size_t>(max_items, map.size());
  for (std::size_t j = 0; j < n_targets; ++j) targets.push_back(j * map.size() / n_targets);

  using clock = std::chrono::steady_clock;
  const double evals = static_cast<double>(contexts * targets.size());
  auto run = [&](auto&& loss) {
    std::vector<double> us;
    volatile double sink = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = clock::now();
      double acc = 0.0;
      for (ContextId h = 0; h < contexts; ++h)
        for (ItemId i : targets) acc += loss(h, i);
      const auto t1 = clock::now();
      sink = sink + acc;
      us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() / evals);
    }
    return detail::summarize(std::move(us));
  };
  row.ntp = run([&](ContextId h, ItemId i) { return ntp_loss(model, h, map, i); });
  row.fv = run([&](ContextId h, ItemId i) { return fv_mle_loss(model, h, map, i); });
  return row;
}

inline void write_op_count_csv_header(std::ostream& os) {
  os << "k,X,ntp_ops,full_ops,ratio,ntp_lookups_closed,fv_lookups_closed,"
        "ntp_lookups_counted,fv_lookups_counted\n";
}

/// Counted columns are left empty when `counted` is null (specs too large to
/// enumerate).
inline void write_op_count_csv_row(std::ostream& os, const CodebookSpec& spec,
                                   const LookupCounts* counted) {
  const auto c = count_softmax_ops(spec);
  const auto l = closed_form_lookups(spec);
  os << spec.k << ',' << spec.X << ',' << c.ntp_ops << ',' << c.full_ops << ','
     << format_double(c.ratio) << ',' << l.ntp << ',' << l.fv << ',';
  if (counted) os << counted->ntp << ',' << counted->fv;
  else os << ',';
  os << '\n';
}

inline void write_timing_csv(std::ostream& os, std::span<const TimingRow> rows) {
  os << "k,X,N,ntp_lookups,fv_lookups,ntp_lookups_closed,fv_lookups_closed,"
        "ntp_median_us,ntp_min_us,ntp_max_us,fv_median_us,fv_min_us,fv_max_us\n";
  for (const auto& r : rows)
    os << r.spec.k << ',' << r.spec.X << ',' << r.items << ',' << r.counted.ntp << ','
       << r.counted.fv << ',' << r.closed_form.ntp << ',' << r.closed_form.fv << ','
       << format_double(r.ntp.median_us) << ',' << format_double(r.ntp.min_us) << ','
       << format_double(r.ntp.max_us) << ',' << format_double(r.fv.median_us) << ','
       << format_double(r.fv.min_us) << ',' << format_double(r.fv.max_us) << '\n';
}

}  // namespace genrec
