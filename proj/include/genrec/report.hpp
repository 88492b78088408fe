#pragma once

// CSV and JSON writers for equivalence reports, training traces and decoded
// lists.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "genrec/decoder.hpp"
#include "genrec/losses.hpp"
#include "genrec/tokenizer.hpp"
#include "genrec/trainer.hpp"

namespace genrec {

inline constexpr const char* kEquivalenceCsvHeader =
    "trial,form,k,X,C,map_mode,context,item,log_z_path,log_z_sequence,log_z_full,"
    "loss_ntp,loss_fv_mle,abs_partition_gap,abs_path_gap,abs_loss_gap,max_grad_gap";

/// Where a report came from in a verification sweep.
struct TrialTag {
  std::size_t trial = 0;
  LogitForm form = LogitForm::cascaded;
  CodebookSpec spec;
  std::size_t contexts = 0;
  MapMode mode = MapMode::strict;
};

inline void write_equivalence_csv_row(std::ostream& os, const TrialTag& tag,
                                      const EquivalenceReport& r) {
  os << tag.trial << ',' << to_string(tag.form) << ',' << tag.spec.k << ',' << tag.spec.X << ','
     << tag.contexts << ',' << to_string(tag.mode) << ',' << r.context << ',' << r.item << ','
     << format_double(r.log_z_path) << ',' << format_double(r.log_z_sequence) << ','
     << format_double(r.log_z_full) << ',' << format_double(r.loss_ntp) << ','
     << format_double(r.loss_fv_mle) << ',' << format_double(r.abs_partition_gap) << ','
     << format_double(r.abs_path_gap) << ',' << format_double(r.abs_loss_gap) << ','
     << format_double(r.max_grad_gap) << '\n';
}

/// Running maxima over many reports.
struct EquivalenceSummary {
  std::size_t rows = 0;
  double max_partition_gap = 0.0;
  double max_path_gap = 0.0;
  double max_loss_gap = 0.0;
  double max_grad_gap = 0.0;

  void add(const EquivalenceReport& r) {
    ++rows;
    max_partition_gap = std::max(max_partition_gap, r.abs_partition_gap);
    max_path_gap = std::max(max_path_gap, r.abs_path_gap);
    max_loss_gap = std::max(max_loss_gap, r.abs_loss_gap);
    max_grad_gap = std::max(max_grad_gap, r.max_grad_gap);
  }
};

inline void to_json(nlohmann::json& j, const EquivalenceSummary& s) {
  j = {{"rows", s.rows},
       {"max_partition_gap", s.max_partition_gap},
       {"max_path_gap", s.max_path_gap},
       {"max_loss_gap", s.max_loss_gap},
       {"max_grad_gap", s.max_grad_gap}};
}

inline void write_trace_csv(std::ostream& os, const TrainingTrace& trace) {
  os << "epoch,mean_ntp_loss,mean_fv_mle_loss,kl,max_step_loss_gap\n";
  for (const auto& e : trace.epochs)
    os << e.epoch << ',' << format_double(e.mean_ntp_loss) << ','
       << format_double(e.mean_fv_mle_loss) << ',' << format_double(e.kl) << ','
       << format_double(e.max_step_loss_gap) << '\n';
}

/// {tokens, score, item_id}; item_id is null when the map has no owner.
inline nlohmann::json decoded_json(std::span<const ScoredSequence> ranked, const TokenMap* map) {
  auto out = nlohmann::json::array();
  for (const auto& s : ranked) {
    nlohmann::json e{{"tokens", s.sequence.tokens}, {"score", s.score}, {"item_id", nullptr}};
    if (map)
      if (auto id = map->inverse(s.sequence)) e["item_id"] = *id;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace genrec
