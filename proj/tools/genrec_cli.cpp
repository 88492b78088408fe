// genrec: batch entry point for tokenization, equivalence verification,
// training, decoding and the softmax cost benchmark.
//
//   genrec <tokenize|verify|train|decode|bench> --config run.json [--seed N] [--out DIR]
//
// Output directory: --out, else $GENREC_OUT, else ./out.
// Exit codes: 0 ok, 2 bijection failure, 3 equivalence failure,
//             4 config or parse error, 5 missing artifact.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "genrec/genrec.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kBijectionFailure = 2,
  kEquivalenceFailure = 3,
  kConfigError = 4,
  kMissingArtifact = 5,
};

struct ExitError {
  int code;
  std::string message;
};

struct RunContext {
  json config;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::string config_hash;

  json provenance() const { return {{"config_hash", config_hash}, {"seed", seed}}; }
  std::string csv_provenance() const {
    return "# config_hash=" + config_hash + " seed=" + std::to_string(seed) + "\n";
  }
};

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <class T>
T get_or(const json& cfg, const char* key, T fallback) {
  try {
    return cfg.contains(key) ? cfg.at(key).get<T>() : fallback;
  } catch (const json::exception& e) {
    throw ExitError{kConfigError, std::string("config key '") + key + "': " + e.what()};
  }
}

json read_json_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ExitError{kMissingArtifact, "missing artifact: " + path};
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ExitError{kConfigError, "cannot parse " + path + ": " + e.what()};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExitError{kConfigError, "cannot write " + path.string()};
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void check_table_cap(const RunContext& ctx, const genrec::CodebookSpec& spec, std::size_t C) {
  const auto cap = get_or<std::uint64_t>(ctx.config, "max_table_entries", 10'000'000);
  if (genrec::cascaded_parameter_count(spec, C) > cap)
    throw ExitError{kConfigError, "cascaded table for k=" + std::to_string(spec.k) +
                                      " X=" + std::to_string(spec.X) + " exceeds " +
                                      std::to_string(cap) + " entries"};
}

genrec::AnyLogitModel make_model(genrec::LogitForm form, const genrec::CodebookSpec& spec,
                                 std::size_t C, double sigma, std::uint64_t seed) {
  if (form == genrec::LogitForm::cascaded) {
    genrec::CascadedLogitModel m(spec, C);
    m.randomize(sigma, seed);
    return m;
  }
  genrec::ParallelLogitModel m(spec, C);
  m.randomize(sigma, seed);
  return m;
}

// ---------------------------------------------------------------------------

int cmd_tokenize(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto scheme = get_or<std::string>(cfg, "scheme", "");
  const genrec::CodebookSpec spec{get_or<std::size_t>(cfg, "k", 2), get_or<std::size_t>(cfg, "X", 4)};
  const auto mode = genrec::map_mode_from_string(get_or<std::string>(cfg, "mode", "strict"));
  const auto max_iters = get_or<std::size_t>(cfg, "max_iters", 50);
  const auto threshold = get_or<double>(cfg, "collapse_threshold", genrec::kDefaultCollapseThreshold);
  spec.validate();

  auto load_embeddings = [&]() -> genrec::ItemEmbeddings {
    const auto src = get_or<json>(cfg, "embeddings", json::object());
    if (src.contains("path")) {
      const auto path = src.at("path").get<std::string>();
      if (!fs::exists(path)) throw ExitError{kMissingArtifact, "missing artifact: " + path};
      return genrec::load_embeddings(path);
    }
    const auto synth = src.value("synth", json::object());
    auto emb = genrec::synth_embeddings(synth.value("n_items", std::size_t{64}),
                                        synth.value("dim", std::size_t{8}),
                                        genrec::derive_seed(ctx.seed, 1));
    std::ostringstream os;
    genrec::write_embeddings_csv(os, emb);
    write_text(ctx.out_dir / "embeddings.csv", os.str());
    return emb;
  };

  std::vector<genrec::TokenSequence> codes;
  genrec::CodebookSpec map_spec = spec;
  json quantizer;
  if (scheme == "identity") {
    const auto n = get_or<std::uint64_t>(cfg, "n_items", spec.sequence_space_size());
    if (n < 1 || n > spec.sequence_space_size())
      throw ExitError{kConfigError, "identity scheme needs 1 <= n_items <= X^k"};
    for (std::uint64_t i = 0; i < n; ++i) codes.push_back(genrec::sequence_from_index(spec, i));
  } else if (scheme == "rq_kmeans") {
    const auto emb = load_embeddings();
    const auto model = genrec::fit_rq_kmeans(emb, spec, max_iters, ctx.seed);
    codes = genrec::encode_rq(model, emb);
    quantizer = model;
  } else if (scheme == "pq") {
    const auto emb = load_embeddings();
    const auto model = genrec::fit_pq(emb, spec, max_iters, ctx.seed);
    codes = genrec::encode_pq(model, emb);
    quantizer = model;
  } else if (scheme == "fsq") {
    const auto emb = load_embeddings();
    const auto levels =
        get_or<std::vector<std::size_t>>(cfg, "levels", std::vector<std::size_t>(spec.k, spec.X));
    const auto model = genrec::fit_fsq(emb, levels);
    codes = genrec::encode_fsq(model, emb);
    map_spec = model.spec();
    quantizer = model;
  } else {
    throw ExitError{kConfigError, "scheme must be one of rq_kmeans, pq, fsq, identity"};
  }
  if (!quantizer.is_null()) {
    quantizer["provenance"] = ctx.provenance();
    write_json(ctx.out_dir / "quantizer.json", quantizer);
  }

  std::vector<genrec::Assignment> assignments;
  for (std::size_t i = 0; i < codes.size(); ++i) assignments.emplace_back(i, codes[i]);

  // Audit the raw assignment first so the report exists even when strict fails.
  const auto probe = genrec::build_token_map(map_spec, assignments, genrec::MapMode::probe);
  json audit = genrec::audit_bijection(probe, threshold);
  audit["collapse_threshold"] = threshold;
  audit["provenance"] = ctx.provenance();

  std::optional<genrec::TokenMap> map;
  int code = kOk;
  try {
    map = genrec::build_token_map(map_spec, assignments, mode);
  } catch (const genrec::CollisionError& e) {
    audit["error"] = e.what();
    code = kBijectionFailure;
  } catch (const genrec::CoverageError& e) {
    audit["error"] = e.what();
    code = kBijectionFailure;
  }
  write_json(ctx.out_dir / "audit.json", audit);
  if (map) {
    json j = *map;
    j["provenance"] = ctx.provenance();
    write_json(ctx.out_dir / "token_map.json", j);
  } else {
    std::cerr << "strict token map rejected: " << audit["error"].get<std::string>() << "\n";
  }
  return code;
}

// ---------------------------------------------------------------------------

/// Identity map plus one extra item whose sequence duplicates a random one.
genrec::TokenMap collided_map(const genrec::CodebookSpec& spec, std::uint64_t seed) {
  auto a = genrec::assignments_of(genrec::identity_token_map(spec));
  std::mt19937_64 rng(seed);
  const auto dup = std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng);
  a.emplace_back(a.size(), a[dup].second);
  return genrec::build_token_map(spec, a, genrec::MapMode::probe);
}

int cmd_verify(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto forms = get_or<std::vector<std::string>>(cfg, "forms", {"cascaded", "parallel"});
  const auto trials = get_or<std::size_t>(cfg, "trials", 100);
  const auto ks = get_or<std::vector<std::size_t>>(cfg, "k", {1, 2, 3});
  const auto xs = get_or<std::vector<std::size_t>>(cfg, "X", {2, 3, 4});
  const auto cs = get_or<std::vector<std::size_t>>(cfg, "C", {1, 2, 4});
  const auto sigma = get_or<double>(cfg, "sigma", 0.5);
  const auto mode = genrec::map_mode_from_string(get_or<std::string>(cfg, "mode", "strict"));
  const auto inject = get_or<bool>(cfg, "inject_collision", mode == genrec::MapMode::probe);
  const auto tolerance = get_or<double>(cfg, "tolerance", 1e-10);
  if (ks.empty() || xs.empty() || cs.empty())
    throw ExitError{kConfigError, "verify: k, X and C lists must be non-empty"};
  if (inject && mode == genrec::MapMode::strict)
    throw ExitError{kConfigError, "verify: inject_collision requires probe mode"};

  std::vector<genrec::LogitForm> parsed_forms;
  for (const auto& f : forms) parsed_forms.push_back(genrec::logit_form_from_string(f));

  std::ostringstream csv;
  csv << ctx.csv_provenance() << genrec::kEquivalenceCsvHeader << "\n";
  genrec::EquivalenceSummary overall;
  std::vector<genrec::EquivalenceSummary> per_form(parsed_forms.size());

  for (std::size_t t = 0; t < trials; ++t) {
    // Walk the (k, X, C) grid so every combination is covered.
    const std::size_t combo = t % (ks.size() * xs.size() * cs.size());
    const genrec::CodebookSpec spec{ks[combo % ks.size()], xs[(combo / ks.size()) % xs.size()]};
    const std::size_t C = cs[combo / (ks.size() * xs.size())];
    check_table_cap(ctx, spec, C);
    const auto map = inject ? collided_map(spec, genrec::derive_seed(ctx.seed, 2 * t + 1))
                            : genrec::build_token_map(
                                  spec, genrec::assignments_of(genrec::identity_token_map(spec)),
                                  mode);
    for (std::size_t f = 0; f < parsed_forms.size(); ++f) {
      const auto model = make_model(parsed_forms[f], spec, C, sigma,
                                    genrec::derive_seed(ctx.seed, 1000003 * (t + 1) + f));
      const genrec::TrialTag tag{t, parsed_forms[f], spec, C, map.mode()};
      std::visit(
          [&](const auto& m) {
            for (genrec::ContextId h = 0; h < C; ++h)
              for (genrec::ItemId i = 0; i < map.size(); ++i) {
                const auto r = genrec::check_equivalence(m, h, map, i);
                genrec::write_equivalence_csv_row(csv, tag, r);
                overall.add(r);
                per_form[f].add(r);
              }
          },
          model);
    }
  }

  const bool strict = mode == genrec::MapMode::strict;
  const bool passed = !strict || (overall.max_loss_gap <= tolerance &&
                                  overall.max_partition_gap <= tolerance);
  json forms_json = json::object();
  for (std::size_t f = 0; f < parsed_forms.size(); ++f)
    forms_json[genrec::to_string(parsed_forms[f])] = per_form[f];
  json summary{{"provenance", ctx.provenance()},
               {"trials", trials},
               {"map_mode", genrec::to_string(mode)},
               {"inject_collision", inject},
               {"tolerance", tolerance},
               {"overall", overall},
               {"forms", forms_json},
               {"passed", passed}};
  write_text(ctx.out_dir / "equivalence.csv", csv.str());
  write_json(ctx.out_dir / "summary.json", summary);
  if (!passed) {
    std::cerr << "equivalence gap above tolerance: max_loss_gap=" << overall.max_loss_gap
              << " max_partition_gap=" << overall.max_partition_gap << "\n";
    return kEquivalenceFailure;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

genrec::TokenMap load_strict_map(const std::string& path) {
  auto map = genrec::token_map_from_json(read_json_artifact(path));
  if (!map.is_strict()) throw ExitError{kBijectionFailure, "token map " + path + " is not strict"};
  return map;
}

int cmd_train(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto form = genrec::logit_form_from_string(get_or<std::string>(cfg, "form", "cascaded"));
  const genrec::CodebookSpec spec{get_or<std::size_t>(cfg, "k", 3), get_or<std::size_t>(cfg, "X", 4)};
  const auto C = get_or<std::size_t>(cfg, "C", 4);
  const auto alpha = get_or<double>(cfg, "alpha", 0.3);
  const auto uniform = get_or<bool>(cfg, "uniform", false);
  const auto n_samples = get_or<std::size_t>(cfg, "n_samples", 100000);
  const auto sigma = get_or<double>(cfg, "sigma", 0.5);
  const genrec::SgdOptions sgd{get_or<double>(cfg, "lr", 0.1), get_or<std::size_t>(cfg, "epochs", 30),
                               genrec::derive_seed(ctx.seed, 4)};
  spec.validate();
  check_table_cap(ctx, spec, C);

  const auto map = cfg.contains("token_map")
                       ? load_strict_map(cfg.at("token_map").get<std::string>())
                       : genrec::identity_token_map(spec);
  genrec::require_same_spec(spec, map.spec());

  auto model = cfg.contains("init_checkpoint")
                   ? genrec::logit_model_from_json(
                         read_json_artifact(cfg.at("init_checkpoint").get<std::string>()))
                   : make_model(form, spec, C, sigma, genrec::derive_seed(ctx.seed, 3));
  std::visit([&](const auto& m) {
    if (!(m.spec() == spec) || m.contexts() != C)
      throw ExitError{kConfigError, "init checkpoint does not match k, X, C"};
  }, model);

  const auto world = genrec::synth_world(C, map.size(), alpha, genrec::derive_seed(ctx.seed, 1), uniform);
  const auto data = genrec::sample_dataset(world, n_samples, genrec::derive_seed(ctx.seed, 2));

  auto checkpoint = [&](const genrec::AnyLogitModel& m) {
    json j = genrec::checkpoint_json(m);
    j["provenance"] = ctx.provenance();
    return j;
  };
  write_json(ctx.out_dir / "init_checkpoint.json", checkpoint(model));
  {
    json w{{"C", world.contexts}, {"N", world.items}, {"alpha", alpha}, {"uniform", uniform},
           {"p_star", world.p_star}, {"provenance", ctx.provenance()}};
    write_json(ctx.out_dir / "world.json", w);
  }

  const auto trace = std::visit(
      [&](auto& m) { return genrec::train_sgd(m, map, data, sgd, &world); }, model);

  write_json(ctx.out_dir / "checkpoint.json", checkpoint(model));
  std::ostringstream csv;
  csv << ctx.csv_provenance();
  genrec::write_trace_csv(csv, trace);
  write_text(ctx.out_dir / "trace.csv", csv.str());
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_decode(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  if (!cfg.contains("checkpoint")) throw ExitError{kConfigError, "decode: 'checkpoint' is required"};
  const auto model = genrec::logit_model_from_json(read_json_artifact(cfg.at("checkpoint").get<std::string>()));
  const auto spec = std::visit([](const auto& m) { return m.spec(); }, model);
  const auto C = std::visit([](const auto& m) { return m.contexts(); }, model);
  const auto map = cfg.contains("token_map")
                       ? genrec::token_map_from_json(read_json_artifact(cfg.at("token_map").get<std::string>()))
                       : genrec::identity_token_map(spec);
  genrec::require_same_spec(spec, map.spec());

  const auto method = get_or<std::string>(cfg, "method", "beam");
  const auto K = get_or<std::size_t>(cfg, "top_k", 10);
  const auto B = get_or<std::size_t>(cfg, "beam_width", std::max<std::size_t>(K, 4));
  std::vector<genrec::ContextId> contexts;
  if (cfg.contains("contexts")) {
    contexts = get_or<std::vector<genrec::ContextId>>(cfg, "contexts", {});
  } else {
    for (genrec::ContextId h = 0; h < C; ++h) contexts.push_back(h);
  }

  json results = json::array();
  for (auto h : contexts) {
    if (h >= C) throw ExitError{kConfigError, "decode: context out of range"};
    std::vector<genrec::ScoredSequence> ranked;
    if (method == "beam") {
      ranked = std::visit([&](const auto& m) { return genrec::beam_search(m, h, B, K); }, model);
    } else if (method == "mtp") {
      ranked = genrec::mtp_decode(model, h, K);
    } else if (method == "exact") {
      if (!map.is_strict()) throw ExitError{kBijectionFailure, "exact ranking needs a strict map"};
      const auto items =
          std::visit([&](const auto& m) { return genrec::exact_topk(m, h, map, K); }, model);
      for (const auto& it : items) ranked.push_back({map.forward(it.item), it.score});
    } else {
      throw ExitError{kConfigError, "decode: method must be beam, mtp or exact"};
    }
    results.push_back({{"context", h}, {"ranked", genrec::decoded_json(ranked, &map)}});
  }
  json out{{"provenance", ctx.provenance()}, {"method", method}, {"results", results}};
  write_json(ctx.out_dir / "decode.json", out);
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_bench(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto ks = get_or<std::vector<std::size_t>>(cfg, "sweep_k", {1, 2, 3, 4});
  const auto xs = get_or<std::vector<std::size_t>>(cfg, "sweep_X", {4, 8, 16});
  const auto extra = get_or<std::vector<std::vector<std::size_t>>>(cfg, "count_only", {{3, 256}});
  const auto timing = get_or<bool>(cfg, "timing", false);
  const auto n_contexts = get_or<std::size_t>(cfg, "n_contexts", 2);
  const auto n_repeats = get_or<std::size_t>(cfg, "n_repeats", 5);
  const auto n_items = get_or<std::size_t>(cfg, "n_timed_items", 16);

  std::ostringstream counts;
  counts << ctx.csv_provenance();
  genrec::write_op_count_csv_header(counts);
  std::vector<genrec::TimingRow> rows;
  bool mismatch = false;
  for (auto k : ks)
    for (auto x : xs) {
      const genrec::CodebookSpec spec{k, x};
      spec.validate();
      const auto counted = genrec::measure_lookups(spec, ctx.seed);
      mismatch |= !(counted == genrec::closed_form_lookups(spec));
      genrec::write_op_count_csv_row(counts, spec, &counted);
      if (timing) rows.push_back(genrec::time_losses(spec, n_contexts, n_repeats, ctx.seed, n_items));
    }
  for (const auto& kx : extra) {
    if (kx.size() != 2) throw ExitError{kConfigError, "count_only entries must be [k, X]"};
    const genrec::CodebookSpec spec{kx[0], kx[1]};
    spec.validate();
    genrec::write_op_count_csv_row(counts, spec, nullptr);
  }
  write_text(ctx.out_dir / "bench_counts.csv", counts.str());
  if (timing) {
    std::ostringstream t;
    t << ctx.csv_provenance();
    genrec::write_timing_csv(t, rows);
    write_text(ctx.out_dir / "bench_timing.csv", t.str());
  }
  if (mismatch) {
    std::cerr << "instrumented lookup counts disagree with closed forms\n";
    return kEquivalenceFailure;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genrec: k-token next-token prediction vs full-vocabulary MLE laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const RunContext&);
  };
  const Sub subs[] = {
      {"tokenize", "fit a tokenizer and audit the item/sequence map", cmd_tokenize},
      {"verify", "check NTP vs full-vocabulary losses over random models", cmd_verify},
      {"train", "teacher-forced SGD on a synthetic world", cmd_train},
      {"decode", "beam, exact or one-pass decoding from a checkpoint", cmd_decode},
      {"bench", "softmax cost counts and optional timings", cmd_bench},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> registered;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("-c,--config", config_path, "JSON run config")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("-o,--out", out_dir, "output directory");
    registered.emplace_back(sub, &s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    RunContext ctx;
    {
      std::ifstream in(config_path);
      if (!in) throw ExitError{kConfigError, "cannot open config " + config_path};
      try {
        ctx.config = json::parse(in);
      } catch (const json::exception& e) {
        throw ExitError{kConfigError, std::string("config parse error: ") + e.what()};
      }
      if (!ctx.config.is_object()) throw ExitError{kConfigError, "config must be a JSON object"};
    }
    if (seed) ctx.config["seed"] = *seed;
    ctx.seed = get_or<std::uint64_t>(ctx.config, "seed", 0);
    ctx.config_hash = fnv1a_hex(ctx.config.dump());

    if (out_dir.empty()) {
      const char* env = std::getenv("GENREC_OUT");
      out_dir = env && *env ? env : "out";
    }
    ctx.out_dir = out_dir;
    fs::create_directories(ctx.out_dir);

    for (const auto& [sub, s] : registered)
      if (sub->parsed()) return s->run(ctx);
    return kConfigError;
  } catch (const ExitError& e) {
    std::cerr << "genrec: " << e.message << "\n";
    return e.code;
  } catch (const genrec::FormatError& e) {
    std::cerr << "genrec: " << e.what() << "\n";
    return kConfigError;
  } catch (const genrec::Error& e) {
    std::cerr << "genrec: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "genrec: " << e.what() << "\n";
    return kConfigError;
  }
}
