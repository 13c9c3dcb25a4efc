// tkgr: temporal-KG link prediction with a history-contextualized dual
// encoder. Subcommands: prepare-data, train, evaluate, predict, ablate,
// export-corpus. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tkgr/config.hpp"
#include "tkgr/protocol.hpp"
#include "tkgr/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tkgr;

namespace {

struct UnknownDimension : std::runtime_error {
  explicit UnknownDimension(const std::string& name)
      : std::runtime_error("unknown ablation dimension: " + name) {}
};

struct UsageFailure : std::runtime_error {
  explicit UsageFailure(const std::string& what) : std::runtime_error(what) {}
};

std::vector<Quadruple> parse_file(const std::string& path, Vocabs& vocabs) {
  std::ifstream in(path);
  if (!in) throw UsageFailure("cannot open fact file '" + path + "'");
  return parse_quadruple_file(in, vocabs);
}

/// Everything a run needs: vocabularies, splits, history/filter indices, and
/// a tokenizer covering every surface form. Deterministic for fixed inputs.
struct Dataset {
  Vocabs vocabs;
  std::vector<Quadruple> train;        // inverse-augmented when enabled
  std::vector<Quadruple> valid, test;  // base direction only
  TemporalKG history_kg;               // built from the (augmented) train facts
  TemporalKG filter_kg;                // built from all (augmented) facts
  Tokenizer tokenizer;
};

Tokenizer build_tokenizer(const Vocabs& vocabs) {
  Tokenizer tok;
  for (EntityId e = 0; e < vocabs.entities.size(); ++e)
    tok.add_text(entity_description(e, vocabs, 1 << 20));
  for (const std::string& name : vocabs.relations.names()) tok.add_text(name);
  for (int t = 0; t < vocabs.timestamps.size(); ++t)
    tok.add_text(lexicalize_timestamp_text(vocabs.timestamps.text(t)));
  tok.add_text("| ,");  // prompt punctuation
  return tok;
}

Dataset load_dataset(const RunConfig& cfg, bool need_eval_splits = true) {
  if (cfg.train_file.empty()) throw UsageFailure("config is missing train_file");
  Dataset ds;
  std::vector<Quadruple> train = parse_file(cfg.train_file, ds.vocabs);
  std::vector<Quadruple> valid, test;
  if (need_eval_splits && !cfg.valid_file.empty()) valid = parse_file(cfg.valid_file, ds.vocabs);
  if (need_eval_splits && !cfg.test_file.empty()) test = parse_file(cfg.test_file, ds.vocabs);
  if (!cfg.descriptions_file.empty()) {
    std::ifstream in(cfg.descriptions_file);
    if (in) {
      load_descriptions(in, ds.vocabs);
    } else {
      std::cerr << "warning: description file '" << cfg.descriptions_file
                << "' not found; entities fall back to name-only\n";
    }
  }
  ds.vocabs.descriptions.sync(ds.vocabs.entities);

  ds.valid = valid;
  ds.test = test;
  if (cfg.add_inverses) {
    // Augment once across all splits so the filter index covers both
    // directions; the query splits keep their base direction.
    std::vector<Quadruple> all = train;
    all.insert(all.end(), valid.begin(), valid.end());
    all.insert(all.end(), test.begin(), test.end());
    const std::vector<Quadruple> aug = add_inverse_relations(all, ds.vocabs);
    const size_t n = all.size();
    ds.train = train;
    for (size_t i = 0; i < train.size(); ++i) ds.train.push_back(aug[n + i]);
    ds.filter_kg = build_indices(aug, ds.vocabs);
  } else {
    ds.train = train;
    std::vector<Quadruple> all = train;
    all.insert(all.end(), valid.begin(), valid.end());
    all.insert(all.end(), test.begin(), test.end());
    ds.filter_kg = build_indices(std::move(all), ds.vocabs);
  }
  ds.history_kg = build_indices(ds.train, ds.vocabs);
  ds.tokenizer = build_tokenizer(ds.vocabs);
  return ds;
}

DualEncoderModel make_model(const RunConfig& cfg, const Dataset& ds) {
  return DualEncoderModel::init(cfg.model, ds.tokenizer, cfg.train.seed);
}

MetricsReport evaluate_split(DualEncoderModel& model, const Dataset& ds,
                             const std::vector<Quadruple>& split,
                             std::vector<RankingResult>* out_results = nullptr) {
  const CandidateMatrix matrix = embed_all_candidates(model, ds.vocabs);
  EvalOptions opt;
  auto results =
      rank_split(model, split, ds.history_kg, ds.filter_kg, ds.vocabs, matrix, opt);
  const MetricsReport rep = compute_metrics(results);
  if (out_results) *out_results = std::move(results);
  return rep;
}

void write_effective_config(const RunConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::ofstream out(cfg.output_dir + "/config.effective");
  cfg.write(out);
}

TrainResult run_training(RunConfig cfg, Dataset& ds, DualEncoderModel& model,
                         std::ostream* log) {
  cfg.train.checkpoint_dir = cfg.output_dir + "/checkpoints";
  std::function<double()> valid_cb;
  if (!ds.valid.empty())
    valid_cb = [&]() { return evaluate_split(model, ds, ds.valid).mrr; };
  return train(model, ds.train, ds.history_kg, ds.vocabs, cfg.train, valid_cb, log);
}

// ---- subcommands ---------------------------------------------------------

int cmd_prepare_data(const std::string& train_path, const std::string& valid_path,
                     const std::string& test_path, const std::string& desc_path,
                     double ooc_fraction, int shots, const std::string& out_dir) {
  Vocabs vocabs;
  std::vector<Quadruple> train, valid, test;
  {
    std::ifstream in(train_path);
    if (!in) throw UsageFailure("cannot open '" + train_path + "'");
    train = parse_quadruple_file(in, vocabs);
  }
  {
    std::ifstream in(valid_path);
    if (!in) throw UsageFailure("cannot open '" + valid_path + "'");
    valid = parse_quadruple_file(in, vocabs);
  }
  {
    std::ifstream in(test_path);
    if (!in) throw UsageFailure("cannot open '" + test_path + "'");
    test = parse_quadruple_file(in, vocabs);
  }
  int described = 0;
  if (!desc_path.empty()) {
    std::ifstream in(desc_path);
    if (in) {
      described = load_descriptions(in, vocabs);
    } else {
      std::cerr << "warning: description file '" << desc_path
                << "' not found; entities fall back to name-only\n";
    }
  }
  const int base_relations = vocabs.relations.size();

  std::vector<Quadruple> all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  all.insert(all.end(), test.begin(), test.end());
  add_inverse_relations(all, vocabs);

  fs::create_directories(out_dir);
  auto write_names = [&](const std::string& file, const std::vector<std::string>& names) {
    std::ofstream out(out_dir + "/" + file);
    for (const std::string& n : names) out << n << "\n";
  };
  write_names("entities.txt", vocabs.entities.names());
  write_names("relations.txt", vocabs.relations.names());
  {
    std::ofstream out(out_dir + "/timestamps.txt");
    for (int t = 0; t < vocabs.timestamps.size(); ++t) out << vocabs.timestamps.text(t) << "\n";
  }
  auto write_facts = [&](const std::string& file, const std::vector<Quadruple>& facts) {
    std::ofstream out(out_dir + "/" + file);
    for (const Quadruple& q : facts) {
      out << vocabs.entities.name(q.s) << '\t' << vocabs.relations.name(q.p) << '\t'
          << vocabs.entities.name(q.o) << '\t' << vocabs.timestamps.text(q.t) << '\n';
      out << vocabs.entities.name(q.o) << '\t'
          << vocabs.relations.name(vocabs.inverse_of(q.p)) << '\t'
          << vocabs.entities.name(q.s) << '\t' << vocabs.timestamps.text(q.t) << '\n';
    }
  };
  write_facts("train.txt", train);
  write_facts("valid.txt", valid);
  write_facts("test.txt", test);

  if (ooc_fraction > 0.0) {
    const auto unseen = sample_unseen_entities(all, vocabs, ooc_fraction, shots, 1);
    const InductiveSplit split = build_inductive_split(all, unseen, shots, vocabs);
    std::ofstream out(out_dir + "/oog.txt");
    out << "shots\t" << shots << "\n";
    for (EntityId e : unseen) out << "unseen\t" << vocabs.entities.name(e) << "\n";
    std::cout << "oog_unseen " << unseen.size() << "\n";
    std::cout << "oog_queries " << split.query_test.size() << "\n";
  }

  std::cout << "entities " << vocabs.entities.size() << "\n";
  std::cout << "relations " << base_relations << "\n";
  std::cout << "timestamps " << vocabs.timestamps.size() << "\n";
  std::cout << "train " << train.size() << "\n";
  std::cout << "valid " << valid.size() << "\n";
  std::cout << "test " << test.size() << "\n";
  std::cout << "described " << described << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  RunConfig cfg = RunConfig::load_file(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  write_effective_config(cfg);
  Dataset ds = load_dataset(cfg);
  DualEncoderModel model = make_model(cfg, ds);
  {
    std::ofstream tok_out(cfg.output_dir + "/tokenizer.txt");
    model.tokenizer.save(tok_out);
  }
  std::ofstream log(cfg.output_dir + "/train.log");
  const TrainResult result = run_training(cfg, ds, model, &log);
  save_checkpoint(cfg.output_dir + "/checkpoints/final.ckpt", model, result.steps);
  std::cout << "steps " << result.steps << "\n";
  if (result.best_epoch >= 0) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", result.best_valid_mrr);
    std::cout << "best_epoch " << result.best_epoch << "\nbest_valid_mrr " << buf << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& split_name, const std::string& per_query_path) {
  RunConfig cfg = RunConfig::load_file(config_path);
  Dataset ds = load_dataset(cfg);
  DualEncoderModel model = make_model(cfg, ds);
  load_checkpoint(ckpt_path, model);
  const std::vector<Quadruple>* split = nullptr;
  if (split_name == "valid") split = &ds.valid;
  else if (split_name == "test") split = &ds.test;
  else throw UsageFailure("unknown split '" + split_name + "' (expected valid|test)");
  if (split->empty()) throw UsageFailure("split '" + split_name + "' is empty");

  std::vector<RankingResult> results;
  const MetricsReport rep = evaluate_split(model, ds, *split, &results);
  rep.print(std::cout);
  fs::create_directories(cfg.output_dir);
  std::ofstream metrics(cfg.output_dir + "/metrics_" + split_name + ".txt");
  rep.print(metrics);
  if (!per_query_path.empty()) {
    std::ofstream pq(per_query_path);
    for (const RankingResult& r : results)
      pq << ds.vocabs.entities.name(r.query.s) << '\t' << ds.vocabs.relations.name(r.query.p)
         << '\t' << ds.vocabs.entities.name(r.query.o) << '\t'
         << ds.vocabs.timestamps.text(r.query.t) << '\t'
         << (r.head_direction ? "head" : "tail") << '\t' << r.filtered_rank << '\n';
  }
  return 0;
}

int cmd_predict(const std::string& config_path, const std::string& ckpt_path,
                const std::string& query, int k, const std::string& subject_desc) {
  RunConfig cfg = RunConfig::load_file(config_path);
  Dataset ds = load_dataset(cfg);
  DualEncoderModel model = make_model(cfg, ds);
  load_checkpoint(ckpt_path, model);

  std::vector<std::string> parts;
  {
    size_t start = 0;
    while (true) {
      const size_t bar = query.find('|', start);
      parts.push_back(query.substr(start, bar == std::string::npos ? bar : bar - start));
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
  }
  if (parts.size() != 3) throw UsageFailure("query must be \"subject|relation|timestamp\"");

  EntityId s = ds.vocabs.entities.find(parts[0]);
  if (s < 0) {
    if (subject_desc.empty())
      throw UsageFailure("unknown subject '" + parts[0] +
                         "' (supply --subject-desc to predict for an unseen entity)");
    s = ds.vocabs.entities.add_or_get(parts[0]);
    ds.vocabs.descriptions.sync(ds.vocabs.entities);
    ds.vocabs.descriptions.set_description(s, subject_desc);
  }
  const RelationId p = ds.vocabs.relations.find(parts[1]);
  if (p < 0) throw UsageFailure("unknown relation '" + parts[1] + "'");
  const TimestampId t = ds.vocabs.timestamps.add_or_get(parts[2]);

  const HistoryContext hist =
      retrieve_history(s, p, t, std::nullopt, ds.history_kg, ds.vocabs, model.cfg.history);
  const std::string text = verbalize_query(s, p, t, hist, ds.vocabs, model.cfg.verbalize).text;
  const Tensor h_q = model.embed_text(text, Tower::query);

  std::vector<std::pair<double, EntityId>> scored;
  for (EntityId e = 0; e < ds.vocabs.entities.size(); ++e) {
    const Tensor c = model.embed_text(
        verbalize_candidate(e, ds.vocabs, model.cfg.verbalize).text, Tower::candidate);
    scored.emplace_back(cosine_score(h_q, c), e);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const int n = std::min<int>(k, static_cast<int>(scored.size()));
  char buf[64];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", scored[i].first);
    std::cout << ds.vocabs.entities.name(scored[i].second) << '\t' << buf << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& dimension) {
  const RunConfig base = RunConfig::load_file(config_path);
  std::vector<std::pair<std::string, RunConfig>> variants;
  auto add = [&](const std::string& name, const std::function<void(RunConfig&)>& tweak) {
    RunConfig v = base;
    tweak(v);
    variants.emplace_back(name, std::move(v));
  };
  if (dimension == "history_order") {
    add("descending", [](RunConfig& c) { c.model.history.order = HistoryOrder::descending; });
    add("ascending", [](RunConfig& c) { c.model.history.order = HistoryOrder::ascending; });
    add("random", [](RunConfig& c) { c.model.history.order = HistoryOrder::random_order; });
  } else if (dimension == "context_form") {
    add("pairs", [](RunConfig& c) { c.model.history.form = HistoryForm::pairs; });
    add("entities", [](RunConfig& c) { c.model.history.form = HistoryForm::entities; });
  } else if (dimension == "prefix_length") {
    for (int m : {2, 4, 6, 10, 15, 20, 50})
      add(std::to_string(m), [m](RunConfig& c) { c.model.encoder.prefix_len = m; });
  } else if (dimension == "freeze_policy") {
    for (const char* p : {"prefix_only", "last_layer", "last_6_layers", "first_layer", "full"})
      add(p, [p](RunConfig& c) { c.train.freeze_policy = parse_freeze_policy(p); });
  } else if (dimension == "negatives") {
    add("full", [](RunConfig&) {});
    add("w/o pre-batch", [](RunConfig& c) { c.model.loss.pre_batch_depth = 0; });
    add("w/o self", [](RunConfig& c) { c.model.loss.use_self_negatives = false; });
    add("w/o pre-batch & self", [](RunConfig& c) {
      c.model.loss.pre_batch_depth = 0;
      c.model.loss.use_self_negatives = false;
    });
  } else {
    throw UnknownDimension(dimension);
  }

  std::cout << "variant\tMRR\tHits@1\tHits@3\tHits@10\n";
  for (auto& [name, cfg] : variants) {
    Dataset ds = load_dataset(cfg);
    DualEncoderModel model = make_model(cfg, ds);
    RunConfig run = cfg;
    run.train.checkpoint_dir.clear();
    run.train.in_batch_cap = cfg.train.in_batch_cap;
    train(model, ds.train, ds.history_kg, ds.vocabs, run.train, nullptr, nullptr);
    const std::vector<Quadruple>& split = ds.test.empty() ? ds.valid : ds.test;
    if (split.empty()) throw UsageFailure("ablate needs a test or valid split");
    const MetricsReport rep = evaluate_split(model, ds, split);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f\t%.6f\t%.6f", name.c_str(), rep.mrr,
                  rep.hits1, rep.hits3, rep.hits10);
    std::cout << buf << "\n";
  }
  return 0;
}

int cmd_export_corpus(const std::string& config_path, const std::string& split_name,
                      const std::string& out_path) {
  RunConfig cfg = RunConfig::load_file(config_path);
  Dataset ds = load_dataset(cfg);
  const std::vector<Quadruple>* split = nullptr;
  if (split_name == "train") split = &ds.train;
  else if (split_name == "valid") split = &ds.valid;
  else if (split_name == "test") split = &ds.test;
  else throw UsageFailure("unknown split '" + split_name + "' (expected train|valid|test)");

  std::ofstream out(out_path);
  if (!out) throw UsageFailure("cannot open '" + out_path + "' for writing");
  for (const Quadruple& q : *split) {
    const BatchExample ex = make_example(q, ds.history_kg, ds.vocabs, cfg.model);
    out << ex.query_text << '\t' << ex.gold_text << "\t1\n";
    if (q.s != q.o) out << ex.query_text << '\t' << ex.head_text << "\t0\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal-KG link prediction with a history-contextualized dual encoder"};
  app.require_subcommand(1);

  // prepare-data
  std::string pd_train, pd_valid, pd_test, pd_desc, pd_out;
  double pd_ooc = 0.0;
  int pd_shots = 0;
  auto* prepare = app.add_subcommand("prepare-data", "parse, augment, and index a dataset");
  prepare->add_option("--train", pd_train)->required();
  prepare->add_option("--valid", pd_valid)->required();
  prepare->add_option("--test", pd_test)->required();
  prepare->add_option("--descriptions", pd_desc);
  auto* ooc_opt = prepare->add_option("--ooc-entities", pd_ooc,
                                      "fraction of entities held out as unseen");
  prepare->add_option("--shots", pd_shots, "support facts per unseen entity")
      ->needs(ooc_opt);
  prepare->add_option("--out", pd_out)->required();

  // train
  std::string tr_config, tr_out;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_cmd->add_option("--config", tr_config)->required();
  train_cmd->add_option("--out", tr_out, "override output_dir");

  // evaluate
  std::string ev_config, ev_ckpt, ev_split = "test", ev_per_query;
  auto* eval_cmd = app.add_subcommand("evaluate", "rank a split against a checkpoint");
  eval_cmd->add_option("--config", ev_config)->required();
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--split", ev_split, "valid|test");
  eval_cmd->add_option("--per-query", ev_per_query, "write per-query ranks to this file");

  // predict
  std::string pr_config, pr_ckpt, pr_query, pr_desc;
  int pr_k = 10;
  auto* pred_cmd = app.add_subcommand("predict", "top-k entities for \"s|p|t\"");
  pred_cmd->add_option("--config", pr_config)->required();
  pred_cmd->add_option("--checkpoint", pr_ckpt)->required();
  pred_cmd->add_option("--query", pr_query)->required();
  pred_cmd->add_option("--k", pr_k);
  pred_cmd->add_option("--subject-desc", pr_desc,
                       "inline description for an unseen subject");

  // ablate
  std::string ab_config, ab_dim;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare variants");
  ablate_cmd->add_option("--config", ab_config)->required();
  ablate_cmd->add_option("--dimension", ab_dim)->required();

  // export-corpus
  std::string ec_config, ec_split = "train", ec_out;
  auto* export_cmd = app.add_subcommand("export-corpus", "dump prompts as TSV");
  export_cmd->add_option("--config", ec_config)->required();
  export_cmd->add_option("--split", ec_split, "train|valid|test");
  export_cmd->add_option("--out", ec_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prepare->parsed())
      return cmd_prepare_data(pd_train, pd_valid, pd_test, pd_desc, pd_ooc, pd_shots, pd_out);
    if (train_cmd->parsed()) return cmd_train(tr_config, tr_out);
    if (eval_cmd->parsed()) return cmd_evaluate(ev_config, ev_ckpt, ev_split, ev_per_query);
    if (pred_cmd->parsed()) return cmd_predict(pr_config, pr_ckpt, pr_query, pr_k, pr_desc);
    if (ablate_cmd->parsed()) return cmd_ablate(ab_config, ab_dim);
    if (export_cmd->parsed()) return cmd_export_corpus(ec_config, ec_split, ec_out);
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UnknownDimension& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
