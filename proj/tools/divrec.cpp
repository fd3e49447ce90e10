// divrec: end-to-end driver for the diversified GCN recommender.
// Subcommands: synth, prepare, train, evaluate, rerank, sweep.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <filesystem>
#include <iostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "divrec/checkpoint.hpp"
#include "divrec/csv.hpp"
#include "divrec/data.hpp"
#include "divrec/dataset_io.hpp"
#include "divrec/eval.hpp"
#include "divrec/model.hpp"
#include "divrec/optim.hpp"
#include "divrec/rerank.hpp"
#include "divrec/synth.hpp"

namespace fs = std::filesystem;
using namespace divrec;

namespace {

void refuse_existing(const std::string& path, bool force) {
  if (!force && fs::exists(path))
    throw std::runtime_error(path + " already exists, pass --force to overwrite");
}

// The --config flag itself is handled before CLI11 runs (see expand_config in
// main); the option here only documents it and swallows the value if CLI11
// ever sees one.
void configure_common(CLI::App* sub) {
  static std::string sink;
  sub->add_option("--config", sink, "flat key=value config file; command-line flags win");
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Turns a flat key=value file into --key=value tokens. Keys are the long
// option names of the subcommand without the leading dashes.
std::vector<std::string> load_config_args(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::runtime_error("config: expected key=value at " + path + ":" +
                               std::to_string(line_no));
    auto key = trim(text.substr(0, eq));
    auto value = trim(text.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::runtime_error("config: empty key or value at " + path + ":" +
                               std::to_string(line_no));
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

// Splices config-file tokens in right after the subcommand name, so values
// given on the command line come later and win under the take-last policy.
void expand_config(std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size();) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw std::runtime_error("--config needs a file path");
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  if (config_path.empty()) return;
  auto extra = load_config_args(config_path);
  auto at = args.empty() ? args.begin() : args.begin() + 1;
  args.insert(at, extra.begin(), extra.end());
}

// Bound to CLI flags for train and sweep.
void add_train_options(CLI::App* sub, TrainConfig& cfg) {
  sub->add_option("--batch-size", cfg.batch_size, "positives per batch");
  sub->add_option("--epochs", cfg.epochs, "epoch cap");
  sub->add_option("--patience", cfg.patience, "early stopping patience");
  sub->add_option("--lr", cfg.lr, "AMSGrad learning rate");
  sub->add_option("--dropout", cfg.dropout_p, "dropout between conv layers");
  sub->add_option("--alpha", cfg.alpha, "rebalance exponent");
  sub->add_option("--beta", cfg.beta, "same-category negative boost");
  sub->add_option("--gamma", cfg.gamma, "gradient reversal strength");
  sub->add_option("--negative-rate", cfg.negative_rate, "negatives per positive");
  sub->add_option("--fanout", cfg.fanout, "sampled neighbors per hop");
  sub->add_option("--depth", cfg.depth, "graph conv layers");
  sub->add_option("--dim", cfg.dim, "embedding dimension");
  sub->add_option("--seed", cfg.seed, "rng seed");
  sub->add_option("--eval-k", cfg.eval_k, "validation list length");
  sub->add_option("--exclude-train-negatives", cfg.exclude_train_negatives,
                  "reject the user's train items as negatives");
  sub->add_option("--exclude-train-items", cfg.exclude_train_items,
                  "drop train items from retrieval candidates");
}

nlohmann::json config_json(const TrainConfig& c) {
  return nlohmann::json{{"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"patience", c.patience},
                        {"lr", c.lr},
                        {"dropout", c.dropout_p},
                        {"alpha", c.alpha},
                        {"beta", c.beta},
                        {"gamma", c.gamma},
                        {"negative_rate", c.negative_rate},
                        {"fanout", c.fanout},
                        {"depth", c.depth},
                        {"dim", c.dim},
                        {"seed", c.seed},
                        {"eval_k", c.eval_k},
                        {"exclude_train_negatives", c.exclude_train_negatives},
                        {"exclude_train_items", c.exclude_train_items}};
}

void check_checkpoint_matches(const ModelParameters& params, const LoadedDataset& data,
                              const std::string& path) {
  if (params.num_users != data.graph.num_users || params.num_items != data.graph.num_items ||
      params.num_categories != data.table.num_categories)
    throw std::runtime_error(
        "checkpoint " + path + " header (" + std::to_string(params.num_users) + " users, " +
        std::to_string(params.num_items) + " items, " + std::to_string(params.num_categories) +
        " categories) does not match the dataset (" + std::to_string(data.graph.num_users) +
        " users, " + std::to_string(data.graph.num_items) + " items, " +
        std::to_string(data.table.num_categories) + " categories)");
}

void write_item_reps(const Representations& reps, const IndexMaps& maps, const std::string& path) {
  auto out = open_output(path);
  out << "item_id";
  for (int c = 0; c < reps.item.cols; ++c) out << ",v" << c;
  out << "\n";
  for (int32_t i = 0; i < reps.item.rows; ++i) {
    out << maps.item_ids[i];
    for (int c = 0; c < reps.item.cols; ++c) out << ',' << format_metric(reps.item(i, c));
    out << "\n";
  }
}

MetricsReport evaluate_params(const ModelParameters& params, const LoadedDataset& data,
                              int keval, bool exclude_train, const std::string& split,
                              Representations* reps_out = nullptr) {
  auto reps = infer_all(data.graph, params);
  std::vector<std::unordered_set<int32_t>> exclusions;
  if (exclude_train) {
    exclusions.assign(data.graph.num_users, {});
    for (const auto& [u, i] : data.train_pairs) exclusions[u].insert(i);
  }
  auto recs = retrieve_topk(reps, keval, exclusions);
  const auto& pairs = split == "validation" ? data.val_pairs : data.test_pairs;
  auto sets = test_sets_by_user(pairs, data.graph.num_users);
  auto report = make_report(recs, sets, data.table, keval);
  if (reps_out) *reps_out = std::move(reps);
  return report;
}

int cmd_synth(const SynthConfig& cfg, const std::string& out_dir, bool force) {
  fs::create_directories(out_dir);
  auto interactions = (fs::path(out_dir) / "interactions.csv").string();
  auto categories = (fs::path(out_dir) / "categories.csv").string();
  refuse_existing(interactions, force);
  auto data = make_synth(cfg);
  write_interactions_csv(data.interactions, interactions);
  write_categories_csv(data.categories, categories);
  std::cout << "wrote " << interactions << " (" << data.interactions.size() << " events) and "
            << categories << "\n";
  return 0;
}

int cmd_prepare(const std::string& interactions_path, const std::string& categories_path,
                int kcore, const SplitRatios& ratios, const std::string& out_dir, bool force) {
  refuse_existing((fs::path(out_dir) / "stats.json").string(), force);
  auto in = open_input(interactions_path);
  auto raw = ingest_interactions(in);
  auto cin = open_input(categories_path);
  auto cats = ingest_categories(cin);
  auto prepared = prepare_dataset(raw, cats, kcore, ratios);
  save_prepared(prepared, out_dir);
  std::cout << "prepared " << out_dir << ": " << prepared.gb.graph.num_users << " users, "
            << prepared.gb.graph.num_items << " items, " << prepared.table.num_categories
            << " categories, " << prepared.split.train.size() << "/"
            << prepared.split.validation.size() << "/" << prepared.split.test.size()
            << " train/validation/test\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const TrainConfig& cfg, const std::string& out_dir,
              bool force) {
  auto data = load_prepared(data_dir);
  fs::create_directories(out_dir);
  auto ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  auto log_path = (fs::path(out_dir) / "training_log.csv").string();
  refuse_existing(ckpt_path, force);

  auto result = fit(data.graph, data.table, data.train_pairs, data.val_pairs, cfg);

  nlohmann::json meta;
  meta["dataset"] = data_dir;
  meta["users"] = data.graph.num_users;
  meta["items"] = data.graph.num_items;
  meta["categories"] = data.table.num_categories;
  meta["config"] = config_json(cfg);
  meta["best_epoch"] = result.best_epoch;
  meta["best_val_recall"] = result.best_recall;
  save_checkpoint(ckpt_path, result.params, meta);
  write_training_log(result.log, log_path);
  std::cout << "trained " << result.log.size() << " epochs, best epoch " << result.best_epoch
            << " (val recall " << result.best_recall << "), wrote " << ckpt_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& data_dir, const std::string& ckpt_path,
                 const std::string& split, int keval, bool exclude_train,
                 const std::string& out_dir, const std::string& dump_reps, bool force) {
  auto data = load_prepared(data_dir);
  auto params = load_checkpoint(ckpt_path);
  check_checkpoint_matches(params, data, ckpt_path);

  fs::create_directories(out_dir);
  auto csv_path = (fs::path(out_dir) / "metrics.csv").string();
  auto json_path = (fs::path(out_dir) / "metrics.json").string();
  refuse_existing(csv_path, force);

  Representations reps;
  auto report = evaluate_params(params, data, keval, exclude_train, split, &reps);
  write_metrics_csv(report, csv_path);
  write_metrics_json(report, json_path);
  if (!dump_reps.empty()) write_item_reps(reps, data.maps, dump_reps);
  std::cout << split << " metrics over " << report.users.size() << " users: recall "
            << report.mean.recall << ", hit " << report.mean.hit << ", coverage "
            << report.mean.coverage << ", entropy " << report.mean.entropy << ", gini "
            << report.mean.gini << "; wrote " << csv_path << "\n";
  return 0;
}

struct RawCandidate {
  std::string item_id;
  double score = 0.0;
  std::string category_id;
};

std::vector<RawCandidate> read_candidates(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv(line) != std::vector<std::string>{"item_id", "score", "category_id"})
    throw std::runtime_error("candidates: expected header item_id,score,category_id in " + path);
  std::vector<RawCandidate> out;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 3 || f[0].empty() || f[2].empty())
      throw std::runtime_error("candidates: malformed row at line " + std::to_string(line_no));
    out.push_back({f[0], parse_double(f[1], "score"), f[2]});
  }
  if (out.empty()) throw std::runtime_error("candidates: no rows in " + path);
  return out;
}

std::unordered_map<std::string, std::vector<double>> read_item_reps(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("item reps: empty file " + path);
  auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "item_id")
    throw std::runtime_error("item reps: bad header in " + path);
  std::unordered_map<std::string, std::vector<double>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != header.size())
      throw std::runtime_error("item reps: malformed row in " + path);
    std::vector<double> v(f.size() - 1);
    for (std::size_t j = 1; j < f.size(); ++j) v[j - 1] = parse_double(f[j], "rep value");
    out.emplace(f[0], std::move(v));
  }
  return out;
}

int cmd_rerank(const std::string& candidates_path, const std::string& method, double lambda,
               int kout, const std::string& similarity, const std::string& reps_path,
               const std::string& out_path, bool force) {
  refuse_existing(out_path, force);
  auto raw = read_candidates(candidates_path);
  if (kout == 0) kout = static_cast<int>(raw.size());

  // dense candidate indices in input order; ties resolve to the earlier row
  std::vector<Candidate> candidates(raw.size());
  std::unordered_map<std::string, int32_t> cat_index;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    candidates[j].item = static_cast<int32_t>(j);
    candidates[j].relevance = raw[j].score;
    auto [it, inserted] = cat_index.emplace(raw[j].category_id,
                                            static_cast<int32_t>(cat_index.size()));
    candidates[j].category = it->second;
  }

  std::vector<int32_t> order;
  if (method == "dum") {
    order = dum_rerank(candidates, kout);
  } else if (similarity == "cosine") {
    auto reps = read_item_reps(reps_path);
    for (const auto& rc : raw)
      if (reps.find(rc.item_id) == reps.end())
        throw std::runtime_error("rerank: no representation for item " + rc.item_id);
    auto sim = [&](const Candidate& a, const Candidate& b) {
      const auto& x = reps.at(raw[a.item].item_id);
      const auto& y = reps.at(raw[b.item].item_id);
      double num = dot(x.data(), y.data(), static_cast<int>(x.size()));
      double nx = std::sqrt(dot(x.data(), x.data(), static_cast<int>(x.size())));
      double ny = std::sqrt(dot(y.data(), y.data(), static_cast<int>(y.size())));
      return nx > 0.0 && ny > 0.0 ? num / (nx * ny) : 0.0;
    };
    order = mmr_rerank(candidates, lambda, kout, sim);
  } else {
    order = mmr_rerank(candidates, lambda, kout);
  }

  auto out = open_output(out_path);
  out << "item_id,score,category_id\n";
  for (int32_t j : order)
    out << raw[j].item_id << ',' << format_metric(raw[j].score) << ',' << raw[j].category_id
        << "\n";
  std::cout << "wrote " << out_path << " (" << order.size() << " items, " << method << ")\n";
  return 0;
}

int cmd_sweep(const std::string& data_dir, const std::string& param,
              const std::vector<double>& values, const TrainConfig& base, const std::string& split,
              int keval, const std::string& out_path, bool force) {
  refuse_existing(out_path, force);
  auto data = load_prepared(data_dir);

  auto out = open_output(out_path);
  out << "param,value,recall,hit,coverage,entropy,gini\n";
  for (double value : values) {
    TrainConfig cfg = base;
    if (param == "alpha")
      cfg.alpha = value;
    else if (param == "beta")
      cfg.beta = value;
    else
      cfg.gamma = value;
    auto result = fit(data.graph, data.table, data.train_pairs, data.val_pairs, cfg);
    auto report = evaluate_params(result.params, data, keval, cfg.exclude_train_items, split);
    out << param << ',' << format_metric(value) << ',' << format_metric(report.mean.recall) << ','
        << format_metric(report.mean.hit) << ',' << format_metric(report.mean.coverage) << ','
        << format_metric(report.mean.entropy) << ',' << format_metric(report.mean.gini) << "\n";
    std::cout << param << "=" << value << ": recall " << report.mean.recall << ", coverage "
              << report.mean.coverage << "\n";
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diversified GCN recommender"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic interaction log");
  configure_common(synth);
  SynthConfig synth_cfg;
  std::string synth_out = "synth_data";
  bool synth_force = false;
  synth->add_option("--users", synth_cfg.users, "user count");
  synth->add_option("--items", synth_cfg.items, "item count");
  synth->add_option("--categories", synth_cfg.categories, "category count");
  synth->add_option("--bias", synth_cfg.dominant_bias, "dominant-category probability");
  synth->add_option("--events", synth_cfg.events_per_user, "interactions per user");
  synth->add_option("--seed", synth_cfg.seed, "rng seed");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_flag("--force", synth_force, "overwrite existing output");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "ingest, k-core filter, split, build graph");
  configure_common(prepare);
  std::string prep_interactions, prep_categories, prep_out = "prepared";
  int prep_kcore = 10;
  SplitRatios prep_ratios;
  bool prep_force = false;
  prepare->add_option("--interactions", prep_interactions, "interactions CSV")->required();
  prepare->add_option("--categories", prep_categories, "item categories CSV")->required();
  prepare->add_option("--kcore", prep_kcore, "minimum interactions per user/item");
  prepare->add_option("--train-ratio", prep_ratios.train, "train fraction");
  prepare->add_option("--validation-ratio", prep_ratios.validation, "validation fraction");
  prepare->add_option("--test-ratio", prep_ratios.test, "test fraction");
  prepare->add_option("--out", prep_out, "output directory");
  prepare->add_flag("--force", prep_force, "overwrite existing output");

  // train
  auto* train = app.add_subcommand("train", "fit a model on a prepared dataset");
  configure_common(train);
  std::string train_data, train_out = "run";
  TrainConfig train_cfg;
  bool train_force = false;
  train->add_option("--data", train_data, "prepared dataset directory")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--force", train_force, "overwrite existing output");
  add_train_options(train, train_cfg);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a held-out split");
  configure_common(evaluate);
  std::string eval_data, eval_ckpt, eval_split = "test", eval_out = "eval", eval_dump;
  int eval_k = 300;
  bool eval_exclude_train = true, eval_force = false;
  evaluate->add_option("--data", eval_data, "prepared dataset directory")->required();
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  evaluate->add_option("--split", eval_split, "validation or test")
      ->check(CLI::IsMember({"validation", "test"}));
  evaluate->add_option("--keval", eval_k, "recommendation list length");
  evaluate->add_option("--exclude-train-items", eval_exclude_train,
                       "drop train items from retrieval candidates");
  evaluate->add_option("--out", eval_out, "output directory");
  evaluate->add_option("--dump-item-reps", eval_dump, "also write item representations CSV");
  evaluate->add_flag("--force", eval_force, "overwrite existing output");

  // rerank
  auto* rerank = app.add_subcommand("rerank", "diversity re-rank a scored candidate list");
  configure_common(rerank);
  std::string rr_candidates, rr_method = "mmr", rr_similarity = "category", rr_reps;
  std::string rr_out = "reranked.csv";
  double rr_lambda = 0.5;
  int rr_kout = 0;
  bool rr_force = false;
  rerank->add_option("--candidates", rr_candidates, "CSV item_id,score,category_id")->required();
  rerank->add_option("--method", rr_method, "mmr or dum")->check(CLI::IsMember({"mmr", "dum"}));
  rerank->add_option("--lambda", rr_lambda, "MMR relevance weight");
  rerank->add_option("--kout", rr_kout, "output length (default: all candidates)");
  rerank->add_option("--similarity", rr_similarity, "MMR similarity: category or cosine")
      ->check(CLI::IsMember({"category", "cosine"}));
  rerank->add_option("--item-reps", rr_reps, "item representations CSV (cosine similarity)");
  rerank->add_option("--out", rr_out, "output CSV");
  rerank->add_flag("--force", rr_force, "overwrite existing output");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train and evaluate across a hyperparameter grid");
  configure_common(sweep);
  std::string sw_data, sw_param, sw_split = "test", sw_out = "sweep.csv";
  std::vector<double> sw_values;
  TrainConfig sw_cfg;
  int sw_keval = 300;
  bool sw_force = false;
  sweep->add_option("--data", sw_data, "prepared dataset directory")->required();
  sweep->add_option("--param", sw_param, "alpha, beta or gamma")
      ->required()
      ->check(CLI::IsMember({"alpha", "beta", "gamma"}));
  sweep->add_option("--values", sw_values, "grid values")->required()->delimiter(',');
  sweep->add_option("--split", sw_split, "validation or test")
      ->check(CLI::IsMember({"validation", "test"}));
  sweep->add_option("--keval", sw_keval, "recommendation list length");
  sweep->add_option("--out", sw_out, "output CSV");
  sweep->add_flag("--force", sw_force, "overwrite existing output");
  add_train_options(sweep, sw_cfg);

  // Config values are injected as leading tokens, so every multi-use option
  // must keep the last value seen for command-line flags to win.
  for (CLI::App* sub : app.get_subcommands(std::function<bool(CLI::App*)>{}))
    for (CLI::Option* opt : sub->get_options())
      if (opt->get_expected_min() > 0)
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    expand_config(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_cfg, synth_out, synth_force);
    if (prepare->parsed())
      return cmd_prepare(prep_interactions, prep_categories, prep_kcore, prep_ratios, prep_out,
                         prep_force);
    if (train->parsed()) return cmd_train(train_data, train_cfg, train_out, train_force);
    if (evaluate->parsed())
      return cmd_evaluate(eval_data, eval_ckpt, eval_split, eval_k, eval_exclude_train, eval_out,
                          eval_dump, eval_force);
    if (rerank->parsed())
      return cmd_rerank(rr_candidates, rr_method, rr_lambda, rr_kout, rr_similarity, rr_reps,
                        rr_out, rr_force);
    if (sweep->parsed())
      return cmd_sweep(sw_data, sw_param, sw_values, sw_cfg, sw_split, sw_keval, sw_out, sw_force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
