// milvid: command-line front end for the multiple-instance video detector.
//
// Exit codes: 0 success, 1 validation/config/usage error, 2 I/O or format error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "milvid/milvid.hpp"

namespace fs = std::filesystem;
using namespace milvid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

fs::path data_dir() {
  if (const char* env = std::getenv("MILVID_DATA_DIR"); env && *env) return env;
  return fs::current_path();
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

void emit(const std::optional<fs::path>& path, const std::string& text) {
  if (path) {
    write_text(*path, text);
  } else {
    std::cout << text;
  }
}

std::vector<std::size_t> parse_dims(const std::string& list) {
  std::vector<std::size_t> dims;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(item, &pos);
      if (pos != item.size() || v == 0) throw std::invalid_argument(item);
      dims.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw config_error("bad layer size '" + item + "' in --hidden");
    }
  }
  return dims;
}

std::vector<OptimizerKind> parse_optimizer_list(const std::string& list) {
  std::vector<OptimizerKind> kinds;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) kinds.push_back(parse_optimizer(item));
  }
  if (kinds.empty()) throw config_error("--optimizers is empty");
  return kinds;
}

// Flags shared by `train` and `compare`.
struct TrainFlags {
  std::string manifest;
  double lambda = 0.001;
  std::uint32_t epochs = 50;
  std::uint32_t batch_bags = 16;
  std::optional<std::size_t> segments;
  std::uint64_t seed = 0;
  std::string hidden = "512,32";
  std::string output_activation = "sigmoid";
  double dropout_rate = 0.6;
  bool no_dropout = false;
  std::optional<double> lr;

  void add_to(CLI::App* app) {
    app->add_option("--manifest", manifest, "Dataset manifest (JSON records); default $MILVID_DATA_DIR/manifest.jsonl");
    app->add_option("--lambda", lambda, "Weight of the 0.5*||W||^2 regularizer")->capture_default_str();
    app->add_option("--epochs", epochs, "Passes over the positive training bags")->capture_default_str();
    app->add_option("--batch-bags", batch_bags, "Bags per batch, split evenly between classes")->capture_default_str();
    app->add_option("--segments", segments, "Mean-pool every bag to this many temporal segments");
    app->add_option("--seed", seed, "Seed for initialization, batching and dropout")->capture_default_str();
    app->add_option("--hidden", hidden, "Comma-separated hidden layer sizes")->capture_default_str();
    app->add_option("--output-activation", output_activation, "sigmoid or tanh")
        ->check(CLI::IsMember({"sigmoid", "tanh"}))
        ->capture_default_str();
    app->add_option("--dropout-rate", dropout_rate, "Dropout after the first hidden layer")->capture_default_str();
    app->add_flag("--no-dropout", no_dropout, "Train without dropout");
    app->add_option("--lr", lr, "Learning rate (default depends on the optimizer)");
  }

  fs::path manifest_path() const { return manifest.empty() ? data_dir() / "manifest.jsonl" : fs::path(manifest); }

  LoadOptions load(Split split) const { return {split, segments}; }

  TrainConfig config(OptimizerKind kind) const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.bags_per_batch = batch_bags;
    cfg.lambda = lambda;
    cfg.optimizer = OptimizerConfig::defaults(kind);
    if (lr) cfg.optimizer.lr = *lr;
    cfg.seed = seed;
    cfg.dropout = !no_dropout;
    cfg.hidden_dims = parse_dims(hidden);
    cfg.model.output_activation = parse_activation(output_activation);
    cfg.model.dropout_rate = dropout_rate;
    return cfg;
  }
};

int run_gen(const SynthConfig& cfg, const std::optional<fs::path>& out) {
  const auto dir = out.value_or(data_dir());
  const auto manifest = synthesize_dataset(cfg, dir);
  std::cout << manifest.string() << "\n";
  return kExitOk;
}

int run_train(const TrainFlags& flags, const std::string& optimizer, const fs::path& out,
              std::optional<fs::path> log_path, std::uint32_t checkpoint_every, std::optional<fs::path> checkpoint,
              const std::optional<fs::path>& resume, std::uint32_t eval_every) {
  auto cfg = flags.config(parse_optimizer(optimizer));
  cfg.checkpoint_every = checkpoint_every;
  cfg.checkpoint_path = checkpoint.value_or(fs::path(out.string() + ".ckpt"));
  cfg.eval_every = eval_every;

  const auto manifest = flags.manifest_path();
  const auto train_set = load_dataset(manifest, flags.load(Split::train));
  Dataset validation;
  if (eval_every > 0) validation = load_dataset(manifest, flags.load(Split::test));

  std::optional<TrainingState> state;
  if (resume) state = load_checkpoint(*resume);

  const auto result = train(train_set, cfg, validation.bags, std::move(state));
  save_model(result.model, out);
  if (result.best_model) save_model(*result.best_model, fs::path(out.string() + ".best"));
  write_text(log_path.value_or(fs::path(out.string() + ".log.csv")), log_to_csv(result.log));

  std::cout << "iterations " << result.state.iterations << "\n";
  if (!result.log.rows.empty()) std::cout << "final_objective " << format_double(result.log.rows.back().objective) << "\n";
  if (result.log.best_val_auc) std::cout << "best_val_auc " << format_double(*result.log.best_val_auc) << "\n";
  std::cout << "model " << out.string() << "\n";
  return kExitOk;
}

int run_compare(const TrainFlags& flags, const std::string& optimizers, const std::optional<fs::path>& report) {
  const auto kinds = parse_optimizer_list(optimizers);
  const auto manifest = flags.manifest_path();
  const auto train_set = load_dataset(manifest, flags.load(Split::train));
  const auto test_set = load_dataset(manifest, flags.load(Split::test));
  const auto base = flags.config(kinds.front());
  const auto rows = compare_optimizers(train_set, test_set.bags, base, kinds, flags.lr);
  const auto table = format_comparison(rows);
  std::cout << table;
  if (report) write_text(*report, table);
  return kExitOk;
}

int run_score(const fs::path& model_path, const fs::path& features, std::optional<double> threshold,
              std::optional<std::size_t> segments, const std::optional<fs::path>& out) {
  const auto model = load_model(model_path);
  auto bag = assemble_bag(read_features(features), 1, features.stem().string());
  if (segments) bag = pool_segments(bag, *segments);
  const double thr = threshold.value_or(default_threshold(model.options().output_activation));

  std::string csv = "clip,score\n";
  for (std::size_t i = 0; i < bag.size(); ++i) {
    csv += std::to_string(bag.instances[i].temporal_index) + "," +
           format_double(score(model, bag.instances[i].features)) + "\n";
  }
  const auto bs = bag_score(model, bag);
  csv += std::string("# verdict=") + (bs.score > thr ? "positive" : "negative") +
         " bag_score=" + format_double(bs.score) + " argmax_clip=" + std::to_string(bs.argmax_index) +
         " threshold=" + format_double(thr) + "\n";
  emit(out, csv);
  return kExitOk;
}

int run_eval(const fs::path& model_path, const std::string& manifest, const std::string& split,
             std::optional<double> threshold, std::optional<std::size_t> segments, const std::optional<fs::path>& out) {
  const auto model = load_model(model_path);
  const auto path = manifest.empty() ? data_dir() / "manifest.jsonl" : fs::path(manifest);
  const auto ds = load_dataset(path, {parse_split(split), segments});
  const double thr = threshold.value_or(default_threshold(model.options().output_activation));
  const auto rep = evaluate_bags(model, ds.bags, thr);
  emit(out, to_json(rep).dump(2) + "\n");
  return kExitOk;
}

int run_roc(const fs::path& model_path, const std::string& manifest, const std::string& split,
            std::optional<std::size_t> segments, const fs::path& out) {
  const auto model = load_model(model_path);
  const auto path = manifest.empty() ? data_dir() / "manifest.jsonl" : fs::path(manifest);
  const auto ds = load_dataset(path, {parse_split(split), segments});
  std::vector<Scored> scored;
  for (const auto& v : score_bags(model, ds.bags)) scored.push_back({v.score, v.label});
  const auto roc = roc_auc(scored);
  write_text(out, roc_to_csv(roc));
  char pct[32];
  std::snprintf(pct, sizeof pct, "%.2f%%", 100.0 * roc.auc);
  std::cout << "auc " << format_double(roc.auc) << " (" << pct << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-instance detector for video segment features"};
  app.set_config("--config", "", "TOML/INI file with default flag values");
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Synthesize a planted-witness dataset");
  SynthConfig synth;
  synth.dim = kDefaultFeatureDim;
  std::optional<fs::path> gen_out;
  gen->add_option("--out", gen_out, "Output directory (default $MILVID_DATA_DIR or .)");
  gen->add_option("--dim", synth.dim, "Feature dimensionality")->capture_default_str();
  gen->add_option("--pos", synth.n_pos_bags, "Positive training bags")->capture_default_str();
  gen->add_option("--neg", synth.n_neg_bags, "Negative training bags")->capture_default_str();
  gen->add_option("--test-pos", synth.n_test_pos_bags, "Positive test bags")->capture_default_str();
  gen->add_option("--test-neg", synth.n_test_neg_bags, "Negative test bags")->capture_default_str();
  gen->add_option("--instances", synth.instances_per_bag, "Instances per bag")->capture_default_str();
  gen->add_option("--witness-rate", synth.witness_rate, "Fraction of witness instances in positive bags")
      ->capture_default_str();
  gen->add_option("--shift", synth.shift_magnitude, "Witness mean shift along the planted direction")
      ->capture_default_str();
  gen->add_option("--noise", synth.noise_std, "Instance noise standard deviation")->capture_default_str();
  gen->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a scorer on the manifest's train split");
  TrainFlags train_flags;
  train_flags.add_to(tr);
  std::string optimizer = "sgd";
  fs::path model_out;
  std::optional<fs::path> log_path, checkpoint, resume;
  std::uint32_t checkpoint_every = 0, eval_every = 0;
  tr->add_option("--optimizer", optimizer, "sgd, adam, adagrad or rmsprop")
      ->check(CLI::IsMember({"sgd", "adam", "adagrad", "rmsprop"}))
      ->capture_default_str();
  tr->add_option("--out", model_out, "Model file to write")->required();
  tr->add_option("--log", log_path, "Training log CSV (default <out>.log.csv)");
  tr->add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every N epochs (0: never)")
      ->capture_default_str();
  tr->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>.ckpt)");
  tr->add_option("--resume", resume, "Continue from a checkpoint");
  tr->add_option("--eval-every", eval_every, "Score the test split every N epochs and keep the best model")
      ->capture_default_str();

  // compare
  auto* cmp = app.add_subcommand("compare", "Train one model per optimizer and report test AUC");
  TrainFlags compare_flags;
  compare_flags.add_to(cmp);
  std::string optimizers = "rmsprop,adagrad,adam,sgd";
  std::optional<fs::path> report;
  cmp->add_option("--optimizers", optimizers, "Comma-separated optimizer list")->capture_default_str();
  cmp->add_option("--report", report, "Also write the table to this file");

  // score
  auto* sc = app.add_subcommand("score", "Score every clip of one feature file");
  fs::path score_model, score_features;
  std::optional<double> score_threshold;
  std::optional<std::size_t> score_segments;
  std::optional<fs::path> score_out;
  sc->add_option("--model", score_model, "Model file")->required();
  sc->add_option("--features", score_features, "MIL1 or CSV feature file")->required();
  sc->add_option("--threshold", score_threshold, "Decision threshold (default 0.5 sigmoid, 0 tanh)");
  sc->add_option("--segments", score_segments, "Mean-pool to this many segments first");
  sc->add_option("--out", score_out, "Write CSV here instead of stdout");

  // eval
  auto* ev = app.add_subcommand("eval", "Bag-level confusion counts, rates and AUC as JSON");
  fs::path eval_model;
  std::string eval_manifest, eval_split = "test";
  std::optional<double> eval_threshold;
  std::optional<std::size_t> eval_segments;
  std::optional<fs::path> eval_out;
  ev->add_option("--model", eval_model, "Model file")->required();
  ev->add_option("--manifest", eval_manifest, "Dataset manifest");
  ev->add_option("--split", eval_split, "train or test")->capture_default_str();
  ev->add_option("--threshold", eval_threshold, "Decision threshold (default 0.5 sigmoid, 0 tanh)");
  ev->add_option("--segments", eval_segments, "Mean-pool every bag to this many segments");
  ev->add_option("--out", eval_out, "Write JSON here instead of stdout");

  // roc
  auto* rc = app.add_subcommand("roc", "Bag-level ROC curve as CSV, AUC on stdout");
  fs::path roc_model, roc_out = "roc.csv";
  std::string roc_manifest, roc_split = "test";
  std::optional<std::size_t> roc_segments;
  rc->add_option("--model", roc_model, "Model file")->required();
  rc->add_option("--manifest", roc_manifest, "Dataset manifest");
  rc->add_option("--split", roc_split, "train or test")->capture_default_str();
  rc->add_option("--segments", roc_segments, "Mean-pool every bag to this many segments");
  rc->add_option("--out", roc_out, "ROC CSV path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return run_gen(synth, gen_out);
    if (*tr) {
      return run_train(train_flags, optimizer, model_out, log_path, checkpoint_every, checkpoint, resume, eval_every);
    }
    if (*cmp) return run_compare(compare_flags, optimizers, report);
    if (*sc) return run_score(score_model, score_features, score_threshold, score_segments, score_out);
    if (*ev) return run_eval(eval_model, eval_manifest, eval_split, eval_threshold, eval_segments, eval_out);
    if (*rc) return run_roc(roc_model, roc_manifest, roc_split, roc_segments, roc_out);
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
