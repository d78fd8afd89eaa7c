#pragma once

// Training loop and optimizer comparison harness.
//
// An epoch is one pass over the positive training bags. Each batch pairs
// max(1, B/2) positives with max(1, B - B/2) negatives; negatives are drawn
// from a per-epoch shuffle and wrap around when they run out. Shuffles and
// dropout masks are derived from (seed, epoch) and (seed, iteration), so a
// run resumed from a checkpoint replays the uninterrupted run exactly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milvid/bag_model.hpp"
#include "milvid/binary_io.hpp"
#include "milvid/container.hpp"
#include "milvid/error.hpp"
#include "milvid/evaluation.hpp"
#include "milvid/mil_objective.hpp"
#include "milvid/optimizers.hpp"
#include "milvid/random.hpp"
#include "milvid/scorer_net.hpp"

namespace milvid {

struct TrainConfig {
  std::uint32_t epochs = 50;
  std::uint32_t bags_per_batch = 16;
  double lambda = 0.001;
  OptimizerConfig optimizer = OptimizerConfig::defaults(OptimizerKind::sgd);
  std::uint64_t seed = 0;
  bool dropout = true;
  std::vector<std::size_t> hidden_dims{512, 32};
  ModelOptions model;

  std::uint32_t checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_path;
  std::uint32_t eval_every = 0;  // epochs; 0 disables validation

  void validate() const {
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (bags_per_batch < 1) throw config_error("bags_per_batch must be >= 1");
    check_lambda(lambda);
    optimizer.validate();
    if (checkpoint_every > 0 && checkpoint_path.empty()) {
      throw config_error("checkpoint interval set without a checkpoint path");
    }
  }
};

struct LogRow {
  std::uint64_t iteration = 0;  // 1-based optimizer step
  std::uint32_t epoch = 0;      // 1-based
  double objective = 0.0;       // batch objective before the step
  std::optional<double> val_auc;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<LogRow> rows;
  std::optional<double> best_val_auc;
};

// Everything needed to continue a run bit-for-bit.
struct TrainingState {
  ScoringModel model;
  OptimizerConfig optimizer;
  OptimizerState optimizer_state;
  std::uint32_t epochs_completed = 0;
  std::uint64_t iterations = 0;
  // Run identity, checked on resume.
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::uint32_t bags_per_batch = 0;
  bool dropout = true;
  // Best validation snapshot, if validation ran.
  std::optional<double> best_val_auc;
  std::optional<ScoringModel> best_model;

  friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

struct TrainResult {
  ScoringModel model;
  std::optional<ScoringModel> best_model;
  TrainLog log;
  TrainingState state;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline std::vector<unsigned char> serialize_checkpoint(const TrainingState& st) {
  io::ByteWriter w;
  encode_model_payload(st.model, w);
  encode_optimizer(st.optimizer, st.optimizer_state, w);
  w.u32(st.epochs_completed);
  w.u64(st.iterations);
  w.u64(st.seed);
  w.f64(st.lambda);
  w.u32(st.bags_per_batch);
  w.u8(st.dropout ? 1 : 0);
  w.u8(st.best_val_auc ? 1 : 0);
  w.f64(st.best_val_auc.value_or(0.0));
  w.u8(st.best_model ? 1 : 0);
  if (st.best_model) encode_model_payload(*st.best_model, w);
  return wrap_container(ContainerKind::checkpoint, w.data());
}

inline TrainingState deserialize_checkpoint(std::span<const unsigned char> bytes) {
  io::ByteReader r(unwrap_container(bytes, ContainerKind::checkpoint));
  TrainingState st;
  st.model = decode_model_payload(r);
  decode_optimizer(r, st.optimizer, st.optimizer_state);
  if (st.optimizer_state.size() != st.model.params().size()) {
    throw format_error("optimizer state does not match the model's parameter count");
  }
  st.epochs_completed = r.u32();
  st.iterations = r.u64();
  st.seed = r.u64();
  st.lambda = r.f64();
  st.bags_per_batch = r.u32();
  st.dropout = r.u8() != 0;
  const bool has_auc = r.u8() != 0;
  const double auc = r.f64();
  if (has_auc) st.best_val_auc = auc;
  if (r.u8() != 0) st.best_model = decode_model_payload(r);
  if (r.remaining() != 0) throw format_error("trailing bytes after checkpoint payload");
  return st;
}

inline void save_checkpoint(const TrainingState& st, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(st));
}

inline TrainingState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Batching

struct BatchPlan {
  std::size_t positives_per_batch = 1;
  std::size_t negatives_per_batch = 1;
  std::size_t batches_per_epoch = 1;
};

inline BatchPlan plan_batches(std::size_t n_pos, std::uint32_t bags_per_batch) {
  BatchPlan p;
  p.positives_per_batch = std::max<std::size_t>(1, bags_per_batch / 2);
  p.negatives_per_batch = std::max<std::size_t>(1, bags_per_batch - p.positives_per_batch);
  p.batches_per_epoch = (n_pos + p.positives_per_batch - 1) / p.positives_per_batch;
  return p;
}

// Bag indices for every batch of one epoch, positives first within a batch.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> pos,
                                                           std::span<const std::size_t> neg,
                                                           std::uint32_t bags_per_batch, std::uint64_t seed,
                                                           std::uint32_t epoch) {
  if (pos.empty() || neg.empty()) throw config_error("batches need both positive and negative bags");
  std::vector<std::size_t> p(pos.begin(), pos.end());
  std::vector<std::size_t> n(neg.begin(), neg.end());
  auto rng_p = seeded_rng(seed, {0x706f73, epoch});
  auto rng_n = seeded_rng(seed, {0x6e6567, epoch});
  std::shuffle(p.begin(), p.end(), rng_p);
  std::shuffle(n.begin(), n.end(), rng_n);

  const auto plan = plan_batches(p.size(), bags_per_batch);
  std::vector<std::vector<std::size_t>> batches;
  batches.reserve(plan.batches_per_epoch);
  std::size_t neg_cursor = 0;
  for (std::size_t b = 0; b < plan.batches_per_epoch; ++b) {
    std::vector<std::size_t> batch;
    const std::size_t lo = b * plan.positives_per_batch;
    const std::size_t hi = std::min(p.size(), lo + plan.positives_per_batch);
    batch.insert(batch.end(), p.begin() + static_cast<std::ptrdiff_t>(lo), p.begin() + static_cast<std::ptrdiff_t>(hi));
    for (std::size_t k = 0; k < plan.negatives_per_batch; ++k) {
      batch.push_back(n[neg_cursor]);
      neg_cursor = (neg_cursor + 1) % n.size();
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Training

inline std::vector<std::size_t> layer_dims_for(std::size_t input_dim, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

inline TrainingState initial_state(const Dataset& train_set, const TrainConfig& cfg) {
  TrainingState st;
  st.model = init_glorot_normal(layer_dims_for(train_set.dim, cfg.hidden_dims), cfg.seed, cfg.model);
  st.optimizer = cfg.optimizer;
  st.optimizer_state = OptimizerState(st.model.params().size());
  st.seed = cfg.seed;
  st.lambda = cfg.lambda;
  st.bags_per_batch = cfg.bags_per_batch;
  st.dropout = cfg.dropout;
  return st;
}

inline void check_resume_compatible(const TrainingState& st, const Dataset& train_set, const TrainConfig& cfg) {
  if (st.model.input_dim() != train_set.dim) throw config_error("checkpoint input dim does not match the dataset");
  if (st.seed != cfg.seed || st.lambda != cfg.lambda || st.bags_per_batch != cfg.bags_per_batch ||
      st.dropout != cfg.dropout || st.optimizer.kind != cfg.optimizer.kind || st.optimizer.lr != cfg.optimizer.lr) {
    throw config_error("checkpoint was produced with a different training configuration");
  }
  if (st.epochs_completed > cfg.epochs) throw config_error("checkpoint is already past the requested epoch count");
}

// Called after every optimizer step; the trainer never writes to stdout itself.
using ProgressFn = std::function<void(const LogRow&)>;

inline TrainResult train(const Dataset& train_set, const TrainConfig& cfg, std::span<const Bag> validation = {},
                         std::optional<TrainingState> resume = std::nullopt, const ProgressFn& progress = {}) {
  cfg.validate();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < train_set.bags.size(); ++i) (train_set.bags[i].positive() ? pos : neg).push_back(i);
  if (pos.empty()) throw config_error("training split has no positive bags");
  if (neg.empty()) throw config_error("training split has no negative bags");

  TrainingState st;
  if (resume) {
    check_resume_compatible(*resume, train_set, cfg);
    st = std::move(*resume);
  } else {
    st = initial_state(train_set, cfg);
  }

  const bool validate_epochs = cfg.eval_every > 0 && !validation.empty();
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  log.best_val_auc = st.best_val_auc;

  std::vector<Bag> batch_bags;
  for (std::uint32_t epoch = st.epochs_completed; epoch < cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(pos, neg, cfg.bags_per_batch, cfg.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      batch_bags.clear();
      for (auto idx : batches[b]) batch_bags.push_back(train_set.bags[idx]);

      const auto mode = cfg.dropout ? ScoreMode::train(mix_seed(cfg.seed, st.iterations)) : ScoreMode::eval();
      auto eval = objective_and_gradient(st.model, batch_bags, cfg.lambda, mode);
      if (!std::isfinite(eval.objective.value)) {
        throw training_error("objective became non-finite at iteration " + std::to_string(st.iterations + 1) +
                             "; last checkpoint left in place");
      }
      step(st.optimizer, st.optimizer_state, st.model.params(), eval.gradient);
      ++st.iterations;

      LogRow row;
      row.iteration = st.iterations;
      row.epoch = epoch + 1;
      row.objective = eval.objective.value;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const bool last_in_epoch = b + 1 == batches.size();
      if (last_in_epoch && validate_epochs && (epoch + 1) % cfg.eval_every == 0) {
        row.val_auc = bag_auc(st.model, validation);
        if (!st.best_val_auc || *row.val_auc > *st.best_val_auc) {
          st.best_val_auc = row.val_auc;
          st.best_model = st.model;
        }
      }
      log.rows.push_back(row);
      if (progress) progress(row);
    }
    st.epochs_completed = epoch + 1;
    if (cfg.checkpoint_every > 0 && st.epochs_completed % cfg.checkpoint_every == 0) {
      save_checkpoint(st, cfg.checkpoint_path);
    }
  }
  log.best_val_auc = st.best_val_auc;

  TrainResult result{st.model, st.best_model, std::move(log), std::move(st)};
  return result;
}

inline std::string log_to_csv(const TrainLog& log) {
  std::string out = "iteration,epoch,objective,val_auc,seconds\n";
  for (const auto& r : log.rows) {
    out += std::to_string(r.iteration) + "," + std::to_string(r.epoch) + "," + format_double(r.objective) + "," +
           (r.val_auc ? format_double(*r.val_auc) : std::string()) + "," + format_double(r.seconds) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer comparison

struct ComparisonRow {
  OptimizerKind kind = OptimizerKind::sgd;
  double auc = 0.0;
  double final_objective = 0.0;
};

// One model per optimizer, all from the same initialization and batch order.
// `lr` overrides every optimizer's default learning rate when set.
inline std::vector<ComparisonRow> compare_optimizers(const Dataset& train_set, std::span<const Bag> test_bags,
                                                     const TrainConfig& base, std::span<const OptimizerKind> kinds,
                                                     std::optional<double> lr = std::nullopt) {
  if (kinds.empty()) throw config_error("no optimizers to compare");
  if (test_bags.empty()) throw config_error("comparison needs a non-empty test split");
  std::vector<ComparisonRow> rows;
  for (auto kind : kinds) {
    TrainConfig cfg = base;
    cfg.optimizer = OptimizerConfig::defaults(kind);
    cfg.optimizer.beta1 = base.optimizer.beta1;
    cfg.optimizer.beta2 = base.optimizer.beta2;
    cfg.optimizer.rho = base.optimizer.rho;
    cfg.optimizer.eps = base.optimizer.eps;
    if (lr) cfg.optimizer.lr = *lr;
    cfg.checkpoint_every = 0;
    auto res = train(train_set, cfg);
    ComparisonRow row{kind, bag_auc(res.model, test_bags), res.log.rows.empty() ? 0.0 : res.log.rows.back().objective};
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_comparison(std::span<const ComparisonRow> rows) {
  std::string out = "Optimiser\tAUC(%)\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * r.auc);
    out += display_name(r.kind) + "\t" + buf + "\n";
  }
  return out;
}

}  // namespace milvid
