#pragma once

// Bag-max hinge objective:
//
//   J(w) = (1/z) * sum_j max(0, 1 - Y_j * max_{i in B_j} f(x_i)) + lambda * 0.5 * ||W||^2
//
// f is the scorer (its output bias is the hinge offset), ||W||^2 sums the
// squared weight-matrix entries only. The subgradient of the inner max flows
// through the argmax instance alone; ties go to the lowest temporal index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "milvid/bag_model.hpp"
#include "milvid/error.hpp"
#include "milvid/random.hpp"
#include "milvid/scorer_net.hpp"

namespace milvid {

struct BagScore {
  double score = 0.0;
  std::size_t argmax_index = 0;
  ForwardTrace trace;  // trace of the argmax instance
};

struct BagLoss {
  std::string bag_id;
  double bag_score = 0.0;
  std::size_t argmax_index = 0;
  double margin = 0.0;  // Y * bag_score
  double hinge = 0.0;   // max(0, 1 - margin)
};

struct ObjectiveValue {
  double value = 0.0;
  double hinge_mean = 0.0;
  double regularizer = 0.0;
  std::vector<BagLoss> bags;
};

struct ObjectiveWithGradient {
  ObjectiveValue objective;
  std::vector<double> gradient;  // same layout as ScoringModel::params()
};

// In training mode every instance draws its own dropout mask, seeded from the
// mode seed and the instance position.
inline ScoreMode instance_mode(const ScoreMode& mode, std::size_t index) {
  return mode.training() ? ScoreMode::train(mix_seed(mode.mask_seed(), index)) : ScoreMode::eval();
}

inline BagScore bag_score(const ScoringModel& model, const Bag& bag, const ScoreMode& mode = ScoreMode::eval()) {
  if (bag.instances.empty()) throw empty_bag_error("bag '" + bag.bag_id + "' has no instances");
  BagScore best;
  for (std::size_t i = 0; i < bag.instances.size(); ++i) {
    auto trace = forward(model, std::span<const double>(bag.instances[i].features), instance_mode(mode, i));
    const double s = trace.score();
    if (i == 0 || s > best.score) {
      best.score = s;
      best.argmax_index = i;
      best.trace = std::move(trace);
    }
  }
  return best;
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw config_error("lambda must be finite and >= 0");
}

namespace detail {

template <bool WithGradient>
ObjectiveWithGradient evaluate_objective(const ScoringModel& model, std::span<const Bag> bags, double lambda,
                                         const ScoreMode& mode) {
  check_lambda(lambda);
  if (bags.empty()) throw config_error("objective needs at least one bag");
  const double z = static_cast<double>(bags.size());

  ObjectiveWithGradient out;
  if constexpr (WithGradient) out.gradient.assign(model.params().size(), 0.0);
  out.objective.bags.reserve(bags.size());

  double hinge_sum = 0.0;
  // Fixed bag order keeps the reduction reproducible.
  for (std::size_t j = 0; j < bags.size(); ++j) {
    const Bag& bag = bags[j];
    check_label(bag.label);
    auto bs = bag_score(model, bag, instance_mode(mode, j));
    BagLoss loss{bag.bag_id, bs.score, bs.argmax_index, bag.label * bs.score, 0.0};
    loss.hinge = std::max(0.0, 1.0 - loss.margin);
    hinge_sum += loss.hinge;
    if constexpr (WithGradient) {
      if (loss.hinge > 0.0) accumulate_backward(model, bs.trace, -bag.label / z, out.gradient);
    }
    out.objective.bags.push_back(std::move(loss));
  }

  out.objective.hinge_mean = hinge_sum / z;
  out.objective.regularizer = lambda * 0.5 * model.weight_sq_norm();
  out.objective.value = out.objective.hinge_mean + out.objective.regularizer;

  if constexpr (WithGradient) {
    if (lambda != 0.0) {
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const auto W = model.weights(l);
        double* g = out.gradient.data() + model.weight_offset(l);
        for (std::size_t k = 0; k < W.size(); ++k) g[k] += lambda * W[k];
      }
    }
  }
  return out;
}

}  // namespace detail

inline ObjectiveValue objective(const ScoringModel& model, std::span<const Bag> bags, double lambda,
                                const ScoreMode& mode = ScoreMode::eval()) {
  return detail::evaluate_objective<false>(model, bags, lambda, mode).objective;
}

inline ObjectiveWithGradient objective_and_gradient(const ScoringModel& model, std::span<const Bag> bags,
                                                    double lambda, const ScoreMode& mode = ScoreMode::eval()) {
  return detail::evaluate_objective<true>(model, bags, lambda, mode);
}

inline std::vector<double> objective_gradient(const ScoringModel& model, std::span<const Bag> bags, double lambda,
                                              const ScoreMode& mode = ScoreMode::eval()) {
  return objective_and_gradient(model, bags, lambda, mode).gradient;
}

}  // namespace milvid
