#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "milvid/bag_model.hpp"
#include "milvid/error.hpp"
#include "milvid/mil_objective.hpp"
#include "milvid/scorer_net.hpp"

namespace milvid {

inline constexpr int kReportSchemaVersion = 1;

struct Scored {
  double score = 0.0;
  int label = -1;
};

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t positives() const { return tp + fn; }
  std::uint64_t negatives() const { return fp + tn; }
  std::uint64_t total() const { return positives() + negatives(); }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Undefined rates (no positives, or no negatives) are nullopt, never NaN.
struct RatesReport {
  std::optional<double> tpr, fpr, tnr, fnr, accuracy;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // lowest score predicted positive at this point
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

inline double default_threshold(Activation output) { return output == Activation::sigmoid ? 0.5 : 0.0; }

inline void check_scored(std::span<const Scored> scored) {
  for (const auto& s : scored) {
    if (s.label != 1 && s.label != -1) throw validation_error("labels must be +1 or -1");
    if (!std::isfinite(s.score)) throw validation_error("scores must be finite");
  }
}

// Predicts +1 iff score > threshold.
inline ConfusionCounts confusion(std::span<const Scored> scored, double threshold) {
  if (scored.empty()) throw validation_error("confusion counts need at least one scored item");
  check_scored(scored);
  ConfusionCounts c;
  for (const auto& s : scored) {
    const bool predicted_pos = s.score > threshold;
    if (s.label > 0) {
      (predicted_pos ? c.tp : c.fn)++;
    } else {
      (predicted_pos ? c.fp : c.tn)++;
    }
  }
  return c;
}

inline RatesReport rates(const ConfusionCounts& c) {
  RatesReport r;
  const auto P = c.positives(), N = c.negatives();
  if (P > 0) {
    r.tpr = static_cast<double>(c.tp) / static_cast<double>(P);
    r.fnr = static_cast<double>(c.fn) / static_cast<double>(P);
  }
  if (N > 0) {
    r.fpr = static_cast<double>(c.fp) / static_cast<double>(N);
    r.tnr = static_cast<double>(c.tn) / static_cast<double>(N);
  }
  if (P + N > 0) r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(P + N);
  return r;
}

// Threshold sweep over every distinct score, highest first. Equal scores move
// the TP and FP counts together, so the trapezoidal area equals
// P(s+ > s-) + 0.5 * P(s+ == s-).
inline RocCurve roc_auc(std::span<const Scored> scored) {
  check_scored(scored);
  std::vector<Scored> sorted(scored.begin(), scored.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  const auto P = static_cast<std::uint64_t>(std::count_if(sorted.begin(), sorted.end(), [](const Scored& s) { return s.label > 0; }));
  const auto N = sorted.size() - P;
  if (P == 0 || N == 0) throw validation_error("ROC needs at least one positive and one negative label");

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0;
  // Twice the area in units of (1/P)*(1/N); integer-valued, so exact.
  double twice_area = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double s = sorted[i].score;
    std::uint64_t dtp = 0, dfp = 0;
    for (; i < sorted.size() && sorted[i].score == s; ++i) (sorted[i].label > 0 ? dtp : dfp)++;
    twice_area += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P), s});
  }
  roc.auc = twice_area / (2.0 * static_cast<double>(P) * static_cast<double>(N));
  return roc;
}

struct BagVerdict {
  std::string bag_id;
  int label = -1;
  double score = 0.0;
  std::size_t argmax_index = 0;
};

struct EvalReport {
  double threshold = 0.5;
  ConfusionCounts counts;
  RatesReport rates;
  std::optional<RocCurve> roc;  // absent when the bags hold a single class
  std::vector<BagVerdict> bags;
};

inline std::vector<BagVerdict> score_bags(const ScoringModel& model, std::span<const Bag> bags) {
  std::vector<BagVerdict> out;
  out.reserve(bags.size());
  for (const auto& b : bags) {
    auto bs = bag_score(model, b, ScoreMode::eval());
    out.push_back({b.bag_id, b.label, bs.score, bs.argmax_index});
  }
  return out;
}

inline double bag_auc(const ScoringModel& model, std::span<const Bag> bags) {
  std::vector<Scored> s;
  for (const auto& v : score_bags(model, bags)) s.push_back({v.score, v.label});
  return roc_auc(s).auc;
}

inline EvalReport evaluate_bags(const ScoringModel& model, std::span<const Bag> bags, double threshold) {
  if (bags.empty()) throw validation_error("evaluation needs at least one bag");
  EvalReport rep;
  rep.threshold = threshold;
  rep.bags = score_bags(model, bags);
  std::vector<Scored> scored;
  scored.reserve(rep.bags.size());
  bool has_pos = false, has_neg = false;
  for (const auto& v : rep.bags) {
    scored.push_back({v.score, v.label});
    (v.label > 0 ? has_pos : has_neg) = true;
  }
  rep.counts = confusion(scored, threshold);
  rep.rates = rates(rep.counts);
  if (has_pos && has_neg) rep.roc = roc_auc(scored);
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::ordered_json to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["level"] = "bag";
  j["n_bags"] = rep.bags.size();
  j["threshold"] = rep.threshold;
  j["confusion"] = {{"tp", rep.counts.tp}, {"fp", rep.counts.fp}, {"tn", rep.counts.tn}, {"fn", rep.counts.fn},
                    {"p", rep.counts.positives()}, {"n", rep.counts.negatives()}};
  j["rates"] = {{"tpr", optional_json(rep.rates.tpr)}, {"fpr", optional_json(rep.rates.fpr)},
                {"tnr", optional_json(rep.rates.tnr)}, {"fnr", optional_json(rep.rates.fnr)},
                {"accuracy", optional_json(rep.rates.accuracy)}};
  j["auc"] = rep.roc ? nlohmann::ordered_json(rep.roc->auc) : nlohmann::ordered_json(nullptr);
  auto& bags = j["bags"] = nlohmann::ordered_json::array();
  for (const auto& b : rep.bags) {
    bags.push_back({{"bag_id", b.bag_id}, {"label", b.label}, {"score", b.score},
                    {"argmax_index", b.argmax_index}, {"predicted", b.score > rep.threshold ? 1 : -1}});
  }
  return j;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Header row doubles as the schema marker.
inline std::string roc_to_csv(const RocCurve& roc) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : roc.points) {
    out += format_double(p.fpr) + "," + format_double(p.tpr) + "," +
           (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) + "\n";
  }
  return out;
}

}  // namespace milvid
