#pragma once

// First-order update rules behind one interface. All updates are element-wise;
// epsilon is added outside the square root.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "milvid/binary_io.hpp"
#include "milvid/error.hpp"

namespace milvid {

enum class OptimizerKind : std::uint8_t { sgd = 0, adam = 1, adagrad = 2, rmsprop = 3 };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  return "unknown";
}

// Display name used in comparison tables.
inline std::string display_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "SGD";
    case OptimizerKind::adam: return "Adam";
    case OptimizerKind::adagrad: return "Adagrad";
    case OptimizerKind::rmsprop: return "RMSprop";
  }
  return "unknown";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adagrad") return OptimizerKind::adagrad;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw config_error("unknown optimizer '" + s + "' (expected sgd, adam, adagrad or rmsprop)");
}

inline double default_learning_rate(OptimizerKind k) {
  return (k == OptimizerKind::sgd || k == OptimizerKind::adagrad) ? 0.01 : 0.001;
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;
  double eps = 1e-8;

  static OptimizerConfig defaults(OptimizerKind kind) {
    OptimizerConfig c;
    c.kind = kind;
    c.lr = default_learning_rate(kind);
    return c;
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw config_error("learning rate must be positive");
    auto unit = [](double v) { return v >= 0.0 && v < 1.0; };
    if (!unit(beta1) || !unit(beta2) || !unit(rho)) throw config_error("beta1, beta2 and rho must lie in [0, 1)");
    if (!(eps > 0.0)) throw config_error("epsilon must be positive");
  }
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<double> first_moment;   // adam m
  std::vector<double> second_moment;  // adam v, rmsprop v, adagrad G

  explicit OptimizerState(std::size_t n = 0) : first_moment(n, 0.0), second_moment(n, 0.0) {}

  std::size_t size() const { return second_moment.size(); }

  void reset() {
    step = 0;
    std::fill(first_moment.begin(), first_moment.end(), 0.0);
    std::fill(second_moment.begin(), second_moment.end(), 0.0);
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline void step(const OptimizerConfig& cfg, OptimizerState& state, std::span<double> params,
                 std::span<const double> grads) {
  if (params.size() != grads.size() || state.size() != params.size() || state.first_moment.size() != params.size()) {
    throw shape_error("optimizer step: parameter, gradient and state sizes disagree");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw training_error("non-finite gradient at parameter " + std::to_string(i) + " (step " +
                           std::to_string(state.step + 1) + ")");
    }
  }

  ++state.step;
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  switch (cfg.kind) {
    case OptimizerKind::sgd:
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.lr * grads[i];
      break;
    case OptimizerKind::adagrad:
      for (std::size_t i = 0; i < params.size(); ++i) {
        v[i] += grads[i] * grads[i];
        params[i] -= cfg.lr * grads[i] / (std::sqrt(v[i]) + cfg.eps);
      }
      break;
    case OptimizerKind::rmsprop:
      for (std::size_t i = 0; i < params.size(); ++i) {
        v[i] = cfg.rho * v[i] + (1.0 - cfg.rho) * grads[i] * grads[i];
        params[i] -= cfg.lr * grads[i] / (std::sqrt(v[i]) + cfg.eps);
      }
      break;
    case OptimizerKind::adam: {
      const double t = static_cast<double>(state.step);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
      break;
    }
  }
}

inline void encode_optimizer(const OptimizerConfig& cfg, const OptimizerState& st, io::ByteWriter& w) {
  w.u8(static_cast<std::uint8_t>(cfg.kind));
  w.f64(cfg.lr);
  w.f64(cfg.beta1);
  w.f64(cfg.beta2);
  w.f64(cfg.rho);
  w.f64(cfg.eps);
  w.u64(st.step);
  w.u64(st.size());
  for (double x : st.first_moment) w.f64(x);
  for (double x : st.second_moment) w.f64(x);
}

inline void decode_optimizer(io::ByteReader& r, OptimizerConfig& cfg, OptimizerState& st) {
  const auto kind = r.u8();
  if (kind > static_cast<std::uint8_t>(OptimizerKind::rmsprop)) {
    throw format_error("unknown optimizer code " + std::to_string(kind));
  }
  cfg.kind = static_cast<OptimizerKind>(kind);
  cfg.lr = r.f64();
  cfg.beta1 = r.f64();
  cfg.beta2 = r.f64();
  cfg.rho = r.f64();
  cfg.eps = r.f64();
  const auto t = r.u64();
  const auto n = r.u64();
  if (n > r.remaining() / 16) throw corruption_error("optimizer state size exceeds stored bytes");
  st = OptimizerState(static_cast<std::size_t>(n));
  st.step = t;
  for (auto& x : st.first_moment) x = r.f64();
  for (auto& x : st.second_moment) x = r.f64();
}

}  // namespace milvid
