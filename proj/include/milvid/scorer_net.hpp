#pragma once

// Fully-connected instance scorer: feature vector -> scalar score.
//
// Layer l computes z = W_l a + b_l followed by its activation. Hidden layers
// use `hidden_activation`; the last layer uses `output_activation`, and its
// bias plays the role of the hinge offset. Inverted dropout is applied to the
// output of the first hidden layer in training mode only.
//
// Parameters live in one flat vector; layer l stores W_l (out x in,
// row-major) followed by b_l.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "milvid/binary_io.hpp"
#include "milvid/container.hpp"
#include "milvid/error.hpp"
#include "milvid/random.hpp"

namespace milvid {

enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2, tanh = 3 };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  throw config_error("unknown activation '" + s + "'");
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

// Derivative expressed through the pre-activation z and output h = act(z).
// ReLU'(0) is taken as 0.
inline double activation_slope(Activation a, double z, double h) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return h * (1.0 - h);
    case Activation::tanh: return 1.0 - h * h;
  }
  return 1.0;
}

struct ModelOptions {
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::sigmoid;
  double dropout_rate = 0.6;
};

inline std::vector<std::size_t> default_layer_dims(std::size_t input_dim) { return {input_dim, 512, 32, 1}; }

class ScoringModel {
 public:
  ScoringModel() = default;

  ScoringModel(std::vector<std::size_t> layer_dims, ModelOptions opts)
      : dims_(std::move(layer_dims)), opts_(opts) {
    if (dims_.size() < 2) throw config_error("a scorer needs at least an input and an output layer");
    if (dims_.back() != 1) throw config_error("the output layer must have exactly one unit");
    for (auto d : dims_) {
      if (d == 0) throw config_error("layer sizes must be positive");
    }
    if (!(opts_.dropout_rate >= 0.0 && opts_.dropout_rate < 1.0)) {
      throw config_error("dropout rate must lie in [0, 1)");
    }
    offsets_.reserve(num_layers() + 1);
    std::size_t off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      offsets_.push_back(off);
      off += dims_[l + 1] * dims_[l] + dims_[l + 1];
    }
    offsets_.push_back(off);
    params_.assign(off, 0.0);
  }

  const std::vector<std::size_t>& layer_dims() const { return dims_; }
  const ModelOptions& options() const { return opts_; }
  std::size_t num_layers() const { return dims_.size() - 1; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t fan_in(std::size_t l) const { return dims_[l]; }
  std::size_t fan_out(std::size_t l) const { return dims_[l + 1]; }

  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t weight_count(std::size_t l) const { return dims_[l] * dims_[l + 1]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + weight_count(l); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> weights(std::size_t l) { return params().subspan(weight_offset(l), weight_count(l)); }
  std::span<const double> weights(std::size_t l) const {
    return params().subspan(weight_offset(l), weight_count(l));
  }
  std::span<double> biases(std::size_t l) { return params().subspan(bias_offset(l), fan_out(l)); }
  std::span<const double> biases(std::size_t l) const { return params().subspan(bias_offset(l), fan_out(l)); }

  bool is_weight(std::size_t flat_index) const {
    for (std::size_t l = 0; l < num_layers(); ++l) {
      if (flat_index >= weight_offset(l) && flat_index < bias_offset(l)) return true;
    }
    return false;
  }

  // Sum of squared weight entries; biases are excluded.
  double weight_sq_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      for (double w : weights(l)) s += w * w;
    }
    return s;
  }

  friend bool operator==(const ScoringModel& a, const ScoringModel& b) {
    return a.dims_ == b.dims_ && a.opts_.hidden_activation == b.opts_.hidden_activation &&
           a.opts_.output_activation == b.opts_.output_activation && a.opts_.dropout_rate == b.opts_.dropout_rate &&
           a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> dims_;
  ModelOptions opts_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

inline ScoringModel init_glorot_normal(std::vector<std::size_t> layer_dims, std::uint64_t seed, ModelOptions opts = {}) {
  ScoringModel model(std::move(layer_dims), opts);
  auto rng = seeded_rng(seed, {0x6c6f7261});
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(model.fan_in(l) + model.fan_out(l)));
    std::normal_distribution<double> gauss(0.0, stddev);
    for (auto& w : model.weights(l)) w = gauss(rng);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward

class ScoreMode {
 public:
  static ScoreMode eval() { return {}; }
  static ScoreMode train(std::uint64_t mask_seed) {
    ScoreMode m;
    m.mask_seed_ = mask_seed;
    return m;
  }
  bool training() const { return mask_seed_.has_value(); }
  std::uint64_t mask_seed() const { return *mask_seed_; }

 private:
  std::optional<std::uint64_t> mask_seed_;
};

struct ForwardTrace {
  std::vector<std::vector<double>> pre;         // z per layer
  std::vector<std::vector<double>> activation;  // a_0 = input, a_{l+1} = layer l output (post-dropout)
  std::vector<double> dropout_scale;            // per unit of layer 0; empty when no dropout was applied

  double score() const { return activation.back().front(); }
};

struct ParameterGradients {
  std::vector<double> params;
  std::vector<double> input;
};

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) {
  // Four fixed partial sums: vectorizes without reassociation flags and
  // keeps the summation order reproducible.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

template <typename T>
ForwardTrace forward(const ScoringModel& model, std::span<const T> x, const ScoreMode& mode) {
  if (x.size() != model.input_dim()) {
    throw shape_error("input has " + std::to_string(x.size()) + " features, model expects " +
                      std::to_string(model.input_dim()));
  }
  const std::size_t L = model.num_layers();
  ForwardTrace t;
  t.pre.resize(L);
  t.activation.resize(L + 1);
  t.activation[0].assign(x.begin(), x.end());

  const auto& opts = model.options();
  const bool dropout = mode.training() && opts.dropout_rate > 0.0 && L >= 2;

  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = model.fan_in(l), out = model.fan_out(l);
    const auto W = model.weights(l);
    const auto b = model.biases(l);
    const auto& a = t.activation[l];
    auto& z = t.pre[l];
    auto& h = t.activation[l + 1];
    z.resize(out);
    h.resize(out);
    const Activation act = (l + 1 == L) ? opts.output_activation : opts.hidden_activation;
    for (std::size_t o = 0; o < out; ++o) {
      z[o] = detail::dot(W.data() + o * in, a.data(), in) + b[o];
      h[o] = activate(act, z[o]);
    }
    if (l == 0 && dropout) {
      auto rng = seeded_rng(mode.mask_seed(), {0x64726f70});
      std::bernoulli_distribution keep(1.0 - opts.dropout_rate);
      const double scale = 1.0 / (1.0 - opts.dropout_rate);
      t.dropout_scale.resize(out);
      for (std::size_t o = 0; o < out; ++o) {
        t.dropout_scale[o] = keep(rng) ? scale : 0.0;
        h[o] *= t.dropout_scale[o];
      }
    }
  }
  return t;
}

template <typename T>
double score(const ScoringModel& model, std::span<const T> x, const ScoreMode& mode = ScoreMode::eval()) {
  return forward(model, x, mode).score();
}

inline double score(const ScoringModel& model, const std::vector<double>& x, const ScoreMode& mode = ScoreMode::eval()) {
  return score(model, std::span<const double>(x), mode);
}

inline void check_trace(const ScoringModel& model, const ForwardTrace& trace) {
  const std::size_t L = model.num_layers();
  bool ok = trace.pre.size() == L && trace.activation.size() == L + 1 &&
            trace.activation[0].size() == model.input_dim();
  for (std::size_t l = 0; ok && l < L; ++l) {
    ok = trace.pre[l].size() == model.fan_out(l) && trace.activation[l + 1].size() == model.fan_out(l);
  }
  ok = ok && (trace.dropout_scale.empty() || trace.dropout_scale.size() == model.fan_out(0));
  if (!ok) throw shape_error("forward trace does not match the model's layer sizes");
}

// Adds upstream * d(score)/d(theta) into param_grad (same layout as
// model.params()). If input_grad is non-empty, d(score)/d(x) is added there.
inline void accumulate_backward(const ScoringModel& model, const ForwardTrace& trace, double upstream,
                                std::span<double> param_grad, std::span<double> input_grad = {}) {
  check_trace(model, trace);
  if (param_grad.size() != model.params().size()) throw shape_error("gradient buffer size mismatch");
  if (!input_grad.empty() && input_grad.size() != model.input_dim()) {
    throw shape_error("input gradient buffer size mismatch");
  }
  if (upstream == 0.0) return;

  const std::size_t L = model.num_layers();
  const auto& opts = model.options();

  // delta holds d(score)/dz for the current layer.
  std::vector<double> delta(1);
  {
    const double z = trace.pre[L - 1][0];
    const double h = trace.activation[L][0];
    delta[0] = upstream * activation_slope(opts.output_activation, z, h);
  }

  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = model.fan_in(l), out = model.fan_out(l);
    const auto& a = trace.activation[l];
    double* gW = param_grad.data() + model.weight_offset(l);
    double* gb = param_grad.data() + model.bias_offset(l);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* row = gW + o * in;
      for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
      gb[o] += d;
    }

    if (l == 0 && input_grad.empty()) break;

    // d(score)/d(a_l) = W_l^T delta
    const auto W = model.weights(l);
    std::vector<double> da(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = W.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) da[i] += row[i] * d;
    }
    if (l == 0) {
      for (std::size_t i = 0; i < in; ++i) input_grad[i] += da[i];
      break;
    }

    // Step from a_l back to z_{l-1}: undo dropout (layer 0 only), then the activation.
    const std::size_t prev = l - 1;
    if (prev == 0 && !trace.dropout_scale.empty()) {
      for (std::size_t i = 0; i < in; ++i) da[i] *= trace.dropout_scale[i];
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double z = trace.pre[prev][i];
      const double h = activate(opts.hidden_activation, z);
      da[i] *= activation_slope(opts.hidden_activation, z, h);
    }
    delta = std::move(da);
  }
}

inline ParameterGradients backward(const ScoringModel& model, const ForwardTrace& trace, double upstream) {
  ParameterGradients g{std::vector<double>(model.params().size(), 0.0), std::vector<double>(model.input_dim(), 0.0)};
  accumulate_backward(model, trace, upstream, g.params, g.input);
  return g;
}

// ---------------------------------------------------------------------------
// Serialization

inline void encode_model_payload(const ScoringModel& model, io::ByteWriter& w) {
  w.u32(static_cast<std::uint32_t>(model.layer_dims().size()));
  for (auto d : model.layer_dims()) w.u64(d);
  w.u8(static_cast<std::uint8_t>(model.options().hidden_activation));
  w.u8(static_cast<std::uint8_t>(model.options().output_activation));
  w.f64(model.options().dropout_rate);
  w.u64(model.params().size());
  for (double p : model.params()) w.f64(p);
}

inline Activation decode_activation(std::uint8_t raw) {
  if (raw > static_cast<std::uint8_t>(Activation::tanh)) {
    throw format_error("unknown activation code " + std::to_string(raw));
  }
  return static_cast<Activation>(raw);
}

inline ScoringModel decode_model_payload(io::ByteReader& r) {
  const auto n_dims = r.u32();
  if (n_dims < 2 || n_dims > 64) throw format_error("implausible layer count " + std::to_string(n_dims));
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) d = static_cast<std::size_t>(r.u64());
  ModelOptions opts;
  opts.hidden_activation = decode_activation(r.u8());
  opts.output_activation = decode_activation(r.u8());
  opts.dropout_rate = r.f64();
  ScoringModel model = [&] {
    try {
      return ScoringModel(std::move(dims), opts);
    } catch (const config_error& ex) {
      throw format_error(std::string("invalid model header: ") + ex.what());
    }
  }();
  const auto n_params = r.u64();
  if (n_params != model.params().size()) {
    throw format_error("parameter count " + std::to_string(n_params) + " does not match layer sizes (" +
                       std::to_string(model.params().size()) + ")");
  }
  for (auto& p : model.params()) {
    p = r.f64();
    if (!std::isfinite(p)) throw validation_error("model contains a non-finite parameter");
  }
  return model;
}

inline std::vector<unsigned char> serialize(const ScoringModel& model) {
  io::ByteWriter w;
  encode_model_payload(model, w);
  return wrap_container(ContainerKind::model, w.data());
}

inline ScoringModel deserialize(std::span<const unsigned char> bytes) {
  io::ByteReader r(unwrap_container(bytes, ContainerKind::model));
  auto model = decode_model_payload(r);
  if (r.remaining() != 0) throw format_error("trailing bytes after model payload");
  return model;
}

inline void save_model(const ScoringModel& model, const std::filesystem::path& path) {
  io::write_file(path, serialize(model));
}

inline ScoringModel load_model(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

}  // namespace milvid
