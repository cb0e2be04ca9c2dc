#pragma once

// Small dense feed-forward networks with hand-written backpropagation and Adam.
//
// Parameters live in one flat vector so optimizers, checkpoints and
// finite-difference checks can treat every network the same way. Layer l
// occupies [W_l (out x in, column-major), b_l (out)] inside that vector.
// Batched calls take one sample per column.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace rime {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { relu, tanh };
enum class OutputActivation { none, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
inline std::string to_string(OutputActivation a) { return a == OutputActivation::none ? "none" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + s);
}

inline OutputActivation parse_output_activation(const std::string& s) {
  if (s == "none") return OutputActivation::none;
  if (s == "tanh") return OutputActivation::tanh;
  throw std::invalid_argument("unknown output activation: " + s);
}

/// Cached activations of one batched forward pass, consumed by Mlp::backward.
struct Tape {
  std::vector<Mat> activations;  // activations[0] is the input, back() the output

  bool empty() const { return activations.empty(); }
  const Mat& output() const { return activations.back(); }
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> layer_dims, Activation hidden, OutputActivation out, std::uint64_t seed)
      : dims_(std::move(layer_dims)), hidden_(hidden), out_(out), seed_(seed) {
    if (dims_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
    for (int d : dims_)
      if (d <= 0) throw std::invalid_argument("Mlp layer dims must be positive");
    params_ = Vec::Zero(static_cast<Eigen::Index>(parameter_count(dims_)));
    initialize(seed);
  }

  static std::size_t parameter_count(const std::vector<int>& dims) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      n += static_cast<std::size_t>(dims[i] + 1) * static_cast<std::size_t>(dims[i + 1]);
    return n;
  }

  // Uniform fan-in scaling, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(std::uint64_t seed) {
    seed_ = seed;
    std::mt19937_64 rng(seed);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      const Eigen::Index n = static_cast<Eigen::Index>(dims_[l] + 1) * dims_[l + 1];
      for (Eigen::Index i = 0; i < n; ++i) params_[offset + i] = u(rng);
      offset += n;
    }
  }

  const std::vector<int>& layer_dims() const { return dims_; }
  Activation activation() const { return hidden_; }
  OutputActivation output_activation() const { return out_; }
  std::uint64_t seed() const { return seed_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return dims_.size() - 1; }
  Eigen::Index num_params() const { return params_.size(); }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Vec forward(const Vec& x) const {
    check_input_rows(x.size());
    return forward(Mat(x)).col(0);
  }

  Mat forward(const Mat& x) const {
    check_input_rows(x.rows());
    Mat a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Mat z = (weights(l) * a).colwise() + bias(l);
      apply_activation(l, z);
      a = std::move(z);
    }
    return a;
  }

  Tape forward_tape(const Mat& x) const {
    check_input_rows(x.rows());
    Tape tape;
    tape.activations.reserve(num_layers() + 1);
    tape.activations.push_back(x);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Mat z = (weights(l) * tape.activations.back()).colwise() + bias(l);
      apply_activation(l, z);
      tape.activations.push_back(std::move(z));
    }
    return tape;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output) for the
  /// taped batch. When `input_grad` is non-null it receives d(loss)/d(input).
  void backward(const Tape& tape, const Mat& output_grad, Vec& grad, Mat* input_grad = nullptr) const {
    if (tape.empty() || tape.activations.size() != num_layers() + 1)
      throw std::logic_error("Mlp::backward called without a cached forward pass");
    if (output_grad.rows() != output_dim() || output_grad.cols() != tape.output().cols())
      throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
    if (grad.size() != num_params()) throw std::invalid_argument("Mlp::backward: gradient size mismatch");

    Mat delta = output_grad;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const Mat& out = tape.activations[l + 1];
      const Mat& in = tape.activations[l];
      apply_activation_derivative(l, out, delta);
      const Eigen::Index off = layer_offset(l);
      const int rows = dims_[l + 1], cols = dims_[l];
      Eigen::Map<Mat> gw(grad.data() + off, rows, cols);
      Eigen::Map<Vec> gb(grad.data() + off + static_cast<Eigen::Index>(rows) * cols, rows);
      gw.noalias() += delta * in.transpose();
      gb.noalias() += delta.rowwise().sum();
      if (l > 0 || input_grad != nullptr) {
        Mat prev = weights(l).transpose() * delta;
        delta = std::move(prev);
      }
    }
    if (input_grad != nullptr) *input_grad = std::move(delta);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["layer_dims"] = dims_;
    j["activation"] = to_string(hidden_);
    j["output_activation"] = to_string(out_);
    j["seed"] = seed_;
    j["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp net(j.at("layer_dims").get<std::vector<int>>(), parse_activation(j.at("activation")),
            parse_output_activation(j.at("output_activation")), j.at("seed").get<std::uint64_t>());
    const auto p = j.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(p.size()) != net.num_params())
      throw std::invalid_argument("checkpoint parameter count does not match architecture");
    net.params_ = Eigen::Map<const Vec>(p.data(), static_cast<Eigen::Index>(p.size()));
    return net;
  }

 private:
  Eigen::Index layer_offset(std::size_t l) const {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < l; ++i) off += static_cast<Eigen::Index>(dims_[i] + 1) * dims_[i + 1];
    return off;
  }

  Eigen::Map<const Mat> weights(std::size_t l) const {
    return {params_.data() + layer_offset(l), dims_[l + 1], dims_[l]};
  }

  Eigen::Map<const Vec> bias(std::size_t l) const {
    return {params_.data() + layer_offset(l) + static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l], dims_[l + 1]};
  }

  bool is_output(std::size_t l) const { return l + 1 == num_layers(); }

  void apply_activation(std::size_t l, Mat& z) const {
    if (is_output(l)) {
      if (out_ == OutputActivation::tanh) z = z.array().tanh();
    } else if (hidden_ == Activation::tanh) {
      z = z.array().tanh();
    } else {
      z = z.cwiseMax(0.0);
    }
  }

  // delta holds dL/d(post-activation) on entry, dL/d(pre-activation) on exit.
  void apply_activation_derivative(std::size_t l, const Mat& out, Mat& delta) const {
    const bool tanh_layer = is_output(l) ? out_ == OutputActivation::tanh : hidden_ == Activation::tanh;
    const bool relu_layer = !is_output(l) && hidden_ == Activation::relu;
    if (tanh_layer)
      delta.array() *= 1.0 - out.array().square();
    else if (relu_layer)
      delta = (out.array() > 0.0).select(delta, 0.0);
  }

  void check_input_rows(Eigen::Index rows) const {
    if (dims_.empty()) throw std::logic_error("Mlp is not initialized");
    if (rows != dims_.front())
      throw std::invalid_argument("Mlp input has " + std::to_string(rows) + " rows, expected " +
                                  std::to_string(dims_.front()));
  }

  std::vector<int> dims_;
  Activation hidden_ = Activation::relu;
  OutputActivation out_ = OutputActivation::none;
  std::uint64_t seed_ = 0;
  Vec params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction. Moments are sized on construction and must
/// match the parameter vector passed to step().
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, AdamConfig cfg) : cfg_(cfg), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

  void step(Vec& params, const Vec& grad) {
    if (grad.size() != params.size() || grad.size() != m_.size())
      throw std::invalid_argument("Adam::step: gradient length does not match parameters");
    if (!grad.allFinite()) {
      Eigen::Index bad = 0;
      for (; bad < grad.size(); ++bad)
        if (!std::isfinite(grad[bad])) break;
      throw NonFiniteError("Adam::step: non-finite gradient at index " + std::to_string(bad));
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const Vec& first_moment() const { return m_; }
  const Vec& second_moment() const { return v_; }

  nlohmann::json to_json() const {
    return {{"step", t_},
            {"lr", cfg_.lr},
            {"beta1", cfg_.beta1},
            {"beta2", cfg_.beta2},
            {"eps", cfg_.eps},
            {"m", std::vector<double>(m_.data(), m_.data() + m_.size())},
            {"v", std::vector<double>(v_.data(), v_.data() + v_.size())}};
  }

  static Adam from_json(const nlohmann::json& j) {
    AdamConfig cfg{j.at("lr"), j.at("beta1"), j.at("beta2"), j.at("eps")};
    const auto m = j.at("m").get<std::vector<double>>();
    const auto v = j.at("v").get<std::vector<double>>();
    Adam a(static_cast<Eigen::Index>(m.size()), cfg);
    a.t_ = j.at("step");
    a.m_ = Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()));
    a.v_ = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    return a;
  }

 private:
  AdamConfig cfg_;
  Vec m_, v_;
  std::int64_t t_ = 0;
};

/// Polyak averaging: target <- (1 - tau) * target + tau * source.
inline void soft_update(Mlp& target, const Mlp& source, double tau) {
  target.params() = (1.0 - tau) * target.params() + tau * source.params();
}

}  // namespace rime
