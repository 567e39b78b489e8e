#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "frailnet/errors.hpp"
#include "frailnet/rng.hpp"

namespace frailnet {

enum class Activation { relu, tanh };

inline const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgumentError("unknown activation '" + s + "'");
}

struct MlpArchitecture {
  int input_dim = 0;
  std::vector<int> hidden;  // empty: plain linear predictor
  Activation activation = Activation::relu;

  int num_hidden_layers() const { return static_cast<int>(hidden.size()); }
  int output_input_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
};

/**
 * Feed-forward scorer eta(x) = beta' h_L(x). Hidden layer l maps width w_{l-1}
 * to w_l as act(W_l h + b_l); the output is a bias-free inner product so the
 * intercept stays absorbed by the baseline hazard. With no hidden layers this
 * degenerates to the linear predictor beta' x.
 */
struct MlpParams {
  MlpArchitecture arch;
  std::vector<Eigen::MatrixXd> weights;  // layer l: hidden[l] x fan_in
  std::vector<Eigen::VectorXd> biases;   // layer l: hidden[l]
  Eigen::VectorXd output_weights;        // beta: arch.output_input_dim()

  int num_parameters() const {
    int n = static_cast<int>(output_weights.size());
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<int>(weights[l].size() + biases[l].size());
    return n;
  }
};

/** Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases, matching beta. */
inline MlpParams init_params(const MlpArchitecture& arch, Rng& rng) {
  if (arch.input_dim <= 0) throw InvalidArgumentError("input_dim must be positive");
  for (int w : arch.hidden)
    if (w <= 0) throw InvalidArgumentError("hidden widths must be positive");
  MlpParams p;
  p.arch = arch;
  int fan_in = arch.input_dim;
  for (int width : arch.hidden) {
    double bound = std::sqrt(1.0 / fan_in);
    Eigen::MatrixXd w(width, fan_in);
    for (int i = 0; i < width; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(width));
    fan_in = width;
  }
  double bound = std::sqrt(1.0 / fan_in);
  p.output_weights.resize(fan_in);
  for (int j = 0; j < fan_in; ++j) p.output_weights[j] = bound * (2.0 * rng.uniform() - 1.0);
  return p;
}

/** Activations recorded by `forward`, consumed by `backward`. Rows are records. */
struct ForwardTape {
  Eigen::MatrixXd input;              // B x input_dim
  std::vector<Eigen::MatrixXd> pre;   // per hidden layer: B x width
  std::vector<Eigen::MatrixXd> post;  // activated
  Eigen::VectorXd eta;                // B
};

namespace detail {

inline void apply_activation(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& post) {
  if (a == Activation::relu)
    post = pre.cwiseMax(0.0);
  else
    post = pre.array().tanh().matrix();
}

// Derivative through the activation; relu uses the subgradient 0 at exactly 0.
inline Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& pre,
                                       const Eigen::MatrixXd& post,
                                       const Eigen::MatrixXd& upstream) {
  if (a == Activation::relu)
    return (pre.array() > 0.0).cast<double>() * upstream.array();
  return (1.0 - post.array().square()) * upstream.array();
}

}  // namespace detail

inline ForwardTape forward(const MlpParams& p, const Eigen::MatrixXd& x) {
  if (x.cols() != p.arch.input_dim)
    throw ShapeMismatchError("forward: input has " + std::to_string(x.cols()) +
                             " columns, network expects " + std::to_string(p.arch.input_dim));
  ForwardTape tape;
  tape.input = x;
  const Eigen::MatrixXd* h = &tape.input;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Eigen::MatrixXd pre = (*h) * p.weights[l].transpose();
    pre.rowwise() += p.biases[l].transpose();
    Eigen::MatrixXd post;
    detail::apply_activation(p.arch.activation, pre, post);
    tape.pre.push_back(std::move(pre));
    tape.post.push_back(std::move(post));
    h = &tape.post.back();
  }
  tape.eta = (*h) * p.output_weights;
  return tape;
}

inline double forward_scalar(const MlpParams& p, const Eigen::VectorXd& x) {
  return forward(p, x.transpose()).eta[0];
}

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::VectorXd output_weights;
  Eigen::MatrixXd input;  // B x input_dim, gradient through the records
};

/**
 * Reverse pass accumulating d(sum_b upstream_b * eta_b)/d(params). The tape must
 * come from `forward` on these same parameters.
 */
inline MlpGradients backward(const MlpParams& p, const ForwardTape& tape,
                             const Eigen::VectorXd& upstream) {
  const int layers = static_cast<int>(p.weights.size());
  if (static_cast<int>(tape.pre.size()) != layers ||
      tape.input.cols() != p.arch.input_dim ||
      tape.eta.size() != upstream.size())
    throw StaleTapeError("backward: tape does not match parameters");
  for (int l = 0; l < layers; ++l)
    if (tape.pre[l].cols() != p.weights[l].rows())
      throw StaleTapeError("backward: tape does not match parameters");

  MlpGradients g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  const Eigen::MatrixXd& top = layers ? tape.post.back() : tape.input;
  g.output_weights = top.transpose() * upstream;
  Eigen::MatrixXd d_h = upstream * p.output_weights.transpose();  // B x top_width
  for (int l = layers - 1; l >= 0; --l) {
    Eigen::MatrixXd d_pre = detail::activation_grad(p.arch.activation, tape.pre[l], tape.post[l], d_h);
    const Eigen::MatrixXd& below = (l == 0) ? tape.input : tape.post[l - 1];
    g.weights[l] = d_pre.transpose() * below;
    g.biases[l] = d_pre.colwise().sum().transpose();
    d_h = d_pre * p.weights[l];
  }
  g.input = std::move(d_h);
  return g;
}

// ---------------------------------------------------------------------------
// Flat parameter vector: [W_1 row-major, b_1, ..., W_L, b_L, beta]
// ---------------------------------------------------------------------------

inline int flat_size(const MlpArchitecture& arch) {
  int n = 0;
  int fan_in = arch.input_dim;
  for (int width : arch.hidden) {
    n += width * fan_in + width;
    fan_in = width;
  }
  return n + fan_in;
}

inline void pack_params(const MlpParams& p, Eigen::Ref<Eigen::VectorXd> flat) {
  int pos = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (int i = 0; i < p.weights[l].rows(); ++i)
      for (int j = 0; j < p.weights[l].cols(); ++j) flat[pos++] = p.weights[l](i, j);
    for (int i = 0; i < p.biases[l].size(); ++i) flat[pos++] = p.biases[l][i];
  }
  for (int j = 0; j < p.output_weights.size(); ++j) flat[pos++] = p.output_weights[j];
}

inline void unpack_params(const Eigen::Ref<const Eigen::VectorXd>& flat, MlpParams& p) {
  int pos = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (int i = 0; i < p.weights[l].rows(); ++i)
      for (int j = 0; j < p.weights[l].cols(); ++j) p.weights[l](i, j) = flat[pos++];
    for (int i = 0; i < p.biases[l].size(); ++i) p.biases[l][i] = flat[pos++];
  }
  for (int j = 0; j < p.output_weights.size(); ++j) p.output_weights[j] = flat[pos++];
}

inline void pack_gradients(const MlpGradients& g, Eigen::Ref<Eigen::VectorXd> flat) {
  int pos = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    for (int i = 0; i < g.weights[l].rows(); ++i)
      for (int j = 0; j < g.weights[l].cols(); ++j) flat[pos++] = g.weights[l](i, j);
    for (int i = 0; i < g.biases[l].size(); ++i) flat[pos++] = g.biases[l][i];
  }
  for (int j = 0; j < g.output_weights.size(); ++j) flat[pos++] = g.output_weights[j];
}

/** 1 for matrix weights and beta, 0 for biases; weight decay never touches biases. */
inline Eigen::ArrayXd decay_mask(const MlpArchitecture& arch) {
  Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(flat_size(arch));
  int pos = 0;
  int fan_in = arch.input_dim;
  for (int width : arch.hidden) {
    mask.segment(pos, width * fan_in).setOnes();
    pos += width * fan_in + width;
    fan_in = width;
  }
  mask.segment(pos, fan_in).setOnes();
  return mask;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/** Decoupled-decay Adam on a flat parameter vector. */
class AdamW {
 public:
  AdamW(int dim, AdamWConfig cfg)
      : cfg_(cfg), m_(Eigen::ArrayXd::Zero(dim)), v_(Eigen::ArrayXd::Zero(dim)) {}

  /** One update in place. `mask` selects the coordinates weight decay applies to. */
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const Eigen::ArrayXd& mask) {
    if (theta.size() != m_.size() || grad.size() != m_.size() || mask.size() != m_.size())
      throw ShapeMismatchError("adamw: dimension mismatch");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad.array();
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.array().square();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    theta.array() -= cfg_.learning_rate *
                     ((m_ / bc1) / ((v_ / bc2).sqrt() + cfg_.epsilon) +
                      cfg_.weight_decay * mask * theta.array());
  }

  long step_count() const { return t_; }

 private:
  AdamWConfig cfg_;
  Eigen::ArrayXd m_, v_;
  long t_ = 0;
};

}  // namespace frailnet
