#pragma once

// Fully connected tanh networks evaluated column-wise on batches
// (one column per sample). Besides the usual parameter backprop this
// provides exact input gradients and the parameter gradient of
// "value + directional input derivative", which is what a value network
// needs when its gradient feeds the loss.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame::nn {

enum class OutputActivation : std::uint8_t { identity = 0, logistic = 1 };

struct MlpGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  void add_scaled(const MlpGradient& other, double k) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += k * other.weights[l];
      biases[l] += k * other.biases[l];
    }
  }
  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }
  double squared_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) s += weights[l].squaredNorm() + biases[l].squaredNorm();
    return s;
  }
};

class Mlp {
 public:
  Mlp() = default;

  /// layer_dims = {input, hidden..., output}; parameters start at zero.
  Mlp(const std::vector<std::size_t>& layer_dims, OutputActivation output) : output_(output) {
    if (layer_dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(layer_dims[l]);
      const auto out = static_cast<Eigen::Index>(layer_dims[l + 1]);
      if (in < 1 || out < 1) throw std::invalid_argument("Mlp: layer dims must be positive");
      weights_.push_back(Eigen::MatrixXd::Zero(out, in));
      biases_.push_back(Eigen::VectorXd::Zero(out));
    }
    const auto in0 = static_cast<Eigen::Index>(layer_dims.front());
    input_shift_ = Eigen::VectorXd::Zero(in0);
    input_scale_ = Eigen::VectorXd::Ones(in0);
  }

  /// Glorot-uniform weights, zero biases.
  template <class Rng>
  static Mlp random(const std::vector<std::size_t>& layer_dims, OutputActivation output, Rng& rng) {
    Mlp net(layer_dims, output);
    for (auto& w : net.weights_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
      }
    }
    return net;
  }

  std::size_t num_layers() const { return weights_.size(); }
  std::size_t input_dim() const { return weights_.empty() ? 0 : static_cast<std::size_t>(weights_.front().cols()); }
  std::size_t output_dim() const { return weights_.empty() ? 0 : static_cast<std::size_t>(weights_.back().rows()); }
  OutputActivation output_activation() const { return output_; }

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> dims{input_dim()};
    for (const auto& w : weights_) dims.push_back(static_cast<std::size_t>(w.rows()));
    return dims;
  }

  std::size_t num_parameters() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      total += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    }
    return total;
  }

  /// Fixed input standardization: the first layer sees (in - shift) * scale.
  /// Not trained.
  void set_input_normalization(const Eigen::VectorXd& shift, const Eigen::VectorXd& scale) {
    if (static_cast<std::size_t>(shift.size()) != input_dim() || static_cast<std::size_t>(scale.size()) != input_dim()) {
      throw std::invalid_argument("Mlp: normalization size must equal the input dimension");
    }
    if (!shift.allFinite() || !scale.allFinite() || (scale.array() <= 0.0).any()) {
      throw std::invalid_argument("Mlp: normalization must be finite with positive scale");
    }
    input_shift_ = shift;
    input_scale_ = scale;
  }
  const Eigen::VectorXd& input_shift() const { return input_shift_; }
  const Eigen::VectorXd& input_scale() const { return input_scale_; }

  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  /// Parameter i in (layer, weights column-major, then biases) order.
  double& parameter(std::size_t i) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const auto nw = static_cast<std::size_t>(weights_[l].size());
      if (i < nw) return weights_[l].data()[i];
      i -= nw;
      const auto nb = static_cast<std::size_t>(biases_[l].size());
      if (i < nb) return biases_[l].data()[i];
      i -= nb;
    }
    throw std::out_of_range("Mlp::parameter: index out of range");
  }

  MlpGradient zero_gradient() const {
    MlpGradient g;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      g.weights.push_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
      g.biases.push_back(Eigen::VectorXd::Zero(biases_[l].size()));
    }
    return g;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
    }
    return true;
  }

  bool operator==(const Mlp& o) const {
    if (output_ != o.output_ || weights_.size() != o.weights_.size()) return false;
    if (input_shift_.size() != o.input_shift_.size() || input_shift_ != o.input_shift_ ||
        input_scale_ != o.input_scale_) {
      return false;
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (weights_[l].rows() != o.weights_[l].rows() || weights_[l].cols() != o.weights_[l].cols()) return false;
      if (std::memcmp(weights_[l].data(), o.weights_[l].data(), sizeof(double) * weights_[l].size()) != 0) {
        return false;
      }
      if (std::memcmp(biases_[l].data(), o.biases_[l].data(), sizeof(double) * biases_[l].size()) != 0) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Eigen::MatrixXd> weights_;  // layer l: out x in
  std::vector<Eigen::VectorXd> biases_;
  Eigen::VectorXd input_shift_;
  Eigen::VectorXd input_scale_;
  OutputActivation output_ = OutputActivation::identity;
};

/// Activations kept from a forward pass: activations[0] is the standardized input,
/// activations[l] the tanh output of hidden layer l, and the last entry the
/// network output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;
};

namespace detail {

inline void check_input(const Mlp& net, const Eigen::MatrixXd& in) {
  if (net.num_layers() == 0) throw std::invalid_argument("Mlp: empty network");
  if (static_cast<std::size_t>(in.rows()) != net.input_dim()) {
    throw std::invalid_argument("Mlp: input has " + std::to_string(in.rows()) + " rows, expected " +
                                std::to_string(net.input_dim()));
  }
}

/// tanh through the vectorised exponential; libm's scalar tanh dominates
/// the run time otherwise.
inline void tanh_in_place(Eigen::MatrixXd& z) {
  z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

inline double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

inline ForwardCache forward_cached(const Mlp& net, const Eigen::MatrixXd& in) {
  detail::check_input(net, in);
  ForwardCache cache;
  cache.activations.reserve(net.num_layers() + 1);
  cache.activations.push_back(((in.colwise() - net.input_shift()).array().colwise() * net.input_scale().array()).matrix());
  const std::size_t last = net.num_layers() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    Eigen::MatrixXd z = net.weights()[l] * cache.activations.back();
    z.colwise() += net.biases()[l];
    if (l < last) {
      detail::tanh_in_place(z);
    } else if (net.output_activation() == OutputActivation::logistic) {
      z = z.unaryExpr([](double v) { return detail::logistic(v); });
    }
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

inline Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& in) {
  return forward_cached(net, in).activations.back();
}

/// Gradient of a scalar-output network with respect to its input, one column
/// per sample (input_dim x batch).
inline Eigen::MatrixXd input_gradient(const Mlp& net, const ForwardCache& cache) {
  if (net.output_dim() != 1) throw std::invalid_argument("input_gradient: network output must be scalar");
  const std::size_t L = net.num_layers();
  const auto batch = cache.activations.front().cols();
  Eigen::MatrixXd adj = Eigen::MatrixXd::Ones(1, batch);
  if (net.output_activation() == OutputActivation::logistic) {
    const auto& y = cache.activations.back();
    adj = (y.array() * (1.0 - y.array())).matrix();
  }
  for (std::size_t l = L; l-- > 0;) {
    Eigen::MatrixXd prev = net.weights()[l].transpose() * adj;
    if (l > 0) {
      const auto& a = cache.activations[l];
      prev = (prev.array() * (1.0 - a.array().square())).matrix();
    }
    adj = std::move(prev);
  }
  return (adj.array().colwise() * net.input_scale().array()).matrix();
}

inline Eigen::MatrixXd input_gradient(const Mlp& net, const Eigen::MatrixXd& in) {
  return input_gradient(net, forward_cached(net, in));
}

/// Jacobian (output_dim x input_dim) at a single input point.
inline Eigen::MatrixXd input_jacobian(const Mlp& net, const Eigen::VectorXd& point) {
  const ForwardCache cache = forward_cached(net, point);
  const std::size_t L = net.num_layers();
  const auto out = static_cast<Eigen::Index>(net.output_dim());
  Eigen::MatrixXd adj = Eigen::MatrixXd::Identity(out, out);
  if (net.output_activation() == OutputActivation::logistic) {
    const Eigen::VectorXd y = cache.activations.back().col(0);
    adj = (y.array() * (1.0 - y.array())).matrix().asDiagonal();
  }
  // adj rows index outputs; propagate d(out)/d(layer input) as out x width.
  for (std::size_t l = L; l-- > 0;) {
    Eigen::MatrixXd prev = adj * net.weights()[l];
    if (l > 0) {
      const Eigen::VectorXd s = (1.0 - cache.activations[l].col(0).array().square()).matrix();
      prev = prev * s.asDiagonal();
    }
    adj = std::move(prev);
  }
  return adj * net.input_scale().asDiagonal();
}

/// Parameter gradient of sum_columns <out_adjoint, output>.
inline MlpGradient backward(const Mlp& net, const ForwardCache& cache, const Eigen::MatrixXd& out_adjoint) {
  const std::size_t L = net.num_layers();
  MlpGradient g = net.zero_gradient();
  Eigen::MatrixXd adj = out_adjoint;
  if (net.output_activation() == OutputActivation::logistic) {
    const auto& y = cache.activations.back();
    adj = (adj.array() * y.array() * (1.0 - y.array())).matrix();
  }
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l].noalias() = adj * cache.activations[l].transpose();
    g.biases[l] = adj.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd prev = net.weights()[l].transpose() * adj;
    const auto& a = cache.activations[l];
    adj = (prev.array() * (1.0 - a.array().square())).matrix();
  }
  return g;
}

/// Parameter gradient of sum_columns [ value_weight_j * V(in_j) + direction_j . grad_in V(in_j) ]
/// for a scalar network with identity output. Computed by pushing the
/// direction forward as a tangent and reversing through both passes.
inline MlpGradient backward_value_and_slope(const Mlp& net, const ForwardCache& cache,
                                            const Eigen::MatrixXd& value_weight, const Eigen::MatrixXd& direction) {
  if (net.output_dim() != 1 || net.output_activation() != OutputActivation::identity) {
    throw std::invalid_argument("backward_value_and_slope: needs a scalar identity-output network");
  }
  const std::size_t L = net.num_layers();
  const auto batch = cache.activations.front().cols();
  if (value_weight.rows() != 1 || value_weight.cols() != batch || direction.cols() != batch ||
      static_cast<std::size_t>(direction.rows()) != net.input_dim()) {
    throw std::invalid_argument("backward_value_and_slope: weight/direction shape mismatch");
  }

  // Tangents: tangents[0] = direction, tangents[l] = d a_l along the direction.
  std::vector<Eigen::MatrixXd> tangents;
  std::vector<Eigen::MatrixXd> pre_tangents(L);
  tangents.reserve(L);
  tangents.push_back((direction.array().colwise() * net.input_scale().array()).matrix());
  for (std::size_t l = 0; l + 1 < L; ++l) {
    pre_tangents[l] = net.weights()[l] * tangents.back();
    const auto& a = cache.activations[l + 1];
    tangents.push_back((pre_tangents[l].array() * (1.0 - a.array().square())).matrix());
  }

  MlpGradient g = net.zero_gradient();
  Eigen::MatrixXd adj = value_weight;                        // d/d output value
  Eigen::MatrixXd tadj = Eigen::MatrixXd::Ones(1, batch);   // d/d output tangent
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l].noalias() = adj * cache.activations[l].transpose();
    g.weights[l].noalias() += tadj * tangents[l].transpose();
    g.biases[l] = adj.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd a_bar = net.weights()[l].transpose() * adj;
    Eigen::MatrixXd t_bar = net.weights()[l].transpose() * tadj;
    const auto a = cache.activations[l].array();
    const Eigen::ArrayXXd slope = 1.0 - a.square();
    // a = tanh(z), da = slope * dz, d(slope)/dz = -2 a slope
    adj = (a_bar.array() * slope - 2.0 * t_bar.array() * a * slope * pre_tangents[l - 1].array()).matrix();
    tadj = (t_bar.array() * slope).matrix();
  }
  return g;
}

/// First- and second-moment state of the adaptive optimiser.
struct OptimState {
  MlpGradient first;
  MlpGradient second;
  std::uint64_t step = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2 = 0.0;  // optional weight decay added to the gradient

  OptimState() = default;
  explicit OptimState(const Mlp& net, double lr = 3e-4)
      : first(net.zero_gradient()), second(net.zero_gradient()), learning_rate(lr) {}
};

/// Bias-corrected adaptive moment update of `net` in place.
inline void optimizer_step(OptimState& s, Mlp& net, const MlpGradient& grad) {
  if (!grad.all_finite()) throw std::runtime_error("optimizer_step: non-finite gradient");
  if (s.first.weights.size() != net.num_layers()) throw std::invalid_argument("optimizer_step: state/net mismatch");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  auto update = [&](auto& param, const auto& g_raw, auto& m, auto& v) {
    const auto g = (g_raw + s.l2 * param).eval();
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
    param.array() -= s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
  };
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    update(net.weights()[l], grad.weights[l], s.first.weights[l], s.second.weights[l]);
    update(net.biases()[l], grad.biases[l], s.first.biases[l], s.second.biases[l]);
  }
}

// Binary format (little-endian host order):
//   "EPGMLP\0\0" | u32 version | u8 output activation | u8 hidden activation (0 = tanh)
//   | u16 reserved | u32 layer count L | (L + 1) x u32 dims
//   | input shift f64 x dims[0] | input scale f64 x dims[0]
//   | per layer: weights column-major f64, then biases f64
inline constexpr char kMlpMagic[8] = {'E', 'P', 'G', 'M', 'L', 'P', '\0', '\0'};
inline constexpr std::uint32_t kMlpFormatVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("corrupt network data: truncated ") + what);
  return v;
}

}  // namespace detail

inline void write_mlp(std::ostream& os, const Mlp& net) {
  os.write(kMlpMagic, sizeof(kMlpMagic));
  detail::write_pod(os, kMlpFormatVersion);
  detail::write_pod(os, static_cast<std::uint8_t>(net.output_activation()));
  detail::write_pod(os, std::uint8_t{0});
  detail::write_pod(os, std::uint16_t{0});
  detail::write_pod(os, static_cast<std::uint32_t>(net.num_layers()));
  for (std::size_t d : net.layer_dims()) detail::write_pod(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(net.input_shift().data()),
           static_cast<std::streamsize>(sizeof(double) * net.input_shift().size()));
  os.write(reinterpret_cast<const char*>(net.input_scale().data()),
           static_cast<std::streamsize>(sizeof(double) * net.input_scale().size()));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    os.write(reinterpret_cast<const char*>(net.weights()[l].data()),
             static_cast<std::streamsize>(sizeof(double) * net.weights()[l].size()));
    os.write(reinterpret_cast<const char*>(net.biases()[l].data()),
             static_cast<std::streamsize>(sizeof(double) * net.biases()[l].size()));
  }
  if (!os) throw std::runtime_error("write_mlp: stream failure");
}

inline Mlp read_mlp(std::istream& is) {
  char magic[sizeof(kMlpMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMlpMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("corrupt network data: bad magic");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != kMlpFormatVersion) {
    throw std::runtime_error("network format version " + std::to_string(version) + " unsupported");
  }
  const auto out_act = detail::read_pod<std::uint8_t>(is, "header");
  const auto hidden_act = detail::read_pod<std::uint8_t>(is, "header");
  detail::read_pod<std::uint16_t>(is, "header");
  if (out_act > 1 || hidden_act != 0) throw std::runtime_error("corrupt network data: unknown activation");
  const auto layers = detail::read_pod<std::uint32_t>(is, "layer count");
  if (layers < 1 || layers > 1024) throw std::runtime_error("corrupt network data: bad layer count");
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i <= layers; ++i) {
    const auto d = detail::read_pod<std::uint32_t>(is, "dims");
    if (d < 1 || d > (1u << 20)) throw std::runtime_error("corrupt network data: bad layer width");
    dims.push_back(d);
  }
  Mlp net(dims, static_cast<OutputActivation>(out_act));
  Eigen::VectorXd shift(static_cast<Eigen::Index>(dims.front()));
  Eigen::VectorXd scale(shift.size());
  is.read(reinterpret_cast<char*>(shift.data()), static_cast<std::streamsize>(sizeof(double) * shift.size()));
  is.read(reinterpret_cast<char*>(scale.data()), static_cast<std::streamsize>(sizeof(double) * scale.size()));
  if (!is) throw std::runtime_error("corrupt network data: truncated normalization");
  try {
    net.set_input_normalization(shift, scale);
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("corrupt network data: invalid normalization");
  }
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    is.read(reinterpret_cast<char*>(net.weights()[l].data()),
            static_cast<std::streamsize>(sizeof(double) * net.weights()[l].size()));
    is.read(reinterpret_cast<char*>(net.biases()[l].data()),
            static_cast<std::streamsize>(sizeof(double) * net.biases()[l].size()));
    if (!is) throw std::runtime_error("corrupt network data: truncated parameters");
  }
  return net;
}

}  // namespace epigame::nn
