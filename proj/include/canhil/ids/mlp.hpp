#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "canhil/ids/features.hpp"
#include "canhil/labels.hpp"

namespace canhil::ids {

inline constexpr std::size_t kNumLayers = 5;

/// Dense ReLU MLP: weights[l] is (out x in); the last layer is linear.
/// Inputs are raw feature bytes multiplied by `input_scale`.
template <typename Scalar>
struct Mlp {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Scalar input_scale = Scalar(1) / Scalar(255);
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  // Clipping range of each hidden activation learnt during quantisation-aware
  // training; empty when the model was trained in float only.
  std::vector<Scalar> activation_clip;

  std::size_t num_layers() const { return weights.size(); }
  Eigen::Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.empty() ? 0 : weights.back().rows(); }

  /// Batched forward pass; columns of `x` are samples of raw byte values.
  Matrix forward(const Matrix& x) const {
    Matrix h = x * input_scale;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Matrix z = (weights[l] * h).colwise() + biases[l];
      h = l + 1 < weights.size() ? Matrix(z.cwiseMax(Scalar(0))) : z;
    }
    return h;
  }

  Vector forward(const WindowFeatures& features) const {
    Matrix x(static_cast<Eigen::Index>(features.size()), 1);
    for (std::size_t i = 0; i < features.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = Scalar(features[i]);
    return forward(x).col(0);
  }
};

using FloatMlp = Mlp<float>;

/// Throws DimensionMismatch unless the layers chain and there are five of them.
template <typename Scalar>
void validate(const Mlp<Scalar>& mlp);

struct LabeledWindow {
  WindowFeatures features{};
  TrafficClass label = TrafficClass::Benign;
};

enum class Optimizer { Sgd, Adam };

struct TrainOptions {
  Optimizer optimizer = Optimizer::Adam;
  std::vector<Eigen::Index> hidden = {64, 64, 64, 64};
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  float learning_rate = 0.002f;
  // Extra epochs with int4 weights and 4-bit activations simulated in the
  // forward pass (straight-through gradients).
  std::size_t quant_aware_epochs = 20;
  std::uint64_t seed = 1;
  // Scale each class's loss by total/(classes*count) to offset imbalance.
  bool balance_classes = false;
  // Extra loss weight on benign windows; trades attack recall for fewer
  // false alarms.
  float benign_weight = 4.0f;
};

/// Minibatch gradient descent (Adam or plain SGD) on softmax cross-entropy. Deterministic for a given seed.
/// Throws InsufficientData with fewer than two classes present.
FloatMlp train_reference(std::span<const LabeledWindow> data, const TrainOptions& options);

TrafficClass predict(const FloatMlp& mlp, const WindowFeatures& features);
double accuracy(const FloatMlp& mlp, std::span<const LabeledWindow> data);

}  // namespace canhil::ids
