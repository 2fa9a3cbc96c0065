#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "canhil/ids/mlp.hpp"

namespace canhil::ids {

inline constexpr int kInt4Min = -8;
inline constexpr int kInt4Max = 7;
inline constexpr int kActivationBits = 4;
inline constexpr std::size_t kOutputDim = 4;

/// One integer affine layer.
///
/// acc = weights * x + bias, accumulated in 64 bits. Hidden layers then
/// requantise with a quantised ReLU:
///
///   y = clamp((acc * multiplier + 2^(shift-1)) >> shift, 0, 2^activation_bits - 1)
///
/// i.e. round-half-up of acc * multiplier / 2^shift. The output layer
/// (activation_bits == 0) returns acc unchanged as the logit.
struct QuantLayer {
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> weights;  // out x in, int4 range
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1> bias;
  double weight_scale = 1.0;  // real weight = q * weight_scale
  std::int32_t multiplier = 0;
  int shift = 0;
  int activation_bits = kActivationBits;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
  bool is_output() const { return activation_bits == 0; }
};

struct QuantMlpModel {
  double input_scale = 1.0;  // real input = byte * input_scale
  std::vector<QuantLayer> layers;
  // Real value of one logit unit; only used to feed softmax.
  double output_scale = 1.0;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

/// Throws DimensionMismatch (shape) or ValidationError (ranges).
void validate(const QuantMlpModel& model);

using Logits = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1>;

/// Pure integer forward pass. Throws DimensionMismatch when `features` does
/// not match the first layer.
Logits mlp_infer(const QuantMlpModel& model, std::span<const std::uint8_t> features);

/// Max-shifted softmax.
template <typename Derived>
Eigen::VectorXd softmax(const Eigen::MatrixBase<Derived>& logits) {
  const Eigen::VectorXd x = logits.template cast<double>();
  const Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Index of the first maximum.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

/// Splits a positive real factor into multiplier / 2^shift with the
/// multiplier in [2^30, 2^31). Throws ValidationError when out of range.
void to_fixed_point(double factor, std::int32_t& multiplier, int& shift);

int quantise_weight(double w, double scale);

struct QuantisationResult {
  QuantMlpModel model;
  std::vector<double> max_weight_error;  // per layer, in real units
};

/// Post-training symmetric quantisation: per-layer scale max|w|/7, weights
/// rounded to int4, biases to the accumulator grid. Activation ranges come
/// from `calibration` windows run through the partly-quantised network; with
/// none, an interval bound over all byte inputs is used.
QuantisationResult quantise_model(const FloatMlp& mlp,
                                  std::span<const WindowFeatures> calibration = {},
                                  double clip_quantile = 1.0);

}  // namespace canhil::ids
