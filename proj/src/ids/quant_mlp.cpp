#include "canhil/ids/quant_mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "canhil/error.hpp"

namespace canhil::ids {
namespace {

using I64Vector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

[[noreturn]] void mismatch(const std::string& what) { throw Error(ErrorCode::DimensionMismatch, what); }
[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ValidationError, what); }

std::int64_t activation_max(int bits) { return (std::int64_t{1} << bits) - 1; }

std::int64_t requantise(std::int64_t acc, const QuantLayer& layer) {
  const __int128 scaled = static_cast<__int128>(acc) * layer.multiplier +
                          (static_cast<__int128>(1) << (layer.shift - 1));
  const __int128 shifted = scaled >> layer.shift;  // arithmetic: floor
  return static_cast<std::int64_t>(
      std::clamp<__int128>(shifted, 0, activation_max(layer.activation_bits)));
}

I64Vector run_layer(const QuantLayer& layer, const I64Vector& x) {
  I64Vector acc = layer.weights.cast<std::int64_t>() * x + layer.bias.cast<std::int64_t>();
  if (layer.is_output()) return acc;
  for (Eigen::Index i = 0; i < acc.size(); ++i) acc(i) = requantise(acc(i), layer);
  return acc;
}

std::int32_t saturate_i32(std::int64_t v) {
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(
      v, std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::max()));
}

}  // namespace

void validate(const QuantMlpModel& model) {
  if (model.layers.size() != kNumLayers) {
    mismatch("expected " + std::to_string(kNumLayers) + " layers, got " +
             std::to_string(model.layers.size()));
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const QuantLayer& layer = model.layers[l];
    const std::string where = "layer " + std::to_string(l);
    if (layer.bias.size() != layer.out_dim()) mismatch(where + ": bias size mismatch");
    if (l > 0 && layer.in_dim() != model.layers[l - 1].out_dim()) {
      mismatch(where + ": input width " + std::to_string(layer.in_dim()) +
               " does not match previous output " + std::to_string(model.layers[l - 1].out_dim()));
    }
    if (layer.weights.size() > 0 &&
        (layer.weights.minCoeff() < kInt4Min || layer.weights.maxCoeff() > kInt4Max)) {
      invalid(where + ": weight outside the int4 range");
    }
    const bool last = l + 1 == model.layers.size();
    if (last != layer.is_output()) invalid(where + ": only the final layer may skip activation");
    if (!last) {
      if (layer.activation_bits < 1 || layer.activation_bits > 16) invalid(where + ": bad activation width");
      if (layer.multiplier <= 0 || layer.shift < 1 || layer.shift > 62) {
        invalid(where + ": bad requantisation multiplier/shift");
      }
    }
  }
  if (model.output_dim() != static_cast<Eigen::Index>(kOutputDim)) {
    mismatch("model must produce " + std::to_string(kOutputDim) + " logits");
  }
}

Logits mlp_infer(const QuantMlpModel& model, std::span<const std::uint8_t> features) {
  if (model.layers.empty() || static_cast<Eigen::Index>(features.size()) != model.input_dim()) {
    mismatch("feature length " + std::to_string(features.size()) + " does not match model input " +
             std::to_string(model.input_dim()));
  }
  I64Vector x(static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i) x(static_cast<Eigen::Index>(i)) = features[i];
  for (const QuantLayer& layer : model.layers) {
    if (layer.in_dim() != x.size()) mismatch("layer width mismatch during inference");
    x = run_layer(layer, x);
  }
  Logits out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = saturate_i32(x(i));
  return out;
}

void to_fixed_point(double factor, std::int32_t& multiplier, int& shift) {
  if (!(factor > 0.0) || !std::isfinite(factor)) invalid("requantisation factor must be positive");
  int exponent = 0;
  const double mantissa = std::frexp(factor, &exponent);  // [0.5, 1)
  std::int64_t m = std::llround(mantissa * 2147483648.0);
  if (m == (std::int64_t{1} << 31)) {
    m >>= 1;
    ++exponent;
  }
  shift = 31 - exponent;
  if (shift < 1 || shift > 62) invalid("requantisation factor out of range: " + std::to_string(factor));
  multiplier = static_cast<std::int32_t>(m);
}

int quantise_weight(double w, double scale) {
  const double q = std::round(w / scale);
  return static_cast<int>(std::clamp(q, double{kInt4Min}, double{kInt4Max}));
}

QuantisationResult quantise_model(const FloatMlp& mlp, std::span<const WindowFeatures> calibration,
                                  double clip_quantile) {
  validate(mlp);
  QuantisationResult result;
  QuantMlpModel& model = result.model;
  model.input_scale = static_cast<double>(mlp.input_scale);

  // Integer activations of the calibration set entering the current layer.
  std::vector<I64Vector> acts;
  acts.reserve(calibration.size());
  for (const auto& window : calibration) {
    I64Vector x(static_cast<Eigen::Index>(window.size()));
    for (std::size_t i = 0; i < window.size(); ++i) x(static_cast<Eigen::Index>(i)) = window[i];
    acts.push_back(std::move(x));
  }
  // Per-unit [lo, hi] bound on the integer input, used without calibration data.
  Eigen::VectorXd in_lo = Eigen::VectorXd::Zero(mlp.input_dim());
  Eigen::VectorXd in_hi = Eigen::VectorXd::Constant(mlp.input_dim(), 255.0);

  double in_scale = model.input_scale;
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const auto& w = mlp.weights[l];
    const auto& b = mlp.biases[l];
    const bool last = l + 1 == mlp.num_layers();

    QuantLayer layer;
    const double max_abs = static_cast<double>(w.cwiseAbs().maxCoeff());
    layer.weight_scale = max_abs > 0.0 ? max_abs / kInt4Max : 1.0;
    layer.weights.resize(w.rows(), w.cols());
    double max_err = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const int q = quantise_weight(w(i, j), layer.weight_scale);
        layer.weights(i, j) = static_cast<std::int8_t>(q);
        max_err = std::max(max_err, std::abs(q * layer.weight_scale - static_cast<double>(w(i, j))));
      }
    }
    result.max_weight_error.push_back(max_err);

    const double acc_scale = in_scale * layer.weight_scale;  // real value of one accumulator unit
    layer.bias.resize(b.size());
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double q = std::round(static_cast<double>(b(i)) / acc_scale);
      layer.bias(i) = static_cast<std::int32_t>(std::clamp<double>(
          q, std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::max()));
    }

    if (last) {
      layer.activation_bits = 0;
      model.output_scale = acc_scale;
      model.layers.push_back(std::move(layer));
      break;
    }

    // Activation range: largest post-ReLU accumulator seen (or bounded).
    const Eigen::MatrixXd wq = layer.weights.cast<double>();
    const Eigen::VectorXd bq = layer.bias.cast<double>();
    double acc_max = 0.0;
    if (!mlp.activation_clip.empty()) {
      acc_max = static_cast<double>(mlp.activation_clip[l]) / acc_scale;
    } else if (!acts.empty()) {
      std::vector<double> peaks;
      for (const auto& x : acts) {
        const I64Vector acc = layer.weights.cast<std::int64_t>() * x + layer.bias.cast<std::int64_t>();
        for (Eigen::Index i = 0; i < acc.size(); ++i) {
          if (acc(i) > 0) peaks.push_back(static_cast<double>(acc(i)));
        }
      }
      if (!peaks.empty()) {
        const auto k = static_cast<std::size_t>(std::floor(clip_quantile * static_cast<double>(peaks.size() - 1)));
        std::nth_element(peaks.begin(), peaks.begin() + static_cast<std::ptrdiff_t>(k), peaks.end());
        acc_max = peaks[k];
      }
    } else {
      const Eigen::VectorXd hi =
          wq.cwiseMax(0.0) * in_hi + wq.cwiseMin(0.0) * in_lo + bq;
      acc_max = std::max(0.0, hi.maxCoeff());
    }
    if (acc_max <= 0.0) acc_max = 1.0;  // dead layer; any positive scale will do

    layer.activation_bits = kActivationBits;
    const double levels = static_cast<double>(activation_max(kActivationBits));
    // acc * factor maps the observed maximum onto the top activation level.
    to_fixed_point(levels / acc_max, layer.multiplier, layer.shift);
    const double factor = static_cast<double>(layer.multiplier) / std::ldexp(1.0, layer.shift);
    in_scale = acc_scale / factor;

    for (auto& x : acts) x = run_layer(layer, x);
    in_lo = Eigen::VectorXd::Zero(layer.out_dim());
    in_hi = Eigen::VectorXd::Constant(layer.out_dim(), levels);
    model.layers.push_back(std::move(layer));
  }
  validate(model);
  return result;
}

}  // namespace canhil::ids
