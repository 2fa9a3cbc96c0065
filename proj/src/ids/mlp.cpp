#include "canhil/ids/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "canhil/error.hpp"
#include "canhil/sim/random.hpp"

namespace canhil::ids {

template <typename Scalar>
void validate(const Mlp<Scalar>& mlp) {
  if (mlp.weights.size() != kNumLayers || mlp.biases.size() != kNumLayers) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(kNumLayers) + " layers, got " +
                    std::to_string(mlp.weights.size()));
  }
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    if (mlp.biases[l].size() != mlp.weights[l].rows()) {
      throw Error(ErrorCode::DimensionMismatch, "bias size mismatch in layer " + std::to_string(l));
    }
    if (l > 0 && mlp.weights[l].cols() != mlp.weights[l - 1].rows()) {
      throw Error(ErrorCode::DimensionMismatch, "layer " + std::to_string(l) + " input width " +
                                                    std::to_string(mlp.weights[l].cols()) +
                                                    " does not match previous output " +
                                                    std::to_string(mlp.weights[l - 1].rows()));
    }
  }
  if (!mlp.activation_clip.empty() && mlp.activation_clip.size() != kNumLayers - 1) {
    throw Error(ErrorCode::DimensionMismatch, "expected one activation clip per hidden layer");
  }
  if (mlp.input_dim() != static_cast<Eigen::Index>(kFeatureLength)) {
    throw Error(ErrorCode::DimensionMismatch, "first layer must take " +
                                                  std::to_string(kFeatureLength) + " features");
  }
}

template void validate<float>(const Mlp<float>&);
template void validate<double>(const Mlp<double>&);

namespace {

using Matrix = FloatMlp::Matrix;
using Vector = FloatMlp::Vector;

FloatMlp init_mlp(const std::vector<Eigen::Index>& dims, sim::Rng& rng) {
  FloatMlp mlp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Eigen::Index in = dims[l];
    const Eigen::Index out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in));  // He-uniform
    Matrix w(out, in);
    for (Eigen::Index j = 0; j < in; ++j) {
      for (Eigen::Index i = 0; i < out; ++i) w(i, j) = static_cast<float>(rng.uniform(-limit, limit));
    }
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(Vector::Zero(out));
  }
  return mlp;
}

Matrix column_softmax(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const auto col = z.col(c);
    const Vector e = (col.array() - col.maxCoeff()).exp().matrix();
    p.col(c) = e / e.sum();
  }
  return p;
}

constexpr float kActivationLevels = 15.0f;  // 4-bit unsigned
constexpr float kClipMomentum = 0.9f;
constexpr float kClipQuantile = 0.99f;
constexpr float kWeightClipRms = 2.5f;
constexpr float kQuantAwareRateFactor = 0.25f;

// Weights snapped to the symmetric int4 grid of their layer.
Matrix fake_quant_weights(const Matrix& w) {
  const float max_abs = w.cwiseAbs().maxCoeff();
  if (max_abs <= 0.0f) return w;
  const float scale = max_abs / 7.0f;
  return ((w / scale).array().round().cwiseMax(-8.0f).cwiseMin(7.0f) * scale).matrix();
}

// Quantile of the positive entries; robust range for the 16 activation levels.
float batch_quantile(const Matrix& a, float q) {
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] > 0.0f) v.push_back(a.data()[i]);
  }
  if (v.empty()) return 0.0f;
  const auto k = static_cast<std::size_t>(q * static_cast<float>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

Matrix fake_quant_activations(const Matrix& a, float clip) {
  const float scale = clip / kActivationLevels;
  return ((a / scale).array().round().cwiseMax(0.0f).cwiseMin(kActivationLevels) * scale).matrix();
}

}  // namespace

FloatMlp train_reference(std::span<const LabeledWindow> data, const TrainOptions& options) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& w : data) ++counts[index_of(w.label)];
  const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) {
    throw Error(ErrorCode::InsufficientData, "training needs at least two classes, got " +
                                                 std::to_string(present));
  }
  if (options.hidden.size() != kNumLayers - 1) {
    throw Error(ErrorCode::DimensionMismatch, "a five-layer model needs four hidden widths");
  }

  sim::Rng rng(sim::derive_seed(options.seed, "train"));
  std::vector<Eigen::Index> dims{static_cast<Eigen::Index>(kFeatureLength)};
  dims.insert(dims.end(), options.hidden.begin(), options.hidden.end());
  dims.push_back(static_cast<Eigen::Index>(kNumClasses));
  FloatMlp mlp = init_mlp(dims, rng);

  std::array<float, kNumClasses> class_weight;
  class_weight.fill(1.0f);
  if (options.balance_classes) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (counts[c]) {
        class_weight[c] = static_cast<float>(data.size()) /
                          static_cast<float>(static_cast<std::size_t>(present) * counts[c]);
      }
    }
  }

  class_weight[index_of(TrafficClass::Benign)] *= options.benign_weight;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  const std::size_t layers = mlp.num_layers();
  std::vector<Matrix> h(layers + 1), z(layers);

  // Adam moment estimates.
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kEps = 1e-8f;
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  for (std::size_t l = 0; l < layers; ++l) {
    mw.push_back(Matrix::Zero(mlp.weights[l].rows(), mlp.weights[l].cols()));
    vw.push_back(mw.back());
    mb.push_back(Vector::Zero(mlp.biases[l].size()));
    vb.push_back(mb.back());
  }
  std::uint64_t t = 0;
  std::vector<float> clip(layers - 1, 0.0f);
  std::vector<Matrix> wq(layers);

  const std::size_t total_epochs = options.epochs + options.quant_aware_epochs;
  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    const bool quant_aware = epoch >= options.epochs;
    for (std::size_t i = order.size(); i > 1; --i) {  // Fisher-Yates
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      Matrix x(static_cast<Eigen::Index>(kFeatureLength), static_cast<Eigen::Index>(n));
      Matrix target = Matrix::Zero(static_cast<Eigen::Index>(kNumClasses), static_cast<Eigen::Index>(n));
      Eigen::RowVectorXf weight(static_cast<Eigen::Index>(n));
      for (std::size_t k = 0; k < n; ++k) {
        const LabeledWindow& w = data[order[start + k]];
        const auto col = static_cast<Eigen::Index>(k);
        for (std::size_t f = 0; f < kFeatureLength; ++f) x(static_cast<Eigen::Index>(f), col) = w.features[f];
        target(static_cast<Eigen::Index>(index_of(w.label)), col) = 1.0f;
        weight(col) = class_weight[index_of(w.label)];
      }

      h[0] = x * mlp.input_scale;
      for (std::size_t l = 0; l < layers; ++l) {
        wq[l] = quant_aware ? fake_quant_weights(mlp.weights[l]) : mlp.weights[l];
        z[l] = (wq[l] * h[l]).colwise() + mlp.biases[l];
        if (l + 1 == layers) {
          h[l + 1] = z[l];
          continue;
        }
        h[l + 1] = z[l].cwiseMax(0.0f);
        if (quant_aware) {
          const float peak = std::max(batch_quantile(h[l + 1], kClipQuantile), 1e-6f);
          clip[l] = clip[l] == 0.0f ? peak : kClipMomentum * clip[l] + (1.0f - kClipMomentum) * peak;
          h[l + 1] = fake_quant_activations(h[l + 1], clip[l]);
        }
      }

      ++t;
      const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(t));
      const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(t));
      Matrix delta = column_softmax(h[layers]) - target;
      delta = delta * weight.asDiagonal();
      delta /= static_cast<float>(n);
      for (std::size_t l = layers; l-- > 0;) {
        const Matrix grad_w = delta * h[l].transpose();
        const Vector grad_b = delta.rowwise().sum();
        if (l > 0) {
          Matrix back = wq[l].transpose() * delta;
          if (quant_aware) {
            const float c = clip[l - 1];
            delta = back.cwiseProduct(((z[l - 1].array() > 0.0f) && (z[l - 1].array() < c)).cast<float>().matrix());
          } else {
            delta = back.cwiseProduct((z[l - 1].array() > 0.0f).cast<float>().matrix());
          }
        }
        if (options.optimizer == Optimizer::Sgd) {
          mlp.weights[l] -= options.learning_rate * grad_w;
          mlp.biases[l] -= options.learning_rate * grad_b;
          continue;
        }
        mw[l] = kBeta1 * mw[l] + (1.0f - kBeta1) * grad_w;
        vw[l] = kBeta2 * vw[l] + (1.0f - kBeta2) * grad_w.cwiseAbs2();
        mb[l] = kBeta1 * mb[l] + (1.0f - kBeta1) * grad_b;
        vb[l] = kBeta2 * vb[l] + (1.0f - kBeta2) * grad_b.cwiseAbs2();
        const float lr = quant_aware ? options.learning_rate * kQuantAwareRateFactor : options.learning_rate;
        mlp.weights[l].array() -= lr * (mw[l].array() / c1) /
                                  ((vw[l].array() / c2).sqrt() + kEps);
        mlp.biases[l].array() -= lr * (mb[l].array() / c1) /
                                 ((vb[l].array() / c2).sqrt() + kEps);
        if (quant_aware) {
          // Keep outliers from stretching the int4 grid of the whole layer.
          const float rms = std::sqrt(mlp.weights[l].squaredNorm() / static_cast<float>(mlp.weights[l].size()));
          const float limit = kWeightClipRms * rms;
          mlp.weights[l] = mlp.weights[l].cwiseMax(-limit).cwiseMin(limit);
        }
      }
    }
  }
  if (options.quant_aware_epochs > 0) mlp.activation_clip = clip;
  return mlp;
}

TrafficClass predict(const FloatMlp& mlp, const WindowFeatures& features) {
  const FloatMlp::Vector out = mlp.forward(features);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < out.size(); ++i) {
    if (out(i) > out(best)) best = i;
  }
  return static_cast<TrafficClass>(best);
}

double accuracy(const FloatMlp& mlp, std::span<const LabeledWindow> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& w : data) hits += predict(mlp, w.features) == w.label;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace canhil::ids
