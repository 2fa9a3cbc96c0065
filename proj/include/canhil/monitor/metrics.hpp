#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <utility>

#include "canhil/labels.hpp"

namespace canhil::monitor {

/// Rows are ground truth, columns predictions, both in TrafficClass order.
using ConfusionMatrix = Eigen::Matrix<std::uint64_t, 4, 4>;

struct ClassMetrics {
  double precision = 0.0;  // NaN when nothing was predicted as this class
  double recall = 0.0;     // NaN when the class never occurs
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct MetricsReport {
  ConfusionMatrix confusion = ConfusionMatrix::Zero();
  std::uint64_t total = 0;
  std::uint64_t correct = 0;
  std::uint64_t misclassified = 0;
  std::uint64_t false_positives = 0;  // benign predicted as an attack
  double accuracy = 0.0;
  std::array<ClassMetrics, kNumClasses> per_class{};
};

MetricsReport compute_metrics(const ConfusionMatrix& confusion);

class MetricsAccumulator {
 public:
  void add(TrafficClass truth, TrafficClass predicted) {
    ++confusion_(index_of(truth), index_of(predicted));
  }
  const ConfusionMatrix& confusion() const { return confusion_; }
  MetricsReport report() const { return compute_metrics(confusion_); }

 private:
  ConfusionMatrix confusion_ = ConfusionMatrix::Zero();
};

MetricsReport compute_metrics(std::span<const std::pair<TrafficClass, TrafficClass>> truth_predicted);

}  // namespace canhil::monitor
