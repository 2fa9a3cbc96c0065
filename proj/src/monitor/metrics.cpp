#include "canhil/monitor/metrics.hpp"

#include <cmath>
#include <limits>

namespace canhil::monitor {

MetricsReport compute_metrics(const ConfusionMatrix& confusion) {
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  MetricsReport r;
  r.confusion = confusion;
  r.total = confusion.sum();
  r.correct = confusion.trace();
  r.misclassified = r.total - r.correct;
  const auto benign = index_of(TrafficClass::Benign);
  r.false_positives = confusion.row(benign).sum() - confusion(benign, benign);
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : kNaN;

  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    const double tp = static_cast<double>(confusion(i, i));
    const std::uint64_t predicted = confusion.col(i).sum();
    ClassMetrics& m = r.per_class[c];
    m.support = confusion.row(i).sum();
    m.precision = predicted ? tp / static_cast<double>(predicted) : kNaN;
    m.recall = m.support ? tp / static_cast<double>(m.support) : kNaN;
    if (std::isnan(m.precision) || std::isnan(m.recall)) {
      m.f1 = kNaN;
    } else if (m.precision + m.recall == 0.0) {
      m.f1 = 0.0;
    } else {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
  }
  return r;
}

MetricsReport compute_metrics(std::span<const std::pair<TrafficClass, TrafficClass>> truth_predicted) {
  MetricsAccumulator acc;
  for (const auto& [truth, predicted] : truth_predicted) acc.add(truth, predicted);
  return acc.report();
}

}  // namespace canhil::monitor
