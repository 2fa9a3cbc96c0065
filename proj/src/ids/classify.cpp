#include "canhil/ids/classify.hpp"

#include "canhil/error.hpp"

namespace canhil::ids {

std::string_view to_string(Strategy s) {
  return s == Strategy::EcuCoupled ? "EcuCoupled" : "ControllerCoupled";
}

std::optional<Strategy> parse_strategy(std::string_view text) {
  if (text == "EcuCoupled" || text == "ecu") return Strategy::EcuCoupled;
  if (text == "ControllerCoupled" || text == "controller") return Strategy::ControllerCoupled;
  return std::nullopt;
}

void validate(const CostProfile& p) {
  for (double part : {p.rx_to_feature_us, p.feature_to_infer_us, p.infer_us, p.postprocess_us,
                      p.frame_receive_us}) {
    if (!(part >= 0.0)) throw Error(ErrorCode::ValidationError, "cost profile parts must be >= 0");
  }
}

CalibrationProfile paper_artix7() {
  constexpr double kFrameSlotUs = 296.0;
  constexpr double kCoreUs = 400.0;
  CalibrationProfile p;
  p.name = kPaperArtix7;
  // 296 + 1900 + 860 + 400 + 1600 = 5056
  p.ecu_coupled = {Strategy::EcuCoupled, 1900.0, 860.0, kCoreUs, 1600.0, kFrameSlotUs};
  // 296 + 40 + 20 + 400 + 38 = 794
  p.controller_coupled = {Strategy::ControllerCoupled, 40.0, 20.0, kCoreUs, 38.0, kFrameSlotUs};
  return p;
}

Classification classify_window(const QuantMlpModel& model, const WindowFeatures& features) {
  const Logits logits = mlp_infer(model, features);
  const Eigen::VectorXd probs = softmax(logits.cast<double>() * model.output_scale);
  Classification c;
  c.cls = static_cast<TrafficClass>(argmax(logits));
  for (std::size_t i = 0; i < kNumClasses; ++i) c.probabilities[i] = probs(static_cast<Eigen::Index>(i));
  return c;
}

Classifier::Classifier(std::shared_ptr<const QuantMlpModel> model) { set_model(std::move(model)); }

void Classifier::set_model(std::shared_ptr<const QuantMlpModel> model) {
  if (model) validate(*model);
  model_ = std::move(model);
  window_.clear();
}

const QuantMlpModel& Classifier::model() const {
  if (!model_) throw Error(ErrorCode::ModelNotLoaded, "no IDS model loaded");
  return *model_;
}

std::optional<Classification> Classifier::push(const can::CanFrame& frame) {
  if (!model_) throw Error(ErrorCode::ModelNotLoaded, "no IDS model loaded");
  window_.push(frame);
  if (!window_.full()) return std::nullopt;
  return classify_window(*model_, window_.features());
}

LatencyRecord latency_for(const ObservedFrame& frame, const CostProfile& profile, Bitrate bitrate) {
  LatencyRecord r;
  r.sof = frame.sof;
  r.verdict_time = frame.end + bitrate.ticks_ceil(profile.processing_us());
  r.elapsed_us = bitrate.to_us(r.verdict_time - r.sof);
  return r;
}

std::vector<IdsVerdict> classify(const QuantMlpModel* model, const CostProfile& profile,
                                 std::span<const ObservedFrame> frames, Bitrate bitrate) {
  if (!model) throw Error(ErrorCode::ModelNotLoaded, "no IDS model loaded");
  validate(profile);
  Classifier classifier(std::shared_ptr<const QuantMlpModel>(model, [](const QuantMlpModel*) {}));
  std::vector<IdsVerdict> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto c = classifier.push(frames[i].frame);
    if (!c) continue;
    IdsVerdict v;
    v.cls = c->cls;
    v.probabilities = c->probabilities;
    v.strategy = profile.strategy;
    v.frame_index = i;
    v.latency = latency_for(frames[i], profile, bitrate);
    out.push_back(v);
  }
  return out;
}

std::vector<LabeledWindow> make_windows(std::span<const can::CanFrame> frames,
                                        std::span<const TrafficClass> labels) {
  if (frames.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "frames and labels differ in length");
  }
  std::vector<LabeledWindow> out;
  FeatureWindow window;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    window.push(frames[i]);
    if (window.full()) out.push_back({window.features(), labels[i]});
  }
  return out;
}

monitor::MetricsReport evaluate(const QuantMlpModel& model, std::span<const LabeledWindow> windows) {
  validate(model);
  monitor::MetricsAccumulator acc;
  for (const auto& w : windows) acc.add(w.label, classify_window(model, w.features).cls);
  return acc.report();
}

}  // namespace canhil::ids
