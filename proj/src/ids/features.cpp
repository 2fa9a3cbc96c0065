#include "canhil/ids/features.hpp"

#include <algorithm>
#include <cassert>

namespace canhil::ids {

MessageFeatures extract_features(const can::CanFrame& frame) {
  MessageFeatures out{};
  out[0] = static_cast<std::uint8_t>((frame.id >> 8) & 0x07);
  out[1] = static_cast<std::uint8_t>(frame.id & 0xFF);
  const auto payload = frame.payload();
  std::copy(payload.begin(), payload.end(), out.begin() + 2);
  return out;
}

void FeatureWindow::push(const can::CanFrame& frame) {
  if (full()) slots_.pop_front();
  slots_.push_back(extract_features(frame));
}

WindowFeatures FeatureWindow::features() const {
  assert(full());
  WindowFeatures out{};
  auto it = out.begin();
  for (const auto& slot : slots_) it = std::copy(slot.begin(), slot.end(), it);
  return out;
}

}  // namespace canhil::ids
