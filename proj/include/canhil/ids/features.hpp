#pragma once

#include <array>
#include <cstdint>
#include <deque>

#include "canhil/can/frame.hpp"

namespace canhil::ids {

inline constexpr std::size_t kWindowMessages = 4;
inline constexpr std::size_t kBytesPerMessage = 10;
inline constexpr std::size_t kFeatureLength = kWindowMessages * kBytesPerMessage;

using MessageFeatures = std::array<std::uint8_t, kBytesPerMessage>;
using WindowFeatures = std::array<std::uint8_t, kFeatureLength>;

/// Big-endian 11-bit id in two bytes, then the payload zero-padded to 8.
MessageFeatures extract_features(const can::CanFrame& frame);

/// FIFO of the most recent four messages, oldest first.
class FeatureWindow {
 public:
  void push(const can::CanFrame& frame);
  bool full() const { return slots_.size() == kWindowMessages; }
  std::size_t size() const { return slots_.size(); }
  void clear() { slots_.clear(); }

  /// Concatenated features, oldest message first. Requires full().
  WindowFeatures features() const;

 private:
  std::deque<MessageFeatures> slots_;
};

}  // namespace canhil::ids
