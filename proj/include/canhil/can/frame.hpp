#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canhil/time.hpp"

namespace canhil::can {

inline constexpr std::uint16_t kMaxStandardId = 0x7FF;
inline constexpr std::uint8_t kMaxDlc = 8;

/// Logical bus level. Dominant is logical 0 and overrides recessive.
enum class BitLevel : std::uint8_t { Dominant = 0, Recessive = 1 };

/// One CAN 2.0A frame. `data` beyond `dlc` (and all of it for remote
/// frames) must be zero.
struct CanFrame {
  std::uint16_t id = 0;
  bool rtr = false;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, kMaxDlc> data{};
  std::optional<SimTime> timestamp;

  static CanFrame make(std::uint16_t id, std::span<const std::uint8_t> payload);
  static CanFrame make(std::uint16_t id, std::initializer_list<std::uint8_t> payload);
  static CanFrame remote(std::uint16_t id, std::uint8_t dlc);

  std::span<const std::uint8_t> payload() const {
    return {data.data(), rtr ? std::size_t{0} : std::size_t{dlc}};
  }

  // Identity of the frame on the wire; the SOF timestamp is bookkeeping.
  friend bool operator==(const CanFrame& a, const CanFrame& b) {
    return a.id == b.id && a.rtr == b.rtr && a.dlc == b.dlc && a.data == b.data;
  }
};

std::string to_string(const CanFrame& frame);

/// Throws InvalidFrame when `frame` breaks the CAN 2.0A invariants.
void validate(const CanFrame& frame);

/// Levels from SOF through the end of intermission, with stuff bits inserted
/// in the SOF..CRC region.
struct FrameBitstream {
  std::vector<BitLevel> bits;
  std::uint32_t stuff_count = 0;
  std::uint32_t nominal_bits = 0;

  // Number of leading wire bits covered by stuffing (SOF..CRC incl. stuff bits).
  std::uint32_t stuffed_region = 0;
  // Wire index of the ACK slot.
  std::uint32_t ack_slot = 0;
  // Wire index one past the RTR bit: the end of the arbitration field.
  std::uint32_t arbitration_end = 0;
};

// Field widths of a CAN 2.0A data frame.
inline constexpr std::uint32_t kSofBits = 1, kIdBits = 11, kRtrBits = 1, kIdeBits = 1,
                               kR0Bits = 1, kDlcBits = 4, kCrcBits = 15, kCrcDelimBits = 1,
                               kAckSlotBits = 1, kAckDelimBits = 1, kEofBits = 7,
                               kIntermissionBits = 3;

/// Unstuffed frame length in bits, including EOF and intermission.
constexpr std::uint32_t nominal_bits(std::uint8_t data_bytes) {
  return kSofBits + kIdBits + kRtrBits + kIdeBits + kR0Bits + kDlcBits + 8u * data_bytes +
         kCrcBits + kCrcDelimBits + kAckSlotBits + kAckDelimBits + kEofBits +
         kIntermissionBits;
}

/// Bits subject to stuffing (SOF through the CRC sequence).
constexpr std::uint32_t stuffable_bits(std::uint8_t data_bytes) {
  return kSofBits + kIdBits + kRtrBits + kIdeBits + kR0Bits + kDlcBits + 8u * data_bytes +
         kCrcBits;
}

/// Upper bound on stuff bits: one after the first five bits, then one per
/// four (a stuff bit starts the next run).
constexpr std::uint32_t max_stuff_bits(std::uint8_t data_bytes) {
  return (stuffable_bits(data_bytes) - 1) / 4;
}

constexpr std::uint32_t worst_case_frame_bits(std::uint8_t data_bytes) {
  return nominal_bits(data_bytes) + max_stuff_bits(data_bytes);
}

/// CRC-15 over a bit sequence (generator 0x4599).
std::uint16_t crc15(std::span<const BitLevel> bits);

FrameBitstream encode_frame(const CanFrame& frame);

/// Decodes a wire-level frame. The ACK slot may be either level.
/// Throws StuffError, CrcError or FormError.
CanFrame decode_frame(std::span<const BitLevel> bits);
inline CanFrame decode_frame(const FrameBitstream& stream) { return decode_frame(stream.bits); }

/// Wire bits occupied by `frame` (nominal plus actual stuff bits).
std::uint32_t frame_bits(const CanFrame& frame);

using Microseconds = std::chrono::duration<double, std::micro>;

Microseconds frame_duration(const CanFrame& frame, Bitrate bitrate);

/// Winner of simultaneous contention: the lowest identifier, data before
/// remote for equal identifiers. Throws DuplicateId for two identical
/// (id, rtr) contenders and InvalidFrame for an empty set.
const CanFrame& arbitration_winner(std::span<const CanFrame> contenders);

}  // namespace canhil::can
