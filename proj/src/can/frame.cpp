#include "canhil/can/frame.hpp"

#include <algorithm>
#include <cstdio>

#include "canhil/error.hpp"

namespace canhil::can {
namespace {

constexpr std::uint16_t kCrcPolynomial = 0x4599;

void push_field(std::vector<BitLevel>& out, std::uint32_t value, std::uint32_t width) {
  for (std::uint32_t i = width; i-- > 0;) {
    out.push_back(((value >> i) & 1u) ? BitLevel::Recessive : BitLevel::Dominant);
  }
}

// Unstuffed SOF..DATA bits; the CRC is computed over exactly these.
std::vector<BitLevel> crc_input_bits(const CanFrame& f) {
  std::vector<BitLevel> bits;
  bits.reserve(stuffable_bits(kMaxDlc));
  push_field(bits, 0, kSofBits);
  push_field(bits, f.id, kIdBits);
  push_field(bits, f.rtr ? 1 : 0, kRtrBits);
  push_field(bits, 0, kIdeBits);
  push_field(bits, 0, kR0Bits);
  push_field(bits, f.dlc, kDlcBits);
  for (std::uint8_t byte : f.payload()) push_field(bits, byte, 8);
  return bits;
}

[[noreturn]] void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

// Reads destuffed bits from the front of a wire sequence.
class Destuffer {
 public:
  explicit Destuffer(std::span<const BitLevel> wire) : wire_(wire) {}

  BitLevel next() {
    if (pos_ >= wire_.size()) fail(ErrorCode::FormError, "frame truncated in stuffed region");
    const BitLevel bit = wire_[pos_++];
    note(bit);
    if (run_ == 5) consume_stuff_bit();
    return bit;
  }

  std::uint32_t read(std::uint32_t width) {
    std::uint32_t value = 0;
    for (std::uint32_t i = 0; i < width; ++i) {
      value = (value << 1) | (next() == BitLevel::Recessive ? 1u : 0u);
    }
    return value;
  }

  std::size_t position() const { return pos_; }

 private:
  void note(BitLevel bit) {
    if (run_ > 0 && bit == last_) {
      ++run_;
    } else {
      last_ = bit;
      run_ = 1;
    }
  }

  void consume_stuff_bit() {
    if (pos_ >= wire_.size()) fail(ErrorCode::FormError, "frame truncated at stuff bit");
    const BitLevel stuff = wire_[pos_++];
    if (stuff == last_) {
      fail(ErrorCode::StuffError,
           "six consecutive identical bits at wire bit " + std::to_string(pos_ - 1));
    }
    last_ = stuff;
    run_ = 1;
  }

  std::span<const BitLevel> wire_;
  std::size_t pos_ = 0;
  BitLevel last_ = BitLevel::Recessive;
  int run_ = 0;
};

}  // namespace

CanFrame CanFrame::make(std::uint16_t id, std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxDlc) fail(ErrorCode::InvalidFrame, "payload longer than 8 bytes");
  CanFrame f;
  f.id = id;
  f.dlc = static_cast<std::uint8_t>(payload.size());
  std::copy(payload.begin(), payload.end(), f.data.begin());
  validate(f);
  return f;
}

CanFrame CanFrame::make(std::uint16_t id, std::initializer_list<std::uint8_t> payload) {
  return make(id, std::span<const std::uint8_t>(payload.begin(), payload.size()));
}

CanFrame CanFrame::remote(std::uint16_t id, std::uint8_t dlc) {
  CanFrame f;
  f.id = id;
  f.rtr = true;
  f.dlc = dlc;
  validate(f);
  return f;
}

std::string to_string(const CanFrame& frame) {
  char head[32];
  std::snprintf(head, sizeof head, "%03X%s [%u]", frame.id, frame.rtr ? " RTR" : "",
                frame.dlc);
  std::string out = head;
  for (std::uint8_t b : frame.payload()) {
    char byte[4];
    std::snprintf(byte, sizeof byte, " %02X", b);
    out += byte;
  }
  return out;
}

void validate(const CanFrame& frame) {
  if (frame.id > kMaxStandardId) {
    fail(ErrorCode::InvalidFrame, "identifier exceeds 11 bits: " + std::to_string(frame.id));
  }
  if (frame.dlc > kMaxDlc) {
    fail(ErrorCode::InvalidFrame, "dlc out of range: " + std::to_string(frame.dlc));
  }
  const std::size_t used = frame.rtr ? 0 : frame.dlc;
  for (std::size_t i = used; i < kMaxDlc; ++i) {
    if (frame.data[i] != 0) fail(ErrorCode::InvalidFrame, "payload bytes beyond dlc");
  }
}

std::uint16_t crc15(std::span<const BitLevel> bits) {
  std::uint16_t crc = 0;
  for (BitLevel bit : bits) {
    const bool in = bit == BitLevel::Recessive;
    const bool top = (crc >> 14) & 1u;
    crc = static_cast<std::uint16_t>((crc << 1) & 0x7FFF);
    if (in != top) crc ^= kCrcPolynomial;
  }
  return crc;
}

FrameBitstream encode_frame(const CanFrame& frame) {
  validate(frame);
  std::vector<BitLevel> raw = crc_input_bits(frame);
  push_field(raw, crc15(raw), kCrcBits);

  FrameBitstream out;
  out.nominal_bits = nominal_bits(static_cast<std::uint8_t>(frame.payload().size()));
  out.bits.reserve(out.nominal_bits + max_stuff_bits(kMaxDlc));

  constexpr std::uint32_t kArbitrationBits = kSofBits + kIdBits + kRtrBits;
  BitLevel last = BitLevel::Recessive;
  int run = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const BitLevel bit = raw[i];
    out.bits.push_back(bit);
    if (run > 0 && bit == last) {
      ++run;
    } else {
      last = bit;
      run = 1;
    }
    if (run == 5) {
      last = bit == BitLevel::Dominant ? BitLevel::Recessive : BitLevel::Dominant;
      out.bits.push_back(last);
      ++out.stuff_count;
      run = 1;
    }
    if (i + 1 == kArbitrationBits) {
      out.arbitration_end = static_cast<std::uint32_t>(out.bits.size());
    }
  }
  out.stuffed_region = static_cast<std::uint32_t>(out.bits.size());

  push_field(out.bits, 1, kCrcDelimBits);
  out.ack_slot = static_cast<std::uint32_t>(out.bits.size());
  push_field(out.bits, 1, kAckSlotBits);  // transmitter leaves the slot recessive
  push_field(out.bits, 1, kAckDelimBits);
  push_field(out.bits, 0x7F, kEofBits);
  push_field(out.bits, 0x7, kIntermissionBits);
  return out;
}

CanFrame decode_frame(std::span<const BitLevel> bits) {
  Destuffer in(bits);
  std::vector<BitLevel> crc_input;

  auto read_field = [&](std::uint32_t width) {
    std::uint32_t value = 0;
    for (std::uint32_t i = 0; i < width; ++i) {
      const BitLevel b = in.next();
      crc_input.push_back(b);
      value = (value << 1) | (b == BitLevel::Recessive ? 1u : 0u);
    }
    return value;
  };

  if (read_field(kSofBits) != 0) fail(ErrorCode::FormError, "start of frame is not dominant");
  CanFrame f;
  f.id = static_cast<std::uint16_t>(read_field(kIdBits));
  f.rtr = read_field(kRtrBits) != 0;
  if (read_field(kIdeBits) != 0) fail(ErrorCode::FormError, "extended frames are not supported");
  read_field(kR0Bits);
  const std::uint32_t dlc = read_field(kDlcBits);
  if (dlc > kMaxDlc) fail(ErrorCode::FormError, "dlc above 8: " + std::to_string(dlc));
  f.dlc = static_cast<std::uint8_t>(dlc);
  const std::size_t data_bytes = f.rtr ? 0 : f.dlc;
  for (std::size_t i = 0; i < data_bytes; ++i) {
    f.data[i] = static_cast<std::uint8_t>(read_field(8));
  }
  const std::uint32_t received_crc = in.read(kCrcBits);
  if (received_crc != crc15(crc_input)) {
    fail(ErrorCode::CrcError, "CRC mismatch for id " + std::to_string(f.id));
  }

  // Fixed-form tail: CRC delimiter, ACK slot (either level), ACK delimiter, EOF.
  std::size_t pos = in.position();
  constexpr std::size_t kTail = kCrcDelimBits + kAckSlotBits + kAckDelimBits + kEofBits;
  if (bits.size() < pos + kTail) fail(ErrorCode::FormError, "frame truncated after CRC");
  for (std::size_t i = 0; i < kTail; ++i) {
    if (i == kCrcDelimBits) continue;  // ACK slot
    if (bits[pos + i] != BitLevel::Recessive) {
      fail(ErrorCode::FormError, "dominant bit in fixed-form field at wire bit " +
                                     std::to_string(pos + i));
    }
  }
  return f;
}

std::uint32_t frame_bits(const CanFrame& frame) {
  const FrameBitstream s = encode_frame(frame);
  return s.nominal_bits + s.stuff_count;
}

Microseconds frame_duration(const CanFrame& frame, Bitrate bitrate) {
  if (bitrate.bits_per_second == 0) fail(ErrorCode::InvalidFrame, "bitrate must be positive");
  return Microseconds(bitrate.to_us(frame_bits(frame)));
}

const CanFrame& arbitration_winner(std::span<const CanFrame> contenders) {
  if (contenders.empty()) fail(ErrorCode::InvalidFrame, "arbitration needs a contender");
  // Lower (id, rtr) means an earlier dominant bit in the arbitration field.
  auto key = [](const CanFrame& f) { return (static_cast<std::uint32_t>(f.id) << 1) | f.rtr; };
  const CanFrame* best = &contenders.front();
  validate(*best);
  for (const CanFrame& f : contenders.subspan(1)) {
    validate(f);
    if (key(f) < key(*best)) best = &f;
  }
  for (std::size_t i = 0; i < contenders.size(); ++i) {
    for (std::size_t j = i + 1; j < contenders.size(); ++j) {
      if (key(contenders[i]) == key(contenders[j])) {
        fail(ErrorCode::DuplicateId,
             "two contenders share identifier " + std::to_string(contenders[i].id));
      }
    }
  }
  return *best;
}

}  // namespace canhil::can
