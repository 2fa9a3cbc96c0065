#include <gtest/gtest.h>

#include "canhil/error.hpp"
#include "canhil/sim/event_queue.hpp"
#include "canhil/sim/random.hpp"

using namespace canhil;
using sim::Event;
using sim::EventQueue;
using sim::Priority;

TEST(EventQueue, OrdersByTimeThenPriorityThenInsertion) {
  EventQueue q;
  q.schedule({.at = SimTime{5}, .priority = Priority::Monitor, .payload = 1});
  q.schedule({.at = SimTime{5}, .priority = Priority::FrameEnd, .payload = 2});
  q.schedule({.at = SimTime{2}, .priority = Priority::Monitor, .payload = 3});
  q.schedule({.at = SimTime{5}, .priority = Priority::FrameEnd, .payload = 4});
  std::vector<std::uint64_t> order;
  while (!q.empty()) order.push_back(q.pop().payload);
  EXPECT_EQ(order, (std::vector<std::uint64_t>{3, 2, 4, 1}));
  EXPECT_EQ(q.now(), SimTime{5});
}

TEST(EventQueue, NowRunsBeforeLaterAndPastIsRejected) {
  EventQueue q;
  q.advance_to(SimTime{10});
  q.schedule({.at = SimTime{11}, .payload = 1});
  q.schedule({.at = SimTime{10}, .payload = 2});
  EXPECT_EQ(q.pop().payload, 2u);
  try {
    q.schedule({.at = SimTime{9}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PastEvent);
  }
}

TEST(Random, SeedStreamsAreStableAndIndependent) {
  sim::Rng a(sim::derive_seed(42, "fuzz")), b(sim::derive_seed(42, "fuzz")), c(sim::derive_seed(42, "spoof"));
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
  sim::Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.below(7), 7u);
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Time, TickConversion) {
  const Bitrate br{500'000};
  EXPECT_DOUBLE_EQ(br.bit_time_us(), 2.0);
  EXPECT_EQ(br.ticks_ceil(296.0), 148u);
  EXPECT_EQ(br.ticks_ceil(3.0), 2u);
  EXPECT_EQ(br.ticks_ceil(0.0), 0u);
  EXPECT_DOUBLE_EQ(br.to_us(SimTime{148}), 296.0);
}
