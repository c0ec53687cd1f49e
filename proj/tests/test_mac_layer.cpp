#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hare/mac_layer.hpp"
#include "hare/radio_medium.hpp"

using namespace hare;
using namespace hare::mac;

TEST_CASE("slot schedule: single ring degenerates to one slot") {
  auto s = build_slot_schedule(1, sec(8));
  REQUIRE(s.slots.size() == 1);
  CHECK(s.slots[0].ring == 1);
  CHECK(s.slots[0].start == 0);
  CHECK(s.slots[0].end == sec(8));
  CHECK(s.rx_slot(1) == nullptr);
  CHECK(s.rx_slot(0) != nullptr);  // the gateway listens during ring 1's slot
}

TEST_CASE("slot schedule: highest ring first with one-slot overlap") {
  auto s = build_slot_schedule(3, sec(9));
  REQUIRE(s.slots.size() == 3);
  CHECK(s.slots[0].ring == 3);
  CHECK(s.slots[1].ring == 2);
  CHECK(s.slots[2].ring == 1);
  // ring 2 is awake during ring 3's slot (receiving) and its own (sending)
  CHECK(s.rx_slot(2)->ring == 3);
  CHECK(s.tx_slot(2).ring == 2);
  // ring r's TX interval is ring r-1's RX interval
  for (int r = 2; r <= 3; ++r) {
    const auto& tx = s.tx_slot(r);
    const auto* rx = s.rx_slot(r - 1);
    REQUIRE(rx != nullptr);
    CHECK(tx.start == rx->start);
    CHECK(tx.end == rx->end);
  }
}

TEST_CASE("slot schedule: equal split") {
  auto s = build_slot_schedule(4, sec(40));
  for (const auto& slot : s.slots) CHECK(slot.end - slot.start == sec(10));
  CHECK(s.slots[3].end == sec(40));
  CHECK_THROWS_AS(build_slot_schedule(0, sec(10)), std::domain_error);
}

TEST_CASE("csma: idle channel with BE=0 transmits immediately") {
  CsmaParams p;  // macMinBE = 0
  Rng rng(1, 0);
  auto out = csma_transmit(ms(100), p, rng, [](SimTime) { return false; });
  CHECK(out.result == CsmaResult::Sent);
  CHECK(out.tx_start == ms(100) + p.turnaround);
  CHECK(out.attempts == 1);
}

TEST_CASE("csma: five busy attempts exhaust the backoff budget") {
  CsmaParams p;
  Rng rng(1, 1);
  auto out = csma_transmit(0, p, rng, [](SimTime) { return true; });
  CHECK(out.result == CsmaResult::ChannelAccessFailure);
  CHECK(out.attempts == p.mac_max_csma_backoffs);
}

TEST_CASE("csma: channel clearing mid-sequence lets the frame out") {
  CsmaParams p;
  Rng rng(1, 2);
  auto out = csma_transmit(0, p, rng, [](SimTime t) { return t < ms(1); });
  CHECK(out.result == CsmaResult::Sent);
  CHECK(out.tx_start >= ms(1));
}

TEST_CASE("csma: two synchronized contenders match the enumeration oracle") {
  // With macMinBE=3 both draw a backoff from {0..7} units. Equal draws
  // collide (both clear CCA inside the turnaround window); otherwise the
  // earlier draw wins and the later sees a busy channel. Enumerating the
  // 64 pairs: P(collide) = 8/64, P(either side first) = 28/64.
  CsmaParams p;
  p.mac_min_be = 3;
  Rng rng(2024, 0);
  const int trials = 20000;
  int collide = 0, first_a = 0, first_b = 0;
  for (int i = 0; i < trials; ++i) {
    CsmaSession a(p), b(p);
    SimTime ba = a.draw_backoff(rng);
    SimTime bb = b.draw_backoff(rng);
    if (ba == bb)
      ++collide;
    else if (ba < bb)
      ++first_a;
    else
      ++first_b;
  }
  auto near = [&](int count, double prob) {
    double sigma = std::sqrt(prob * (1 - prob) / trials);
    return std::abs(static_cast<double>(count) / trials - prob) < 3 * sigma;
  };
  CHECK(near(collide, 8.0 / 64.0));
  CHECK(near(first_a, 28.0 / 64.0));
  CHECK(near(first_b, 28.0 / 64.0));
}

TEST_CASE("csma: simultaneous clear CCAs collide on the medium") {
  using namespace hare::radio;
  std::vector<NodePlacement> nodes{{0, 0, 0, true}, {1, 5, 0}, {2, -5, 0}};
  Medium medium(nodes, ChannelModel{}, {}, 9);
  Rng rng(9, 9);
  Frame f;
  f.kind = FrameKind::DataSegment;
  CsmaParams p;
  // both contenders pass CCA at t=0 and start after the turnaround
  CHECK_FALSE(medium.carrier_busy(1, 0));
  CHECK_FALSE(medium.carrier_busy(2, 0));
  auto ta = medium.begin_tx(1, f, 14.0, p.turnaround, p.turnaround + ms(7), rng);
  auto tb = medium.begin_tx(2, f, 14.0, p.turnaround, p.turnaround + ms(7), rng);
  CHECK(medium.resolve(ta, 0).kind == DeliveryKind::Collided);
  CHECK(medium.resolve(tb, 0).kind == DeliveryKind::Collided);
  medium.end_tx(1, p.turnaround + ms(7));
  medium.end_tx(2, p.turnaround + ms(7));
}

TEST_CASE("aggregation keeps own data first and splits on the payload cap") {
  std::vector<std::uint8_t> own(10, 0xAA);

  auto single = aggregate_and_segment(own, {}, 100);
  REQUIRE(single.size() == 1);
  CHECK(single[0].bytes.size() == 10);
  CHECK(single[0].count == 1);

  std::map<NetworkAddress, std::vector<std::uint8_t>> kids;
  kids[{1, 5}] = std::vector<std::uint8_t>(10, 0xBB);
  kids[{1, 3}] = std::vector<std::uint8_t>(10, 0xCC);

  auto two = aggregate_and_segment(own, kids, 25);
  REQUIRE(two.size() == 2);
  CHECK(two[0].bytes.size() == 25);
  CHECK(two[1].bytes.size() == 5);
  CHECK(two[0].count == 2);
  CHECK(two[1].index == 1);
  // own first, then children by ascending address: AA x10, CC x10, BB x10
  CHECK(two[0].bytes[0] == 0xAA);
  CHECK(two[0].bytes[10] == 0xCC);
  CHECK(two[0].bytes[20] == 0xBB);
  CHECK(two[1].bytes[4] == 0xBB);

  auto merged = aggregate_and_segment(own, {{{1, 5}, std::vector<std::uint8_t>(10, 0xBB)}}, 100);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].bytes.size() == 20);

  CHECK(aggregate_and_segment({}, {}, 100).empty());
}

TEST_CASE("segmentation inverts through reassembly") {
  Rng rng(5, 5);
  for (int rep = 0; rep < 60; ++rep) {
    std::size_t len = 1 + rng.uniform(400);
    if (rep % 7 == 0) len = 80 * (1 + rng.uniform(4));  // exact multiples too
    std::vector<std::uint8_t> stream(len);
    for (auto& b : stream) b = static_cast<std::uint8_t>(rng.uniform(256));
    auto segs = segment_stream(stream, 80);
    SegmentAssembly asmb;
    for (const auto& s : segs) asmb.accept(s);
    REQUIRE(asmb.complete());
    CHECK(asmb.reassemble() == stream);
  }
  CHECK_THROWS_AS(segment_stream(std::vector<std::uint8_t>(65 * 80, 1), 80), std::length_error);
}

TEST_CASE("selective ack lists exactly the received segments") {
  SegmentAssembly all;
  for (auto idx : {0, 1, 2}) {
    Segment s;
    s.index = static_cast<std::uint8_t>(idx);
    s.count = 3;
    all.accept(s);
  }
  auto ack = selective_ack(all, {1, 2}, {1, 7}, 4, 0);
  REQUIRE(ack.has_value());
  CHECK(ack->ack_bitmap == 0b111);
  CHECK(ack->segment_count == 3);
  CHECK(ack->dst == NetworkAddress{1, 7});

  SegmentAssembly holes;
  for (auto idx : {0, 2}) {
    Segment s;
    s.index = static_cast<std::uint8_t>(idx);
    s.count = 3;
    holes.accept(s);
  }
  auto partial = selective_ack(holes, {1, 2}, {1, 7}, 4, 0);
  REQUIRE(partial.has_value());
  CHECK(partial->ack_bitmap == 0b101);
  CHECK_FALSE(holes.complete());

  SegmentAssembly nothing;
  CHECK_FALSE(selective_ack(nothing, {1, 2}, {1, 7}, 4, 0).has_value());
}

TEST_CASE("rssi control requests") {
  CHECK(rssi_request(-115, -110, -100) == RssiControl::Increase);
  CHECK(rssi_request(-105, -110, -100) == RssiControl::Keep);
  CHECK(rssi_request(-95, -110, -100) == RssiControl::Decrease);
  CHECK(rssi_request(-110, -110, -100) == RssiControl::Keep);  // band edges inclusive
  CHECK(rssi_request(-100, -110, -100) == RssiControl::Keep);
  CHECK_THROWS_AS(rssi_request(-105, -100, -110), std::domain_error);
}

TEST_CASE("power regulation: increase wins, decrease needs unanimity") {
  using radio::TxPowerLevel;
  using R = RssiControl;
  CHECK(power_regulation_step({10}, {R::Increase, R::Decrease}, false).index == 11);
  CHECK(power_regulation_step({10}, {R::Decrease, R::Decrease}, false).index == 9);
  CHECK(power_regulation_step({10}, {R::Decrease, R::Keep}, false).index == 10);
  CHECK(power_regulation_step({10}, {}, false).index == 10);
  CHECK(power_regulation_step({30}, {R::Increase}, false).index == 30);  // clamp
  CHECK(power_regulation_step({0}, {R::Decrease}, false).index == 0);    // clamp
  // the retransmission bump applies after the request rule
  CHECK(power_regulation_step({10}, {R::Decrease, R::Decrease}, true).index == 10);
  CHECK(power_regulation_step({10}, {}, true).index == 11);
  CHECK(power_regulation_step({30}, {}, true).index == 30);
}

TEST_CASE("power regulation converges on a single link and holds") {
  // Link with 100 dB path loss, band [-110, -100]: descending from the
  // maximum level stops at the first level whose received rssi leaves the
  // decrease zone, and never moves again.
  const double path_loss = 100.0;
  radio::TxPowerLevel level = radio::TxPowerLevel::max();
  int stable_at = -1;
  for (int window = 0; window < 31; ++window) {
    double rssi = level.dbm() - path_loss;
    auto req = rssi_request(rssi, -110.0, -100.0);
    auto next = power_regulation_step(level, {req}, false);
    if (next == level && stable_at < 0) stable_at = window;
    level = next;
  }
  CHECK(stable_at >= 0);
  CHECK(level.dbm() == 0.0);  // highest level with rssi <= -100
  double final_rssi = level.dbm() - path_loss;
  CHECK(final_rssi >= -110.0);
  CHECK(final_rssi <= -100.0);
}

TEST_CASE("xmac rendezvous: phase-aligned strobe costs nothing") {
  XMacParams p;
  p.wake_interval = ms(125);
  p.sample_duration = ms(8);
  p.strobe_max = ms(125);
  auto r = xmac_rendezvous(ms(1000), ms(1000), p, ms(7));
  CHECK(r.delay == 0);
  CHECK(r.sender_awake == ms(7));
  auto r2 = xmac_rendezvous(ms(1250), ms(1000), p, ms(7));  // two full intervals later
  CHECK(r2.delay == 0);
}

TEST_CASE("xmac rendezvous: delay sweeps uniformly below the wake interval") {
  XMacParams p;
  p.wake_interval = ms(125);
  p.sample_duration = ms(8);
  p.strobe_max = ms(125);
  SimTime max_delay = 0;
  double sum = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    SimTime phase = i * p.wake_interval / n;
    auto r = xmac_rendezvous(ms(5000), phase, p, ms(7));
    CHECK(r.delay >= 0);
    CHECK(r.delay < p.wake_interval);
    max_delay = std::max(max_delay, r.delay);
    sum += static_cast<double>(r.delay);
  }
  CHECK(max_delay > p.wake_interval - ms(1));  // worst phase: just under one interval
  CHECK(sum / n == Catch::Approx(static_cast<double>(p.wake_interval) / 2).epsilon(0.01));
}

TEST_CASE("xmac params validation") {
  XMacParams p;
  CHECK_NOTHROW(p.validate());
  p.sample_duration = p.wake_interval;
  CHECK_THROWS_AS(p.validate(), std::domain_error);
}
