#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hare/radio_medium.hpp"

using namespace hare;
using namespace hare::radio;

static const ChannelModel kCh{3.0, 40.0, -120.0, 0.0};

TEST_CASE("log-distance rssi") {
  NodePlacement tx{0, 0, 0};
  CHECK(rssi_at(tx, {1, 1, 0}, 14.0, kCh) == Catch::Approx(-26.0).margin(1e-12));
  CHECK(rssi_at(tx, {1, 10, 0}, 14.0, kCh) == Catch::Approx(-56.0).margin(1e-12));
  CHECK_THROWS_AS(rssi_at(tx, {1, 0, 0}, 14.0, kCh), std::domain_error);
}

TEST_CASE("doubling the distance costs 10*n*log10(2) exactly") {
  NodePlacement tx{0, 0, 0};
  double step = 10.0 * kCh.path_loss_exponent * std::log10(2.0);
  for (double d : {1.5, 3.0, 7.0, 40.0}) {
    double a = rssi_at(tx, {1, d, 0}, 10.0, kCh);
    double b = rssi_at(tx, {1, 2 * d, 0}, 10.0, kCh);
    CHECK(a - b == Catch::Approx(step).margin(1e-9));
  }
}

TEST_CASE("rssi is reciprocal without shadowing") {
  NodePlacement a{0, 3.0, -2.0}, b{1, -7.5, 4.25};
  CHECK(rssi_at(a, b, 5.0, kCh) == rssi_at(b, a, 5.0, kCh));
}

TEST_CASE("tx power levels span -16..14 dBm in 31 steps") {
  CHECK(TxPowerLevel::min().dbm() == -16.0);
  CHECK(TxPowerLevel::max().dbm() == 14.0);
  CHECK(TxPowerLevel::kMaxIndex + 1 == 31);
  for (int i = 1; i <= TxPowerLevel::kMaxIndex; ++i)
    CHECK(TxPowerLevel{i}.dbm() > TxPowerLevel{i - 1}.dbm());
  CHECK(TxPowerLevel::clamped(99).index == 30);
  CHECK(TxPowerLevel::clamped(-4).index == 0);
}

TEST_CASE("error eligibility covers data frames and their acks only") {
  CHECK(error_eligible(FrameKind::DataSegment));
  CHECK(error_eligible(FrameKind::LinkAck));
  CHECK(error_eligible(FrameKind::E2eAck));
  CHECK_FALSE(error_eligible(FrameKind::StatisticsPacket));
  CHECK_FALSE(error_eligible(FrameKind::DiscoveryRequest));
  CHECK_FALSE(error_eligible(FrameKind::PrimaryBeaconData));
  CHECK_FALSE(error_eligible(FrameKind::AssocConfirm));
}

TEST_CASE("deliver: clean channel, no errors") {
  std::vector<NodePlacement> nodes{{0, 0, 0}, {1, 10, 0}};
  Frame f;
  f.kind = FrameKind::DataSegment;
  Rng rng(1, 0);
  auto out = deliver(f, 14.0, nodes[0], nodes[1], 0, 1000, {}, nodes, kCh, {}, rng);
  CHECK(out.kind == DeliveryKind::Delivered);
  CHECK(out.rssi_dbm == Catch::Approx(-56.0));
}

TEST_CASE("deliver: drop frequencies converge to the configured rates") {
  std::vector<NodePlacement> nodes{{0, 0, 0}, {1, 10, 0}};
  ErrorConfig ec{0.30, 0.15};
  Rng rng(99, 1);
  const int n = 20000;

  auto run = [&](FrameKind kind) {
    Frame f;
    f.kind = kind;
    int drops = 0;
    for (int i = 0; i < n; ++i) {
      auto out = deliver(f, 14.0, nodes[0], nodes[1], 0, 1000, {}, nodes, kCh, ec, rng);
      if (out.kind == DeliveryKind::InjectedDrop) ++drops;
    }
    return static_cast<double>(drops) / n;
  };

  double sigma_data = std::sqrt(0.30 * 0.70 / n);
  CHECK(std::abs(run(FrameKind::DataSegment) - 0.30) < 3 * sigma_data);
  double sigma_ack = std::sqrt(0.15 * 0.85 / n);
  CHECK(std::abs(run(FrameKind::LinkAck) - 0.15) < 3 * sigma_ack);
  CHECK(run(FrameKind::DiscoveryRequest) == 0.0);  // association traffic exempt
  CHECK(run(FrameKind::StatisticsPacket) == 0.0);  // statistics exempt
}

TEST_CASE("deliver: overlapping audible transmission collides, inaudible does not") {
  // rx at origin, wanted tx at 10 m, interferer either near or very far
  std::vector<NodePlacement> nodes{{0, 10, 0}, {1, 0, 0}, {2, 20, 0}, {3, 60000, 0}};
  Frame f;
  f.kind = FrameKind::DataSegment;
  Rng rng(5, 0);

  Transmission near{2, f, 14.0, 500, 1500, false};
  auto out = deliver(f, 14.0, nodes[0], nodes[1], 0, 1000, {near}, nodes, kCh, {}, rng);
  CHECK(out.kind == DeliveryKind::Collided);

  Transmission disjoint{2, f, 14.0, 2000, 3000, false};
  out = deliver(f, 14.0, nodes[0], nodes[1], 0, 1000, {disjoint}, nodes, kCh, {}, rng);
  CHECK(out.kind == DeliveryKind::Delivered);

  // 60 km away at 14 dBm is below a -120 dBm sensitivity: not audible
  Transmission faraway{3, f, 14.0, 500, 1500, false};
  out = deliver(f, 14.0, nodes[0], nodes[1], 0, 1000, {faraway}, nodes, kCh, {}, rng);
  CHECK(out.kind == DeliveryKind::Delivered);
}

TEST_CASE("medium: carrier sense and resolution") {
  std::vector<NodePlacement> nodes{{0, 0, 0, true}, {1, 10, 0}, {2, 20, 0}, {3, 60000, 0}};
  Medium medium(nodes, kCh, {}, 1234);
  Rng tx_rng(1, 1);

  CHECK_FALSE(medium.carrier_busy(0, 100));

  Frame f;
  f.kind = FrameKind::DataSegment;
  auto t1 = medium.begin_tx(1, f, 14.0, 100, 1100, tx_rng);
  CHECK(medium.carrier_busy(0, 500));
  CHECK_FALSE(medium.carrier_busy(0, 1100));  // past the end

  // delivery at the gateway is clean and reports the exact channel rssi
  auto out = medium.resolve(t1, 0);
  CHECK(out.kind == DeliveryKind::Delivered);
  CHECK(out.rssi_dbm == medium.rssi(1, 0, 14.0));
  medium.end_tx(1, 1100);

  // a transmission from far below sensitivity neither busies nor collides
  auto tfar = medium.begin_tx(3, f, 14.0, 2000, 3000, tx_rng);
  CHECK_FALSE(medium.carrier_busy(0, 2500));
  auto t2 = medium.begin_tx(2, f, 14.0, 2100, 3100, tx_rng);
  auto out2 = medium.resolve(t2, 0);
  CHECK(out2.kind == DeliveryKind::Delivered);
  medium.resolve(tfar, 0);
  medium.end_tx(3, 3000);
  medium.end_tx(2, 3100);
}

TEST_CASE("medium: overlap in time at an audible receiver destroys both") {
  std::vector<NodePlacement> nodes{{0, 0, 0, true}, {1, 10, 0}, {2, 20, 0}};
  Medium medium(nodes, kCh, {}, 1);
  Rng rng(2, 2);
  Frame f;
  f.kind = FrameKind::DataSegment;
  auto ta = medium.begin_tx(1, f, 14.0, 0, 1000, rng);
  auto tb = medium.begin_tx(2, f, 14.0, 500, 1500, rng);
  CHECK(medium.resolve(ta, 0).kind == DeliveryKind::Collided);
  medium.end_tx(1, 1000);
  CHECK(medium.resolve(tb, 0).kind == DeliveryKind::Collided);
  medium.end_tx(2, 1500);
}

TEST_CASE("medium: sender-side drop hits every receiver of a broadcast") {
  std::vector<NodePlacement> nodes{{0, 0, 0, true}, {1, 10, 0}, {2, 20, 0}};
  ErrorConfig ec{1.0, 0.0};  // every data frame dropped
  Medium medium(nodes, kCh, ec, 77);
  Rng rng(3, 3);
  Frame f;
  f.kind = FrameKind::DataSegment;
  auto t = medium.begin_tx(1, f, 14.0, 0, 1000, rng);
  CHECK(t.injected_drop);
  CHECK(medium.resolve(t, 0).kind == DeliveryKind::InjectedDrop);
  CHECK(medium.resolve(t, 2).kind == DeliveryKind::InjectedDrop);
  medium.end_tx(1, 1000);
}

TEST_CASE("medium: identical seeds give identical outcome sequences") {
  std::vector<NodePlacement> nodes{{0, 0, 0, true}, {1, 10, 0}};
  ErrorConfig ec{0.5, 0.25};
  auto run = [&](std::uint64_t seed) {
    Medium medium(nodes, kCh, ec, seed);
    Rng rng(seed, 42);
    std::vector<int> outcomes;
    Frame f;
    f.kind = FrameKind::DataSegment;
    for (int i = 0; i < 500; ++i) {
      auto t = medium.begin_tx(1, f, 14.0, i * 2000, i * 2000 + 1000, rng);
      outcomes.push_back(static_cast<int>(medium.resolve(t, 0).kind));
      medium.end_tx(1, i * 2000 + 1000);
    }
    return outcomes;
  };
  CHECK(run(11) == run(11));
  CHECK(run(11) != run(12));  // different seed actually changes draws
}
