#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "hare/network_layer.hpp"
#include "hare/rng.hpp"

using namespace hare;
using namespace hare::net;

TEST_CASE("routing score matches the weighted link/topology sum") {
  CandidateInfo c;
  c.p_tx_max_dbm = 14.0;
  c.rssi_tx_dbm = -100.0;
  c.rssi_rx_dbm = -105.0;
  c.ring = 1;
  c.child_count = 2;
  RoutingWeights w{10, 10, 1, 5};
  CHECK(score_candidate(c, w) == Catch::Approx(2341.0));  // 1140 + 1190 + 1 + 10
}

TEST_CASE("lower ring wins between otherwise identical candidates") {
  CandidateInfo a, b;
  a.address = {1, 9};
  b.address = {1, 4};
  a.rssi_tx_dbm = b.rssi_tx_dbm = -80;
  a.rssi_rx_dbm = b.rssi_rx_dbm = -82;
  a.ring = 1;
  b.ring = 2;
  auto pick = select_parent({b, a}, {10, 10, 1, 5}, 5);
  REQUIRE(pick.has_value());
  CHECK(pick->address == a.address);
}

TEST_CASE("zeroed link weights reduce to minimum-hop routing") {
  CandidateInfo near_deep, far_shallow;
  near_deep.address = {1, 2};
  near_deep.ring = 3;
  near_deep.rssi_tx_dbm = near_deep.rssi_rx_dbm = -40;  // excellent link
  far_shallow.address = {1, 9};
  far_shallow.ring = 1;
  far_shallow.rssi_tx_dbm = far_shallow.rssi_rx_dbm = -118;  // terrible link
  auto pick = select_parent({near_deep, far_shallow}, {0, 0, 1, 0}, 5);
  REQUIRE(pick.has_value());
  CHECK(pick->address == far_shallow.address);
}

TEST_CASE("parent selection: singletons, ties and capacity filtering") {
  CandidateInfo only;
  only.address = {1, 3};
  auto pick = select_parent({only}, {10, 10, 1, 5}, 5);
  REQUIRE(pick.has_value());
  CHECK(pick->address == only.address);

  // two candidates with exactly equal scores: lowest address, any order
  CandidateInfo x = only, y = only;
  x.address = {1, 8};
  y.address = {1, 5};
  for (auto perm : {std::vector<CandidateInfo>{x, y}, std::vector<CandidateInfo>{y, x}}) {
    auto tied = select_parent(perm, {10, 10, 1, 5}, 5);
    REQUIRE(tied.has_value());
    CHECK(tied->address == NetworkAddress{1, 5});
  }

  CandidateInfo full = only;
  full.child_count = 5;
  CHECK_FALSE(select_parent({full}, {10, 10, 1, 5}, 5).has_value());
  CHECK_FALSE(select_parent({}, {10, 10, 1, 5}, 5).has_value());
}

TEST_CASE("scaling all weights preserves the selection") {
  Rng rng(31, 0);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<CandidateInfo> cands;
    int n = 2 + static_cast<int>(rng.uniform(5));
    for (int i = 0; i < n; ++i) {
      CandidateInfo c;
      c.address = {1, static_cast<std::uint8_t>(10 + i)};
      c.ring = 1 + static_cast<int>(rng.uniform(4));
      c.child_count = static_cast<int>(rng.uniform(5));
      c.rssi_tx_dbm = -static_cast<double>(40 + rng.uniform(70));  // integer-valued
      c.rssi_rx_dbm = -static_cast<double>(40 + rng.uniform(70));
      cands.push_back(c);
    }
    RoutingWeights w{double(1 + rng.uniform(20)), double(1 + rng.uniform(20)),
                     double(rng.uniform(5)), double(rng.uniform(10))};
    RoutingWeights w7{w.a1 * 7, w.a2 * 7, w.a3 * 7, w.a4 * 7};
    auto p1 = select_parent(cands, w, 5);
    auto p2 = select_parent(cands, w7, 5);
    REQUIRE(p1.has_value());
    REQUIRE(p2.has_value());
    CHECK(p1->address == p2->address);
  }
}

TEST_CASE("association turns bucket by beacon strength") {
  auto plan = AssociationTurnPlan::evenly_spanning(4, -120.0);
  REQUIRE(plan.thresholds_dbm.size() == 3);
  CHECK(plan.thresholds_dbm[0] == Catch::Approx(-30.0));
  CHECK(plan.thresholds_dbm[1] == Catch::Approx(-60.0));
  CHECK(plan.thresholds_dbm[2] == Catch::Approx(-90.0));
  CHECK(association_turn(-20, plan) == 0);   // strongest goes first
  CHECK(association_turn(-55, plan) == 1);
  CHECK(association_turn(-119, plan) == 3);  // below all thresholds: last turn

  AssociationTurnPlan custom{{-70, -85, -100}};
  custom.validate();
  CHECK(association_turn(-90, custom) == 2);

  // monotone: a stronger beacon never yields a later turn
  int prev = association_turn(-120, plan);
  for (int r = -119; r <= 0; ++r) {
    int t = association_turn(r, plan);
    CHECK(t <= prev);
    prev = t;
  }

  AssociationTurnPlan bad{{-85, -70}};
  CHECK_THROWS_AS(bad.validate(), std::domain_error);
}

namespace {

RoutingTable small_table() {
  RoutingTable t;
  t.upsert({{1, 1}, {1, 0}, 1, 101, 0});
  t.upsert({{1, 2}, {1, 0}, 1, 102, 0});
  t.upsert({{1, 3}, {1, 1}, 2, 103, 0});
  t.upsert({{1, 4}, {1, 3}, 3, 104, 0});
  return t;
}

}  // namespace

TEST_CASE("routing table consistency checks") {
  auto t = small_table();
  CHECK(t.size() == 4);
  CHECK(t.child_count({1, 0}) == 2);
  CHECK(t.children_of({1, 1}) == std::vector<NetworkAddress>{{1, 3}});
  CHECK(t.max_ring() == 3);

  // a parent ring mismatch is rejected
  RoutingTable bad = small_table();
  CHECK_THROWS_AS(bad.upsert({{1, 5}, {1, 3}, 4 + 1, 105, 0}), std::logic_error);
  // an unknown parent is rejected
  RoutingTable bad2 = small_table();
  CHECK_THROWS_AS(bad2.upsert({{1, 6}, {1, 99}, 2, 106, 0}), std::logic_error);
}

TEST_CASE("disassociation sweep removes silent stations only") {
  auto t = small_table();
  RoutingTable t2 = t;
  // ring-3 station last heard at data beacon 5; others at 6
  for (const auto& [addr, e] : t.entries()) t2.note_heard(addr, addr.host == 4 ? 5 : 6);

  auto removed = t2.disassociation_sweep(7, 1);
  REQUIRE(removed.size() == 1);
  CHECK(removed[0].sta == NetworkAddress{1, 4});
  CHECK_FALSE(t2.contains({1, 4}));
  CHECK(t2.contains({1, 3}));  // silent exactly one primary: retained

  auto none = t2.disassociation_sweep(7, 1);
  CHECK(none.empty());
}

TEST_CASE("self disassociation triggers after t_d of beacon silence") {
  CHECK(self_disassociation_check(sec(0), minutes(3), minutes(6)) == StaLiveness::Alive);
  CHECK(self_disassociation_check(sec(0), minutes(6), minutes(6)) == StaLiveness::Dead);
  CHECK(self_disassociation_check(minutes(4), minutes(9), minutes(6)) == StaLiveness::Alive);
}
