#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mpfsim/comms.hpp"

using namespace mpfsim;

namespace {

std::vector<RadioNode> pair_at(double distance) {
  return {RadioNode{VehicleId{0}, 1000.0, 20.0}, RadioNode{VehicleId{1}, 1000.0 - distance, 20.0}};
}

OrderingSnapshot order_of(std::vector<VehicleClass> classes, double len = 4.0) {
  std::vector<OrderingSnapshot::Slot> slots;
  for (std::size_t i = 0; i < classes.size(); ++i)
    slots.push_back({VehicleId{static_cast<std::uint32_t>(i)}, len, classes[i]});
  return OrderingSnapshot(std::move(slots));
}

}  // namespace

// ---- broadcast --------------------------------------------------------------

TEST(Broadcast, LosslessPairHearsEachOther) {
  ChannelConfig cfg;
  for (int b = 0; b < 50; ++b) {
    const auto r = broadcast_step(pair_at(50.0), cfg, 1, b, b * 0.1);
    ASSERT_EQ(r.sent, 2u);
    ASSERT_EQ(r.delivered, 2u);
    ASSERT_EQ(r.deliveries.size(), 2u);
  }
}

TEST(Broadcast, TotalLossDeliversNothing) {
  ChannelConfig cfg;
  cfg.per = 1.0;
  for (int b = 0; b < 500; ++b) ASSERT_EQ(broadcast_step(pair_at(50.0), cfg, 3, b, 0.0).delivered, 0u);
}

TEST(Broadcast, PayloadIsSenderState) {
  ChannelConfig cfg;
  const auto r = broadcast_step(pair_at(50.0), cfg, 1, 0, 2.5);
  for (const auto& d : r.deliveries) {
    EXPECT_NE(d.receiver, d.beacon.sender);
    EXPECT_EQ(d.beacon.sent_at, 2.5);
    EXPECT_EQ(d.beacon.position, d.beacon.sender.value == 0 ? 1000.0 : 950.0);
  }
}

TEST(Broadcast, RangeCutIsSharp) {
  ChannelConfig cfg;
  cfg.range = 300.0;
  EXPECT_EQ(broadcast_step(pair_at(300.0 + 1e-9), cfg, 1, 0, 0.0).sent, 0u);
  EXPECT_EQ(broadcast_step(pair_at(300.0 - 1e-9), cfg, 1, 0, 0.0).sent, 2u);
  EXPECT_EQ(broadcast_step(pair_at(300.0), cfg, 1, 0, 0.0).sent, 2u);
}

TEST(Broadcast, DeliveryRateNearOneMinusPer) {
  ChannelConfig cfg;
  cfg.per = 0.7;
  std::uint64_t sent = 0, delivered = 0;
  for (int b = 0; b < 10000; ++b) {
    const auto r = broadcast_step(pair_at(100.0), cfg, 42, b, 0.0);
    sent += r.sent;
    delivered += r.delivered;
  }
  const double rate = static_cast<double>(delivered) / static_cast<double>(sent);
  EXPECT_NEAR(rate, 0.3, 4.0 * std::sqrt(0.3 * 0.7 / static_cast<double>(sent)));
}

// Brute-force O(n^2) pairing agrees with the sorted window scan.
TEST(BroadcastProperty, WindowScanMatchesAllPairs) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + gen() % 12;
    std::vector<RadioNode> nodes;
    for (std::size_t i = 0; i < n; ++i)
      nodes.push_back(RadioNode{VehicleId{static_cast<std::uint32_t>(i)}, 1500.0 * U(gen), 30.0 * U(gen)});
    ChannelConfig cfg;
    cfg.per = U(gen);
    cfg.range = 50.0 + 400.0 * U(gen);
    const auto r = broadcast_step(nodes, cfg, trial, trial, 0.0);
    std::uint64_t sent = 0, delivered = 0;
    for (const auto& s : nodes)
      for (const auto& rx : nodes) {
        if (s.id == rx.id || std::abs(s.x - rx.x) > cfg.range) continue;
        ++sent;
        if (frame_survives(trial, s.id, rx.id, trial, cfg.per)) ++delivered;
      }
    ASSERT_EQ(r.sent, sent);
    ASSERT_EQ(r.delivered, delivered);
  }
}

// Raising per only removes deliveries for a fixed seed.
TEST(BroadcastProperty, DropsOnlyRemove) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + gen() % 8;
    std::vector<RadioNode> nodes;
    for (std::size_t i = 0; i < n; ++i)
      nodes.push_back(RadioNode{VehicleId{static_cast<std::uint32_t>(i)}, 600.0 * U(gen), 25.0});
    ChannelConfig clean;
    ChannelConfig lossy;
    lossy.per = U(gen);
    auto key = [](const Delivery& d) { return std::pair(d.beacon.sender.value, d.receiver.value); };
    std::set<std::pair<std::uint32_t, std::uint32_t>> all;
    for (const auto& d : broadcast_step(nodes, clean, 7, trial, 0.0).deliveries) all.insert(key(d));
    for (const auto& d : broadcast_step(nodes, lossy, 7, trial, 0.0).deliveries) ASSERT_TRUE(all.count(key(d)));
  }
}

TEST(BroadcastProperty, RingDistanceWraps) {
  ChannelConfig cfg;
  cfg.range = 100.0;
  std::vector<RadioNode> nodes{RadioNode{VehicleId{0}, 10.0, 0.0}, RadioNode{VehicleId{1}, 990.0 + 1000.0, 0.0}};
  EXPECT_EQ(broadcast_step(nodes, cfg, 1, 0, 0.0, 1000.0).sent, 2u);
  EXPECT_EQ(broadcast_step(nodes, cfg, 1, 0, 0.0).sent, 0u);
}

TEST(ChannelConfigTest, Validation) {
  EXPECT_NO_THROW(ChannelConfig{}.validate());
  EXPECT_THROW((ChannelConfig{1.5, 300.0, 0.1}.validate()), ValidationError);
  EXPECT_THROW((ChannelConfig{-0.1, 300.0, 0.1}.validate()), ValidationError);
  try {
    ChannelConfig{1.5, 300.0, 0.1}.validate();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.key(), "channel.per");
  }
}

// ---- cache ------------------------------------------------------------------

TEST(Cache, PruneExamples) {
  NeighbourCache empty(VehicleId{0});
  EXPECT_TRUE(prune_stale(empty, 10.0, 0.5).empty());

  NeighbourCache c(VehicleId{0});
  c.receive(Beacon{VehicleId{1}, 100.0, 20.0, 9.7}, 9.7);
  c.receive(Beacon{VehicleId{2}, 120.0, 20.0, 9.4}, 9.4);
  const auto pruned = prune_stale(c, 10.0, 0.5);
  EXPECT_NE(pruned.find(VehicleId{1}), nullptr);  // aged 0.3 s
  EXPECT_EQ(pruned.find(VehicleId{2}), nullptr);  // aged 0.6 s
}

TEST(Cache, OwnerNeverCached) {
  NeighbourCache c(VehicleId{4});
  c.receive(Beacon{VehicleId{4}, 1.0, 1.0, 0.0}, 0.0);
  EXPECT_TRUE(c.empty());
}

TEST(Cache, NewerBeaconReplacesOlder) {
  NeighbourCache c(VehicleId{0});
  c.receive(Beacon{VehicleId{1}, 100.0, 20.0, 0.0}, 0.0);
  c.receive(Beacon{VehicleId{1}, 102.0, 21.0, 0.1}, 0.1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.find(VehicleId{1})->beacon.position, 102.0);
}

TEST(CacheProperty, PruneIsIdempotentAndBounded) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    NeighbourCache c(VehicleId{0});
    const double now = 10.0;
    for (int i = 0; i < 20; ++i) {
      const double t = now - 2.0 * U(gen);
      c.receive(Beacon{VehicleId{1 + static_cast<std::uint32_t>(gen() % 30)}, 0.0, 0.0, t}, t);
    }
    const double window = U(gen);
    const auto once = prune_stale(c, now, window);
    const auto twice = prune_stale(once, now, window);
    ASSERT_EQ(once.size(), twice.size());
    for (const auto& e : once.entries()) ASSERT_LE(now - e.received_at, window + 1e-9);
    std::size_t fresh = 0;
    for (const auto& e : c.entries()) fresh += now - e.received_at <= window;
    ASSERT_EQ(once.size(), fresh);
  }
}

// ---- view construction ------------------------------------------------------

TEST(View, EmptyCacheGivesEmptyView) {
  const auto order = order_of({VehicleClass::CAV, VehicleClass::CAV});
  NeighbourCache cache(VehicleId{1});
  EXPECT_TRUE(build_view(VehicleId{1}, VehicleState{0.0, 20.0, 0.0, 4.0}, cache, order, ControllerConfig{}, 0.0).empty());
}

TEST(View, HdvPredecessorBlocksPf) {
  // order: 0 CAV (front), 1 HDV, 2 CAV ego
  const auto order = order_of({VehicleClass::CAV, VehicleClass::HDV, VehicleClass::CAV});
  NeighbourCache cache(VehicleId{2});
  cache.receive(Beacon{VehicleId{0}, 100.0, 20.0, 0.0}, 0.0);
  const VehicleState ego{40.0, 20.0, 0.0, 4.0};
  ControllerConfig mpf;
  const auto view = build_view(VehicleId{2}, ego, cache, order, mpf, 0.0);
  ASSERT_EQ(view.size(), 1u);
  EXPECT_EQ(view[0].rank, 2);
  EXPECT_DOUBLE_EQ(view[0].body_length, 8.0);
  ControllerConfig pf;
  pf.topology = Topology::PF;
  EXPECT_TRUE(build_view(VehicleId{2}, ego, cache, order, pf, 0.0).empty());
}

TEST(View, NearestFirstTruncation) {
  // ranks 1, 2, 4 cached (slot 1 is an HDV)
  const auto order = order_of({VehicleClass::CAV, VehicleClass::HDV, VehicleClass::CAV, VehicleClass::CAV,
                               VehicleClass::CAV});
  NeighbourCache cache(VehicleId{4});
  cache.receive(Beacon{VehicleId{0}, 200.0, 20.0, 0.0}, 0.0);
  cache.receive(Beacon{VehicleId{2}, 150.0, 20.0, 0.0}, 0.0);
  cache.receive(Beacon{VehicleId{3}, 120.0, 20.0, 0.0}, 0.0);
  ControllerConfig cfg;
  cfg.max_neighbours = 2;
  const auto view = build_view(VehicleId{4}, VehicleState{90.0, 20.0, 0.0, 4.0}, cache, order, cfg, 0.0);
  ASSERT_EQ(view.size(), 2u);
  EXPECT_EQ(view[0].rank, 1);
  EXPECT_EQ(view[1].rank, 2);
}

TEST(View, StaleAndBehindEntriesExcluded) {
  const auto order = order_of({VehicleClass::CAV, VehicleClass::CAV, VehicleClass::CAV});
  NeighbourCache cache(VehicleId{1});
  cache.receive(Beacon{VehicleId{0}, 100.0, 20.0, 0.0}, 0.0);  // stale at t = 1
  cache.receive(Beacon{VehicleId{2}, 10.0, 20.0, 1.0}, 1.0);   // behind
  EXPECT_TRUE(build_view(VehicleId{1}, VehicleState{50.0, 20.0, 0.0, 4.0}, cache, order, ControllerConfig{}, 1.0).empty());
}

// Every view entry traces back to a delivered, fresh beacon from a vehicle
// that is physically ahead, with its rank equal to the count of vehicles in
// between plus one.
TEST(ViewProperty, EntriesAreRealizable) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + gen() % 14;
    std::vector<double> x(n);
    std::vector<VehicleClass> cls(n);
    double pos = 2000.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = pos;
      cls[i] = U(gen) < 0.6 ? VehicleClass::CAV : VehicleClass::HDV;
      pos -= 4.0 + 2.0 + 40.0 * U(gen);
    }
    const auto order = order_of(cls);
    const std::size_t ego = gen() % n;
    NeighbourCache cache(VehicleId{static_cast<std::uint32_t>(ego)});
    const double now = 5.0;
    for (std::size_t j = 0; j < n; ++j)
      if (cls[j] == VehicleClass::CAV && U(gen) < 0.7) {
        const double t = now - U(gen);
        cache.receive(Beacon{VehicleId{static_cast<std::uint32_t>(j)}, x[j], 20.0, t}, t);
      }
    ControllerConfig cfg;
    cfg.max_neighbours = 1 + static_cast<int>(gen() % 8);
    const auto view = build_view(VehicleId{static_cast<std::uint32_t>(ego)}, VehicleState{x[ego], 20.0, 0.0, 4.0},
                                 cache, order, cfg, now);
    ASSERT_LE(view.size(), static_cast<std::size_t>(cfg.max_neighbours));
    int last_rank = 0;
    for (const auto& e : view) {
      ASSERT_GT(e.rank, last_rank);
      last_rank = e.rank;
      const std::size_t j = ego - static_cast<std::size_t>(e.rank);
      ASSERT_LT(j, ego);
      const auto* cached = cache.find(VehicleId{static_cast<std::uint32_t>(j)});
      ASSERT_NE(cached, nullptr);
      ASSERT_LE(e.age, cfg.staleness_window + 1e-9);
      ASSERT_EQ(e.x, x[j]);
      ASSERT_DOUBLE_EQ(e.body_length, 4.0 * e.rank);
    }
  }
}
