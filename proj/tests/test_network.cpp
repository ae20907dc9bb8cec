#include <gtest/gtest.h>

#include "support.hpp"
#include "vvc/network.hpp"

using namespace vvc;
using vvc::testing::feeder;

namespace {

nlohmann::json chain_doc() {
  return nlohmann::json::parse(R"({
    "base_mva": 1.0,
    "nodes": [{"id": "h"}, {"id": "a", "role": "load"}, {"id": "b", "role": "generator"}],
    "branches": [{"from": "h", "to": "a", "r_pu": 0.01, "x_pu": 0.02},
                 {"from": "a", "to": "b", "r_pu": 0.02, "x_pu": 0.03}]})");
}

}  // namespace

TEST(LoadFeeder, TwoBus) {
  const NetworkModel net = feeder("two_bus.json");
  EXPECT_EQ(net.n(), 1);
  EXPECT_EQ(net.n_g(), 0);
  EXPECT_DOUBLE_EQ(net.impedance(0).real(), 0.01);
  EXPECT_DOUBLE_EQ(net.impedance(0).imag(), 0.02);
  EXPECT_DOUBLE_EQ(net.head_voltage(), 1.0);
  EXPECT_EQ(net.fingerprint().size(), 64u);
}

TEST(LoadFeeder, Ieee33CountsAndTree) {
  const NetworkModel net = feeder("ieee33.json");
  EXPECT_EQ(net.n(), 33);
  EXPECT_EQ(net.branches().size(), 33u);
  EXPECT_TRUE(validate_radial(net).passed());
  EXPECT_EQ(net.generators(), (std::vector<int>{13, 17, 21, 24, 29, 32}));
}

TEST(LoadFeeder, OhmicConversion) {
  const NetworkModel net = feeder("ieee33.json");
  const int pos = *net.position_of("2");
  const double z_base = 12.66 * 12.66 / 30.0;
  EXPECT_NEAR(net.impedance(pos).real(), 0.0922 / z_base, 1e-15);
  EXPECT_NEAR(net.impedance(pos).imag(), 0.0470 / z_base, 1e-15);
}

TEST(LoadFeeder, CycleIsTopologyError) {
  auto doc = chain_doc();
  doc["branches"].push_back({{"from", "b"}, {"to", "a"}, {"r_pu", 0.01}, {"x_pu", 0.01}});
  EXPECT_THROW(parse_feeder(doc), TopologyError);
  auto two_way = nlohmann::json::parse(R"({
    "base_mva": 1.0, "nodes": [{"id": "1"}, {"id": "2"}],
    "branches": [{"from": "1", "to": "2", "r_pu": 0.01, "x_pu": 0.02},
                 {"from": "2", "to": "1", "r_pu": 0.01, "x_pu": 0.02}]})");
  EXPECT_THROW(parse_feeder(two_way), TopologyError);
}

TEST(LoadFeeder, DisconnectedAndMultiParent) {
  auto doc = chain_doc();
  doc["nodes"].push_back({{"id", "orphan"}});
  EXPECT_THROW(parse_feeder(doc), TopologyError);
  auto multi = chain_doc();
  multi["nodes"].push_back({{"id", "c"}});
  multi["branches"].push_back({{"from", "h"}, {"to", "c"}, {"r_pu", 0.01}, {"x_pu", 0.01}});
  multi["branches"].push_back({{"from", "c"}, {"to", "b"}, {"r_pu", 0.01}, {"x_pu", 0.01}});
  EXPECT_THROW(parse_feeder(multi), TopologyError);
}

TEST(LoadFeeder, ImpedanceSigns) {
  auto doc = chain_doc();
  doc["branches"][1]["x_pu"] = 0.0;
  EXPECT_THROW(parse_feeder(doc), TopologyError);
  doc = chain_doc();
  doc["branches"][1]["r_pu"] = -0.01;
  EXPECT_THROW(parse_feeder(doc), TopologyError);
}

TEST(LoadFeeder, OhmicWithoutBaseIsUnitError) {
  auto doc = nlohmann::json::parse(R"({
    "base_mva": 1.0, "nodes": [{"id": "h"}, {"id": "a"}],
    "branches": [{"from": "h", "to": "a", "r_ohm": 1.0, "x_ohm": 2.0}]})");
  EXPECT_THROW(parse_feeder(doc), UnitError);
  doc["base_kv"] = 10.0;
  doc.erase("base_mva");
  EXPECT_THROW(parse_feeder(doc), UnitError);
  doc["base_mva"] = 1.0;
  const NetworkModel net = parse_feeder(doc);
  EXPECT_DOUBLE_EQ(net.impedance(0).real(), 0.01);
}

TEST(LoadFeeder, MalformedIsParseError) {
  EXPECT_THROW(parse_feeder(nlohmann::json::parse(R"({"base_mva": 1})")), ParseError);
  EXPECT_THROW(parse_feeder(nlohmann::json::parse(R"({"nodes": [], "branches": [{"from": 1}]})")),
               ParseError);
  EXPECT_THROW(load_feeder(vvc::testing::data_path("feeders/does_not_exist.json")), ParseError);
}

TEST(LoadFeeder, HeadVoltageOverride) {
  auto doc = chain_doc();
  doc["head_voltage_pu"] = 1.03;
  EXPECT_DOUBLE_EQ(parse_feeder(doc).head_voltage(), 1.03);
  doc["head_voltage_pu"] = -1.0;
  EXPECT_THROW(parse_feeder(doc), TopologyError);
}

TEST(ValidateRadial, Depths) {
  const auto two = validate_radial(feeder("two_bus.json"));
  EXPECT_TRUE(two.passed());
  EXPECT_EQ(two.depth, (std::vector<int>{1}));
  const auto star = validate_radial(feeder("star3.json"));
  EXPECT_TRUE(star.passed());
  EXPECT_EQ(star.depth, (std::vector<int>{1, 1, 1}));
  const auto net = feeder("ieee33.json");
  const auto rep = validate_radial(net);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.max_depth(), 18);
  EXPECT_EQ(net.depth(*net.position_of("33")), 14);
  EXPECT_EQ(net.depth(*net.position_of("22")), 6);
}

TEST(ValidateRadial, ReportsInsteadOfThrowing) {
  auto doc = chain_doc();
  doc["branches"].push_back({{"from", "b"}, {"to", "a"}, {"r_pu", 0.01}, {"x_pu", 0.01}});
  const FeederData data = parse_feeder_data(doc);
  TopologyReport rep;
  EXPECT_NO_THROW(rep = validate_radial(data));
  EXPECT_FALSE(rep.passed());
  EXPECT_FALSE(rep.summary().empty());
}

TEST(Network, BfsVisitsAllNodes) {
  for (const auto& name : vvc::testing::bundled_feeders()) {
    const NetworkModel net = feeder(name);
    EXPECT_EQ(static_cast<int>(net.branches().size()), net.n()) << name;
    EXPECT_EQ(static_cast<int>(net.sweep_order().size()), net.n()) << name;
    for (int pos : net.sweep_order()) {
      const int par = net.parent(pos);
      if (par >= 0) EXPECT_LT(net.depth(par), net.depth(pos));
    }
  }
}

TEST(Network, PerUnitRoundTrip) {
  const NetworkModel a = feeder("ieee33.json");
  const NetworkModel b = parse_feeder(feeder_to_json(a));
  ASSERT_EQ(a.n(), b.n());
  EXPECT_EQ(a.generators(), b.generators());
  EXPECT_DOUBLE_EQ(a.head_voltage(), b.head_voltage());
  EXPECT_DOUBLE_EQ(a.base_mva(), b.base_mva());
  for (int i = 0; i < a.n(); ++i) {
    EXPECT_EQ(a.node_id(i), b.node_id(i));
    EXPECT_EQ(a.parent(i), b.parent(i));
    EXPECT_NEAR(std::abs(a.impedance(i) - b.impedance(i)), 0.0, 1e-12);
  }
}

TEST(Network, PathToHead) {
  const NetworkModel net = parse_feeder(chain_doc());
  EXPECT_EQ(net.path_to_head(1), (std::vector<int>{1, 0}));
  EXPECT_EQ(net.generators(), (std::vector<int>{1}));
}
