#pragma once

// Radial feeder description and the immutable per-unit NetworkModel.
//
// Node index 0 is the fixed-voltage head node. Every other node i (1..n) maps
// to position i-1 of the n-vectors used throughout the library (voltages,
// injections, Jacobian rows/columns).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvc/error.hpp"
#include "vvc/fingerprint.hpp"

namespace vvc {

enum class NodeRole { load, generator, junction };

inline std::string_view to_string(NodeRole role) {
  switch (role) {
    case NodeRole::load: return "load";
    case NodeRole::generator: return "generator";
    case NodeRole::junction: return "junction";
  }
  return "junction";
}

inline NodeRole parse_role(std::string_view text) {
  if (text == "load") return NodeRole::load;
  if (text == "generator") return NodeRole::generator;
  if (text == "junction") return NodeRole::junction;
  throw ParseError("unknown node role: " + std::string(text));
}

struct NodeRecord {
  std::string id;
  int index = 0;
  NodeRole role = NodeRole::junction;
  std::optional<double> base_kv;
};

/// Series branch between node indices, impedance in p.u.
struct BranchRecord {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
};

/// Unvalidated feeder contents. nodes[0] is the head node.
struct FeederData {
  std::vector<NodeRecord> nodes;
  std::vector<BranchRecord> branches;
  double head_voltage = 1.0;
  double base_mva = 1.0;
  std::string fingerprint;
};

struct TopologyCheck {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct TopologyReport {
  /// Branch count to the head node, per position (node index - 1). -1 when
  /// the node is unreachable.
  std::vector<int> depth;
  /// Parent node index per position (0 = head), -1 when not unique.
  std::vector<int> parent;
  std::vector<TopologyCheck> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const TopologyCheck& c) { return c.passed; });
  }

  int max_depth() const {
    return depth.empty() ? 0 : *std::max_element(depth.begin(), depth.end());
  }

  std::string summary() const {
    std::ostringstream out;
    for (const auto& c : checks) {
      if (!c.passed) out << c.name << ": " << c.detail << "; ";
    }
    return out.str();
  }
};

/// Checks the spanning-tree invariants and computes depths. Never throws.
inline TopologyReport validate_radial(const FeederData& data) {
  TopologyReport report;
  const int total = static_cast<int>(data.nodes.size());
  const int n = std::max(total - 1, 0);
  report.depth.assign(n, -1);
  report.parent.assign(n, -1);

  auto add = [&](std::string name, bool ok, std::string detail = {}) {
    report.checks.push_back({std::move(name), ok, std::move(detail)});
  };

  add("head_voltage_positive", data.head_voltage > 0.0 && std::isfinite(data.head_voltage),
      "head voltage " + std::to_string(data.head_voltage));
  add("base_mva_positive", data.base_mva > 0.0 && std::isfinite(data.base_mva));
  add("branch_count", static_cast<int>(data.branches.size()) == n,
      std::to_string(data.branches.size()) + " branches for " + std::to_string(n) +
          " non-head nodes");

  bool indices_ok = true;
  bool impedance_ok = true;
  std::string impedance_detail;
  std::vector<int> parent_count(total, 0);
  std::vector<std::vector<int>> children(total);
  for (const auto& b : data.branches) {
    if (b.from < 0 || b.from >= total || b.to < 0 || b.to >= total || b.from == b.to) {
      indices_ok = false;
      continue;
    }
    ++parent_count[b.to];
    children[b.from].push_back(b.to);
    if (b.to > 0 && parent_count[b.to] == 1) report.parent[b.to - 1] = b.from;
    if (!(b.r >= 0.0) || !(b.x > 0.0) || !std::isfinite(b.r) || !std::isfinite(b.x)) {
      impedance_ok = false;
      impedance_detail = "branch " + std::to_string(b.from) + "->" + std::to_string(b.to) +
                         " has r=" + std::to_string(b.r) + ", x=" + std::to_string(b.x);
    }
  }
  add("branch_endpoints", indices_ok, "branch references unknown node or self loop");
  add("impedance_sign", impedance_ok, impedance_detail);

  bool single_parent = total > 0 && parent_count[0] == 0;
  std::string parent_detail = single_parent ? "" : "head node appears as a branch target";
  for (int i = 1; i < total; ++i) {
    if (parent_count[i] != 1) {
      single_parent = false;
      parent_detail = "node " + data.nodes[i].id + " has " + std::to_string(parent_count[i]) +
                      " parents";
      report.parent[i - 1] = -1;
    }
  }
  add("single_parent", single_parent, parent_detail);

  // BFS from the head; a cycle leaves its members unreachable.
  if (total > 0) {
    std::vector<int> depth(total, -1);
    std::queue<int> frontier;
    depth[0] = 0;
    frontier.push(0);
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (int c : children[u]) {
        if (depth[c] >= 0) continue;
        depth[c] = depth[u] + 1;
        frontier.push(c);
      }
    }
    std::string missing;
    for (int i = 1; i < total; ++i) {
      report.depth[i - 1] = depth[i];
      if (depth[i] < 0 && missing.empty()) missing = "node " + data.nodes[i].id + " unreachable";
    }
    add("connected", missing.empty(), missing);
  } else {
    add("connected", false, "no nodes");
  }

  std::set<std::string> ids;
  bool unique_ids = true;
  for (const auto& node : data.nodes) unique_ids &= ids.insert(node.id).second;
  add("unique_ids", unique_ids, "duplicate node id");
  return report;
}

/// Validated radial feeder in per-unit. Immutable after construction.
class NetworkModel {
 public:
  explicit NetworkModel(FeederData data) : data_(std::move(data)) {
    const TopologyReport report = validate_radial(data_);
    if (!report.passed()) throw TopologyError("invalid radial feeder: " + report.summary());

    const int n = static_cast<int>(data_.nodes.size()) - 1;
    parent_.assign(n, -1);
    impedance_.assign(n, {0.0, 0.0});
    depth_ = report.depth;
    children_.assign(n + 1, {});
    for (const auto& b : data_.branches) {
      parent_[b.to - 1] = b.from - 1;
      impedance_[b.to - 1] = {b.r, b.x};
      children_[b.from].push_back(b.to - 1);
    }
    // Breadth-first order from the head: every parent precedes its children.
    std::queue<int> frontier;
    for (int c : children_[0]) frontier.push(c);
    while (!frontier.empty()) {
      const int pos = frontier.front();
      frontier.pop();
      order_.push_back(pos);
      for (int c : children_[pos + 1]) frontier.push(c);
    }
    for (int pos = 0; pos < n; ++pos) {
      const auto& node = data_.nodes[pos + 1];
      if (node.role == NodeRole::generator) generators_.push_back(pos);
      position_by_id_.emplace(node.id, pos);
    }
  }

  int n() const { return static_cast<int>(data_.nodes.size()) - 1; }
  int n_g() const { return static_cast<int>(generators_.size()); }
  double head_voltage() const { return data_.head_voltage; }
  double base_mva() const { return data_.base_mva; }
  const std::string& fingerprint() const { return data_.fingerprint; }
  const FeederData& data() const { return data_; }
  const std::vector<NodeRecord>& nodes() const { return data_.nodes; }
  const std::vector<BranchRecord>& branches() const { return data_.branches; }
  const std::string& head_id() const { return data_.nodes.front().id; }

  /// Ascending 0-based positions of generator nodes; defines k_g ordering.
  const std::vector<int>& generators() const { return generators_; }

  const NodeRecord& node_at(int pos) const { return data_.nodes.at(pos + 1); }
  const std::string& node_id(int pos) const { return node_at(pos).id; }

  std::optional<int> position_of(const std::string& id) const {
    const auto it = position_by_id_.find(id);
    if (it == position_by_id_.end()) return std::nullopt;
    return it->second;
  }

  /// Parent position, or -1 when the parent is the head node.
  int parent(int pos) const { return parent_.at(pos); }
  /// Series impedance of the branch feeding `pos`.
  std::complex<double> impedance(int pos) const { return impedance_.at(pos); }
  /// Child positions of position `pos` (pos = -1 addresses the head node).
  const std::vector<int>& children(int pos) const { return children_.at(pos + 1); }
  int depth(int pos) const { return depth_.at(pos); }
  /// Positions in breadth-first order from the head.
  const std::vector<int>& sweep_order() const { return order_; }

  std::vector<double> base_kv_by_level() const {
    std::set<double> levels;
    for (const auto& node : data_.nodes) {
      if (node.base_kv) levels.insert(*node.base_kv);
    }
    return {levels.begin(), levels.end()};
  }

  /// Positions on the path from `pos` up to (not including) the head.
  std::vector<int> path_to_head(int pos) const {
    std::vector<int> path;
    for (int p = pos; p >= 0; p = parent_[p]) path.push_back(p);
    return path;
  }

 private:
  FeederData data_;
  std::vector<int> parent_;
  std::vector<std::complex<double>> impedance_;
  std::vector<int> depth_;
  std::vector<std::vector<int>> children_;
  std::vector<int> order_;
  std::vector<int> generators_;
  std::unordered_map<std::string, int> position_by_id_;
};

inline TopologyReport validate_radial(const NetworkModel& net) { return validate_radial(net.data()); }

/// Builds FeederData from the JSON feeder format. Impedances given in ohms are
/// referred to the base kV of the branch's `to` node.
inline FeederData parse_feeder_data(const nlohmann::json& doc, std::string fingerprint = {}) {
  using nlohmann::json;
  FeederData data;
  data.fingerprint = std::move(fingerprint);
  try {
    if (!doc.is_object()) throw ParseError("feeder document must be a JSON object");
    const bool has_base_mva = doc.contains("base_mva");
    data.base_mva = doc.value("base_mva", 1.0);
    data.head_voltage = doc.value("head_voltage_pu", 1.0);
    const std::optional<double> default_kv =
        doc.contains("base_kv") ? std::optional<double>(doc.at("base_kv").get<double>())
                                : std::nullopt;

    const json& nodes = doc.at("nodes");
    const json& branches = doc.at("branches");
    if (!nodes.is_array() || !branches.is_array())
      throw ParseError("`nodes` and `branches` must be arrays");

    // The head is the unique id that appears as a `from` but never as a `to`.
    std::set<std::string> froms, tos;
    for (const auto& b : branches) {
      froms.insert(b.at("from").get<std::string>());
      tos.insert(b.at("to").get<std::string>());
    }
    std::vector<std::string> heads;
    for (const auto& id : froms) {
      if (!tos.count(id)) heads.push_back(id);
    }
    if (heads.size() != 1) {
      throw TopologyError("expected exactly one head node, found " + std::to_string(heads.size()));
    }
    const std::string& head = heads.front();

    std::vector<NodeRecord> records;
    std::optional<NodeRecord> head_record;
    for (const auto& item : nodes) {
      NodeRecord rec;
      rec.id = item.at("id").get<std::string>();
      rec.role = parse_role(item.value("role", std::string("junction")));
      if (item.contains("base_kv")) {
        rec.base_kv = item.at("base_kv").get<double>();
      } else {
        rec.base_kv = default_kv;
      }
      if (rec.id == head) {
        head_record = rec;
      } else {
        records.push_back(std::move(rec));
      }
    }
    if (!head_record) {
      head_record = NodeRecord{head, 0, NodeRole::junction, default_kv};
    }
    data.nodes.push_back(*head_record);
    for (auto& rec : records) data.nodes.push_back(std::move(rec));
    std::unordered_map<std::string, int> index_of;
    for (std::size_t i = 0; i < data.nodes.size(); ++i) {
      data.nodes[i].index = static_cast<int>(i);
      if (!index_of.emplace(data.nodes[i].id, static_cast<int>(i)).second) {
        throw ParseError("duplicate node id: " + data.nodes[i].id);
      }
    }

    for (const auto& item : branches) {
      BranchRecord b;
      const auto from = item.at("from").get<std::string>();
      const auto to = item.at("to").get<std::string>();
      const auto f = index_of.find(from);
      const auto t = index_of.find(to);
      if (f == index_of.end() || t == index_of.end()) {
        throw TopologyError("branch " + from + "->" + to + " references an undeclared node");
      }
      b.from = f->second;
      b.to = t->second;
      if (item.contains("r_pu") || item.contains("x_pu")) {
        b.r = item.at("r_pu").get<double>();
        b.x = item.at("x_pu").get<double>();
      } else if (item.contains("r_ohm") || item.contains("x_ohm")) {
        const auto& kv = data.nodes[b.to].base_kv;
        if (!has_base_mva) throw UnitError("ohmic impedances require top-level base_mva");
        if (!kv) throw UnitError("ohmic impedance on branch to " + to + " but node has no base_kv");
        const double z_base = (*kv) * (*kv) / data.base_mva;
        b.r = item.at("r_ohm").get<double>() / z_base;
        b.x = item.at("x_ohm").get<double>() / z_base;
      } else {
        throw ParseError("branch " + from + "->" + to + " has no impedance");
      }
      data.branches.push_back(b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("feeder JSON: ") + e.what());
  }
  return data;
}

inline NetworkModel parse_feeder(const nlohmann::json& doc, std::string fingerprint = {}) {
  return NetworkModel(parse_feeder_data(doc, std::move(fingerprint)));
}

inline NetworkModel load_feeder(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_feeder(doc, sha256_hex(text));
}

/// Exports the feeder with per-unit impedances.
inline nlohmann::json feeder_to_json(const NetworkModel& net) {
  nlohmann::json doc;
  doc["base_mva"] = net.base_mva();
  doc["head_voltage_pu"] = net.head_voltage();
  doc["nodes"] = nlohmann::json::array();
  for (const auto& node : net.nodes()) {
    nlohmann::json item{{"id", node.id}, {"role", to_string(node.role)}};
    if (node.base_kv) item["base_kv"] = *node.base_kv;
    doc["nodes"].push_back(std::move(item));
  }
  doc["branches"] = nlohmann::json::array();
  for (const auto& b : net.branches()) {
    doc["branches"].push_back({{"from", net.nodes()[b.from].id},
                               {"to", net.nodes()[b.to].id},
                               {"r_pu", b.r},
                               {"x_pu", b.x}});
  }
  return doc;
}

/// Copy of the feeder with every branch resistance set to zero.
inline NetworkModel lossless_copy(const NetworkModel& net) {
  FeederData data = net.data();
  for (auto& b : data.branches) b.r = 0.0;
  data.fingerprint.clear();
  return NetworkModel(std::move(data));
}

}  // namespace vvc
