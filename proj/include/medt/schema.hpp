#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace medt {

// Observed value for a structurally blank node (after censoring, or a
// non-outcome node after an absorbing event).
constexpr int8_t kBlank = -1;

enum class NodeKind : uint8_t {
  baseline,
  treatment,
  censoring,
  covariateR,
  mediatorZ,
  covariateL,
  outcomeY,
};

const char* kind_name(NodeKind k);
NodeKind kind_from_name(const std::string& s);

struct NodeSpec {
  std::string name;
  int t = 0;                        // 0 for baseline nodes
  NodeKind kind = NodeKind::covariateL;
  int n_levels = 2;                 // levels are 0..n_levels-1
  std::vector<int> absorbing_levels;  // outcomeY: events that persist
  int censor_trigger_level = 0;       // censoring: level that blanks the future
};

struct Node : NodeSpec {
  int index = 0;
  bool is_treatment_block() const {
    return kind == NodeKind::treatment || kind == NodeKind::censoring;
  }
  bool is_l_block() const {
    return kind == NodeKind::covariateL || kind == NodeKind::outcomeY;
  }
  bool fluctuable() const {
    return kind == NodeKind::covariateR || kind == NodeKind::mediatorZ || is_l_block();
  }
};

using Trajectory = std::vector<int8_t>;

// Degeneracy scan over a trajectory prefix.  Censoring blanks everything
// after it; an absorbing outcome level blanks later non-outcome nodes and
// pins later outcome nodes at the absorbed level.
struct DegeneracyState {
  enum Mode : int8_t { active, censored, absorbed } mode = active;
  int8_t absorbed_level = 0;

  // Distribution of node nd given this state: stochastic, or forced.
  bool forced(const Node& nd, int8_t* forced_value) const {
    if (mode == active) return false;
    if (mode == absorbed && nd.kind == NodeKind::outcomeY) {
      *forced_value = absorbed_level;
    } else {
      *forced_value = kBlank;
    }
    return true;
  }

  void step(const Node& nd, int8_t value) {
    if (mode != active) return;
    if (nd.kind == NodeKind::censoring && value == nd.censor_trigger_level) {
      mode = censored;
      return;
    }
    if (nd.kind == NodeKind::outcomeY) {
      for (int a : nd.absorbing_levels) {
        if (value == a) {
          mode = absorbed;
          absorbed_level = value;
          return;
        }
      }
    }
  }
};

struct ValidationReport {
  bool ok = true;
  std::string node;
  std::string message;
};

// Per trajectory class and node: how the node behaves on that class.
struct ClassNode {
  int32_t pa_idx = -1;   // index into the node's active parent-config table
  int8_t value = kBlank;
  int8_t stochastic = 0;
};

struct Schema {
  int K = 0;
  std::vector<Node> nodes;
  std::vector<std::string> names;

  // Parent-config packing.  Parents of node i are all nodes before i; a
  // config packs to sum((value+1) * mult[j]) over j < i with mixed radix
  // (n_levels+1 per digit, blank = digit 0).
  std::vector<uint64_t> pack_mult;

  // Per node: parent configs reachable with the node in a stochastic state.
  std::vector<std::vector<uint64_t>> active_codes;
  std::vector<std::vector<std::vector<int8_t>>> active_configs;  // decoded
  std::vector<std::unordered_map<uint64_t, int32_t>> active_index;

  // prefix_pa_idx[x][g * x + j]: the active-config index of node j < x under
  // config g of node x.  Valid because an active node implies an active
  // prefix.
  std::vector<std::vector<int32_t>> prefix_pa_idx;

  // All structurally valid trajectories, and per-(class, node) lookups.
  std::vector<Trajectory> classes;
  std::vector<ClassNode> class_nodes;  // classes.size() * nodes.size(), row-major
  std::unordered_map<uint64_t, int32_t> class_index;  // full packed trajectory

  // Non-treatment node bookkeeping (history keys for the recursions).
  std::vector<int> nona_pos;            // node -> position among non-A nodes, -1 for A
  std::vector<int> nona_nodes;          // positions -> node index
  std::vector<uint64_t> nona_mult;      // packing over non-A nodes

  const ClassNode& at(int32_t cls, int node) const {
    return class_nodes[static_cast<size_t>(cls) * nodes.size() + node];
  }
  int node_index(const std::string& name) const;  // -1 if absent
  uint64_t pack_prefix(const int8_t* values, int upto) const;
  uint64_t pack_full(const Trajectory& t) const { return pack_prefix(t.data(), static_cast<int>(nodes.size())); }
  int n_nodes() const { return static_cast<int>(nodes.size()); }
};

// Validates ordering and node fields, enumerates the trajectory space, and
// builds all lookup tables.  Throws std::invalid_argument on a bad spec.
std::shared_ptr<const Schema> build_schema(const std::vector<NodeSpec>& specs);

// Checks one trajectory against supports and the degeneracy closure.
ValidationReport validate_trajectory(const Schema& schema, const Trajectory& traj);

// Two treatment assignments plus forced-uncensored levels; arm values are
// full-length vectors with entries only at treatment-block nodes.
struct InterventionPair {
  std::vector<int8_t> arm_a;
  std::vector<int8_t> arm_ap;
};

InterventionPair build_intervention_pair(
    const Schema& schema,
    const std::unordered_map<std::string, int>& treat_a,
    const std::unordered_map<std::string, int>& treat_ap);

std::string schema_to_json(const Schema& schema);
std::shared_ptr<const Schema> schema_from_json(const std::string& text);

}  // namespace medt
