#include "medt/schema.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"

namespace medt {

const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::baseline: return "baseline";
    case NodeKind::treatment: return "treatment";
    case NodeKind::censoring: return "censoring";
    case NodeKind::covariateR: return "covariateR";
    case NodeKind::mediatorZ: return "mediatorZ";
    case NodeKind::covariateL: return "covariateL";
    case NodeKind::outcomeY: return "outcomeY";
  }
  return "?";
}

NodeKind kind_from_name(const std::string& s) {
  if (s == "baseline") return NodeKind::baseline;
  if (s == "treatment") return NodeKind::treatment;
  if (s == "censoring") return NodeKind::censoring;
  if (s == "covariateR") return NodeKind::covariateR;
  if (s == "mediatorZ") return NodeKind::mediatorZ;
  if (s == "covariateL") return NodeKind::covariateL;
  if (s == "outcomeY") return NodeKind::outcomeY;
  throw std::invalid_argument("unknown node kind: " + s);
}

int Schema::node_index(const std::string& name) const {
  for (int i = 0; i < n_nodes(); ++i)
    if (names[i] == name) return i;
  return -1;
}

uint64_t Schema::pack_prefix(const int8_t* values, int upto) const {
  uint64_t code = 0;
  for (int j = 0; j < upto; ++j)
    code += static_cast<uint64_t>(values[j] + 1) * pack_mult[j];
  return code;
}

// Within a time block the order is treatments, then R, then Z, then L;
// baseline nodes come first.  Rank encodes that.
static int kind_rank(NodeKind k) {
  switch (k) {
    case NodeKind::baseline: return 0;
    case NodeKind::treatment:
    case NodeKind::censoring: return 1;
    case NodeKind::covariateR: return 2;
    case NodeKind::mediatorZ: return 3;
    case NodeKind::covariateL:
    case NodeKind::outcomeY: return 4;
  }
  return 5;
}

namespace {

struct Enumerator {
  const std::vector<Node>& nodes;
  Schema& out;
  Trajectory values;

  explicit Enumerator(Schema& s) : nodes(s.nodes), out(s) {
    values.assign(nodes.size(), kBlank);
  }

  void walk(size_t i, DegeneracyState st) {
    if (i == nodes.size()) {
      out.classes.push_back(values);
      return;
    }
    const Node& nd = nodes[i];
    int8_t forced_value;
    if (st.forced(nd, &forced_value)) {
      values[i] = forced_value;
      DegeneracyState nx = st;
      nx.step(nd, forced_value);
      walk(i + 1, nx);
      return;
    }
    // Stochastic: register the parent config once.
    uint64_t code = out.pack_prefix(values.data(), static_cast<int>(i));
    auto& idx = out.active_index[i];
    if (idx.find(code) == idx.end()) {
      idx.emplace(code, static_cast<int32_t>(out.active_codes[i].size()));
      out.active_codes[i].push_back(code);
      out.active_configs[i].emplace_back(values.begin(), values.begin() + i);
    }
    for (int v = 0; v < nd.n_levels; ++v) {
      values[i] = static_cast<int8_t>(v);
      DegeneracyState nx = st;
      nx.step(nd, static_cast<int8_t>(v));
      walk(i + 1, nx);
    }
    values[i] = kBlank;
  }
};

}  // namespace

std::shared_ptr<const Schema> build_schema(const std::vector<NodeSpec>& specs) {
  if (specs.empty()) throw std::invalid_argument("schema: no nodes");
  auto schema = std::make_shared<Schema>();
  Schema& s = *schema;

  s.nodes.reserve(specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    Node nd;
    static_cast<NodeSpec&>(nd) = specs[i];
    nd.index = static_cast<int>(i);
    if (nd.name.empty()) throw std::invalid_argument("schema: empty node name");
    if (nd.n_levels < 1)
      throw std::invalid_argument("schema: empty support for node " + nd.name);
    if (nd.kind == NodeKind::baseline && nd.t != 0)
      throw std::invalid_argument("schema: baseline node " + nd.name + " must have t=0");
    if (nd.kind != NodeKind::baseline && nd.t < 1)
      throw std::invalid_argument("schema: node " + nd.name + " needs t >= 1");
    if (nd.kind == NodeKind::outcomeY && nd.t < 1)
      throw std::invalid_argument("schema: outcome " + nd.name + " outside an L-block");
    for (int a : nd.absorbing_levels)
      if (a < 0 || a >= nd.n_levels)
        throw std::invalid_argument("schema: absorbing level out of support for " + nd.name);
    if (nd.kind == NodeKind::censoring &&
        (nd.censor_trigger_level < 0 || nd.censor_trigger_level >= nd.n_levels))
      throw std::invalid_argument("schema: censor trigger out of support for " + nd.name);
    s.nodes.push_back(std::move(nd));
  }

  for (const Node& nd : s.nodes) {
    for (const Node& other : s.nodes)
      if (&nd != &other && nd.name == other.name)
        throw std::invalid_argument("schema: duplicate node name " + nd.name);
    s.names.push_back(nd.name);
    s.K = std::max(s.K, nd.t);
  }
  if (s.K < 1) throw std::invalid_argument("schema: needs at least one time period");

  for (size_t i = 1; i < s.nodes.size(); ++i) {
    const Node& a = s.nodes[i - 1];
    const Node& b = s.nodes[i];
    if (b.t < a.t || (b.t == a.t && kind_rank(b.kind) < kind_rank(a.kind)))
      throw std::invalid_argument("schema: node " + b.name + " out of temporal order");
  }

  // Mixed-radix packing with overflow guard.
  s.pack_mult.resize(s.nodes.size());
  uint64_t mult = 1;
  for (size_t i = 0; i < s.nodes.size(); ++i) {
    s.pack_mult[i] = mult;
    uint64_t radix = static_cast<uint64_t>(s.nodes[i].n_levels) + 1;
    if (mult > (uint64_t(1) << 62) / radix)
      throw std::invalid_argument("schema: history space too large to index");
    mult *= radix;
  }

  s.active_codes.resize(s.nodes.size());
  s.active_configs.resize(s.nodes.size());
  s.active_index.resize(s.nodes.size());

  Enumerator en(s);
  en.walk(0, DegeneracyState{});

  s.class_nodes.resize(s.classes.size() * s.nodes.size());
  for (size_t c = 0; c < s.classes.size(); ++c) {
    const Trajectory& tr = s.classes[c];
    s.class_index.emplace(s.pack_full(tr), static_cast<int32_t>(c));
    DegeneracyState st;
    for (size_t i = 0; i < s.nodes.size(); ++i) {
      ClassNode& cn = s.class_nodes[c * s.nodes.size() + i];
      cn.value = tr[i];
      int8_t forced_value;
      if (!st.forced(s.nodes[i], &forced_value)) {
        cn.stochastic = 1;
        cn.pa_idx = s.active_index[i].at(s.pack_prefix(tr.data(), static_cast<int>(i)));
      }
      st.step(s.nodes[i], tr[i]);
    }
  }

  s.prefix_pa_idx.resize(s.nodes.size());
  for (size_t x = 0; x < s.nodes.size(); ++x) {
    const auto& cfgs = s.active_configs[x];
    s.prefix_pa_idx[x].assign(cfgs.size() * x, -1);
    for (size_t g = 0; g < cfgs.size(); ++g) {
      uint64_t code = 0;
      for (size_t j = 0; j < x; ++j) {
        s.prefix_pa_idx[x][g * x + j] = s.active_index[j].at(code);
        code += (static_cast<uint64_t>(cfgs[g][j]) + 1) * s.pack_mult[j];
      }
    }
  }

  s.nona_pos.assign(s.nodes.size(), -1);
  s.nona_mult.assign(s.nodes.size(), 0);
  uint64_t nm = 1;
  for (size_t i = 0; i < s.nodes.size(); ++i) {
    if (s.nodes[i].is_treatment_block()) continue;
    s.nona_pos[i] = static_cast<int>(s.nona_nodes.size());
    s.nona_nodes.push_back(static_cast<int>(i));
    s.nona_mult[i] = nm;
    nm *= static_cast<uint64_t>(s.nodes[i].n_levels) + 1;
  }

  return schema;
}

ValidationReport validate_trajectory(const Schema& schema, const Trajectory& traj) {
  ValidationReport rep;
  if (traj.size() != schema.nodes.size()) {
    rep.ok = false;
    rep.message = "trajectory length does not match schema";
    return rep;
  }
  DegeneracyState st;
  for (size_t i = 0; i < schema.nodes.size(); ++i) {
    const Node& nd = schema.nodes[i];
    int8_t forced_value;
    if (st.forced(nd, &forced_value)) {
      if (traj[i] != forced_value) {
        rep.ok = false;
        rep.node = nd.name;
        rep.message = (forced_value == kBlank)
                          ? "expected blank after censoring/event"
                          : "expected retained outcome level " + std::to_string(forced_value);
        return rep;
      }
    } else {
      if (traj[i] < 0 || traj[i] >= nd.n_levels) {
        rep.ok = false;
        rep.node = nd.name;
        rep.message = "value out of support";
        return rep;
      }
    }
    st.step(nd, traj[i]);
  }
  return rep;
}

InterventionPair build_intervention_pair(
    const Schema& schema,
    const std::unordered_map<std::string, int>& treat_a,
    const std::unordered_map<std::string, int>& treat_ap) {
  InterventionPair pair;
  pair.arm_a.assign(schema.nodes.size(), kBlank);
  pair.arm_ap.assign(schema.nodes.size(), kBlank);

  auto apply = [&](const std::unordered_map<std::string, int>& m, std::vector<int8_t>& arm) {
    for (const auto& [name, level] : m) {
      int i = schema.node_index(name);
      if (i < 0) throw std::invalid_argument("intervention: unknown node " + name);
      const Node& nd = schema.nodes[i];
      if (!nd.is_treatment_block())
        throw std::invalid_argument("intervention: node " + name + " is not a treatment");
      if (level < 0 || level >= nd.n_levels)
        throw std::invalid_argument("intervention: level out of support for " + name);
      if (nd.kind == NodeKind::censoring && level == nd.censor_trigger_level)
        throw std::invalid_argument("intervention: cannot force censoring at " + name);
      arm[i] = static_cast<int8_t>(level);
    }
    for (const Node& nd : schema.nodes) {
      if (!nd.is_treatment_block() || arm[nd.index] != kBlank) continue;
      if (nd.kind == NodeKind::censoring) {
        if (nd.n_levels != 2)
          throw std::invalid_argument("intervention: uncensored level ambiguous for " + nd.name);
        arm[nd.index] = static_cast<int8_t>(1 - nd.censor_trigger_level);
      } else {
        throw std::invalid_argument("intervention: treatment " + nd.name + " unassigned");
      }
    }
  };
  apply(treat_a, pair.arm_a);
  apply(treat_ap, pair.arm_ap);
  return pair;
}

std::string schema_to_json(const Schema& schema) {
  nlohmann::json j;
  j["K"] = schema.K;
  j["nodes"] = nlohmann::json::array();
  for (const Node& nd : schema.nodes) {
    nlohmann::json n;
    n["name"] = nd.name;
    n["t"] = nd.t;
    n["kind"] = kind_name(nd.kind);
    n["levels"] = nd.n_levels;
    if (!nd.absorbing_levels.empty()) n["absorbing_levels"] = nd.absorbing_levels;
    if (nd.kind == NodeKind::censoring) n["censor_trigger_level"] = nd.censor_trigger_level;
    j["nodes"].push_back(std::move(n));
  }
  return j.dump(2);
}

std::shared_ptr<const Schema> schema_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  std::vector<NodeSpec> specs;
  for (const auto& n : j.at("nodes")) {
    NodeSpec sp;
    sp.name = n.at("name").get<std::string>();
    sp.t = n.at("t").get<int>();
    sp.kind = kind_from_name(n.at("kind").get<std::string>());
    sp.n_levels = n.at("levels").get<int>();
    if (n.contains("absorbing_levels"))
      sp.absorbing_levels = n["absorbing_levels"].get<std::vector<int>>();
    if (n.contains("censor_trigger_level"))
      sp.censor_trigger_level = n["censor_trigger_level"].get<int>();
    specs.push_back(std::move(sp));
  }
  auto schema = build_schema(specs);
  if (j.contains("K") && j["K"].get<int>() != schema->K)
    throw std::invalid_argument("schema json: K does not match node list");
  return schema;
}

}  // namespace medt
