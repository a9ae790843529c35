#include "assembly/unmake.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "assembly/io.hpp"

namespace assembly {

const GraphNode* DisassemblyGraph::find(const CanonicalKey& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

int DisassemblyGraph::max_depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

std::vector<std::size_t> DisassemblyGraph::layer(int depth) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].depth == depth) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> DisassemblyGraph::paths_to_root(std::size_t limit) const {
  // Leaves: nodes that are nobody's parent.
  std::vector<bool> is_parent(nodes_.size(), false);
  for (const auto& n : nodes_) {
    for (std::size_t p : n.parents) is_parent[p] = true;
  }
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> path;
  auto walk = [&](auto&& self, std::size_t node) -> void {
    if (out.size() >= limit) return;
    path.push_back(node);
    if (nodes_[node].parents.empty()) {
      out.push_back(path);
    } else {
      std::vector<std::size_t> parents = nodes_[node].parents;
      std::sort(parents.begin(), parents.end());
      parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
      for (std::size_t p : parents) self(self, p);
    }
    path.pop_back();
  };
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!is_parent[i] && i != 0) walk(walk, i);
  }
  return out;
}

bool is_disassembled(const WorldState& state, const UnmakeConfig& config) {
  return state.structure_count() <= (config.anchored_leaf ? 1 : 0);
}

std::vector<AssemblyAction> sample_disassembly_actions(const WorldState& state, int per_primitive,
                                                       std::mt19937_64& rng) {
  std::vector<AssemblyAction> out;
  for (int id : disassemblable(state)) {
    const Primitive& p = *state.find(id);
    auto poses = free_table_poses(state, p.length, id);
    const std::size_t k = std::min<std::size_t>(poses.size(), static_cast<std::size_t>(per_primitive));
    // Partial Fisher-Yates: k distinct poses.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, poses.size() - 1);
      std::swap(poses[i], poses[pick(rng)]);
      out.push_back({id, poses[i].center, poses[i].orientation});
    }
  }
  return out;
}

AssemblyAction invert_action(const WorldState& state_before, const AssemblyAction& unmake_action) {
  const Primitive* p = state_before.find(unmake_action.pick_id);
  if (p == nullptr) {
    throw ActionError(ActionErrorCode::kUnknownPrimitive,
                      "no primitive with id " + std::to_string(unmake_action.pick_id));
  }
  if (auto err = check_action(state_before, unmake_action)) {
    throw ActionError(*err, "unmake action is not valid in the given state");
  }
  return {p->id, p->position, p->orientation};
}

namespace {

void add_action(GraphNode& node, const AssemblyAction& a, std::size_t parent) {
  for (const auto& b : node.inverse_actions) {
    if (same_action(a, b)) return;
  }
  node.inverse_actions.push_back(a);
  node.parents.push_back(parent);
}

}  // namespace

DisassemblyGraph unmake(const WorldState& instance_state, const Task& task, const UnmakeConfig& config,
                        std::mt19937_64& rng) {
  if (!task.is_goal(instance_state)) throw NotAnInstance();
  DisassemblyGraph g;
  g.nodes_.push_back({instance_state, canonical_key(instance_state), 0, 1.0, {}, {}});
  g.index_.emplace(g.nodes_.front().key, 0);
  std::deque<std::size_t> frontier{0};
  while (!frontier.empty()) {
    const std::size_t current = frontier.front();
    frontier.pop_front();
    const WorldState state = g.nodes_[current].state;  // copy: nodes_ may reallocate
    if (is_disassembled(state, config)) continue;
    const int depth = g.nodes_[current].depth;
    const double value = g.nodes_[current].value_bound * config.gamma;

    auto moves = sample_disassembly_actions(state, config.table_samples, rng);
    if (!config.exhaustive && !moves.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
      moves = {moves[pick(rng)]};
    }
    for (const auto& move : moves) {
      const AssemblyAction inverse = invert_action(state, move);
      WorldState child = apply_action(state, move);
      CanonicalKey key = canonical_key(child);
      auto it = g.index_.find(key);
      if (it != g.index_.end()) {
        add_action(g.nodes_[it->second], inverse, current);
        continue;
      }
      if (g.nodes_.size() >= config.node_budget) {
        g.truncated_ = true;
        continue;
      }
      GraphNode node{std::move(child), key, depth + 1, value, {}, {}};
      add_action(node, inverse, current);
      g.index_.emplace(std::move(key), g.nodes_.size());
      frontier.push_back(g.nodes_.size());
      g.nodes_.push_back(std::move(node));
    }
  }
  return g;
}

std::vector<AssemblyAction> expand_interchangeable(const WorldState& state,
                                                   const std::vector<AssemblyAction>& actions) {
  std::vector<AssemblyAction> out;
  auto push = [&](const AssemblyAction& a) {
    for (const auto& b : out) {
      if (same_action(a, b)) return;
    }
    out.push_back(a);
  };
  for (const auto& a : actions) {
    const Primitive* p = state.find(a.pick_id);
    if (p == nullptr || !state.is_loose(*p)) {
      push(a);
      continue;
    }
    for (const auto& q : state.primitives()) {
      if (state.is_loose(q) && q.length == p->length && q.color == p->color && !state.is_blocked(q)) {
        push({q.id, a.place_position, a.orientation});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const AssemblyAction& a, const AssemblyAction& b) {
    return std::tie(a.pick_id, a.place_position.x, a.place_position.y, a.place_position.z, a.orientation) <
           std::tie(b.pick_id, b.place_position.x, b.place_position.y, b.place_position.z, b.orientation);
  });
  return out;
}

namespace {

// Re-expresses an action from `source` in `target` (≈-equivalent states):
// loose picks map to any loose primitive of the same kind.
std::optional<AssemblyAction> remap(const WorldState& source, const WorldState& target,
                                    const AssemblyAction& a) {
  const Primitive* p = source.find(a.pick_id);
  if (p == nullptr) return std::nullopt;
  for (const auto& q : target.primitives()) {
    const bool same = source.is_loose(*p)
                          ? (target.is_loose(q) && q.length == p->length && q.color == p->color)
                          : (q.length == p->length && q.color == p->color &&
                             q.orientation == p->orientation && near(q.position, p->position, 0.01));
    if (same) return AssemblyAction{q.id, a.place_position, a.orientation};
  }
  return std::nullopt;
}

}  // namespace

StateActionsDataset build_dmu(const std::vector<CategoryInstance>& instances, const Task& task,
                              int paths_per_instance, std::uint64_t seed, const UnmakeConfig& config) {
  if (instances.empty()) throw std::invalid_argument("build_dmu needs at least one instance");
  StateActionsDataset ds;
  std::map<CanonicalKey, std::size_t> index;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const WorldState assembled = instantiate(instances[i], task.site());
    for (int path = 0; path < paths_per_instance; ++path) {
      std::mt19937_64 rng(mix_seed(seed, i * 1000003ULL + static_cast<std::uint64_t>(path)));
      const DisassemblyGraph g = unmake(assembled, task, config, rng);
      for (const auto& node : g.nodes()) {
        if (node.depth == 0) continue;
        auto it = index.find(node.key);
        if (it == index.end()) {
          index.emplace(node.key, ds.entries.size());
          ds.entries.push_back({node.state, node.inverse_actions, instances[i].id, path, node.depth});
          continue;
        }
        DmuEntry& entry = ds.entries[it->second];
        for (const auto& a : node.inverse_actions) {
          if (auto mapped = remap(node.state, entry.state, a)) entry.actions.push_back(*mapped);
        }
      }
    }
  }
  for (auto& e : ds.entries) e.actions = expand_interchangeable(e.state, e.actions);
  return ds;
}

nlohmann::ordered_json to_json(const DmuEntry& entry) {
  nlohmann::ordered_json actions = nlohmann::ordered_json::array();
  for (const auto& a : entry.actions) actions.push_back(to_json(a));
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["state"] = to_json(entry.state);
  j["actions"] = std::move(actions);
  j["meta"] = {{"instance", entry.instance_id},
               {"path", entry.path_id},
               {"depth", entry.depth},
               {"key", canonical_key(entry.state).str()}};
  return j;
}

DmuEntry dmu_entry_from_json(const nlohmann::json& j) {
  DmuEntry e;
  e.state = world_from_json(j.at("state"));
  for (const auto& a : j.at("actions")) e.actions.push_back(action_from_json(a));
  const auto& meta = j.at("meta");
  e.instance_id = meta.at("instance").get<std::string>();
  e.path_id = meta.at("path").get<int>();
  e.depth = meta.at("depth").get<int>();
  return e;
}

}  // namespace assembly
