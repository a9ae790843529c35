#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "assembly/shapes.hpp"
#include "assembly/world.hpp"

namespace assembly {

struct UnmakeConfig {
  double gamma = 0.95;
  std::size_t node_budget = 10000;
  int table_samples = 3;    // free table poses sampled per (node, primitive)
  bool exhaustive = true;   // false: one random disassembly trajectory
  bool anchored_leaf = false;  // stop with one structure primitive left (n = m - 1)
};

class NotAnInstance : public std::invalid_argument {
 public:
  NotAnInstance() : std::invalid_argument("NotAnInstance: classifier rejects the unmake input") {}
};

struct GraphNode {
  WorldState state;  // representative of the merged class
  CanonicalKey key;
  int depth = 0;
  double value_bound = 1.0;
  /// Assembly actions from this node to a node one layer closer to the root.
  std::vector<AssemblyAction> inverse_actions;
  /// Parent node index for every inverse action (same order).
  std::vector<std::size_t> parents;
};

class DisassemblyGraph {
 public:
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const GraphNode& root() const { return nodes_.front(); }
  const GraphNode* find(const CanonicalKey& key) const;
  std::size_t size() const { return nodes_.size(); }
  int max_depth() const;
  std::vector<std::size_t> layer(int depth) const;
  bool truncated() const { return truncated_; }

  /// Every root-to-leaf chain of node indices (leaf first, root last).
  std::vector<std::vector<std::size_t>> paths_to_root(std::size_t limit = 100000) const;

 private:
  friend DisassemblyGraph unmake(const WorldState&, const Task&, const UnmakeConfig&, std::mt19937_64&);
  std::vector<GraphNode> nodes_;  // breadth-first order
  std::map<CanonicalKey, std::size_t> index_;
  bool truncated_ = false;
};

/// Breadth-first disassembly of an assembled instance with ≈-merging.
DisassemblyGraph unmake(const WorldState& instance_state, const Task& task, const UnmakeConfig& config,
                        std::mt19937_64& rng);

/// Whether disassembly stops at `state` under `config`.
bool is_disassembled(const WorldState& state, const UnmakeConfig& config);

/// Random moves of a non-blocked structure primitive to a free table pose.
std::vector<AssemblyAction> sample_disassembly_actions(const WorldState& state, int per_primitive,
                                                       std::mt19937_64& rng);

/// The action that moves the primitive back to its pose in `state_before`.
AssemblyAction invert_action(const WorldState& state_before, const AssemblyAction& unmake_action);

struct DmuEntry {
  WorldState state;
  std::vector<AssemblyAction> actions;
  std::string instance_id;
  int path_id = 0;
  int depth = 0;
};

/// D_mu: states paired with every assembly action available from them.
struct StateActionsDataset {
  std::vector<DmuEntry> entries;
};

/// Adds every loose primitive interchangeable with a picked loose one
/// (same length and color) as an alternative pick.
std::vector<AssemblyAction> expand_interchangeable(const WorldState& state,
                                                   const std::vector<AssemblyAction>& actions);

StateActionsDataset build_dmu(const std::vector<CategoryInstance>& instances, const Task& task,
                              int paths_per_instance, std::uint64_t seed, const UnmakeConfig& config = {});

nlohmann::ordered_json to_json(const DmuEntry& entry);
DmuEntry dmu_entry_from_json(const nlohmann::json& j);

}  // namespace assembly
