#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "assembly/shapes.hpp"
#include "assembly/value.hpp"
#include "assembly/world.hpp"

namespace assembly {

struct MctsConfig {
  int simulations_per_move = 50;
  double uct_c = 1.4;
  int rollout_depth = 8;
  bool rollout_max = true;   // score a rollout by its best completion instead of its last
  int restart_moves = 18;    // executed moves before starting over with a fresh tree (0 = never)
};

struct SearchBudget {
  long max_env_steps = 200000;
  /// Random exploration restarts from the initial state every this many
  /// steps (0 = one unbroken walk). Restarts are free.
  int random_horizon = 18;
  MctsConfig mcts;
};

struct EpisodeReport {
  bool success = false;
  long env_steps = 0;
  std::uint64_t seed = 0;
  std::string method;
  double wall_time_s = 0.0;  // reported on the console only, never written to files
};

/// Transition function seen by the searches. Every call is one environment step.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual WorldState step(const WorldState& state, const AssemblyAction& action) = 0;
};

class Simulator : public Environment {
 public:
  WorldState step(const WorldState& state, const AssemblyAction& action) override {
    return apply_action(state, action);
  }
};

/// Uniformly random enumerated actions until the classifier fires or the budget runs out.
EpisodeReport random_explore(const WorldState& start, const Task& task, const SearchBudget& budget,
                             std::uint64_t seed, Environment* env = nullptr);

/// UCT search with random rollouts scored by the task's completion score.
/// After `simulations_per_move` simulations the most visited action is
/// executed (one more step) and the tree is re-rooted at its child. After
/// `restart_moves` executed moves the episode starts over from `start` with
/// a fresh tree, since most moves cannot be taken back.
EpisodeReport mcts_search(const WorldState& start, const Task& task, const SearchBudget& budget,
                          std::uint64_t seed, Environment* env = nullptr);

/// Tree statistics for tests: after every executed move the hook receives
/// (visits, sum of child visits, is_leaf) for each node of the kept tree.
struct MctsNodeStats {
  int visits = 0;
  int child_visits = 0;
  bool leaf = false;
};
using MctsInspector = std::function<void(const std::vector<MctsNodeStats>&)>;
EpisodeReport mcts_search(const WorldState& start, const Task& task, const SearchBudget& budget,
                          std::uint64_t seed, Environment* env, const MctsInspector& inspect);

// ---------------------------------------------------------------------------
// Steps-to-build comparison

struct StepsTableConfig {
  std::vector<int> heights{3, 4, 5};
  std::vector<std::string> methods{"random", "mcts", "ours", "oracle"};
  int episodes = 200;
  SearchBudget budget;
  int ours_max_steps = 4 * kMaxPrimitives;
};

struct StepsCell {
  int height = 0;
  std::string method;
  std::vector<long> steps;  // per episode; failures count the steps they consumed
  int successes = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct StepsTable {
  std::vector<StepsCell> cells;
  int resampled = 0;
  const StepsCell* find(int height, const std::string& method) const;
};

/// `nets` maps arch height to the value net used by "ours".
StepsTable steps_table(const StepsTableConfig& config, const std::map<int, const ValueNet*>& nets,
                       std::uint64_t seed, const std::function<void(const StepsCell&)>& log = {});

std::string steps_table_csv(const StepsTable& table);
nlohmann::ordered_json to_json(const StepsTable& table);

}  // namespace assembly
