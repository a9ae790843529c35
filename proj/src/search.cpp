#include "assembly/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "assembly/io.hpp"

namespace assembly {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct MctsNode {
  WorldState state;
  bool goal = false;
  std::vector<AssemblyAction> actions;  // shuffled once at creation
  std::vector<int> children;            // -1 while unexpanded
  std::size_t expanded = 0;
  int visits = 0;
  double value_sum = 0.0;
};

class Mcts {
 public:
  Mcts(const Task& task, const SearchBudget& budget, std::uint64_t seed, Environment& env)
      : task_(task), budget_(budget), rng_(seed), env_(env) {}

  EpisodeReport run(const WorldState& start, const MctsInspector& inspect) {
    EpisodeReport report;
    report.method = "mcts";
    int root = make_node(start);
    int moves = 0;
    while (!nodes_[static_cast<std::size_t>(root)].goal) {
      if (budget_.mcts.restart_moves > 0 && moves == budget_.mcts.restart_moves) {
        nodes_.clear();
        root = make_node(start);
        moves = 0;
      }
      ++moves;
      for (int sim = 0; sim < budget_.mcts.simulations_per_move; ++sim) {
        if (!simulate(root)) return finish(report, false);
      }
      const MctsNode& r = nodes_[static_cast<std::size_t>(root)];
      int best = -1;
      std::size_t best_action = 0;
      for (std::size_t i = 0; i < r.children.size(); ++i) {
        const int c = r.children[i];
        if (c >= 0 && (best < 0 || nodes_[static_cast<std::size_t>(c)].visits >
                                       nodes_[static_cast<std::size_t>(best)].visits)) {
          best = c;
          best_action = i;
        }
      }
      if (best < 0 || !spend()) return finish(report, false);
      env_.step(r.state, r.actions[best_action]);  // the executed move
      root = best;
      if (inspect) inspect(collect(root));
    }
    return finish(report, true);
  }

 private:
  EpisodeReport& finish(EpisodeReport& report, bool success) {
    report.success = success;
    report.env_steps = steps_;
    return report;
  }

  bool spend() {
    if (steps_ >= budget_.max_env_steps) return false;
    ++steps_;
    return true;
  }

  int make_node(WorldState state) {
    MctsNode n;
    n.goal = task_.is_goal(state);
    if (!n.goal) {
      n.actions = enumerate_actions(state);
      std::shuffle(n.actions.begin(), n.actions.end(), rng_);
      n.children.assign(n.actions.size(), -1);
    }
    n.state = std::move(state);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// One selection / expansion / rollout / backup pass. False when the budget ran out.
  bool simulate(int root) {
    std::vector<int> path{root};
    int cur = root;
    while (true) {
      MctsNode& n = nodes_[static_cast<std::size_t>(cur)];
      if (n.visits == 0 || n.goal || n.actions.empty()) break;
      if (n.expanded < n.actions.size()) {
        const std::size_t i = n.expanded;
        if (!spend()) return false;
        WorldState next = env_.step(n.state, n.actions[i]);
        const int child = make_node(std::move(next));
        MctsNode& parent = nodes_[static_cast<std::size_t>(cur)];  // make_node may reallocate
        parent.children[i] = child;
        ++parent.expanded;
        path.push_back(child);
        cur = child;
        break;
      }
      cur = select(n);
      path.push_back(cur);
    }
    double value = 0.0;
    if (!rollout(nodes_[static_cast<std::size_t>(cur)], value)) return false;
    for (int id : path) {
      MctsNode& n = nodes_[static_cast<std::size_t>(id)];
      ++n.visits;
      n.value_sum += value;
    }
    return true;
  }

  int select(const MctsNode& n) const {
    const double log_n = std::log(static_cast<double>(n.visits));
    int best = -1;
    double best_score = -1e300;
    for (int c : n.children) {
      const MctsNode& child = nodes_[static_cast<std::size_t>(c)];
      const double q = child.value_sum / child.visits;
      const double score = q + budget_.mcts.uct_c * std::sqrt(log_n / child.visits);
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    return best;
  }

  bool rollout(const MctsNode& leaf, double& value) {
    if (leaf.goal) {
      value = 1.0;
      return true;
    }
    WorldState s = leaf.state;
    double best = task_.completion(s);
    for (int d = 0; d < budget_.mcts.rollout_depth; ++d) {
      const auto actions = enumerate_actions(s);
      if (actions.empty()) break;
      if (!spend()) return false;
      s = env_.step(s, actions[std::uniform_int_distribution<std::size_t>(0, actions.size() - 1)(rng_)]);
      if (task_.is_goal(s)) {
        value = 1.0;
        return true;
      }
      if (budget_.mcts.rollout_max) best = std::max(best, task_.completion(s));
    }
    value = budget_.mcts.rollout_max ? best : task_.completion(s);
    return true;
  }

  std::vector<MctsNodeStats> collect(int root) const {
    std::vector<MctsNodeStats> out;
    std::vector<int> stack{root};
    while (!stack.empty()) {
      const MctsNode& n = nodes_[static_cast<std::size_t>(stack.back())];
      stack.pop_back();
      MctsNodeStats st;
      st.visits = n.visits;
      st.leaf = n.expanded == 0;
      for (int c : n.children) {
        if (c < 0) continue;
        st.child_visits += nodes_[static_cast<std::size_t>(c)].visits;
        stack.push_back(c);
      }
      out.push_back(st);
    }
    return out;
  }

  const Task& task_;
  const SearchBudget& budget_;
  std::mt19937_64 rng_;
  Environment& env_;
  std::vector<MctsNode> nodes_;
  long steps_ = 0;
};

double mean_of(const std::vector<long>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (long x : v) s += static_cast<double>(x);
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<long>& v, double mean) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (long x : v) s += (static_cast<double>(x) - mean) * (static_cast<double>(x) - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

EpisodeReport random_explore(const WorldState& start, const Task& task, const SearchBudget& budget,
                             std::uint64_t seed, Environment* env) {
  const auto t0 = Clock::now();
  Simulator sim;
  Environment& e = env ? *env : sim;
  std::mt19937_64 rng(seed);
  EpisodeReport report;
  report.method = "random";
  report.seed = seed;
  WorldState s = start;
  int since_restart = 0;
  while (true) {
    if (task.is_goal(s)) {
      report.success = true;
      break;
    }
    if (report.env_steps >= budget.max_env_steps) break;
    if (budget.random_horizon > 0 && since_restart == budget.random_horizon) {
      s = start;
      since_restart = 0;
    }
    ++since_restart;
    auto actions = enumerate_actions(s);
    if (actions.empty() && budget.random_horizon > 0 && since_restart > 1) {
      s = start;  // dead end: restart early
      since_restart = 1;
      actions = enumerate_actions(s);
    }
    if (actions.empty()) break;
    s = e.step(s, actions[std::uniform_int_distribution<std::size_t>(0, actions.size() - 1)(rng)]);
    ++report.env_steps;
  }
  report.wall_time_s = seconds_since(t0);
  return report;
}

EpisodeReport mcts_search(const WorldState& start, const Task& task, const SearchBudget& budget,
                          std::uint64_t seed, Environment* env, const MctsInspector& inspect) {
  const auto t0 = Clock::now();
  Simulator sim;
  Mcts search(task, budget, seed, env ? *env : sim);
  EpisodeReport report = search.run(start, inspect);
  report.seed = seed;
  report.wall_time_s = seconds_since(t0);
  return report;
}

EpisodeReport mcts_search(const WorldState& start, const Task& task, const SearchBudget& budget,
                          std::uint64_t seed, Environment* env) {
  return mcts_search(start, task, budget, seed, env, {});
}

const StepsCell* StepsTable::find(int height, const std::string& method) const {
  for (const auto& c : cells) {
    if (c.height == height && c.method == method) return &c;
  }
  return nullptr;
}

StepsTable steps_table(const StepsTableConfig& config, const std::map<int, const ValueNet*>& nets,
                       std::uint64_t seed, const std::function<void(const StepsCell&)>& log) {
  StepsTable table;
  for (int h : config.heights) {
    const Task task = Task::arch(h);
    std::vector<WorldState> starts;
    for (int ep = 0; ep < config.episodes; ++ep) {
      std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(h) * 1000003u + static_cast<std::uint64_t>(ep)));
      const auto& instances = task.instances();
      const auto& inst = instances[std::uniform_int_distribution<std::size_t>(0, instances.size() - 1)(rng)];
      starts.push_back(task.scatter_instance(inst, rng));
    }
    for (const std::string& method : config.methods) {
      StepsCell cell;
      cell.height = h;
      cell.method = method;
      for (int ep = 0; ep < config.episodes; ++ep) {
        const WorldState& start = starts[static_cast<std::size_t>(ep)];
        const std::uint64_t ep_seed = mix_seed(seed ^ 0x5eedu, static_cast<std::uint64_t>(h) * 1000003u + ep);
        long steps = 0;
        bool success = false;
        if (method == "random") {
          const EpisodeReport r = random_explore(start, task, config.budget, ep_seed);
          steps = r.env_steps;
          success = r.success;
        } else if (method == "mcts") {
          const EpisodeReport r = mcts_search(start, task, config.budget, ep_seed);
          steps = r.env_steps;
          success = r.success;
        } else if (method == "ours") {
          const auto it = nets.find(h);
          if (it == nets.end() || it->second == nullptr) {
            throw std::invalid_argument("no value net for arch height " + std::to_string(h));
          }
          const Rollout r = greedy_rollout(NetValue(*it->second), task, start, config.ours_max_steps);
          steps = r.steps;
          success = r.success;
        } else if (method == "oracle") {
          steps = *task.oracle_steps(start);
          success = true;
        } else {
          throw std::invalid_argument("unknown method '" + method + "'");
        }
        cell.steps.push_back(steps);
        cell.successes += success ? 1 : 0;
      }
      cell.mean = mean_of(cell.steps);
      cell.std = std_of(cell.steps, cell.mean);
      if (log) log(cell);
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

std::string steps_table_csv(const StepsTable& table) {
  std::string out = "height,method,episodes,successes,mean_steps,std_steps\n";
  char line[160];
  for (const auto& c : table.cells) {
    std::snprintf(line, sizeof(line), "%d,%s,%zu,%d,%.6f,%.6f\n", c.height, c.method.c_str(), c.steps.size(),
                  c.successes, c.mean, c.std);
    out += line;
  }
  return out;
}

nlohmann::ordered_json to_json(const StepsTable& table) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["resampled_episodes"] = table.resampled;
  auto& cells = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"height", c.height},
                     {"method", c.method},
                     {"episodes", c.steps.size()},
                     {"successes", c.successes},
                     {"mean", c.mean},
                     {"std", c.std},
                     {"steps", c.steps}});
  }
  return j;
}

}  // namespace assembly
