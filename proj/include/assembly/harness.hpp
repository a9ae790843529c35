#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "assembly/heatmap.hpp"
#include "assembly/observation.hpp"
#include "assembly/search.hpp"
#include "assembly/shapes.hpp"
#include "assembly/unmake.hpp"
#include "assembly/value.hpp"

namespace assembly {

// ---------------------------------------------------------------------------
// Experiment configuration

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every key the config file may contain, with its default.
nlohmann::ordered_json default_config();

/// Overlays `user` on the defaults. Unknown keys and type mismatches throw
/// ConfigError naming the dotted path.
nlohmann::ordered_json resolve_config(const nlohmann::ordered_json& user);

/// Sets a dotted key ("search.mcts.uct_c") to a JSON literal, checked like a file entry.
void set_config_value(nlohmann::ordered_json& config, const std::string& dotted, const std::string& literal);

class Experiment {
 public:
  Experiment(nlohmann::ordered_json resolved, std::uint64_t seed);

  const nlohmann::ordered_json& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  /// FNV-1a over the canonical dump of the resolved config (seed excluded).
  const std::string& hash() const { return hash_; }
  /// {config_hash, seed, schema_version}, embedded in every artifact.
  nlohmann::ordered_json stamp() const;

  Task task() const;
  UnmakeConfig unmake() const;
  LoopConfig loop() const;
  std::vector<CategoryInstance> initial_instances(const Task& task) const;
  StepsTableConfig steps_table() const;
  PolicyDataConfig policy_data() const;
  CameraModel camera() const;
  HeatmapGrid grid() const;

 private:
  nlohmann::ordered_json config_;
  std::uint64_t seed_;
  std::string hash_;
};

// ---------------------------------------------------------------------------
// Closed-loop evaluation

struct EvalConfig {
  int episodes = 50;
  int max_steps = 2 * kMaxPrimitives;   // pick + place pairs per episode
  std::filesystem::path obs_dir;        // observation blobs; empty = do not write files
};

/// Episode start: a uniformly drawn instance scattered on the table.
struct EvalEpisode {
  CategoryInstance target;
  WorldState start;
};
EvalEpisode eval_episode(const Task& task, std::uint64_t seed, int episode);

/// Server side of the stdio protocol, independent of the transport. Each
/// client message yields the server's next messages; the session alternates
/// pick and place observations and ends every episode with a result.
class EvalSession {
 public:
  EvalSession(Task task, EvalConfig config, std::uint64_t seed, CameraModel camera = {}, HeatmapGrid grid = {});

  /// The first observation.
  std::vector<nlohmann::ordered_json> start();
  std::vector<nlohmann::ordered_json> handle(const nlohmann::json& message);
  bool finished() const { return finished_; }

  // Read-only view for in-process clients that need ground truth.
  const WorldState& state() const { return state_; }
  const CategoryInstance& target() const { return episode_.target; }
  Phase phase() const { return phase_; }
  std::optional<int> held() const { return held_; }

  struct EpisodeResult {
    bool success = false;
    int steps = 0;
    std::string error;  // protocol violation that ended the episode
  };
  const std::vector<EpisodeResult>& results() const { return results_; }
  nlohmann::ordered_json summary() const;

 private:
  nlohmann::ordered_json observe();
  std::vector<nlohmann::ordered_json> finish_episode(bool success, const std::string& error);
  void begin_episode();

  Task task_;
  EvalConfig config_;
  std::uint64_t seed_;
  CameraModel camera_;
  HeatmapGrid grid_;
  int episode_index_ = 0;
  EvalEpisode episode_;
  WorldState state_;
  Phase phase_ = Phase::kPick;
  std::optional<int> held_;
  int steps_ = 0;
  bool finished_ = false;
  bool started_ = false;
  std::vector<EpisodeResult> results_;
};

/// The action message an oracle client sends: ground-truth heatmap of the
/// expert actions for the current phase, decoded top-1.
nlohmann::ordered_json oracle_reply(const EvalSession& session, const HeatmapGrid& grid = {});

/// Serves the protocol over line streams until the session ends or input closes.
/// Returns 0 when every episode was completed.
int serve(EvalSession& session, std::istream& in, std::ostream& out);

// ---------------------------------------------------------------------------
// Command line

/// Entry point of the `assembly` tool. Errors go to `err` as one JSON line.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace assembly
