#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "assembly/shapes.hpp"
#include "assembly/unmake.hpp"
#include "assembly/value_net.hpp"
#include "assembly/world.hpp"

namespace assembly {

inline constexpr int kHeightMapCells = kGridCells * kGridCells;
inline constexpr int kLooseKinds = 3 * kPaletteSize;
inline constexpr int kEncodingDim = kHeightMapCells + kLooseKinds;

/// Fixed-length state vector:
///   [0, 256)   top height of structure primitives per table cell, / kMaxHeight
///   [256, 280) loose primitive counts per (length, color), / kMaxPrimitives
/// Structure enters only through its occupied shape, so a pillar of two cubes
/// and a standing 2U beam look alike. Loose primitives enter only as a multiset.
using StateEncoding = std::array<double, kEncodingDim>;

StateEncoding encode(const WorldState& state);
Eigen::MatrixXd encode_batch(std::span<const WorldState> states);

NetArchitecture value_architecture();

// ---------------------------------------------------------------------------
// Value dataset

struct ValueRecord {
  enum class Kind { kTrajectory, kExpansion };
  Kind kind = Kind::kTrajectory;
  double target = 1.0;
  int depth = 0;               // depth of the trajectory state (the walk origin, for expansions)
  double parent_target = 1.0;  // label of the state the expansion step started from
  int walk_step = 0;           // 1-based position within an expansion walk
  bool key_matched = false;    // expansion landed on a graph state and reused its label
  std::size_t unique_index = 0;
};

/// Raw labelled pairs plus the training set deduplicated by encoding (max target kept).
struct ValueDataset {
  std::vector<ValueRecord> records;
  std::vector<StateEncoding> inputs;
  std::vector<double> targets;

  std::size_t size() const { return inputs.size(); }
  Eigen::MatrixXd input_matrix() const;
  Eigen::VectorXd target_vector() const;
};

struct ValueDataConfig {
  double gamma = 0.95;
  int expansions_per_state = 8;
  /// Random moves chained per expansion. Each step is labelled from the step
  /// before it, so depth 1 is the plain one-move expansion.
  int expansion_depth = 2;
  std::size_t min_pairs = 20000;  // raw pairs; generation repeats unmake passes until reached
  int max_passes = 100000;
  UnmakeConfig unmake;
};

ValueDataset build_value_dataset(const std::vector<CategoryInstance>& instances, const Task& task,
                                 const ValueDataConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 30;
  int batch = 64;
  AdamConfig adam;
  bool recalibrate_bn = true;  // exact running statistics over the data after the last epoch
  /// An epoch visits every raw record (with its deduplicated target) instead of
  /// every unique encoding once, so frequently generated states weigh more.
  bool weight_by_multiplicity = true;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int epoch);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainResult {
  ValueNet net;
  std::vector<double> epoch_loss;
  double final_mse = 0.0;  // inference-mode MSE over the dataset
};

using EpochLogger = std::function<void(int epoch, double loss)>;

TrainResult train_value(const ValueDataset& dataset, const TrainConfig& config, std::uint64_t seed,
                        const EpochLogger& log = {});

// ---------------------------------------------------------------------------
// Greedy policy

class ValueFunction {
 public:
  virtual ~ValueFunction() = default;
  virtual std::vector<double> evaluate(std::span<const WorldState> states) const = 0;
};

class NetValue : public ValueFunction {
 public:
  explicit NetValue(const ValueNet& net) : net_(net) {}
  std::vector<double> evaluate(std::span<const WorldState> states) const override;

 private:
  const ValueNet& net_;
};

/// Ground-truth progress score in place of a learned value.
class CompletionValue : public ValueFunction {
 public:
  explicit CompletionValue(const Task& task) : task_(task) {}
  std::vector<double> evaluate(std::span<const WorldState> states) const override;

 private:
  const Task& task_;
};

class NoActionsAvailable : public std::runtime_error {
 public:
  NoActionsAvailable() : std::runtime_error("NoActionsAvailable: state admits no assembly action") {}
};

/// argmax_a V(T(s, a)); the first enumerated action wins ties.
AssemblyAction greedy_policy_step(const ValueFunction& value, const WorldState& state);

struct Rollout {
  bool success = false;
  int steps = 0;
  std::vector<AssemblyAction> actions;
  WorldState final_state;
};

Rollout greedy_rollout(const ValueFunction& value, const Task& task, const WorldState& start, int max_steps,
                       ArchVariant variant = ArchVariant::kProgress);

/// Greedy rollout that takes a uniformly random enumerated action with
/// probability `epsilon` at each step.
Rollout exploring_rollout(const ValueFunction& value, const Task& task, const WorldState& start, int max_steps,
                          double epsilon, std::mt19937_64& rng, ArchVariant variant = ArchVariant::kProgress);

// ---------------------------------------------------------------------------
// Instance discovery and the training loop

struct DiscoveryConfig {
  int attempts = 200;
  int max_steps = 2 * kMaxPrimitives;
  int min_primitives = 3;
  int max_primitives = 8;
  double epsilon = 0.0;  // exploration rate of the building rollouts
};

/// Random primitive multiset: size uniform in [min, max], then uniform over
/// length multisets of that size containing at least one 3U beam.
std::vector<PieceKind> sample_discovery_kinds(const Task& task, const DiscoveryConfig& config,
                                              std::mt19937_64& rng);

std::vector<CategoryInstance> discover_instances(const ValueFunction& value, const Task& task,
                                                 const DiscoveryConfig& config, std::uint64_t seed);

struct LoopConfig {
  int rounds = 5;
  ValueDataConfig data;
  TrainConfig train;
  DiscoveryConfig discovery;
  /// Retrain with a fresh init when training diverges or the net fails the
  /// self-check; the best attempt is kept.
  int max_retries = 3;
  /// Greedy builds of scattered known instances run after each training attempt.
  int self_check_episodes = 20;
  double self_check_min = 0.9;
};

/// Fraction of `episodes` greedy builds that succeed, cycling through
/// `instances` with fresh scatters.
double self_check(const ValueFunction& value, const std::vector<CategoryInstance>& instances, const Task& task,
                  int episodes, int max_steps, std::uint64_t seed);

struct RoundMetrics {
  int round = 0;
  std::size_t instances_used = 0;
  std::size_t raw_pairs = 0;
  std::size_t unique_pairs = 0;
  double final_loss = 0.0;
  double final_mse = 0.0;
  std::size_t discovered = 0;
  std::size_t known_after = 0;
  int retries = 0;
  double self_check = 1.0;  // success rate of the kept net
};

struct LoopResult {
  ValueNet net;
  std::vector<CategoryInstance> instances;
  std::vector<RoundMetrics> rounds;
};

LoopResult run_training_loop(const std::vector<CategoryInstance>& inputs, const Task& task,
                             const LoopConfig& config, std::uint64_t seed,
                             const std::function<void(const RoundMetrics&)>& log = {});

}  // namespace assembly
