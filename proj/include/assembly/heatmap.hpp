#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "assembly/observation.hpp"
#include "assembly/shapes.hpp"
#include "assembly/unmake.hpp"
#include "assembly/world.hpp"

namespace assembly {

/// Grid geometry shared by encoder, decoder and snapping: grid point (u, v)
/// sits at workspace (u * cell, v * cell), so the table center is (32, 32).
struct HeatmapGrid {
  int size = 64;
  double cell = kGridCells / 64.0;  // U per grid step
  double sigma = 1.5;               // grid cells
  double support = 4.0;             // blobs are cut to zero beyond support * sigma
  int nms_radius = 2;
};

nlohmann::ordered_json to_json(const HeatmapGrid& g);

struct GridPoint {
  int u = 0;  // along x
  int v = 0;  // along y
  bool operator==(const GridPoint&) const = default;
};

/// 4 x size x size, channel-major. Channel 0 = position, 1..3 = orientation class x / y / z.
struct Heatmap {
  int size = 64;
  std::vector<float> data;

  explicit Heatmap(int n = 64) : size(n), data(static_cast<std::size_t>(4 * n * n), 0.0f) {}
  float& at(int c, int u, int v) { return data[static_cast<std::size_t>((c * size + v) * size + u)]; }
  float at(int c, int u, int v) const { return data[static_cast<std::size_t>((c * size + v) * size + u)]; }
};

class PositionOutsideGrid : public std::out_of_range {
 public:
  PositionOutsideGrid(double x, double y);
};

GridPoint to_grid(const Vec3& position, const HeatmapGrid& grid = {});
Vec3 from_grid(GridPoint g, const HeatmapGrid& grid = {});

/// One heatmap entry: where, and in which orientation class.
struct HeatmapAction {
  Vec3 position;  // only x and y are used
  Orientation orientation = Orientation::kAlongX;
};

/// Pick entries sit at the picked primitive (current orientation); place
/// entries at the target center.
std::vector<HeatmapAction> heatmap_actions(const WorldState& state, const std::vector<AssemblyAction>& actions,
                                           Phase phase);

/// Gaussian blob per action, max-combined, on channel 0 and on the action's orientation channel.
Heatmap encode_heatmap(const std::vector<HeatmapAction>& actions, const HeatmapGrid& grid = {});

struct DecodedAction {
  GridPoint cell;
  Orientation orientation = Orientation::kAlongX;
  double score = 0.0;
};

/// Local maxima of channel 0 (3x3), best first (ties in row-major order),
/// suppressed within nms_radius of a better one; orientation = argmax of 1..3.
std::vector<DecodedAction> decode_heatmap(const Heatmap& hm, int top_k, const HeatmapGrid& grid = {});

class NoNearbyPrimitive : public std::runtime_error {
 public:
  NoNearbyPrimitive() : std::runtime_error("NoNearbyPrimitive") {}
};
class NoNearbyPlacement : public std::runtime_error {
 public:
  NoNearbyPlacement() : std::runtime_error("NoNearbyPlacement") {}
};

inline constexpr double kSnapRadius = 1.5;  // U

/// Nearest non-blocked primitive center within kSnapRadius.
int snap_pick(const WorldState& state, const DecodedAction& decoded, const HeatmapGrid& grid = {});
/// Nearest enumerated placement of `pick_id` within kSnapRadius, preferring
/// the decoded orientation class.
AssemblyAction snap_place(const WorldState& state, int pick_id, const DecodedAction& decoded,
                          const HeatmapGrid& grid = {});

/// Correct next actions towards `target`: every loose primitive that can fill
/// the first missing piece, placed at that piece's pose. Empty once the
/// target is complete or when a wrong piece blocks it.
std::vector<AssemblyAction> expert_actions(const WorldState& state, const CategoryInstance& target);

struct PolicySample {
  Observation observation;
  Heatmap heatmap;
  std::string source_key;
  int action_count = 0;
  std::string kind;  // "demo" or "reassembly"
  std::string instance_id;
};

struct PolicyDataConfig {
  AugmentConfig augment;
  int perturbations_per_state = 1;
  CameraModel camera;
  HeatmapGrid grid;
};

/// Streams D_pi samples in a deterministic order: for each D_mu entry a pick
/// sample and one place sample per distinct picked primitive; then, for every
/// entry state and goal state, `perturbations_per_state` random structure
/// moves labelled with the move that undoes them.
void build_dpi(const StateActionsDataset& dmu, const Task& task, const PolicyDataConfig& config, std::uint64_t seed,
               const std::function<void(const PolicySample&)>& sink);

/// Writes index.jsonl, dataset.json and the tensor blobs under `dir`.
/// Returns the number of samples.
std::size_t write_dpi(const StateActionsDataset& dmu, const Task& task, const PolicyDataConfig& config,
                      std::uint64_t seed, const std::filesystem::path& dir, const nlohmann::ordered_json& stamp);

void write_heatmap(const Heatmap& hm, const std::filesystem::path& path, const HeatmapGrid& grid,
                   const nlohmann::ordered_json& extra = {});
Heatmap read_heatmap(const std::filesystem::path& path);

}  // namespace assembly
