#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "assembly/world.hpp"

namespace assembly {

/// Pinhole camera with a look-at pose. Pose coordinates are in U; rendered
/// depth is in meters.
struct CameraModel {
  int width = 256;
  int height = 256;
  double fx = 215.0;
  double fy = 215.0;
  double cx = 127.5;
  double cy = 127.5;
  Vec3 eye{8.0, -8.0, 22.0};
  Vec3 target{8.0, 10.0, 1.0};

  /// Unit ray direction through the center of pixel (u, v), world frame.
  Vec3 ray(int u, int v) const;
  Vec3 eye_meters() const { return kUnitMeters * eye; }
  /// Pixel coordinates (continuous) of a world point given in U.
  std::pair<double, double> project(const Vec3& point_u) const;
};

nlohmann::ordered_json to_json(const CameraModel& camera);
CameraModel camera_from_json(const nlohmann::json& j);

enum class Phase : std::uint8_t { kPick = 0, kPlace = 1 };
std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

/// A colored box as seen by the renderer (U).
struct SceneBox {
  Box box;
  int color = color::kTable;
};

/// Depth with no hit at all (never happens with the default camera).
inline constexpr float kFarDepth = 10.0f;

struct Observation {
  int width = 0;
  int height = 0;
  std::vector<float> depth;               // meters, row-major
  std::vector<std::uint8_t> segmentation;  // palette index, 0 = table
  Phase phase = Phase::kPick;
  std::optional<Primitive> held;  // at the hover pose
  std::vector<SceneBox> scene;    // what was rendered, for re-rendering with noise

  float depth_at(int u, int v) const { return depth[static_cast<std::size_t>(v * width + u)]; }
  int seg_at(int u, int v) const { return segmentation[static_cast<std::size_t>(v * width + u)]; }
};

class HeldNotInState : public std::invalid_argument {
 public:
  explicit HeldNotInState(int id);
};

/// The held primitive hovers with its bottom 3U above the table center.
Primitive hover_pose(const Primitive& held);

/// Ray-box z-buffer over the scene boxes and the table plane. In the place
/// phase `held_id` is taken out of the scene and drawn at the hover pose.
Observation render(const WorldState& state, Phase phase, std::optional<int> held_id = std::nullopt,
                   const CameraModel& camera = {});
Observation render_boxes(const std::vector<SceneBox>& boxes, const CameraModel& camera = {});

/// Distance along the unit ray to the box, if it is hit in front of the origin.
std::optional<double> ray_box(const Vec3& origin, const Vec3& dir, const Box& box);

struct AugmentConfig {
  double bernoulli_p = 0.0;   // chance of dropping a segmentation pixel to 0
  double extent_noise = 0.0;  // box extents scaled by a factor in [1 - e, 1 + e]
};

/// Extent jitter re-renders the stored scene; Bernoulli noise then acts on
/// the segmentation only.
Observation augment(const Observation& obs, double bernoulli_p, double extent_noise, std::uint64_t seed,
                    const CameraModel& camera = {});
inline Observation augment(const Observation& obs, const AugmentConfig& cfg, std::uint64_t seed,
                           const CameraModel& camera = {}) {
  return augment(obs, cfg.bernoulli_p, cfg.extent_noise, seed, camera);
}

/// `<stem>_depth.f32` and `<stem>_seg.u8`, each with a JSON sidecar.
struct ObservationFiles {
  std::filesystem::path depth;
  std::filesystem::path seg;
};
ObservationFiles write_observation(const Observation& obs, const std::filesystem::path& stem,
                                   const CameraModel& camera, const nlohmann::ordered_json& extra = {});

}  // namespace assembly
