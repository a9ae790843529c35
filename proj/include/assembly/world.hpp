#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace assembly {

inline constexpr double kEps = 1e-6;
inline constexpr int kGridCells = 16;       // table is kGridCells x kGridCells cells of 1U
inline constexpr double kMaxHeight = 16.0;  // U
inline constexpr double kUnitMeters = 0.045;
inline constexpr int kMaxPrimitives = 9;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  bool operator==(const Vec3&) const = default;
};

bool near(const Vec3& a, const Vec3& b, double tol = kEps);

struct Box {
  Vec3 lo;
  Vec3 hi;
};

/// Interiors intersect (touching faces do not count).
bool interiors_overlap(const Box& a, const Box& b);
/// Footprints (xy projections) have a common interior.
bool footprints_overlap(const Box& a, const Box& b);
double footprint_intersection_area(const Box& a, const Box& b);

/// Direction of the long axis. Cubes always use kAlongX.
enum class Orientation : std::uint8_t { kAlongX = 0, kAlongY = 1, kAlongZ = 2 };
inline constexpr std::array<Orientation, 3> kAllOrientations = {
    Orientation::kAlongX, Orientation::kAlongY, Orientation::kAlongZ};

std::string_view to_string(Orientation o);
Orientation orientation_from_string(std::string_view s);

// Named palette. Index 0 is reserved for the table / background.
struct PaletteEntry {
  std::string_view name;
  std::array<double, 3> rgb;
};
inline constexpr int kPaletteSize = 8;
const std::array<PaletteEntry, kPaletteSize>& palette();
int palette_index(std::string_view name);
namespace color {
inline constexpr int kTable = 0;
inline constexpr int kGreen = 1;
inline constexpr int kYellow = 2;
inline constexpr int kRed = 3;
inline constexpr int kBlue = 4;
inline constexpr int kGrey = 5;
inline constexpr int kOrange = 6;
inline constexpr int kPurple = 7;
}  // namespace color

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
  Vec3 center(double z = 0.0) const { return {x + 0.5, y + 0.5, z}; }
};

/// Task-dependent table layout: anchor cells where structures must stand
/// and an optional bridge slot spanning the first two anchors.
struct Site {
  std::vector<Cell> anchors;
  bool bridge = false;

  /// Anchors plus the bridge gap cells. Loose primitives never use them.
  std::vector<Cell> reserved_cells() const;
  bool is_reserved(Cell c) const;
  /// xy of the bridge bar center (midpoint of the first two anchor centers).
  Vec3 bridge_center() const;
  bool operator==(const Site&) const = default;
};

struct Primitive {
  int id = 0;
  int length = 1;  // 1 = cube, 2 / 3 = beams
  int color = color::kRed;
  Vec3 position;   // box center in U
  Orientation orientation = Orientation::kAlongX;

  /// Oriented (w, d, h) extents.
  Vec3 extents() const;
  Box box() const;
  double z_bottom() const { return position.z - extents().z / 2.0; }
  double z_top() const { return position.z + extents().z / 2.0; }
  /// 3 position + 3 orientation one-hot + 3 color + 3 extents.
  std::array<double, 12> features() const;
};

Vec3 oriented_extents(int length, Orientation o);

/// Primitive id + target center + orientation class.
struct AssemblyAction {
  int pick_id = 0;
  Vec3 place_position;
  Orientation orientation = Orientation::kAlongX;

  bool operator==(const AssemblyAction&) const = default;
};
bool same_action(const AssemblyAction& a, const AssemblyAction& b, double tol = kEps);

enum class ActionErrorCode {
  kUnknownPrimitive,
  kPickBlocked,
  kPlacementCollision,
  kPlacementUnsupported,
  kOutOfWorkspace,
};
std::string_view to_string(ActionErrorCode code);

class ActionError : public std::runtime_error {
 public:
  ActionError(ActionErrorCode code, const std::string& what);
  ActionErrorCode code() const { return code_; }

 private:
  ActionErrorCode code_;
};

class WorldState {
 public:
  WorldState() = default;
  WorldState(std::vector<Primitive> primitives, Site site);

  const std::vector<Primitive>& primitives() const { return primitives_; }
  const Site& site() const { return site_; }
  std::size_t size() const { return primitives_.size(); }
  bool empty() const { return primitives_.empty(); }

  const Primitive* find(int id) const;
  /// On the table surface and outside the reserved structure cells.
  bool is_loose(const Primitive& p) const;
  bool is_blocked(const Primitive& p) const;
  /// Cells whose column is not touched by any primitive footprint.
  bool cell_free(Cell c) const;
  std::vector<Cell> free_cells() const;
  /// Ids of primitives resting directly on p.
  std::vector<int> supported_by(const Primitive& p) const;
  /// Ids of primitives p rests on (empty for table primitives).
  std::vector<int> supporters(const Primitive& p) const;
  int structure_count() const;

  WorldState with_primitive(const Primitive& p) const;  // replaces by id
  WorldState without(int id) const;

 private:
  std::vector<Primitive> primitives_;  // sorted by id
  Site site_;
};

/// Deterministic transition. Throws ActionError naming the violated precondition.
WorldState apply_action(const WorldState& state, const AssemblyAction& action);
/// Precondition check without constructing the successor.
std::optional<ActionErrorCode> check_action(const WorldState& state, const AssemblyAction& action);

std::vector<int> non_blocked(const WorldState& state);
std::vector<AssemblyAction> enumerate_actions(const WorldState& state);

/// Ids of non-blocked primitives that are part of a structure (not loose).
std::vector<int> disassemblable(const WorldState& state);

/// A loose table pose for a primitive: center (z = h/2) and orientation.
struct TablePose {
  Vec3 center;
  Orientation orientation = Orientation::kAlongX;
};
/// Every grid-aligned table pose whose footprint cells are free and not
/// reserved, ignoring primitive `ignore_id` (the one being moved).
std::vector<TablePose> free_table_poses(const WorldState& state, int length, int ignore_id = -1);

/// Key under the equivalence "differ only in positions of loose primitives".
struct CanonicalKey {
  // (w, d, h, color, orientation, qx, qy, qz) with positions in 0.01U.
  std::vector<std::array<int, 8>> structure;
  // (length, color)
  std::vector<std::array<int, 2>> loose;

  auto operator<=>(const CanonicalKey&) const = default;
  std::string str() const;
};
CanonicalKey canonical_key(const WorldState& state);

// Serialization. Field order is fixed and floats are written with 6 decimals.
std::string to_json_string(const WorldState& state);
nlohmann::ordered_json to_json(const WorldState& state);
nlohmann::ordered_json to_json(const AssemblyAction& action);
WorldState world_from_json(const nlohmann::json& j);
AssemblyAction action_from_json(const nlohmann::json& j);

}  // namespace assembly
