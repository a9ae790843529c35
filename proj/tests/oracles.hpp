#pragma once

// Brute-force reference checks used by the tests. They rasterize primitives
// into 0.5U voxels instead of reasoning about boxes, so they share no code
// path with the library's geometry.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "assembly/observation.hpp"
#include "assembly/shapes.hpp"
#include "assembly/unmake.hpp"
#include "assembly/world.hpp"

namespace oracle {

using assembly::Primitive;
using assembly::WorldState;

inline int half(double v) { return static_cast<int>(std::lround(v * 2.0)); }

struct Voxels {
  // (ix, iy, iz) in half units -> primitive ids covering it
  std::map<std::tuple<int, int, int>, std::vector<int>> cells;
};

inline void box_halves(const Primitive& p, int& x0, int& x1, int& y0, int& y1, int& z0, int& z1) {
  const double w = p.orientation == assembly::Orientation::kAlongX ? p.length : 1;
  const double d = p.orientation == assembly::Orientation::kAlongY ? p.length : 1;
  const double h = p.orientation == assembly::Orientation::kAlongZ ? p.length : 1;
  x0 = half(p.position.x - w / 2);
  x1 = half(p.position.x + w / 2);
  y0 = half(p.position.y - d / 2);
  y1 = half(p.position.y + d / 2);
  z0 = half(p.position.z - h / 2);
  z1 = half(p.position.z + h / 2);
}

inline Voxels voxelize(const WorldState& s) {
  Voxels v;
  for (const auto& p : s.primitives()) {
    int x0, x1, y0, y1, z0, z1;
    box_halves(p, x0, x1, y0, y1, z0, z1);
    for (int x = x0; x < x1; ++x)
      for (int y = y0; y < y1; ++y)
        for (int z = z0; z < z1; ++z) v.cells[{x, y, z}].push_back(p.id);
  }
  return v;
}

/// Empty string when all world invariants hold, else a description.
inline std::string check_world(const WorldState& s) {
  const Voxels v = voxelize(s);
  for (const auto& [k, ids] : v.cells) {
    if (ids.size() > 1) return "overlap";
    auto [x, y, z] = k;
    if (x < 0 || y < 0 || z < 0 || x >= 32 || y >= 32 || z >= 32) return "outside workspace";
  }
  for (const auto& p : s.primitives()) {
    int x0, x1, y0, y1, z0, z1;
    box_halves(p, x0, x1, y0, y1, z0, z1);
    if (z0 == 0) continue;
    // Supported when the center lies strictly inside the bounding rectangle
    // of voxels directly below the bottom face.
    int cx0 = 1 << 20, cx1 = -1, cy0 = 1 << 20, cy1 = -1;
    for (int x = x0; x < x1; ++x)
      for (int y = y0; y < y1; ++y) {
        if (v.cells.count({x, y, z0 - 1}) == 0) continue;
        cx0 = std::min(cx0, x);
        cx1 = std::max(cx1, x + 1);
        cy0 = std::min(cy0, y);
        cy1 = std::max(cy1, y + 1);
      }
    const int mx = x0 + x1;  // twice the center, in half units
    const int my = y0 + y1;
    if (!(2 * cx0 < mx && mx < 2 * cx1 && 2 * cy0 < my && my < 2 * cy1)) {
      return "unsupported primitive " + std::to_string(p.id);
    }
  }
  return "";
}

/// Ids with no voxel of another primitive anywhere above their footprint.
inline std::vector<int> non_blocked(const WorldState& s) {
  const Voxels v = voxelize(s);
  std::vector<int> out;
  for (const auto& p : s.primitives()) {
    int x0, x1, y0, y1, z0, z1;
    box_halves(p, x0, x1, y0, y1, z0, z1);
    bool blocked = false;
    for (int x = x0; x < x1 && !blocked; ++x)
      for (int y = y0; y < y1 && !blocked; ++y)
        for (int z = z1; z < 40 && !blocked; ++z) blocked = v.cells.count({x, y, z}) > 0;
    if (!blocked) out.push_back(p.id);
  }
  return out;
}

inline bool loose(const WorldState& s, const Primitive& p) {
  int x0, x1, y0, y1, z0, z1;
  box_halves(p, x0, x1, y0, y1, z0, z1);
  if (z0 != 0) return false;
  for (const auto& c : s.site().reserved_cells()) {
    for (int x = x0; x < x1; ++x)
      for (int y = y0; y < y1; ++y)
        if (x / 2 == c.x && y / 2 == c.y) return false;
  }
  return true;
}

/// Field-by-field ≈ comparator.
inline bool equivalent(const WorldState& a, const WorldState& b) {
  auto split = [](const WorldState& s) {
    std::multiset<std::tuple<int, int, int, int, int, int, int>> structure;
    std::multiset<std::pair<int, int>> loose_set;
    for (const auto& p : s.primitives()) {
      if (loose(s, p)) {
        loose_set.insert({p.length, p.color});
      } else {
        structure.insert({p.length, static_cast<int>(p.orientation), p.color, half(p.position.x),
                          half(p.position.y), half(p.position.z), 0});
      }
    }
    return std::pair{structure, loose_set};
  };
  return split(a) == split(b);
}

/// Random valid states reached by scattering and random legal moves.
inline WorldState random_state(std::mt19937_64& rng, const assembly::Site& site, int n_prims, int moves) {
  std::uniform_int_distribution<int> len(1, 3);
  std::uniform_int_distribution<int> col(1, assembly::kPaletteSize - 1);
  std::vector<assembly::PieceKind> kinds;
  for (int i = 0; i < n_prims; ++i) kinds.push_back({len(rng), col(rng)});
  WorldState s = assembly::scatter(kinds, WorldState({}, site), rng);
  for (int i = 0; i < moves; ++i) {
    auto actions = assembly::enumerate_actions(s);
    auto dis = assembly::sample_disassembly_actions(s, 1, rng);
    actions.insert(actions.end(), dis.begin(), dis.end());
    if (actions.empty()) break;
    std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
    s = assembly::apply_action(s, actions[pick(rng)]);
  }
  return s;
}

/// Same state with every loose primitive moved to another random free table pose.
inline WorldState reshuffle_loose(const WorldState& s, std::mt19937_64& rng) {
  WorldState out = s;
  for (const auto& p : s.primitives()) {
    if (!loose(s, p)) continue;
    auto poses = assembly::free_table_poses(out, p.length, p.id);
    if (poses.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, poses.size() - 1);
    const auto pose = poses[pick(rng)];
    assembly::Primitive q = p;
    q.position = pose.center;
    q.orientation = pose.orientation;
    out = out.with_primitive(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Renderer oracles: camera rays rebuilt from the declared pose, boxes hit by
// intersecting each of the six face planes separately.

struct Ray {
  assembly::Vec3 origin;  // U
  assembly::Vec3 dir;     // unit
};

inline Ray pixel_ray(const assembly::CameraModel& c, int u, int v) {
  const double fx = c.target.x - c.eye.x, fy = c.target.y - c.eye.y, fz = c.target.z - c.eye.z;
  const double fn = std::sqrt(fx * fx + fy * fy + fz * fz);
  const double f[3] = {fx / fn, fy / fn, fz / fn};
  // right = f x (0,0,1), up = right x f
  double r[3] = {f[1], -f[0], 0.0};
  const double rn = std::sqrt(r[0] * r[0] + r[1] * r[1]);
  r[0] /= rn;
  r[1] /= rn;
  const double up[3] = {r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2], r[0] * f[1] - r[1] * f[0]};
  const double a = (u - c.cx) / c.fx;
  const double b = -(v - c.cy) / c.fy;
  double d[3];
  for (int i = 0; i < 3; ++i) d[i] = f[i] + a * r[i] + b * up[i];
  const double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  return {c.eye, {d[0] / dn, d[1] / dn, d[2] / dn}};
}

/// Meters along the ray to the table plane z = 0.
inline std::optional<double> plane_depth(const Ray& r) {
  if (r.dir.z >= 0) return std::nullopt;
  return -r.origin.z / r.dir.z * assembly::kUnitMeters;
}

/// Meters along the ray to the nearest face of the box.
inline std::optional<double> face_depth(const Ray& r, const assembly::Box& b) {
  const double o[3] = {r.origin.x, r.origin.y, r.origin.z};
  const double d[3] = {r.dir.x, r.dir.y, r.dir.z};
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z};
  const double hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  std::optional<double> best;
  for (int axis = 0; axis < 3; ++axis) {
    if (d[axis] == 0) continue;
    for (double plane : {lo[axis], hi[axis]}) {
      const double t = (plane - o[axis]) / d[axis];
      if (t <= 0) continue;
      bool inside = true;
      for (int k = 0; k < 3; ++k) {
        if (k == axis) continue;
        const double x = o[k] + t * d[k];
        inside = inside && x >= lo[k] - 1e-12 && x <= hi[k] + 1e-12;
      }
      if (inside && (!best || t < *best)) best = t;
    }
  }
  if (best) *best *= assembly::kUnitMeters;
  return best;
}

}  // namespace oracle
