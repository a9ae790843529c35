#include "assembly/observation.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "assembly/io.hpp"

namespace assembly {

namespace {

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  return (1.0 / n) * v;
}

Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

struct Frame {
  Vec3 forward, right, up;
};

Frame frame_of(const CameraModel& c) {
  Frame f;
  f.forward = normalized(c.target - c.eye);
  f.right = normalized(cross(f.forward, {0, 0, 1}));
  f.up = cross(f.right, f.forward);
  return f;
}

// Uniform in [0, 1) from the top 53 bits, so noise does not depend on the
// standard library's distribution implementations.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Vec3 CameraModel::ray(int u, int v) const {
  const Frame f = frame_of(*this);
  const double xc = (u - cx) / fx;
  const double yc = (v - cy) / fy;
  return normalized(f.forward + xc * f.right + (-yc) * f.up);
}

std::pair<double, double> CameraModel::project(const Vec3& point_u) const {
  const Frame f = frame_of(*this);
  const Vec3 p = point_u - eye;
  const double z = dot(p, f.forward);
  return {cx + fx * dot(p, f.right) / z, cy - fy * dot(p, f.up) / z};
}

nlohmann::ordered_json to_json(const CameraModel& c) {
  nlohmann::ordered_json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["eye_u"] = {c.eye.x, c.eye.y, c.eye.z};
  j["target_u"] = {c.target.x, c.target.y, c.target.z};
  j["depth"] = "range along the pixel ray, meters";
  return j;
}

CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  const auto& e = j.at("eye_u");
  const auto& t = j.at("target_u");
  c.eye = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
  c.target = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
  return c;
}

std::string_view to_string(Phase p) { return p == Phase::kPick ? "pick" : "place"; }

Phase phase_from_string(std::string_view s) {
  if (s == "pick") return Phase::kPick;
  if (s == "place") return Phase::kPlace;
  throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

HeldNotInState::HeldNotInState(int id)
    : std::invalid_argument("HeldNotInState: primitive " + std::to_string(id) + " is not in the state") {}

Primitive hover_pose(const Primitive& held) {
  Primitive p = held;
  p.position = {kGridCells / 2.0, kGridCells / 2.0, 3.0 + p.extents().z / 2.0};
  return p;
}

std::optional<double> ray_box(const Vec3& o, const Vec3& d, const Box& b) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const double os[3] = {o.x, o.y, o.z};
  const double ds[3] = {d.x, d.y, d.z};
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z};
  const double hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (ds[a] == 0.0) {
      if (os[a] < lo[a] || os[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - os[a]) / ds[a];
    double tb = (hi[a] - os[a]) / ds[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 <= 0.0) return std::nullopt;
  return t0 > 0.0 ? t0 : t1;
}

Observation render_boxes(const std::vector<SceneBox>& boxes, const CameraModel& camera) {
  Observation obs;
  obs.width = camera.width;
  obs.height = camera.height;
  obs.depth.assign(static_cast<std::size_t>(camera.width * camera.height), kFarDepth);
  obs.segmentation.assign(obs.depth.size(), static_cast<std::uint8_t>(color::kTable));
  obs.scene = boxes;
  const Vec3 eye = camera.eye;
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const Vec3 d = camera.ray(u, v);
      double best = std::numeric_limits<double>::infinity();
      int seg = color::kTable;
      if (d.z < 0.0) best = -eye.z / d.z;  // table plane z = 0
      for (const auto& b : boxes) {
        const auto t = ray_box(eye, d, b.box);
        if (t && *t < best) {
          best = *t;
          seg = b.color;
        }
      }
      const std::size_t i = static_cast<std::size_t>(v * camera.width + u);
      if (std::isfinite(best)) obs.depth[i] = static_cast<float>(best * kUnitMeters);
      obs.segmentation[i] = static_cast<std::uint8_t>(seg);
    }
  }
  return obs;
}

Observation render(const WorldState& state, Phase phase, std::optional<int> held_id, const CameraModel& camera) {
  std::vector<SceneBox> boxes;
  std::optional<Primitive> held;
  if (held_id) {
    const Primitive* p = state.find(*held_id);
    if (p == nullptr) throw HeldNotInState(*held_id);
    held = hover_pose(*p);
  }
  for (const auto& p : state.primitives()) {
    if (held_id && p.id == *held_id) continue;
    boxes.push_back({p.box(), p.color});
  }
  if (held) boxes.push_back({held->box(), held->color});
  Observation obs = render_boxes(boxes, camera);
  obs.phase = phase;
  obs.held = held;
  return obs;
}

Observation augment(const Observation& obs, double bernoulli_p, double extent_noise, std::uint64_t seed,
                    const CameraModel& camera) {
  if (!(bernoulli_p >= 0.0 && bernoulli_p < 1.0)) throw std::invalid_argument("bernoulli_p must be in [0, 1)");
  std::mt19937_64 rng(seed);
  Observation out = obs;
  if (extent_noise > 0.0) {
    std::vector<SceneBox> boxes = obs.scene;
    for (auto& b : boxes) {
      const Vec3 c = 0.5 * (b.box.lo + b.box.hi);
      Vec3 half = 0.5 * (b.box.hi - b.box.lo);
      half.x *= 1.0 + extent_noise * (2.0 * unit(rng) - 1.0);
      half.y *= 1.0 + extent_noise * (2.0 * unit(rng) - 1.0);
      half.z *= 1.0 + extent_noise * (2.0 * unit(rng) - 1.0);
      b.box = {c - half, c + half};
    }
    out = render_boxes(boxes, camera);
    out.phase = obs.phase;
    out.held = obs.held;
    out.scene = obs.scene;
  }
  if (bernoulli_p > 0.0) {
    for (auto& s : out.segmentation) {
      if (unit(rng) < bernoulli_p) s = static_cast<std::uint8_t>(color::kTable);
    }
  }
  return out;
}

ObservationFiles write_observation(const Observation& obs, const std::filesystem::path& stem,
                                   const CameraModel& camera, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json meta = extra;
  meta["phase"] = std::string(to_string(obs.phase));
  meta["camera"] = to_json(camera);
  if (obs.held) meta["held_id"] = obs.held->id;
  ObservationFiles files{stem.string() + "_depth.f32", stem.string() + "_seg.u8"};
  write_tensor(files.depth, std::span<const float>(obs.depth), {obs.height, obs.width}, meta);
  write_tensor(files.seg, std::span<const std::uint8_t>(obs.segmentation), {obs.height, obs.width}, meta);
  return files;
}

}  // namespace assembly
