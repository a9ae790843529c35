#include "assembly/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "assembly/io.hpp"

namespace assembly {

bool near(const Vec3& a, const Vec3& b, double tol) {
  return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol && std::abs(a.z - b.z) <= tol;
}

namespace {

double overlap_1d(double a_lo, double a_hi, double b_lo, double b_hi) {
  return std::min(a_hi, b_hi) - std::max(a_lo, b_lo);
}

}  // namespace

bool interiors_overlap(const Box& a, const Box& b) {
  return overlap_1d(a.lo.x, a.hi.x, b.lo.x, b.hi.x) > kEps &&
         overlap_1d(a.lo.y, a.hi.y, b.lo.y, b.hi.y) > kEps &&
         overlap_1d(a.lo.z, a.hi.z, b.lo.z, b.hi.z) > kEps;
}

bool footprints_overlap(const Box& a, const Box& b) {
  return overlap_1d(a.lo.x, a.hi.x, b.lo.x, b.hi.x) > kEps &&
         overlap_1d(a.lo.y, a.hi.y, b.lo.y, b.hi.y) > kEps;
}

double footprint_intersection_area(const Box& a, const Box& b) {
  const double dx = overlap_1d(a.lo.x, a.hi.x, b.lo.x, b.hi.x);
  const double dy = overlap_1d(a.lo.y, a.hi.y, b.lo.y, b.hi.y);
  return (dx > 0.0 && dy > 0.0) ? dx * dy : 0.0;
}

std::string_view to_string(Orientation o) {
  switch (o) {
    case Orientation::kAlongX: return "x";
    case Orientation::kAlongY: return "y";
    case Orientation::kAlongZ: return "z";
  }
  return "?";
}

Orientation orientation_from_string(std::string_view s) {
  if (s == "x") return Orientation::kAlongX;
  if (s == "y") return Orientation::kAlongY;
  if (s == "z") return Orientation::kAlongZ;
  throw std::invalid_argument("unknown orientation '" + std::string(s) + "'");
}

const std::array<PaletteEntry, kPaletteSize>& palette() {
  static const std::array<PaletteEntry, kPaletteSize> entries = {{
      {"table", {0.55, 0.45, 0.35}},
      {"green", {0.10, 0.70, 0.20}},
      {"yellow", {0.95, 0.85, 0.10}},
      {"red", {0.85, 0.15, 0.10}},
      {"blue", {0.15, 0.30, 0.85}},
      {"grey", {0.50, 0.50, 0.50}},
      {"orange", {0.95, 0.55, 0.10}},
      {"purple", {0.55, 0.20, 0.70}},
  }};
  return entries;
}

int palette_index(std::string_view name) {
  const auto& p = palette();
  for (int i = 0; i < kPaletteSize; ++i) {
    if (p[i].name == name) return i;
  }
  throw std::invalid_argument("unknown palette color '" + std::string(name) + "'");
}

std::vector<Cell> Site::reserved_cells() const {
  std::vector<Cell> cells = anchors;
  if (bridge && anchors.size() >= 2) {
    const Cell a = std::min(anchors[0], anchors[1]);
    const Cell b = std::max(anchors[0], anchors[1]);
    for (int x = a.x + 1; x < b.x; ++x) cells.push_back({x, a.y});
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

bool Site::is_reserved(Cell c) const {
  const auto cells = reserved_cells();
  return std::binary_search(cells.begin(), cells.end(), c);
}

Vec3 Site::bridge_center() const {
  if (anchors.size() < 2) return {};
  const Vec3 a = anchors[0].center();
  const Vec3 b = anchors[1].center();
  return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0, 0.0};
}

Vec3 oriented_extents(int length, Orientation o) {
  const double l = static_cast<double>(length);
  switch (o) {
    case Orientation::kAlongX: return {l, 1.0, 1.0};
    case Orientation::kAlongY: return {1.0, l, 1.0};
    case Orientation::kAlongZ: return {1.0, 1.0, l};
  }
  return {l, 1.0, 1.0};
}

Vec3 Primitive::extents() const { return oriented_extents(length, orientation); }

Box Primitive::box() const {
  const Vec3 h = 0.5 * extents();
  return {position - h, position + h};
}

std::array<double, 12> Primitive::features() const {
  const Vec3 e = extents();
  const auto& rgb = palette()[static_cast<std::size_t>(color)].rgb;
  return {position.x, position.y, position.z,
          orientation == Orientation::kAlongX ? 1.0 : 0.0,
          orientation == Orientation::kAlongY ? 1.0 : 0.0,
          orientation == Orientation::kAlongZ ? 1.0 : 0.0,
          rgb[0], rgb[1], rgb[2], e.x, e.y, e.z};
}

bool same_action(const AssemblyAction& a, const AssemblyAction& b, double tol) {
  return a.pick_id == b.pick_id && a.orientation == b.orientation &&
         near(a.place_position, b.place_position, tol);
}

std::string_view to_string(ActionErrorCode code) {
  switch (code) {
    case ActionErrorCode::kUnknownPrimitive: return "UnknownPrimitive";
    case ActionErrorCode::kPickBlocked: return "PickBlocked";
    case ActionErrorCode::kPlacementCollision: return "PlacementCollision";
    case ActionErrorCode::kPlacementUnsupported: return "PlacementUnsupported";
    case ActionErrorCode::kOutOfWorkspace: return "OutOfWorkspace";
  }
  return "ActionError";
}

ActionError::ActionError(ActionErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

WorldState::WorldState(std::vector<Primitive> primitives, Site site)
    : primitives_(std::move(primitives)), site_(std::move(site)) {
  std::sort(primitives_.begin(), primitives_.end(),
            [](const Primitive& a, const Primitive& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < primitives_.size(); ++i) {
    if (primitives_[i].id == primitives_[i - 1].id) {
      throw std::invalid_argument("duplicate primitive id " + std::to_string(primitives_[i].id));
    }
  }
  for (auto& p : primitives_) {
    if (p.length < 1 || p.length > 3) {
      throw std::invalid_argument("primitive length must be 1, 2 or 3");
    }
    if (p.length == 1) p.orientation = Orientation::kAlongX;
  }
}

const Primitive* WorldState::find(int id) const {
  auto it = std::lower_bound(primitives_.begin(), primitives_.end(), id,
                             [](const Primitive& p, int v) { return p.id < v; });
  return (it != primitives_.end() && it->id == id) ? &*it : nullptr;
}

bool WorldState::is_loose(const Primitive& p) const {
  if (std::abs(p.z_bottom()) > kEps) return false;
  const Box b = p.box();
  for (const Cell& c : site_.reserved_cells()) {
    const Box cell{{double(c.x), double(c.y), 0.0}, {c.x + 1.0, c.y + 1.0, 1.0}};
    if (footprints_overlap(b, cell)) return false;
  }
  return true;
}

bool WorldState::is_blocked(const Primitive& p) const {
  const Box b = p.box();
  for (const auto& q : primitives_) {
    if (q.id == p.id) continue;
    const Box qb = q.box();
    if (footprints_overlap(b, qb) && qb.lo.z >= b.hi.z - kEps) return true;
  }
  return false;
}

bool WorldState::cell_free(Cell c) const {
  const Box cell{{double(c.x), double(c.y), 0.0}, {c.x + 1.0, c.y + 1.0, 1.0}};
  for (const auto& p : primitives_) {
    if (footprints_overlap(p.box(), cell)) return false;
  }
  return true;
}

std::vector<Cell> WorldState::free_cells() const {
  std::vector<Cell> out;
  for (int y = 0; y < kGridCells; ++y) {
    for (int x = 0; x < kGridCells; ++x) {
      if (cell_free({x, y})) out.push_back({x, y});
    }
  }
  return out;
}

std::vector<int> WorldState::supported_by(const Primitive& p) const {
  std::vector<int> out;
  const Box b = p.box();
  for (const auto& q : primitives_) {
    if (q.id == p.id) continue;
    const Box qb = q.box();
    if (std::abs(qb.lo.z - b.hi.z) <= kEps && footprints_overlap(b, qb)) out.push_back(q.id);
  }
  return out;
}

std::vector<int> WorldState::supporters(const Primitive& p) const {
  std::vector<int> out;
  const Box b = p.box();
  if (std::abs(b.lo.z) <= kEps) return out;
  for (const auto& q : primitives_) {
    if (q.id == p.id) continue;
    const Box qb = q.box();
    if (std::abs(qb.hi.z - b.lo.z) <= kEps && footprints_overlap(b, qb)) out.push_back(q.id);
  }
  return out;
}

int WorldState::structure_count() const {
  int n = 0;
  for (const auto& p : primitives_) n += is_loose(p) ? 0 : 1;
  return n;
}

WorldState WorldState::with_primitive(const Primitive& p) const {
  WorldState out = *this;
  auto it = std::lower_bound(out.primitives_.begin(), out.primitives_.end(), p.id,
                             [](const Primitive& q, int v) { return q.id < v; });
  if (it != out.primitives_.end() && it->id == p.id) {
    *it = p;
  } else {
    out.primitives_.insert(it, p);
  }
  return out;
}

WorldState WorldState::without(int id) const {
  WorldState out = *this;
  std::erase_if(out.primitives_, [id](const Primitive& p) { return p.id == id; });
  return out;
}

namespace {

Primitive moved_primitive(const Primitive& p, const AssemblyAction& action) {
  Primitive moved = p;
  moved.position = action.place_position;
  moved.orientation = p.length == 1 ? Orientation::kAlongX : action.orientation;
  return moved;
}

std::optional<std::pair<ActionErrorCode, std::string>> validate(const WorldState& state,
                                                                const AssemblyAction& action) {
  const Primitive* p = state.find(action.pick_id);
  if (p == nullptr) {
    return std::pair{ActionErrorCode::kUnknownPrimitive,
                     "no primitive with id " + std::to_string(action.pick_id)};
  }
  if (state.is_blocked(*p)) {
    return std::pair{ActionErrorCode::kPickBlocked,
                     "primitive " + std::to_string(p->id) + " has something on top"};
  }
  const Primitive moved = moved_primitive(*p, action);
  const Box b = moved.box();
  if (b.lo.x < -kEps || b.lo.y < -kEps || b.lo.z < -kEps || b.hi.x > kGridCells + kEps ||
      b.hi.y > kGridCells + kEps || b.hi.z > kMaxHeight + kEps) {
    return std::pair{ActionErrorCode::kOutOfWorkspace, "target box leaves the workspace"};
  }
  // Contact patches with tops at our bottom face; the center of mass must lie
  // strictly inside their bounding rectangle.
  Box contact{{1e9, 1e9, 0.0}, {-1e9, -1e9, 0.0}};
  for (const auto& q : state.primitives()) {
    if (q.id == p->id) continue;
    const Box qb = q.box();
    if (interiors_overlap(b, qb)) {
      return std::pair{ActionErrorCode::kPlacementCollision,
                       "target overlaps primitive " + std::to_string(q.id)};
    }
    if (std::abs(qb.hi.z - b.lo.z) <= kEps && footprints_overlap(b, qb)) {
      contact.lo.x = std::min(contact.lo.x, std::max(b.lo.x, qb.lo.x));
      contact.lo.y = std::min(contact.lo.y, std::max(b.lo.y, qb.lo.y));
      contact.hi.x = std::max(contact.hi.x, std::min(b.hi.x, qb.hi.x));
      contact.hi.y = std::max(contact.hi.y, std::min(b.hi.y, qb.hi.y));
    }
  }
  if (std::abs(b.lo.z) > kEps) {
    const Vec3& c = moved.position;
    const bool stable = c.x > contact.lo.x + kEps && c.x < contact.hi.x - kEps &&
                        c.y > contact.lo.y + kEps && c.y < contact.hi.y - kEps;
    if (!stable) {
      return std::pair{ActionErrorCode::kPlacementUnsupported,
                       "center of mass not over the contact area at z=" + std::to_string(b.lo.z)};
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<ActionErrorCode> check_action(const WorldState& state, const AssemblyAction& action) {
  auto err = validate(state, action);
  if (err) return err->first;
  return std::nullopt;
}

WorldState apply_action(const WorldState& state, const AssemblyAction& action) {
  if (auto err = validate(state, action)) throw ActionError(err->first, err->second);
  return state.with_primitive(moved_primitive(*state.find(action.pick_id), action));
}

std::vector<int> non_blocked(const WorldState& state) {
  std::vector<int> out;
  for (const auto& p : state.primitives()) {
    if (!state.is_blocked(p)) out.push_back(p.id);
  }
  return out;
}

std::vector<int> disassemblable(const WorldState& state) {
  std::vector<int> out;
  for (const auto& p : state.primitives()) {
    if (!state.is_loose(p) && !state.is_blocked(p)) out.push_back(p.id);
  }
  return out;
}

std::vector<TablePose> free_table_poses(const WorldState& state, int length, int ignore_id) {
  std::vector<bool> blocked(kGridCells * kGridCells, false);
  for (const Cell& c : state.site().reserved_cells()) {
    if (c.x >= 0 && c.y >= 0 && c.x < kGridCells && c.y < kGridCells) blocked[c.y * kGridCells + c.x] = true;
  }
  for (const auto& p : state.primitives()) {
    if (p.id == ignore_id) continue;
    const Box b = p.box();
    const int x0 = std::max(0, static_cast<int>(std::floor(b.lo.x + kEps)));
    const int x1 = std::min(kGridCells, static_cast<int>(std::ceil(b.hi.x - kEps)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.lo.y + kEps)));
    const int y1 = std::min(kGridCells, static_cast<int>(std::ceil(b.hi.y - kEps)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) blocked[y * kGridCells + x] = true;
    }
  }
  std::vector<TablePose> out;
  for (Orientation o : kAllOrientations) {
    if (length == 1 && o != Orientation::kAlongX) continue;
    const Vec3 e = oriented_extents(length, o);
    const int w = static_cast<int>(e.x);
    const int d = static_cast<int>(e.y);
    for (int y = 0; y + d <= kGridCells; ++y) {
      for (int x = 0; x + w <= kGridCells; ++x) {
        bool ok = true;
        for (int dy = 0; dy < d && ok; ++dy) {
          for (int dx = 0; dx < w && ok; ++dx) ok = !blocked[(y + dy) * kGridCells + x + dx];
        }
        if (ok) out.push_back({{x + e.x / 2.0, y + e.y / 2.0, e.z / 2.0}, o});
      }
    }
  }
  return out;
}

namespace {

// Candidate (footprint center xy, z_bottom) targets in `rest`: tops of stacks,
// empty anchors, and the bridge slot when both pillar tops are level.
std::vector<Vec3> placement_targets(const WorldState& rest) {
  std::vector<Vec3> targets;
  for (const auto& q : rest.primitives()) {
    if (rest.is_blocked(q)) continue;
    targets.push_back({q.position.x, q.position.y, q.z_top()});
  }
  const Site& site = rest.site();
  std::vector<double> anchor_tops;
  for (const Cell& a : site.anchors) {
    const Box column{{double(a.x), double(a.y), 0.0}, {a.x + 1.0, a.y + 1.0, kMaxHeight}};
    double top = 0.0;
    bool occupied = false;
    for (const auto& q : rest.primitives()) {
      const Box qb = q.box();
      if (footprints_overlap(qb, column)) {
        occupied = true;
        top = std::max(top, qb.hi.z);
      }
    }
    if (!occupied) targets.push_back(a.center(0.0));
    anchor_tops.push_back(occupied ? top : 0.0);
  }
  if (site.bridge && anchor_tops.size() >= 2 && anchor_tops[0] > kEps &&
      std::abs(anchor_tops[0] - anchor_tops[1]) <= kEps) {
    Vec3 c = site.bridge_center();
    c.z = anchor_tops[0];
    targets.push_back(c);
  }
  std::sort(targets.begin(), targets.end(), [](const Vec3& a, const Vec3& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
  });
  targets.erase(std::unique(targets.begin(), targets.end(),
                            [](const Vec3& a, const Vec3& b) { return near(a, b); }),
                targets.end());
  return targets;
}

}  // namespace

std::vector<AssemblyAction> enumerate_actions(const WorldState& state) {
  std::vector<AssemblyAction> out;
  for (int id : non_blocked(state)) {
    const Primitive& p = *state.find(id);
    const WorldState rest = state.without(id);
    for (const Vec3& t : placement_targets(rest)) {
      for (Orientation o : kAllOrientations) {
        if (p.length == 1 && o != Orientation::kAlongX) continue;
        const double h = oriented_extents(p.length, o).z;
        AssemblyAction a{id, {t.x, t.y, t.z + h / 2.0}, o};
        if (o == p.orientation && near(a.place_position, p.position)) continue;  // no-op
        if (!check_action(state, a)) out.push_back(a);
      }
    }
  }
  return out;
}

namespace {

int quantize(double v) { return static_cast<int>(std::lround(v * 100.0)); }

}  // namespace

CanonicalKey canonical_key(const WorldState& state) {
  CanonicalKey key;
  for (const auto& p : state.primitives()) {
    if (state.is_loose(p)) {
      key.loose.push_back({p.length, p.color});
    } else {
      const Vec3 e = p.extents();
      key.structure.push_back({static_cast<int>(e.x), static_cast<int>(e.y), static_cast<int>(e.z),
                               p.color, static_cast<int>(p.orientation), quantize(p.position.x),
                               quantize(p.position.y), quantize(p.position.z)});
    }
  }
  std::sort(key.structure.begin(), key.structure.end());
  std::sort(key.loose.begin(), key.loose.end());
  return key;
}

std::string CanonicalKey::str() const {
  std::ostringstream os;
  os << 'S';
  for (const auto& s : structure) {
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
  }
  os << "|L";
  for (const auto& l : loose) os << '[' << l[0] << ',' << l[1] << ']';
  return os.str();
}

namespace {

nlohmann::ordered_json vec_json(const Vec3& v) { return {v.x, v.y, v.z}; }

Vec3 vec_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

nlohmann::ordered_json to_json(const WorldState& state) {
  nlohmann::ordered_json prims = nlohmann::ordered_json::array();
  for (const auto& p : state.primitives()) {
    nlohmann::ordered_json jp;
    jp["id"] = p.id;
    jp["extents"] = vec_json(p.extents());
    jp["color"] = palette()[static_cast<std::size_t>(p.color)].name;
    jp["position"] = vec_json(p.position);
    jp["orientation"] = to_string(p.orientation);
    prims.push_back(std::move(jp));
  }
  nlohmann::ordered_json anchors = nlohmann::ordered_json::array();
  for (const Cell& c : state.site().anchors) anchors.push_back({c.x, c.y});
  nlohmann::ordered_json j;
  j["primitives"] = std::move(prims);
  j["workspace"] = {{"cells", {kGridCells, kGridCells}},
                    {"unit_cm", kUnitMeters * 100.0},
                    {"anchors", std::move(anchors)},
                    {"bridge", state.site().bridge}};
  return j;
}

std::string to_json_string(const WorldState& state) { return dump_fixed(to_json(state)); }

nlohmann::ordered_json to_json(const AssemblyAction& action) {
  nlohmann::ordered_json j;
  j["pick_id"] = action.pick_id;
  j["place_position"] = vec_json(action.place_position);
  j["orientation"] = to_string(action.orientation);
  return j;
}

WorldState world_from_json(const nlohmann::json& j) {
  std::vector<Primitive> prims;
  for (const auto& jp : j.at("primitives")) {
    Primitive p;
    p.id = jp.at("id").get<int>();
    const Vec3 e = vec_from_json(jp.at("extents"));
    p.length = static_cast<int>(std::lround(std::max({e.x, e.y, e.z})));
    p.color = palette_index(jp.at("color").get<std::string>());
    p.position = vec_from_json(jp.at("position"));
    p.orientation = orientation_from_string(jp.at("orientation").get<std::string>());
    if (!near(oriented_extents(p.length, p.orientation), e) &&
        !(p.length == 1 && near(e, {1, 1, 1}))) {
      throw std::invalid_argument("extents do not match orientation for primitive " +
                                  std::to_string(p.id));
    }
    prims.push_back(p);
  }
  Site site;
  if (j.contains("workspace")) {
    const auto& ws = j.at("workspace");
    if (ws.contains("anchors")) {
      for (const auto& a : ws.at("anchors")) site.anchors.push_back({a.at(0).get<int>(), a.at(1).get<int>()});
    }
    site.bridge = ws.value("bridge", false);
  }
  return WorldState(std::move(prims), std::move(site));
}

AssemblyAction action_from_json(const nlohmann::json& j) {
  return {j.at("pick_id").get<int>(), vec_from_json(j.at("place_position")),
          orientation_from_string(j.at("orientation").get<std::string>())};
}

}  // namespace assembly
