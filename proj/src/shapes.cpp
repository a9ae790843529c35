#include "assembly/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace assembly {

UnsupportedHeight::UnsupportedHeight(int h)
    : std::invalid_argument("UnsupportedHeight: arch height " + std::to_string(h) +
                            " (supported: 3, 4, 5)") {}

std::vector<int> CategoryInstance::sorted_lengths() const {
  std::vector<int> out;
  for (const auto& p : pieces) out.push_back(p.length);
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::ordered_json to_json(const CategoryInstance& instance) {
  nlohmann::ordered_json pieces = nlohmann::ordered_json::array();
  for (const auto& p : instance.pieces) {
    nlohmann::ordered_json jp;
    jp["extents"] = {oriented_extents(p.length, p.orientation).x,
                     oriented_extents(p.length, p.orientation).y,
                     oriented_extents(p.length, p.orientation).z};
    jp["orientation"] = to_string(p.orientation);
    jp["position"] = {p.position.x, p.position.y, p.position.z};
    jp["color"] = palette()[static_cast<std::size_t>(p.color)].name;
    pieces.push_back(std::move(jp));
  }
  nlohmann::ordered_json j;
  j["id"] = instance.id;
  j["pieces"] = std::move(pieces);
  return j;
}

CategoryInstance instance_from_json(const nlohmann::json& j) {
  CategoryInstance inst;
  inst.id = j.at("id").get<std::string>();
  for (const auto& jp : j.at("pieces")) {
    PiecePose p;
    const auto& e = jp.at("extents");
    p.length = static_cast<int>(std::lround(
        std::max({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()})));
    p.orientation = orientation_from_string(jp.at("orientation").get<std::string>());
    const auto& pos = jp.at("position");
    p.position = {pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>()};
    p.color = palette_index(jp.at("color").get<std::string>());
    inst.pieces.push_back(p);
  }
  return inst;
}

std::vector<std::vector<int>> compositions(int total) {
  if (total < 0) return {};
  if (total == 0) return {{}};
  std::vector<std::vector<int>> out;
  for (int part = 1; part <= 3 && part <= total; ++part) {
    for (auto rest : compositions(total - part)) {
      rest.insert(rest.begin(), part);
      out.push_back(std::move(rest));
    }
  }
  return out;
}

int arch_piece_color(int length) {
  switch (length) {
    case 1: return color::kRed;
    case 2: return color::kYellow;
    default: return color::kBlue;
  }
}

int tower_color(int level) {
  if (level == 0) return color::kGreen;
  return (level % 2 == 1) ? color::kYellow : color::kRed;
}

namespace {

Box cell_column(Cell c) {
  return {{double(c.x), double(c.y), 0.0}, {c.x + 1.0, c.y + 1.0, kMaxHeight}};
}

bool footprint_is_cell(const Primitive& p, Cell c) {
  const Box b = p.box();
  return std::abs(b.lo.x - c.x) <= kEps && std::abs(b.lo.y - c.y) <= kEps &&
         std::abs(b.hi.x - (c.x + 1)) <= kEps && std::abs(b.hi.y - (c.y + 1)) <= kEps;
}

// Primitives standing in the anchor column, bottom-up, if they form a
// contiguous 1x1 stack from the table. Empty optional when malformed.
std::optional<std::vector<const Primitive*>> column_stack(const WorldState& state, Cell c) {
  std::vector<const Primitive*> col;
  for (const auto& p : state.primitives()) {
    if (footprints_overlap(p.box(), cell_column(c))) col.push_back(&p);
  }
  std::sort(col.begin(), col.end(),
            [](const Primitive* a, const Primitive* b) { return a->position.z < b->position.z; });
  double z = 0.0;
  for (const Primitive* p : col) {
    if (!footprint_is_cell(*p, c) || std::abs(p->z_bottom() - z) > kEps) return std::nullopt;
    z = p->z_top();
  }
  return col;
}

std::string arch_id(int height, const std::vector<int>& left, const std::vector<int>& right) {
  std::string id = "arch" + std::to_string(height) + ":L";
  for (int l : left) id += std::to_string(l);
  id += "-R";
  for (int l : right) id += std::to_string(l);
  return id;
}

}  // namespace

bool classify_arch(const WorldState& state, const ArchSpec& spec, ArchVariant variant) {
  if (state.empty()) return false;
  const double pillar_h = spec.height - 1.0;
  const Site site = spec.site();
  Vec3 bar_center = site.bridge_center();
  bar_center.z = pillar_h + 0.5;

  const Primitive* bar = nullptr;
  std::vector<const Primitive*> region;
  for (const auto& p : state.primitives()) {
    bool in_region = false;
    for (const Cell& c : site.reserved_cells()) in_region |= footprints_overlap(p.box(), cell_column(c));
    if (!in_region) {
      if (variant == ArchVariant::kEpisodeSuccess) return false;
      continue;
    }
    if (p.length == 3 && p.orientation == Orientation::kAlongX && near(p.position, bar_center)) {
      bar = &p;
    } else {
      region.push_back(&p);
    }
  }
  if (bar == nullptr) return false;
  // Everything else in the region must be pillar pieces with the anchor footprint.
  double top_l = 0.0;
  double top_r = 0.0;
  std::vector<const Primitive*> left;
  std::vector<const Primitive*> right;
  for (const Primitive* p : region) {
    if (footprint_is_cell(*p, spec.anchor_left)) {
      left.push_back(p);
    } else if (footprint_is_cell(*p, spec.anchor_right)) {
      right.push_back(p);
    } else {
      return false;
    }
  }
  auto contiguous = [&](std::vector<const Primitive*>& col, double& top) {
    std::sort(col.begin(), col.end(),
              [](const Primitive* a, const Primitive* b) { return a->position.z < b->position.z; });
    top = 0.0;
    for (const Primitive* p : col) {
      if (std::abs(p->z_bottom() - top) > kEps) return false;
      top = p->z_top();
    }
    return true;
  };
  return contiguous(left, top_l) && contiguous(right, top_r) && std::abs(top_l - pillar_h) <= kEps &&
         std::abs(top_r - pillar_h) <= kEps;
}

std::vector<CategoryInstance> enumerate_category(const ArchSpec& spec) {
  if (spec.height < 3 || spec.height > 5) throw UnsupportedHeight(spec.height);
  const auto comps = compositions(spec.height - 1);
  std::vector<CategoryInstance> out;
  const Site site = spec.site();
  for (const auto& left : comps) {
    for (const auto& right : comps) {
      CategoryInstance inst;
      inst.id = arch_id(spec.height, left, right);
      for (const auto& [cell, parts] : {std::pair{spec.anchor_left, left}, std::pair{spec.anchor_right, right}}) {
        double z = 0.0;
        for (int len : parts) {
          inst.pieces.push_back({len, len == 1 ? Orientation::kAlongX : Orientation::kAlongZ,
                                 cell.center(z + len / 2.0), arch_piece_color(len)});
          z += len;
        }
      }
      Vec3 bar = site.bridge_center();
      bar.z = spec.height - 0.5;
      inst.pieces.push_back({3, Orientation::kAlongX, bar, arch_piece_color(3)});
      out.push_back(std::move(inst));
    }
  }
  return out;
}

namespace {

bool piece_matches(const Primitive& p, const PiecePose& piece) {
  return p.length == piece.length && near(p.extents(), oriented_extents(piece.length, piece.orientation)) &&
         near(p.position, piece.position, 0.01);
}

bool fits_multiset(const std::vector<int>& needed, std::vector<int> available) {
  for (int l : needed) {
    auto it = std::find(available.begin(), available.end(), l);
    if (it == available.end()) return false;
    available.erase(it);
  }
  return true;
}

}  // namespace

double completion_score(const WorldState& state, const std::vector<CategoryInstance>& instances) {
  std::vector<int> lengths;
  for (const auto& p : state.primitives()) lengths.push_back(p.length);
  const auto reserved = state.site().reserved_cells();
  double best = 0.0;
  for (const auto& inst : instances) {
    if (!fits_multiset(inst.sorted_lengths(), lengths)) continue;
    int matched = 0;
    int extraneous = 0;
    for (const auto& p : state.primitives()) {
      bool hit = false;
      for (const auto& piece : inst.pieces) hit |= piece_matches(p, piece);
      if (hit) {
        ++matched;
        continue;
      }
      for (const Cell& c : reserved) {
        if (footprints_overlap(p.box(), cell_column(c))) {
          ++extraneous;
          break;
        }
      }
    }
    const double score =
        static_cast<double>(matched) / static_cast<double>(inst.pieces.size() + extraneous);
    best = std::max(best, score);
  }
  return best;
}

double completion_score(const WorldState& state, const ArchSpec& spec) {
  return completion_score(state, enumerate_category(spec));
}

bool classify_tower(const WorldState& state, const TowerSpec& spec) {
  auto col = column_stack(state, spec.anchor);
  if (!col || static_cast<int>(col->size()) != spec.n_cubes) return false;
  for (int level = 0; level < spec.n_cubes; ++level) {
    const Primitive* p = (*col)[static_cast<std::size_t>(level)];
    if (p->length != 1 || p->color != tower_color(level)) return false;
  }
  return true;
}

CategoryInstance tower_instance(const TowerSpec& spec) {
  CategoryInstance inst;
  inst.id = "tower" + std::to_string(spec.n_cubes);
  for (int level = 0; level < spec.n_cubes; ++level) {
    inst.pieces.push_back({1, Orientation::kAlongX, spec.anchor.center(level + 0.5), tower_color(level)});
  }
  return inst;
}

WorldState instantiate(const CategoryInstance& instance, const Site& site) {
  std::vector<Primitive> prims;
  int id = 0;
  for (const auto& piece : instance.pieces) {
    prims.push_back({id++, piece.length, piece.color, piece.position, piece.orientation});
  }
  return WorldState(std::move(prims), site);
}

std::optional<CategoryInstance> extract_arch_instance(const WorldState& state, const ArchSpec& spec) {
  if (!classify_arch(state, spec)) return std::nullopt;
  CategoryInstance inst;
  std::vector<int> parts[2];
  const Cell anchors[2] = {spec.anchor_left, spec.anchor_right};
  const Primitive* bar = nullptr;
  for (int side = 0; side < 2; ++side) {
    std::vector<const Primitive*> col;
    for (const auto& p : state.primitives()) {
      if (footprint_is_cell(p, anchors[side])) col.push_back(&p);
    }
    std::sort(col.begin(), col.end(),
              [](const Primitive* a, const Primitive* b) { return a->position.z < b->position.z; });
    for (const Primitive* p : col) {
      parts[side].push_back(p->length);
      inst.pieces.push_back({p->length, p->orientation, p->position, p->color});
    }
  }
  Vec3 bar_center = spec.site().bridge_center();
  bar_center.z = spec.height - 0.5;
  for (const auto& p : state.primitives()) {
    if (p.length == 3 && p.orientation == Orientation::kAlongX && near(p.position, bar_center)) bar = &p;
  }
  inst.pieces.push_back({3, Orientation::kAlongX, bar->position, bar->color});
  inst.id = arch_id(spec.height, parts[0], parts[1]);
  return inst;
}

WorldState scatter(const std::vector<PieceKind>& kinds, const WorldState& base, std::mt19937_64& rng,
                   int first_id) {
  WorldState state = base;
  int id = first_id;
  for (const auto& [length, col] : kinds) {
    const auto poses = free_table_poses(state, length);
    if (poses.empty()) throw std::runtime_error("no free table pose left while scattering");
    std::uniform_int_distribution<std::size_t> pick(0, poses.size() - 1);
    const TablePose& pose = poses[pick(rng)];
    state = state.with_primitive({id++, length, col, pose.center, pose.orientation});
  }
  return state;
}

Task Task::arch(int height) { return multi_arch({height}); }

Task Task::multi_arch(std::vector<int> heights) {
  if (heights.empty()) throw std::invalid_argument("multi_arch needs at least one height");
  std::sort(heights.begin(), heights.end());
  heights.erase(std::unique(heights.begin(), heights.end()), heights.end());
  Task t;
  t.kind_ = Kind::kArch;
  t.heights_ = heights;
  t.name_ = "arch";
  for (std::size_t i = 0; i < heights.size(); ++i) {
    t.name_ += (i ? "," : "") + std::to_string(heights[i]);
    auto inst = enumerate_category(ArchSpec{heights[i]});
    t.instances_.insert(t.instances_.end(), inst.begin(), inst.end());
  }
  t.site_ = ArchSpec{}.site();
  return t;
}

Task Task::tower(int n_cubes) {
  if (n_cubes < 1) throw std::invalid_argument("tower needs at least one cube");
  Task t;
  t.kind_ = Kind::kTower;
  t.tower_ = TowerSpec{n_cubes};
  t.name_ = "tower" + std::to_string(n_cubes);
  t.site_ = t.tower_.site();
  t.instances_ = {tower_instance(t.tower_)};
  return t;
}

Task Task::parse(const std::string& name) {
  if (name.rfind("tower", 0) == 0) return tower(std::stoi(name.substr(5)));
  if (name.rfind("arch", 0) == 0) {
    std::vector<int> heights;
    std::string rest = name.substr(4);
    std::size_t pos = 0;
    while (pos < rest.size()) {
      const std::size_t next = rest.find(',', pos);
      heights.push_back(std::stoi(rest.substr(pos, next - pos)));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    return multi_arch(heights);
  }
  throw std::invalid_argument("unknown task '" + name + "' (expected archH[,H..] or towerN)");
}

bool Task::is_goal(const WorldState& state, ArchVariant variant) const {
  if (kind_ == Kind::kTower) return classify_tower(state, tower_);
  for (int h : heights_) {
    if (classify_arch(state, ArchSpec{h}, variant)) return true;
  }
  return false;
}

double Task::completion(const WorldState& state) const {
  if (kind_ == Kind::kArch) return completion_score(state, instances_);
  auto col = [&]() -> std::vector<const Primitive*> {
    std::vector<const Primitive*> c;
    const Box column = cell_column(tower_.anchor);
    for (const auto& p : state.primitives()) {
      if (footprints_overlap(p.box(), column)) c.push_back(&p);
    }
    std::sort(c.begin(), c.end(),
              [](const Primitive* a, const Primitive* b) { return a->position.z < b->position.z; });
    return c;
  }();
  int correct = 0;
  for (const Primitive* p : col) {
    if (p->length == 1 && footprint_is_cell(*p, tower_.anchor) &&
        std::abs(p->z_bottom() - correct) <= kEps && correct < tower_.n_cubes &&
        p->color == tower_color(correct)) {
      ++correct;
    } else {
      break;
    }
  }
  const int extraneous = static_cast<int>(col.size()) - correct;
  return static_cast<double>(correct) / static_cast<double>(tower_.n_cubes + extraneous);
}

std::optional<CategoryInstance> Task::extract_instance(const WorldState& state) const {
  if (kind_ == Kind::kTower) {
    if (!classify_tower(state, tower_)) return std::nullopt;
    return instances_.front();
  }
  for (int h : heights_) {
    if (auto inst = extract_arch_instance(state, ArchSpec{h})) return inst;
  }
  return std::nullopt;
}

const CategoryInstance* Task::find_instance(const std::string& id) const {
  for (const auto& inst : instances_) {
    if (inst.id == id) return &inst;
  }
  return nullptr;
}

WorldState Task::scatter_instance(const CategoryInstance& instance, std::mt19937_64& rng) const {
  std::vector<PieceKind> kinds;
  for (const auto& p : instance.pieces) kinds.push_back({p.length, p.color});
  std::shuffle(kinds.begin(), kinds.end(), rng);
  return scatter(kinds, WorldState({}, site_), rng);
}

std::optional<int> Task::oracle_steps(const WorldState& state) const {
  std::vector<int> lengths;
  for (const auto& p : state.primitives()) lengths.push_back(p.length);
  std::sort(lengths.begin(), lengths.end());
  std::optional<int> best;
  for (const auto& inst : instances_) {
    if (inst.sorted_lengths() != lengths) continue;
    const int n = static_cast<int>(inst.pieces.size());
    if (!best || n < *best) best = n;
  }
  return best;
}

}  // namespace assembly
