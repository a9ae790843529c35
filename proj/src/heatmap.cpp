#include "assembly/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "assembly/io.hpp"

namespace assembly {

nlohmann::ordered_json to_json(const HeatmapGrid& g) {
  nlohmann::ordered_json j;
  j["size"] = g.size;
  j["cell_u"] = g.cell;
  j["sigma_cells"] = g.sigma;
  j["support_sigmas"] = g.support;
  j["nms_radius"] = g.nms_radius;
  j["mapping"] = "grid (u, v) = workspace (u * cell_u, v * cell_u); channels: position, x, y, z";
  return j;
}

PositionOutsideGrid::PositionOutsideGrid(double x, double y)
    : std::out_of_range("PositionOutsideGrid: (" + std::to_string(x) + ", " + std::to_string(y) + ")") {}

GridPoint to_grid(const Vec3& p, const HeatmapGrid& grid) {
  const long u = std::lround(p.x / grid.cell);
  const long v = std::lround(p.y / grid.cell);
  if (u < 0 || v < 0 || u >= grid.size || v >= grid.size) throw PositionOutsideGrid(p.x, p.y);
  return {static_cast<int>(u), static_cast<int>(v)};
}

Vec3 from_grid(GridPoint g, const HeatmapGrid& grid) { return {g.u * grid.cell, g.v * grid.cell, 0.0}; }

std::vector<HeatmapAction> heatmap_actions(const WorldState& state, const std::vector<AssemblyAction>& actions,
                                           Phase phase) {
  std::vector<HeatmapAction> out;
  for (const auto& a : actions) {
    if (phase == Phase::kPlace) {
      out.push_back({a.place_position, a.orientation});
      continue;
    }
    const Primitive* p = state.find(a.pick_id);
    if (p == nullptr) throw std::invalid_argument("pick of unknown primitive " + std::to_string(a.pick_id));
    out.push_back({p->position, p->orientation});
  }
  return out;
}

Heatmap encode_heatmap(const std::vector<HeatmapAction>& actions, const HeatmapGrid& grid) {
  if (actions.empty()) throw std::invalid_argument("encode_heatmap needs at least one action");
  Heatmap hm(grid.size);
  const double radius = grid.support * grid.sigma;
  const int r = static_cast<int>(std::floor(radius));
  for (const auto& a : actions) {
    const GridPoint g = to_grid(a.position, grid);
    const int channel = 1 + static_cast<int>(a.orientation);
    for (int dv = -r; dv <= r; ++dv) {
      for (int du = -r; du <= r; ++du) {
        const int u = g.u + du;
        const int v = g.v + dv;
        const double d2 = du * du + dv * dv;
        if (u < 0 || v < 0 || u >= grid.size || v >= grid.size || d2 > radius * radius) continue;
        const float val = static_cast<float>(std::exp(-d2 / (2.0 * grid.sigma * grid.sigma)));
        hm.at(0, u, v) = std::max(hm.at(0, u, v), val);
        hm.at(channel, u, v) = std::max(hm.at(channel, u, v), val);
      }
    }
  }
  return hm;
}

std::vector<DecodedAction> decode_heatmap(const Heatmap& hm, int top_k, const HeatmapGrid& grid) {
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  const int n = hm.size;
  struct Peak {
    float score;
    int u, v;
  };
  std::vector<Peak> peaks;
  for (int v = 0; v < n; ++v) {
    for (int u = 0; u < n; ++u) {
      const float s = hm.at(0, u, v);
      if (!(s > 0.0f)) continue;
      bool is_max = true;
      for (int dv = -1; dv <= 1 && is_max; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const int uu = u + du;
          const int vv = v + dv;
          if ((du == 0 && dv == 0) || uu < 0 || vv < 0 || uu >= n || vv >= n) continue;
          if (hm.at(0, uu, vv) > s) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) peaks.push_back({s, u, v});
    }
  }
  // stable: equal scores keep row-major order
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
  std::vector<DecodedAction> out;
  const int r2 = grid.nms_radius * grid.nms_radius;
  for (const auto& p : peaks) {
    if (static_cast<int>(out.size()) == top_k) break;
    bool suppressed = false;
    for (const auto& q : out) {
      const int du = p.u - q.cell.u;
      const int dv = p.v - q.cell.v;
      if (du * du + dv * dv <= r2) suppressed = true;
    }
    if (suppressed) continue;
    int best = 1;
    for (int c = 2; c <= 3; ++c) {
      if (hm.at(c, p.u, p.v) > hm.at(best, p.u, p.v)) best = c;
    }
    out.push_back({{p.u, p.v}, static_cast<Orientation>(best - 1), p.score});
  }
  return out;
}

namespace {

double xy_distance(const Vec3& a, const Vec3& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

int snap_pick(const WorldState& state, const DecodedAction& decoded, const HeatmapGrid& grid) {
  const Vec3 at = from_grid(decoded.cell, grid);
  int best = -1;
  double best_d = kSnapRadius + kEps;
  for (int id : non_blocked(state)) {
    const double d = xy_distance(state.find(id)->position, at);
    if (d < best_d - kEps) {
      best = id;
      best_d = d;
    }
  }
  if (best < 0) throw NoNearbyPrimitive();
  return best;
}

AssemblyAction snap_place(const WorldState& state, int pick_id, const DecodedAction& decoded,
                          const HeatmapGrid& grid) {
  const Vec3 at = from_grid(decoded.cell, grid);
  const AssemblyAction* best = nullptr;
  std::pair<int, double> best_cost{2, 0.0};
  const auto actions = enumerate_actions(state);
  for (const auto& a : actions) {
    if (a.pick_id != pick_id) continue;
    const double d = xy_distance(a.place_position, at);
    if (d > kSnapRadius + kEps) continue;
    const std::pair<int, double> cost{a.orientation == decoded.orientation ? 0 : 1, d};
    if (best == nullptr || cost.first < best_cost.first ||
        (cost.first == best_cost.first && cost.second < best_cost.second - kEps)) {
      best = &a;
      best_cost = cost;
    }
  }
  if (best == nullptr) throw NoNearbyPlacement();
  return *best;
}

std::vector<AssemblyAction> expert_actions(const WorldState& state, const CategoryInstance& target) {
  auto matches = [](const Primitive& p, const PiecePose& piece) {
    return p.length == piece.length && p.color == piece.color &&
           (p.length == 1 || p.orientation == piece.orientation) && near(p.position, piece.position, 0.01);
  };
  for (const auto& piece : target.pieces) {
    bool placed = false;
    for (const auto& p : state.primitives()) placed = placed || matches(p, piece);
    if (placed) continue;
    std::vector<AssemblyAction> out;
    for (const auto& p : state.primitives()) {
      if (!state.is_loose(p) || p.length != piece.length || p.color != piece.color || state.is_blocked(p)) continue;
      const AssemblyAction a{p.id, piece.position, piece.orientation};
      if (!check_action(state, a)) out.push_back(a);
    }
    return out;
  }
  return {};
}

namespace {

std::string key_of(const WorldState& s) { return hex64(fnv1a64(canonical_key(s).str())); }

}  // namespace

void build_dpi(const StateActionsDataset& dmu, const Task& task, const PolicyDataConfig& config, std::uint64_t seed,
               const std::function<void(const PolicySample&)>& sink) {
  std::uint64_t index = 0;
  auto emit = [&](const WorldState& s, Phase phase, std::optional<int> held, const std::vector<AssemblyAction>& acts,
                  const std::string& kind, const std::string& instance) {
    PolicySample sample;
    sample.observation = render(s, phase, held, config.camera);
    if (config.augment.bernoulli_p > 0.0 || config.augment.extent_noise > 0.0) {
      sample.observation =
          augment(sample.observation, config.augment, mix_seed(seed, 1000000000ULL + index), config.camera);
    }
    sample.heatmap = encode_heatmap(heatmap_actions(s, acts, phase), config.grid);
    sample.source_key = key_of(s);
    sample.action_count = static_cast<int>(acts.size());
    sample.kind = kind;
    sample.instance_id = instance;
    ++index;
    sink(sample);
  };
  auto emit_step = [&](const WorldState& s, const std::vector<AssemblyAction>& acts, const std::string& kind,
                       const std::string& instance) {
    emit(s, Phase::kPick, std::nullopt, acts, kind, instance);
    std::set<int> picked;
    for (const auto& a : acts) picked.insert(a.pick_id);
    for (int id : picked) {
      std::vector<AssemblyAction> places;
      for (const auto& a : acts) {
        if (a.pick_id == id) places.push_back(a);
      }
      emit(s, Phase::kPlace, id, places, kind, instance);
    }
  };

  std::vector<std::pair<WorldState, std::string>> sources;
  std::set<CanonicalKey> goals;
  for (const auto& e : dmu.entries) {
    if (e.actions.empty()) continue;
    emit_step(e.state, e.actions, "demo", e.instance_id);
    sources.push_back({e.state, e.instance_id});
  }
  for (const auto& e : dmu.entries) {
    if (e.depth != 1) continue;
    for (const auto& a : e.actions) {
      const WorldState g = apply_action(e.state, a);
      if (task.is_goal(g) && goals.insert(canonical_key(g)).second) sources.push_back({g, e.instance_id});
    }
  }

  for (std::size_t i = 0; i < sources.size() && config.perturbations_per_state > 0; ++i) {
    std::mt19937_64 rng(mix_seed(seed, i));
    const auto& [s, instance] = sources[i];
    for (int k = 0; k < config.perturbations_per_state; ++k) {
      const auto moves = sample_disassembly_actions(s, 1, rng);
      if (moves.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
      const AssemblyAction move = moves[pick(rng)];
      const WorldState perturbed = apply_action(s, move);
      emit_step(perturbed, {invert_action(s, move)}, "reassembly", instance);
    }
  }
}

void write_heatmap(const Heatmap& hm, const std::filesystem::path& path, const HeatmapGrid& grid,
                   const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json meta = extra;
  meta["grid"] = to_json(grid);
  write_tensor(path, std::span<const float>(hm.data), {4, hm.size, hm.size}, meta);
}

Heatmap read_heatmap(const std::filesystem::path& path) {
  std::vector<float> data = read_f32_blob(path);
  const int n = static_cast<int>(std::lround(std::sqrt(data.size() / 4.0)));
  if (static_cast<std::size_t>(4 * n * n) != data.size()) throw std::runtime_error("not a 4-channel square heatmap");
  Heatmap hm(n);
  hm.data = std::move(data);
  return hm;
}

std::size_t write_dpi(const StateActionsDataset& dmu, const Task& task, const PolicyDataConfig& config,
                      std::uint64_t seed, const std::filesystem::path& dir, const nlohmann::ordered_json& stamp) {
  std::filesystem::create_directories(dir / "tensors");
  std::ofstream index(dir / "index.jsonl", std::ios::binary);
  if (!index) throw std::runtime_error("cannot write " + (dir / "index.jsonl").string());
  std::size_t n = 0;
  std::map<std::string, std::size_t> by_kind;
  build_dpi(dmu, task, config, seed, [&](const PolicySample& s) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%07zu", n);
    const std::string rel = std::string("tensors/") + stem;
    write_observation(s.observation, dir / rel, config.camera, stamp);
    write_heatmap(s.heatmap, dir / (rel + "_heatmap.f32"), config.grid, stamp);
    nlohmann::ordered_json rec;
    rec["index"] = n;
    rec["phase"] = std::string(to_string(s.observation.phase));
    rec["kind"] = s.kind;
    rec["depth_path"] = rel + "_depth.f32";
    rec["seg_path"] = rel + "_seg.u8";
    rec["heatmap_path"] = rel + "_heatmap.f32";
    if (s.observation.held) rec["held_id"] = s.observation.held->id;
    rec["meta"] = {{"source_key", s.source_key}, {"action_count", s.action_count}, {"instance", s.instance_id}};
    index << dump_fixed(rec) << '\n';
    ++by_kind[s.kind];
    ++n;
  });
  nlohmann::ordered_json head = stamp;
  head["schema_version"] = kSchemaVersion;
  head["samples"] = n;
  head["by_kind"] = by_kind;
  head["task"] = task.name();
  head["camera"] = to_json(config.camera);
  head["grid"] = to_json(config.grid);
  head["palette_size"] = kPaletteSize;
  head["observation"] = {{"depth", "float32 [256,256] meters"}, {"seg", "uint8 [256,256] palette index"}};
  head["heatmap"] = "float32 [4,64,64]";
  write_text(dir / "dataset.json", dump_fixed(head) + "\n");
  return n;
}

}  // namespace assembly
