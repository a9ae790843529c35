#include <doctest.h>

#include <random>
#include <set>

#include "assembly/io.hpp"
#include "assembly/unmake.hpp"
#include "oracles.hpp"

using namespace assembly;

namespace {

WorldState small_arch(const Task& task) {
  return instantiate(*task.find_instance("arch3:L2-R2"), task.site());
}

}  // namespace

TEST_CASE("three-piece arch disassembly graph (one primitive stays anchored)") {
  const Task task = Task::arch(3);
  UnmakeConfig cfg;
  cfg.anchored_leaf = true;
  std::mt19937_64 rng(1);
  DisassemblyGraph g = unmake(small_arch(task), task, cfg, rng);
  CHECK(g.layer(0).size() == 1);
  CHECK(g.layer(1).size() == 1);  // only the bar can come off
  CHECK(g.layer(2).size() == 2);  // then either pillar
  CHECK(g.max_depth() == 2);      // m - 1
  CHECK(g.nodes()[g.layer(1)[0]].inverse_actions.size() == 1);  // three sampled cells merge into one class
}

TEST_CASE("full disassembly reaches the all-loose state") {
  const Task task = Task::arch(3);
  std::mt19937_64 rng(1);
  DisassemblyGraph g = unmake(small_arch(task), task, UnmakeConfig{}, rng);
  CHECK(g.max_depth() == 3);
  CHECK(g.layer(3).size() == 1);
  CHECK(g.nodes()[g.layer(3)[0]].state.structure_count() == 0);
}

TEST_CASE("two-cube tower is a single step in the anchored convention") {
  const Task task = Task::tower(2);
  UnmakeConfig cfg;
  cfg.anchored_leaf = true;
  std::mt19937_64 rng(4);
  DisassemblyGraph g = unmake(instantiate(task.instances().front(), task.site()), task, cfg, rng);
  CHECK(g.size() == 2);
  CHECK(g.max_depth() == 1);
}

TEST_CASE("unmake rejects non-instances") {
  const Task task = Task::arch(3);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(unmake(WorldState({}, task.site()), task, UnmakeConfig{}, rng), NotAnInstance);
}

TEST_CASE("graph self-consistency: inverse actions lead one layer up") {
  const Task task = Task::arch(5);
  std::mt19937_64 rng(3);
  for (const char* id : {"arch5:L1111-R22", "arch5:L13-R211"}) {
    DisassemblyGraph g = unmake(instantiate(*task.find_instance(id), task.site()), task, UnmakeConfig{}, rng);
    CHECK_FALSE(g.truncated());
    for (const auto& node : g.nodes()) {
      CHECK(node.value_bound == doctest::Approx(std::pow(0.95, node.depth)));
      for (std::size_t k = 0; k < node.inverse_actions.size(); ++k) {
        WorldState up = apply_action(node.state, node.inverse_actions[k]);
        const GraphNode* parent = g.find(canonical_key(up));
        REQUIRE(parent != nullptr);
        CHECK(parent->depth == node.depth - 1);
        CHECK(&g.nodes()[node.parents[k]] == parent);
      }
    }
  }
}

TEST_CASE("invert_action") {
  const Task task = Task::arch(3);
  WorldState s = small_arch(task);
  const AssemblyAction off{2, Cell{2, 7}.center(0.5), Orientation::kAlongX};
  const AssemblyAction back = invert_action(s, off);
  CHECK(back.pick_id == 2);
  CHECK(near(back.place_position, {7.5, 11.5, 2.5}));
  CHECK(back.orientation == Orientation::kAlongX);
  // Inverse of the inverse gives back the original placement.
  WorldState moved = apply_action(s, off);
  const AssemblyAction again = invert_action(moved, back);
  CHECK(same_action(again, off));
  CHECK_THROWS_AS(invert_action(s, {0, Cell{2, 7}.center(1.0), Orientation::kAlongZ}), ActionError);

  SUBCASE("round trip over random disassembly moves restores exact poses") {
    std::mt19937_64 rng(8);
    int checked = 0;
    const Task t5 = Task::arch(5);
    while (checked < 1000) {
      const auto& inst = t5.instances()[rng() % t5.instances().size()];
      WorldState st = instantiate(inst, t5.site());
      // Strip a random number of pieces first so states vary.
      for (int strip = static_cast<int>(rng() % 4); strip > 0; --strip) {
        auto moves = sample_disassembly_actions(st, 1, rng);
        if (moves.empty()) break;
        st = apply_action(st, moves[rng() % moves.size()]);
      }
      for (const auto& m : sample_disassembly_actions(st, 2, rng)) {
        const AssemblyAction inv = invert_action(st, m);
        WorldState restored = apply_action(apply_action(st, m), inv);
        CHECK(canonical_key(restored) == canonical_key(st));
        CHECK(near(restored.find(m.pick_id)->position, st.find(m.pick_id)->position));
        ++checked;
      }
    }
  }
}

TEST_CASE("reversed disassembly paths rebuild the instance") {
  const Task task = Task::arch(4);
  std::mt19937_64 rng(6);
  for (const auto& inst : task.instances()) {
    const WorldState assembled = instantiate(inst, task.site());
    DisassemblyGraph g = unmake(assembled, task, UnmakeConfig{}, rng);
    for (const auto& path : g.paths_to_root()) {
      WorldState s = g.nodes()[path.front()].state;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const GraphNode& node = g.nodes()[path[i]];
        // Pick the inverse action whose parent is the next node on this path.
        bool stepped = false;
        for (std::size_t k = 0; k < node.parents.size() && !stepped; ++k) {
          if (node.parents[k] != path[i + 1]) continue;
          s = apply_action(s, node.inverse_actions[k]);
          stepped = true;
        }
        REQUIRE(stepped);
        CHECK(oracle::check_world(s).empty());
      }
      CHECK(task.is_goal(s, ArchVariant::kEpisodeSuccess));
      CHECK(canonical_key(s) == canonical_key(assembled));
    }
  }
}

TEST_CASE("build_dmu") {
  const Task task = Task::arch(3);
  const CategoryInstance& inst = *task.find_instance("arch3:L2-R2");
  SUBCASE("single trajectory of the three-piece arch gives two pairs") {
    UnmakeConfig cfg;
    cfg.exhaustive = false;
    cfg.anchored_leaf = true;
    StateActionsDataset ds = build_dmu({inst}, task, 1, 42, cfg);
    CHECK(ds.entries.size() == 2);
    for (const auto& e : ds.entries) {
      for (const auto& a : e.actions) CHECK_NOTHROW(apply_action(e.state, a));
    }
  }
  SUBCASE("multiple paths over the 5U arches expose symmetric placements") {
    const Task t5 = Task::arch(5);
    StateActionsDataset ds = build_dmu(t5.instances(), t5, 2, 7);
    bool multi_place = false;
    for (const auto& e : ds.entries) {
      std::set<std::pair<long, long>> places;
      for (const auto& a : e.actions) {
        places.insert({std::lround(a.place_position.x * 100), std::lround(a.place_position.y * 100)});
        CHECK_FALSE(check_action(e.state, a).has_value());
      }
      multi_place |= places.size() >= 2;
    }
    CHECK(multi_place);
  }
  SUBCASE("interchangeable loose pieces are all offered as picks") {
    const CategoryInstance& cubes = *task.find_instance("arch3:L11-R11");
    StateActionsDataset ds = build_dmu({cubes}, task, 1, 3);
    bool two_cube_picks = false;
    for (const auto& e : ds.entries) {
      std::set<int> picks;
      for (const auto& a : e.actions) picks.insert(a.pick_id);
      two_cube_picks |= picks.size() >= 2;
    }
    CHECK(two_cube_picks);
  }
  SUBCASE("same seed gives byte-identical output") {
    auto dump = [&](std::uint64_t seed) {
      std::string out;
      for (const auto& e : build_dmu(task.instances(), task, 2, seed).entries) out += dump_fixed(to_json(e)) + "\n";
      return out;
    };
    const std::string a = dump(11);
    CHECK(a == dump(11));
    const auto first = nlohmann::json::parse(a.substr(0, a.find('\n')));
    DmuEntry e = dmu_entry_from_json(first);
    CHECK(dump_fixed(to_json(e)) == a.substr(0, a.find('\n')));
  }
}
