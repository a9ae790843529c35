#include <doctest.h>

#include <random>

#include "assembly/shapes.hpp"
#include "assembly/unmake.hpp"

using namespace assembly;

namespace {

Primitive standing(int id, int length, Cell c, double z_bottom = 0.0) {
  return {id, length, color::kGrey, c.center(z_bottom + length / 2.0),
          length == 1 ? Orientation::kAlongX : Orientation::kAlongZ};
}

Primitive bar_at(int id, int height) {
  return {id, 3, color::kBlue, {7.5, 11.5, height - 0.5}, Orientation::kAlongX};
}

// c(h) = c(h-1) + c(h-2) + c(h-3), c(0) = 1.
long tribonacci_count(int h) {
  if (h < 0) return 0;
  if (h == 0) return 1;
  return tribonacci_count(h - 1) + tribonacci_count(h - 2) + tribonacci_count(h - 3);
}

}  // namespace

TEST_CASE("arch category sizes") {
  CHECK(enumerate_category(ArchSpec{3}).size() == 4);
  CHECK(enumerate_category(ArchSpec{4}).size() == 16);
  CHECK(enumerate_category(ArchSpec{5}).size() == 49);
  for (int h = 3; h <= 5; ++h) {
    const long c = tribonacci_count(h - 1);
    CHECK(static_cast<long>(compositions(h - 1).size()) == c);
    CHECK(static_cast<long>(enumerate_category(ArchSpec{h}).size()) == c * c);
  }
  CHECK(tribonacci_count(2) == 2);
  CHECK(tribonacci_count(3) == 4);
  CHECK(tribonacci_count(4) == 7);
  CHECK_THROWS_AS(enumerate_category(ArchSpec{6}), UnsupportedHeight);
  CHECK_THROWS_AS(enumerate_category(ArchSpec{2}), UnsupportedHeight);
}

TEST_CASE("classify_arch") {
  const ArchSpec spec{3};
  const Site site = spec.site();
  SUBCASE("2U pillars and a 3U bar") {
    WorldState s({standing(0, 2, {6, 11}), standing(1, 2, {8, 11}), bar_at(2, 3)}, site);
    CHECK(classify_arch(s, spec));
    CHECK(classify_arch(s, spec, ArchVariant::kEpisodeSuccess));
    CHECK_FALSE(classify_arch(s, ArchSpec{4}));
  }
  SUBCASE("empty state") { CHECK_FALSE(classify_arch(WorldState({}, site), spec)); }
  SUBCASE("every enumerated instance classifies, and fails without its bar") {
    for (int h = 3; h <= 5; ++h) {
      for (const auto& inst : enumerate_category(ArchSpec{h})) {
        WorldState s = instantiate(inst, site);
        CHECK(classify_arch(s, ArchSpec{h}));
        CHECK(classify_arch(s, ArchSpec{h}, ArchVariant::kEpisodeSuccess));
        WorldState no_bar = s.without(static_cast<int>(inst.pieces.size()) - 1);
        CHECK_FALSE(classify_arch(no_bar, ArchSpec{h}));
      }
    }
  }
  SUBCASE("loose primitives only matter for episode success") {
    WorldState s({standing(0, 2, {6, 11}), standing(1, 2, {8, 11}), bar_at(2, 3),
                  {3, 1, color::kRed, Cell{2, 2}.center(0.5), Orientation::kAlongX}},
                 site);
    CHECK(classify_arch(s, spec));
    CHECK_FALSE(classify_arch(s, spec, ArchVariant::kEpisodeSuccess));
  }
  SUBCASE("anything on the bar breaks the arch") {
    WorldState s({standing(0, 2, {6, 11}), standing(1, 2, {8, 11}), bar_at(2, 3),
                  {3, 1, color::kRed, {7.5, 11.5, 3.5}, Orientation::kAlongX}},
                 site);
    CHECK_FALSE(classify_arch(s, spec));
  }
  SUBCASE("colors are ignored") {
    auto a = standing(0, 2, {6, 11});
    a.color = color::kPurple;
    WorldState s({a, standing(1, 1, {8, 11}), standing(3, 1, {8, 11}, 1.0), bar_at(2, 3)}, site);
    CHECK(classify_arch(s, spec));
  }
}

TEST_CASE("completion_score") {
  const ArchSpec spec{3};
  const Site site = spec.site();
  SUBCASE("completed arch scores one") {
    WorldState s({standing(0, 2, {6, 11}), standing(1, 2, {8, 11}), bar_at(2, 3)}, site);
    CHECK(completion_score(s, spec) == doctest::Approx(1.0));
  }
  SUBCASE("nothing at the anchors scores zero") {
    WorldState s({{0, 2, color::kGrey, Cell{2, 2}.center(0.5), Orientation::kAlongX},
                  {1, 3, color::kBlue, Cell{2, 5}.center(0.5), Orientation::kAlongY}},
                 site);
    CHECK(completion_score(s, spec) == doctest::Approx(0.0));
  }
  SUBCASE("one cube on the left anchor of a cubes-only arch") {
    // Four cubes and a bar: only (1,1)|(1,1) fits the primitive set, 1 of 5 placed.
    std::vector<Primitive> prims = {standing(0, 1, {6, 11})};
    for (int i = 1; i <= 3; ++i) prims.push_back({i, 1, color::kRed, Cell{2 * i, 2}.center(0.5), Orientation::kAlongX});
    prims.push_back({4, 3, color::kBlue, Cell{2, 5}.center(0.5), Orientation::kAlongY});
    CHECK(completion_score(WorldState(prims, site), spec) == doctest::Approx(0.2));
  }
  SUBCASE("score is one exactly when the arch classifies, and grows while assembling") {
    for (const auto& inst : enumerate_category(ArchSpec{4})) {
      WorldState assembled = instantiate(inst, site);
      std::mt19937_64 rng(1);
      const Task task = Task::arch(4);
      UnmakeConfig cfg;
      cfg.exhaustive = false;
      DisassemblyGraph g = unmake(assembled, task, cfg, rng);
      // Walk the single path back up: leaf -> root.
      std::vector<std::size_t> path = g.paths_to_root().front();
      double prev = -1.0;
      for (std::size_t node : path) {
        const double score = completion_score(g.nodes()[node].state, ArchSpec{4});
        CHECK(score >= prev);
        CHECK((score == doctest::Approx(1.0)) == classify_arch(g.nodes()[node].state, ArchSpec{4}));
        prev = score;
      }
      CHECK(prev == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("classify_tower") {
  const TowerSpec spec3{3};
  const Site site = spec3.site();
  auto cube = [](int id, int col, int level) {
    return Primitive{id, 1, col, Cell{7, 11}.center(level + 0.5), Orientation::kAlongX};
  };
  CHECK(classify_tower(WorldState({cube(0, color::kGreen, 0)}, site), TowerSpec{1}));
  CHECK(classify_tower(
      WorldState({cube(0, color::kGreen, 0), cube(1, color::kYellow, 1), cube(2, color::kRed, 2)}, site), spec3));
  CHECK_FALSE(classify_tower(
      WorldState({cube(0, color::kGreen, 0), cube(1, color::kRed, 1), cube(2, color::kYellow, 2)}, site), spec3));
  CHECK_FALSE(classify_tower(WorldState({cube(0, color::kGreen, 0), cube(1, color::kYellow, 1)}, site), spec3));
  CHECK(classify_tower(instantiate(tower_instance(TowerSpec{7}), TowerSpec{7}.site()), TowerSpec{7}));
}

TEST_CASE("task helpers") {
  const Task arch = Task::parse("arch3");
  CHECK(arch.instances().size() == 4);
  const Task multi = Task::parse("arch3,4,5");
  CHECK(multi.instances().size() == 69);
  CHECK(Task::parse("tower5").tower_cubes() == 5);
  CHECK_THROWS(Task::parse("pyramid"));

  std::mt19937_64 rng(2);
  const CategoryInstance* inst = arch.find_instance("arch3:L2-R2");
  REQUIRE(inst != nullptr);
  WorldState start = arch.scatter_instance(*inst, rng);
  CHECK(start.structure_count() == 0);
  CHECK(arch.oracle_steps(start) == 3);
  const auto back = arch.extract_instance(instantiate(*inst, arch.site()));
  REQUIRE(back.has_value());
  CHECK(back->id == inst->id);
  const auto json = to_json(*inst);
  CHECK(instance_from_json(nlohmann::json::parse(json.dump())).id == inst->id);
}
