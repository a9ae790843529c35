#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "assembly/value.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace assembly;

namespace {

class ConstantValue : public ValueFunction {
 public:
  std::vector<double> evaluate(std::span<const WorldState> states) const override {
    return std::vector<double>(states.size(), 0.5);
  }
};

/// Strictly increasing transform of another value function.
class Transformed : public ValueFunction {
 public:
  explicit Transformed(const ValueFunction& inner) : inner_(inner) {}
  std::vector<double> evaluate(std::span<const WorldState> states) const override {
    auto v = inner_.evaluate(states);
    for (double& x : v) x = std::exp(3.0 * x) * x * x * x - 7.0;
    return v;
  }

 private:
  const ValueFunction& inner_;
};

double gamma_pow(int d) {
  double v = 1.0;
  for (int i = 0; i < d; ++i) v *= 0.95;
  return v;
}

ValueDataset small_dataset(const Task& task, std::size_t pairs, std::uint64_t seed) {
  ValueDataConfig cfg;
  cfg.min_pairs = pairs;
  return build_value_dataset(task.instances(), task, cfg, seed);
}

}  // namespace

TEST_CASE("encoding matches a voxel height map and the loose multiset") {
  std::mt19937_64 rng(5);
  const Task task = Task::arch(4);
  for (int i = 0; i < 200; ++i) {
    const WorldState s = oracle::random_state(rng, task.site(), 1 + i % kMaxPrimitives, 12);
    const StateEncoding e = encode(s);
    for (int k = 0; k < kEncodingDim; ++k) {
      CHECK(e[k] >= 0.0);
      CHECK(e[k] <= 1.0);
    }
    std::array<int, kHeightMapCells> top{};  // half units
    std::array<int, kLooseKinds> kinds{};
    const oracle::Voxels v = oracle::voxelize(s);
    for (const auto& [cell, ids] : v.cells) {
      const auto [x, y, z] = cell;
      if (oracle::loose(s, *s.find(ids.front()))) continue;
      int& t = top[static_cast<std::size_t>((y / 2) * kGridCells + x / 2)];
      t = std::max(t, z + 1);
    }
    for (const auto& p : s.primitives()) {
      if (oracle::loose(s, p)) ++kinds[static_cast<std::size_t>((p.length - 1) * kPaletteSize + p.color)];
    }
    for (int c = 0; c < kHeightMapCells; ++c) CHECK(e[c] * kMaxHeight == doctest::Approx(top[c] / 2.0));
    for (int k = 0; k < kLooseKinds; ++k) CHECK(e[kHeightMapCells + k] * kMaxPrimitives == doctest::Approx(kinds[k]));
  }
  CHECK(kEncodingDim == 280);
}

TEST_CASE("encoding is invariant under loose-position changes") {
  std::mt19937_64 rng(11);
  const Task task = Task::arch(5);
  const ValueNet net(value_architecture(), 3);
  for (int i = 0; i < 300; ++i) {
    const WorldState a = oracle::random_state(rng, task.site(), 2 + i % 7, 10);
    const WorldState b = oracle::reshuffle_loose(a, rng);
    REQUIRE(oracle::equivalent(a, b));
    const StateEncoding ea = encode(a);
    const StateEncoding eb = encode(b);
    CHECK(std::memcmp(ea.data(), eb.data(), sizeof(ea)) == 0);
    const std::vector<WorldState> pair{a, b};
    const auto v = NetValue(net).evaluate(pair);
    CHECK(v[0] == v[1]);
  }
}

TEST_CASE("a standing beam and a stack of cubes share a height map") {
  const Task task = Task::arch(3);
  const Cell left = ArchSpec{}.anchor_left;
  const WorldState beam({{0, 2, color::kRed, left.center(1.0), Orientation::kAlongZ}}, task.site());
  const WorldState cubes({{0, 1, color::kRed, left.center(0.5), Orientation::kAlongX},
                          {1, 1, color::kRed, left.center(1.5), Orientation::kAlongX}},
                         task.site());
  CHECK(encode(beam) == encode(cubes));
}

TEST_CASE("parameter count follows from the architecture") {
  const ValueNet a(value_architecture(), 1);
  const ValueNet b(value_architecture(), 2);
  CHECK(a.parameter_count() == 280 * 128 + 2 * 128 + 3 * (128 * 128 + 2 * 128) + 128 + 1);
  CHECK(a.parameter_count() == b.parameter_count());
  CHECK(a.blocks().size() == 14);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(17);
  ValueNet net(value_architecture(), 9);
  const Task task = Task::arch(5);
  std::vector<WorldState> states;
  for (int i = 0; i < 16; ++i) states.push_back(oracle::random_state(rng, task.site(), 3 + i % 6, 8));
  const Eigen::MatrixXd x = encode_batch(states);
  Eigen::VectorXd y(16);
  for (int i = 0; i < 16; ++i) y[i] = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
  for (const auto& c : oracle::check_gradients(net, x, y, rng)) {
    INFO(c.name);
    CHECK(c.rel_error <= 1e-4);
    CHECK(c.dir_rel_error <= 1e-4);
  }
}

TEST_CASE("first Adam step moves every coordinate by about lr against the gradient sign") {
  Eigen::VectorXd p(3);
  p << 1.0, -2.0, 0.5;
  Eigen::VectorXd g(3);
  g << 0.3, -4.0, 1e-3;
  Adam adam(3, AdamConfig{});
  Eigen::VectorXd q = p;
  adam.step(q, g);
  for (int i = 0; i < 3; ++i) {
    const double expected = p[i] - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(q[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("single pair is memorized") {
  ValueDataset d;
  d.inputs.push_back(encode(instantiate(Task::arch(3).instances().front(), Task::arch(3).site())));
  d.targets.push_back(0.9025);
  TrainConfig cfg;
  cfg.epochs = 200;
  const TrainResult r = train_value(d, cfg, 4);
  CHECK(r.epoch_loss.size() == 200);
  CHECK(std::abs(r.net.predict(d.input_matrix())[0] - 0.9025) <= 1e-3);
}

TEST_CASE("non-finite loss reports the epoch") {
  ValueDataset d;
  const Task task = Task::arch(3);
  d.inputs.push_back(encode(instantiate(task.instances()[0], task.site())));
  d.inputs.push_back(encode(WorldState({}, task.site())));
  d.targets = {1.0, std::nan("")};
  try {
    train_value(d, TrainConfig{}, 1);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() == 0);
  }
}

TEST_CASE("value labels follow the discount law") {
  const Task task = Task::arch(4);
  const ValueDataset d = small_dataset(task, 3000, 8);
  CHECK(d.records.size() >= 3000);
  int trajectories = 0;
  int matched = 0;
  for (const auto& r : d.records) {
    if (r.kind == ValueRecord::Kind::kTrajectory) {
      ++trajectories;
      CHECK(r.target == gamma_pow(r.depth));
    } else if (r.key_matched) {
      ++matched;
    } else {
      CHECK(r.target == 0.95 * r.parent_target);
    }
    CHECK(d.targets[r.unique_index] >= r.target);
  }
  CHECK(trajectories > 0);
  CHECK(matched > 0);
  for (double t : d.targets) {
    const double k = std::log(t) / std::log(0.95);
    CHECK(std::abs(k - std::round(k)) < 1e-9);
  }
}

TEST_CASE("hand trace on the three-piece arch") {
  const Task task = Task::arch(3);
  const CategoryInstance inst = *task.find_instance("arch3:L2-R2");
  ValueDataConfig cfg;
  cfg.min_pairs = 1;
  const ValueDataset d = build_value_dataset({inst}, task, cfg, 2);
  const WorldState assembled = instantiate(inst, task.site());
  // Removing the bar, then a pillar.
  std::mt19937_64 rng(1);
  const auto bar_off = sample_disassembly_actions(assembled, 1, rng);
  REQUIRE(bar_off.size() == 1);
  const WorldState s1 = apply_action(assembled, bar_off[0]);
  const WorldState s2 = apply_action(s1, sample_disassembly_actions(s1, 1, rng)[0]);
  auto label_of = [&](const WorldState& s) {
    for (std::size_t i = 0; i < d.inputs.size(); ++i) {
      if (d.inputs[i] == encode(s)) return d.targets[i];
    }
    return -1.0;
  };
  CHECK(label_of(assembled) == 1.0);
  CHECK(label_of(s1) == 0.95);
  CHECK(label_of(s2) == 0.95 * 0.95);
}

TEST_CASE("greedy policy") {
  const Task task = Task::arch(3);
  std::mt19937_64 rng(21);

  SUBCASE("constant value picks the first enumerated action") {
    const WorldState s = task.scatter_instance(task.instances()[2], rng);
    CHECK(same_action(greedy_policy_step(ConstantValue{}, s), enumerate_actions(s).front()));
  }
  SUBCASE("no actions") {
    CHECK_THROWS_AS(greedy_policy_step(ConstantValue{}, WorldState({}, task.site())), NoActionsAvailable);
  }
  SUBCASE("completion oracle increases progress and argmax ignores monotone transforms") {
    const CompletionValue oracle_value(task);
    const Transformed transformed(oracle_value);
    for (int ep = 0; ep < 20; ++ep) {
      WorldState s = task.scatter_instance(task.instances()[static_cast<std::size_t>(ep % 4)], rng);
      for (int step = 0; step < 6 && !task.is_goal(s); ++step) {
        const AssemblyAction a = greedy_policy_step(oracle_value, s);
        CHECK(same_action(a, greedy_policy_step(transformed, s)));
        double best = -1.0;
        for (const auto& b : enumerate_actions(s)) best = std::max(best, task.completion(apply_action(s, b)));
        const WorldState next = apply_action(s, a);
        if (best > task.completion(s)) CHECK(task.completion(next) > task.completion(s));
        s = next;
      }
      CHECK(task.is_goal(s));
    }
  }
  SUBCASE("rollouts are reproducible") {
    const CompletionValue oracle_value(task);
    std::mt19937_64 r1(4), r2(4);
    const WorldState a = task.scatter_instance(task.instances()[1], r1);
    const WorldState b = task.scatter_instance(task.instances()[1], r2);
    const Rollout x = greedy_rollout(oracle_value, task, a, 10);
    const Rollout y = greedy_rollout(oracle_value, task, b, 10);
    REQUIRE(x.actions.size() == y.actions.size());
    for (std::size_t i = 0; i < x.actions.size(); ++i) CHECK(same_action(x.actions[i], y.actions[i]));
  }
}

TEST_CASE("discovery") {
  const Task task = Task::arch(3);
  const CompletionValue oracle_value(task);

  SUBCASE("two 2U beams and a bar build the small arch in three steps") {
    std::mt19937_64 rng(3);
    const WorldState start = scatter({{2, color::kYellow}, {2, color::kYellow}, {3, color::kBlue}},
                                     WorldState({}, task.site()), rng);
    const Rollout r = greedy_rollout(oracle_value, task, start, 2 * kMaxPrimitives);
    CHECK(r.success);
    CHECK(r.steps == 3);
    CHECK(task.extract_instance(r.final_state)->id == "arch3:L2-R2");
  }
  SUBCASE("zero attempts") {
    DiscoveryConfig cfg;
    cfg.attempts = 0;
    CHECK(discover_instances(oracle_value, task, cfg, 1).empty());
  }
  SUBCASE("random multisets all contain a bar and discovery finds valid instances") {
    DiscoveryConfig cfg;
    cfg.attempts = 40;
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) {
      const auto kinds = sample_discovery_kinds(task, cfg, rng);
      CHECK(kinds.size() >= 3);
      CHECK(kinds.size() <= 8);
      CHECK(std::count_if(kinds.begin(), kinds.end(), [](const PieceKind& k) { return k.first == 3; }) >= 1);
    }
    const auto found = discover_instances(oracle_value, task, cfg, 5);
    CHECK(!found.empty());
    for (const auto& inst : found) CHECK(task.find_instance(inst.id) != nullptr);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ValueNet net(value_architecture(), 12);
  net.round_to_float();
  const auto path = std::filesystem::temp_directory_path() / "value_test_ckpt.bin";
  net.save(path, R"({"gamma":0.95,"seed":12})");
  const ValueNet back = ValueNet::load(path);
  CHECK(back.parameters() == net.parameters());
  std::mt19937_64 rng(2);
  std::vector<WorldState> states;
  for (int i = 0; i < 8; ++i) states.push_back(oracle::random_state(rng, Task::arch(3).site(), 4, 5));
  const Eigen::MatrixXd x = encode_batch(states);
  CHECK(back.predict(x) == net.predict(x));
  std::filesystem::remove(path);
}

TEST_CASE("training loop on the single input instance") {
  const Task task = Task::arch(3);
  LoopConfig cfg;
  cfg.rounds = 1;
  cfg.discovery.attempts = 0;
  cfg.data.min_pairs = 500;
  cfg.train.epochs = 3;
  const LoopResult a = run_training_loop({task.instances()[0]}, task, cfg, 77);
  CHECK(a.instances.size() == 1);
  REQUIRE(a.rounds.size() == 1);
  CHECK(a.rounds[0].raw_pairs >= 500);
  CHECK(a.rounds[0].discovered == 0);
  const LoopResult b = run_training_loop({task.instances()[0]}, task, cfg, 77);
  CHECK(a.net.parameters() == b.net.parameters());

  CategoryInstance bogus = task.instances()[0];
  bogus.pieces.pop_back();
  CHECK_THROWS_AS(run_training_loop({bogus}, task, cfg, 1), NotAnInstance);
}

TEST_CASE("self-check scores greedy builds of known instances") {
  const Task task = Task::arch(4);
  const CompletionValue truth(task);
  CHECK(self_check(truth, task.instances(), task, 32, 2 * kMaxPrimitives, 3) == 1.0);
  CHECK(self_check(ConstantValue(), task.instances(), task, 32, 2 * kMaxPrimitives, 3) < 0.5);
  CHECK(self_check(ConstantValue(), task.instances(), task, 0, 18, 3) == 1.0);
}

TEST_CASE("a net that fails the self-check is retrained and the best kept") {
  const Task task = Task::arch(3);
  LoopConfig cfg;
  cfg.rounds = 1;
  cfg.discovery.attempts = 0;
  cfg.data.min_pairs = 300;
  cfg.train.epochs = 1;
  cfg.max_retries = 2;
  cfg.self_check_episodes = 8;
  cfg.self_check_min = 1.01;  // unreachable: every retry is used
  const LoopResult r = run_training_loop({task.instances()[0]}, task, cfg, 5);
  REQUIRE(r.rounds.size() == 1);
  CHECK(r.rounds[0].retries == 2);
  CHECK(r.rounds[0].self_check >= 0.0);
  CHECK(r.rounds[0].self_check <= 1.0);
  cfg.self_check_min = 0.0;
  CHECK(run_training_loop({task.instances()[0]}, task, cfg, 5).rounds[0].retries == 0);
}
