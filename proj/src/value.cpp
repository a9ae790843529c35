#include "assembly/value.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <optional>
#include <random>
#include <unordered_map>

#include "assembly/io.hpp"

namespace assembly {

namespace {

double quantize(double v) { return std::round(v * 100.0) / 100.0; }

std::string encoding_bytes(const StateEncoding& e) {
  std::string s(sizeof(double) * e.size(), '\0');
  std::memcpy(s.data(), e.data(), s.size());
  return s;
}

}  // namespace

StateEncoding encode(const WorldState& state) {
  if (state.size() > static_cast<std::size_t>(kMaxPrimitives)) {
    throw std::invalid_argument("state has more primitives than the encoding supports");
  }
  StateEncoding e{};
  double* height = e.data();
  double* kinds = e.data() + kHeightMapCells;
  for (const auto& p : state.primitives()) {
    if (state.is_loose(p)) {
      kinds[(p.length - 1) * kPaletteSize + p.color] += 1.0 / kMaxPrimitives;
      continue;
    }
    const Box b = p.box();
    const double top = quantize(b.hi.z) / kMaxHeight;
    const int x0 = std::max(0, static_cast<int>(std::floor(b.lo.x + kEps)));
    const int x1 = std::min(kGridCells, static_cast<int>(std::ceil(b.hi.x - kEps)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.lo.y + kEps)));
    const int y1 = std::min(kGridCells, static_cast<int>(std::ceil(b.hi.y - kEps)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) height[y * kGridCells + x] = std::max(height[y * kGridCells + x], top);
    }
  }
  return e;
}

Eigen::MatrixXd encode_batch(std::span<const WorldState> states) {
  Eigen::MatrixXd m(kEncodingDim, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const StateEncoding e = encode(states[i]);
    m.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(e.data(), kEncodingDim);
  }
  return m;
}

NetArchitecture value_architecture() {
  NetArchitecture a;
  a.input_dim = kEncodingDim;
  return a;
}

Eigen::MatrixXd ValueDataset::input_matrix() const {
  Eigen::MatrixXd m(kEncodingDim, static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    m.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(inputs[i].data(), kEncodingDim);
  }
  return m;
}

Eigen::VectorXd ValueDataset::target_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(targets.data(), static_cast<Eigen::Index>(targets.size()));
}

ValueDataset build_value_dataset(const std::vector<CategoryInstance>& instances, const Task& task,
                                 const ValueDataConfig& config, std::uint64_t seed) {
  if (instances.empty()) throw std::invalid_argument("build_value_dataset needs at least one instance");
  ValueDataset data;
  std::unordered_map<std::string, std::size_t> index;
  auto add = [&](const WorldState& s, ValueRecord r) {
    const StateEncoding e = encode(s);
    auto [it, inserted] = index.try_emplace(encoding_bytes(e), data.inputs.size());
    if (inserted) {
      data.inputs.push_back(e);
      data.targets.push_back(r.target);
    } else {
      data.targets[it->second] = std::max(data.targets[it->second], r.target);
    }
    r.unique_index = it->second;
    data.records.push_back(r);
  };

  UnmakeConfig ucfg = config.unmake;
  ucfg.gamma = config.gamma;
  for (int pass = 0; pass < config.max_passes; ++pass) {
    for (std::size_t i = 0; i < instances.size(); ++i) {
      std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(pass) * 1000003u + i));
      const DisassemblyGraph g = unmake(instantiate(instances[i], task.site()), task, ucfg, rng);
      for (const GraphNode& node : g.nodes()) {
        ValueRecord r;
        r.kind = ValueRecord::Kind::kTrajectory;
        r.target = node.value_bound;
        r.depth = node.depth;
        r.parent_target = node.value_bound;
        add(node.state, r);
      }
      for (const GraphNode& node : g.nodes()) {
        for (int j = 0; j < config.expansions_per_state; ++j) {
          WorldState current = node.state;
          double current_target = node.value_bound;
          for (int step = 1; step <= config.expansion_depth; ++step) {
            std::vector<AssemblyAction> moves = enumerate_actions(current);
            const auto removals = sample_disassembly_actions(current, 1, rng);
            moves.insert(moves.end(), removals.begin(), removals.end());
            if (moves.empty()) break;
            std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
            WorldState next = apply_action(current, moves[pick(rng)]);
            const GraphNode* match = g.find(canonical_key(next));
            ValueRecord r;
            r.kind = ValueRecord::Kind::kExpansion;
            r.depth = node.depth;
            r.walk_step = step;
            r.parent_target = current_target;
            r.key_matched = match != nullptr;
            r.target = match ? match->value_bound : config.gamma * current_target;
            add(next, r);
            current = std::move(next);
            current_target = r.target;
          }
        }
      }
    }
    if (data.records.size() >= config.min_pairs) break;
  }
  return data;
}

TrainingDiverged::TrainingDiverged(int epoch)
    : std::runtime_error("Divergence: training loss is not finite at epoch " + std::to_string(epoch)),
      epoch_(epoch) {}

TrainResult train_value(const ValueDataset& dataset, const TrainConfig& config, std::uint64_t seed,
                        const EpochLogger& log) {
  if (dataset.size() == 0) throw std::invalid_argument("train_value needs a non-empty dataset");
  if (config.batch < 1 || config.epochs < 0) throw std::invalid_argument("invalid training configuration");
  const Eigen::MatrixXd x = dataset.input_matrix();
  const Eigen::VectorXd y = dataset.target_vector();
  const Eigen::Index n = x.cols();
  std::vector<Eigen::Index> order;
  if (config.weight_by_multiplicity && !dataset.records.empty()) {
    for (const auto& r : dataset.records) order.push_back(static_cast<Eigen::Index>(r.unique_index));
  } else {
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
  }
  const auto steps = static_cast<Eigen::Index>(order.size());

  TrainResult result;
  result.net = ValueNet(value_architecture(), mix_seed(seed, 1));
  Adam adam(result.net.parameter_count(), config.adam);
  std::mt19937_64 rng(mix_seed(seed, 2));
  Eigen::VectorXd grad;
  Eigen::MatrixXd xb;
  Eigen::VectorXd yb;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < steps; start += config.batch) {
      Eigen::Index len = std::min<Eigen::Index>(config.batch, steps - start);
      // A trailing single-sample batch has degenerate batch statistics.
      if (len == 1 && steps > 1) break;
      xb.resize(kEncodingDim, len);
      yb.resize(len);
      for (Eigen::Index k = 0; k < len; ++k) {
        const Eigen::Index idx = order[static_cast<std::size_t>(start + k)];
        xb.col(k) = x.col(idx);
        yb[k] = y[idx];
      }
      const double loss = result.net.loss_and_gradient(xb, yb, grad, true);
      if (!std::isfinite(loss) || !grad.allFinite()) throw TrainingDiverged(epoch);
      adam.step(result.net.parameters(), grad);
      total += loss * static_cast<double>(len);
      seen += len;
    }
    const double epoch_loss = total / static_cast<double>(seen);
    result.epoch_loss.push_back(epoch_loss);
    if (log) log(epoch, epoch_loss);
  }
  // Weights are kept at checkpoint precision. Running statistics are computed
  // from the rounded weights and stay in double: with near-zero batch variance
  // (tiny datasets) rounding them would be amplified by 1/sqrt(eps) per layer.
  result.net.round_to_float(false);
  if (config.recalibrate_bn && steps > 1) {
    Eigen::MatrixXd sampled(kEncodingDim, steps);
    for (Eigen::Index k = 0; k < steps; ++k) sampled.col(k) = x.col(order[static_cast<std::size_t>(k)]);
    result.net.recalibrate_batch_norm(sampled);
  }
  const Eigen::VectorXd pred = result.net.predict(x);
  result.final_mse = (pred - y).squaredNorm() / static_cast<double>(n);
  if (!std::isfinite(result.final_mse)) throw TrainingDiverged(config.epochs);
  return result;
}

std::vector<double> NetValue::evaluate(std::span<const WorldState> states) const {
  if (states.empty()) return {};
  const Eigen::VectorXd v = net_.predict(encode_batch(states));
  return {v.data(), v.data() + v.size()};
}

std::vector<double> CompletionValue::evaluate(std::span<const WorldState> states) const {
  std::vector<double> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(task_.completion(s));
  return out;
}

AssemblyAction greedy_policy_step(const ValueFunction& value, const WorldState& state) {
  const std::vector<AssemblyAction> actions = enumerate_actions(state);
  if (actions.empty()) throw NoActionsAvailable();
  std::vector<WorldState> next;
  next.reserve(actions.size());
  for (const auto& a : actions) next.push_back(apply_action(state, a));
  const std::vector<double> v = value.evaluate(next);
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return actions[best];
}

Rollout exploring_rollout(const ValueFunction& value, const Task& task, const WorldState& start, int max_steps,
                          double epsilon, std::mt19937_64& rng, ArchVariant variant) {
  Rollout r;
  r.final_state = start;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  while (true) {
    if (task.is_goal(r.final_state, variant)) {
      r.success = true;
      break;
    }
    if (r.steps >= max_steps) break;
    AssemblyAction a;
    if (epsilon > 0.0 && coin(rng) < epsilon) {
      const auto actions = enumerate_actions(r.final_state);
      if (actions.empty()) break;
      a = actions[std::uniform_int_distribution<std::size_t>(0, actions.size() - 1)(rng)];
    } else {
      try {
        a = greedy_policy_step(value, r.final_state);
      } catch (const NoActionsAvailable&) {
        break;
      }
    }
    r.final_state = apply_action(r.final_state, a);
    r.actions.push_back(a);
    ++r.steps;
  }
  return r;
}

Rollout greedy_rollout(const ValueFunction& value, const Task& task, const WorldState& start, int max_steps,
                       ArchVariant variant) {
  std::mt19937_64 unused(0);
  return exploring_rollout(value, task, start, max_steps, 0.0, unused, variant);
}

std::vector<PieceKind> sample_discovery_kinds(const Task& task, const DiscoveryConfig& config,
                                              std::mt19937_64& rng) {
  std::vector<PieceKind> kinds;
  if (task.kind() == Task::Kind::kTower) {
    for (const auto& p : task.instances().front().pieces) kinds.emplace_back(p.length, p.color);
    std::shuffle(kinds.begin(), kinds.end(), rng);
    return kinds;
  }
  const int lo = std::max(1, config.min_primitives);
  const int hi = std::min(kMaxPrimitives, std::max(lo, config.max_primitives));
  const int size = std::uniform_int_distribution<int>(lo, hi)(rng);
  // (cubes, 2U beams, 3U beams) with at least one 3U beam.
  std::vector<std::array<int, 3>> multisets;
  for (int c3 = 1; c3 <= size; ++c3) {
    for (int c2 = 0; c2 + c3 <= size; ++c2) multisets.push_back({size - c2 - c3, c2, c3});
  }
  const auto counts = multisets[std::uniform_int_distribution<std::size_t>(0, multisets.size() - 1)(rng)];
  for (int len = 1; len <= 3; ++len) {
    for (int k = 0; k < counts[static_cast<std::size_t>(len - 1)]; ++k) {
      kinds.emplace_back(len, arch_piece_color(len));
    }
  }
  return kinds;
}

std::vector<CategoryInstance> discover_instances(const ValueFunction& value, const Task& task,
                                                 const DiscoveryConfig& config, std::uint64_t seed) {
  std::vector<CategoryInstance> found;
  for (int attempt = 0; attempt < config.attempts; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    const auto kinds = sample_discovery_kinds(task, config, rng);
    WorldState start;
    try {
      start = scatter(kinds, WorldState({}, task.site()), rng);
    } catch (const std::exception&) {
      continue;  // no room on the table for this multiset
    }
    const Rollout r = exploring_rollout(value, task, start, config.max_steps, config.epsilon, rng);
    if (!r.success) continue;
    auto inst = task.extract_instance(r.final_state);
    if (!inst) continue;
    const bool known = std::any_of(found.begin(), found.end(),
                                   [&](const CategoryInstance& c) { return c.id == inst->id; });
    if (!known) found.push_back(std::move(*inst));
  }
  return found;
}

double self_check(const ValueFunction& value, const std::vector<CategoryInstance>& instances, const Task& task,
                  int episodes, int max_steps, std::uint64_t seed) {
  if (episodes <= 0 || instances.empty()) return 1.0;
  int ok = 0;
  for (int e = 0; e < episodes; ++e) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(e)));
    const WorldState start = task.scatter_instance(instances[static_cast<std::size_t>(e) % instances.size()], rng);
    ok += greedy_rollout(value, task, start, max_steps).success ? 1 : 0;
  }
  return static_cast<double>(ok) / episodes;
}

LoopResult run_training_loop(const std::vector<CategoryInstance>& inputs, const Task& task,
                             const LoopConfig& config, std::uint64_t seed,
                             const std::function<void(const RoundMetrics&)>& log) {
  if (inputs.empty()) throw std::invalid_argument("run_training_loop needs an input instance");
  for (const auto& inst : inputs) {
    if (!task.is_goal(instantiate(inst, task.site()))) throw NotAnInstance();
  }
  LoopResult result;
  result.instances = inputs;
  for (int round = 0; round < config.rounds; ++round) {
    RoundMetrics m;
    m.round = round;
    m.instances_used = result.instances.size();
    const auto r = static_cast<std::uint64_t>(round);
    const ValueDataset data = build_value_dataset(result.instances, task, config.data, mix_seed(seed, 3 * r));
    m.raw_pairs = data.records.size();
    m.unique_pairs = data.size();
    std::optional<ValueNet> best;
    for (int attempt = 0;; ++attempt) {
      try {
        TrainResult t = train_value(data, config.train, mix_seed(seed, 3 * r + 1 + 1000u * attempt));
        const double rate = config.self_check_episodes > 0
                                ? self_check(NetValue(t.net), result.instances, task, config.self_check_episodes,
                                             config.discovery.max_steps, mix_seed(seed, 3 * r + 1000u * attempt))
                                : 1.0;
        if (!best || rate > m.self_check) {
          m.final_loss = t.epoch_loss.empty() ? 0.0 : t.epoch_loss.back();
          m.final_mse = t.final_mse;
          m.self_check = rate;
          best = std::move(t.net);
        }
      } catch (const TrainingDiverged&) {
        if (attempt >= config.max_retries && !best) throw;
      }
      if ((best && m.self_check >= config.self_check_min) || attempt >= config.max_retries) break;
      ++m.retries;
    }
    result.net = std::move(*best);
    const auto found = discover_instances(NetValue(result.net), task, config.discovery, mix_seed(seed, 3 * r + 2));
    for (const auto& inst : found) {
      const bool known = std::any_of(result.instances.begin(), result.instances.end(),
                                     [&](const CategoryInstance& c) { return c.id == inst.id; });
      if (!known) {
        result.instances.push_back(inst);
        ++m.discovered;
      }
    }
    m.known_after = result.instances.size();
    result.rounds.push_back(m);
    if (log) log(m);
  }
  return result;
}

}  // namespace assembly
