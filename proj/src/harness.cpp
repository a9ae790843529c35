#include "assembly/harness.hpp"

#include <istream>
#include <ostream>
#include <random>

#include "assembly/io.hpp"

namespace assembly {

using ojson = nlohmann::ordered_json;

nlohmann::ordered_json default_config() {
  const CameraModel cam;
  const HeatmapGrid grid;
  const MctsConfig mcts;
  const ValueDataConfig data;
  const TrainConfig train;
  const DiscoveryConfig disc;
  const LoopConfig loop;
  const UnmakeConfig un;
  ojson j;
  j["task"] = "arch3";
  j["gamma"] = un.gamma;
  j["unmake"] = {{"node_budget", un.node_budget},
                 {"table_samples", un.table_samples},
                 {"anchored_leaf", un.anchored_leaf},
                 {"paths_per_instance", 1}};
  j["value"] = {{"rounds", loop.rounds},
                {"initial_instance", ""},
                {"expansions_per_state", data.expansions_per_state},
                {"expansion_depth", data.expansion_depth},
                {"min_pairs", data.min_pairs},
                {"max_passes", data.max_passes},
                {"epochs", train.epochs},
                {"batch", train.batch},
                {"lr", train.adam.lr},
                {"max_retries", loop.max_retries},
                {"self_check_episodes", loop.self_check_episodes},
                {"self_check_min", loop.self_check_min}};
  j["discovery"] = {{"attempts", disc.attempts},
                    {"max_steps", disc.max_steps},
                    {"min_primitives", disc.min_primitives},
                    {"max_primitives", disc.max_primitives},
                    {"epsilon", disc.epsilon}};
  j["search"] = {{"heights", {3, 4, 5}},
                 {"methods", {"random", "mcts", "ours", "oracle"}},
                 {"episodes", 200},
                 {"max_env_steps", 2000000},
                 {"random_horizon", SearchBudget{}.random_horizon},
                 {"ours_max_steps", 4 * kMaxPrimitives},
                 {"mcts",
                  {{"simulations_per_move", mcts.simulations_per_move},
                   {"uct_c", mcts.uct_c},
                   {"rollout_depth", mcts.rollout_depth},
                   {"rollout_max", mcts.rollout_max},
                   {"restart_moves", mcts.restart_moves}}}};
  j["policy_data"] = {{"paths_per_instance", 1},
                      {"max_states", 0},
                      {"perturbations_per_state", 1},
                      {"bernoulli_p", 0.0},
                      {"extent_noise", 0.0}};
  j["heatmap"] = {{"sigma", grid.sigma}, {"nms_radius", grid.nms_radius}};
  j["camera"] = {{"fx", cam.fx},
                 {"fy", cam.fy},
                 {"cx", cam.cx},
                 {"cy", cam.cy},
                 {"eye_u", {cam.eye.x, cam.eye.y, cam.eye.z}},
                 {"target_u", {cam.target.x, cam.target.y, cam.target.z}}};
  j["eval"] = {{"episodes", 50}, {"max_steps", 2 * kMaxPrimitives}};
  return j;
}

namespace {

bool type_matches(const ojson& slot, const ojson& value) {
  switch (slot.type()) {
    case ojson::value_t::object: return value.is_object();
    case ojson::value_t::boolean: return value.is_boolean();
    case ojson::value_t::number_integer:
    case ojson::value_t::number_unsigned: return value.is_number_integer();
    case ojson::value_t::number_float: return value.is_number();
    case ojson::value_t::string: return value.is_string();
    case ojson::value_t::array: {
      if (!value.is_array()) return false;
      if (slot.empty()) return true;
      for (const auto& v : value) {
        if (!type_matches(slot.front(), v)) return false;
      }
      return true;
    }
    default: return false;
  }
}

void assign(ojson& slot, const ojson& value, const std::string& path) {
  if (!type_matches(slot, value)) {
    throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                      value.type_name());
  }
  if (slot.is_object()) {
    for (auto it = value.begin(); it != value.end(); ++it) {
      const std::string p = path.empty() ? it.key() : path + "." + it.key();
      if (!slot.contains(it.key())) throw ConfigError("unknown config key '" + p + "'");
      assign(slot[it.key()], it.value(), p);
    }
  } else if (slot.is_number_float()) {
    slot = value.get<double>();
  } else {
    slot = value;
  }
}

}  // namespace

nlohmann::ordered_json resolve_config(const nlohmann::ordered_json& user) {
  ojson config = default_config();
  if (user.is_null()) return config;
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  assign(config, user, "");
  return config;
}

void set_config_value(nlohmann::ordered_json& config, const std::string& dotted, const std::string& literal) {
  ojson value;
  try {
    value = ojson::parse(literal);
  } catch (const nlohmann::json::parse_error&) {
    value = literal;  // bare words are strings
  }
  ojson* slot = &config;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!slot->is_object() || !slot->contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
    slot = &(*slot)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  assign(*slot, value, dotted);
}

Experiment::Experiment(nlohmann::ordered_json resolved, std::uint64_t seed)
    : config_(std::move(resolved)), seed_(seed), hash_(hex64(fnv1a64(dump_fixed(config_)))) {}

nlohmann::ordered_json Experiment::stamp() const {
  return {{"config_hash", hash_}, {"seed", seed_}, {"schema_version", kSchemaVersion}};
}

Task Experiment::task() const {
  try {
    return Task::parse(config_.at("task").get<std::string>());
  } catch (const UnsupportedHeight&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

UnmakeConfig Experiment::unmake() const {
  UnmakeConfig u;
  const auto& j = config_.at("unmake");
  u.gamma = config_.at("gamma").get<double>();
  u.node_budget = j.at("node_budget").get<std::size_t>();
  u.table_samples = j.at("table_samples").get<int>();
  u.anchored_leaf = j.at("anchored_leaf").get<bool>();
  return u;
}

LoopConfig Experiment::loop() const {
  LoopConfig l;
  const auto& v = config_.at("value");
  const auto& d = config_.at("discovery");
  l.rounds = v.at("rounds").get<int>();
  l.max_retries = v.at("max_retries").get<int>();
  l.self_check_episodes = v.at("self_check_episodes").get<int>();
  l.self_check_min = v.at("self_check_min").get<double>();
  l.data.gamma = config_.at("gamma").get<double>();
  l.data.expansions_per_state = v.at("expansions_per_state").get<int>();
  l.data.expansion_depth = v.at("expansion_depth").get<int>();
  l.data.min_pairs = v.at("min_pairs").get<std::size_t>();
  l.data.max_passes = v.at("max_passes").get<int>();
  l.data.unmake = unmake();
  l.train.epochs = v.at("epochs").get<int>();
  l.train.batch = v.at("batch").get<int>();
  l.train.adam.lr = v.at("lr").get<double>();
  l.discovery.attempts = d.at("attempts").get<int>();
  l.discovery.max_steps = d.at("max_steps").get<int>();
  l.discovery.min_primitives = d.at("min_primitives").get<int>();
  l.discovery.max_primitives = d.at("max_primitives").get<int>();
  l.discovery.epsilon = d.at("epsilon").get<double>();
  return l;
}

std::vector<CategoryInstance> Experiment::initial_instances(const Task& task) const {
  const std::string id = config_.at("value").at("initial_instance").get<std::string>();
  if (id.empty()) return {task.instances().front()};
  const CategoryInstance* inst = task.find_instance(id);
  if (inst == nullptr) throw ConfigError("value.initial_instance '" + id + "' is not an instance of " + task.name());
  return {*inst};
}

StepsTableConfig Experiment::steps_table() const {
  StepsTableConfig c;
  const auto& s = config_.at("search");
  c.heights = s.at("heights").get<std::vector<int>>();
  c.methods = s.at("methods").get<std::vector<std::string>>();
  c.episodes = s.at("episodes").get<int>();
  c.ours_max_steps = s.at("ours_max_steps").get<int>();
  c.budget.max_env_steps = s.at("max_env_steps").get<long>();
  c.budget.random_horizon = s.at("random_horizon").get<int>();
  const auto& m = s.at("mcts");
  c.budget.mcts.simulations_per_move = m.at("simulations_per_move").get<int>();
  c.budget.mcts.uct_c = m.at("uct_c").get<double>();
  c.budget.mcts.rollout_depth = m.at("rollout_depth").get<int>();
  c.budget.mcts.rollout_max = m.at("rollout_max").get<bool>();
  c.budget.mcts.restart_moves = m.at("restart_moves").get<int>();
  for (const auto& method : c.methods) {
    if (method != "random" && method != "mcts" && method != "ours" && method != "oracle") {
      throw ConfigError("search.methods: unknown method '" + method + "'");
    }
  }
  return c;
}

PolicyDataConfig Experiment::policy_data() const {
  PolicyDataConfig p;
  const auto& j = config_.at("policy_data");
  p.perturbations_per_state = j.at("perturbations_per_state").get<int>();
  p.augment.bernoulli_p = j.at("bernoulli_p").get<double>();
  p.augment.extent_noise = j.at("extent_noise").get<double>();
  p.camera = camera();
  p.grid = grid();
  return p;
}

CameraModel Experiment::camera() const {
  CameraModel c;
  const auto& j = config_.at("camera");
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  const auto e = j.at("eye_u").get<std::vector<double>>();
  const auto t = j.at("target_u").get<std::vector<double>>();
  if (e.size() != 3 || t.size() != 3) throw ConfigError("camera.eye_u and camera.target_u need 3 numbers");
  c.eye = {e[0], e[1], e[2]};
  c.target = {t[0], t[1], t[2]};
  return c;
}

HeatmapGrid Experiment::grid() const {
  HeatmapGrid g;
  g.sigma = config_.at("heatmap").at("sigma").get<double>();
  g.nms_radius = config_.at("heatmap").at("nms_radius").get<int>();
  return g;
}

// ---------------------------------------------------------------------------

EvalEpisode eval_episode(const Task& task, std::uint64_t seed, int episode) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(episode)));
  const auto& instances = task.instances();
  const CategoryInstance& inst = instances[std::uniform_int_distribution<std::size_t>(0, instances.size() - 1)(rng)];
  return {inst, task.scatter_instance(inst, rng)};
}

EvalSession::EvalSession(Task task, EvalConfig config, std::uint64_t seed, CameraModel camera, HeatmapGrid grid)
    : task_(std::move(task)), config_(std::move(config)), seed_(seed), camera_(camera), grid_(grid) {
  if (config_.episodes < 1) throw std::invalid_argument("evaluation needs at least one episode");
  if (!config_.obs_dir.empty()) std::filesystem::create_directories(config_.obs_dir);
}

void EvalSession::begin_episode() {
  episode_ = eval_episode(task_, seed_, episode_index_);
  state_ = episode_.start;
  phase_ = Phase::kPick;
  held_.reset();
  steps_ = 0;
}

nlohmann::ordered_json EvalSession::observe() {
  ojson msg;
  msg["type"] = "obs";
  msg["episode"] = episode_index_;
  msg["step"] = steps_;
  msg["phase"] = std::string(to_string(phase_));
  std::string depth_path, seg_path;
  if (!config_.obs_dir.empty()) {
    char stem[64];
    std::snprintf(stem, sizeof stem, "e%04d_s%03d_%s", episode_index_, steps_, std::string(to_string(phase_)).c_str());
    const Observation obs = render(state_, phase_, held_, camera_);
    const ObservationFiles f = write_observation(obs, config_.obs_dir / stem, camera_);
    depth_path = f.depth.string();
    seg_path = f.seg.string();
  }
  msg["depth_path"] = depth_path;
  msg["seg_path"] = seg_path;
  return msg;
}

std::vector<nlohmann::ordered_json> EvalSession::start() {
  if (started_) throw std::logic_error("session already started");
  started_ = true;
  begin_episode();
  return {observe()};
}

std::vector<nlohmann::ordered_json> EvalSession::finish_episode(bool success, const std::string& error) {
  results_.push_back({success, steps_, error});
  ojson result;
  result["type"] = "result";
  result["episode"] = episode_index_;
  result["success"] = success;
  result["steps"] = steps_;
  if (!error.empty()) result["error"] = error;
  std::vector<ojson> out{result};
  ++episode_index_;
  if (episode_index_ == config_.episodes) {
    finished_ = true;
    out.push_back(summary());
  } else {
    begin_episode();
    out.push_back(observe());
  }
  return out;
}

std::vector<nlohmann::ordered_json> EvalSession::handle(const nlohmann::json& msg) {
  if (!started_ || finished_) throw std::logic_error("session is not running");
  // Protocol violations end the episode as a failure.
  if (!msg.is_object() || msg.value("type", "") != "action") return finish_episode(false, "expected an action message");
  if (!msg.contains("u") || !msg.contains("v") || !msg.at("u").is_number_integer() ||
      !msg.at("v").is_number_integer()) {
    return finish_episode(false, "action needs integer u and v");
  }
  const int u = msg.at("u").get<int>();
  const int v = msg.at("v").get<int>();
  if (u < 0 || v < 0 || u >= grid_.size || v >= grid_.size) return finish_episode(false, "u, v outside the grid");
  Orientation orientation = Orientation::kAlongX;
  if (msg.contains("orientation")) {
    const auto& o = msg.at("orientation");
    if (o.is_number_integer() && o.get<int>() >= 0 && o.get<int>() <= 2) {
      orientation = static_cast<Orientation>(o.get<int>());
    } else if (o.is_string() && (o == "x" || o == "y" || o == "z")) {
      orientation = orientation_from_string(o.get<std::string>());
    } else {
      return finish_episode(false, "orientation must be x, y, z or 0..2");
    }
  }
  const DecodedAction decoded{{u, v}, orientation, 1.0};

  if (phase_ == Phase::kPick) {
    try {
      held_ = snap_pick(state_, decoded, grid_);
      phase_ = Phase::kPlace;
      return {observe()};
    } catch (const NoNearbyPrimitive&) {
      ++steps_;  // a pick that grabs nothing still costs a step
    }
  } else {
    try {
      const AssemblyAction a = snap_place(state_, *held_, decoded, grid_);
      state_ = apply_action(state_, a);
    } catch (const NoNearbyPlacement&) {
    }
    ++steps_;
    phase_ = Phase::kPick;
    held_.reset();
    if (task_.is_goal(state_)) return finish_episode(true, "");
  }
  if (steps_ >= config_.max_steps) return finish_episode(false, "");
  return {observe()};
}

nlohmann::ordered_json EvalSession::summary() const {
  int successes = 0;
  long steps = 0;
  for (const auto& r : results_) {
    successes += r.success ? 1 : 0;
    steps += r.steps;
  }
  const double n = static_cast<double>(results_.size());
  ojson j;
  j["type"] = "summary";
  j["task"] = task_.name();
  j["episodes"] = results_.size();
  j["successes"] = successes;
  j["success_rate"] = n > 0 ? successes / n : 0.0;
  j["mean_steps"] = n > 0 ? static_cast<double>(steps) / n : 0.0;
  return j;
}

nlohmann::ordered_json oracle_reply(const EvalSession& session, const HeatmapGrid& grid) {
  std::vector<AssemblyAction> acts = expert_actions(session.state(), session.target());
  if (session.phase() == Phase::kPlace) {
    std::erase_if(acts, [&](const AssemblyAction& a) { return a.pick_id != *session.held(); });
  }
  ojson msg;
  msg["type"] = "action";
  if (acts.empty()) {
    msg["u"] = 0;
    msg["v"] = 0;
    msg["orientation"] = "x";
    return msg;
  }
  const Heatmap hm = encode_heatmap(heatmap_actions(session.state(), acts, session.phase()), grid);
  const DecodedAction d = decode_heatmap(hm, 1, grid).front();
  msg["u"] = d.cell.u;
  msg["v"] = d.cell.v;
  msg["orientation"] = std::string(to_string(d.orientation));
  return msg;
}

int serve(EvalSession& session, std::istream& in, std::ostream& out) {
  for (const auto& m : session.start()) out << dump_fixed(m) << '\n';
  out.flush();
  std::string line;
  while (!session.finished()) {
    if (!std::getline(in, line)) return 3;
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      msg = nullptr;  // treated as a protocol violation
    }
    for (const auto& m : session.handle(msg)) out << dump_fixed(m) << '\n';
    out.flush();
  }
  return 0;
}

}  // namespace assembly
