#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "assembly/harness.hpp"
#include "assembly/io.hpp"

namespace assembly {

namespace {

using ojson = nlohmann::ordered_json;

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> sets;
  std::string task;
  int height = 0;
  int cubes = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file (unknown keys are rejected)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out", c.out, "Output file or directory");
  cmd->add_option("--set", c.sets, "Override a config entry: key.path=json");
  cmd->add_option("--task", c.task, "arch | tower | full task name (arch3, arch3,4,5, tower5)");
  cmd->add_option("--height", c.height, "Arch height in U");
  cmd->add_option("--cubes", c.cubes, "Tower cube count");
}

ojson make_config(const Common& c) {
  ojson user;
  if (!c.config_path.empty()) {
    try {
      user = ojson::parse(read_text(c.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  ojson config = resolve_config(user);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.task.empty()) {
    std::string name = c.task;
    if (name == "arch") name += std::to_string(c.height > 0 ? c.height : 3);
    if (name == "tower") name += std::to_string(c.cubes > 0 ? c.cubes : 3);
    config["task"] = name;
  } else if (c.height > 0) {
    config["task"] = "arch" + std::to_string(c.height);
  } else if (c.cubes > 0) {
    config["task"] = "tower" + std::to_string(c.cubes);
  }
  return config;
}

void write_json(const std::filesystem::path& path, const ojson& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, dump_fixed(j) + "\n");
}

ojson with_stamp(const Experiment& exp, ojson body) {
  ojson j = exp.stamp();
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = it.value();
  return j;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::vector<std::string> parse_word_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

ojson metrics_json(const RoundMetrics& m) {
  return {{"round", m.round},         {"instances_used", m.instances_used}, {"raw_pairs", m.raw_pairs},
          {"unique_pairs", m.unique_pairs}, {"final_loss", m.final_loss}, {"final_mse", m.final_mse},
          {"discovered", m.discovered}, {"known_after", m.known_after},   {"retries", m.retries},
          {"self_check", m.self_check}};
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

/// Runs the value-policy loop; progress goes to `log` only.
LoopResult train(const Experiment& exp, const Task& task, std::uint64_t seed, std::ostream& log) {
  const Stopwatch clock;
  return run_training_loop(exp.initial_instances(task), task, exp.loop(), seed, [&](const RoundMetrics& m) {
    char line[256];
    std::snprintf(line, sizeof line, "[%s] round %d: %zu instances, %zu pairs, mse %.2e, self-check %.2f (%d retries), +%zu discovered (%.0fs)\n",
                  task.name().c_str(), m.round, m.instances_used, m.raw_pairs, m.final_mse, m.self_check, m.retries,
                  m.discovered, clock.seconds());
    log << line << std::flush;
  });
}

// ---------------------------------------------------------------------------

int cmd_enumerate(const Experiment& exp, const Common& c, std::ostream& out) {
  const Task task = exp.task();
  ojson counts = ojson::object();
  if (task.kind() == Task::Kind::kArch) {
    for (int h : task.heights()) counts[std::to_string(h)] = enumerate_category(ArchSpec{h}).size();
  }
  ojson summary = {{"task", task.name()}, {"count", task.instances().size()}, {"by_height", counts}};
  out << dump_fixed(summary) << '\n';
  if (!c.out.empty()) {
    ojson insts = ojson::array();
    for (const auto& i : task.instances()) insts.push_back(to_json(i));
    summary["instances"] = std::move(insts);
    write_json(c.out, with_stamp(exp, summary));
  }
  return 0;
}

const CategoryInstance& pick_instance(const Task& task, const std::string& id) {
  if (id.empty()) return task.instances().front();
  const CategoryInstance* inst = task.find_instance(id);
  if (inst == nullptr) throw std::invalid_argument("no instance '" + id + "' in " + task.name());
  return *inst;
}

int cmd_unmake(const Experiment& exp, const Common& c, const std::string& instance_id, std::ostream& out) {
  const Task task = exp.task();
  const CategoryInstance& inst = pick_instance(task, instance_id);
  const UnmakeConfig cfg = exp.unmake();
  std::mt19937_64 rng(mix_seed(exp.seed(), 0));
  const DisassemblyGraph g = unmake(instantiate(inst, task.site()), task, cfg, rng);
  ojson summary = {{"task", task.name()},
                   {"instance", inst.id},
                   {"nodes", g.size()},
                   {"max_depth", g.max_depth()},
                   {"truncated", g.truncated()}};
  out << dump_fixed(summary) << '\n';
  if (c.out.empty()) return 0;
  const std::filesystem::path dir = c.out;
  ojson nodes = ojson::array();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const GraphNode& n = g.nodes()[i];
    ojson actions = ojson::array();
    for (const auto& a : n.inverse_actions) actions.push_back(to_json(a));
    nodes.push_back({{"index", i},
                     {"depth", n.depth},
                     {"value_bound", n.value_bound},
                     {"key", n.key.str()},
                     {"state", to_json(n.state)},
                     {"inverse_actions", std::move(actions)},
                     {"parents", n.parents}});
  }
  summary["graph"] = std::move(nodes);
  write_json(dir / "graph.json", with_stamp(exp, summary));

  const int paths = exp.config().at("unmake").at("paths_per_instance").get<int>();
  const StateActionsDataset dmu = build_dmu({inst}, task, paths, exp.seed(), cfg);
  std::string lines;
  for (const auto& e : dmu.entries) {
    ojson j = to_json(e);
    j["meta"]["config_hash"] = exp.hash();
    j["meta"]["seed"] = exp.seed();
    lines += dump_fixed(j) + "\n";
  }
  write_text(dir / "dmu.jsonl", lines);
  return 0;
}

int cmd_train_value(const Experiment& exp, const Common& c, std::ostream& out, std::ostream& log) {
  const Task task = exp.task();
  const LoopResult res = train(exp, task, exp.seed(), log);
  ojson rounds = ojson::array();
  for (const auto& m : res.rounds) rounds.push_back(metrics_json(m));
  ojson insts = ojson::array();
  for (const auto& i : res.instances) insts.push_back(to_json(i));
  const ojson report = with_stamp(exp, {{"task", task.name()}, {"rounds", rounds}, {"instances", insts}});
  out << dump_fixed({{"task", task.name()}, {"instances", res.instances.size()}, {"rounds", res.rounds.size()}})
      << '\n';
  if (!c.out.empty()) {
    const std::filesystem::path dir = c.out;
    std::filesystem::create_directories(dir);
    res.net.save(dir / "value.ckpt", dump_fixed(with_stamp(exp, {{"task", task.name()}})));
    write_json(dir / "metrics.json", report);
  }
  return 0;
}

int cmd_steps_table(const Experiment& exp, const Common& c, const std::vector<std::string>& value_paths,
                    std::ostream& out, std::ostream& log) {
  const StepsTableConfig cfg = exp.steps_table();
  const std::filesystem::path dir = c.out;
  if (!c.out.empty()) std::filesystem::create_directories(dir);
  std::map<int, std::filesystem::path> given;
  for (const auto& v : value_paths) {
    const auto eq = v.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--value expects H=checkpoint");
    given[std::stoi(v.substr(0, eq))] = v.substr(eq + 1);
  }
  std::map<int, ValueNet> nets;
  ojson training = ojson::object();
  const bool need_ours = std::find(cfg.methods.begin(), cfg.methods.end(), "ours") != cfg.methods.end();
  for (int h : cfg.heights) {
    if (!need_ours) break;
    if (given.count(h)) {
      nets.emplace(h, ValueNet::load(given[h]));
      continue;
    }
    const Task task = Task::arch(h);
    LoopResult res = train(exp, task, mix_seed(exp.seed(), 100 + static_cast<std::uint64_t>(h)), log);
    ojson rounds = ojson::array();
    for (const auto& m : res.rounds) rounds.push_back(metrics_json(m));
    training[std::to_string(h)] = {{"rounds", rounds}, {"instances", res.instances.size()}};
    if (!c.out.empty()) {
      res.net.save(dir / ("value_arch" + std::to_string(h) + ".ckpt"),
                   dump_fixed(with_stamp(exp, {{"task", task.name()}})));
    }
    nets.emplace(h, std::move(res.net));
  }
  std::map<int, const ValueNet*> ptrs;
  for (const auto& [h, n] : nets) ptrs[h] = &n;

  const Stopwatch clock;
  const StepsTable table = steps_table(cfg, ptrs, exp.seed(), [&](const StepsCell& cell) {
    char line[200];
    std::snprintf(line, sizeof line, "[steps] %dU %-6s mean %.1f std %.1f success %d/%zu (%.0fs)\n", cell.height,
                  cell.method.c_str(), cell.mean, cell.std, cell.successes, cell.steps.size(), clock.seconds());
    log << line << std::flush;
  });

  // CSV rows carry the stamp so the file stands alone.
  std::string csv = steps_table_csv(table);
  std::string stamped;
  std::stringstream ss(csv);
  std::string row;
  bool header = true;
  while (std::getline(ss, row)) {
    stamped += row + (header ? ",config_hash,seed\n" : "," + exp.hash() + "," + std::to_string(exp.seed()) + "\n");
    header = false;
  }
  out << stamped;
  if (!c.out.empty()) {
    write_text(dir / "steps_table.csv", stamped);
    ojson j = with_stamp(exp, to_json(table));
    j["training"] = training;
    write_json(dir / "steps_table.json", j);
  }
  return 0;
}

std::vector<CategoryInstance> load_instances(const std::string& path) {
  const auto j = nlohmann::json::parse(read_text(path));
  std::vector<CategoryInstance> out;
  for (const auto& i : j.at("instances")) out.push_back(instance_from_json(i));
  if (out.empty()) throw std::invalid_argument("no instances in " + path);
  return out;
}

int cmd_gen_policy_data(const Experiment& exp, const Common& c, const std::string& instances_path,
                        std::ostream& out) {
  if (c.out.empty()) throw std::invalid_argument("gen-policy-data needs --out DIR");
  const Task task = exp.task();
  const std::vector<CategoryInstance> instances = instances_path.empty() ? task.instances() : load_instances(instances_path);
  const auto& pd = exp.config().at("policy_data");
  StateActionsDataset dmu = build_dmu(instances, task, pd.at("paths_per_instance").get<int>(), exp.seed(), exp.unmake());
  const auto max_states = pd.at("max_states").get<std::size_t>();
  if (max_states > 0 && dmu.entries.size() > max_states) dmu.entries.resize(max_states);
  const std::filesystem::path dir = c.out;
  std::filesystem::create_directories(dir);
  std::string lines;
  for (const auto& e : dmu.entries) {
    ojson j = to_json(e);
    j["meta"]["config_hash"] = exp.hash();
    j["meta"]["seed"] = exp.seed();
    lines += dump_fixed(j) + "\n";
  }
  write_text(dir / "dmu.jsonl", lines);
  const std::size_t n = write_dpi(dmu, task, exp.policy_data(), exp.seed(), dir, exp.stamp());
  out << dump_fixed({{"task", task.name()}, {"dmu_states", dmu.entries.size()}, {"samples", n}}) << '\n';
  return 0;
}

int cmd_render(const Experiment& exp, const Common& c, const std::string& state_path, const std::string& instance_id,
               const std::string& phase, int held, std::ostream& out) {
  if (c.out.empty()) throw std::invalid_argument("render needs --out STEM");
  const Task task = exp.task();
  WorldState s;
  if (!state_path.empty()) {
    s = world_from_json(nlohmann::json::parse(read_text(state_path)));
  } else if (!instance_id.empty()) {
    s = instantiate(pick_instance(task, instance_id), task.site());
  } else {
    s = eval_episode(task, exp.seed(), 0).start;
  }
  const Phase p = phase_from_string(phase);
  std::optional<int> held_id;
  if (p == Phase::kPlace) {
    if (held < 0) throw std::invalid_argument("place phase needs --held ID");
    held_id = held;
  }
  const Observation obs = render(s, p, held_id, exp.camera());
  const std::filesystem::path stem = c.out;
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const ObservationFiles f = write_observation(obs, stem, exp.camera(), exp.stamp());
  out << dump_fixed({{"depth_path", f.depth.string()}, {"seg_path", f.seg.string()}}) << '\n';
  return 0;
}

EvalConfig eval_config(const Experiment& exp) {
  EvalConfig e;
  e.episodes = exp.config().at("eval").at("episodes").get<int>();
  e.max_steps = exp.config().at("eval").at("max_steps").get<int>();
  return e;
}

int cmd_serve_eval(const Experiment& exp, const Common& c, std::istream& in, std::ostream& out, std::ostream& err) {
  if (c.out.empty()) throw std::invalid_argument("serve-eval needs --out DIR for observations");
  EvalConfig e = eval_config(exp);
  const std::filesystem::path dir = c.out;
  e.obs_dir = dir / "obs";
  EvalSession session(exp.task(), e, exp.seed(), exp.camera(), exp.grid());
  const int status = serve(session, in, out);
  ojson episodes_json = ojson::array();
  for (const auto& r : session.results()) {
    episodes_json.push_back({{"success", r.success}, {"steps", r.steps}, {"error", r.error}});
  }
  ojson report = with_stamp(exp, session.summary());
  report["complete"] = status == 0;
  report["results"] = episodes_json;
  write_json(dir / "report.json", report);
  if (status != 0) {
    err << dump_fixed({{"error", "ProtocolError"}, {"message", "input closed before the last episode ended"}}) << '\n';
  }
  return status;
}

int cmd_eval_oracle(const Experiment& exp, const Common& c, bool write_obs, std::ostream& out) {
  EvalConfig e = eval_config(exp);
  if (write_obs) {
    if (c.out.empty()) throw std::invalid_argument("--observations needs --out DIR");
    e.obs_dir = std::filesystem::path(c.out) / "obs";
  }
  const HeatmapGrid grid = exp.grid();
  EvalSession session(exp.task(), e, exp.seed(), exp.camera(), grid);
  session.start();
  while (!session.finished()) {
    // round trip through text, as a separate client would
    session.handle(nlohmann::json::parse(dump_fixed(oracle_reply(session, grid))));
  }
  const ojson summary = session.summary();
  out << dump_fixed(summary) << '\n';
  if (!c.out.empty()) {
    ojson report = with_stamp(exp, summary);
    ojson results = ojson::array();
    for (const auto& r : session.results()) results.push_back({{"success", r.success}, {"steps", r.steps}});
    report["results"] = results;
    write_json(std::filesystem::path(c.out) / "report.json", report);
  }
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const UnsupportedHeight*>(&e)) return "UnsupportedHeight";
  if (dynamic_cast<const NotAnInstance*>(&e)) return "NotAnInstance";
  if (dynamic_cast<const HeldNotInState*>(&e)) return "HeldNotInState";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "TrainingDiverged";
  if (dynamic_cast<const ActionError*>(&e)) return "ActionError";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "InvalidArgument";
  return "RuntimeError";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block assembly toolkit: categories, disassembly data, value learning, baselines, policy data."};
  app.name("assembly");
  app.require_subcommand(1);

  Common c;
  std::string instance_id, state_path, phase = "pick", instances_path, heights, methods;
  std::vector<std::string> value_paths;
  int held = -1, episodes = 0, max_steps = 0;
  bool write_obs = false;

  auto* enumerate = app.add_subcommand("enumerate", "List the instances of a category");
  auto* unmake_cmd = app.add_subcommand("unmake", "Disassemble an instance; write the graph and D_mu");
  unmake_cmd->add_option("--instance", instance_id, "Instance id (default: the first)");
  auto* train_cmd = app.add_subcommand("train-value", "Run the value-learning and discovery loop");
  auto* steps = app.add_subcommand("steps-table", "Steps-to-build comparison of random, MCTS, ours, oracle");
  steps->add_option("--heights", heights, "Comma-separated arch heights");
  steps->add_option("--methods", methods, "Comma-separated methods");
  steps->add_option("--episodes", episodes, "Episodes per cell");
  steps->add_option("--value", value_paths, "Use a trained checkpoint: H=path");
  auto* gen = app.add_subcommand("gen-policy-data", "Build the pick/place heatmap dataset");
  gen->add_option("--instances", instances_path, "JSON file with an 'instances' list (default: the category)");
  auto* render_cmd = app.add_subcommand("render", "Render depth and segmentation of a state");
  render_cmd->add_option("--state", state_path, "World state JSON");
  render_cmd->add_option("--instance", instance_id, "Render an assembled instance");
  render_cmd->add_option("--phase", phase, "pick | place");
  render_cmd->add_option("--held", held, "Held primitive id (place phase)");
  auto* serve_cmd = app.add_subcommand("serve-eval", "Closed-loop evaluation server on stdin/stdout");
  auto* oracle_cmd = app.add_subcommand("eval-oracle-policy", "Closed loop driven by ground-truth heatmaps");
  for (auto* cmd : {serve_cmd, oracle_cmd}) {
    cmd->add_option("--episodes", episodes, "Episodes");
    cmd->add_option("--max-steps", max_steps, "Pick/place pairs per episode");
  }
  oracle_cmd->add_flag("--observations", write_obs, "Also render and write every observation");
  for (auto* cmd : {enumerate, unmake_cmd, train_cmd, steps, gen, render_cmd, serve_cmd, oracle_cmd}) add_common(cmd, c);

  std::vector<const char*> argv{"assembly"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << dump_fixed({{"error", "UsageError"}, {"message", e.what()}}) << '\n';
    return 2;
  }

  try {
    ojson config = make_config(c);
    if (steps->parsed()) {
      if (!heights.empty()) config["search"]["heights"] = parse_int_list(heights);
      if (!methods.empty()) config["search"]["methods"] = parse_word_list(methods);
      if (episodes > 0) config["search"]["episodes"] = episodes;
    }
    if (serve_cmd->parsed() || oracle_cmd->parsed()) {
      if (episodes > 0) config["eval"]["episodes"] = episodes;
      if (max_steps > 0) config["eval"]["max_steps"] = max_steps;
    }
    const Experiment exp(std::move(config), c.seed);
    if (steps->parsed()) return cmd_steps_table(exp, c, value_paths, out, err);
    if (enumerate->parsed()) return cmd_enumerate(exp, c, out);
    if (unmake_cmd->parsed()) return cmd_unmake(exp, c, instance_id, out);
    if (train_cmd->parsed()) return cmd_train_value(exp, c, out, err);
    if (gen->parsed()) return cmd_gen_policy_data(exp, c, instances_path, out);
    if (render_cmd->parsed()) return cmd_render(exp, c, state_path, instance_id, phase, held, out);
    if (serve_cmd->parsed()) return cmd_serve_eval(exp, c, in, out, err);
    if (oracle_cmd->parsed()) return cmd_eval_oracle(exp, c, write_obs, out);
  } catch (const std::exception& e) {
    err << dump_fixed({{"error", error_kind(e)}, {"message", e.what()}}) << '\n';
    return dynamic_cast<const ConfigError*>(&e) ? 2 : 1;
  }
  return 1;
}

}  // namespace assembly
