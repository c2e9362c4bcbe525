#include "kdqn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace kdqn::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

env::RoundaboutEnv::Config env_config(const RunConfig& rc, bool record_trace, bool debug) {
  env::RoundaboutEnv::Config ec;
  ec.scenario = rc.scenario;
  ec.planner = rc.planner;
  ec.inspector = rc.inspector;
  ec.mpc = rc.mpc;
  ec.ablation = rc.ablation;
  ec.record_trace = record_trace;
  ec.debug_checks = debug;
  return ec;
}

}  // namespace

uint64_t episode_seed(uint64_t run_seed, long episode) {
  return CounterRng::hash3(run_seed, 0x455049534f44ull, static_cast<uint64_t>(episode));
}

double Metrics::collision_rate(int window) const {
  if (rows.empty()) return 0.0;
  const size_t n = window < 0 ? rows.size() : std::min<size_t>(window, rows.size());
  size_t hits = 0;
  for (size_t i = rows.size() - n; i < rows.size(); ++i)
    if (rows[i].collision) ++hits;
  return static_cast<double>(hits) / static_cast<double>(n);
}

double Metrics::mean_speed(int window) const {
  if (rows.empty()) return 0.0;
  const size_t n = window < 0 ? rows.size() : std::min<size_t>(window, rows.size());
  double acc = 0.0;
  for (size_t i = rows.size() - n; i < rows.size(); ++i) acc += rows[i].mean_speed;
  return acc / static_cast<double>(n);
}

double Metrics::mean_return(int window) const {
  if (rows.empty()) return 0.0;
  const size_t n = window < 0 ? rows.size() : std::min<size_t>(window, rows.size());
  double acc = 0.0;
  for (size_t i = rows.size() - n; i < rows.size(); ++i) acc += rows[i].ret;
  return acc / static_cast<double>(n);
}

std::vector<double> Metrics::smooth(const std::vector<double>& xs, int window) {
  std::vector<double> out(xs.size(), 0.0);
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= static_cast<size_t>(window)) acc -= xs[i - window];
    const size_t n = std::min<size_t>(i + 1, window);
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

int matched_mlp_hidden(const KanArch& arch, int input_width, int out_dim) {
  kan::KanConfig kc;
  kc.widths = arch.widths;
  kc.widths[0] = input_width;
  kc.out_dim = out_dim;
  kc.grid.G = arch.grid_size;
  kc.grid.k = arch.spline_order;
  const kan::KanNetwork probe(kc, 0);
  const double target = static_cast<double>(probe.num_params());
  // Two hidden layers: params = in*H + H + H*H + H + H*out + out.
  const double b = input_width + 2 + out_dim;
  const double h = (-b + std::sqrt(b * b + 4.0 * (target - out_dim))) / 2.0;
  return std::max(4, static_cast<int>(std::floor(h)));
}

kan::QNetwork make_network(const RunConfig& config, uint64_t seed) {
  const int in = 5 + 6 * config.scenario.K;
  if (config.ablation == env::Ablation::MlpBaseline) {
    const int H = matched_mlp_hidden(config.arch, in, kNumActions);
    return kan::QNetwork(kan::MlpNetwork({in, H, H}, kNumActions, seed));
  }
  kan::KanConfig kc;
  kc.widths = config.arch.widths;
  kc.widths[0] = in;
  kc.out_dim = kNumActions;
  kc.grid.G = config.arch.grid_size;
  kc.grid.k = config.arch.spline_order;
  kc.lambda1 = config.arch.lambda1;
  kc.lambda2 = config.arch.lambda2;
  return kan::QNetwork(kan::KanNetwork(kc, seed));
}

namespace {

SeedResult train_one_seed(const RunConfig& rc, uint64_t seed) {
  env::RoundaboutEnv env(env_config(rc, false, false));
  agent::DqnAgent dqn(make_network(rc, seed), rc.train);
  agent::ReplayBuffer buffer(rc.train.capacity);
  CounterRng action_rng(seed, 0x414354);
  CounterRng sample_rng(seed, 0x53414d50);

  Metrics metrics;
  long env_steps = 0;
  for (long ep = 0; ep < rc.train.total_episodes; ++ep) {
    env::Observation obs = env.reset(episode_seed(seed, ep));
    EpisodeRow row;
    row.episode = ep;
    row.epsilon = rc.train.epsilon.at(env_steps);
    double speed_acc = 0.0;
    double loss_acc = 0.0;
    long loss_count = 0;
    bool done = false;
    while (!done) {
      const double eps = rc.train.epsilon.at(env_steps);
      const int a = dqn.select_action(obs, eps, action_rng);
      const env::StepResult sr = env.step(static_cast<Action>(a));
      agent::Transition t;
      t.s = obs;
      t.a = a;
      t.r = sr.reward;
      t.s_next = sr.obs;
      t.done = sr.info.collision || sr.info.arrived;
      buffer.push(std::move(t));
      obs = sr.obs;
      ++env_steps;
      ++row.steps;
      row.ret += sr.reward;
      speed_acc += env.world().ev().state.speed;
      done = sr.done;
      row.collision = row.collision || sr.info.collision;
      row.arrived = row.arrived || sr.info.arrived;

      if (static_cast<long>(buffer.inserted()) >= rc.train.warmup_transitions) {
        const auto batch = buffer.sample(rc.train.batch_size, sample_rng);
        const agent::UpdateReport rep = dqn.update(batch);
        loss_acc += rep.loss;
        ++loss_count;
        if (dqn.gradient_steps() % rc.train.target_sync_every == 0) dqn.sync_target();
      }
    }
    row.mean_speed = row.steps > 0 ? speed_acc / row.steps : 0.0;
    row.loss = loss_count > 0 ? loss_acc / static_cast<double>(loss_count) : 0.0;
    metrics.rows.push_back(row);

    if (rc.checkpoint_every > 0 && (ep + 1) % rc.checkpoint_every == 0) {
      kan::save_checkpoint(dqn.net(), rc.output_dir + "/ckpt_seed" + std::to_string(seed) +
                                          "_ep" + std::to_string(ep + 1) + ".bin");
    }
  }

  SeedResult result;
  result.seed = seed;
  result.metrics = std::move(metrics);
  result.checkpoint_path = rc.output_dir + "/ckpt_seed" + std::to_string(seed) + ".bin";
  result.metrics_csv = rc.output_dir + "/metrics_seed" + std::to_string(seed) + ".csv";
  kan::save_checkpoint(dqn.net(), result.checkpoint_path);
  write_metrics_csv(result.metrics, result.metrics_csv);
  return result;
}

}  // namespace

TrainResult train(const RunConfig& rc) {
  if (rc.seeds.empty()) throw std::invalid_argument("no seeds configured");
  fs::create_directories(rc.output_dir);

  TrainResult result;
  result.seeds.resize(rc.seeds.size());
  if (rc.parallel_seeds && rc.seeds.size() > 1) {
    std::vector<std::thread> workers;
    for (size_t i = 0; i < rc.seeds.size(); ++i)
      workers.emplace_back(
          [&, i]() { result.seeds[i] = train_one_seed(rc, rc.seeds[i]); });
    for (auto& t : workers) t.join();
  } else {
    for (size_t i = 0; i < rc.seeds.size(); ++i)
      result.seeds[i] = train_one_seed(rc, rc.seeds[i]);
  }

  result.manifest_path = rc.output_dir + "/manifest.json";
  std::ofstream mf(result.manifest_path);
  mf << config_to_json(rc) << "\n";
  return result;
}

Metrics evaluate(const std::string& checkpoint_path, const env::Scenario& scenario, int episodes,
                 const RunConfig& pipeline, const std::string& out_csv) {
  kan::QNetwork net = kan::load_checkpoint(checkpoint_path);
  RunConfig rc = pipeline;
  rc.scenario = scenario;
  env::RoundaboutEnv env(env_config(rc, false, false));
  if (net.input_width() != env.observation_size())
    throw std::runtime_error("checkpoint/scenario shape mismatch");

  Metrics metrics;
  for (int ep = 0; ep < episodes; ++ep) {
    env::Observation obs = env.reset(episode_seed(scenario.seed, ep));
    EpisodeRow row;
    row.episode = ep;
    double speed_acc = 0.0;
    bool done = false;
    while (!done) {
      const int a = agent::argmax_action(net.forward(obs));
      const env::StepResult sr = env.step(static_cast<Action>(a));
      obs = sr.obs;
      ++row.steps;
      row.ret += sr.reward;
      speed_acc += env.world().ev().state.speed;
      row.collision = row.collision || sr.info.collision;
      row.arrived = row.arrived || sr.info.arrived;
      done = sr.done;
    }
    row.mean_speed = row.steps > 0 ? speed_acc / row.steps : 0.0;
    metrics.rows.push_back(row);
  }
  if (!out_csv.empty()) write_metrics_csv(metrics, out_csv);
  return metrics;
}

void write_metrics_csv(const Metrics& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write metrics csv: " + path);
  f << "episode,steps,return,collision,arrived,mean_speed,epsilon,loss\n";
  for (const EpisodeRow& r : m.rows) {
    f << r.episode << ',' << r.steps << ',' << fmt(r.ret) << ',' << (r.collision ? 1 : 0) << ','
      << (r.arrived ? 1 : 0) << ',' << fmt(r.mean_speed) << ',' << fmt(r.epsilon) << ','
      << fmt(r.loss) << "\n";
  }
}

Metrics read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read metrics csv: " + path);
  Metrics m;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    EpisodeRow r;
    std::istringstream is(line);
    std::string tok;
    auto next = [&]() {
      std::getline(is, tok, ',');
      return tok;
    };
    r.episode = std::stol(next());
    r.steps = std::stoi(next());
    r.ret = std::stod(next());
    r.collision = next() == "1";
    r.arrived = next() == "1";
    r.mean_speed = std::stod(next());
    r.epsilon = std::stod(next());
    r.loss = std::stod(next());
    m.rows.push_back(r);
  }
  return m;
}

namespace {

// Minimal polyline SVG with a shaded +-1 std band.
void write_band_svg(const std::string& path, const std::string& title,
                    const std::vector<double>& mean, const std::vector<double>& sd) {
  const int W = 860, H = 360, ml = 60, mr = 20, mt = 30, mb = 40;
  double lo = 1e300, hi = -1e300;
  for (size_t i = 0; i < mean.size(); ++i) {
    lo = std::min(lo, mean[i] - sd[i]);
    hi = std::max(hi, mean[i] + sd[i]);
  }
  if (mean.empty()) {
    lo = 0;
    hi = 1;
  }
  if (hi - lo < 1e-12) {
    hi += 1;
    lo -= 1;
  }
  const double n = std::max<size_t>(mean.size(), 2) - 1;
  auto X = [&](size_t i) { return ml + (W - ml - mr) * (static_cast<double>(i) / n); };
  auto Y = [&](double v) { return H - mb - (H - mt - mb) * ((v - lo) / (hi - lo)); };

  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write svg: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title
    << "</text>\n";
  // Band polygon.
  if (!mean.empty()) {
    f << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\" points=\"";
    for (size_t i = 0; i < mean.size(); ++i) f << fmt(X(i)) << ',' << fmt(Y(mean[i] + sd[i])) << ' ';
    for (size_t i = mean.size(); i-- > 0;) f << fmt(X(i)) << ',' << fmt(Y(mean[i] - sd[i])) << ' ';
    f << "\"/>\n";
    f << "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < mean.size(); ++i) f << fmt(X(i)) << ',' << fmt(Y(mean[i])) << ' ';
    f << "\"/>\n";
  }
  // Axes.
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
    << H - mb << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << ml - 8 << "\" y=\"" << Y(lo) << "\" text-anchor=\"end\" font-size=\"11\">"
    << fmt(lo) << "</text>\n";
  f << "<text x=\"" << ml - 8 << "\" y=\"" << Y(hi) + 4
    << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(hi) << "</text>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\" font-size=\"11\">episode</text>\n";
  f << "</svg>\n";
}

}  // namespace

void report(const std::string& in_dir, const std::string& out_dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(in_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("metrics_seed", 0) == 0 && e.path().extension() == ".csv")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no metrics_seed*.csv files in " + in_dir);
  fs::create_directories(out_dir);

  std::vector<Metrics> per_seed;
  for (const auto& f : files) per_seed.push_back(read_metrics_csv(f));
  size_t n = per_seed.front().rows.size();
  for (const auto& m : per_seed) n = std::min(n, m.rows.size());

  auto collect = [&](auto getter) {
    std::vector<std::vector<double>> smoothed;
    for (const auto& m : per_seed) {
      std::vector<double> xs(n);
      for (size_t i = 0; i < n; ++i) xs[i] = getter(m.rows[i]);
      smoothed.push_back(Metrics::smooth(xs, 9));
    }
    std::vector<double> mean(n, 0.0), sd(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (const auto& xs : smoothed) acc += xs[i];
      mean[i] = acc / static_cast<double>(smoothed.size());
      double var = 0.0;
      for (const auto& xs : smoothed) var += (xs[i] - mean[i]) * (xs[i] - mean[i]);
      sd[i] = std::sqrt(var / static_cast<double>(smoothed.size()));
    }
    return std::pair{mean, sd};
  };

  auto [rm, rs] = collect([](const EpisodeRow& r) { return r.ret; });
  write_band_svg(out_dir + "/reward_curve.svg", "reward (window-9 smoothed)", rm, rs);
  auto [vm, vs] = collect([](const EpisodeRow& r) { return r.mean_speed; });
  write_band_svg(out_dir + "/speed_curve.svg", "mean speed m/s (window-9 smoothed)", vm, vs);
  auto [cm, cs] = collect([](const EpisodeRow& r) { return r.collision ? 1.0 : 0.0; });
  // Collision-rate curve uses a trailing-100 window instead of window 9.
  {
    std::vector<std::vector<double>> rates;
    for (const auto& m : per_seed) {
      std::vector<double> xs(n);
      for (size_t i = 0; i < n; ++i) xs[i] = m.rows[i].collision ? 1.0 : 0.0;
      rates.push_back(Metrics::smooth(xs, 100));
    }
    std::vector<double> mean(n, 0.0), sd(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (const auto& xs : rates) acc += xs[i];
      mean[i] = acc / rates.size();
      double var = 0.0;
      for (const auto& xs : rates) var += (xs[i] - mean[i]) * (xs[i] - mean[i]);
      sd[i] = std::sqrt(var / rates.size());
    }
    write_band_svg(out_dir + "/collision_rate.svg", "collision rate (trailing 100 episodes)",
                   mean, sd);
  }

  std::ofstream sf(out_dir + "/summary.csv");
  sf << "seed,episodes,collision_rate_pct_last100,avg_speed,final_window_reward\n";
  double cr = 0, sp = 0, rw = 0;
  for (size_t i = 0; i < per_seed.size(); ++i) {
    const Metrics& m = per_seed[i];
    sf << "seed_" << i << ',' << m.rows.size() << ',' << fmt(100.0 * m.collision_rate(100)) << ','
       << fmt(m.mean_speed()) << ',' << fmt(m.mean_return(100)) << "\n";
    cr += m.collision_rate(100);
    sp += m.mean_speed();
    rw += m.mean_return(100);
  }
  const double k = static_cast<double>(per_seed.size());
  sf << "aggregate," << n << ',' << fmt(100.0 * cr / k) << ',' << fmt(sp / k) << ','
     << fmt(rw / k) << "\n";
}

void replay(const std::string& trace_path, std::ostream& out) {
  std::ifstream f(trace_path);
  if (!f) throw std::runtime_error("cannot open trace: " + trace_path);
  out << " step | requested | executed  | mode       | reward   | ev speed | flags\n";
  out << "------+-----------+-----------+------------+----------+----------+------\n";
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    double ev_speed = 0.0;
    for (const auto& v : row.at("vehicles"))
      if (v.at("role") == "ev") ev_speed = v.at("v").get<double>();
    std::string flags;
    if (row.value("collision", false)) flags += "collision ";
    if (row.value("arrived", false)) flags += "arrived ";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%5ld | %-9s | %-9s | %-10s | %8.3f | %8.3f | %s\n",
                  row.at("step").get<long>(), row.at("requested").get<std::string>().c_str(),
                  row.at("executed").get<std::string>().c_str(),
                  row.at("mode").get<std::string>().c_str(), row.at("reward").get<double>(),
                  ev_speed, flags.c_str());
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Config IO

namespace {

json scenario_to_json(const env::Scenario& s) {
  json j;
  j["mode"] = s.mode == env::Mode::Normal ? "normal" : "hard";
  j["n_initial_hdvs"] = s.n_initial_hdvs;
  j["spawn_pos_jitter"] = s.spawn_pos_jitter;
  j["spawn_speed_jitter"] = s.spawn_speed_jitter;
  j["seed"] = s.seed;
  j["max_steps"] = s.max_steps;
  j["dt_sim"] = s.dt_sim;
  j["policy_period"] = s.policy_period;
  j["sensing_range"] = s.sensing_range;
  j["K"] = s.K;
  j["v_max"] = s.v_max;
  j["hdv_arrival_rate"] = s.hdv_arrival_rate;
  j["max_vehicles"] = s.max_vehicles;
  j["layout"] = {{"inner_radius", s.layout.inner_radius},
                 {"outer_radius", s.layout.outer_radius},
                 {"lane_width", s.layout.lane_width},
                 {"num_ports", s.layout.num_ports},
                 {"entry_leg_length", s.layout.entry_leg_length}};
  j["idm"] = {{"a_max", s.idm.a_max}, {"v_e", s.idm.v_e},         {"h_e", s.idm.h_e},
              {"T_e", s.idm.T_e},     {"c", s.idm.c},             {"ego_speed_variant", s.idm.ego_speed_variant}};
  j["rewards"] = {{"w1", s.rewards.w1}, {"w2", s.rewards.w2}, {"w3", s.rewards.w3},
                  {"w4", s.rewards.w4}, {"w5", s.rewards.w5},
                  {"slow_penalty", s.rewards.slow_penalty}};
  return j;
}

void scenario_from_json(const json& j, env::Scenario& s) {
  if (j.contains("mode")) {
    s = j["mode"] == "hard" ? env::Scenario::hard(s.seed) : env::Scenario::normal(s.seed);
  }
  if (j.contains("n_initial_hdvs")) s.n_initial_hdvs = j["n_initial_hdvs"];
  if (j.contains("spawn_pos_jitter")) s.spawn_pos_jitter = j["spawn_pos_jitter"];
  if (j.contains("spawn_speed_jitter")) s.spawn_speed_jitter = j["spawn_speed_jitter"];
  if (j.contains("seed")) s.seed = j["seed"];
  if (j.contains("max_steps")) s.max_steps = j["max_steps"];
  if (j.contains("dt_sim")) s.dt_sim = j["dt_sim"];
  if (j.contains("policy_period")) s.policy_period = j["policy_period"];
  if (j.contains("sensing_range")) s.sensing_range = j["sensing_range"];
  if (j.contains("K")) s.K = j["K"];
  if (j.contains("v_max")) s.v_max = j["v_max"];
  if (j.contains("hdv_arrival_rate")) s.hdv_arrival_rate = j["hdv_arrival_rate"];
  if (j.contains("max_vehicles")) s.max_vehicles = j["max_vehicles"];
  if (j.contains("layout")) {
    const json& l = j["layout"];
    if (l.contains("inner_radius")) s.layout.inner_radius = l["inner_radius"];
    if (l.contains("outer_radius")) s.layout.outer_radius = l["outer_radius"];
    if (l.contains("lane_width")) s.layout.lane_width = l["lane_width"];
    if (l.contains("num_ports")) s.layout.num_ports = l["num_ports"];
    if (l.contains("entry_leg_length")) s.layout.entry_leg_length = l["entry_leg_length"];
  }
  if (j.contains("idm")) {
    const json& i = j["idm"];
    if (i.contains("a_max")) s.idm.a_max = i["a_max"];
    if (i.contains("v_e")) s.idm.v_e = i["v_e"];
    if (i.contains("h_e")) s.idm.h_e = i["h_e"];
    if (i.contains("T_e")) s.idm.T_e = i["T_e"];
    if (i.contains("c")) s.idm.c = i["c"];
    if (i.contains("ego_speed_variant")) s.idm.ego_speed_variant = i["ego_speed_variant"];
  }
  if (j.contains("rewards")) {
    const json& r = j["rewards"];
    if (r.contains("w1")) s.rewards.w1 = r["w1"];
    if (r.contains("w2")) s.rewards.w2 = r["w2"];
    if (r.contains("w3")) s.rewards.w3 = r["w3"];
    if (r.contains("w4")) s.rewards.w4 = r["w4"];
    if (r.contains("w5")) s.rewards.w5 = r["w5"];
    if (r.contains("slow_penalty")) s.rewards.slow_penalty = r["slow_penalty"];
  }
}

}  // namespace

std::string config_to_json(const RunConfig& rc) {
  json j;
  j["scenario"] = scenario_to_json(rc.scenario);
  j["train"] = {{"gamma", rc.train.gamma},
                {"lr", rc.train.lr},
                {"batch_size", rc.train.batch_size},
                {"target_sync_every", rc.train.target_sync_every},
                {"epsilon_start", rc.train.epsilon.start},
                {"epsilon_end", rc.train.epsilon.end},
                {"epsilon_decay_steps", rc.train.epsilon.decay_steps},
                {"capacity", rc.train.capacity},
                {"warmup_transitions", rc.train.warmup_transitions},
                {"total_episodes", rc.train.total_episodes},
                {"adaptive_moments", rc.train.adaptive_moments}};
  j["planner"] = {{"w1_ttc", rc.planner.w1_ttc},
                  {"w2_tdt", rc.planner.w2_tdt},
                  {"w1_dist", rc.planner.w1_dist},
                  {"w2_dens", rc.planner.w2_dens},
                  {"D_safe", rc.planner.D_safe}};
  j["inspector"] = {{"T_n", rc.inspector.T_n},
                    {"dt", rc.inspector.dt},
                    {"D_safe", rc.inspector.D_safe},
                    {"sensing_range", rc.inspector.sensing_range},
                    {"alpha1", rc.inspector.coeffs.safety},
                    {"alpha2", rc.inspector.coeffs.progress},
                    {"alpha3", rc.inspector.coeffs.lane_pref},
                    {"alpha4", rc.inspector.coeffs.comfort},
                    {"v_max", rc.inspector.v_max},
                    {"speed_delta", rc.inspector.speed_delta}};
  j["mpc"] = {{"N_p", rc.mpc.N_p},
              {"N_c", rc.mpc.N_c},
              {"lambda", rc.mpc.lambda},
              {"D_safe", rc.mpc.D_safe},
              {"v_min", rc.mpc.v_min},
              {"v_max", rc.mpc.v_max},
              {"a_min", rc.mpc.a_min},
              {"a_max", rc.mpc.a_max},
              {"steer_min", rc.mpc.steer_min},
              {"steer_max", rc.mpc.steer_max},
              {"iterations", rc.mpc.iterations},
              {"grad_step", rc.mpc.grad_step},
              {"tolerance", rc.mpc.tolerance},
              {"dt", rc.mpc.dt},
              {"literal_gap_term", rc.mpc.literal_gap_term},
              {"guard_margin", rc.mpc.guard_margin}};
  const char* ab = "full";
  switch (rc.ablation) {
    case env::Ablation::Full: ab = "full"; break;
    case env::Ablation::NoInspector: ab = "no_inspector"; break;
    case env::Ablation::NoMpc: ab = "no_mpc"; break;
    case env::Ablation::MlpBaseline: ab = "mlp_baseline"; break;
  }
  j["ablation"] = ab;
  j["arch"] = {{"widths", rc.arch.widths},
               {"grid_size", rc.arch.grid_size},
               {"spline_order", rc.arch.spline_order},
               {"lambda1", rc.arch.lambda1},
               {"lambda2", rc.arch.lambda2}};
  j["seeds"] = rc.seeds;
  j["output_dir"] = rc.output_dir;
  j["checkpoint_every"] = rc.checkpoint_every;
  j["parallel_seeds"] = rc.parallel_seeds;
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig rc;
  if (j.contains("scenario")) scenario_from_json(j["scenario"], rc.scenario);
  if (j.contains("train")) {
    const json& t = j["train"];
    if (t.contains("gamma")) rc.train.gamma = t["gamma"];
    if (t.contains("lr")) rc.train.lr = t["lr"];
    if (t.contains("batch_size")) rc.train.batch_size = t["batch_size"];
    if (t.contains("target_sync_every")) rc.train.target_sync_every = t["target_sync_every"];
    if (t.contains("epsilon_start")) rc.train.epsilon.start = t["epsilon_start"];
    if (t.contains("epsilon_end")) rc.train.epsilon.end = t["epsilon_end"];
    if (t.contains("epsilon_decay_steps")) rc.train.epsilon.decay_steps = t["epsilon_decay_steps"];
    if (t.contains("capacity")) rc.train.capacity = t["capacity"];
    if (t.contains("warmup_transitions")) rc.train.warmup_transitions = t["warmup_transitions"];
    if (t.contains("total_episodes")) rc.train.total_episodes = t["total_episodes"];
    if (t.contains("adaptive_moments")) rc.train.adaptive_moments = t["adaptive_moments"];
  }
  if (j.contains("planner")) {
    const json& p = j["planner"];
    if (p.contains("w1_ttc")) rc.planner.w1_ttc = p["w1_ttc"];
    if (p.contains("w2_tdt")) rc.planner.w2_tdt = p["w2_tdt"];
    if (p.contains("w1_dist")) rc.planner.w1_dist = p["w1_dist"];
    if (p.contains("w2_dens")) rc.planner.w2_dens = p["w2_dens"];
    if (p.contains("D_safe")) rc.planner.D_safe = p["D_safe"];
  }
  if (j.contains("inspector")) {
    const json& i = j["inspector"];
    if (i.contains("T_n")) rc.inspector.T_n = i["T_n"];
    if (i.contains("dt")) rc.inspector.dt = i["dt"];
    if (i.contains("D_safe")) rc.inspector.D_safe = i["D_safe"];
    if (i.contains("sensing_range")) rc.inspector.sensing_range = i["sensing_range"];
    if (i.contains("alpha1")) rc.inspector.coeffs.safety = i["alpha1"];
    if (i.contains("alpha2")) rc.inspector.coeffs.progress = i["alpha2"];
    if (i.contains("alpha3")) rc.inspector.coeffs.lane_pref = i["alpha3"];
    if (i.contains("alpha4")) rc.inspector.coeffs.comfort = i["alpha4"];
    if (i.contains("v_max")) rc.inspector.v_max = i["v_max"];
    if (i.contains("speed_delta")) rc.inspector.speed_delta = i["speed_delta"];
  }
  if (j.contains("mpc")) {
    const json& m = j["mpc"];
    if (m.contains("N_p")) rc.mpc.N_p = m["N_p"];
    if (m.contains("N_c")) rc.mpc.N_c = m["N_c"];
    if (m.contains("lambda")) rc.mpc.lambda = m["lambda"];
    if (m.contains("D_safe")) rc.mpc.D_safe = m["D_safe"];
    if (m.contains("v_min")) rc.mpc.v_min = m["v_min"];
    if (m.contains("v_max")) rc.mpc.v_max = m["v_max"];
    if (m.contains("a_min")) rc.mpc.a_min = m["a_min"];
    if (m.contains("a_max")) rc.mpc.a_max = m["a_max"];
    if (m.contains("steer_min")) rc.mpc.steer_min = m["steer_min"];
    if (m.contains("steer_max")) rc.mpc.steer_max = m["steer_max"];
    if (m.contains("iterations")) rc.mpc.iterations = m["iterations"];
    if (m.contains("grad_step")) rc.mpc.grad_step = m["grad_step"];
    if (m.contains("tolerance")) rc.mpc.tolerance = m["tolerance"];
    if (m.contains("dt")) rc.mpc.dt = m["dt"];
    if (m.contains("literal_gap_term")) rc.mpc.literal_gap_term = m["literal_gap_term"];
    if (m.contains("guard_margin")) rc.mpc.guard_margin = m["guard_margin"];
  }
  if (j.contains("ablation")) {
    const std::string a = j["ablation"];
    if (a == "full") rc.ablation = env::Ablation::Full;
    else if (a == "no_inspector") rc.ablation = env::Ablation::NoInspector;
    else if (a == "no_mpc") rc.ablation = env::Ablation::NoMpc;
    else if (a == "mlp_baseline") rc.ablation = env::Ablation::MlpBaseline;
    else throw std::runtime_error("unknown ablation: " + a);
  }
  if (j.contains("arch")) {
    const json& a = j["arch"];
    if (a.contains("widths")) rc.arch.widths = a["widths"].get<std::vector<int>>();
    if (a.contains("grid_size")) rc.arch.grid_size = a["grid_size"];
    if (a.contains("spline_order")) rc.arch.spline_order = a["spline_order"];
    if (a.contains("lambda1")) rc.arch.lambda1 = a["lambda1"];
    if (a.contains("lambda2")) rc.arch.lambda2 = a["lambda2"];
  }
  if (j.contains("seeds")) rc.seeds = j["seeds"].get<std::vector<uint64_t>>();
  if (j.contains("output_dir")) rc.output_dir = j["output_dir"];
  if (j.contains("checkpoint_every")) rc.checkpoint_every = j["checkpoint_every"];
  if (j.contains("parallel_seeds")) rc.parallel_seeds = j["parallel_seeds"];
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace kdqn::harness
