#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "kdqn/harness.hpp"

using namespace kdqn;
using namespace kdqn::harness;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& out) {
  RunConfig rc;
  rc.scenario = env::Scenario::normal(1);
  rc.scenario.max_steps = 12;
  rc.train.total_episodes = 3;
  rc.train.warmup_transitions = 8;
  rc.train.batch_size = 8;
  rc.train.capacity = 256;
  rc.arch.widths = {35, 8};
  rc.seeds = {1};
  rc.output_dir = out;
  rc.checkpoint_every = 0;
  rc.parallel_seeds = false;
  return rc;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("metrics: aggregates and smoothing") {
  Metrics m;
  for (int i = 0; i < 10; ++i) {
    EpisodeRow r;
    r.episode = i;
    r.ret = i < 5 ? 0.0 : 1.0;
    r.collision = i % 2 == 0;
    r.mean_speed = 10.0;
    m.rows.push_back(r);
  }
  CHECK(m.collision_rate() == doctest::Approx(0.5));
  CHECK(m.collision_rate(2) == doctest::Approx(0.5));
  CHECK(m.collision_rate(1) == doctest::Approx(0.0));  // last episode index 9, odd
  CHECK(m.mean_speed() == doctest::Approx(10.0));
  CHECK(m.mean_return(5) == doctest::Approx(1.0));

  // Smoothing a constant series is the identity.
  const std::vector<double> xs(20, 3.25);
  const auto sm = Metrics::smooth(xs, 9);
  for (double v : sm) CHECK(v == doctest::Approx(3.25));

  const auto sm2 = Metrics::smooth({0, 1, 2}, 2);
  CHECK(sm2[0] == doctest::Approx(0.0));
  CHECK(sm2[1] == doctest::Approx(0.5));
  CHECK(sm2[2] == doctest::Approx(1.5));
}

TEST_CASE("matched MLP hidden width lands within 2% of the KAN budget") {
  KanArch arch;
  const int H = matched_mlp_hidden(arch, 35, 5);
  const kan::MlpNetwork mlp({35, H, H}, 5, 0);

  kan::KanConfig kc;
  kc.widths = {35, 64, 64};
  kc.out_dim = 5;
  const kan::KanNetwork kan_net(kc, 0);
  const double ratio =
      static_cast<double>(mlp.num_params()) / static_cast<double>(kan_net.num_params());
  CHECK(ratio > 0.98);
  CHECK(ratio <= 1.0);
}

TEST_CASE("config json round trip preserves every field") {
  RunConfig rc = tiny_config("x");
  rc.scenario.layout.inner_radius = 21.0;
  rc.scenario.layout.outer_radius = 29.0;
  rc.scenario.idm.T_e = 1.25;
  rc.planner.w2_dens = 13.0;
  rc.mpc.lambda = 0.77;
  rc.inspector.T_n = 17;
  rc.ablation = env::Ablation::NoMpc;
  rc.train.lr = 3e-4;
  rc.seeds = {4, 5};

  const RunConfig back = config_from_json(config_to_json(rc));
  CHECK(back.scenario.layout.inner_radius == 21.0);
  CHECK(back.scenario.layout.outer_radius == 29.0);
  CHECK(back.scenario.idm.T_e == 1.25);
  CHECK(back.planner.w2_dens == 13.0);
  CHECK(back.mpc.lambda == 0.77);
  CHECK(back.inspector.T_n == 17);
  CHECK(back.ablation == env::Ablation::NoMpc);
  CHECK(back.train.lr == 3e-4);
  CHECK(back.seeds == std::vector<uint64_t>{4, 5});
  CHECK(config_to_json(back) == config_to_json(rc));
}

TEST_CASE("metrics csv round trip") {
  Metrics m;
  for (int i = 0; i < 4; ++i) {
    EpisodeRow r;
    r.episode = i;
    r.steps = 3 + i;
    r.ret = 1.5 * i - 0.25;
    r.collision = i == 2;
    r.arrived = i != 2;
    r.mean_speed = 11.25 + i;
    r.epsilon = 1.0 - 0.1 * i;
    r.loss = 0.5 / (i + 1);
    m.rows.push_back(r);
  }
  const std::string path = "/tmp/kdqn_test_metrics.csv";
  write_metrics_csv(m, path);
  const Metrics back = read_metrics_csv(path);
  REQUIRE(back.rows.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(back.rows[i].ret == doctest::Approx(m.rows[i].ret));
    CHECK(back.rows[i].collision == m.rows[i].collision);
    CHECK(back.rows[i].mean_speed == doctest::Approx(m.rows[i].mean_speed));
  }
}

TEST_CASE("tiny training run: outputs exist and reruns are byte-identical") {
  const std::string out1 = "/tmp/kdqn_tiny_run_a";
  const std::string out2 = "/tmp/kdqn_tiny_run_b";
  fs::remove_all(out1);
  fs::remove_all(out2);

  RunConfig rc1 = tiny_config(out1);
  const TrainResult r1 = train(rc1);
  REQUIRE(r1.seeds.size() == 1);
  CHECK(fs::exists(r1.seeds[0].checkpoint_path));
  CHECK(fs::exists(r1.seeds[0].metrics_csv));
  CHECK(fs::exists(r1.manifest_path));
  CHECK(r1.seeds[0].metrics.rows.size() == 3);

  RunConfig rc2 = tiny_config(out2);
  const TrainResult r2 = train(rc2);
  CHECK(slurp(r1.seeds[0].metrics_csv) == slurp(r2.seeds[0].metrics_csv));
  CHECK(slurp(r1.seeds[0].checkpoint_path) == slurp(r2.seeds[0].checkpoint_path));
}

TEST_CASE("evaluate: shape mismatch is rejected") {
  const std::string out = "/tmp/kdqn_tiny_eval";
  fs::remove_all(out);
  fs::create_directories(out);
  // A checkpoint with the wrong input width.
  kan::KanConfig kc;
  kc.widths = {7, 4};
  kc.out_dim = 5;
  kan::save_checkpoint(kan::QNetwork(kan::KanNetwork(kc, 1)), out + "/bad.bin");
  RunConfig rc = tiny_config(out);
  CHECK_THROWS(evaluate(out + "/bad.bin", rc.scenario, 1, rc));
}

TEST_CASE("evaluate: greedy rollouts from a trained checkpoint") {
  const std::string out = "/tmp/kdqn_tiny_run_eval";
  fs::remove_all(out);
  RunConfig rc = tiny_config(out);
  const TrainResult tr = train(rc);
  const Metrics m = evaluate(tr.seeds[0].checkpoint_path, rc.scenario, 2, rc,
                             out + "/eval.csv");
  CHECK(m.rows.size() == 2);
  CHECK(fs::exists(out + "/eval.csv"));
  // Determinism: rerunning the evaluation reproduces the CSV byte for byte.
  const std::string first = slurp(out + "/eval.csv");
  evaluate(tr.seeds[0].checkpoint_path, rc.scenario, 2, rc, out + "/eval.csv");
  CHECK(slurp(out + "/eval.csv") == first);
}

TEST_CASE("report: emits curves and summary from metrics files") {
  const std::string in = "/tmp/kdqn_report_in";
  const std::string out = "/tmp/kdqn_report_out";
  fs::remove_all(in);
  fs::remove_all(out);
  fs::create_directories(in);
  for (int seed = 0; seed < 2; ++seed) {
    Metrics m;
    for (int i = 0; i < 30; ++i) {
      EpisodeRow r;
      r.episode = i;
      r.steps = 10;
      r.ret = i * 0.1 + seed;
      r.collision = (i + seed) % 7 == 0;
      r.mean_speed = 12.0 + seed;
      m.rows.push_back(r);
    }
    write_metrics_csv(m, in + "/metrics_seed" + std::to_string(seed) + ".csv");
  }
  report(in, out);
  CHECK(fs::exists(out + "/reward_curve.svg"));
  CHECK(fs::exists(out + "/speed_curve.svg"));
  CHECK(fs::exists(out + "/collision_rate.svg"));
  CHECK(fs::exists(out + "/summary.csv"));
  CHECK(fs::file_size(out + "/reward_curve.svg") > 200);
  // Summary has one row per seed plus the aggregate.
  std::ifstream f(out + "/summary.csv");
  int lines = 0;
  std::string line;
  while (std::getline(f, line)) ++lines;
  CHECK(lines == 4);
}

TEST_CASE("ablation contracts: NoInspector records no inspector decisions") {
  env::RoundaboutEnv::Config c;
  c.scenario = env::Scenario::normal(2);
  c.scenario.max_steps = 5;
  c.ablation = env::Ablation::NoInspector;
  c.record_trace = true;
  env::RoundaboutEnv e(c);
  for (int i = 0; i < 5 && !e.done(); ++i) e.step(Action::Idle);
  for (const std::string& line : e.trace_lines()) {
    CHECK(line.find("\"candidates\":[]") != std::string::npos);
  }
}

TEST_CASE("ablation: same seed gives identical world initialization across arms") {
  env::RoundaboutEnv::Config a;
  a.scenario = env::Scenario::normal(77);
  a.ablation = env::Ablation::Full;
  env::RoundaboutEnv ea(a);
  env::RoundaboutEnv::Config b = a;
  b.ablation = env::Ablation::NoInspector;
  env::RoundaboutEnv eb(b);
  CHECK(ea.world_fingerprint() == eb.world_fingerprint());
}

TEST_CASE("replay prints a step table from a trace") {
  env::RoundaboutEnv::Config c;
  c.scenario = env::Scenario::normal(4);
  c.scenario.max_steps = 4;
  c.record_trace = true;
  env::RoundaboutEnv e(c);
  for (int i = 0; i < 4 && !e.done(); ++i) e.step(Action::Faster);
  const std::string path = "/tmp/kdqn_trace.jsonl";
  e.write_trace(path);

  std::ostringstream out;
  replay(path, out);
  const std::string table = out.str();
  CHECK(table.find("step") != std::string::npos);
  CHECK(table.find("Faster") != std::string::npos);
}
