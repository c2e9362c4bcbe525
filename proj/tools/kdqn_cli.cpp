#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kdqn/harness.hpp"

using namespace kdqn;

int main(int argc, char** argv) {
  CLI::App app{"Roundabout driving simulator and KAN-DQN training stack"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Run the training loop per seed");
  std::string train_config;
  std::string seeds_csv;
  std::string out_dir;
  train_cmd->add_option("--config", train_config, "Run config JSON")->required();
  train_cmd->add_option("--seeds", seeds_csv, "Comma-separated seed list (overrides config)");
  train_cmd->add_option("--out", out_dir, "Output directory (overrides config)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  std::string ckpt, scenario_name = "normal", eval_config, eval_csv;
  int episodes = 100;
  uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--scenario", scenario_name, "normal|hard")
      ->check(CLI::IsMember({"normal", "hard"}));
  eval_cmd->add_option("--episodes", episodes, "Episode count");
  eval_cmd->add_option("--config", eval_config, "Pipeline config JSON (optional)");
  eval_cmd->add_option("--seed", eval_seed, "Evaluation seed");
  eval_cmd->add_option("--csv", eval_csv, "Write per-episode metrics CSV here");

  // report
  auto* report_cmd = app.add_subcommand("report", "Curves and tables from metrics CSVs");
  std::string in_dir, report_out;
  report_cmd->add_option("--in", in_dir, "Directory with metrics_seed*.csv")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->required();

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "Print a step table from a trace");
  std::string trace_path;
  replay_cmd->add_option("--trace", trace_path, "Episode trace JSONL")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      harness::RunConfig rc = harness::load_config(train_config);
      if (!seeds_csv.empty()) {
        rc.seeds.clear();
        std::stringstream ss(seeds_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) rc.seeds.push_back(std::stoull(tok));
      }
      if (!out_dir.empty()) rc.output_dir = out_dir;
      const harness::TrainResult res = harness::train(rc);
      for (const auto& s : res.seeds)
        std::cout << "seed " << s.seed << ": " << s.metrics.rows.size()
                  << " episodes, collision rate (last 100) "
                  << 100.0 * s.metrics.collision_rate(100) << "%, checkpoint "
                  << s.checkpoint_path << "\n";
      std::cout << "manifest: " << res.manifest_path << "\n";
    } else if (*eval_cmd) {
      harness::RunConfig rc;
      if (!eval_config.empty()) rc = harness::load_config(eval_config);
      env::Scenario sc = scenario_name == "hard" ? env::Scenario::hard(eval_seed)
                                                 : env::Scenario::normal(eval_seed);
      const harness::Metrics m = harness::evaluate(ckpt, sc, episodes, rc, eval_csv);
      std::cout << "episodes: " << m.rows.size() << "\n";
      std::cout << "collision rate: " << 100.0 * m.collision_rate() << "%\n";
      std::cout << "average speed: " << m.mean_speed() << " m/s\n";
      std::cout << "mean return: " << m.mean_return() << "\n";
    } else if (*report_cmd) {
      harness::report(in_dir, report_out);
      std::cout << "report written to " << report_out << "\n";
    } else if (*replay_cmd) {
      harness::replay(trace_path, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
