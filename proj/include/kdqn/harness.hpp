#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "kdqn/agent.hpp"
#include "kdqn/env.hpp"

namespace kdqn::harness {

struct KanArch {
  std::vector<int> widths = {35, 64, 64};  // input width then KAN layer widths
  int grid_size = 5;
  int spline_order = 3;
  double lambda1 = 1e-5;
  double lambda2 = 1e-6;
};

struct RunConfig {
  env::Scenario scenario;
  agent::TrainConfig train;
  planner::PlannerWeights planner;
  inspector::InspectorConfig inspector;
  mpc::MpcConfig mpc;
  env::Ablation ablation = env::Ablation::Full;
  KanArch arch;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string output_dir = "out";
  long checkpoint_every = 500;  // episodes
  bool parallel_seeds = true;
};

struct EpisodeRow {
  long episode = 0;
  int steps = 0;
  double ret = 0.0;
  bool collision = false;
  bool arrived = false;
  double mean_speed = 0.0;
  double epsilon = 0.0;
  double loss = 0.0;
};

struct Metrics {
  std::vector<EpisodeRow> rows;

  // Fraction of episodes ending in collision over the trailing window
  // (window < 0 means all rows).
  double collision_rate(int window = -1) const;
  double mean_speed(int window = -1) const;
  double mean_return(int window = -1) const;

  // Trailing-window moving average (the reward curves use window 9).
  static std::vector<double> smooth(const std::vector<double>& xs, int window);
};

struct SeedResult {
  uint64_t seed = 0;
  Metrics metrics;
  std::string checkpoint_path;
  std::string metrics_csv;
};

struct TrainResult {
  std::vector<SeedResult> seeds;
  std::string manifest_path;
};

// Full training loop per seed (parallel workers, one per seed).
TrainResult train(const RunConfig& config);

// Greedy rollouts from a checkpoint; writes a CSV when out_csv is non-empty.
Metrics evaluate(const std::string& checkpoint_path, const env::Scenario& scenario, int episodes,
                 const RunConfig& pipeline, const std::string& out_csv = "");

// Curves (SVG, window-9 smoothing, per-seed std bands) and summary tables
// from the metrics CSVs found in in_dir.
void report(const std::string& in_dir, const std::string& out_dir);

// Step table from an episode trace (JSONL).
void replay(const std::string& trace_path, std::ostream& out);

// Matched-parameter MLP hidden width for the baseline ablation.
int matched_mlp_hidden(const KanArch& arch, int input_width, int out_dim);

kan::QNetwork make_network(const RunConfig& config, uint64_t seed);

// Config file round trip.
RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& config);
RunConfig load_config(const std::string& path);

void write_metrics_csv(const Metrics& m, const std::string& path);
Metrics read_metrics_csv(const std::string& path);

uint64_t episode_seed(uint64_t run_seed, long episode);

}  // namespace kdqn::harness
