#pragma once

#include <string>
#include <vector>

#include "qadapter/trainer.hpp"

namespace qadapter {

struct EvalReport {
  double return_r1 = 0.0;
  double return_r2 = 0.0;
  double entropy_return = 0.0;       // expected discounted policy entropy
  double mean_kl_to_base = 0.0;      // visitation-weighted, per step
  double win_rate_vs_base_r1 = 0.5;
  double win_rate_vs_base_r2 = 0.5;
  std::string method;
  std::string config_echo;
  std::string judge = "hidden_reward";
  int n_matches = 0;
  std::uint64_t judge_seed = 0;

  std::string to_json() const;
};

struct EvalOptions {
  int n_matches = 10000;
  std::uint64_t seed = 0;
  std::string method = "policy";
  std::string config_echo;
};

// Exact returns and KL plus sampled hidden-reward win rates against pi1.
EvalReport evaluate_policy(const Policy& pi, const StateSpace& sp,
                           const RewardTable& r1, const RewardTable& r2,
                           const Policy& pi1, const EvalOptions& opts = {});

// Fraction of prompt-matched matches where pi_a's sampled response scores
// strictly higher under r than pi_b's; exact ties count 0.5.
double sample_win_rate(const Policy& pi_a, const Policy& pi_b,
                       const StateSpace& sp, const RewardTable& r,
                       int n_matches, std::uint64_t seed);

// Visitation-weighted mean KL(pi || pi_base) over states pi actually reaches.
double mean_kl_to_base(const Policy& pi, const Policy& pi_base,
                       const StateSpace& sp);

struct SweepRow {
  double alpha_0 = 0.0;
  EvalReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double spearman_r1 = 0.0;  // rank correlation of alpha_0 vs return_r1
  double spearman_r2 = 0.0;

  std::string to_table() const;
  std::string to_json() const;
};

// One Q-Adapter training per alpha_0 (shared dataset and seed), each
// composed with pi1 and evaluated.
SweepResult alpha_sweep(const PreferenceDataset& ds, const StateSpace& sp,
                        const Policy& pi1, const RewardTable& r1,
                        const RewardTable& r2,
                        const std::vector<double>& alphas,
                        const TrainConfig& cfg, const EvalOptions& opts = {});

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace qadapter
