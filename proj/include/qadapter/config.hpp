#pragma once

#include <map>
#include <string>
#include <vector>

#include "qadapter/mdp.hpp"
#include "qadapter/preference.hpp"
#include "qadapter/trainer.hpp"

namespace qadapter {

// Flat [section] key=value file; '#' starts a comment line.
using KvConfig = std::map<std::string, std::map<std::string, std::string>>;
KvConfig parse_kv_config(const std::string& text);

enum class RewardSource { random, inline_table };

struct RewardsConfig {
  RewardSource mode = RewardSource::random;
  std::uint64_t r1_seed = 1;
  std::uint64_t r2_seed = 2;
  double low = -1.0;
  double high = 1.0;
  std::vector<double> r1_inline;  // row-major, state order; empty unless inline
  std::vector<double> r2_inline;
};

struct PretrainConfig {
  double alpha1 = 0.3;
  double tol = 1e-10;
  int max_iters = 10000;
};

struct DataConfig {
  int n_pairs = 1000;
  LabelMode mode = LabelMode::stochastic;
  double epsilon = 0.3;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  int n_matches = 10000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  Mdp mdp;
  std::size_t state_cap = kDefaultStateCap;
  RewardsConfig rewards;
  PretrainConfig pretrain;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  std::vector<double> sweep_alphas = {0.005, 0.05, 0.1, 0.5, 1.0};
  std::string artifacts_dir = "artifacts";

  // Strict: unknown sections or keys are ConfigErrors.
  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);
};

}  // namespace qadapter
