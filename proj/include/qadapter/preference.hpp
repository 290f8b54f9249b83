#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qadapter/soft_rl.hpp"

namespace qadapter {

struct PreferencePair {
  TokenSeq prompt;
  TokenSeq chosen;    // generated tokens only
  TokenSeq rejected;
  std::optional<double> label_prob;  // BT probability of the stored winner
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  std::string behavior;        // free-form description of the sampler
  std::string mdp_fingerprint; // hex fingerprint of the Mdp config
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  DatasetMeta meta;
  int vocab_size = 0;
  int horizon = 0;
};

enum class LabelMode { stochastic, deterministic };

// Autoregressive sampling from pi for up to horizon steps, stopping after
// EOS. Deterministic given the generator state.
TokenSeq sample_response(const Policy& pi, const StateSpace& sp,
                         const TokenSeq& prompt, std::mt19937_64& rng);

// (state index, action) pairs along a response, truncated after EOS
// (the EOS step itself is kept). Throws DomainError on unreachable input.
std::vector<std::pair<int, int>> trajectory_steps(const StateSpace& sp,
                                                  const TokenSeq& prompt,
                                                  const TokenSeq& response);

// Undiscounted sum of r along the response, masked after EOS.
double trajectory_reward_sum(const StateSpace& sp, const RewardTable& r,
                             const TokenSeq& prompt, const TokenSeq& response);

// Bradley-Terry win probability sigma(sum_w - sum_l).
double bt_probability(double sum_w, double sum_l);

// (1-eps) * pi + eps * uniform, row-wise.
Policy epsilon_mixture(const Policy& pi, double eps);

PreferenceDataset generate_dataset(const StateSpace& sp, const RewardTable& r2,
                                   const Policy& behavior, int n_pairs,
                                   LabelMode mode, std::uint64_t seed,
                                   const std::string& behavior_desc = "",
                                   const std::string& mdp_fingerprint = "");

// Mean BT negative log-likelihood of the batch under reward parameters
// r_params, with its analytic gradient.
struct RewardModelLoss {
  double loss = 0.0;
  Eigen::MatrixXd gradient;
};
RewardModelLoss reward_model_loss(const Eigen::MatrixXd& r_params,
                                  const std::vector<PreferencePair>& batch,
                                  const StateSpace& sp);

// Line-delimited dataset format, one pair per line; see save for the layout.
void save_dataset(const PreferenceDataset& ds, const std::string& path);
PreferenceDataset load_dataset(const std::string& path);

}  // namespace qadapter
