#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qadapter/preference.hpp"
#include "qadapter/residual_q.hpp"

namespace qadapter {

enum class OptimizerKind { adaptive_moments, sgd };
enum class PsiMode { mean, sum };

struct TrainConfig {
  double alpha_tilde = 0.1;
  double alpha_0 = 1.0;
  double beta = 0.1;
  double gamma = 0.99;
  double learning_rate = 3e-4;
  int batch_size = 512;  // clamped to dataset size
  int epochs = 3;
  std::uint64_t seed = 0;
  bool normalize_by_length = true;
  OptimizerKind optimizer = OptimizerKind::adaptive_moments;
  PsiMode psi_mode = PsiMode::mean;
  double beta_dpo = 0.1;
  // Moment constants for the adaptive optimizer (decoupled weight decay 0).
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct ParamQ {
  Eigen::MatrixXd theta;  // tabular Q_theta, num_states x vocab
  double alpha_tilde = 0.1;
  double alpha_0 = 1.0;
};

struct TrainReport {
  std::vector<double> loss_trace;       // one entry per optimizer step
  std::vector<double> grad_norm_trace;
  double final_loss = 0.0;
  double wall_clock_seconds = 0.0;      // not serialized (artifacts stay byte-stable)
  std::string config_echo;
  std::vector<std::string> warnings;
};

// Per-step recovered rewards (TQ)(s_t, a_t) along a response; the successor
// term is dropped when the successor is terminal.
std::vector<double> t_operator_on_trajectory(const ParamQ& q,
                                             const StateSpace& sp,
                                             const Eigen::MatrixXd& log_pi1,
                                             const TokenSeq& prompt,
                                             const TokenSeq& response,
                                             double gamma);

struct LossValue {
  double loss = 0.0;
  Eigen::MatrixXd gradient;
};

// BT loss over recovered rewards plus beta * psi regularizer, with the
// analytic gradient in theta.
LossValue qadapter_loss(const ParamQ& q,
                        const std::vector<const PreferencePair*>& batch,
                        const StateSpace& sp, const Eigen::MatrixXd& log_pi1,
                        const TrainConfig& cfg);

struct QAdapterResult {
  ParamQ q;
  TrainReport report;
};
QAdapterResult train_qadapter(const PreferenceDataset& ds, const StateSpace& sp,
                              const Policy& pi1, const TrainConfig& cfg);

// Log-likelihood maximization over the chosen responses (tabular logits).
struct PolicyResult {
  Policy policy;
  TrainReport report;
};
PolicyResult train_sft(const PreferenceDataset& ds, const StateSpace& sp,
                       const TrainConfig& cfg);

// Standard DPO classification loss over tabular logits, reference pi1.
PolicyResult train_dpo(const PreferenceDataset& ds, const StateSpace& sp,
                       const Policy& pi1, double beta_dpo,
                       const TrainConfig& cfg);

// Reward-model fit followed by exact soft RL on the KL-augmented reward
// (the PPO stage replaced by the exact solver).
PolicyResult train_rlhf_pipeline(const PreferenceDataset& ds,
                                 const StateSpace& sp, const Policy& pi_ref,
                                 double alpha, const TrainConfig& cfg);

// SFT/DPO loss surfaces, exposed for finite-difference checks.
LossValue sft_loss(const Eigen::MatrixXd& logits,
                   const std::vector<const PreferencePair*>& batch,
                   const StateSpace& sp);
LossValue dpo_loss(const Eigen::MatrixXd& logits,
                   const std::vector<const PreferencePair*>& batch,
                   const StateSpace& sp, const Eigen::MatrixXd& log_pi1,
                   double beta_dpo);

}  // namespace qadapter
