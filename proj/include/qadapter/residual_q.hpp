#pragma once

#include "qadapter/soft_rl.hpp"

namespace qadapter {

// Residual action-value table: the gap between the combined-reward soft
// optimum and the (scaled) pre-trained soft optimum. Parameterized by the
// combined entropy weight alpha_tilde and the composition weight alpha_0.
struct ResidualQ {
  Eigen::MatrixXd table;      // num_states x vocab
  double alpha_tilde = 0.1;
  double alpha_0 = 0.0;
  long clamp_warnings = 0;    // log pi1 floor hits during construction
};

// Soft value of (Q + alpha_0 log pi1) at temperature alpha_tilde, per state;
// terminal states are 0.
Eigen::VectorXd augmented_soft_values(const StateSpace& sp,
                                      const Eigen::MatrixXd& q,
                                      const Eigen::MatrixXd& log_pi1,
                                      double alpha_tilde, double alpha_0);

// One synchronous sweep of Q <- r2 + gamma * E[augmented soft value].
ResidualQ residual_backup(const ResidualQ& q, const StateSpace& sp,
                          const RewardTable& r2, const Policy& pi1);

// Fixed point of residual_backup, computed exactly by backward induction
// and certified by one extra sweep; iterative mode kept as a cross-check.
ResidualQ residual_q_iteration(const StateSpace& sp, const RewardTable& r2,
                               const Policy& pi1, double alpha_tilde,
                               double alpha_0, double tol = 1e-10,
                               int max_iters = 10000,
                               SolveMode mode = SolveMode::backward);

// Row-wise softmax of (alpha_0 log pi1 + Qhat) / alpha_tilde.
Policy compose_policy(const Policy& pi1, const ResidualQ& qhat);

// The reward this residual Q is the fixed point for:
// (TQ)(s,a) = Q(s,a) - gamma * E[augmented soft value at successor].
RewardTable reward_from_residual_q(const ResidualQ& q, const StateSpace& sp,
                                   const Policy& pi1);

}  // namespace qadapter
