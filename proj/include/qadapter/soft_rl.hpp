#pragma once

#include <Eigen/Dense>
#include <span>

#include "qadapter/mdp.hpp"

namespace qadapter {

// Soft (entropy-regularized) action-value table over a StateSpace.
struct QFunction {
  Eigen::MatrixXd table;  // num_states x vocab
  double alpha = 0.0;     // entropy weight this Q was computed under
};

struct Policy {
  Eigen::MatrixXd table;  // num_states x vocab, rows sum to 1
};

enum class SolveMode { backward, iterative };

// log(sum_i exp(v_i)) with max subtraction; exact for constant input.
double log_sum_exp(std::span<const double> values);
double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& values);

// alpha * log sum_a exp(Q(s,a)/alpha)
double soft_value(const QFunction& q, int s, double alpha);

// One synchronous soft Bellman backup of q under reward r.
Eigen::MatrixXd soft_backup(const StateSpace& sp, const RewardTable& r,
                            const Eigen::MatrixXd& q, double alpha);

// Soft-optimal Q. Backward induction over the finite tree is exact; the
// iterative mode repeats soft_backup from Q=0 and is kept as a cross-check.
QFunction soft_q_iteration(const StateSpace& sp, const RewardTable& r,
                           double alpha, double tol = 1e-10,
                           int max_iters = 10000,
                           SolveMode mode = SolveMode::backward);

// Row-wise softmax of Q/alpha.
Policy policy_from_q(const QFunction& q, double alpha);

// Exact entropy-augmented return: single backward pass, V(terminal)=0,
// V(s) = sum_a pi(a|s) (r(s,a) - w log pi(a|s) + gamma V(s+a)).
double policy_return(const StateSpace& sp, const Policy& pi,
                     const RewardTable& r, double entropy_weight);

// r(s,a) + alpha * log pi_ref(a|s), pointwise. Zero reference probability
// on a non-terminal row is a DomainError.
RewardTable kl_regularized_reward(const StateSpace& sp, const RewardTable& r,
                                  const Policy& pi_ref, double alpha);

// Row-wise log pi with a -80 floor on underflowed probabilities; bumps
// *clamp_count per clamped entry when provided.
Eigen::MatrixXd log_policy_clamped(const Policy& pi, long* clamp_count = nullptr);

}  // namespace qadapter
