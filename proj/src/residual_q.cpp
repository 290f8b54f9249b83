#include "qadapter/residual_q.hpp"

#include <cmath>

namespace qadapter {

Eigen::VectorXd augmented_soft_values(const StateSpace& sp,
                                      const Eigen::MatrixXd& q,
                                      const Eigen::MatrixXd& log_pi1,
                                      double alpha_tilde, double alpha_0) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(sp.num_states());
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i]) continue;
    Eigen::RowVectorXd scaled =
        (q.row(i) + alpha_0 * log_pi1.row(i)) / alpha_tilde;
    v[i] = alpha_tilde * log_sum_exp(scaled);
  }
  return v;
}

ResidualQ residual_backup(const ResidualQ& q, const StateSpace& sp,
                          const RewardTable& r2, const Policy& pi1) {
  ResidualQ out = q;
  Eigen::MatrixXd log_pi1 = log_policy_clamped(pi1, &out.clamp_warnings);
  Eigen::VectorXd v =
      augmented_soft_values(sp, q.table, log_pi1, q.alpha_tilde, q.alpha_0);
  out.table = r2;
  const double gamma = sp.mdp.gamma;
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i]) continue;
    for (int a = 0; a < sp.vocab_size(); ++a) {
      out.table(i, a) += gamma * v[sp.children(i, a)];
    }
  }
  return out;
}

ResidualQ residual_q_iteration(const StateSpace& sp, const RewardTable& r2,
                               const Policy& pi1, double alpha_tilde,
                               double alpha_0, double tol, int max_iters,
                               SolveMode mode) {
  ResidualQ q;
  q.alpha_tilde = alpha_tilde;
  q.alpha_0 = alpha_0;
  Eigen::MatrixXd log_pi1 = log_policy_clamped(pi1, &q.clamp_warnings);
  const double gamma = sp.mdp.gamma;

  if (mode == SolveMode::backward) {
    q.table = r2;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(sp.num_states());
    for (int i = sp.num_states() - 1; i >= 0; --i) {
      if (!sp.terminal[i]) {
        for (int a = 0; a < sp.vocab_size(); ++a) {
          q.table(i, a) += gamma * v[sp.children(i, a)];
        }
        Eigen::RowVectorXd scaled =
            (q.table.row(i) + alpha_0 * log_pi1.row(i)) / alpha_tilde;
        v[i] = alpha_tilde * log_sum_exp(scaled);
      }
    }
    ResidualQ check = residual_backup(q, sp, r2, pi1);
    double residual = (check.table - q.table).cwiseAbs().maxCoeff();
    if (residual > tol) {
      throw ConvergenceError("residual backward induction residual " +
                                 std::to_string(residual) + " exceeds tol",
                             residual);
    }
    return q;
  }

  q.table = Eigen::MatrixXd::Zero(sp.num_states(), sp.vocab_size());
  for (int it = 0; it < max_iters; ++it) {
    ResidualQ next = residual_backup(q, sp, r2, pi1);
    double residual = (next.table - q.table).cwiseAbs().maxCoeff();
    q.table = std::move(next.table);
    if (residual <= tol) return q;
  }
  ResidualQ check = residual_backup(q, sp, r2, pi1);
  double residual = (check.table - q.table).cwiseAbs().maxCoeff();
  throw ConvergenceError("residual Q-iteration did not converge; residual " +
                             std::to_string(residual),
                         residual);
}

Policy compose_policy(const Policy& pi1, const ResidualQ& qhat) {
  long clamps = 0;
  Eigen::MatrixXd log_pi1 = log_policy_clamped(pi1, &clamps);
  Policy out;
  out.table.resize(qhat.table.rows(), qhat.table.cols());
  for (Eigen::Index i = 0; i < qhat.table.rows(); ++i) {
    Eigen::RowVectorXd scaled =
        (qhat.alpha_0 * log_pi1.row(i) + qhat.table.row(i)) / qhat.alpha_tilde;
    double m = scaled.maxCoeff();
    Eigen::RowVectorXd ex = (scaled.array() - m).exp();
    out.table.row(i) = ex / ex.sum();
  }
  return out;
}

RewardTable reward_from_residual_q(const ResidualQ& q, const StateSpace& sp,
                                   const Policy& pi1) {
  long clamps = 0;
  Eigen::MatrixXd log_pi1 = log_policy_clamped(pi1, &clamps);
  Eigen::VectorXd v =
      augmented_soft_values(sp, q.table, log_pi1, q.alpha_tilde, q.alpha_0);
  RewardTable out = q.table;
  const double gamma = sp.mdp.gamma;
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i]) continue;
    for (int a = 0; a < sp.vocab_size(); ++a) {
      out(i, a) -= gamma * v[sp.children(i, a)];
    }
  }
  return out;
}

}  // namespace qadapter
