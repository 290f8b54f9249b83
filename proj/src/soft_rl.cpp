#include "qadapter/soft_rl.hpp"

#include <cmath>
#include <limits>

namespace qadapter {

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) {
    throw DomainError("log_sum_exp of empty list");
  }
  double max_v = -std::numeric_limits<double>::infinity();
  for (double v : values) max_v = std::max(max_v, v);
  if (!std::isfinite(max_v)) {
    throw DomainError("log_sum_exp requires at least one finite entry");
  }
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max_v);
  return max_v + std::log(sum);
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& values) {
  return log_sum_exp(std::span<const double>(values.data(),
                                             static_cast<std::size_t>(values.size())));
}

double soft_value(const QFunction& q, int s, double alpha) {
  Eigen::RowVectorXd scaled = q.table.row(s) / alpha;
  return alpha * log_sum_exp(scaled);
}

namespace {

// Per-state soft value of a raw Q table; terminal states are 0.
Eigen::VectorXd soft_values(const StateSpace& sp, const Eigen::MatrixXd& q,
                            double alpha) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(sp.num_states());
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i]) continue;
    Eigen::RowVectorXd scaled = q.row(i) / alpha;
    v[i] = alpha * log_sum_exp(scaled);
  }
  return v;
}

}  // namespace

Eigen::MatrixXd soft_backup(const StateSpace& sp, const RewardTable& r,
                            const Eigen::MatrixXd& q, double alpha) {
  Eigen::VectorXd v = soft_values(sp, q, alpha);
  Eigen::MatrixXd out = r;
  const double gamma = sp.mdp.gamma;
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i]) continue;
    for (int a = 0; a < sp.vocab_size(); ++a) {
      int c = sp.children(i, a);
      out(i, a) += gamma * v[c];  // v is 0 at terminal children
    }
  }
  return out;
}

QFunction soft_q_iteration(const StateSpace& sp, const RewardTable& r,
                           double alpha, double tol, int max_iters,
                           SolveMode mode) {
  QFunction q;
  q.alpha = alpha;
  const double gamma = sp.mdp.gamma;
  if (mode == SolveMode::backward) {
    // Children always carry larger indices than their parents, so a single
    // descending sweep sees every child's value before the parent needs it.
    q.table = r;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(sp.num_states());
    for (int i = sp.num_states() - 1; i >= 0; --i) {
      if (!sp.terminal[i]) {
        for (int a = 0; a < sp.vocab_size(); ++a) {
          q.table(i, a) += gamma * v[sp.children(i, a)];
        }
        Eigen::RowVectorXd scaled = q.table.row(i) / alpha;
        v[i] = alpha * log_sum_exp(scaled);
      }
    }
    double residual = (soft_backup(sp, r, q.table, alpha) - q.table)
                          .cwiseAbs()
                          .maxCoeff();
    if (residual > tol) {
      throw ConvergenceError("backward induction residual " +
                                 std::to_string(residual) + " exceeds tol",
                             residual);
    }
    return q;
  }
  q.table = Eigen::MatrixXd::Zero(sp.num_states(), sp.vocab_size());
  for (int it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd next = soft_backup(sp, r, q.table, alpha);
    double residual = (next - q.table).cwiseAbs().maxCoeff();
    q.table = std::move(next);
    if (residual <= tol) return q;
  }
  double residual =
      (soft_backup(sp, r, q.table, alpha) - q.table).cwiseAbs().maxCoeff();
  throw ConvergenceError("soft Q-iteration did not converge; residual " +
                             std::to_string(residual),
                         residual);
}

Policy policy_from_q(const QFunction& q, double alpha) {
  Policy pi;
  pi.table.resize(q.table.rows(), q.table.cols());
  for (Eigen::Index i = 0; i < q.table.rows(); ++i) {
    Eigen::RowVectorXd scaled = q.table.row(i) / alpha;
    double m = scaled.maxCoeff();
    Eigen::RowVectorXd ex = (scaled.array() - m).exp();
    pi.table.row(i) = ex / ex.sum();
  }
  return pi;
}

double policy_return(const StateSpace& sp, const Policy& pi,
                     const RewardTable& r, double entropy_weight) {
  const double gamma = sp.mdp.gamma;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(sp.num_states());
  for (int i = sp.num_states() - 1; i >= 0; --i) {
    if (sp.terminal[i]) continue;
    double acc = 0.0;
    for (int a = 0; a < sp.vocab_size(); ++a) {
      double p = pi.table(i, a);
      if (p <= 0.0) continue;
      int c = sp.children(i, a);
      acc += p * (r(i, a) - entropy_weight * std::log(p) + gamma * v[c]);
    }
    v[i] = acc;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < sp.prompt_states.size(); ++k) {
    total += sp.prompt_probs[static_cast<Eigen::Index>(k)] * v[sp.prompt_states[k]];
  }
  return total;
}

RewardTable kl_regularized_reward(const StateSpace& sp, const RewardTable& r,
                                  const Policy& pi_ref, double alpha) {
  RewardTable out = r;
  if (alpha == 0.0) return out;
  for (int i = 0; i < sp.num_states(); ++i) {
    for (int a = 0; a < sp.vocab_size(); ++a) {
      double p = pi_ref.table(i, a);
      if (p <= 0.0) {
        throw DomainError("kl_regularized_reward: zero reference probability at state " +
                          std::to_string(i) + ", action " + std::to_string(a));
      }
      out(i, a) += alpha * std::log(p);
    }
  }
  return out;
}

Eigen::MatrixXd log_policy_clamped(const Policy& pi, long* clamp_count) {
  Eigen::MatrixXd out(pi.table.rows(), pi.table.cols());
  for (Eigen::Index i = 0; i < pi.table.rows(); ++i) {
    for (Eigen::Index a = 0; a < pi.table.cols(); ++a) {
      double p = pi.table(i, a);
      if (p > 0.0) {
        out(i, a) = std::max(std::log(p), -80.0);
      } else {
        out(i, a) = -80.0;
        if (clamp_count) ++*clamp_count;
      }
    }
  }
  return out;
}

}  // namespace qadapter
