#include "qadapter/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace qadapter {

namespace {

std::string config_echo(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "alpha_tilde=" << cfg.alpha_tilde << " alpha_0=" << cfg.alpha_0
      << " beta=" << cfg.beta << " gamma=" << cfg.gamma
      << " learning_rate=" << cfg.learning_rate
      << " batch_size=" << cfg.batch_size << " epochs=" << cfg.epochs
      << " seed=" << cfg.seed
      << " normalize_by_length=" << (cfg.normalize_by_length ? 1 : 0)
      << " optimizer="
      << (cfg.optimizer == OptimizerKind::adaptive_moments ? "adaptive_moments"
                                                           : "sgd")
      << " psi_mode=" << (cfg.psi_mode == PsiMode::mean ? "mean" : "sum")
      << " beta_dpo=" << cfg.beta_dpo << " adam_beta1=" << cfg.adam_beta1
      << " adam_beta2=" << cfg.adam_beta2 << " adam_eps=" << cfg.adam_eps;
  return out.str();
}

struct AdamState {
  Eigen::MatrixXd m, v;
  long t = 0;

  explicit AdamState(Eigen::Index rows, Eigen::Index cols)
      : m(Eigen::MatrixXd::Zero(rows, cols)),
        v(Eigen::MatrixXd::Zero(rows, cols)) {}

  void step(Eigen::MatrixXd& theta, const Eigen::MatrixXd& grad,
            const TrainConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::sgd) {
      theta -= cfg.learning_rate * grad;
      return;
    }
    ++t;
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
    v = cfg.adam_beta2 * v.array().matrix() +
        (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    Eigen::ArrayXXd mhat = m.array() / bc1;
    Eigen::ArrayXXd vhat = v.array() / bc2;
    theta.array() -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
  }
};

// Seeded epoch/batch loop shared by every trainable objective.
template <typename LossFn>
TrainReport run_optimizer(Eigen::MatrixXd& params, std::size_t n_pairs,
                          const TrainConfig& cfg, LossFn&& loss_fn) {
  if (n_pairs == 0) throw ConfigError("training requires a non-empty dataset");
  auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.config_echo = config_echo(cfg);

  int batch = std::min<int>(cfg.batch_size, static_cast<int>(n_pairs));
  if (batch < 1) throw ConfigError("batch_size must be >= 1");
  AdamState opt(params.rows(), params.cols());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), 0u);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t off = 0; off < n_pairs; off += batch) {
      std::size_t hi = std::min(n_pairs, off + batch);
      LossValue lv = loss_fn(params, order, off, hi);
      if (!std::isfinite(lv.loss) || lv.loss > 1e3) {
        throw DivergenceError("training diverged at step " +
                              std::to_string(report.loss_trace.size()) +
                              " (loss " + std::to_string(lv.loss) + ")");
      }
      report.loss_trace.push_back(lv.loss);
      report.grad_norm_trace.push_back(lv.gradient.norm());
      opt.step(params, lv.gradient, cfg);
      if (!params.allFinite()) {
        throw DivergenceError("non-finite parameters after step " +
                              std::to_string(report.loss_trace.size()));
      }
    }
  }
  report.final_loss = report.loss_trace.empty() ? 0.0 : report.loss_trace.back();
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

struct StepInfo {
  int s, a;
  double tq;
  int successor = -1;            // -1 when the successor term is dropped
  Eigen::RowVectorXd softmax;    // successor softmax, empty when dropped
};

// Recovered rewards and the pieces of their gradient along one response.
std::vector<StepInfo> t_operator_steps(const ParamQ& q, const StateSpace& sp,
                                       const Eigen::MatrixXd& log_pi1,
                                       const TokenSeq& prompt,
                                       const TokenSeq& response, double gamma) {
  std::vector<StepInfo> out;
  for (auto [s, a] : trajectory_steps(sp, prompt, response)) {
    StepInfo info;
    info.s = s;
    info.a = a;
    info.tq = q.theta(s, a);
    int c = sp.children(s, a);
    if (gamma != 0.0 && c >= 0 && !sp.terminal[c]) {
      Eigen::RowVectorXd scaled =
          (q.theta.row(c) + q.alpha_0 * log_pi1.row(c)) / q.alpha_tilde;
      double m = scaled.maxCoeff();
      Eigen::RowVectorXd ex = (scaled.array() - m).exp();
      double z = ex.sum();
      info.tq -= gamma * q.alpha_tilde * (m + std::log(z));
      info.successor = c;
      info.softmax = ex / z;
    }
    out.push_back(std::move(info));
  }
  return out;
}

}  // namespace

std::vector<double> t_operator_on_trajectory(const ParamQ& q,
                                             const StateSpace& sp,
                                             const Eigen::MatrixXd& log_pi1,
                                             const TokenSeq& prompt,
                                             const TokenSeq& response,
                                             double gamma) {
  std::vector<double> out;
  for (const StepInfo& info :
       t_operator_steps(q, sp, log_pi1, prompt, response, gamma)) {
    out.push_back(info.tq);
  }
  return out;
}

LossValue qadapter_loss(const ParamQ& q,
                        const std::vector<const PreferencePair*>& batch,
                        const StateSpace& sp, const Eigen::MatrixXd& log_pi1,
                        const TrainConfig& cfg) {
  if (batch.empty()) throw ConfigError("qadapter_loss: empty batch");
  LossValue out;
  out.gradient = Eigen::MatrixXd::Zero(q.theta.rows(), q.theta.cols());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double norm = cfg.normalize_by_length
                          ? static_cast<double>(sp.mdp.horizon)
                          : 1.0;
  const double gamma = cfg.gamma;

  // dtq/dtheta is +1 at (s,a) and -gamma*softmax on the successor row.
  auto add_dtq = [&](const StepInfo& info, double coef) {
    out.gradient(info.s, info.a) += coef;
    if (info.successor >= 0) {
      out.gradient.row(info.successor) -=
          coef * gamma * info.softmax;
    }
  };

  std::vector<std::vector<StepInfo>> steps_w(batch.size()), steps_l(batch.size());
  double sq_sum = 0.0;
  long n_steps = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreferencePair& pair = *batch[i];
    steps_w[i] = t_operator_steps(q, sp, log_pi1, pair.prompt, pair.chosen, gamma);
    steps_l[i] = t_operator_steps(q, sp, log_pi1, pair.prompt, pair.rejected, gamma);
    double delta = 0.0;
    for (const StepInfo& st : steps_w[i]) {
      delta += st.tq;
      sq_sum += st.tq * st.tq;
    }
    for (const StepInfo& st : steps_l[i]) {
      delta -= st.tq;
      sq_sum += st.tq * st.tq;
    }
    n_steps += static_cast<long>(steps_w[i].size() + steps_l[i].size());
    delta /= norm;
    if (!std::isfinite(delta)) {
      throw DivergenceError("non-finite margin at pair " + std::to_string(i));
    }
    double sig = bt_probability(delta, 0.0);
    out.loss += -std::log(sig) * inv_n;
    double coef = (sig - 1.0) * inv_n / norm;
    for (const StepInfo& st : steps_w[i]) add_dtq(st, coef);
    for (const StepInfo& st : steps_l[i]) add_dtq(st, -coef);
  }

  if (cfg.beta > 0.0 && n_steps > 0) {
    double denom = cfg.psi_mode == PsiMode::mean
                       ? static_cast<double>(n_steps)
                       : static_cast<double>(batch.size());
    out.loss += cfg.beta * sq_sum / denom;
    double scale = 2.0 * cfg.beta / denom;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (const StepInfo& st : steps_w[i]) add_dtq(st, scale * st.tq);
      for (const StepInfo& st : steps_l[i]) add_dtq(st, scale * st.tq);
    }
  }
  return out;
}

QAdapterResult train_qadapter(const PreferenceDataset& ds, const StateSpace& sp,
                              const Policy& pi1, const TrainConfig& cfg) {
  QAdapterResult result;
  result.q.alpha_tilde = cfg.alpha_tilde;
  result.q.alpha_0 = cfg.alpha_0;
  result.q.theta = Eigen::MatrixXd::Zero(sp.num_states(), sp.vocab_size());

  long clamps = 0;
  Eigen::MatrixXd log_pi1 = log_policy_clamped(pi1, &clamps);

  result.report = run_optimizer(
      result.q.theta, ds.pairs.size(), cfg,
      [&](Eigen::MatrixXd& theta, const std::vector<std::size_t>& order,
          std::size_t lo, std::size_t hi) {
        ParamQ view{theta, cfg.alpha_tilde, cfg.alpha_0};
        std::vector<const PreferencePair*> batch;
        batch.reserve(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) batch.push_back(&ds.pairs[order[k]]);
        return qadapter_loss(view, batch, sp, log_pi1, cfg);
      });
  if (clamps > 0) {
    result.report.warnings.push_back("log pi1 clamped on " +
                                     std::to_string(clamps) + " entries");
  }
  return result;
}

LossValue sft_loss(const Eigen::MatrixXd& logits,
                   const std::vector<const PreferencePair*>& batch,
                   const StateSpace& sp) {
  if (batch.empty()) throw ConfigError("sft_loss: empty batch");
  LossValue out;
  out.gradient = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const PreferencePair* pair : batch) {
    for (auto [s, a] : trajectory_steps(sp, pair->prompt, pair->chosen)) {
      Eigen::RowVectorXd row = logits.row(s);
      double m = row.maxCoeff();
      Eigen::RowVectorXd ex = (row.array() - m).exp();
      double z = ex.sum();
      out.loss -= (row[a] - m - std::log(z)) * inv_n;
      out.gradient.row(s) += inv_n * (ex / z);
      out.gradient(s, a) -= inv_n;
    }
  }
  return out;
}

LossValue dpo_loss(const Eigen::MatrixXd& logits,
                   const std::vector<const PreferencePair*>& batch,
                   const StateSpace& sp, const Eigen::MatrixXd& log_pi1,
                   double beta_dpo) {
  if (batch.empty()) throw ConfigError("dpo_loss: empty batch");
  LossValue out;
  out.gradient = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const PreferencePair* pair : batch) {
    auto steps_w = trajectory_steps(sp, pair->prompt, pair->chosen);
    auto steps_l = trajectory_steps(sp, pair->prompt, pair->rejected);

    auto log_ratio = [&](const std::vector<std::pair<int, int>>& steps) {
      double total = 0.0;
      for (auto [s, a] : steps) {
        Eigen::RowVectorXd row = logits.row(s);
        double m = row.maxCoeff();
        Eigen::RowVectorXd ex = (row.array() - m).exp();
        total += (row[a] - m - std::log(ex.sum())) - log_pi1(s, a);
      }
      return total;
    };
    double margin = beta_dpo * (log_ratio(steps_w) - log_ratio(steps_l));
    double sig = bt_probability(margin, 0.0);
    out.loss += -std::log(sig) * inv_n;
    double coef = (sig - 1.0) * inv_n * beta_dpo;
    auto accumulate = [&](const std::vector<std::pair<int, int>>& steps,
                          double sign) {
      for (auto [s, a] : steps) {
        Eigen::RowVectorXd row = logits.row(s);
        double m = row.maxCoeff();
        Eigen::RowVectorXd ex = (row.array() - m).exp();
        Eigen::RowVectorXd sm = ex / ex.sum();
        out.gradient.row(s) -= sign * coef * sm;
        out.gradient(s, a) += sign * coef;
      }
    };
    accumulate(steps_w, 1.0);
    accumulate(steps_l, -1.0);
  }
  return out;
}

PolicyResult train_sft(const PreferenceDataset& ds, const StateSpace& sp,
                       const TrainConfig& cfg) {
  Eigen::MatrixXd logits =
      Eigen::MatrixXd::Zero(sp.num_states(), sp.vocab_size());
  PolicyResult result;
  result.report = run_optimizer(
      logits, ds.pairs.size(), cfg,
      [&](Eigen::MatrixXd& params, const std::vector<std::size_t>& order,
          std::size_t lo, std::size_t hi) {
        std::vector<const PreferencePair*> batch;
        for (std::size_t k = lo; k < hi; ++k) batch.push_back(&ds.pairs[order[k]]);
        return sft_loss(params, batch, sp);
      });
  result.policy = policy_from_q(QFunction{logits, 1.0}, 1.0);
  return result;
}

PolicyResult train_dpo(const PreferenceDataset& ds, const StateSpace& sp,
                       const Policy& pi1, double beta_dpo,
                       const TrainConfig& cfg) {
  long clamps = 0;
  Eigen::MatrixXd log_pi1 = log_policy_clamped(pi1, &clamps);
  Eigen::MatrixXd logits = log_pi1;  // start at the reference policy
  PolicyResult result;
  result.report = run_optimizer(
      logits, ds.pairs.size(), cfg,
      [&](Eigen::MatrixXd& params, const std::vector<std::size_t>& order,
          std::size_t lo, std::size_t hi) {
        std::vector<const PreferencePair*> batch;
        for (std::size_t k = lo; k < hi; ++k) batch.push_back(&ds.pairs[order[k]]);
        return dpo_loss(params, batch, sp, log_pi1, beta_dpo);
      });
  result.policy = policy_from_q(QFunction{logits, 1.0}, 1.0);
  return result;
}

PolicyResult train_rlhf_pipeline(const PreferenceDataset& ds,
                                 const StateSpace& sp, const Policy& pi_ref,
                                 double alpha, const TrainConfig& cfg) {
  Eigen::MatrixXd r_fit =
      Eigen::MatrixXd::Zero(sp.num_states(), sp.vocab_size());
  PolicyResult result;
  result.report = run_optimizer(
      r_fit, ds.pairs.size(), cfg,
      [&](Eigen::MatrixXd& params, const std::vector<std::size_t>& order,
          std::size_t lo, std::size_t hi) {
        std::vector<PreferencePair> batch;
        for (std::size_t k = lo; k < hi; ++k) batch.push_back(ds.pairs[order[k]]);
        RewardModelLoss rl = reward_model_loss(params, batch, sp);
        return LossValue{rl.loss, std::move(rl.gradient)};
      });
  RewardTable r_kl = kl_regularized_reward(sp, r_fit, pi_ref, alpha);
  QFunction q = soft_q_iteration(sp, r_kl, alpha);
  result.policy = policy_from_q(q, alpha);
  return result;
}

}  // namespace qadapter
