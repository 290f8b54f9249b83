#include "qadapter/eval.hpp"

#include "qadapter/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace qadapter {

namespace {

int sample_prompt(const StateSpace& sp, std::mt19937_64& rng) {
  double u = uniform01(rng);
  double acc = 0.0;
  std::size_t pidx = sp.prompt_states.size() - 1;
  for (std::size_t k = 0; k < sp.prompt_states.size(); ++k) {
    acc += sp.prompt_probs[static_cast<Eigen::Index>(k)];
    if (u < acc) {
      pidx = k;
      break;
    }
  }
  return static_cast<int>(pidx);
}

}  // namespace

double mean_kl_to_base(const Policy& pi, const Policy& pi_base,
                       const StateSpace& sp) {
  // Forward visitation pass under pi, then a weighted per-state KL average.
  Eigen::VectorXd d = Eigen::VectorXd::Zero(sp.num_states());
  for (std::size_t k = 0; k < sp.prompt_states.size(); ++k) {
    d[sp.prompt_states[k]] += sp.prompt_probs[static_cast<Eigen::Index>(k)];
  }
  double kl_sum = 0.0;
  double mass = 0.0;
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i] || d[i] <= 0.0) continue;
    double kl = 0.0;
    for (int a = 0; a < sp.vocab_size(); ++a) {
      double p = pi.table(i, a);
      if (p <= 0.0) continue;
      double q = pi_base.table(i, a);
      if (q <= 0.0) {
        throw DomainError("mean_kl_to_base: base policy has zero mass where "
                          "the evaluated policy does not (state " +
                          std::to_string(i) + ")");
      }
      kl += p * std::log(p / q);
      int c = sp.children(i, a);
      d[c] += d[i] * p;
    }
    kl_sum += d[i] * kl;
    mass += d[i];
  }
  return mass > 0.0 ? kl_sum / mass : 0.0;
}

double sample_win_rate(const Policy& pi_a, const Policy& pi_b,
                       const StateSpace& sp, const RewardTable& r,
                       int n_matches, std::uint64_t seed) {
  if (n_matches < 1) throw ConfigError("n_matches must be >= 1");
  std::mt19937_64 rng(seed);
  double wins = 0.0;
  for (int m = 0; m < n_matches; ++m) {
    int pidx = sample_prompt(sp, rng);
    const TokenSeq& prompt = sp.mdp.prompts[static_cast<std::size_t>(pidx)].first;
    TokenSeq resp_a = sample_response(pi_a, sp, prompt, rng);
    TokenSeq resp_b = sample_response(pi_b, sp, prompt, rng);
    double sa = trajectory_reward_sum(sp, r, prompt, resp_a);
    double sb = trajectory_reward_sum(sp, r, prompt, resp_b);
    if (sa > sb) {
      wins += 1.0;
    } else if (sa == sb) {
      wins += 0.5;
    }
  }
  return wins / static_cast<double>(n_matches);
}

EvalReport evaluate_policy(const Policy& pi, const StateSpace& sp,
                           const RewardTable& r1, const RewardTable& r2,
                           const Policy& pi1, const EvalOptions& opts) {
  EvalReport rep;
  rep.method = opts.method;
  rep.config_echo = opts.config_echo;
  rep.n_matches = opts.n_matches;
  rep.judge_seed = opts.seed;
  rep.return_r1 = policy_return(sp, pi, r1, 0.0);
  rep.return_r2 = policy_return(sp, pi, r2, 0.0);
  RewardTable zero = RewardTable::Zero(sp.num_states(), sp.vocab_size());
  rep.entropy_return = policy_return(sp, pi, zero, 1.0);
  rep.mean_kl_to_base = mean_kl_to_base(pi, pi1, sp);
  rep.win_rate_vs_base_r1 =
      sample_win_rate(pi, pi1, sp, r1, opts.n_matches, opts.seed);
  rep.win_rate_vs_base_r2 =
      sample_win_rate(pi, pi1, sp, r2, opts.n_matches, opts.seed + 1);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["judge"] = judge;
  j["return_r1"] = return_r1;
  j["return_r2"] = return_r2;
  j["entropy_return"] = entropy_return;
  j["mean_kl_to_base"] = mean_kl_to_base;
  j["win_rate_vs_base_r1"] = win_rate_vs_base_r1;
  j["win_rate_vs_base_r2"] = win_rate_vs_base_r2;
  j["n_matches"] = n_matches;
  j["judge_seed"] = judge_seed;
  j["config"] = config_echo;
  return j.dump(2) + "\n";
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("spearman requires two equal-length series, n >= 2");
  }
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

SweepResult alpha_sweep(const PreferenceDataset& ds, const StateSpace& sp,
                        const Policy& pi1, const RewardTable& r1,
                        const RewardTable& r2,
                        const std::vector<double>& alphas,
                        const TrainConfig& cfg, const EvalOptions& opts) {
  if (alphas.empty()) throw ConfigError("alpha_sweep: empty alpha list");
  SweepResult result;
  std::vector<double> a_vals, r1_vals, r2_vals;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    double a0 = alphas[i];
    if (a0 < 0.0) throw ConfigError("alpha_0 must be >= 0");
    TrainConfig run_cfg = cfg;
    run_cfg.alpha_0 = a0;
    QAdapterResult trained = train_qadapter(ds, sp, pi1, run_cfg);
    ResidualQ qhat{trained.q.theta, run_cfg.alpha_tilde, run_cfg.alpha_0, 0};
    Policy composed = compose_policy(pi1, qhat);
    EvalOptions run_opts = opts;
    run_opts.method = "qadapter[alpha_0=" + std::to_string(a0) + "]";
    run_opts.config_echo = trained.report.config_echo;
    SweepRow row;
    row.alpha_0 = a0;
    row.report = evaluate_policy(composed, sp, r1, r2, pi1, run_opts);
    a_vals.push_back(a0);
    r1_vals.push_back(row.report.return_r1);
    r2_vals.push_back(row.report.return_r2);
    result.rows.push_back(std::move(row));
  }
  result.spearman_r1 = spearman(a_vals, r1_vals);
  result.spearman_r2 = spearman(a_vals, r2_vals);
  return result;
}

std::string SweepResult::to_table() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%10s %14s %14s %14s %10s %10s\n", "alpha_0",
                "return_r1", "return_r2", "kl_to_base", "win_r1", "win_r2");
  out << buf;
  for (const SweepRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%10.4g %14.8f %14.8f %14.8f %10.4f %10.4f\n",
                  row.alpha_0, row.report.return_r1, row.report.return_r2,
                  row.report.mean_kl_to_base, row.report.win_rate_vs_base_r1,
                  row.report.win_rate_vs_base_r2);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "spearman(alpha_0, return_r1) = %+.4f\n"
                "spearman(alpha_0, return_r2) = %+.4f\n",
                spearman_r1, spearman_r2);
  out << buf;
  return out.str();
}

std::string SweepResult::to_json() const {
  nlohmann::ordered_json j;
  j["spearman_alpha0_return_r1"] = spearman_r1;
  j["spearman_alpha0_return_r2"] = spearman_r2;
  j["rows"] = nlohmann::ordered_json::array();
  for (const SweepRow& row : rows) {
    nlohmann::ordered_json r;
    r["alpha_0"] = row.alpha_0;
    r["return_r1"] = row.report.return_r1;
    r["return_r2"] = row.report.return_r2;
    r["mean_kl_to_base"] = row.report.mean_kl_to_base;
    r["win_rate_vs_base_r1"] = row.report.win_rate_vs_base_r1;
    r["win_rate_vs_base_r2"] = row.report.win_rate_vs_base_r2;
    j["rows"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

}  // namespace qadapter
