// Pipeline driver: build the environment, pre-train the base policy,
// generate preferences, train Q-Adapter and baselines, evaluate, sweep.
// Exit codes: 0 ok, 2 config, 3 capacity, 4 missing/stale artifact,
// 5 training divergence or non-convergence.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qadapter/config.hpp"
#include "qadapter/eval.hpp"
#include "qadapter/io.hpp"
#include "qadapter/residual_q.hpp"
#include "qadapter/rng.hpp"

namespace qa = qadapter;

namespace {

struct Paths {
  std::string dir;
  std::string mdp() const { return dir + "/mdp.cfg"; }
  std::string r1() const { return dir + "/r1.mat"; }
  std::string r2() const { return dir + "/r2.mat"; }
  std::string pi1() const { return dir + "/pi1.mat"; }
  std::string prefs() const { return dir + "/prefs.txt"; }
  std::string qhat() const { return dir + "/qhat.mat"; }
  std::string policy(const std::string& method) const {
    return dir + "/policy_" + method + ".mat";
  }
  std::string train_report(const std::string& method) const {
    return dir + "/train_" + method + ".json";
  }
  std::string eval_report(const std::string& method) const {
    return dir + "/eval_" + method + ".json";
  }
  std::string eval_table() const { return dir + "/eval_compare.txt"; }
  std::string sweep_table() const { return dir + "/sweep.txt"; }
  std::string sweep_json() const { return dir + "/sweep.json"; }
};

struct Env {
  qa::RunConfig rc;
  Paths paths;
  qa::StateSpace sp;
  std::string mdp_fp;
  qa::RewardTable r1, r2;
};

std::string require_meta(const qa::MatrixFile& mf, const std::string& key,
                         const std::string& path) {
  auto it = mf.meta.find(key);
  if (it == mf.meta.end()) {
    throw qa::ArtifactError(path + ": missing '" + key + "' in header");
  }
  return it->second;
}

void check_env_fp(const qa::MatrixFile& mf, const std::string& path,
                  const std::string& mdp_fp) {
  if (require_meta(mf, "env", path) != mdp_fp) {
    throw qa::ArtifactError(path + ": stale artifact (env fingerprint " +
                            mf.meta.at("env") + " != " + mdp_fp + ")");
  }
}

Env load_env(const qa::RunConfig& rc, bool need_rewards = true) {
  Env env;
  env.rc = rc;
  env.paths.dir = rc.artifacts_dir;
  if (!qa::file_exists(env.paths.mdp())) {
    throw qa::ArtifactError("missing artifact: " + env.paths.mdp() +
                            " (run make-env first)");
  }
  std::string mdp_text = qa::read_text_file(env.paths.mdp());
  qa::Mdp mdp = qa::Mdp::from_config_string(mdp_text);
  env.mdp_fp = qa::fingerprint_hex(mdp.to_config_string());
  env.sp = qa::enumerate_states(mdp, rc.state_cap);
  if (need_rewards) {
    qa::MatrixFile m1 = qa::load_matrix(env.paths.r1(), "reward");
    qa::MatrixFile m2 = qa::load_matrix(env.paths.r2(), "reward");
    check_env_fp(m1, env.paths.r1(), env.mdp_fp);
    check_env_fp(m2, env.paths.r2(), env.mdp_fp);
    env.r1 = std::move(m1.matrix);
    env.r2 = std::move(m2.matrix);
  }
  return env;
}

qa::Policy load_policy(const std::string& path, const std::string& mdp_fp) {
  qa::MatrixFile mf = qa::load_matrix(path, "policy");
  check_env_fp(mf, path, mdp_fp);
  return qa::Policy{std::move(mf.matrix)};
}

qa::PreferenceDataset load_prefs(const Env& env) {
  qa::PreferenceDataset ds = qa::load_dataset(env.paths.prefs());
  if (!ds.meta.mdp_fingerprint.empty() && ds.meta.mdp_fingerprint != env.mdp_fp) {
    throw qa::ArtifactError(env.paths.prefs() + ": stale dataset (mdp " +
                            ds.meta.mdp_fingerprint + " != " + env.mdp_fp + ")");
  }
  return ds;
}

qa::RewardTable random_reward(const qa::StateSpace& sp, std::uint64_t seed,
                              double low, double high) {
  std::mt19937_64 rng(seed);
  qa::RewardTable r(sp.num_states(), sp.vocab_size());
  for (int i = 0; i < sp.num_states(); ++i) {
    for (int a = 0; a < sp.vocab_size(); ++a) {
      r(i, a) = low + (high - low) * qa::uniform01(rng);
    }
  }
  return r;
}

qa::RewardTable inline_reward(const qa::StateSpace& sp,
                              const std::vector<double>& values,
                              const std::string& name) {
  std::size_t need = static_cast<std::size_t>(sp.num_states()) *
                     static_cast<std::size_t>(sp.vocab_size());
  if (values.size() != need) {
    throw qa::ConfigError(name + ": expected " + std::to_string(need) +
                          " values (num_states*vocab), got " +
                          std::to_string(values.size()));
  }
  qa::RewardTable r(sp.num_states(), sp.vocab_size());
  std::size_t k = 0;
  for (int i = 0; i < sp.num_states(); ++i) {
    for (int a = 0; a < sp.vocab_size(); ++a) r(i, a) = values[k++];
  }
  return r;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_train_report(const qa::TrainReport& report, const std::string& path) {
  // Wall clock deliberately excluded: artifacts must be byte-stable.
  nlohmann::ordered_json j;
  j["config"] = report.config_echo;
  j["final_loss"] = report.final_loss;
  j["steps"] = report.loss_trace.size();
  j["loss_trace"] = report.loss_trace;
  j["grad_norm_trace"] = report.grad_norm_trace;
  j["warnings"] = report.warnings;
  qa::write_text_file(path, j.dump(2) + "\n");
}

int cmd_make_env(const qa::RunConfig& rc) {
  Paths paths{rc.artifacts_dir};
  qa::StateSpace sp = qa::enumerate_states(rc.mdp, rc.state_cap);
  std::string mdp_text = rc.mdp.to_config_string();
  qa::write_text_file(paths.mdp(), mdp_text);
  std::string mdp_fp = qa::fingerprint_hex(mdp_text);

  qa::RewardTable r1, r2;
  if (rc.rewards.mode == qa::RewardSource::random) {
    r1 = random_reward(sp, rc.rewards.r1_seed, rc.rewards.low, rc.rewards.high);
    r2 = random_reward(sp, rc.rewards.r2_seed, rc.rewards.low, rc.rewards.high);
  } else {
    r1 = inline_reward(sp, rc.rewards.r1_inline, "r1_inline");
    r2 = inline_reward(sp, rc.rewards.r2_inline, "r2_inline");
  }
  qa::save_matrix({"reward", r1, {{"env", mdp_fp}, {"name", "r1"}}}, paths.r1());
  qa::save_matrix({"reward", r2, {{"env", mdp_fp}, {"name", "r2"}}}, paths.r2());
  std::cout << "states=" << sp.num_states() << " env=" << mdp_fp << "\n";
  return 0;
}

int cmd_pretrain(const qa::RunConfig& rc) {
  Env env = load_env(rc);
  qa::QFunction q1 = qa::soft_q_iteration(env.sp, env.r1, rc.pretrain.alpha1,
                                          rc.pretrain.tol, rc.pretrain.max_iters);
  double residual =
      (qa::soft_backup(env.sp, env.r1, q1.table, rc.pretrain.alpha1) - q1.table)
          .cwiseAbs()
          .maxCoeff();
  qa::Policy pi1 = qa::policy_from_q(q1, rc.pretrain.alpha1);
  qa::save_matrix({"policy",
                   pi1.table,
                   {{"env", env.mdp_fp},
                    {"alpha", format_real(rc.pretrain.alpha1)},
                    {"name", "pi1"}}},
                  env.paths.pi1());
  std::cout << "pi1 certificate: bellman_residual=" << residual
            << " alpha1=" << rc.pretrain.alpha1 << "\n";
  return 0;
}

int cmd_gen_prefs(const qa::RunConfig& rc) {
  Env env = load_env(rc);
  qa::Policy pi1 = load_policy(env.paths.pi1(), env.mdp_fp);
  qa::Policy behavior = qa::epsilon_mixture(pi1, rc.data.epsilon);
  std::string desc = "eps_mixture(eps=" + format_real(rc.data.epsilon) + ",base=pi1)";
  qa::PreferenceDataset ds = qa::generate_dataset(
      env.sp, env.r2, behavior, rc.data.n_pairs, rc.data.mode, rc.data.seed,
      desc, env.mdp_fp);
  qa::save_dataset(ds, env.paths.prefs());
  std::cout << "pairs=" << ds.pairs.size() << " -> " << env.paths.prefs() << "\n";
  return 0;
}

int cmd_train(const qa::RunConfig& rc, const std::string& method) {
  Env env = load_env(rc);
  qa::PreferenceDataset ds = load_prefs(env);
  if (method == "sft") {
    qa::PolicyResult res = qa::train_sft(ds, env.sp, rc.train);
    qa::save_matrix({"policy", res.policy.table,
                     {{"env", env.mdp_fp}, {"name", "sft"}}},
                    env.paths.policy("sft"));
    write_train_report(res.report, env.paths.train_report("sft"));
    std::cout << "sft final_loss=" << res.report.final_loss << "\n";
    return 0;
  }
  qa::Policy pi1 = load_policy(env.paths.pi1(), env.mdp_fp);
  if (method == "qadapter") {
    qa::QAdapterResult res = qa::train_qadapter(ds, env.sp, pi1, rc.train);
    qa::ResidualQ qhat{res.q.theta, rc.train.alpha_tilde, rc.train.alpha_0, 0};
    qa::Policy composed = qa::compose_policy(pi1, qhat);
    qa::save_matrix({"residual_q",
                     qhat.table,
                     {{"env", env.mdp_fp},
                      {"alpha_tilde", format_real(qhat.alpha_tilde)},
                      {"alpha_0", format_real(qhat.alpha_0)}}},
                    env.paths.qhat());
    qa::save_matrix({"policy", composed.table,
                     {{"env", env.mdp_fp}, {"name", "qadapter"}}},
                    env.paths.policy("qadapter"));
    write_train_report(res.report, env.paths.train_report("qadapter"));
    std::cout << "qadapter final_loss=" << res.report.final_loss << "\n";
    return 0;
  }
  if (method == "dpo") {
    qa::PolicyResult res =
        qa::train_dpo(ds, env.sp, pi1, rc.train.beta_dpo, rc.train);
    qa::save_matrix({"policy", res.policy.table,
                     {{"env", env.mdp_fp}, {"name", "dpo"}}},
                    env.paths.policy("dpo"));
    write_train_report(res.report, env.paths.train_report("dpo"));
    std::cout << "dpo final_loss=" << res.report.final_loss << "\n";
    return 0;
  }
  if (method == "rlhf") {
    qa::PolicyResult res = qa::train_rlhf_pipeline(ds, env.sp, pi1,
                                                   rc.train.alpha_tilde, rc.train);
    qa::save_matrix({"policy", res.policy.table,
                     {{"env", env.mdp_fp}, {"name", "rlhf"}}},
                    env.paths.policy("rlhf"));
    write_train_report(res.report, env.paths.train_report("rlhf"));
    std::cout << "rlhf final_loss=" << res.report.final_loss << "\n";
    return 0;
  }
  throw qa::ConfigError("unknown training method '" + method +
                        "' (expected qadapter|sft|dpo|rlhf)");
}

int cmd_eval(const qa::RunConfig& rc, bool all, std::string method) {
  Env env = load_env(rc);
  qa::Policy pi1 = load_policy(env.paths.pi1(), env.mdp_fp);

  std::vector<std::string> methods;
  if (all) {
    methods.push_back("pi1");
    for (const char* m : {"qadapter", "sft", "dpo", "rlhf"}) {
      if (qa::file_exists(env.paths.policy(m))) methods.push_back(m);
    }
  } else {
    methods.push_back(method.empty() ? "pi1" : method);
  }

  std::string table;
  {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-10s %14s %14s %12s %8s %8s\n", "method",
                  "return_r1", "return_r2", "kl_to_base", "win_r1", "win_r2");
    table += buf;
  }
  for (const std::string& m : methods) {
    qa::Policy pi =
        (m == "pi1") ? pi1 : load_policy(env.paths.policy(m), env.mdp_fp);
    qa::EvalOptions opts;
    opts.n_matches = rc.eval.n_matches;
    opts.seed = rc.eval.seed;
    opts.method = m;
    opts.config_echo = "n_matches=" + std::to_string(rc.eval.n_matches) +
                       " seed=" + std::to_string(rc.eval.seed);
    qa::EvalReport rep = qa::evaluate_policy(pi, env.sp, env.r1, env.r2, pi1, opts);
    qa::write_text_file(env.paths.eval_report(m), rep.to_json());
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-10s %14.8f %14.8f %12.8f %8.4f %8.4f\n",
                  m.c_str(), rep.return_r1, rep.return_r2, rep.mean_kl_to_base,
                  rep.win_rate_vs_base_r1, rep.win_rate_vs_base_r2);
    table += buf;
  }
  if (all) qa::write_text_file(env.paths.eval_table(), table);
  std::cout << table;
  return 0;
}

int cmd_sweep(const qa::RunConfig& rc) {
  Env env = load_env(rc);
  qa::Policy pi1 = load_policy(env.paths.pi1(), env.mdp_fp);
  qa::PreferenceDataset ds = load_prefs(env);
  qa::EvalOptions opts;
  opts.n_matches = rc.eval.n_matches;
  opts.seed = rc.eval.seed;
  qa::SweepResult res = qa::alpha_sweep(ds, env.sp, pi1, env.r1, env.r2,
                                        rc.sweep_alphas, rc.train, opts);
  qa::write_text_file(env.paths.sweep_table(), res.to_table());
  qa::write_text_file(env.paths.sweep_json(), res.to_json());
  std::cout << res.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"q-adapter desk-scale laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string train_method;
  std::string eval_method;
  bool eval_all = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run config file")->required();
  };
  CLI::App* make_env = app.add_subcommand("make-env", "write mdp and reward artifacts");
  add_config(make_env);
  CLI::App* pretrain = app.add_subcommand("pretrain", "solve for the base policy pi1");
  add_config(pretrain);
  CLI::App* gen = app.add_subcommand("gen-prefs", "generate the preference dataset");
  add_config(gen);
  CLI::App* train = app.add_subcommand("train", "train qadapter|sft|dpo|rlhf");
  train->add_option("method", train_method, "qadapter|sft|dpo|rlhf")->required();
  add_config(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate trained policies");
  add_config(eval);
  eval->add_flag("--all", eval_all, "evaluate every trained method");
  eval->add_option("--method", eval_method, "single method to evaluate");
  CLI::App* sweep = app.add_subcommand("sweep", "alpha_0 sensitivity sweep");
  add_config(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    qa::RunConfig rc = qa::RunConfig::from_file(config_path);
    if (make_env->parsed()) return cmd_make_env(rc);
    if (pretrain->parsed()) return cmd_pretrain(rc);
    if (gen->parsed()) return cmd_gen_prefs(rc);
    if (train->parsed()) return cmd_train(rc, train_method);
    if (eval->parsed()) return cmd_eval(rc, eval_all || eval_method.empty(), eval_method);
    if (sweep->parsed()) return cmd_sweep(rc);
  } catch (const qa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const qa::CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return 3;
  } catch (const qa::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 4;
  } catch (const qa::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 4;
  } catch (const qa::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 5;
  } catch (const qa::ConvergenceError& e) {
    std::cerr << "non-convergence: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
