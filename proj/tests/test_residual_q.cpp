#include <doctest.h>

#include "test_util.hpp"

using namespace qadapter;
using namespace testutil;

namespace {

struct Instance {
  StateSpace sp;
  RewardTable r1, r2;
  Policy pi1;
  double alpha1, alpha_tilde, lambda, alpha_0;
};

Instance make_instance(int vocab, int horizon, double gamma, std::uint64_t seed,
                       double alpha1 = 0.3, double alpha_tilde = 0.5,
                       double lambda = 1.0) {
  Instance inst{enumerate_states(make_mdp(vocab, horizon, gamma)),
                {}, {}, {}, alpha1, alpha_tilde, lambda, lambda * alpha1};
  inst.r1 = random_reward(inst.sp, seed);
  inst.r2 = random_reward(inst.sp, seed + 1000);
  inst.pi1 = policy_from_q(soft_q_iteration(inst.sp, inst.r1, alpha1), alpha1);
  return inst;
}

}  // namespace

TEST_CASE("residual_backup reductions") {
  Instance inst = make_instance(3, 2, 0.9, 1);
  ResidualQ q0{Eigen::MatrixXd::Zero(inst.sp.num_states(), 3), 0.4, 0.0, 0};

  // alpha_0 = 0: identical to one soft Bellman backup at weight alpha_tilde
  ResidualQ swept = residual_backup(q0, inst.sp, inst.r2, inst.pi1);
  Eigen::MatrixXd plain = soft_backup(inst.sp, inst.r2, q0.table, 0.4);
  CHECK((swept.table - plain).cwiseAbs().maxCoeff() <= 1e-14);

  // gamma = 0: output equals r2 regardless of pi1
  Instance flat = make_instance(3, 2, 0.0, 2);
  ResidualQ qr{random_reward(flat.sp, 99), 0.4, 0.3, 0};
  ResidualQ out = residual_backup(qr, flat.sp, flat.r2, flat.pi1);
  CHECK((out.table - flat.r2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual_backup matches hand-rolled single sweep") {
  Instance inst = make_instance(2, 2, 1.0, 3, 0.3, 0.5, 1.0);
  ResidualQ q0{Eigen::MatrixXd::Zero(inst.sp.num_states(), 2), inst.alpha_tilde,
               inst.alpha_0, 0};
  ResidualQ swept = residual_backup(q0, inst.sp, inst.r2, inst.pi1);
  // Recompute cell by cell with plain loops and naive exp sums.
  for (int i = 0; i < inst.sp.num_states(); ++i) {
    if (inst.sp.terminal[i]) continue;
    for (int a = 0; a < 2; ++a) {
      int c = inst.sp.children(i, a);
      double succ = 0.0;
      if (!inst.sp.terminal[c]) {
        double z = 0.0;
        for (int b = 0; b < 2; ++b) {
          z += std::exp((q0.table(c, b) +
                         inst.alpha_0 * std::log(inst.pi1.table(c, b))) /
                        inst.alpha_tilde);
        }
        succ = inst.alpha_tilde * std::log(z);
      }
      double expected = inst.r2(i, a) + 1.0 * succ;
      CHECK(swept.table(i, a) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("residual_q_iteration reductions") {
  // alpha_0 = 0 equals plain soft Q-iteration on r2
  Instance inst = make_instance(3, 3, 0.9, 4);
  ResidualQ qhat = residual_q_iteration(inst.sp, inst.r2, inst.pi1, 0.4, 0.0);
  QFunction plain = soft_q_iteration(inst.sp, inst.r2, 0.4);
  CHECK((qhat.table - plain.table).cwiseAbs().maxCoeff() <= 1e-9);

  // r2 = 0 and gamma = 0: fixed point identically zero
  Instance flat = make_instance(2, 2, 0.0, 5);
  RewardTable zero = RewardTable::Zero(flat.sp.num_states(), 2);
  ResidualQ z = residual_q_iteration(flat.sp, zero, flat.pi1, 0.4, 0.3);
  CHECK(z.table.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("definitional oracle: Qhat = Qtilde - lambda Q1") {
  for (std::uint64_t seed : {10u, 11u, 12u}) {
    for (double lambda : {0.5, 1.0, 2.0}) {
      Instance inst = make_instance(4, 3, 0.9, seed, 0.3, 0.5, lambda);
      ResidualQ qhat = residual_q_iteration(inst.sp, inst.r2, inst.pi1,
                                            inst.alpha_tilde, inst.alpha_0);
      QFunction q1 = soft_q_iteration(inst.sp, inst.r1, inst.alpha1);
      RewardTable combined = lambda * inst.r1 + inst.r2;
      QFunction qt = soft_q_iteration(inst.sp, combined, inst.alpha_tilde);
      Eigen::MatrixXd expected = qt.table - lambda * q1.table;
      CHECK((qhat.table - expected).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
}

TEST_CASE("compose_policy reductions") {
  Instance inst = make_instance(3, 2, 0.9, 6);
  // Qhat = 0, alpha_0 = alpha_tilde: returns pi1 exactly
  ResidualQ zero{Eigen::MatrixXd::Zero(inst.sp.num_states(), 3), 0.4, 0.4, 0};
  Policy same = compose_policy(inst.pi1, zero);
  CHECK(max_row_tv(same.table, inst.pi1.table) <= 1e-12);
  // alpha_0 = 0: returns policy_from_q(Qhat, alpha_tilde)
  ResidualQ qr{random_reward(inst.sp, 50), 0.4, 0.0, 0};
  Policy composed = compose_policy(inst.pi1, qr);
  Policy direct = policy_from_q(QFunction{qr.table, 0.4}, 0.4);
  CHECK(max_row_tv(composed.table, direct.table) <= 1e-12);
  // shift invariance: adding a state constant to Qhat changes nothing
  ResidualQ shifted = qr;
  shifted.table.array() += 3.25;
  CHECK(max_row_tv(compose_policy(inst.pi1, shifted).table, composed.table) <= 1e-12);
}

TEST_CASE("Prop 2: composed policy equals combined-reward soft optimum") {
  for (std::uint64_t seed : {20u, 21u}) {
    for (double lambda : {0.5, 2.0}) {
      Instance inst = make_instance(3, 3, 1.0, seed, 0.3, 0.1, lambda);
      ResidualQ qhat = residual_q_iteration(inst.sp, inst.r2, inst.pi1,
                                            inst.alpha_tilde, inst.alpha_0);
      Policy composed = compose_policy(inst.pi1, qhat);
      RewardTable combined = lambda * inst.r1 + inst.r2;
      Policy oracle = policy_from_q(
          soft_q_iteration(inst.sp, combined, inst.alpha_tilde), inst.alpha_tilde);
      CHECK(max_row_tv(composed.table, oracle.table) <= 1e-8);
    }
  }
}

TEST_CASE("reward_from_residual_q") {
  // gamma = 0: T is the identity
  {
    Instance inst = make_instance(3, 2, 0.0, 30);
    ResidualQ q{random_reward(inst.sp, 60), 0.4, 0.3, 0};
    CHECK((reward_from_residual_q(q, inst.sp, inst.pi1) - q.table)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  // round trip: T(fixed point of r2) = r2
  {
    Instance inst = make_instance(3, 3, 0.9, 31);
    ResidualQ qhat = residual_q_iteration(inst.sp, inst.r2, inst.pi1, 0.4,
                                          inst.alpha_0);
    RewardTable back = reward_from_residual_q(qhat, inst.sp, inst.pi1);
    CHECK((back - inst.r2).cwiseAbs().maxCoeff() <= 1e-8);
  }
  // constant Q, uniform pi1: closed form
  // (TQ)(s,a) = c - gamma*(c + (alpha_tilde - alpha_0) * ln V) at non-terminal
  // successors, c at terminal ones.
  {
    int V = 4;
    StateSpace sp = enumerate_states(make_mdp(V, 2, 0.9));
    Policy uni;
    uni.table = Eigen::MatrixXd::Constant(sp.num_states(), V, 1.0 / V);
    double c = 1.7, at = 0.4, a0 = 0.25;
    ResidualQ q{Eigen::MatrixXd::Constant(sp.num_states(), V, c), at, a0, 0};
    RewardTable tq = reward_from_residual_q(q, sp, uni);
    double inner = c + (at - a0) * std::log(static_cast<double>(V));
    for (int i = 0; i < sp.num_states(); ++i) {
      for (int a = 0; a < V; ++a) {
        int ch = sp.terminal[i] ? -1 : sp.children(i, a);
        double expected = (ch >= 0 && !sp.terminal[ch]) ? c - 0.9 * inner : c;
        CHECK(tq(i, a) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("Cor 1 injectivity: distinct rewards give distinct fixed points") {
  Instance inst = make_instance(3, 2, 0.9, 40);
  RewardTable r2b = inst.r2;
  r2b(1, 0) += 0.5;  // sup-norm gap >= 1e-3
  ResidualQ qa = residual_q_iteration(inst.sp, inst.r2, inst.pi1, 0.4, inst.alpha_0);
  ResidualQ qb = residual_q_iteration(inst.sp, r2b, inst.pi1, 0.4, inst.alpha_0);
  CHECK((qa.table - qb.table).cwiseAbs().maxCoeff() > 0.0);
  CHECK((reward_from_residual_q(qa, inst.sp, inst.pi1) - inst.r2)
            .cwiseAbs()
            .maxCoeff() <= 1e-10);
}

TEST_CASE("iterative residual updates contract at rate <= gamma") {
  Instance inst = make_instance(3, 3, 0.9, 41);
  ResidualQ q{Eigen::MatrixXd::Zero(inst.sp.num_states(), 3), 0.4, inst.alpha_0, 0};
  double prev_dist = -1.0;
  ResidualQ next = residual_backup(q, inst.sp, inst.r2, inst.pi1);
  for (int it = 0; it < 12; ++it) {
    ResidualQ after = residual_backup(next, inst.sp, inst.r2, inst.pi1);
    double dist = (after.table - next.table).cwiseAbs().maxCoeff();
    if (prev_dist > 1e-13) {
      CHECK(dist <= prev_dist * (inst.sp.mdp.gamma + 1e-9));
    }
    prev_dist = dist;
    next = std::move(after);
  }
  // iterative mode itself converges to the backward-induction answer
  ResidualQ it_mode = residual_q_iteration(inst.sp, inst.r2, inst.pi1, 0.4,
                                           inst.alpha_0, 1e-12, 10000,
                                           SolveMode::iterative);
  ResidualQ bw = residual_q_iteration(inst.sp, inst.r2, inst.pi1, 0.4, inst.alpha_0);
  CHECK((it_mode.table - bw.table).cwiseAbs().maxCoeff() <= 1e-9);
}
