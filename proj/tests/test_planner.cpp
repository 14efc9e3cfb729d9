#include <gtest/gtest.h>

#include <cstdlib>
#include <numeric>
#include <set>

#include "cadm/planner.hpp"
#include "support.hpp"

using namespace cadm;
using namespace cadm::planner;
using namespace cadm::testkit;


TEST(PlanConfig, Validation) {
  PlanConfig c;
  EXPECT_NO_THROW(c.validate());
  c.horizon = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.n_candidates = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.elite_fraction = 0.6;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Rollout, EmptyHorizon) {
  const OracleModel m(envs::EnvId::pendulum);
  const Vector s0 = Eigen::Vector3d(1, 0, 0);
  const Rollout r = rollout_model(m, Eigen::Vector2d(1, 1), s0, std::span<const double>());
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.states.size(), 1u);
}

TEST(Rollout, OracleMatchesRealEnvironment) {
  const envs::EnvParams p = envs::make_params(envs::EnvId::pendulum, 0.9, 1.1);
  const OracleModel m(envs::EnvId::pendulum);
  Rng rng(2);
  envs::EnvState s = envs::env_reset(p, rng);
  const Vector s0 = envs::observe(p.env, s);
  std::vector<double> actions;
  double real = 0;
  for (int k = 0; k < 25; ++k) {
    actions.push_back(uniform(rng, -2.0, 2.0));
    const auto r = envs::env_step(p, s, actions.back());
    real += r.reward;
    s = r.next;
  }
  const Rollout ro = rollout_model(m, Eigen::Vector2d(0.9, 1.1), s0, actions);
  EXPECT_NEAR(ro.reward, real, 1e-9);
  EXPECT_LT((ro.states.back() - envs::observe(p.env, s)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Rollout, NonFinitePredictionRejected) {
  struct Exploding : StaticModel {
    Matrix predict(const Matrix& s, const Matrix&, const Vector&) const {
      return Matrix::Constant(s.rows(), s.cols(), std::numeric_limits<double>::infinity());
    }
  };
  const std::vector<double> a{0.0, 1.0};
  EXPECT_EQ(rollout_model(Exploding{}, Vector(), Vector::Zero(3), a).reward, -std::numeric_limits<double>::infinity());
  const Vector ret = evaluate_candidates(Exploding{}, Vector(), Vector::Zero(3), Matrix::Zero(3, 2), EnvReward{envs::EnvId::pendulum});
  EXPECT_TRUE(std::isinf(ret[0]) && ret[0] < 0);
}

TEST(RandomShooting, IdenticalCandidates) {
  Matrix cand(5, 3);
  cand.rowwise() = Eigen::RowVector3d(0.7, -1.0, 1.5);
  const PlanResult r = select_best_candidate(StaticModel{}, Vector(), Vector::Zero(3), cand, QuadraticReward{});
  EXPECT_EQ(r.action, 0.7);
}

TEST(RandomShooting, TiesGoToLowestIndex) {
  Matrix cand(4, 1);
  cand << 0.0, 1.0, 0.0, 1.0;  // rewards -0.25 for all
  Vector dummy;
  const PlanResult r = select_best_candidate(StaticModel{}, dummy, Vector::Zero(3), cand, QuadraticReward{});
  EXPECT_EQ(r.action, 0.0);
  EXPECT_EQ(argmax_first((Vector(4) << 1, 3, 3, 2).finished()), 1);
}

TEST(RandomShooting, SelectedIsArgmax) {
  const OracleModel m(envs::EnvId::pendulum);
  const Vector s0 = Eigen::Vector3d(std::cos(0.4), std::sin(0.4), 0.3);
  const Vector ctx = Eigen::Vector2d(1.0, 1.0);
  const Matrix cand = sample_uniform_candidates(envs::EnvId::pendulum, 300, 6, 5);
  const Vector ret = evaluate_candidates(m, ctx, s0, cand, EnvReward{envs::EnvId::pendulum});
  const PlanResult r = select_best_candidate(m, ctx, s0, cand, EnvReward{envs::EnvId::pendulum});
  EXPECT_EQ(r.predicted_return, ret.maxCoeff());
  for (Eigen::Index j = 0; j < ret.size(); ++j) EXPECT_GE(r.predicted_return, ret[j]);
}

TEST(RandomShooting, CandidatesLegalAndSeeded) {
  const Matrix c = sample_uniform_candidates(envs::EnvId::cartpole, 100, 5, 3);
  for (Eigen::Index i = 0; i < c.size(); ++i) EXPECT_TRUE(c.data()[i] == 0.0 || c.data()[i] == 1.0);
  EXPECT_EQ(c, sample_uniform_candidates(envs::EnvId::cartpole, 100, 5, 3));
  const Matrix p = sample_uniform_candidates(envs::EnvId::pendulum, 100, 5, 3);
  EXPECT_LE(p.cwiseAbs().maxCoeff(), 2.0);
  // candidate j depends only on (seed, j)
  EXPECT_EQ(Matrix(p.topRows(40)), sample_uniform_candidates(envs::EnvId::pendulum, 40, 5, 3));
}

TEST(RandomShooting, MatchesExhaustiveSearchOnCartPole) {
  const envs::EnvParams p = envs::make_params(envs::EnvId::cartpole, 10.0, 0.5);
  const OracleModel m(envs::EnvId::cartpole);
  const Vector ctx = Eigen::Vector2d(10.0, 0.5);
  const std::array<std::array<double, 4>, 4> starts{{{0.0, 0.0, 0.20, 0.5},
                                                     {0.0, 0.0, -0.21, -0.4},
                                                     {2.3, 0.8, 0.0, 0.0},
                                                     {0.1, 0.0, 0.15, 1.2}}};
  PlanConfig cfg;
  cfg.horizon = 4;
  cfg.n_candidates = 400;  // covers all 16 sequences with overwhelming probability
  for (const auto& q : starts) {
    std::set<int> best_first;
    const double best = brute_force_best(p, q, 4, &best_first);
    const Vector s0 = Eigen::Vector4d(q[0], q[1], q[2], q[3]);
    Rng rng(7);
    const PlanResult r = plan_rs(m, ctx, s0, cfg, rng, EnvReward{envs::EnvId::cartpole});
    EXPECT_EQ(r.predicted_return, best);
    EXPECT_TRUE(best_first.count(static_cast<int>(r.action)));
  }
}

TEST(Cem, QuadraticSurrogate) {
  PlanConfig cfg;
  cfg.method = Method::cem;
  cfg.horizon = 1;
  cfg.n_candidates = 200;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const PlanResult r = plan_cem(StaticModel{}, Vector(), Vector::Zero(3), cfg, rng, QuadraticReward{});
    EXPECT_NEAR(r.action, 0.5, 0.05) << seed;
  }
}

TEST(Cem, ImprovesAndKeepsElitesOnTop) {
  const OracleModel m(envs::EnvId::pendulum);
  const Vector s0 = Eigen::Vector3d(std::cos(2.5), std::sin(2.5), 0.0);
  PlanConfig cfg;
  cfg.method = Method::cem;
  cfg.horizon = 15;
  cfg.n_candidates = 200;
  Rng rng(3);
  CemTrace trace;
  plan_cem(m, Eigen::Vector2d(1.0, 1.0), s0, cfg, rng, EnvReward{envs::EnvId::pendulum}, &trace);
  ASSERT_EQ(trace.mean_candidate_return.size(), 5u);
  EXPECT_GE(trace.final_mean_return, trace.mean_candidate_return[0]);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_GE(trace.min_elite_return[i], trace.max_non_elite_return[i]);
}

TEST(Cem, DeterministicLegalAndContinuousOnly) {
  PlanConfig cfg;
  cfg.method = Method::cem;
  cfg.horizon = 5;
  cfg.n_candidates = 50;
  struct FarReward {
    Vector operator()(const Matrix&, const Vector& a, const Matrix&) const { return a * 10.0; }
  };
  Rng a(1), b(1);
  const PlanResult ra = plan_cem(StaticModel{}, Vector(), Vector::Zero(3), cfg, a, FarReward{});
  const PlanResult rb = plan_cem(StaticModel{}, Vector(), Vector::Zero(3), cfg, b, FarReward{});
  EXPECT_EQ(ra.action, rb.action);
  EXPECT_LE(ra.action, 2.0);
  EXPECT_GT(ra.action, 1.0);
  StaticModel cp;
  cp.env_id = envs::EnvId::cartpole;
  Rng c(1);
  EXPECT_THROW(plan_cem(cp, Vector(), Vector::Zero(4), cfg, c, FarReward{}), ContractError);
}

TEST(Plan, ActionsAlwaysLegal) {
  for (auto env : {envs::EnvId::cartpole, envs::EnvId::pendulum}) {
    ModelConfig mc;
    mc.env = env;
    mc.dynamics_hidden = {16, 16};
    const CadmModel m = CadmModel::create(mc, 4);
    Rng g(5);
    for (auto method : {Method::rs, Method::cem}) {
      if (env == envs::EnvId::cartpole && method == Method::cem) continue;
      PlanConfig cfg;
      cfg.method = method;
      cfg.horizon = 5;
      cfg.n_candidates = 64;
      for (int i = 0; i < 5; ++i) {
        const Vector s0 = testkit::random_vector(envs::state_dim(env), g);
        const double a = plan(m, testkit::random_vector(10, g), s0, cfg, g).action;
        EXPECT_EQ(envs::legalize_action(env, a), a);
      }
    }
  }
}

TEST(Plan, CandidateOrderAndWorkerCountInvariance) {
  ModelConfig mc;
  mc.env = envs::EnvId::pendulum;
  mc.dynamics_hidden = {32, 32};
  const CadmModel m = CadmModel::create(mc, 9);
  Rng g(10);
  const Vector ctx = testkit::random_vector(10, g), s0 = testkit::random_vector(3, g);
  const Matrix cand = sample_uniform_candidates(envs::EnvId::pendulum, 700, 8, 11);
  const EnvReward reward{envs::EnvId::pendulum};
  const Vector base = evaluate_candidates(m, ctx, s0, cand, reward);

  std::vector<int> perm(700);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g);
  Matrix shuffled(700, 8);
  for (int i = 0; i < 700; ++i) shuffled.row(i) = cand.row(perm[i]);
  const Vector ret = evaluate_candidates(m, ctx, s0, shuffled, reward);
  // Row position inside a GEMM block may change the last bit, nothing more.
  for (int i = 0; i < 700; ++i) ASSERT_NEAR(ret[i], base[perm[i]], 1e-12 * std::abs(base[perm[i]])) << i;

  ::setenv("CADM_THREADS", "4", 1);
  const Vector threaded = evaluate_candidates(m, ctx, s0, cand, reward);
  ::unsetenv("CADM_THREADS");
  EXPECT_EQ(threaded, base);
}
