#include <random>

#include "fmds/align.hpp"
#include "oracles.hpp"
#include "testing.hpp"

using fmds::Errc;

namespace {

struct Pair {
  fmds::BasisSpec spec{5, 1.0, 15.0};
  fmds::CoeffSet fitted;
  fmds::CoeffSet truth;
  int m = 15;
};

Pair random_pair(std::mt19937_64 &rng, int n = 6, int p = 2, int L = 5, int m = 15) {
  Pair out;
  out.m = m;
  out.spec = fmds::make_basis(L, 1.0, m);
  out.fitted = oracle::random_coeffs(n, p, out.spec.q(), rng);
  out.truth = oracle::random_coeffs(n, p, out.spec.q(), rng);
  return out;
}

fmds::CoeffSet left_multiply(const Eigen::MatrixXd &q, const fmds::CoeffSet &c) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto &m : c)
    out.push_back(q * m);
  return fmds::CoeffSet(std::move(out));
}

Eigen::MatrixXd skew(std::mt19937_64 &rng, int p) {
  const Eigen::MatrixXd g = oracle::gaussian(p, p, rng);
  return g - g.transpose();
}

} // namespace

TEST(ObjectiveG, ZeroWhenAligned) {
  std::mt19937_64 rng(40);
  const auto pr = random_pair(rng);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_EQ(fmds::objective_G(id, pr.truth, pr.truth, pr.spec, pr.m), 0.0);
  const Eigen::MatrixXd q = oracle::orthogonal(2, rng, 1);
  const auto fitted = left_multiply(q.transpose(), pr.truth);
  EXPECT_LE(fmds::objective_G(q, fitted, pr.truth, pr.spec, pr.m), 1e-20);
}

TEST(ObjectiveG, IsTheHalfStepTrapezoidRule) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pr = random_pair(rng, 4, 2, 5, 15);
    const Eigen::MatrixXd gamma = oracle::orthogonal(2, rng, trial % 2 ? 1 : -1);
    const double coarse = fmds::objective_G(gamma, pr.fitted, pr.truth, pr.spec, pr.m);
    // 2m - 1 equally spaced nodes on [1, m] are exactly the half steps.
    const double same_rule =
        oracle::fine_quadrature(gamma, pr.fitted, pr.truth, pr.spec, pr.m, 2 * pr.m - 1);
    EXPECT_LE(rel_err(coarse, same_rule), 1e-12);
    // And it approximates the integral to within a few percent.
    const double fine = oracle::fine_quadrature(gamma, pr.fitted, pr.truth, pr.spec, pr.m, 10000);
    EXPECT_LE(rel_err(coarse, fine), 5e-2);
  }
}

TEST(ObjectiveG, WeightsAndNodesByHand) {
  // n = 1, p = 1, constant curves a and b: the rule integrates (a-b)^2 over
  // [1, m] exactly, (m-1)(a-b)^2.
  const auto spec = fmds::make_basis(2, 1, 4);
  const fmds::CoeffSet fitted({Eigen::MatrixXd::Constant(1, spec.q(), 2.0)});
  const fmds::CoeffSet truth({Eigen::MatrixXd::Constant(1, spec.q(), -1.0)});
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(1, 1);
  EXPECT_NEAR(fmds::objective_G(id, fitted, truth, spec, 4), 3.0 * 9.0, 1e-12);
}

TEST(ObjectiveG, InvariantUnderCompensatingRotation) {
  std::mt19937_64 rng(42);
  const auto pr = random_pair(rng, 5, 3, 5, 15);
  const Eigen::MatrixXd gamma = oracle::orthogonal(3, rng, 1);
  const Eigen::MatrixXd q = oracle::orthogonal(3, rng, -1);
  const double base = fmds::objective_G(gamma, pr.fitted, pr.truth, pr.spec, pr.m);
  const double moved = fmds::objective_G(gamma * q.transpose(), left_multiply(q, pr.fitted),
                                         pr.truth, pr.spec, pr.m);
  EXPECT_LE(rel_err(moved, base), 1e-10);
}

TEST(ObjectiveG, Errors) {
  std::mt19937_64 rng(43);
  const auto pr = random_pair(rng);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_ERRC(fmds::objective_G(id, pr.fitted, pr.truth, pr.spec, 1), Errc::out_of_range);
  EXPECT_ERRC(fmds::objective_G(Eigen::MatrixXd::Identity(3, 3), pr.fitted, pr.truth, pr.spec,
                                pr.m),
              Errc::dimension_mismatch);
  EXPECT_ERRC(fmds::objective_G(id, pr.fitted, fmds::CoeffSet(5, 2, 9), pr.spec, pr.m),
              Errc::dimension_mismatch);
  EXPECT_ERRC(fmds::objective_G(id, pr.fitted, pr.truth, pr.spec, 16), Errc::out_of_domain);
}

TEST(GradientG, ZeroAtExactAlignment) {
  std::mt19937_64 rng(44);
  const auto pr = random_pair(rng);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_EQ(fmds::gradient_G(id, pr.truth, pr.truth, pr.spec, pr.m).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradientG, MatchesFiniteDifferencesOnAndOffManifold) {
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 2 + trial % 3;
    const auto pr = random_pair(rng, 4, p, 3, 8);
    auto f = [&](const Eigen::MatrixXd &g) {
      return fmds::objective_G(g, pr.fitted, pr.truth, pr.spec, pr.m);
    };
    for (const Eigen::MatrixXd &gamma :
         {Eigen::MatrixXd(oracle::orthogonal(p, rng, 1)),
          Eigen::MatrixXd(2.0 * Eigen::MatrixXd::Identity(p, p)),
          oracle::gaussian(p, p, rng)}) {
      const Eigen::MatrixXd analytic = fmds::gradient_G(gamma, pr.fitted, pr.truth, pr.spec, pr.m);
      EXPECT_LE(oracle::fd_relative_error(analytic, oracle::central_difference(f, gamma)), 1e-5);
    }
  }
}

TEST(AlignmentProblem, MomentFormMatchesDirectSums) {
  std::mt19937_64 rng(46);
  const auto pr = random_pair(rng, 7, 3, 5, 15);
  const fmds::AlignmentProblem problem(pr.fitted, pr.truth, pr.spec, pr.m);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd gamma = oracle::gaussian(3, 3, rng);
    EXPECT_LE(rel_err(problem.objective(gamma),
                      fmds::objective_G(gamma, pr.fitted, pr.truth, pr.spec, pr.m)),
              1e-10);
    EXPECT_LE((problem.gradient(gamma) -
               fmds::gradient_G(gamma, pr.fitted, pr.truth, pr.spec, pr.m))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-9);
  }
}

TEST(RiemannianGrad, IdentitiesHold) {
  std::mt19937_64 rng(47);
  for (int p : {2, 3, 5}) {
    const Eigen::MatrixXd gamma = oracle::orthogonal(p, rng, 1);
    const Eigen::MatrixXd g = oracle::gaussian(p, p, rng);
    const auto rg = fmds::riemannian_grad(gamma, g);
    EXPECT_LE((rg.nabla - rg.a * gamma).norm(), 1e-12);
    EXPECT_LE((rg.a + rg.a.transpose()).norm(), 1e-12);
    EXPECT_LE(fmds::riemannian_grad(gamma, gamma).a.norm(), 1e-12);
  }
}

TEST(RiemannianGrad, RejectsNonOrthogonal) {
  const Eigen::MatrixXd g = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_ERRC(fmds::riemannian_grad(2.0 * g, g), Errc::non_orthogonal);
}

TEST(CayleyStep, ZeroStepIsIdentity) {
  std::mt19937_64 rng(48);
  const Eigen::MatrixXd gamma = oracle::orthogonal(3, rng, 1);
  EXPECT_LE((fmds::cayley_step(gamma, skew(rng, 3), 0.0) - gamma).norm(), 0.0);
}

TEST(CayleyStep, PreservesOrthogonality) {
  std::mt19937_64 rng(49);
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 2 + trial % 4;
    const Eigen::MatrixXd gamma = oracle::orthogonal(p, rng, trial % 2 ? 1 : -1);
    const Eigen::MatrixXd out = fmds::cayley_step(gamma, skew(rng, p), 0.3);
    EXPECT_LE(fmds::orthogonality_error(out), 1e-12);
  }
}

TEST(CayleyStep, PlanarRotationClosedForm) {
  std::mt19937_64 rng(50);
  for (double a : {-3.0, -0.4, 0.7, 5.0})
    for (double tau : {0.01, 0.3, 2.0}) {
      Eigen::MatrixXd skew_a(2, 2);
      skew_a << 0, a, -a, 0;
      const Eigen::MatrixXd gamma = oracle::orthogonal(2, rng, 1);
      const double theta = 2.0 * std::atan(tau * a / 2.0);
      Eigen::MatrixXd rot(2, 2);
      rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
      EXPECT_LE((fmds::cayley_step(gamma, skew_a, tau) - rot * gamma).norm(), 1e-12)
          << "a=" << a << " tau=" << tau;
    }
}

TEST(CayleyStep, SingularSystemIsReported) {
  // I + tau/2 A with A = [[0, 1], [1, 0]] (not skew) is singular at tau = 2.
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 1, 0;
  EXPECT_ERRC(fmds::cayley_step(Eigen::MatrixXd::Identity(2, 2), -a, 2.0), Errc::singular_system);
}

TEST(BbStep, ScalarCases) {
  std::mt19937_64 rng(51);
  const Eigen::MatrixXd s = oracle::gaussian(3, 3, rng);
  EXPECT_NEAR(fmds::bb_step(s, s, fmds::BBType::type1), 1.0, 1e-14);
  EXPECT_NEAR(fmds::bb_step(s, s, fmds::BBType::type2), 1.0, 1e-14);
  EXPECT_NEAR(fmds::bb_step(s, 2.0 * s, fmds::BBType::type1), 0.5, 1e-14);
  EXPECT_NEAR(fmds::bb_step(s, 2.0 * s, fmds::BBType::type2), 0.5, 1e-14);
}

TEST(BbStep, HandTraces) {
  Eigen::MatrixXd s(2, 2), y(2, 2);
  s << 1, 2, -1, 0.5;
  y << 0.5, -1, 2, 1;
  // tr(S^T S) = 1 + 4 + 1 + 0.25 = 6.25; tr(S^T Y) = 0.5 - 2 - 2 + 0.5 = -3;
  // tr(Y^T Y) = 0.25 + 1 + 4 + 1 = 6.25.
  EXPECT_NEAR(fmds::bb_step(s, y, fmds::BBType::type1), 6.25 / 3.0, 1e-14);
  EXPECT_NEAR(fmds::bb_step(s, y, fmds::BBType::type2), 3.0 / 6.25, 1e-14);
}

TEST(BbStep, DegenerateFallsBackAndClamps) {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_EQ(fmds::bb_step(s, zero, fmds::BBType::type1, 0.125), 0.125);
  EXPECT_EQ(fmds::bb_step(s, zero, fmds::BBType::type2, 0.125), 0.125);
  EXPECT_EQ(fmds::bb_step(s, 1e-30 * s, fmds::BBType::type1, 1e-3, 1e-20, 1e5), 1e5);
  EXPECT_EQ(fmds::bb_step(1e30 * s, s, fmds::BBType::type2, 1e-3, 1e-2, 1e5), 1e5);
  EXPECT_EQ(fmds::bb_step(1e-30 * s, s, fmds::BBType::type2, 1e-3, 1e-2, 1e5), 1e-2);
}

TEST(RandomOrthogonal, ComponentsAndDeterminism) {
  for (int p : {2, 3, 4})
    for (int sign : {1, -1}) {
      const Eigen::MatrixXd q = fmds::random_orthogonal(p, 9, sign);
      EXPECT_LE(fmds::orthogonality_error(q), 1e-12);
      EXPECT_NEAR(q.determinant(), sign, 1e-12);
      EXPECT_EQ(q, fmds::random_orthogonal(p, 9, sign));
    }
}

TEST(Align, IdentityInstance) {
  std::mt19937_64 rng(52);
  const auto pr = random_pair(rng);
  const auto r = fmds::align(pr.truth, pr.truth, pr.spec, pr.m);
  EXPECT_LE(r.objective, 1e-10);
  EXPECT_LE(r.objective, r.initial_objective);
  EXPECT_LE(fmds::orthogonality_error(r.gamma_hat), 1e-10);
}

TEST(Align, RecoversRotationAndReflection) {
  std::mt19937_64 rng(53);
  for (int sign : {1, -1})
    for (int trial = 0; trial < 5; ++trial) {
      const auto pr = random_pair(rng);
      const Eigen::MatrixXd q = oracle::orthogonal(2, rng, sign);
      const auto fitted = left_multiply(q.transpose(), pr.truth);
      fmds::CurvilinearConfig cfg;
      cfg.seed = 100 + trial;
      const auto r = fmds::align(fitted, pr.truth, pr.spec, pr.m, cfg);
      EXPECT_LE(r.objective, 1e-8);
      EXPECT_LE((r.gamma_hat - q).norm(), 1e-4);
      EXPECT_NEAR(r.gamma_hat.determinant(), sign, 1e-8);
      EXPECT_LE(r.max_feasibility_error, 1e-10);
    }
}

TEST(Align, MatchesClosedFormProcrustesOptimum) {
  // The objective is tr(G Saa G^T) - 2 tr(G^T Sba) + c, and on the orthogonal
  // group the first term is constant, so the optimum is U V^T from the SVD of
  // Sba. Built here from the direct sums, not the library moments.
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 2 + trial % 3;
    const auto pr = random_pair(rng, 8, p, 5, 15);
    Eigen::MatrixXd sba = Eigen::MatrixXd::Zero(p, p);
    for (int k = 1; k <= 2 * pr.m - 1; ++k) {
      const double t = 1.0 + 0.5 * (k - 1);
      const double w = (k == 1 || k == 2 * pr.m - 1) ? 0.25 : 0.5;
      for (int i = 0; i < pr.fitted.n(); ++i)
        sba += w * oracle::position(pr.truth[i], pr.spec, t) *
               oracle::position(pr.fitted[i], pr.spec, t).transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sba, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd best = svd.matrixU() * svd.matrixV().transpose();
    const double optimum = fmds::objective_G(best, pr.fitted, pr.truth, pr.spec, pr.m);

    const auto r = fmds::align(pr.fitted, pr.truth, pr.spec, pr.m);
    EXPECT_LE(r.objective - optimum, 1e-8 * std::max(1.0, optimum)) << "p=" << p;
    EXPECT_LE(r.objective, r.identity_objective);
    EXPECT_LE(r.objective, r.initial_objective);
    EXPECT_LE(r.max_feasibility_error, 1e-10);
  }
}

TEST(Align, TraceAndConvergenceFlag) {
  std::mt19937_64 rng(55);
  const auto pr = random_pair(rng, 6, 3, 5, 15);
  const auto r = fmds::align(pr.fitted, pr.truth, pr.spec, pr.m);
  if (r.converged) {
    EXPECT_LE(r.grad_norm, fmds::CurvilinearConfig{}.epsilon);
  }
  EXPECT_FALSE(r.trace.empty());
  for (const auto &step : r.trace)
    EXPECT_TRUE(std::isfinite(step.objective));
}

TEST(CurvilinearConfig, Validation) {
  fmds::CurvilinearConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.rho1 = 1.0;
  EXPECT_ERRC(cfg.validate(), Errc::invalid_config);
  cfg = {};
  cfg.eta = 0.0;
  EXPECT_ERRC(cfg.validate(), Errc::invalid_config);
  cfg = {};
  cfg.tau0 = 1e30;
  EXPECT_ERRC(cfg.validate(), Errc::invalid_config);
}
