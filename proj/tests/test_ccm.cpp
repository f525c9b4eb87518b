#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rl1gp/ccm.hpp"
#include "rl1gp/io.hpp"

using namespace rl1gp;

namespace {

const ContractionMetric<6> & quad_metric()
{
  static const auto m = load_metric<6>(std::string(RL1GP_DATA_DIR) + "/quadrotor_metric.json");
  return m;
}

ContractionMetric<6> constant_metric(const Mat<6, 6> & W0, double lambda)
{
  ContractionMetric<6> m;
  m.lambda = lambda;
  m.terms.push_back({{}, W0});
  Eigen::SelfAdjointEigenSolver<Mat<6, 6>> es(W0.inverse());
  m.alpha_lower = es.eigenvalues()(0);
  m.alpha_upper = es.eigenvalues()(5);
  return m;
}

Vec<6> random_in(const StateBox<6> & b, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Vec<6> x;
  for (int i = 0; i < 6; ++i) { x(i) = b.lower(i) + U(rng) * (b.upper(i) - b.lower(i)); }
  return x;
}

std::vector<Vec<6>> attitude_grid(const Quadrotor & q, int per_axis)
{
  std::vector<Vec<6>> g;
  for (int a = 0; a < per_axis; ++a) {
    for (int b = 0; b < per_axis; ++b) {
      for (int c = 0; c < per_axis; ++c) {
        for (int d = 0; d < per_axis; ++d) {
          Vec<6> x = Vec<6>::Zero();
          const double s[4] = {double(a) / (per_axis - 1), double(b) / (per_axis - 1), double(c) / (per_axis - 1),
            double(d) / (per_axis - 1)};
          for (int k = 0; k < 4; ++k) { x(2 + k) = q.box.lower(2 + k) + s[k] * (q.box.upper(2 + k) - q.box.lower(2 + k)); }
          g.push_back(x);
        }
      }
    }
  }
  return g;
}

}  // namespace

TEST(Chebyshev, DifferentiationAndQuadrature)
{
  const ChebyshevGrid g(11);
  EXPECT_NEAR(g.w.sum(), 1.0, 1e-14);
  const Eigen::VectorXd p = g.s.array().pow(4);
  EXPECT_NEAR(g.w.dot(p), 0.2, 1e-14);
  const Eigen::VectorXd dp = g.D * p;
  EXPECT_LT((dp - Eigen::VectorXd(4.0 * g.s.array().pow(3))).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_DOUBLE_EQ(g.s(0), 0.0);
  EXPECT_DOUBLE_EQ(g.s(10), 1.0);
}

TEST(Geodesic, CoincidentEndpoints)
{
  const Vec<6> x = Vec<6>::Constant(0.1);
  const auto geo = solve_geodesic<6>(quad_metric(), x, x);
  EXPECT_EQ(riemannian_energy(geo), 0.0);
  EXPECT_LT(geo.gamma_s.norm(), 1e-12);
}

TEST(Geodesic, FlatMetricIsStraightLine)
{
  std::mt19937_64 rng(1);
  Mat<6, 6> A = Mat<6, 6>::Random();
  const Mat<6, 6> W0 = A * A.transpose() + Mat<6, 6>::Identity();
  const auto m = constant_metric(W0, 0.1);
  const Mat<6, 6> M0 = W0.inverse();
  const auto q = planar_quadrotor();
  for (int k = 0; k < 10; ++k) {
    const Vec<6> a = random_in(q.box, rng), b = random_in(q.box, rng);
    const auto geo = solve_geodesic<6>(m, a, b);
    EXPECT_NEAR(geo.energy, (b - a).dot(M0 * (b - a)), 1e-8 * std::max(1.0, geo.energy));
    const ChebyshevGrid g(11);
    for (int j = 0; j < 11; ++j) {
      EXPECT_LT((geo.nodes.row(j).transpose() - ((1 - g.s(j)) * a + g.s(j) * b)).norm(), 1e-8);
    }
  }
}

TEST(Geodesic, GradientMatchesFiniteDifferences)
{
  const auto & m = quad_metric();
  const ChebyshevGrid g(7);
  Vec<6> a, b;
  a << 0, 0, -0.3, 1.0, 0.2, 0.1;
  b << 0.4, -0.2, 0.5, -1.2, -0.3, 0.5;
  detail::GeodesicEnergy<6> fn(m, g, a, b);
  std::vector<double> p(fn.NumParameters());
  for (int k = 1; k < 6; ++k) {
    for (int i = 0; i < 6; ++i) { p[(k - 1) * 6 + i] = (1 - g.s(k)) * a(i) + g.s(k) * b(i) + 0.05 * std::sin(k + i); }
  }
  std::vector<double> grad(p.size());
  double c;
  ASSERT_TRUE(fn.Evaluate(p.data(), &c, grad.data()));
  for (size_t i = 0; i < p.size(); ++i) {
    auto pp = p, pm = p;
    pp[i] += 1e-6;
    pm[i] -= 1e-6;
    double cp, cm;
    fn.Evaluate(pp.data(), &cp, nullptr);
    fn.Evaluate(pm.data(), &cm, nullptr);
    EXPECT_NEAR(grad[i], (cp - cm) / 2e-6, 1e-6 * std::max(1.0, std::abs(grad[i])));
  }
}

TEST(Geodesic, QuadrotorSandwichAndRefinement)
{
  const auto & m = quad_metric();
  const auto q = planar_quadrotor();
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const Vec<6> a = random_in(q.box.shrunk(0.0), rng);
    Vec<6> b = a + 0.3 * Vec<6>::Random();
    b = q.box.clamp(b);
    const auto geo = solve_geodesic<6>(m, a, b);
    EXPECT_EQ(geo.start(), a);
    EXPECT_EQ(geo.end(), b);
    const double d2 = (b - a).squaredNorm();
    EXPECT_GE(geo.energy, m.alpha_lower * d2 * (1 - 1e-6));
    EXPECT_LE(geo.energy, m.alpha_upper * d2 * (1 + 1e-6));
    // minimal curve is no worse than the straight line
    ChebyshevGrid g(11);
    double Eline = 0;
    for (int j = 0; j < 11; ++j) { Eline += g.w(j) * (b - a).dot(m.M((1 - g.s(j)) * a + g.s(j) * b) * (b - a)); }
    EXPECT_LE(geo.energy, Eline + 1e-12);
    if (k < 5) {
      const auto fine = solve_geodesic<6>(m, a, b, 22);
      EXPECT_LT(std::abs(geo.energy - fine.energy), 1e-3 * fine.energy);
    }
  }
}

TEST(CCMCheck, ShippedMetricPasses)
{
  const auto q = planar_quadrotor();
  const auto rep = ccm_check(quad_metric(), q.sys, attitude_grid(q, 9));
  EXPECT_TRUE(rep.sandwich_ok) << rep.min_eig_margin << " " << rep.max_eig_margin;
  EXPECT_EQ(rep.killing_residual, 0.0);
  EXPECT_TRUE(rep.contraction_ok) << rep.contraction_max_eig;
}

TEST(CCMCheck, ConstantFallbackPasses)
{
  const auto q = planar_quadrotor();
  const auto m = load_metric<6>(std::string(RL1GP_DATA_DIR) + "/quadrotor_metric_constant.json");
  const auto rep = ccm_check(m, q.sys, {Vec<6>::Zero()});
  EXPECT_TRUE(rep.ok()) << rep.contraction_max_eig;
}

TEST(CCMCheck, PerturbedMetricFails)
{
  const auto q = planar_quadrotor();
  auto m = quad_metric();
  typename ContractionMetric<6>::Term t;
  t.exponents = {0, 0, 0, 1, 0, 0};
  t.coefficients = 0.5 * Mat<6, 6>::Identity();
  m.terms.push_back(t);
  const auto rep = ccm_check(m, q.sys, attitude_grid(q, 7));
  EXPECT_FALSE(rep.contraction_ok);
}

TEST(CCMCheck, KillingResidualDetectsActuatedDependence)
{
  const auto q = planar_quadrotor();
  auto m = quad_metric();
  typename ContractionMetric<6>::Term t;
  t.exponents = {0, 0, 0, 0, 1, 0};  // W depending on v_z, an actuated coordinate
  t.coefficients = 0.01 * Mat<6, 6>::Identity();
  m.terms.push_back(t);
  const auto rep = ccm_check(m, q.sys, attitude_grid(q, 3));
  EXPECT_FALSE(rep.killing_ok);
}

namespace {

ContractionMetric<1> scalar_metric(double lambda)
{
  ContractionMetric<1> m;
  m.lambda = lambda;
  m.terms.push_back({{}, Mat<1, 1>::Identity()});
  return m;
}

}  // namespace

TEST(Feedback, ScalarHandAlgebra)
{
  const auto m = scalar_metric(0.5);
  const Vec<1> xd(0.0), xdd(0.0), x(1.0), ud(0.0);
  const auto geo = solve_geodesic<1>(m, xd, x);
  EXPECT_NEAR(geo.energy, 1.0, 1e-14);
  const auto stable = [](const Vec<1> & x, const Vec<1> & u) { return Vec<1>(-x(0) + u(0)); };
  const auto r1 = feedback_gain<1, 1>(m, stable, xd, xdd, x, ud, geo);
  EXPECT_EQ(r1.k(0), 0.0);
  const auto unstable = [](const Vec<1> & x, const Vec<1> & u) { return Vec<1>(x(0) + u(0)); };
  const auto r2 = feedback_gain<1, 1>(m, unstable, xd, xdd, x, ud, geo);
  EXPECT_NEAR(r2.phi0, 3.0, 1e-12);
  EXPECT_NEAR(r2.k(0), -1.5, 1e-12);
  const auto r3 = feedback_gain<1, 1>(m, unstable, xd, xdd, xd, ud, solve_geodesic<1>(m, xd, xd));
  EXPECT_EQ(r3.k(0), 0.0);
}

TEST(Feedback, MatchesActiveSetLeastNorm)
{
  std::mt19937_64 rng(5);
  std::normal_distribution<double> G(0.0, 1.0);
  const auto & m = quad_metric();
  const auto q = planar_quadrotor();
  for (int s = 0; s < 100; ++s) {
    Vec<6> xd = Vec<6>::Zero(), x;
    for (int i = 0; i < 6; ++i) { x(i) = 0.2 * G(rng); }
    const Vec<2> ud(9.81 + G(rng), G(rng));
    Vec<6> xdd;
    for (int i = 0; i < 6; ++i) { xdd(i) = G(rng); }
    const auto dyn = [&](const Vec<6> & z, const Vec<2> & u) { return eval_nominal(q.sys, z, u); };
    const auto geo = solve_geodesic<6>(m, xd, x);
    const auto r = feedback_gain<6, 2>(m, dyn, xd, xdd, x, ud, geo);

    // oracle: active-set least norm on the affine constraint c0 + c1^T k <= 0
    const Vec<6> Mg1 = m.M(x) * geo.tangent_end();
    const double c0 = 2 * Mg1.dot(dyn(x, ud)) - 2 * (m.M(xd) * geo.tangent_start()).dot(xdd) + 2 * m.lambda * geo.energy;
    const Vec<2> c1 = 2 * q.sys.B(x).transpose() * Mg1;
    Vec<2> k = Vec<2>::Zero();
    if (c0 > 0) {
      Eigen::Matrix3d K = Eigen::Matrix3d::Zero();
      K.topLeftCorner<2, 2>() = 2 * Eigen::Matrix2d::Identity();
      K.block<2, 1>(0, 2) = c1;
      K.block<1, 2>(2, 0) = c1.transpose();
      const Eigen::Vector3d sol = K.fullPivLu().solve(Eigen::Vector3d(0, 0, -c0));
      k = sol.head<2>();
    }
    EXPECT_LT((r.k - k).norm(), 1e-9 * std::max(1.0, k.norm()));
  }
}

TEST(ClosedLoop, NominalEnergyDecay)
{
  const auto & m = quad_metric();
  const auto q = planar_quadrotor();
  CCMController<6, 2> ctrl(m);
  const auto dyn = [&](const Vec<6> & z, const Vec<2> & u) { return eval_nominal(q.sys, z, u); };
  const Vec<6> xd = Vec<6>::Zero();
  const Vec<2> ud(9.81, 0.0);
  Vec<6> x;
  x << 0.5, -0.3, 0.2, 0.4, -0.2, 0.1;
  const double dt = 1.0 / 500;
  double E0 = -1;
  double worst = 0;
  for (int k = 0; k <= 2500; ++k) {
    const Vec<2> u = ctrl.u_c(dyn, xd, Vec<6>::Zero(), ud, x);
    const double E = ctrl.energy();
    if (E0 < 0) { E0 = E; }
    worst = std::max(worst, E / (E0 * std::exp(-2 * m.lambda * k * dt)));
    x = rk4_step([&](double, const Vec<6> & z) { return dyn(z, u); }, k * dt, x, dt);
  }
  EXPECT_LE(worst, 1.02);
  EXPECT_EQ(ctrl.infeasible(), 0);
}

TEST(ClosedLoop, LearnedPerfectModelTracks)
{
  const auto & m = quad_metric();
  const auto q = planar_quadrotor();
  CCMController<6, 2> ctrl(m);
  const Vec<6> xd = Vec<6>::Zero();
  Vec<6> x;
  x << 0.3, 0.3, -0.1, 0.2, 0.0, 0.0;
  const double e0 = x.norm();
  const double dt = 1.0 / 500;
  for (int k = 0; k < 2500; ++k) {
    const Vec<1> t(k * dt);
    const auto learned = [&](const Vec<6> & z, const Vec<2> & u) {
      return eval_learned<6, 2, 1>(q.sys, q.unc.h, t, z, u);
    };
    const Vec<2> ud = Vec<2>(9.81, 0.0) - q.unc.h(t, xd);
    const Vec<2> u = ctrl.u_c(learned, xd, Vec<6>::Zero(), ud, x);
    x = rk4_step([&](double s, const Vec<6> & z) { return eval_actual(q.sys, q.unc, Vec<1>(s), z, u); }, k * dt, x, dt);
  }
  EXPECT_LT(x.norm(), 0.1 * e0);
}
