#include <cmath>

#include <gtest/gtest.h>

#include "rl1gp/certificate.hpp"
#include "rl1gp/io.hpp"

using namespace rl1gp;

namespace {

// x' = 0.2 x + 2 u, constant dual metric W = 4, lambda = 0.5.
struct ScalarToy
{
  ControlAffineSystem<1, 1> sys;
  ContractionMetric<1> metric;
  StateBox<1> box{Vec<1>(-10.0), Vec<1>(10.0)};

  ScalarToy()
  {
    sys.f = [](const Vec<1> & x) { return Vec<1>(0.2 * x(0)); };
    sys.jac_f = [](const Vec<1> &) { return Mat<1, 1>(0.2); };
    sys.B = [](const Vec<1> &) { return Mat<1, 1>(2.0); };
    sys.jac_B = [](const Vec<1> &) { return std::array<Mat<1, 1>, 1>{Mat<1, 1>::Zero()}; };
    sys.constant_B = true;
    metric.lambda = 0.5;
    metric.alpha_lower = metric.alpha_upper = 0.25;
    typename ContractionMetric<1>::Term t;
    t.exponents[0] = 0;
    t.coefficients = Mat<1, 1>(4.0);
    metric.terms.push_back(t);
  }
};

L1Params<1> toy_l1(double omega, double gamma = 1.0)
{
  return L1Params<1>(Mat<1, 1>(-2.0), Mat<1, 1>(1.0), gamma, omega, 1.0, 0.1);
}

ContractionMetric<6> quad_metric() { return load_metric<6>(RL1GP_DATA_DIR "/quadrotor_metric.json"); }

struct HoverPlan
{
  std::vector<Vec<6>> xs;
  std::vector<Vec<2>> us;
};

HoverPlan hover_plan(int knots)
{
  HoverPlan p;
  for (int k = 0; k < knots; ++k) {
    Vec<6> x = Vec<6>::Zero();
    x(0) = 0.1 * k;
    x(1) = 2.0;
    x(3) = 0.5;
    p.xs.push_back(x);
    p.us.push_back(Vec<2>(9.81, 0.0));
  }
  return p;
}

// Quadrotor suprema on a short plan, shared by the arithmetic tests.
const TubeSuprema & quad_suprema()
{
  static const TubeSuprema s = [] {
    const auto q = planar_quadrotor();
    const auto plan = hover_plan(5);
    return tube_suprema<6, 2>(quad_metric(), q.sys, q.box, plan.xs, plan.us, 0.3, 256);
  }();
  return s;
}

CertificateConstants quad_constants(const UncertaintyTriple & tr, double omega)
{
  const auto m = quad_metric();
  const L1Params<6> p(-10.0 * Mat<6, 6>::Identity(), Mat<6, 6>::Identity(), 2e6, omega, 2.0, 0.1);
  return certificate_constants<6>(quad_suprema(), m.lambda, m.alpha_lower, m.alpha_upper, tr, L1Summary<6>::from(p));
}

}  // namespace

TEST(Certificate, TubeParams)
{
  const ScalarToy toy;
  const auto t = compute_tube_params<1>(toy.metric, Vec<1>(1.0), Vec<1>(1.0), 0.2, 0.05);
  EXPECT_DOUBLE_EQ(t.rho_r, 0.05);
  EXPECT_DOUBLE_EQ(t.rho, 0.25);
  const auto t2 = compute_tube_params<1>(toy.metric, Vec<1>(1.0), Vec<1>(0.7), 0.2, 0.05);
  EXPECT_NEAR(t2.rho_r, 0.35, 1e-15);
  EXPECT_THROW(compute_tube_params<1>(toy.metric, Vec<1>(0.0), Vec<1>(0.0), 0.0, 0.05), std::invalid_argument);

  const auto m = quad_metric();
  const auto t3 = compute_tube_params<6>(m, Vec<6>::Zero(), Vec<6>::Constant(0.01), 0.1, 0.05);
  EXPECT_NEAR(t3.rho_r, std::sqrt(m.alpha_upper / m.alpha_lower) * 0.01 * std::sqrt(6.0) + 0.05, 1e-12);
}

TEST(Certificate, BallSamples)
{
  EXPECT_DOUBLE_EQ(halton(1, 2), 0.5);
  EXPECT_DOUBLE_EQ(halton(2, 2), 0.25);
  EXPECT_DOUBLE_EQ(halton(5, 3), 2.0 / 3.0 + 1.0 / 9.0);
  const auto s = ball_samples<3>(256);
  ASSERT_EQ(s.size(), 256u);
  double rmax = 0, rmin = 1;
  for (const auto & v : s) {
    rmax = std::max(rmax, v.norm());
    if (v.norm() > 0) { rmin = std::min(rmin, v.norm()); }
  }
  EXPECT_LE(rmax, 1.0 + 1e-15);
  EXPECT_EQ(rmax, 1.0);
  EXPECT_LT(rmin, 0.3);
  EXPECT_EQ(s, ball_samples<3>(256));
}

TEST(Certificate, BoxViolation)
{
  const auto q = planar_quadrotor();
  const auto plan = hover_plan(3);
  EXPECT_LT(tube_box_violation<6>(q.box, plan.xs, 0.3), 0.0);
  // theta = 0 against the pi/4 pitch limit
  EXPECT_NEAR(tube_box_violation<6>(q.box, plan.xs, 0.9), 0.9 - M_PI / 4, 1e-12);
}

TEST(Certificate, ScalarConstantsByHand)
{
  const ScalarToy toy;
  const auto tube = compute_tube_params<1>(toy.metric, Vec<1>(0.0), Vec<1>(0.0), 0.1, 0.05);
  const std::vector<Vec<1>> xs{Vec<1>(0.0), Vec<1>(1.0)};
  const std::vector<Vec<1>> us{Vec<1>(0.5), Vec<1>(-1.0)};
  const UncertaintyTriple tr{0.3, 0.2, 0.1, "test"};
  const auto c = compute_constants<1, 1>(toy.metric, toy.sys, toy.box, tr, tube, xs, us, toy_l1(10.0), 64);
  // F = 2 (0.2)(4) + 2 (0.5)(4) = 5.6, L = 2: lambda(L^-T F L^-1) = 1.4, sigma(B L^-1) = 1
  EXPECT_NEAR(c.Delta_du, 0.7, 1e-12);
  EXPECT_NEAR(c.suprema.Delta_f, 0.2 * 1.15, 1e-12);
  EXPECT_NEAR(c.suprema.Delta_Bpinv, 0.5, 1e-15);
  EXPECT_EQ(c.Delta_Mx, 0.0);
  EXPECT_EQ(c.Delta_Psix, 0.0);
  // 0.23 + 2 (0.6 + 1 + 0.15 * 0.7)
  EXPECT_NEAR(c.Delta_x_dot, 3.64, 1e-12);
  EXPECT_NEAR(c.Delta_xr_dot, 3.64, 1e-12);
  // P = 1/4: sqrt(4 * 0.3 * (0.1 + 0.2 * 3.64) + 16 * 0.09)
  EXPECT_NEAR(c.Delta_x_tilde, 1.56, 1e-12);
  // (2 omega + |A_m|) |B^+| Delta_x_tilde = 22 * 0.5 * 1.56
  EXPECT_NEAR(c.Delta_eta_tilde, 17.16, 1e-12);
  EXPECT_NEAR(c.Delta_theta, 2.0 * 0.25 * 17.16 / 0.5, 1e-12);
  EXPECT_NEAR(c.Delta_gamma_s_dot, 0.2 + (0.2 + 0.7) * 2.0, 1e-12);
  EXPECT_NEAR(c.Delta_Psi_dot, 0.25 * 2.0 * 2.0, 1e-12);
  EXPECT_NEAR(c.kappa1, 2.0 * 0.15 * 2.0 * (0.3 / 0.9 + (0.1 + 0.2 * 3.64) / 1.0), 1e-12);
  EXPECT_EQ(c.kappa2, 0.0);
  EXPECT_NEAR(c.kappa3, 0.25 * 0.2 * (2.0 * 2.0 + 1.0) / 0.5, 1e-12);
  EXPECT_EQ(c.kappa4, c.Delta_theta);
  EXPECT_DOUBLE_EQ(c.zeta1, c.kappa1 / 10.0);
}

TEST(Certificate, ZeroTripleVanishes)
{
  const auto c = quad_constants({0.0, 0.0, 0.0, "zero"}, 30.0);
  EXPECT_EQ(c.kappa1, 0.0);
  EXPECT_EQ(c.kappa2, 0.0);
  EXPECT_EQ(c.kappa3, 0.0);
  EXPECT_EQ(c.kappa4, 0.0);
  const auto d = quad_constants({2.0, 0.5, 0.5}, 30.0);
  EXPECT_GT(d.kappa1, 0.0);
  EXPECT_GT(d.kappa2, 0.0);
  EXPECT_GT(d.kappa3, 0.0);
  EXPECT_GT(d.kappa4, 0.0);
}

TEST(Certificate, ZetaScalesWithBandwidth)
{
  const UncertaintyTriple tr{2.0, 0.5, 0.5};
  const auto a = quad_constants(tr, 30.0), b = quad_constants(tr, 60.0);
  // kappa3 does not depend on omega
  EXPECT_DOUBLE_EQ(a.kappa3, b.kappa3);
  EXPECT_DOUBLE_EQ(b.zeta3, a.zeta3 / 2.0);
  for (const auto * c : {&a, &b}) {
    EXPECT_DOUBLE_EQ(c->zeta1 * c->omega, c->kappa1);
    EXPECT_DOUBLE_EQ(c->zeta2 * c->omega, c->kappa2);
    EXPECT_DOUBLE_EQ(c->zeta3 * c->omega, c->kappa3);
  }
}

TEST(Certificate, KappaMonotoneInTriple)
{
  const double vals[] = {0.0, 0.25, 0.5, 1.0, 2.0};
  for (double w : {30.0, 90.0}) {
    for (double d : vals) {
      for (double dx : vals) {
        for (double dxi : vals) {
          const auto c = quad_constants({d, dx, dxi}, w);
          const auto up = [&](double e0, double e1, double e2) { return quad_constants({d + e0, dx + e1, dxi + e2}, w); };
          for (const auto & u : {up(0.1, 0, 0), up(0, 0.1, 0), up(0, 0, 0.1)}) {
            EXPECT_GE(u.kappa1, c.kappa1);
            EXPECT_GE(u.kappa2, c.kappa2);
            EXPECT_GE(u.kappa3, c.kappa3);
            EXPECT_GE(u.kappa4, c.kappa4);
          }
        }
      }
    }
  }
}

TEST(Certificate, LearnedTripleShrinksKappas)
{
  const auto cons = quad_constants({2.0, 0.5, 0.5}, 30.0);
  const auto learned = quad_constants({0.57, 0.49, 0.48, "learned"}, 30.0);
  EXPECT_LT(learned.kappa1, cons.kappa1);
  EXPECT_LT(learned.kappa2, cons.kappa2);
  EXPECT_LT(learned.kappa3, cons.kappa3);
  EXPECT_LT(learned.kappa4, cons.kappa4);
}

TEST(Certificate, ResonanceRejected)
{
  const auto m = quad_metric();
  EXPECT_THROW(quad_constants({2.0, 0.5, 0.5}, 2.0 * m.lambda * 1.01), std::invalid_argument);
}

TEST(Certificate, SamplingConverges)
{
  const auto q = planar_quadrotor();
  const auto m = quad_metric();
  const auto plan = hover_plan(5);
  const auto a = tube_suprema<6, 2>(m, q.sys, q.box, plan.xs, plan.us, 0.3, 256);
  const auto b = tube_suprema<6, 2>(m, q.sys, q.box, plan.xs, plan.us, 0.3, 512);
  for (auto p : {&TubeSuprema::Delta_f, &TubeSuprema::Delta_fx, &TubeSuprema::Delta_Mx, &TubeSuprema::Delta_du}) {
    EXPECT_LE(std::abs(b.*p - a.*p), 0.02 * std::abs(b.*p)) << b.*p;
  }
  EXPECT_EQ(a.Delta_B, 1.0);
  EXPECT_EQ(a.Delta_Bx, 0.0);
  EXPECT_EQ(a.Delta_Bpinv, 1.0);
}

TEST(Certificate, ToySystemCertifies)
{
  const ScalarToy toy;
  const auto tube = compute_tube_params<1>(toy.metric, Vec<1>(0.0), Vec<1>(0.02), 0.1, 0.5);
  const std::vector<Vec<1>> xs{Vec<1>(0.0), Vec<1>(1.0)};
  const std::vector<Vec<1>> us{Vec<1>(0.5), Vec<1>(-1.0)};
  const UncertaintyTriple tr{0.3, 0.2, 0.1};
  const double E0 = 0.25 * 0.02 * 0.02;
  const auto c = compute_constants<1, 1>(toy.metric, toy.sys, toy.box, tr, tube, xs, us, toy_l1(100.0), 64);
  const auto v = check_conditions(c, 0.5, 0.25, tube, E0, 1e9);
  EXPECT_TRUE(v.feasible) << v.margin[0] << " " << v.margin[1] << " " << v.margin[2];
  EXPECT_FALSE(check_conditions(c, 0.5, 0.25, tube, E0, 1.0).feasible);
  // uub decreasing, bracketed by rho and sqrt(zeta1) + rho_a
  const auto curve = uub_curve(v, {0.0, 0.5, 1.0, 5.0, 100.0});
  for (std::size_t k = 1; k < curve.size(); ++k) { EXPECT_LT(curve[k].second, curve[k - 1].second); }
  EXPECT_LE(curve.front().second, v.rho);
  EXPECT_NEAR(curve.back().second, std::sqrt(c.zeta1) + tube.rho_a, 1e-12);
  EXPECT_NEAR(curve.front().second, std::sqrt(E0 / 0.25 + c.zeta1) + tube.rho_a, 1e-15);

  const auto rb = required_bandwidth<1>(c.suprema, 0.5, 0.25, 0.25, tr, L1Summary<1>::from(toy_l1(100.0)), tube, E0);
  ASSERT_TRUE(rb.attainable);
  EXPECT_LT(rb.omega, 100.0);
  const auto at = [&](double w) {
    const auto cw = certificate_constants<1>(c.suprema, 0.5, 0.25, 0.25, tr, L1Summary<1>::from(toy_l1(w)));
    const auto vw = check_conditions(cw, 0.5, 0.25, tube, E0, 1.0);
    return vw.margin[0] >= 0 && vw.margin[1] > 0;
  };
  EXPECT_TRUE(at(rb.omega * 1.0001));
  EXPECT_FALSE(at(rb.omega * 0.999));
  const auto c2 = certificate_constants<1>(c.suprema, 0.5, 0.25, 0.25, tr, L1Summary<1>::from(toy_l1(2.0 * rb.omega)));
  EXPECT_TRUE(check_conditions(c2, 0.5, 0.25, tube, E0, rb.Gamma_at_2omega * 1.01).feasible);
  EXPECT_FALSE(check_conditions(c2, 0.5, 0.25, tube, E0, rb.Gamma_at_2omega * 0.99).feasible);
}

TEST(Certificate, NoUncertaintyAlwaysFeasible)
{
  const ScalarToy toy;
  const auto tube = compute_tube_params<1>(toy.metric, Vec<1>(0.0), Vec<1>(0.1), 0.1, 0.05);
  const std::vector<Vec<1>> xs{Vec<1>(0.0)};
  const std::vector<Vec<1>> us{Vec<1>(0.0)};
  for (double w : {1.5, 30.0}) {
    const auto c = compute_constants<1, 1>(toy.metric, toy.sys, toy.box, {}, tube, xs, us, toy_l1(w), 16);
    for (double G : {1e-6, 1.0, 1e10}) {
      EXPECT_TRUE(check_conditions(c, 0.5, 0.25, tube, 0.25 * 0.01, G).feasible);
    }
  }
}

TEST(Certificate, InfeasibleCurveThrows)
{
  CertificateVerdict v;
  EXPECT_THROW(uub_curve(v, {0.0}), std::invalid_argument);
}
