#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "ccm.hpp"
#include "dynamics.hpp"
#include "l1.hpp"

namespace rl1gp {

struct TubeParams
{
  double rho_a = 0.0, eps = 0.0;
  double rho_r = 0.0, rho = 0.0;
  double initial_error = 0.0;  // |x_d(0) - x0|
};

/// rho_r = sqrt(alpha_upper / alpha_lower) |x_d(0) - x0| + eps, rho = rho_r + rho_a.
template <int N>
TubeParams compute_tube_params(const ContractionMetric<N> & metric, const Vec<N> & xd0, const Vec<N> & x0, double rho_a, double eps)
{
  if (!(rho_a > 0) || !(eps > 0)) { throw std::invalid_argument("compute_tube_params: rho_a and eps must be positive"); }
  TubeParams t;
  t.rho_a = rho_a;
  t.eps = eps;
  t.initial_error = (xd0 - x0).norm();
  t.rho_r = std::sqrt(metric.alpha_upper / metric.alpha_lower) * t.initial_error + eps;
  t.rho = t.rho_r + rho_a;
  return t;
}

/// Largest amount by which a rho-ball around any plan state leaves the box (<= 0 means inside).
template <int N>
double tube_box_violation(const StateBox<N> & box, const std::vector<Vec<N>> & xs, double rho)
{
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto & x : xs) {
    worst = std::max(worst, ((x.array() + rho) - box.upper.array()).maxCoeff());
    worst = std::max(worst, (box.lower.array() - (x.array() - rho)).maxCoeff());
  }
  return worst;
}

struct UncertaintyTriple
{
  double Delta = 0.0, Delta_x = 0.0, Delta_xi = 0.0;
  std::string source = "conservative";
};

/// Radical inverse in the given base, the k-th Halton coordinate.
inline double halton(long k, int base)
{
  double f = 1.0, r = 0.0;
  while (k > 0) {
    f /= base;
    r += f * (k % base);
    k /= base;
  }
  return r;
}

/**
 * @brief Deterministic offsets filling the closed n-ball of radius 1.
 *
 * The center, the 2n axis points on the sphere, then Halton points of [-1, 1]^n mapped onto the
 * ball by the radial map v |v|_inf / |v|_2, which sends the cube surface onto the sphere.
 */
template <int N>
std::vector<Vec<N>> ball_samples(int count)
{
  static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  static_assert(N <= 16, "ball_samples: dimension too large");
  std::vector<Vec<N>> out;
  out.push_back(Vec<N>::Zero());
  for (int i = 0; i < N; ++i) {
    out.push_back(Vec<N>::Unit(i));
    out.push_back(-Vec<N>::Unit(i));
  }
  for (long k = 1; static_cast<int>(out.size()) < count; ++k) {
    Vec<N> v;
    for (int i = 0; i < N; ++i) { v(i) = 2.0 * halton(k, primes[i]) - 1.0; }
    const double n2 = v.norm();
    if (n2 > 0) { v *= v.cwiseAbs().maxCoeff() / n2; }
    out.push_back(v);
  }
  out.resize(std::max<std::size_t>(count, 1));
  return out;
}

/// Model suprema over the tube, independent of the uncertainty triple and of omega.
struct TubeSuprema
{
  double Delta_f = 0, Delta_fx = 0, Delta_B = 0, Delta_Bx = 0, Delta_bx = 0;
  double Delta_Bpinv = 0, Delta_Bpinv_x = 0, Delta_ud = 0;
  double Delta_Mx = 0, Delta_du = 0;
  double rho = 0;
  long samples = 0;
  int samples_per_knot = 0;
  double box_violation = 0;  // > 0 when the tube leaves the state box
};

namespace detail {

template <int N, int M>
double min_positive_singular_value(const Mat<M, N> & A)
{
  const auto sv = Eigen::JacobiSVD<Mat<M, N>>(A).singularValues();
  const double tol = 1e-12 * std::max(1.0, sv(0));
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) { best = std::min(best, sv(i)); }
  }
  return best;
}

}  // namespace detail

/**
 * @brief Samples the model suprema over the rho-tube around the plan.
 *
 * Each of the supplied knots gets samples_per_knot offsets from ball_samples scaled by rho.
 * Delta_bx is read as sup_i sum_j |d b_j / d x_i| over input columns b_j. Delta_du is clamped at 0
 * when F is negative definite on the whole tube.
 */
template <int N, int M>
TubeSuprema tube_suprema(const ContractionMetric<N> & metric,
  const ControlAffineSystem<N, M> & sys,
  const StateBox<N> & box,
  const std::vector<Vec<N>> & xs,
  const std::vector<Vec<M>> & us,
  double rho,
  int samples_per_knot = 256)
{
  if (xs.empty()) { throw std::invalid_argument("tube_suprema: empty plan"); }
  TubeSuprema s;
  s.rho = rho;
  s.samples_per_knot = samples_per_knot;
  s.box_violation = tube_box_violation<N>(box, xs, rho);
  for (const auto & u : us) { s.Delta_ud = std::max(s.Delta_ud, u.norm()); }
  const auto offsets = ball_samples<N>(samples_per_knot);
  double du = -std::numeric_limits<double>::infinity();
  for (const auto & xd : xs) {
    for (const auto & o : offsets) {
      const Vec<N> x = xd + rho * o;
      ++s.samples;
      const Vec<N> fx = sys.f(x);
      const Mat<N, N> A = sys.jac_f(x);
      const Mat<N, M> Bx = sys.B(x);
      const auto dB = sys.jac_B(x);
      s.Delta_f = std::max(s.Delta_f, fx.norm());
      s.Delta_fx = std::max(s.Delta_fx, Eigen::JacobiSVD<Mat<N, N>>(A).singularValues()(0));
      const double sB = Eigen::JacobiSVD<Mat<N, M>>(Bx).singularValues()(0);
      s.Delta_B = std::max(s.Delta_B, sB);
      double sum_dB = 0.0;
      for (int i = 0; i < N; ++i) { sum_dB += Eigen::JacobiSVD<Mat<N, M>>(dB[i]).singularValues()(0); }
      s.Delta_Bx = std::max(s.Delta_Bx, sum_dB);
      for (int i = 0; i < N; ++i) {
        double sum_col = 0.0;
        for (int j = 0; j < M; ++j) { sum_col += dB[i].col(j).norm(); }
        s.Delta_bx = std::max(s.Delta_bx, sum_col);
      }
      const Mat<M, N> Bp = sys.pinv_B(x);
      if (!Bp.allFinite()) { throw std::domain_error("tube_suprema: B(x) singular on a tube sample"); }
      s.Delta_Bpinv = std::max(s.Delta_Bpinv, Eigen::JacobiSVD<Mat<M, N>>(Bp).singularValues()(0));
      const auto dBp = sys.jac_pinv_B(x);
      double sum_dBp = 0.0;
      for (int i = 0; i < N; ++i) { sum_dBp += Eigen::JacobiSVD<Mat<M, N>>(dBp[i]).singularValues()(0); }
      s.Delta_Bpinv_x = std::max(s.Delta_Bpinv_x, sum_dBp);

      // metric terms
      const Mat<N, N> Wx = metric.W(x);
      const Mat<N, N> Mx = metric.M(x);
      double sum_dM = 0.0;
      Mat<N, N> dfW = Mat<N, N>::Zero();
      for (const int i : metric.coordinates()) {
        const Mat<N, N> dWi = metric.dW(x, i);
        sum_dM += Eigen::SelfAdjointEigenSolver<Mat<N, N>>(Mx * dWi * Mx).eigenvalues().cwiseAbs().maxCoeff();
        dfW += fx(i) * dWi;
      }
      s.Delta_Mx = std::max(s.Delta_Mx, sum_dM);
      const Mat<N, N> AW = A * Wx;
      const Mat<N, N> F = -dfW + AW + AW.transpose() + 2.0 * metric.lambda * Wx;
      const Mat<N, N> U = Wx.llt().matrixU();  // W = U^T U
      const Mat<N, N> Ui = U.inverse();
      const Mat<N, N> G = Ui.transpose() * F * Ui;
      const double lmax = Eigen::SelfAdjointEigenSolver<Mat<N, N>>(0.5 * (G + G.transpose())).eigenvalues().maxCoeff();
      const double smin = detail::min_positive_singular_value<N, M>(Bx.transpose() * Ui);
      du = std::max(du, 0.5 * lmax / smin);
    }
  }
  s.Delta_du = std::max(0.0, du);
  return s;
}

/// The fixed parts of the adaptive loop that enter the constants.
template <int N>
struct L1Summary
{
  double lambda_max_P = 0, lambda_min_P = 0, lambda_min_Q = 0, norm_A_m = 0;
  double omega = 0;
  L1Norms norms{2.0, 0.0};

  static L1Summary from(const L1Params<N> & p)
  {
    L1Summary s;
    const auto eP = Eigen::SelfAdjointEigenSolver<Mat<N, N>>(p.P).eigenvalues();
    s.lambda_max_P = eP.maxCoeff();
    s.lambda_min_P = eP.minCoeff();
    s.lambda_min_Q = Eigen::SelfAdjointEigenSolver<Mat<N, N>>(p.Q).eigenvalues().minCoeff();
    s.norm_A_m = Eigen::JacobiSVD<Mat<N, N>>(p.A_m).singularValues()(0);
    s.omega = p.omega;
    s.norms = l1_norms(p.omega);
    return s;
  }
};

struct CertificateConstants
{
  double Delta_Mx = 0, Delta_Psix = 0, Delta_du = 0, Delta_xr_dot = 0, Delta_x_dot = 0;
  double Delta_x_tilde = 0, Delta_eta_tilde = 0, Delta_theta = 0, Delta_Psi_dot = 0, Delta_gamma_s_dot = 0;
  double kappa1 = 0, kappa2 = 0, kappa3 = 0, kappa4 = 0;
  double zeta1 = 0, zeta2 = 0, zeta3 = 0;
  double omega = 0, rho = 0;
  UncertaintyTriple triple;
  TubeSuprema suprema;
};

/// Minimal |2 lambda / omega - 1| accepted; the kappa1 and kappa2 displays are singular at omega = 2 lambda.
inline constexpr double kResonanceGuard = 0.05;

/**
 * @brief Tube constants and kappa/zeta for one uncertainty triple.
 *
 * The triple replaces (Delta_h, Delta_hx, Delta_hxi) everywhere, so the learned variant is the
 * same computation with the learned triple.
 */
template <int N>
CertificateConstants certificate_constants(const TubeSuprema & s,
  double lambda,
  double alpha_lower,
  double alpha_upper,
  const UncertaintyTriple & tr,
  const L1Summary<N> & l1)
{
  const double w = l1.omega;
  if (!(w > 0)) { throw std::invalid_argument("certificate_constants: omega must be positive"); }
  const double res = std::abs(2.0 * lambda / w - 1.0);
  if (res < kResonanceGuard) {
    throw std::invalid_argument("certificate_constants: omega too close to 2 lambda (|2 lambda/omega - 1| < 0.05)");
  }
  if (tr.Delta < 0 || tr.Delta_x < 0 || tr.Delta_xi < 0) { throw std::invalid_argument("certificate_constants: negative triple"); }
  const double rho = s.rho, aL = alpha_lower, aU = alpha_upper;
  const double Dh = tr.Delta, Dhx = tr.Delta_x, Dhxi = tr.Delta_xi;

  CertificateConstants c;
  c.suprema = s;
  c.triple = tr;
  c.omega = w;
  c.rho = rho;
  c.Delta_Mx = s.Delta_Mx;
  c.Delta_du = s.Delta_du;
  c.Delta_Psix = 2.0 * s.Delta_Bx + s.Delta_B * s.Delta_Mx / aL;
  c.Delta_xr_dot = s.Delta_f + s.Delta_B * (l1.norms.one_minus_C * Dh + s.Delta_ud + rho * s.Delta_du);
  c.Delta_x_dot = s.Delta_f + s.Delta_B * (2.0 * Dh + s.Delta_ud + rho * s.Delta_du);
  c.Delta_x_tilde = std::sqrt(4.0 * l1.lambda_max_P * Dh * (Dhxi + Dhx * c.Delta_x_dot) / (l1.lambda_min_P * l1.lambda_min_Q) +
                              4.0 * Dh * Dh / l1.lambda_min_P);
  c.Delta_eta_tilde =
    (s.Delta_Bpinv_x * c.Delta_x_dot + (l1.norms.sC + l1.norm_A_m) * s.Delta_Bpinv) * c.Delta_x_tilde;
  c.Delta_theta = s.Delta_B * aU * c.Delta_eta_tilde / lambda;
  c.Delta_gamma_s_dot = std::sqrt(aU / aL) * (s.Delta_fx + (Dh + s.Delta_ud + rho * s.Delta_du) * s.Delta_bx +
                                              (Dhx + std::sqrt(aL) * s.Delta_du / std::sqrt(aU)) * s.Delta_B);
  c.Delta_Psi_dot = aU * (s.Delta_B * c.Delta_gamma_s_dot + s.Delta_B * s.Delta_Mx * c.Delta_x_dot / std::sqrt(aU * aL) +
                          s.Delta_Bx * c.Delta_x_dot);

  const double bracket = Dh / res + (Dhxi + Dhx * c.Delta_xr_dot) / (2.0 * lambda);
  c.kappa1 = 2.0 * rho * s.Delta_B * (aU / aL) * bracket;
  c.kappa2 = aU * c.Delta_Psix * (aU / aL) * bracket;
  c.kappa3 = aU * Dhx * (4.0 * lambda * s.Delta_B + c.Delta_Psi_dot) / lambda;
  c.kappa4 = c.Delta_theta;
  c.zeta1 = c.kappa1 / w;
  c.zeta2 = c.kappa2 / w;
  c.zeta3 = c.kappa3 / w;
  return c;
}

/// Suprema plus constants in one call.
template <int N, int M>
CertificateConstants compute_constants(const ContractionMetric<N> & metric,
  const ControlAffineSystem<N, M> & sys,
  const StateBox<N> & box,
  const UncertaintyTriple & triple,
  const TubeParams & tube,
  const std::vector<Vec<N>> & xs,
  const std::vector<Vec<M>> & us,
  const L1Params<N> & l1,
  int samples_per_knot = 256)
{
  const auto s = tube_suprema<N, M>(metric, sys, box, xs, us, tube.rho, samples_per_knot);
  return certificate_constants<N>(s, metric.lambda, metric.alpha_lower, metric.alpha_upper, triple, L1Summary<N>::from(l1));
}

struct CertificateVerdict
{
  bool feasible = false;
  // signed margins: rho_r^2 - E0/alpha_lower - zeta1, alpha_lower - zeta2 - zeta3,
  // sqrt(Gamma) rho_a (alpha_lower - zeta2 - zeta3) - kappa4
  double margin[3] = {0, 0, 0};
  double rho = 0, rho_r = 0, rho_a = 0;
  double E0 = 0, alpha_lower = 0, lambda = 0, zeta1 = 0;
  double omega = 0, Gamma = 0;

  /// delta(omega, T) = sqrt(exp(-2 lambda T) E0 / alpha_lower + zeta1) + rho_a.
  double uub(double T) const { return std::sqrt(std::exp(-2.0 * lambda * T) * E0 / alpha_lower + zeta1) + rho_a; }
};

/// The three conditions; the third is multiplied through by rho_a (alpha_lower - zeta2 - zeta3).
inline CertificateVerdict check_conditions(
  const CertificateConstants & c, double lambda, double alpha_lower, const TubeParams & tube, double E0, double Gamma)
{
  if (!(Gamma > 0)) { throw std::invalid_argument("check_conditions: Gamma must be positive"); }
  CertificateVerdict v;
  v.rho = tube.rho;
  v.rho_r = tube.rho_r;
  v.rho_a = tube.rho_a;
  v.E0 = E0;
  v.alpha_lower = alpha_lower;
  v.lambda = lambda;
  v.zeta1 = c.zeta1;
  v.omega = c.omega;
  v.Gamma = Gamma;
  v.margin[0] = tube.rho_r * tube.rho_r - E0 / alpha_lower - c.zeta1;
  v.margin[1] = alpha_lower - c.zeta2 - c.zeta3;
  v.margin[2] = std::sqrt(Gamma) * tube.rho_a * v.margin[1] - c.kappa4;
  v.feasible = v.margin[0] >= 0 && v.margin[1] > 0 && v.margin[2] > 0;
  return v;
}

/// Samples of (T, delta(omega, T)).
inline std::vector<std::pair<double, double>> uub_curve(const CertificateVerdict & v, const std::vector<double> & T)
{
  if (!v.feasible) { throw std::invalid_argument("uub_curve: infeasible certificate"); }
  std::vector<std::pair<double, double>> out;
  out.reserve(T.size());
  for (double t : T) { out.emplace_back(t, v.uub(t)); }
  return out;
}

struct RequiredBandwidth
{
  double omega = std::numeric_limits<double>::infinity();  // smallest omega meeting conditions one and two
  double Gamma_at_2omega = std::numeric_limits<double>::infinity();
  bool attainable = false;
};

/**
 * @brief Smallest omega above 2 lambda satisfying the first two conditions, by bisection in log omega.
 *
 * Both zeta1 and zeta2 + zeta3 decrease in omega on that branch. Also reports the Gamma that the
 * third condition needs at twice that omega.
 */
template <int N>
RequiredBandwidth required_bandwidth(const TubeSuprema & s,
  double lambda,
  double alpha_lower,
  double alpha_upper,
  const UncertaintyTriple & tr,
  L1Summary<N> l1,
  const TubeParams & tube,
  double E0,
  double omega_max = 1e12)
{
  const auto ok = [&](double w) {
    l1.omega = w;
    l1.norms = l1_norms(w);
    const auto c = certificate_constants<N>(s, lambda, alpha_lower, alpha_upper, tr, l1);
    const auto v = check_conditions(c, lambda, alpha_lower, tube, E0, 1.0);
    return v.margin[0] >= 0 && v.margin[1] > 0;
  };
  RequiredBandwidth r;
  double lo = std::log(2.0 * lambda / (1.0 - 2.0 * kResonanceGuard));
  double hi = std::log(omega_max);
  if (!ok(std::exp(hi))) { return r; }
  if (ok(std::exp(lo))) {
    hi = lo;
  } else {
    for (int k = 0; k < 100 && hi - lo > 1e-6; ++k) {
      const double mid = 0.5 * (lo + hi);
      (ok(std::exp(mid)) ? hi : lo) = mid;
    }
  }
  r.attainable = true;
  r.omega = std::exp(hi);
  l1.omega = 2.0 * r.omega;
  l1.norms = l1_norms(l1.omega);
  const auto c = certificate_constants<N>(s, lambda, alpha_lower, alpha_upper, tr, l1);
  const double m2 = alpha_lower - c.zeta2 - c.zeta3;
  const double root = c.kappa4 / (tube.rho_a * m2);
  r.Gamma_at_2omega = root * root;
  return r;
}

}  // namespace rl1gp
