#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "dynamics.hpp"

namespace rl1gp {

/// Solves A^T P + P A = -Q through the Kronecker form.
template <int N>
Mat<N, N> solve_lyapunov(const Mat<N, N> & A, const Mat<N, N> & Q)
{
  const int n = static_cast<int>(A.rows());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n * n, n * n);
  // vec(A^T P) = (I kron A^T) vec(P), vec(P A) = (A^T kron I) vec(P)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) += I(i, j) * A.transpose();
      K.block(i * n, j * n, n, n) += A(j, i) * I;
    }
  }
  const Eigen::VectorXd q = -Eigen::Map<const Eigen::VectorXd>(Q.data(), n * n);
  const Eigen::VectorXd p = K.fullPivLu().solve(q);
  Mat<N, N> P = Eigen::Map<const Eigen::MatrixXd>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

template <int N>
struct L1Params
{
  Mat<N, N> A_m;
  Mat<N, N> Q;
  Mat<N, N> P;
  double Gamma = 1.0;
  double omega = 1.0;
  double Delta = 1.0;  // projection radius
  double eps_proj = 0.1;

  L1Params() = default;

  L1Params(const Mat<N, N> & A, const Mat<N, N> & Qm, double gamma, double w, double radius, double eps)
      : A_m(A), Q(Qm), Gamma(gamma), omega(w), Delta(radius), eps_proj(eps)
  {
    if (!(gamma > 0) || !(w > 0) || !(radius > 0) || !(eps > 0)) {
      throw std::invalid_argument("L1Params: Gamma, omega, Delta, eps_proj must be positive");
    }
    if (Eigen::EigenSolver<Mat<N, N>>(A).eigenvalues().real().maxCoeff() >= 0) {
      throw std::invalid_argument("L1Params: A_m must be Hurwitz");
    }
    P = solve_lyapunov<N>(A, Qm);
  }

  double lyapunov_residual() const { return (A_m.transpose() * P + P * A_m + Q).norm(); }
};

/**
 * @brief Smooth projection with convex function g = (|mu|^2 - D^2) / (eps D^2).
 *
 * Keeps mu inside |mu| <= D sqrt(1 + eps).
 */
template <int M>
Vec<M> projection(const Vec<M> & mu, const Vec<M> & y, double Delta, double eps)
{
  const double D2 = Delta * Delta;
  const double g = (mu.squaredNorm() - D2) / (eps * D2);
  const Vec<M> grad = 2.0 * mu / (eps * D2);
  const double gy = grad.dot(y);
  if (g <= 0.0 || gy <= 0.0) { return y; }
  return y - g * gy * grad / grad.squaredNorm();
}

/// x_hat' = F(x, u_c + u_a + mu) + A_m x_tilde, where F uses mean_fn (zero for pure L1).
template <int N, int M, int L, typename MeanFn>
Vec<N> predictor_derivative(const L1Params<N> & p,
  const ControlAffineSystem<N, M> & sys,
  MeanFn && mean_fn,
  const Vec<L> & xi,
  const Vec<N> & x,
  const Vec<M> & u_c,
  const Vec<M> & u_a,
  const Vec<M> & mu,
  const Vec<N> & x_hat)
{
  return eval_learned<N, M, L>(sys, mean_fn, xi, x, u_c + u_a + mu) + p.A_m * (x_hat - x);
}

/// mu' = Gamma Proj(mu, -B^T P x_tilde).
template <int N, int M>
Vec<M> adaptation_derivative(
  const L1Params<N> & p, const ControlAffineSystem<N, M> & sys, const Vec<N> & x, const Vec<N> & x_tilde, const Vec<M> & mu)
{
  const Vec<M> y = -sys.B(x).transpose() * p.P * x_tilde;
  return p.Gamma * projection<M>(mu, y, p.Delta, p.eps_proj);
}

/// Exact step of u_a' = -omega (u_a + mu) with mu held over dt.
template <int M>
Vec<M> filter_step(const Vec<M> & u_a, const Vec<M> & mu, double omega, double dt)
{
  if (!(dt > 0) || !(omega > 0)) { throw std::invalid_argument("filter_step: dt and omega must be positive"); }
  const double a = std::exp(-omega * dt);
  return a * u_a - (1.0 - a) * mu;
}

struct L1Norms
{
  double one_minus_C;  // |1 - C(s)|_L1
  double sC;           // |s C(s)|_L1
};

inline L1Norms l1_norms(double omega)
{
  if (!(omega > 0)) { throw std::invalid_argument("l1_norms: omega must be positive"); }
  return {2.0, 2.0 * omega};
}

template <int N, int M>
struct L1State
{
  Vec<N> x_tilde = Vec<N>::Zero();
  Vec<M> mu = Vec<M>::Zero();
  Vec<M> u_a = Vec<M>::Zero();
};

/**
 * @brief Advances predictor error, estimate and filter over one plant step.
 *
 * Works in error coordinates: x_tilde' = A_m x_tilde + B(x)(mu - sigma), which is the
 * difference of the predictor and plant equations with sigma the true remainder h - nu.
 * sigma and x are linearly interpolated across the step; the fast pair is sub-stepped
 * with RK4 and the filter with its exact exponential map. Near the projection boundary the
 * estimate dynamics get stiff in Gamma; such substeps are bisected and, at the floor,
 * clipped to the outer radius (counted in clipped()). The clip is the stiff limit of the
 * projection flow, which slides on the sphere g = 1.
 */
template <int N, int M>
class L1Adaptation
{
public:
  L1Adaptation(const L1Params<N> & p, const ControlAffineSystem<N, M> & sys, double dt, int n_sub = 0)
      : p_(p), sys_(sys), dt_(dt)
  {
    n_sub_ = n_sub > 0 ? n_sub : recommended_substeps(p, sys, dt);
  }

  /// Substeps keeping the fast oscillation |h lambda| near 0.5 for RK4.
  static int recommended_substeps(const L1Params<N> & p, const ControlAffineSystem<N, M> & sys, double dt)
  {
    const double pmax = Eigen::SelfAdjointEigenSolver<Mat<N, N>>(p.P).eigenvalues().maxCoeff();
    const double b = Eigen::JacobiSVD<Mat<N, M>>(sys.B(Vec<N>::Zero())).singularValues()(0);
    const double am = Eigen::EigenSolver<Mat<N, N>>(p.A_m).eigenvalues().cwiseAbs().maxCoeff();
    const double rate = std::max(std::sqrt(p.Gamma * pmax) * b, am);
    return std::max(1, static_cast<int>(std::ceil(rate * dt / 0.5)));
  }

  int substeps() const { return n_sub_; }
  const L1State<N, M> & state() const { return s_; }
  L1State<N, M> & state() { return s_; }
  double max_mu_norm() const { return max_mu_; }

  void step(const Vec<N> & x0, const Vec<N> & x1, const Vec<M> & sigma0, const Vec<M> & sigma1)
  {
    const double h = 1.0 / n_sub_;
    for (int j = 0; j < n_sub_; ++j) {
      Z z;
      z << s_.x_tilde, s_.mu;
      const Vec<M> mu_hold = s_.mu;
      z = advance(z, j * h, h, x0, x1, sigma0, sigma1, 0);
      s_.x_tilde = z.template head<N>();
      s_.mu = z.template tail<M>();
      s_.u_a = filter_step<M>(s_.u_a, mu_hold, p_.omega, h * dt_);
      max_mu_ = std::max(max_mu_, s_.mu.norm());
    }
  }

  /// Substeps that hit the bisection floor and were clipped to the outer projection radius.
  long clipped() const { return clipped_; }

private:
  using Z = Eigen::Matrix<double, N + M, 1>;

  Z deriv(double a, const Z & z, const Vec<N> & x0, const Vec<N> & x1, const Vec<M> & s0, const Vec<M> & s1) const
  {
    const Vec<N> x = (1.0 - a) * x0 + a * x1;
    const Vec<M> sig = (1.0 - a) * s0 + a * s1;
    const Vec<N> xt = z.template head<N>();
    const Vec<M> mu = z.template tail<M>();
    Z dz;
    dz.template head<N>() = p_.A_m * xt + sys_.B(x) * (mu - sig);
    dz.template tail<M>() = adaptation_derivative<N, M>(p_, sys_, x, xt, mu);
    return dt_ * dz;  // time is the step fraction a
  }

  // RK4 over [a, a + h]; bisects when the projection band makes the step unstable.
  Z advance(const Z & z, double a, double h, const Vec<N> & x0, const Vec<N> & x1, const Vec<M> & s0,
    const Vec<M> & s1, int depth)
  {
    const Z k1 = deriv(a, z, x0, x1, s0, s1);
    const Z k2 = deriv(a + 0.5 * h, Z(z + 0.5 * h * k1), x0, x1, s0, s1);
    const Z k3 = deriv(a + 0.5 * h, Z(z + 0.5 * h * k2), x0, x1, s0, s1);
    const Z k4 = deriv(a + h, Z(z + h * k3), x0, x1, s0, s1);
    Z out = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double outer = p_.Delta * std::sqrt(1.0 + p_.eps_proj);
    const bool bad = !out.allFinite() || out.template tail<M>().norm() > outer;
    if (!bad) { return out; }
    if (depth < kMaxDepth) {
      const Z mid = advance(z, a, 0.5 * h, x0, x1, s0, s1, depth + 1);
      return advance(mid, a + 0.5 * h, 0.5 * h, x0, x1, s0, s1, depth + 1);
    }
    ++clipped_;
    if (!out.allFinite()) { out = z; }
    Vec<M> mu = out.template tail<M>();
    if (mu.norm() > outer) { mu *= outer / mu.norm(); }
    out.template tail<M>() = mu;
    return out;
  }

  static constexpr int kMaxDepth = 4;

  L1Params<N> p_;
  const ControlAffineSystem<N, M> & sys_;
  double dt_;
  int n_sub_ = 1;
  L1State<N, M> s_;
  double max_mu_ = 0.0;
  long clipped_ = 0;
};

}  // namespace rl1gp
