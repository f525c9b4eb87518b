#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "gp.hpp"

namespace rl1gp {

/// log of prod_i ceil(w_i sqrt(d) / (2 tau)), cubes of side 2 tau / sqrt(d) inscribed in tau-balls.
inline double covering_number_log(const VectorXd & lower, const VectorXd & upper, double tau)
{
  if (!(tau > 0)) { throw std::invalid_argument("covering_number_log: tau must be positive"); }
  const double d = static_cast<double>(lower.size());
  double logM = 0.0;
  for (int i = 0; i < lower.size(); ++i) {
    const double c = std::ceil((upper(i) - lower(i)) * std::sqrt(d) / (2.0 * tau));
    logM += std::log(std::max(1.0, c));
  }
  return logM;
}

struct CoveringParams
{
  double tau = 1e-8;
  double delta = 0.1;
  double delta_hat = 0.1;
  double log_M = 0.0;
  double beta = 0.0, beta_xi = 0.0, beta_x = 0.0;
};

/// beta = 2 log(m M / delta), beta_xi = 2 log(l m M / delta_hat), beta_x = 2 log(n m M / delta_hat).
inline CoveringParams beta_terms(double log_M, int m, int l, int n, double delta, double tau)
{
  if (!(delta > 0 && delta < 1)) { throw std::invalid_argument("beta_terms: delta must lie in (0, 1)"); }
  CoveringParams c;
  c.tau = tau;
  c.delta = delta;
  c.log_M = log_M;
  // 1 - (1 - delta)^(1/m) without cancellation
  c.delta_hat = -std::expm1(std::log1p(-delta) / m);
  c.beta = 2.0 * (std::log(m) + log_M - std::log(delta));
  c.beta_xi = l > 0 ? 2.0 * (std::log(l * m) + log_M - std::log(c.delta_hat)) : 0.0;
  c.beta_x = 2.0 * (std::log(n * m) + log_M - std::log(c.delta_hat));
  return c;
}

inline CoveringParams covering_params(const VectorXd & lower, const VectorXd & upper, int m, int l, double delta, double tau)
{
  const int n = static_cast<int>(lower.size()) - l;
  return beta_terms(covering_number_log(lower, upper, tau), m, l, n, delta, tau);
}

/// Largest eigenvalue of (K + s^2 I)^-1, from the smallest eigenvalue of the reassembled matrix.
/// Power iteration stalls here: the small eigenvalues cluster just above s^2.
inline double inverse_spectral_norm(const Eigen::LLT<MatrixXd> & llt)
{
  if (llt.matrixLLT().rows() == 0) { return 0.0; }
  const MatrixXd L = llt.matrixL();
  const MatrixXd A = L * L.transpose();
  return 1.0 / Eigen::SelfAdjointEigenSolver<MatrixXd>(A, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

struct ContinuityConstants
{
  double L_nu = 0.0;
  VectorXd grad_xi_L_nu, grad_x_L_nu;  // per channel
  // moduli are sqrt(2 r c) with these coefficients
  double omega_coef = 0.0;
  VectorXd grad_xi_omega_coef, grad_x_omega_coef;
  VectorXd inv_norm;  // |(K + s^2 I)^-1| per channel

  double omega(double r) const { return std::sqrt(2.0 * r * omega_coef); }
  double grad_xi_omega(int i, double r) const { return std::sqrt(2.0 * r * grad_xi_omega_coef(i)); }
  double grad_x_omega(int i, double r) const { return std::sqrt(2.0 * r * grad_x_omega_coef(i)); }
};

inline ContinuityConstants continuity_constants(const GPModel & g, const std::vector<KernelRegularity> & reg)
{
  const int m = g.m();
  const double N = g.N();
  ContinuityConstants c;
  c.grad_xi_L_nu = VectorXd::Zero(m);
  c.grad_x_L_nu = VectorXd::Zero(m);
  c.grad_xi_omega_coef = VectorXd::Zero(m);
  c.grad_x_omega_coef = VectorXd::Zero(m);
  c.inv_norm = VectorXd::Zero(m);
  double Lsum = 0.0;
  for (int i = 0; i < m; ++i) {
    const double an = N > 0 ? g.alpha[i].norm() : 0.0;
    const double inv = N > 0 ? inverse_spectral_norm(g.chol[i]) : 0.0;
    c.inv_norm(i) = inv;
    Lsum += reg[i].L_K * reg[i].L_K * an * an;
    c.grad_xi_L_nu(i) = std::sqrt(N) * reg[i].grad_xi_L_K * an;
    c.grad_x_L_nu(i) = std::sqrt(N) * reg[i].grad_x_L_K * an;
    c.omega_coef += reg[i].L_K * (1.0 + N * inv * reg[i].max_K);
    c.grad_xi_omega_coef(i) = reg[i].grad_xi_L_K * (1.0 + N * inv * reg[i].max_dK_dxi.sum());
    c.grad_x_omega_coef(i) = reg[i].grad_x_L_K * (1.0 + N * inv * reg[i].max_dK_dx.sum());
  }
  c.L_nu = std::sqrt(N * Lsum);
  return c;
}

/// Assumption-level inputs to the gamma terms.
struct PriorBounds
{
  double Delta_hx = 0.0, Delta_hxi = 0.0;
  std::vector<double> hessian_xi, hessian_x;  // per channel
};

struct GammaTerms
{
  double gamma = 0.0;
  VectorXd grad_xi_gamma, grad_x_gamma;
};

inline GammaTerms gamma_terms(const CoveringParams & cov, const ContinuityConstants & c, const PriorBounds & pb)
{
  const int m = static_cast<int>(c.grad_xi_L_nu.size());
  const double t = cov.tau;
  GammaTerms g;
  g.gamma = (pb.Delta_hx + pb.Delta_hxi + c.L_nu) * t + std::sqrt(cov.beta) * c.omega(t);
  g.grad_xi_gamma.resize(m);
  g.grad_x_gamma.resize(m);
  for (int i = 0; i < m; ++i) {
    g.grad_xi_gamma(i) = (pb.hessian_xi.at(i) + c.grad_xi_L_nu(i)) * t + std::sqrt(cov.beta_xi) * c.grad_xi_omega(i, t);
    g.grad_x_gamma(i) = (pb.hessian_x.at(i) + c.grad_x_L_nu(i)) * t + std::sqrt(cov.beta_x) * c.grad_x_omega(i, t);
  }
  return g;
}

struct PointwiseBound
{
  double Dh = 0.0, grad_xi_Dh = 0.0, grad_x_Dh = 0.0;
};

inline PointwiseBound pointwise_bounds(const GPModel & g, const CoveringParams & cov, const GammaTerms & gt, const VectorXd & z)
{
  const auto p = posterior(g, z);
  MatrixXd sxi, sx;
  derivative_marginals(g, z, sxi, sx);
  PointwiseBound b;
  b.Dh = std::sqrt(cov.beta) * p.std.norm() + gt.gamma;
  double sxi2 = 0.0, sx2 = 0.0;
  for (int i = 0; i < g.m(); ++i) {
    const double a = gt.grad_xi_gamma(i) + std::sqrt(cov.beta_xi) * sxi.row(i).norm();
    const double c = gt.grad_x_gamma(i) + std::sqrt(cov.beta_x) * sx.row(i).norm();
    sxi2 += a * a;
    sx2 += c * c;
  }
  b.grad_xi_Dh = g.l > 0 ? std::sqrt(sxi2) : 0.0;
  b.grad_x_Dh = std::sqrt(sx2);
  return b;
}

struct RemainderBounds
{
  double Delta = 0.0, Delta_x = 0.0, Delta_xi = 0.0;
  // provenance
  double delta = 0.0, tau = 0.0;
  int N = 0;
  std::vector<int> resolution;
  int refine_factor = 10;
  long evaluations = 0;
  VectorXd argmax, argmax_x, argmax_xi;
};

namespace detail {

// Visits a tensor grid in lexicographic order.
inline void for_each_grid_point(const VectorXd & lo, const VectorXd & hi, const std::vector<int> & res,
  const std::function<void(const VectorXd &)> & fn)
{
  const int d = static_cast<int>(lo.size());
  std::vector<int> idx(d, 0);
  VectorXd z(d);
  for (;;) {
    for (int i = 0; i < d; ++i) {
      z(i) = res[i] > 1 ? lo(i) + (hi(i) - lo(i)) * idx[i] / (res[i] - 1) : 0.5 * (lo(i) + hi(i));
    }
    fn(z);
    int k = 0;
    while (k < d && ++idx[k] == res[k]) { idx[k++] = 0; }
    if (k == d) { return; }
  }
}

}  // namespace detail

/**
 * @brief Grid suprema of the three pointwise bounds over the box.
 *
 * Tensor grid with per-dimension resolution, then one refinement around each argmax:
 * a patch of +-1 coarse cell per dimension sampled refine_factor times finer, visited as
 * coordinate sweeps through the coarse argmax.
 */
inline RemainderBounds remainder_bounds(const GPModel & g,
  const CoveringParams & cov,
  const GammaTerms & gt,
  const VectorXd & lower,
  const VectorXd & upper,
  const std::vector<int> & resolution,
  int refine_factor = 10)
{
  const int d = static_cast<int>(lower.size());
  if (static_cast<int>(resolution.size()) != d) { throw std::invalid_argument("remainder_bounds: resolution size"); }
  for (int r : resolution) {
    if (r < 2) { throw std::invalid_argument("remainder_bounds: resolution >= 2 per dimension"); }
  }
  RemainderBounds out;
  out.delta = cov.delta;
  out.tau = cov.tau;
  out.N = g.N();
  out.resolution = resolution;
  out.refine_factor = refine_factor;
  out.argmax = out.argmax_x = out.argmax_xi = lower;
  out.Delta = out.Delta_x = out.Delta_xi = -1.0;

  const auto consider = [&](const VectorXd & z) {
    const auto b = pointwise_bounds(g, cov, gt, z);
    ++out.evaluations;
    if (b.Dh > out.Delta) {
      out.Delta = b.Dh;
      out.argmax = z;
    }
    if (b.grad_x_Dh > out.Delta_x) {
      out.Delta_x = b.grad_x_Dh;
      out.argmax_x = z;
    }
    if (b.grad_xi_Dh > out.Delta_xi) {
      out.Delta_xi = b.grad_xi_Dh;
      out.argmax_xi = z;
    }
  };
  detail::for_each_grid_point(lower, upper, resolution, consider);

  for (VectorXd * am : {&out.argmax, &out.argmax_x, &out.argmax_xi}) {
    const VectorXd center = *am;
    for (int i = 0; i < d; ++i) {
      const double cell = (upper(i) - lower(i)) / (resolution[i] - 1);
      const double h = cell / refine_factor;
      for (int k = -refine_factor; k <= refine_factor; ++k) {
        if (k == 0) { continue; }
        VectorXd z = center;
        z(i) = std::clamp(center(i) + k * h, lower(i), upper(i));
        consider(z);
      }
    }
  }
  return out;
}

}  // namespace rl1gp
