#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <Eigen/Dense>

#include "dynamics.hpp"

namespace rl1gp {

/**
 * @brief Contraction metric given through a polynomial dual metric W(x) = sum_k C_k x^{e_k}.
 *
 * M(x) = W(x)^{-1}; alpha_lower I <= M(x) <= alpha_upper I on the constraint box.
 */
template <int N>
struct ContractionMetric
{
  struct Term
  {
    std::array<int, N> exponents{};
    Mat<N, N> coefficients = Mat<N, N>::Zero();
  };

  std::vector<Term> terms;
  double lambda = 1.0;
  double alpha_lower = 1.0;
  double alpha_upper = 1.0;

  bool is_constant() const
  {
    for (const auto & t : terms) {
      for (int e : t.exponents) {
        if (e != 0) { return false; }
      }
    }
    return true;
  }

  /// Coordinates W depends on.
  std::vector<int> coordinates() const
  {
    std::vector<int> out;
    for (int i = 0; i < N; ++i) {
      for (const auto & t : terms) {
        if (t.exponents[i] != 0) {
          out.push_back(i);
          break;
        }
      }
    }
    return out;
  }

  Mat<N, N> W(const Vec<N> & x) const
  {
    Mat<N, N> out = Mat<N, N>::Zero();
    for (const auto & t : terms) {
      double c = 1.0;
      for (int i = 0; i < N; ++i) { c *= ipow(x(i), t.exponents[i]); }
      out += c * t.coefficients;
    }
    return out;
  }

  /// dW/dx_i.
  Mat<N, N> dW(const Vec<N> & x, int i) const
  {
    Mat<N, N> out = Mat<N, N>::Zero();
    for (const auto & t : terms) {
      if (t.exponents[i] == 0) { continue; }
      double c = t.exponents[i] * ipow(x(i), t.exponents[i] - 1);
      for (int j = 0; j < N; ++j) {
        if (j != i) { c *= ipow(x(j), t.exponents[j]); }
      }
      out += c * t.coefficients;
    }
    return out;
  }

  Mat<N, N> M(const Vec<N> & x) const { return W(x).llt().solve(Mat<N, N>::Identity()); }

  /// dM/dx_i = -M dW/dx_i M.
  Mat<N, N> dM(const Vec<N> & x, int i) const
  {
    const Mat<N, N> Mx = M(x);
    return -Mx * dW(x, i) * Mx;
  }

  /// Upper-triangular L with L^T L = W.
  Mat<N, N> L(const Vec<N> & x) const { return W(x).llt().matrixU(); }

private:
  static double ipow(double b, int e)
  {
    double r = 1.0;
    for (int k = 0; k < e; ++k) { r *= b; }
    return r;
  }
};

/// Chebyshev-Gauss-Lobatto nodes on [0, 1] with differentiation matrix and Clenshaw-Curtis weights.
struct ChebyshevGrid
{
  Eigen::VectorXd s;
  Eigen::VectorXd w;
  Eigen::MatrixXd D;

  explicit ChebyshevGrid(int K)
  {
    const int n = K - 1;
    s.resize(K);
    w.resize(K);
    D.resize(K, K);
    Eigen::VectorXd t(K);
    for (int j = 0; j < K; ++j) {
      t(j) = -std::cos(M_PI * j / n);  // ascending on [-1, 1]
      s(j) = 0.5 * (t(j) + 1.0);
    }
    // differentiation matrix on [-1, 1] (Trefethen), rescaled to [0, 1]
    for (int i = 0; i < K; ++i) {
      const double ci = (i == 0 || i == n) ? 2.0 : 1.0;
      for (int j = 0; j < K; ++j) {
        const double cj = (j == 0 || j == n) ? 2.0 : 1.0;
        if (i != j) { D(i, j) = (ci / cj) * (((i + j) % 2) ? -1.0 : 1.0) / (t(i) - t(j)); }
      }
    }
    for (int i = 0; i < K; ++i) {
      double r = 0.0;
      for (int j = 0; j < K; ++j) {
        if (j != i) { r += D(i, j); }
      }
      D(i, i) = -r;
    }
    D *= 2.0;
    // Clenshaw-Curtis weights on [-1, 1], halved for [0, 1]
    for (int j = 0; j < K; ++j) {
      const double theta = M_PI * j / n;
      double v = 1.0;
      for (int k = 1; k <= n / 2; ++k) {
        const double b = (2 * k == n) ? 1.0 : 2.0;
        v -= b * std::cos(2.0 * k * theta) / (4.0 * k * k - 1.0);
      }
      const double c = (j == 0 || j == n) ? 1.0 : 2.0;
      w(j) = 0.5 * c * v / n;
    }
  }
};

template <int N>
struct Geodesic
{
  Eigen::Matrix<double, Eigen::Dynamic, N> nodes;  // K x N, row j is gamma(s_j)
  Eigen::Matrix<double, Eigen::Dynamic, N> gamma_s;
  double energy = 0.0;
  bool converged = true;
  int iterations = 0;

  Vec<N> start() const { return nodes.row(0).transpose(); }
  Vec<N> end() const { return nodes.row(nodes.rows() - 1).transpose(); }
  Vec<N> tangent_start() const { return gamma_s.row(0).transpose(); }
  Vec<N> tangent_end() const { return gamma_s.row(gamma_s.rows() - 1).transpose(); }
};

namespace detail {

template <int N>
class GeodesicEnergy final : public ceres::FirstOrderFunction
{
public:
  GeodesicEnergy(const ContractionMetric<N> & metric, const ChebyshevGrid & grid, const Vec<N> & a, const Vec<N> & b)
      : metric_(metric), grid_(grid), a_(a), b_(b), coords_(metric.coordinates())
  {}

  int NumParameters() const override { return (static_cast<int>(grid_.s.size()) - 2) * N; }

  bool Evaluate(const double * p, double * cost, double * grad) const override
  {
    const int K = static_cast<int>(grid_.s.size());
    Eigen::Matrix<double, Eigen::Dynamic, N> G(K, N);
    assemble(p, G);
    const Eigen::Matrix<double, Eigen::Dynamic, N> Gs = grid_.D * G;
    double E = 0.0;
    Eigen::Matrix<double, Eigen::Dynamic, N> dE = Eigen::Matrix<double, Eigen::Dynamic, N>::Zero(K, N);
    for (int k = 0; k < K; ++k) {
      const Vec<N> x = G.row(k).transpose();
      const Eigen::LLT<Mat<N, N>> llt(metric_.W(x));
      if (llt.info() != Eigen::Success) { return false; }
      const Vec<N> v = llt.solve(Vec<N>(Gs.row(k).transpose()));  // M gamma_s
      E += grid_.w(k) * Gs.row(k).dot(v);
      if (grad) {
        // d/dgamma_s part, spread through D below
        dE.row(k) += 2.0 * grid_.w(k) * v.transpose();
      }
      if (grad) {
        for (int i : coords_) { grad_local_(k, i) = -grid_.w(k) * v.dot(metric_.dW(x, i) * v); }
      }
    }
    *cost = E;
    if (grad) {
      const Eigen::Matrix<double, Eigen::Dynamic, N> full = grid_.D.transpose() * dE;
      for (int k = 1; k < K - 1; ++k) {
        for (int i = 0; i < N; ++i) {
          double g = full(k, i);
          if (std::find(coords_.begin(), coords_.end(), i) != coords_.end()) { g += grad_local_(k, i); }
          grad[(k - 1) * N + i] = g;
        }
      }
    }
    return true;
  }

  void assemble(const double * p, Eigen::Matrix<double, Eigen::Dynamic, N> & G) const
  {
    const int K = static_cast<int>(grid_.s.size());
    G.row(0) = a_.transpose();
    G.row(K - 1) = b_.transpose();
    for (int k = 1; k < K - 1; ++k) {
      for (int i = 0; i < N; ++i) { G(k, i) = p[(k - 1) * N + i]; }
    }
    grad_local_.setZero(K, N);
  }

private:
  const ContractionMetric<N> & metric_;
  const ChebyshevGrid & grid_;
  Vec<N> a_, b_;
  std::vector<int> coords_;
  mutable Eigen::Matrix<double, Eigen::Dynamic, N> grad_local_;
};

}  // namespace detail

/**
 * @brief Minimal geodesic between x_d and x by pseudospectral collocation and BFGS.
 *
 * @param init optional K x N initial node matrix (endpoints are overwritten)
 */
template <int N>
Geodesic<N> solve_geodesic(const ContractionMetric<N> & metric,
  const Vec<N> & x_d,
  const Vec<N> & x,
  int K = 11,
  const Eigen::Matrix<double, Eigen::Dynamic, N> * init = nullptr,
  const ChebyshevGrid * grid_in = nullptr)
{
  std::unique_ptr<ChebyshevGrid> own;
  if (!grid_in || grid_in->s.size() != K) { own = std::make_unique<ChebyshevGrid>(K); }
  const ChebyshevGrid & grid = own ? *own : *grid_in;

  Geodesic<N> geo;
  geo.nodes.resize(K, N);
  if (init && init->rows() == K) {
    geo.nodes = *init;
  } else {
    for (int k = 0; k < K; ++k) { geo.nodes.row(k) = ((1.0 - grid.s(k)) * x_d + grid.s(k) * x).transpose(); }
  }
  geo.nodes.row(0) = x_d.transpose();
  geo.nodes.row(K - 1) = x.transpose();

  if (!metric.is_constant() && (x - x_d).squaredNorm() > 0.0) {
    auto * fn = new detail::GeodesicEnergy<N>(metric, grid, x_d, x);
    std::vector<double> p((K - 2) * N);
    for (int k = 1; k < K - 1; ++k) {
      for (int i = 0; i < N; ++i) { p[(k - 1) * N + i] = geo.nodes(k, i); }
    }
    ceres::GradientProblem problem(fn);
    ceres::GradientProblemSolver::Options opt;
    opt.line_search_direction_type = ceres::BFGS;
    opt.max_num_iterations = 200;
    opt.gradient_tolerance = 1e-8;
    opt.function_tolerance = 0.0;
    opt.parameter_tolerance = 0.0;
    opt.logging_type = ceres::SILENT;
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(opt, problem, p.data(), &summary);
    geo.converged = summary.termination_type == ceres::CONVERGENCE;
    geo.iterations = static_cast<int>(summary.iterations.size());
    for (int k = 1; k < K - 1; ++k) {
      for (int i = 0; i < N; ++i) { geo.nodes(k, i) = p[(k - 1) * N + i]; }
    }
  } else {
    // constant metric: the straight line is the geodesic
    for (int k = 0; k < K; ++k) { geo.nodes.row(k) = ((1.0 - grid.s(k)) * x_d + grid.s(k) * x).transpose(); }
  }

  if (x == x_d) {
    geo.gamma_s.setZero(K, N);
    geo.energy = 0.0;
    return geo;
  }
  geo.gamma_s = grid.D * geo.nodes;
  double E = 0.0;
  for (int k = 0; k < K; ++k) {
    const Vec<N> v = metric.W(geo.nodes.row(k).transpose()).llt().solve(Vec<N>(geo.gamma_s.row(k).transpose()));
    E += grid.w(k) * geo.gamma_s.row(k).dot(v);
  }
  geo.energy = E;
  return geo;
}

template <int N>
double riemannian_energy(const Geodesic<N> & g)
{
  return g.energy;
}

struct CCMReport
{
  double min_eig_margin = std::numeric_limits<double>::infinity();  // min over grid of lambda_min(M) - alpha_lower
  double max_eig_margin = std::numeric_limits<double>::infinity();  // min over grid of alpha_upper - lambda_max(M)
  double killing_residual = 0.0;                                     // max Frobenius norm
  double contraction_max_eig = -std::numeric_limits<double>::infinity();
  bool sandwich_ok = true, killing_ok = true, contraction_ok = true;
  Eigen::VectorXd worst_state;

  bool ok() const { return sandwich_ok && killing_ok && contraction_ok; }
};

/**
 * @brief Numerical check of the CCM conditions on a list of states.
 *
 * [A]_S is read as A + A^T. Condition (c) is tested on directions delta = W B_perp y, which span
 * {delta : delta^T M B = 0}.
 */
template <int N, int M>
CCMReport ccm_check(const ContractionMetric<N> & metric,
  const ControlAffineSystem<N, M> & sys,
  const std::vector<Vec<N>> & grid,
  double eig_tol = 1e-8,
  double killing_tol = 1e-6,
  double contraction_tol = 1e-8)
{
  CCMReport r;
  for (const auto & x : grid) {
    const Mat<N, N> Wx = metric.W(x);
    const Mat<N, N> Mx = metric.M(x);
    Eigen::SelfAdjointEigenSolver<Mat<N, N>> es(Mx);
    r.min_eig_margin = std::min(r.min_eig_margin, es.eigenvalues()(0) - metric.alpha_lower);
    r.max_eig_margin = std::min(r.max_eig_margin, metric.alpha_upper - es.eigenvalues()(N - 1));

    std::array<Mat<N, N>, N> dMx;
    for (int i = 0; i < N; ++i) { dMx[i] = -Mx * metric.dW(x, i) * Mx; }
    const Mat<N, M> Bx = sys.B(x);
    const auto dB = sys.jac_B(x);
    for (int j = 0; j < M; ++j) {
      Mat<N, N> db = Mat<N, N>::Zero();  // d b_j / dx
      for (int i = 0; i < N; ++i) { db.col(i) = dB[i].col(j); }
      Mat<N, N> dir = Mat<N, N>::Zero();
      for (int i = 0; i < N; ++i) { dir += Bx(i, j) * dMx[i]; }
      const Mat<N, N> A = Mx * db;
      r.killing_residual = std::max(r.killing_residual, (dir + A + A.transpose()).norm());
    }

    const Vec<N> fx = sys.f(x);
    Mat<N, N> dfM = Mat<N, N>::Zero();
    for (int i = 0; i < N; ++i) { dfM += fx(i) * dMx[i]; }
    const Mat<N, N> MA = Mx * sys.jac_f(x);
    const Mat<N, N> C = dfM + MA + MA.transpose() + 2.0 * metric.lambda * Mx;

    Eigen::JacobiSVD<Mat<N, M>> svd(Bx, Eigen::ComputeFullU);
    const Eigen::Matrix<double, N, Eigen::Dynamic> Bperp = svd.matrixU().rightCols(N - M);
    const Eigen::Matrix<double, N, Eigen::Dynamic> T = Wx * Bperp;
    const Eigen::MatrixXd S = T.transpose() * C * T;
    const double e = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (S + S.transpose())).eigenvalues().maxCoeff();
    if (e > r.contraction_max_eig) {
      r.contraction_max_eig = e;
      r.worst_state = x;
    }
  }
  r.sandwich_ok = r.min_eig_margin >= -eig_tol && r.max_eig_margin >= -eig_tol;
  r.killing_ok = r.killing_residual <= killing_tol;
  r.contraction_ok = r.contraction_max_eig <= contraction_tol;
  return r;
}

struct FeedbackResult
{
  Eigen::VectorXd k;
  double phi0 = 0.0;
  bool infeasible_direction = false;
};

/**
 * @brief Min-norm k with phi0 + phi1^T k <= 0 (analytic QP solution).
 *
 * phi0 = 2 gs(1)^T M(x) F(x, u_d) - 2 gs(0)^T M(x_d) xd_dot + 2 lambda E, phi1 = 2 B^T M(x) gs(1),
 * where B is recovered from dyn_eval, which must be affine in u.
 */
template <int N, int M, typename DynEval>
FeedbackResult feedback_gain(const ContractionMetric<N> & metric,
  DynEval && dyn_eval,
  const Vec<N> & x_d,
  const Vec<N> & xd_dot,
  const Vec<N> & x,
  const Vec<M> & u_d,
  const Geodesic<N> & geo)
{
  FeedbackResult r;
  r.k = Vec<M>::Zero();
  const Vec<N> g1 = geo.tangent_end(), g0 = geo.tangent_start();
  const Vec<N> Mg1 = metric.M(x) * g1;
  const Vec<N> F0 = dyn_eval(x, u_d);
  r.phi0 = 2.0 * Mg1.dot(F0) - 2.0 * (metric.M(x_d) * g0).dot(xd_dot) + 2.0 * metric.lambda * geo.energy;
  if (r.phi0 <= 0.0) { return r; }
  Vec<M> phi1;
  for (int j = 0; j < M; ++j) {
    Vec<M> e = u_d;
    e(j) += 1.0;
    phi1(j) = 2.0 * Mg1.dot(dyn_eval(x, e) - F0);
  }
  const double nn = phi1.squaredNorm();
  if (nn < 1e-24) {
    r.infeasible_direction = true;
    return r;
  }
  r.k = -r.phi0 * phi1 / nn;
  return r;
}

/// Riemannian-energy feedback u_c = u_d + k_c with geodesic warm start across calls.
template <int N, int M>
class CCMController
{
public:
  explicit CCMController(const ContractionMetric<N> & metric, int K = 11) : metric_(metric), grid_(K), K_(K) {}

  template <typename DynEval>
  Vec<M> u_c(DynEval && dyn_eval, const Vec<N> & x_d, const Vec<N> & xd_dot, const Vec<M> & u_d, const Vec<N> & x)
  {
    Eigen::Matrix<double, Eigen::Dynamic, N> init;
    const Eigen::Matrix<double, Eigen::Dynamic, N> * ip = nullptr;
    if (has_prev_) {
      init = prev_.nodes;
      for (int k = 0; k < K_; ++k) {
        init.row(k) += ((1.0 - grid_.s(k)) * (x_d - prev_.start()) + grid_.s(k) * (x - prev_.end())).transpose();
      }
      ip = &init;
    }
    prev_ = solve_geodesic<N>(metric_, x_d, x, K_, ip, &grid_);
    has_prev_ = true;
    if (!prev_.converged) { ++nonconverged_; }
    last_ = feedback_gain<N, M>(metric_, dyn_eval, x_d, xd_dot, x, u_d, prev_);
    if (last_.infeasible_direction) { ++infeasible_; }
    return u_d + Vec<M>(last_.k);
  }

  const Geodesic<N> & geodesic() const { return prev_; }
  double energy() const { return prev_.energy; }
  int nonconverged() const { return nonconverged_; }
  int infeasible() const { return infeasible_; }
  void reset() { has_prev_ = false; }

private:
  const ContractionMetric<N> & metric_;
  ChebyshevGrid grid_;
  int K_;
  Geodesic<N> prev_;
  FeedbackResult last_;
  bool has_prev_ = false;
  int nonconverged_ = 0;
  int infeasible_ = 0;
};

}  // namespace rl1gp
