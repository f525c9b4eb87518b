#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dynamics.hpp"

namespace rl1gp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Anisotropic squared-exponential kernel s^2 exp(-0.5 sum_k (z_k - z'_k)^2 / l_k^2).
struct SEKernel
{
  double signal_variance = 1.0;
  VectorXd lengthscales;

  double operator()(const VectorXd & a, const VectorXd & b) const
  {
    return signal_variance * std::exp(-0.5 * ((a - b).array() / lengthscales.array()).square().sum());
  }

  /// dK(a, b)/da.
  VectorXd grad(const VectorXd & a, const VectorXd & b) const
  {
    const VectorXd r = a - b;
    return -(*this)(a, b) * (r.array() / lengthscales.array().square()).matrix();
  }

  /// d^2 K(a, b) / da db'.
  MatrixXd cross_hessian(const VectorXd & a, const VectorXd & b) const
  {
    const VectorXd v = (a - b).array() / lengthscales.array().square();
    const VectorXd d = lengthscales.array().square().inverse();
    return (*this)(a, b) * (MatrixXd(d.asDiagonal()) - v * v.transpose());
  }
};

struct KernelRegularity
{
  double L_K = 0;
  double grad_xi_L_K = 0;
  double grad_x_L_K = 0;
  double max_K = 0;
  VectorXd max_dK_dxi;
  VectorXd max_dK_dx;
};

/**
 * @brief Closed-form regularity constants of an SE kernel on a box.
 *
 * With u = r / l, |dK/dz_k| = s^2 u_k exp(-|u|^2/2) / l_k, maximal at u_k = min(1, w_k / l_k).
 * The gradient norm is bounded by s^2 phi(min(1, |u|_max)) / l_min with phi(u) = u exp(-u^2/2).
 * The derivative constants bound the l x (l+n) (resp. n x (l+n)) block of the Hessian in the
 * first argument, s^2 / (l_min,block * l_min), which is what the mean-gradient Lipschitz bound uses.
 */
inline KernelRegularity kernel_regularity(const SEKernel & k, const VectorXd & lower, const VectorXd & upper, int l)
{
  const int d = static_cast<int>(k.lengthscales.size());
  const auto phi = [](double u) { return u * std::exp(-0.5 * u * u); };
  const VectorXd w = upper - lower;
  const double s2 = k.signal_variance;

  KernelRegularity r;
  r.max_K = s2;
  const double lmin = k.lengthscales.minCoeff();
  r.L_K = s2 * phi(std::min(1.0, (w.array() / k.lengthscales.array()).matrix().norm())) / lmin;
  r.max_dK_dxi.resize(l);
  r.max_dK_dx.resize(d - l);
  for (int i = 0; i < d; ++i) {
    const double v = s2 * phi(std::min(1.0, w(i) / k.lengthscales(i))) / k.lengthscales(i);
    if (i < l) {
      r.max_dK_dxi(i) = v;
    } else {
      r.max_dK_dx(i - l) = v;
    }
  }
  r.grad_xi_L_K = l > 0 ? s2 / (k.lengthscales.head(l).minCoeff() * lmin) : 0.0;
  r.grad_x_L_K = d - l > 0 ? s2 / (k.lengthscales.tail(d - l).minCoeff() * lmin) : 0.0;
  return r;
}

/// Inputs Z ((l+n) x N), targets Y (m x N).
struct Dataset
{
  MatrixXd Z;
  MatrixXd Y;
  double noise_std = 0.01;

  int size() const { return static_cast<int>(Z.cols()); }

  void append(const Dataset & o)
  {
    if (o.size() == 0) { return; }
    if (size() == 0) {
      Z = o.Z;
      Y = o.Y;
      return;
    }
    MatrixXd Zn(Z.rows(), Z.cols() + o.Z.cols()), Yn(Y.rows(), Y.cols() + o.Y.cols());
    Zn << Z, o.Z;
    Yn << Y, o.Y;
    Z = std::move(Zn);
    Y = std::move(Yn);
  }

  Dataset head(int k) const
  {
    Dataset d;
    d.noise_std = noise_std;
    d.Z = Z.leftCols(k);
    d.Y = Y.leftCols(k);
    return d;
  }
};

inline void write_dataset_csv(const Dataset & d, const std::string & path)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path); }
  os.precision(17);
  for (int i = 0; i < d.Z.rows(); ++i) { os << (i ? "," : "") << "z_" << i + 1; }
  for (int i = 0; i < d.Y.rows(); ++i) { os << ",y_" << i + 1; }
  os << "\n";
  for (int k = 0; k < d.size(); ++k) {
    for (int i = 0; i < d.Z.rows(); ++i) { os << (i ? "," : "") << d.Z(i, k); }
    for (int i = 0; i < d.Y.rows(); ++i) { os << "," << d.Y(i, k); }
    os << "\n";
  }
}

/// Reads a dataset whose header names columns z_* and y_*.
inline Dataset read_dataset_csv(const std::string & path, double noise_std)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot read " + path); }
  std::string line;
  std::getline(is, line);
  int nz = 0, ny = 0;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      col.erase(0, col.find_first_not_of(" \t"));
      if (col.rfind("z_", 0) == 0) {
        ++nz;
      } else if (col.rfind("y_", 0) == 0) {
        ++ny;
      } else {
        throw std::runtime_error("unexpected dataset column " + col);
      }
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) { continue; }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> r;
    while (std::getline(ss, cell, ',')) { r.push_back(std::stod(cell)); }
    if (static_cast<int>(r.size()) != nz + ny) { throw std::runtime_error("ragged dataset row"); }
    rows.push_back(std::move(r));
  }
  Dataset d;
  d.noise_std = noise_std;
  d.Z.resize(nz, rows.size());
  d.Y.resize(ny, rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    for (int i = 0; i < nz; ++i) { d.Z(i, k) = rows[k][i]; }
    for (int i = 0; i < ny; ++i) { d.Y(i, k) = rows[k][nz + i]; }
  }
  return d;
}

/// Independent per-channel GP posterior over z = (xi, x).
struct GPModel
{
  int l = 0;
  std::vector<SEKernel> kernels;
  Dataset data;
  std::vector<Eigen::LLT<MatrixXd>> chol;  // of K(Z,Z) + (sigma^2 + jitter) I
  std::vector<VectorXd> alpha;
  std::vector<double> jitter;

  int m() const { return static_cast<int>(kernels.size()); }
  int N() const { return data.size(); }
  int dim() const { return static_cast<int>(kernels.front().lengthscales.size()); }

  MatrixXd gram(int i) const
  {
    const int n = N();
    MatrixXd K(n, n);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b <= a; ++b) { K(a, b) = K(b, a) = kernels[i](data.Z.col(a), data.Z.col(b)); }
    }
    return K;
  }

  VectorXd cross(int i, const VectorXd & z) const
  {
    VectorXd k(N());
    for (int j = 0; j < N(); ++j) { k(j) = kernels[i](z, data.Z.col(j)); }
    return k;
  }

  /// Rows are dK(z, z_j)/dz.
  MatrixXd cross_grad(int i, const VectorXd & z) const
  {
    MatrixXd G(N(), dim());
    for (int j = 0; j < N(); ++j) { G.row(j) = kernels[i].grad(z, data.Z.col(j)).transpose(); }
    return G;
  }
};

inline GPModel fit(const std::vector<SEKernel> & kernels, const Dataset & data, int l)
{
  if (!(data.noise_std > 0)) { throw std::invalid_argument("fit: noise_std must be positive"); }
  GPModel g;
  g.l = l;
  g.kernels = kernels;
  g.data = data;
  const int n = data.size();
  for (int i = 0; i < g.m(); ++i) {
    if (n == 0) {
      g.chol.emplace_back();
      g.alpha.emplace_back();
      g.jitter.push_back(0.0);
      continue;
    }
    const MatrixXd K = g.gram(i);
    const double s2 = data.noise_std * data.noise_std;
    double jit = 0.0;
    Eigen::LLT<MatrixXd> llt;
    for (;;) {
      llt.compute(K + (s2 + jit) * MatrixXd::Identity(n, n));
      if (llt.info() == Eigen::Success) { break; }
      jit = jit == 0.0 ? 1e-10 : jit * 10.0;
      if (jit > 1e-6) { throw std::runtime_error("fit: Gram matrix not positive definite after jitter"); }
    }
    VectorXd a = llt.solve(VectorXd(data.Y.row(i).transpose()));
    g.chol.push_back(std::move(llt));
    g.alpha.push_back(std::move(a));
    g.jitter.push_back(jit);
  }
  return g;
}

struct Posterior
{
  VectorXd mean;
  VectorXd std;
};

namespace detail {
inline double clamp_variance(double v)
{
  if (v < -1e-10) { throw std::runtime_error("negative posterior variance"); }
  return std::max(v, 0.0);
}
}  // namespace detail

inline Posterior posterior(const GPModel & g, const VectorXd & z)
{
  Posterior p{VectorXd::Zero(g.m()), VectorXd::Zero(g.m())};
  for (int i = 0; i < g.m(); ++i) {
    const double kzz = g.kernels[i].signal_variance;
    if (g.N() == 0) {
      p.std(i) = std::sqrt(kzz);
      continue;
    }
    const VectorXd k = g.cross(i, z);
    p.mean(i) = k.dot(g.alpha[i]);
    const VectorXd v = g.chol[i].matrixL().solve(k);
    p.std(i) = std::sqrt(detail::clamp_variance(kzz - v.squaredNorm()));
  }
  return p;
}

/// Posterior mean only; skips the triangular solves of the variance.
inline VectorXd posterior_mean(const GPModel & g, const VectorXd & z)
{
  VectorXd mu = VectorXd::Zero(g.m());
  if (g.N() == 0) { return mu; }
  for (int i = 0; i < g.m(); ++i) { mu(i) = g.cross(i, z).dot(g.alpha[i]); }
  return mu;
}

struct DerivativePosterior
{
  MatrixXd mean_xi;  // m x l
  MatrixXd mean_x;   // m x n
  std::vector<MatrixXd> cov_xi;
  std::vector<MatrixXd> cov_x;
  MatrixXd std_xi;  // marginal standard deviations, m x l
  MatrixXd std_x;
};

inline DerivativePosterior derivative_posterior(const GPModel & g, const VectorXd & z)
{
  const int m = g.m(), d = g.dim(), l = g.l, n = d - l;
  DerivativePosterior r;
  r.mean_xi.setZero(m, l);
  r.mean_x.setZero(m, n);
  r.std_xi.setZero(m, l);
  r.std_x.setZero(m, n);
  for (int i = 0; i < m; ++i) {
    MatrixXd C = g.kernels[i].cross_hessian(z, z);
    if (g.N() > 0) {
      const MatrixXd G = g.cross_grad(i, z);
      const VectorXd mu = G.transpose() * g.alpha[i];
      r.mean_xi.row(i) = mu.head(l).transpose();
      r.mean_x.row(i) = mu.tail(n).transpose();
      const MatrixXd V = g.chol[i].matrixL().solve(G);
      C.noalias() -= V.transpose() * V;
    }
    r.cov_xi.push_back(C.topLeftCorner(l, l));
    r.cov_x.push_back(C.bottomRightCorner(n, n));
    for (int k = 0; k < l; ++k) { r.std_xi(i, k) = std::sqrt(detail::clamp_variance(C(k, k))); }
    for (int k = 0; k < n; ++k) { r.std_x(i, k) = std::sqrt(detail::clamp_variance(C(l + k, l + k))); }
  }
  return r;
}

/// Marginal standard deviations only; skips the off-diagonal covariance blocks.
inline void derivative_marginals(const GPModel & g, const VectorXd & z, MatrixXd & std_xi, MatrixXd & std_x)
{
  const int m = g.m(), d = g.dim(), l = g.l;
  std_xi.resize(m, l);
  std_x.resize(m, d - l);
  for (int i = 0; i < m; ++i) {
    VectorXd diag = g.kernels[i].lengthscales.array().square().inverse() * g.kernels[i].signal_variance;
    if (g.N() > 0) {
      const MatrixXd V = g.chol[i].matrixL().solve(g.cross_grad(i, z));
      diag -= V.colwise().squaredNorm().transpose();
    }
    for (int k = 0; k < d; ++k) {
      const double s = std::sqrt(detail::clamp_variance(diag(k)));
      if (k < l) {
        std_xi(i, k) = s;
      } else {
        std_x(i, k - l) = s;
      }
    }
  }
}

/// Log marginal likelihood summed over channels; used only for hyperparameter inspection.
inline double log_marginal_likelihood(const GPModel & g)
{
  double lml = 0.0;
  const int n = g.N();
  for (int i = 0; i < g.m(); ++i) {
    if (n == 0) { continue; }
    const VectorXd y = g.data.Y.row(i).transpose();
    lml += -0.5 * y.dot(g.alpha[i]) - g.chol[i].matrixL().toDenseMatrix().diagonal().array().log().sum()
         - 0.5 * n * std::log(2 * M_PI);
  }
  return lml;
}

/// One sample per stratum per dimension, strata shuffled independently; columns are samples.
inline MatrixXd latin_hypercube(const VectorXd & lower, const VectorXd & upper, int N, uint64_t seed)
{
  if (N < 1) { throw std::invalid_argument("latin_hypercube: N >= 1"); }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int d = static_cast<int>(lower.size());
  MatrixXd S(d, N);
  std::vector<int> perm(N);
  for (int i = 0; i < d; ++i) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int k = 0; k < N; ++k) {
      const double u = (perm[k] + U(rng)) / N;
      S(i, k) = lower(i) + u * (upper(i) - lower(i));
    }
  }
  return S;
}

/**
 * @brief Measurements y = B^+(x)(x' - f(x)) - u + noise with x' from the true plant.
 *
 * Inputs are stacked z = (xi, x) in the returned dataset.
 */
template <int N, int M, int L>
Dataset generate_measurements(const ControlAffineSystem<N, M> & sys,
  const UncertaintyField<N, M, L> & unc,
  const std::vector<Vec<N>> & states,
  const std::vector<Vec<M>> & controls,
  const std::vector<Vec<L>> & xis,
  double sigma,
  uint64_t seed)
{
  if (states.size() != controls.size() || states.size() != xis.size()) {
    throw std::invalid_argument("generate_measurements: length mismatch");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> G(0.0, 1.0);
  Dataset d;
  d.noise_std = sigma;
  const int K = static_cast<int>(states.size());
  d.Z.resize(L + N, K);
  d.Y.resize(M, K);
  for (int k = 0; k < K; ++k) {
    const auto & x = states[k];
    const Mat<N, M> Bx = sys.B(x);
    Eigen::JacobiSVD<Mat<N, M>> svd(Bx);
    if (svd.singularValues()(M - 1) < 1e-12 * std::max(1.0, svd.singularValues()(0))) {
      throw std::runtime_error("generate_measurements: rank-deficient B");
    }
    const Vec<N> xdot = eval_actual(sys, unc, xis[k], x, controls[k]);
    Vec<M> y = sys.pinv_B(x) * (xdot - sys.f(x)) - controls[k];
    for (int i = 0; i < M; ++i) { y(i) += sigma * G(rng); }
    d.Z.col(k) << xis[k], x;
    d.Y.col(k) = y;
  }
  return d;
}

}  // namespace rl1gp
