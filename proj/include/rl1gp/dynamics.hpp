#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace rl1gp {

template <int R>
using Vec = Eigen::Matrix<double, R, 1>;
template <int R, int C>
using Mat = Eigen::Matrix<double, R, C>;

/// Box X = {x : lower <= x <= upper}.
template <int N>
struct StateBox
{
  Vec<N> lower;
  Vec<N> upper;

  bool contains(const Vec<N> & x, double tol = 0.0) const
  {
    return ((x - lower).array() >= -tol).all() && ((upper - x).array() >= -tol).all();
  }

  /// Shrinks every coordinate by r; coordinates narrower than 2r collapse to the midpoint.
  StateBox shrunk(double r) const
  {
    StateBox b{lower.array() + r, upper.array() - r};
    for (int i = 0; i < lower.size(); ++i) {
      if (b.lower(i) > b.upper(i)) { b.lower(i) = b.upper(i) = 0.5 * (lower(i) + upper(i)); }
    }
    return b;
  }

  Vec<N> clamp(const Vec<N> & x) const { return x.cwiseMax(lower).cwiseMin(upper); }

  Vec<N> width() const { return upper - lower; }
};

/**
 * @brief Control-affine plant x' = f(x) + B(x) u.
 *
 * jac_B returns the n matrices dB/dx_i.
 */
template <int N, int M>
struct ControlAffineSystem
{
  static constexpr int n = N;
  static constexpr int m = M;
  using State = Vec<N>;
  using Input = Vec<M>;
  using InputMatrix = Mat<N, M>;

  std::function<State(const State &)> f;
  std::function<InputMatrix(const State &)> B;
  std::function<Mat<N, N>(const State &)> jac_f;
  std::function<std::array<InputMatrix, N>(const State &)> jac_B;
  bool constant_B = false;

  Mat<M, N> pinv_B(const State & x) const
  {
    const InputMatrix Bx = B(x);
    return (Bx.transpose() * Bx).ldlt().solve(Bx.transpose());
  }

  /// d(B^+)/dx_i via d(B^+) = -(B'B)^-1 (dB' B + B' dB) B^+ + (B'B)^-1 dB'.
  std::array<Mat<M, N>, N> jac_pinv_B(const State & x) const
  {
    std::array<Mat<M, N>, N> out;
    const InputMatrix Bx = B(x);
    const Mat<M, M> G = (Bx.transpose() * Bx).inverse();
    const Mat<M, N> P = G * Bx.transpose();
    const auto dB = jac_B(x);
    for (int i = 0; i < N; ++i) {
      out[i] = -G * (dB[i].transpose() * Bx + Bx.transpose() * dB[i]) * P + G * dB[i].transpose();
    }
    return out;
  }
};

/// Uncertainty h(xi, x) with its gradients; xi has dimension L.
template <int N, int M, int L>
struct UncertaintyField
{
  static constexpr int l = L;
  std::function<Vec<M>(const Vec<L> &, const Vec<N> &)> h;
  std::function<Mat<M, N>(const Vec<L> &, const Vec<N> &)> grad_x;
  std::function<Mat<M, L>(const Vec<L> &, const Vec<N> &)> grad_xi;
};

/// Conservative constants of the model assumptions.
struct ModelBounds
{
  double Delta_f = 0, Delta_fx = 0, Delta_B = 0, Delta_Bx = 0, Delta_bx = 0;
  double Delta_h = 0, Delta_hx = 0, Delta_hxi = 0;
  double Delta_Bpinv = 0, Delta_Bpinv_x = 0, Delta_ud = 0;
  std::vector<double> hessian_bounds_xi;  // one per input channel
  std::vector<double> hessian_bounds_x;
};

template <typename T>
using NoDeduce = std::type_identity_t<T>;

template <int N, int M>
Vec<N> eval_nominal(const ControlAffineSystem<N, M> & sys, const NoDeduce<Vec<N>> & x, const NoDeduce<Vec<M>> & u)
{
  return sys.f(x) + sys.B(x) * u;
}

template <int N, int M, int L>
Vec<N> eval_actual(const ControlAffineSystem<N, M> & sys,
  const UncertaintyField<N, M, L> & unc,
  const NoDeduce<Vec<L>> & xi,
  const NoDeduce<Vec<N>> & x,
  const NoDeduce<Vec<M>> & u)
{
  return sys.f(x) + sys.B(x) * (u + unc.h(xi, x));
}

template <int N, int M, int L, typename MeanFn>
Vec<N> eval_learned(
  const ControlAffineSystem<N, M> & sys,
  MeanFn && mean_fn,
  const NoDeduce<Vec<L>> & xi,
  const NoDeduce<Vec<N>> & x,
  const NoDeduce<Vec<M>> & u)
{
  const Vec<M> nu = mean_fn(xi, x);
  return sys.f(x) + sys.B(x) * (u + nu);
}

/// Classical fourth-order Runge-Kutta step for x' = deriv(t, x).
template <typename Deriv, typename X>
X rk4_step(Deriv && deriv, double t, const X & x, double dt)
{
  if (!(dt > 0)) { throw std::invalid_argument("rk4_step: dt must be positive"); }
  const X k1 = deriv(t, x);
  const X k2 = deriv(t + 0.5 * dt, X(x + 0.5 * dt * k1));
  const X k3 = deriv(t + 0.5 * dt, X(x + 0.5 * dt * k2));
  const X k4 = deriv(t + dt, X(x + dt * k3));
  const X out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) { throw std::domain_error("rk4_step: non-finite derivative"); }
  return out;
}

// ---------------------------------------------------------------------------
// Planar quadrotor, state (p_x, p_z, theta, v_x, v_z, theta_dot), input (u_F, u_M).

struct QuadrotorParams
{
  double gravity = 9.81;
  double position_limit = 25.0;
  double xi_min = 0.0, xi_max = 15.0;
  double Delta_h = 2.0, Delta_hx = 0.5, Delta_hxi = 0.5;
  std::vector<double> hessian_bounds_xi{0.5, 0.5};
  std::vector<double> hessian_bounds_x{0.5, 0.5};
};

struct Quadrotor
{
  static constexpr int n = 6, m = 2, l = 1;
  using System = ControlAffineSystem<6, 2>;
  using Field = UncertaintyField<6, 2, 1>;

  System sys;
  Field unc;
  StateBox<6> box;
  StateBox<1> xi_box;
  ModelBounds bounds;
  double gravity;
};

inline Quadrotor planar_quadrotor(const QuadrotorParams & p = {})
{
  const double g = p.gravity;
  Quadrotor q;
  q.gravity = g;

  // Velocity rows use the hover-trimmable form (gravity along body z at theta = 0).
  q.sys.f = [g](const Vec<6> & x) {
    const double c = std::cos(x(2)), s = std::sin(x(2));
    Vec<6> dx;
    dx << x(3) * c - x(4) * s, x(3) * s + x(4) * c, x(5), x(4) * x(5) - g * s, -x(3) * x(5) - g * c, 0.0;
    return dx;
  };
  q.sys.jac_f = [g](const Vec<6> & x) {
    const double c = std::cos(x(2)), s = std::sin(x(2));
    Mat<6, 6> J = Mat<6, 6>::Zero();
    J.row(0) << 0, 0, -x(3) * s - x(4) * c, c, -s, 0;
    J.row(1) << 0, 0, x(3) * c - x(4) * s, s, c, 0;
    J(2, 5) = 1.0;
    J.row(3) << 0, 0, -g * c, 0, x(5), x(4);
    J.row(4) << 0, 0, g * s, -x(5), 0, -x(3);
    return J;
  };
  q.sys.B = [](const Vec<6> &) {
    Mat<6, 2> B = Mat<6, 2>::Zero();
    B(4, 0) = 1.0;
    B(5, 1) = 1.0;
    return B;
  };
  q.sys.jac_B = [](const Vec<6> &) {
    std::array<Mat<6, 2>, 6> d;
    d.fill(Mat<6, 2>::Zero());
    return d;
  };
  q.sys.constant_B = true;

  q.unc.h = [](const Vec<1> & t, const Vec<6> & x) {
    return Vec<2>(-1.0 - 0.1 * (x(3) * x(3) + x(4) * x(4)), 0.3 * std::cos(t(0)));
  };
  q.unc.grad_x = [](const Vec<1> &, const Vec<6> & x) {
    Mat<2, 6> G = Mat<2, 6>::Zero();
    G(0, 3) = -0.2 * x(3);
    G(0, 4) = -0.2 * x(4);
    return G;
  };
  q.unc.grad_xi = [](const Vec<1> & t, const Vec<6> &) { return Mat<2, 1>(0.0, -0.3 * std::sin(t(0))); };

  const double P = p.position_limit;
  q.box.lower << -P, -P, -M_PI / 4, -2.0, -1.0, -M_PI / 3;
  q.box.upper << P, P, M_PI / 4, 2.0, 1.0, M_PI / 3;
  q.xi_box.lower << p.xi_min;
  q.xi_box.upper << p.xi_max;

  q.bounds.Delta_h = p.Delta_h;
  q.bounds.Delta_hx = p.Delta_hx;
  q.bounds.Delta_hxi = p.Delta_hxi;
  q.bounds.hessian_bounds_xi = p.hessian_bounds_xi;
  q.bounds.hessian_bounds_x = p.hessian_bounds_x;
  q.bounds.Delta_B = 1.0;
  q.bounds.Delta_Bpinv = 1.0;
  return q;
}

}  // namespace rl1gp
