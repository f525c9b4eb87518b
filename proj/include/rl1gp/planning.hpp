#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dynamics.hpp"

namespace rl1gp {

using Point2 = Eigen::Vector2d;

/// Convex polygon, vertices counter-clockwise.
struct Polygon
{
  std::vector<Point2> v;

  double area() const
  {
    double a = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto & p = v[i];
      const auto & q = v[(i + 1) % v.size()];
      a += p.x() * q.y() - q.x() * p.y();
    }
    return 0.5 * a;
  }

  /// Strictly convex and counter-clockwise (all edge cross products positive).
  bool convex_ccw() const
  {
    const std::size_t n = v.size();
    if (n < 3) { return false; }
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 e0 = v[(i + 1) % n] - v[i];
      const Point2 e1 = v[(i + 2) % n] - v[(i + 1) % n];
      if (e0.x() * e1.y() - e0.y() * e1.x() <= 0.0) { return false; }
    }
    return true;
  }

  /// Depth of p inside the polygon (min distance to the edge lines), or minus the outside distance.
  double signed_depth(const Point2 & p) const
  {
    const std::size_t n = v.size();
    double depth = std::numeric_limits<double>::infinity();
    bool inside = true;
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 e = v[(i + 1) % n] - v[i];
      const Point2 nrm = Point2(e.y(), -e.x()).normalized();  // outward for CCW
      const double d = -(p - v[i]).dot(nrm);
      if (d < 0) { inside = false; }
      depth = std::min(depth, d);
    }
    if (inside) { return depth; }
    double out = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 a = v[i], b = v[(i + 1) % n];
      const double s = std::clamp((p - a).dot(b - a) / (b - a).squaredNorm(), 0.0, 1.0);
      out = std::min(out, (p - (a + s * (b - a))).norm());
    }
    return -out;
  }
};

struct Environment
{
  std::vector<Polygon> obstacles;
  Point2 ws_lower{0.0, 0.0}, ws_upper{10.0, 10.0};
  Point2 start{1.0, 5.0}, goal{9.0, 5.0};

  void validate() const
  {
    for (const auto & o : obstacles) {
      if (!o.convex_ccw()) { throw std::invalid_argument("environment: obstacle not convex and counter-clockwise"); }
    }
    const auto in = [&](const Point2 & p) { return (p.array() >= ws_lower.array()).all() && (p.array() <= ws_upper.array()).all(); };
    if (!in(goal) || !in(start)) { throw std::invalid_argument("environment: start or goal outside workspace"); }
  }

  /// Largest penetration depth of p over all obstacles (<= 0 means free).
  double penetration(const Point2 & p) const
  {
    double d = -std::numeric_limits<double>::infinity();
    for (const auto & o : obstacles) { d = std::max(d, o.signed_depth(p)); }
    return d;
  }
};

/**
 * @brief Minkowski sum of each obstacle with a disc of radius rho; workspace shrunk by rho.
 *
 * Vertex arcs are replaced by polylines tangent to the circle with at most 2 pi / 16 turn per
 * segment, so the result contains the exact dilation and exceeds it by at most
 * rho (1 / cos(pi / 16) - 1).
 */
inline Environment tube_inflate(const Environment & env, double rho)
{
  if (rho < 0) { throw std::invalid_argument("tube_inflate: negative radius"); }
  Environment out = env;
  if (rho == 0) { return out; }
  out.ws_lower.array() += rho;
  out.ws_upper.array() -= rho;
  const double max_turn = 2.0 * M_PI / 16.0;
  for (auto & poly : out.obstacles) {
    const auto & v = poly.v;
    const std::size_t n = v.size();
    std::vector<Point2> r;
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 & p = v[i];
      const Point2 ein = p - v[(i + n - 1) % n];
      const Point2 eout = v[(i + 1) % n] - p;
      const double a0 = std::atan2(-ein.x(), ein.y());  // outward normal angle of incoming edge
      double a1 = std::atan2(-eout.x(), eout.y());
      while (a1 < a0) { a1 += 2.0 * M_PI; }
      const double turn = a1 - a0;
      const int k = std::max(1, static_cast<int>(std::ceil(turn / max_turn - 1e-12)));
      const double step = turn / k;
      const double R = rho / std::cos(0.5 * step);
      for (int j = 0; j < k; ++j) {
        const double a = a0 + (j + 0.5) * step;
        r.push_back(p + R * Point2(std::cos(a), std::sin(a)));
      }
    }
    poly.v = r;
  }
  return out;
}

template <int N, int M>
struct PlannedTrajectory
{
  double dt = 0.02;
  std::vector<double> t;
  std::vector<Vec<N>> x;
  std::vector<Vec<M>> u;  // u[k] held over [t_k, t_k+1); the last entry repeats
  std::string tag = "nominal";
  bool collision_flag = false;

  std::size_t size() const { return t.size(); }
};

/// Largest |x_{k+1} - Phi(x_k, u_k)| under RK4 of deriv(t, x, u).
template <int N, int M, typename Deriv>
double plan_defect(const PlannedTrajectory<N, M> & p, Deriv && deriv)
{
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    const Vec<M> u = p.u[k];
    const auto f = [&](double t, const Vec<N> & x) { return Vec<N>(deriv(t, x, u)); };
    worst = std::max(worst, (p.x[k + 1] - rk4_step(f, p.t[k], p.x[k], p.t[k + 1] - p.t[k])).norm());
  }
  return worst;
}

/**
 * @brief Resamples the plan at dt_fine with x_d re-integrated under the tagged dynamics.
 *
 * u_d is held over each knot interval by default, which keeps the fine plan on the coarse knots
 * up to the RK4 step difference. linear_u interpolates u_d instead; on open-loop unstable plants
 * the re-integrated x_d then drifts away from the knots.
 */
template <int N, int M, typename Deriv>
PlannedTrajectory<N, M> densify(const PlannedTrajectory<N, M> & p, Deriv && deriv, double dt_fine, bool linear_u = false)
{
  if (p.size() < 2) { throw std::invalid_argument("densify: plan too short"); }
  const int ratio = static_cast<int>(std::lround(p.dt / dt_fine));
  if (ratio < 1 || std::abs(ratio * dt_fine - p.dt) > 1e-9 * p.dt) { throw std::invalid_argument("densify: dt_plan must be a multiple of dt_fine"); }
  PlannedTrajectory<N, M> q;
  q.dt = dt_fine;
  q.tag = p.tag;
  q.collision_flag = p.collision_flag;
  Vec<N> x = p.x.front();
  const std::size_t K = p.size() - 1;
  for (std::size_t k = 0; k < K; ++k) {
    for (int j = 0; j < ratio; ++j) {
      const double s = linear_u ? static_cast<double>(j) / ratio : 0.0;
      const double t = p.t[k] + j * dt_fine;
      const Vec<M> u = (1.0 - s) * p.u[k] + s * p.u[k + 1];
      q.t.push_back(t);
      q.x.push_back(x);
      q.u.push_back(u);
      const auto f = [&](double tt, const Vec<N> & xx) { return Vec<N>(deriv(tt, xx, u)); };
      x = rk4_step(f, t, x, dt_fine);
    }
  }
  q.t.push_back(p.t.back());
  q.x.push_back(x);
  q.u.push_back(p.u.back());
  return q;
}

template <int N, int M>
void write_plan_csv(const PlannedTrajectory<N, M> & p, const std::string & path)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path); }
  os << "t";
  for (int i = 0; i < N; ++i) { os << ",x_d" << i; }
  for (int j = 0; j < M; ++j) { os << ",u_d" << j; }
  os << "\n" << std::setprecision(17);
  for (std::size_t k = 0; k < p.size(); ++k) {
    os << p.t[k];
    for (int i = 0; i < N; ++i) { os << "," << p.x[k](i); }
    for (int j = 0; j < M; ++j) { os << "," << p.u[k](j); }
    os << "\n";
  }
}

template <int N, int M>
PlannedTrajectory<N, M> read_plan_csv(const std::string & path)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot read " + path); }
  std::string line;
  std::getline(is, line);
  PlannedTrajectory<N, M> p;
  while (std::getline(is, line)) {
    if (line.empty()) { continue; }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) { v.push_back(std::stod(cell)); }
    if (static_cast<int>(v.size()) != 1 + N + M) { throw std::runtime_error("plan csv: bad row width in " + path); }
    p.t.push_back(v[0]);
    p.x.push_back(Eigen::Map<const Vec<N>>(v.data() + 1));
    p.u.push_back(Eigen::Map<const Vec<M>>(v.data() + 1 + N));
  }
  if (p.size() >= 2) { p.dt = p.t[1] - p.t[0]; }
  return p;
}

// ---------------------------------------------------------------------------
// MPPI

struct MPPIConfig
{
  int rollouts = 500;
  int horizon = 100;  // steps of dt
  double dt = 0.02;
  double temperature = 1.0;
  double collision_penalty = 1e6;  // per unit depth
  double box_penalty = 1e6;        // per unit excess of the shrunk state box
  int max_steps = 750;
  int smoothing_half_width = 0;
  int noise_knot_steps = 1;  // noise drawn every this many steps, linear in between
  double goal_tolerance = 0.2;     // position, with speed below the same value
  uint64_t seed = 0;
};

struct StageCost
{
  Eigen::VectorXd Q, Qf, R;  // diagonals
  Eigen::VectorXd x_goal, u_ref;

  double stage(const Eigen::VectorXd & x, const Eigen::VectorXd & u) const
  {
    return ((x - x_goal).array().square() * Q.array()).sum() + ((u - u_ref).array().square() * R.array()).sum();
  }
  double terminal(const Eigen::VectorXd & x) const { return ((x - x_goal).array().square() * Qf.array()).sum(); }
};

namespace detail {

inline uint64_t splitmix64(uint64_t z)
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Seed of the noise stream for one rollout of one replan.
inline uint64_t rollout_seed(uint64_t seed, uint64_t replan, uint64_t rollout)
{
  return detail::splitmix64(detail::splitmix64(detail::splitmix64(seed) ^ replan) ^ rollout);
}

/// Penalty terms shared by MPPI and the post-check: obstacle depth and shrunk-box excess.
template <int N>
double constraint_excess(const Environment & env, const StateBox<N> & box, const Vec<N> & x, double & depth)
{
  depth = std::max(0.0, env.penetration(Point2(x(0), x(1))));
  return (x - box.upper).cwiseMax(0.0).sum() + (box.lower - x).cwiseMax(0.0).sum();
}

struct MPPIReport
{
  int replans = 0;
  bool reached_goal = false;
  bool all_colliding = false;  // some replan had every rollout in collision
  double min_clearance = std::numeric_limits<double>::infinity();
};

/**
 * @brief Receding-horizon MPPI from x0 until the goal region or max_steps.
 *
 * Each replan samples rollouts around the current control sequence, weights them by
 * exp(-(S - S_min) / temperature), applies the first control to deriv over one dt and shifts.
 * deriv(t, x, u) is the planning model; env is already inflated and box already shrunk.
 */
template <int N, int M, typename Deriv>
PlannedTrajectory<N, M> mppi_plan(Deriv && deriv,
  const Environment & env,
  const StateBox<N> & box,
  const Vec<N> & x0,
  const StageCost & cost,
  const Vec<M> & noise_std,
  const MPPIConfig & cfg,
  MPPIReport * report = nullptr)
{
  if (cfg.rollouts < 1 || cfg.horizon < 1) { throw std::invalid_argument("mppi_plan: rollouts and horizon must be positive"); }
  const int H = cfg.horizon;
  const Vec<M> u_ref = cost.u_ref;
  std::vector<Vec<M>> U(H, u_ref);
  std::vector<std::vector<Vec<M>>> eps(cfg.rollouts, std::vector<Vec<M>>(H));
  std::vector<double> S(cfg.rollouts);
  const Vec<M> inv_var = noise_std.array().square().inverse();

  PlannedTrajectory<N, M> plan;
  plan.dt = cfg.dt;
  plan.tag = "nominal";
  MPPIReport rep;
  Vec<N> x = x0;
  double t = 0.0;
  const auto step = [&](double tt, const Vec<N> & xx, const Vec<M> & u) {
    const auto f = [&](double s, const Vec<N> & y) { return Vec<N>(deriv(s, y, u)); };
    return rk4_step(f, tt, xx, cfg.dt);
  };

  for (int it = 0; it < cfg.max_steps; ++it) {
    bool any_free = false;
    for (int r = 0; r < cfg.rollouts; ++r) {
      std::mt19937_64 rng(rollout_seed(cfg.seed, it, r));
      std::normal_distribution<double> G(0.0, 1.0);
      Vec<N> y = x;
      double s = 0.0;
      bool hit = false;
      const int B = std::max(1, cfg.noise_knot_steps);
      std::vector<Vec<M>> knots(H / B + 2);
      for (auto & kn : knots) {
        for (int j = 0; j < M; ++j) { kn(j) = noise_std(j) * G(rng); }
      }
      for (int k = 0; k < H; ++k) {
        const double a = static_cast<double>(k % B) / B;
        eps[r][k] = (1.0 - a) * knots[k / B] + a * knots[k / B + 1];
        const Vec<M> u = U[k] + eps[r][k];
        y = step(t + k * cfg.dt, y, u);
        double depth = 0.0;
        const double excess = constraint_excess<N>(env, box, y, depth);
        if (depth > 0) { hit = true; }
        s += cost.stage(y, u) + cfg.collision_penalty * depth + cfg.box_penalty * excess +
             cfg.temperature * (U[k] - u_ref).cwiseProduct(inv_var).dot(eps[r][k]);
        if (!y.allFinite()) {
          s = std::numeric_limits<double>::infinity();
          break;
        }
      }
      S[r] = s + cost.terminal(y);
      any_free = any_free || !hit;
    }
    if (!any_free) { rep.all_colliding = true; }
    const double smin = *std::min_element(S.begin(), S.end());
    double wsum = 0.0;
    std::vector<Vec<M>> dU(H, Vec<M>::Zero());
    for (int r = 0; r < cfg.rollouts; ++r) {
      const double w = std::isfinite(S[r]) ? std::exp(-(S[r] - smin) / cfg.temperature) : 0.0;
      wsum += w;
      for (int k = 0; k < H; ++k) { dU[k] += w * eps[r][k]; }
    }
    for (int k = 0; k < H; ++k) { dU[k] /= wsum; }
    if (cfg.smoothing_half_width > 0) {
      // centered moving average of the update, window shrinking at the ends
      const int w = cfg.smoothing_half_width;
      std::vector<Vec<M>> sm(H, Vec<M>::Zero());
      for (int k = 0; k < H; ++k) {
        const int a = std::max(0, k - w), b = std::min(H - 1, k + w);
        for (int i = a; i <= b; ++i) { sm[k] += dU[i]; }
        sm[k] /= (b - a + 1);
      }
      dU.swap(sm);
    }
    for (int k = 0; k < H; ++k) { U[k] += dU[k]; }

    plan.t.push_back(t);
    plan.x.push_back(x);
    plan.u.push_back(U[0]);
    x = step(t, x, U[0]);
    t += cfg.dt;
    ++rep.replans;
    rep.min_clearance = std::min(rep.min_clearance, -env.penetration(Point2(x(0), x(1))));
    std::rotate(U.begin(), U.begin() + 1, U.end());
    U.back() = u_ref;

    const Vec<N> e = x - Vec<N>(cost.x_goal);
    if (e.template head<2>().norm() < cfg.goal_tolerance && x.template segment<2>(3).norm() < cfg.goal_tolerance) {
      rep.reached_goal = true;
      break;
    }
  }
  plan.t.push_back(t);
  plan.x.push_back(x);
  plan.u.push_back(plan.u.back());
  plan.collision_flag = rep.all_colliding;
  if (report) { *report = rep; }
  return plan;
}

/// Smallest clearance of the plan positions from the (inflated) obstacles.
template <int N, int M>
double plan_clearance(const PlannedTrajectory<N, M> & p, const Environment & env)
{
  double c = std::numeric_limits<double>::infinity();
  for (const auto & x : p.x) { c = std::min(c, -env.penetration(Point2(x(0), x(1)))); }
  return c;
}

// ---------------------------------------------------------------------------
// iLQR

struct ILQRConfig
{
  double T = 10.0;
  double dt = 0.02;
  int max_iterations = 100;
  double tolerance = 1e-6;   // on the relative cost decrease
  double box_weight = 1e4;   // quadratic penalty outside the state box
  double fd_step = 1e-6;
};

struct ILQRReport
{
  int iterations = 0;
  double cost = 0.0;
  bool converged = false;
  bool diverged = false;
};

/**
 * @brief Iterative LQR on the RK4 discretization of deriv(t, x, u).
 *
 * Jacobians by central differences of the discrete map; Levenberg-style regularization of Quu;
 * backtracking line search on the feedforward. Box constraints enter as quadratic penalties.
 */
template <int N, int M, typename Deriv>
PlannedTrajectory<N, M> trajopt_lqr(Deriv && deriv,
  const Vec<N> & x0,
  const StageCost & cost,
  const StateBox<N> * box,
  const ILQRConfig & cfg,
  ILQRReport * report = nullptr,
  const std::vector<Vec<M>> * u_init = nullptr)
{
  if (!(cfg.T > 0) || !(cfg.dt > 0)) { throw std::invalid_argument("trajopt_lqr: T and dt must be positive"); }
  const int K = static_cast<int>(std::lround(cfg.T / cfg.dt));
  const Vec<N> Qd = cost.Q, Qfd = cost.Qf, xg = cost.x_goal;
  const Vec<M> Rd = cost.R, ur = cost.u_ref;

  const auto phi = [&](int k, const Vec<N> & x, const Vec<M> & u) {
    const auto f = [&](double s, const Vec<N> & y) { return Vec<N>(deriv(s, y, u)); };
    return rk4_step(f, k * cfg.dt, x, cfg.dt);
  };
  const auto box_cost = [&](const Vec<N> & x, Vec<N> * g, Vec<N> * h) {
    if (g) { g->setZero(); }
    if (h) { h->setZero(); }
    if (!box) { return 0.0; }
    const Vec<N> hi = (x - box->upper).cwiseMax(0.0), lo = (box->lower - x).cwiseMax(0.0);
    if (g) { *g = 2.0 * cfg.box_weight * (hi - lo); }
    if (h) {
      for (int i = 0; i < N; ++i) { (*h)(i) = (hi(i) > 0 || lo(i) > 0) ? 2.0 * cfg.box_weight : 0.0; }
    }
    return cfg.box_weight * (hi.squaredNorm() + lo.squaredNorm());
  };
  const auto total = [&](const std::vector<Vec<N>> & X, const std::vector<Vec<M>> & U) {
    double J = 0.0;
    for (int k = 0; k < K; ++k) {
      J += ((X[k] - xg).array().square() * Qd.array()).sum() + ((U[k] - ur).array().square() * Rd.array()).sum() +
           box_cost(X[k], nullptr, nullptr);
    }
    return J + ((X[K] - xg).array().square() * Qfd.array()).sum() + box_cost(X[K], nullptr, nullptr);
  };

  std::vector<Vec<M>> U = u_init && static_cast<int>(u_init->size()) >= K ? std::vector<Vec<M>>(u_init->begin(), u_init->begin() + K)
                                                                            : std::vector<Vec<M>>(K, ur);
  std::vector<Vec<N>> X(K + 1);
  X[0] = x0;
  for (int k = 0; k < K; ++k) { X[k + 1] = phi(k, X[k], U[k]); }
  double J = total(X, U);

  ILQRReport rep;
  std::vector<Mat<N, N>> A(K);
  std::vector<Mat<N, M>> B(K);
  std::vector<Vec<M>> kff(K);
  std::vector<Mat<M, N>> Kfb(K);
  double mu = 1e-6;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    rep.iterations = it + 1;
    for (int k = 0; k < K; ++k) {
      const double h = cfg.fd_step;
      for (int i = 0; i < N; ++i) {
        Vec<N> d = Vec<N>::Zero();
        d(i) = h;
        A[k].col(i) = (phi(k, X[k] + d, U[k]) - phi(k, X[k] - d, U[k])) / (2 * h);
      }
      for (int j = 0; j < M; ++j) {
        Vec<M> d = Vec<M>::Zero();
        d(j) = h;
        B[k].col(j) = (phi(k, X[k], U[k] + d) - phi(k, X[k], U[k] - d)) / (2 * h);
      }
    }
    bool ok = false;
    double dV1 = 0, dV2 = 0;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      Vec<N> gb, hb;
      box_cost(X[K], &gb, &hb);
      Vec<N> Vx = 2.0 * Qfd.cwiseProduct(X[K] - xg) + gb;
      Mat<N, N> Vxx = Mat<N, N>(Vec<N>(2.0 * Qfd + hb).asDiagonal());
      ok = true;
      dV1 = dV2 = 0;
      for (int k = K - 1; k >= 0; --k) {
        box_cost(X[k], &gb, &hb);
        const Vec<N> lx = 2.0 * Qd.cwiseProduct(X[k] - xg) + gb;
        const Vec<M> lu = 2.0 * Rd.cwiseProduct(U[k] - ur);
        const Vec<N> Qx = lx + A[k].transpose() * Vx;
        const Vec<M> Qu = lu + B[k].transpose() * Vx;
        const Mat<N, N> Qxx = Mat<N, N>(Vec<N>(2.0 * Qd + hb).asDiagonal()) + A[k].transpose() * Vxx * A[k];
        const Mat<M, M> Quu = Mat<M, M>(Vec<M>(2.0 * Rd).asDiagonal()) + B[k].transpose() * Vxx * B[k];
        const Mat<M, N> Qux = B[k].transpose() * Vxx * A[k];
        const Mat<M, M> Qreg = Quu + mu * Mat<M, M>::Identity();
        const Eigen::LLT<Mat<M, M>> llt(Qreg);
        if (llt.info() != Eigen::Success) {
          ok = false;
          mu *= 10;
          break;
        }
        kff[k] = -llt.solve(Qu);
        Kfb[k] = -llt.solve(Qux);
        dV1 += kff[k].dot(Qu);
        dV2 += 0.5 * kff[k].dot(Quu * kff[k]);
        Vx = Qx + Kfb[k].transpose() * Quu * kff[k] + Kfb[k].transpose() * Qu + Qux.transpose() * kff[k];
        Vxx = Qxx + Kfb[k].transpose() * Quu * Kfb[k] + Kfb[k].transpose() * Qux + Qux.transpose() * Kfb[k];
        Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
      }
    }
    if (!ok) {
      rep.diverged = true;
      break;
    }
    bool accepted = false;
    for (double a = 1.0; a > 1e-6; a *= 0.5) {
      std::vector<Vec<N>> Xn(K + 1);
      std::vector<Vec<M>> Un(K);
      Xn[0] = x0;
      bool finite = true;
      for (int k = 0; k < K && finite; ++k) {
        Un[k] = U[k] + a * kff[k] + Kfb[k] * (Xn[k] - X[k]);
        try {
          Xn[k + 1] = phi(k, Xn[k], Un[k]);
        } catch (const std::domain_error &) {
          finite = false;
        }
      }
      if (!finite) { continue; }
      const double Jn = total(Xn, Un);
      if (Jn < J) {
        const double rel = (J - Jn) / std::max(1.0, std::abs(J));
        X = std::move(Xn);
        U = std::move(Un);
        J = Jn;
        accepted = true;
        mu = std::max(1e-9, mu * 0.5);
        if (rel < cfg.tolerance) { rep.converged = true; }
        break;
      }
    }
    if (!accepted) {
      // no descent along the feedforward: treated as converged if the expected decrease is tiny
      if (std::abs(dV1 + dV2) < cfg.tolerance * std::max(1.0, std::abs(J))) {
        rep.converged = true;
      } else {
        mu *= 10;
        if (mu > 1e10) {
          rep.diverged = true;
          break;
        }
        continue;
      }
    }
    if (rep.converged) { break; }
  }
  rep.cost = J;
  if (report) { *report = rep; }

  PlannedTrajectory<N, M> plan;
  plan.dt = cfg.dt;
  for (int k = 0; k <= K; ++k) {
    plan.t.push_back(k * cfg.dt);
    plan.x.push_back(X[k]);
    plan.u.push_back(k < K ? U[k] : U[K - 1]);
  }
  return plan;
}

}  // namespace rl1gp
