#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bounds.hpp"
#include "certificate.hpp"
#include "gp.hpp"
#include "io.hpp"
#include "l1.hpp"
#include "planning.hpp"

namespace rl1gp {

namespace fs = std::filesystem;

/// Maps to exit code 4.
struct ConfigError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitInfeasible = 2, kExitTubeViolation = 3, kExitConfig = 4 };

struct EpisodeSpec
{
  int N = 0;
  double omega = 90.0, Gamma = 7e10;
  double rho_a = 0.5, eps = 0.1;
};

struct GPSettings
{
  std::vector<SEKernel> kernels;
  double noise_std = 0.01;
  double delta = 0.1, tau = 1e-8;
  std::vector<int> grid_resolution{25, 2, 2, 2, 15, 15, 2};
  int refine_factor = 10;
};

struct PlannerSettings
{
  std::string kind = "mppi";  // or "ilqr"
  MPPIConfig mppi;
  ILQRConfig ilqr;
  double noise_fraction = 0.2;
  std::optional<Vec<2>> noise_std;  // overrides noise_fraction per channel
  Eigen::VectorXd Q, Qf, R;
};

struct SimSettings
{
  double dt = 0.002;
  int geodesic_nodes = 11;
  int tube_samples = 256;
  int polyline_stride = 25;
  Vec<6> initial_offset = Vec<6>::Zero();
};

struct CampaignConfig
{
  QuadrotorParams plant;
  std::string metric_path;
  GPSettings gp;
  Mat<6, 6> A_m = -10.0 * Mat<6, 6>::Identity();
  Mat<6, 6> Q_l1 = Mat<6, 6>::Identity();
  double eps_proj = 0.1;
  std::vector<EpisodeSpec> episodes;
  Environment scene;
  std::optional<Environment> full_scene;
  int full_max_steps = 1500;
  PlannerSettings planner;
  SimSettings sim;
  uint64_t seed = 0;
  std::string out_dir = "out";

  void validate() const
  {
    const auto need = [](bool ok, const std::string & what) {
      if (!ok) { throw ConfigError("config: " + what); }
    };
    need(gp.delta > 0 && gp.delta < 1, "gp.delta must be in (0, 1)");
    need(gp.tau > 0, "gp.tau must be positive");
    need(gp.noise_std > 0, "gp.noise_std must be positive");
    need(gp.kernels.size() == 2, "gp.kernels needs one kernel per input channel (2)");
    for (const auto & k : gp.kernels) {
      need(k.signal_variance > 0 && k.lengthscales.size() == 7 && (k.lengthscales.array() > 0).all(),
        "gp.kernels: positive signal_variance and 7 positive lengthscales (t, x)");
    }
    need(gp.grid_resolution.size() == 7, "gp.grid_resolution needs 7 entries");
    need(!episodes.empty(), "episodes must not be empty");
    int prev = 0;
    for (const auto & e : episodes) {
      need(e.N >= prev, "episode dataset sizes must be nondecreasing");
      need(e.omega > 0 && e.Gamma > 0 && e.rho_a > 0 && e.eps > 0, "episode omega, Gamma, rho_a, eps must be positive");
      prev = e.N;
    }
    need(planner.kind == "mppi" || planner.kind == "ilqr", "planner.kind must be mppi or ilqr");
    need(planner.Q.size() == 6 && planner.Qf.size() == 6 && planner.R.size() == 2, "planner Q, Qf (6) and R (2) diagonals");
    need(planner.noise_fraction > 0, "planner.noise_fraction must be positive");
    need(planner.mppi.smoothing_half_width >= 0 && planner.mppi.noise_knot_steps >= 1,
      "planner.mppi smoothing_half_width >= 0 and noise_knot_steps >= 1");
    need(sim.dt > 0 && sim.geodesic_nodes >= 3 && sim.tube_samples >= 1, "simulation settings");
    const double ratio = planner.mppi.dt / sim.dt;
    need(std::abs(ratio - std::round(ratio)) < 1e-9 && planner.ilqr.dt == planner.mppi.dt,
      "planner dt must be a multiple of the control dt (and equal for mppi and ilqr)");
    need(eps_proj > 0, "l1.eps_proj must be positive");
    need(Eigen::EigenSolver<Mat<6, 6>>(A_m).eigenvalues().real().maxCoeff() < 0, "l1.A_m must be Hurwitz");
    try {
      scene.validate();
      if (full_scene) { full_scene->validate(); }
    } catch (const std::invalid_argument & e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

namespace detail {

inline Eigen::VectorXd vec_from_json(const json & j)
{
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Point2 point_from_json(const json & j)
{
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) { throw ConfigError("config: points are [x, z] pairs"); }
  return Point2(v[0], v[1]);
}

inline Environment scene_from_json(const json & j)
{
  Environment env;
  const auto & ws = j.at("workspace");
  env.ws_lower = point_from_json(ws.at(0));
  env.ws_upper = point_from_json(ws.at(1));
  env.start = point_from_json(j.at("start"));
  env.goal = point_from_json(j.at("goal"));
  for (const auto & poly : j.at("obstacles")) {
    Polygon p;
    for (const auto & v : poly) { p.v.push_back(point_from_json(v)); }
    env.obstacles.push_back(p);
  }
  return env;
}

inline json scene_to_json(const Environment & env)
{
  json obs = json::array();
  for (const auto & o : env.obstacles) {
    json poly = json::array();
    for (const auto & v : o.v) { poly.push_back({v.x(), v.y()}); }
    obs.push_back(poly);
  }
  return {{"workspace", {{env.ws_lower.x(), env.ws_lower.y()}, {env.ws_upper.x(), env.ws_upper.y()}}},
    {"start", {env.start.x(), env.start.y()}}, {"goal", {env.goal.x(), env.goal.y()}}, {"obstacles", obs}};
}

inline Mat<6, 6> diag_or_matrix(const json & j)
{
  if (j.is_number()) { return j.get<double>() * Mat<6, 6>::Identity(); }
  const auto v = vec_from_json(j);
  if (v.size() != 6) { throw ConfigError("config: 6x6 diagonals need 6 entries"); }
  return v.asDiagonal();
}

}  // namespace detail

/// Relative file names inside the config resolve against base_dir.
inline CampaignConfig config_from_json(const json & j, const std::string & base_dir)
{
  CampaignConfig c;
  try {
    const auto & pl = j.at("plant");
    c.plant.gravity = pl.value("gravity", 9.81);
    c.plant.position_limit = pl.value("position_limit", 25.0);
    if (pl.contains("xi_range")) {
      const auto r = pl.at("xi_range").get<std::vector<double>>();
      c.plant.xi_min = r.at(0);
      c.plant.xi_max = r.at(1);
    }
    if (pl.contains("triple")) {
      const auto t = pl.at("triple").get<std::vector<double>>();
      c.plant.Delta_h = t.at(0);
      c.plant.Delta_hx = t.at(1);
      c.plant.Delta_hxi = t.at(2);
    }
    c.plant.hessian_bounds_xi = pl.value("hessian_bounds_xi", c.plant.hessian_bounds_xi);
    c.plant.hessian_bounds_x = pl.value("hessian_bounds_x", c.plant.hessian_bounds_x);

    fs::path mp = j.at("metric").get<std::string>();
    if (mp.is_relative()) { mp = fs::path(base_dir) / mp; }
    c.metric_path = mp.string();

    const auto & g = j.at("gp");
    c.gp.noise_std = g.value("noise_std", 0.01);
    c.gp.delta = g.value("delta", 0.1);
    c.gp.tau = g.value("tau", 1e-8);
    c.gp.grid_resolution = g.value("grid_resolution", c.gp.grid_resolution);
    c.gp.refine_factor = g.value("refine_factor", 10);
    for (const auto & k : g.at("kernels")) {
      c.gp.kernels.push_back(SEKernel{k.at("signal_variance").get<double>(), detail::vec_from_json(k.at("lengthscales"))});
    }

    if (j.contains("l1")) {
      const auto & l = j.at("l1");
      if (l.contains("A_m")) { c.A_m = detail::diag_or_matrix(l.at("A_m")); }
      if (l.contains("Q")) { c.Q_l1 = detail::diag_or_matrix(l.at("Q")); }
      c.eps_proj = l.value("eps_proj", 0.1);
    }

    for (const auto & e : j.at("episodes")) {
      EpisodeSpec s;
      s.N = e.at("N").get<int>();
      s.omega = e.at("omega").get<double>();
      s.Gamma = e.at("Gamma").get<double>();
      s.rho_a = e.at("rho_a").get<double>();
      s.eps = e.at("eps").get<double>();
      c.episodes.push_back(s);
    }

    c.scene = detail::scene_from_json(j.at("scene"));
    if (j.contains("full_scene")) {
      c.full_scene = detail::scene_from_json(j.at("full_scene"));
      c.full_max_steps = j.at("full_scene").value("max_steps", 1500);
    }

    const auto & p = j.at("planner");
    c.planner.kind = p.value("kind", std::string("mppi"));
    c.planner.noise_fraction = p.value("noise_fraction", 0.2);
    if (p.contains("noise_std")) {
      const auto v = detail::vec_from_json(p.at("noise_std"));
      if (v.size() != 2 || !(v.array() > 0).all()) { throw ConfigError("config: planner.noise_std needs 2 positive entries"); }
      c.planner.noise_std = Vec<2>(v);
    }
    c.planner.Q = detail::vec_from_json(p.at("Q"));
    c.planner.Qf = detail::vec_from_json(p.at("Qf"));
    c.planner.R = detail::vec_from_json(p.at("R"));
    auto & m = c.planner.mppi;
    if (p.contains("mppi")) {
      const auto & mj = p.at("mppi");
      m.rollouts = mj.value("rollouts", m.rollouts);
      m.horizon = mj.value("horizon", m.horizon);
      m.dt = mj.value("dt", m.dt);
      m.temperature = mj.value("temperature", m.temperature);
      m.collision_penalty = mj.value("collision_penalty", m.collision_penalty);
      m.box_penalty = mj.value("box_penalty", m.box_penalty);
      m.max_steps = mj.value("max_steps", m.max_steps);
      m.goal_tolerance = mj.value("goal_tolerance", m.goal_tolerance);
      m.smoothing_half_width = mj.value("smoothing_half_width", m.smoothing_half_width);
      m.noise_knot_steps = mj.value("noise_knot_steps", m.noise_knot_steps);
    }
    auto & il = c.planner.ilqr;
    il.dt = m.dt;
    if (p.contains("ilqr")) {
      const auto & ij = p.at("ilqr");
      il.T = ij.value("T", il.T);
      il.dt = ij.value("dt", il.dt);
      il.max_iterations = ij.value("max_iterations", il.max_iterations);
      il.tolerance = ij.value("tolerance", il.tolerance);
      il.box_weight = ij.value("box_weight", il.box_weight);
    }

    if (j.contains("simulation")) {
      const auto & s = j.at("simulation");
      c.sim.dt = s.value("dt", c.sim.dt);
      c.sim.geodesic_nodes = s.value("geodesic_nodes", c.sim.geodesic_nodes);
      c.sim.tube_samples = s.value("tube_samples", c.sim.tube_samples);
      c.sim.polyline_stride = s.value("polyline_stride", c.sim.polyline_stride);
      if (s.contains("initial_offset")) {
        const auto v = detail::vec_from_json(s.at("initial_offset"));
        if (v.size() != 6) { throw ConfigError("config: simulation.initial_offset needs 6 entries"); }
        c.sim.initial_offset = v;
      }
    }
    c.seed = j.value("seed", uint64_t{0});
    c.out_dir = j.value("output_dir", std::string("out"));
  } catch (const json::exception & e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline CampaignConfig load_config(const std::string & path)
{
  json j;
  try {
    j = read_json(path);
  } catch (const std::exception & e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path().string());
}

/// Everything an episode needs that is fixed for the campaign.
struct Context
{
  CampaignConfig cfg;
  Quadrotor quad;
  ContractionMetric<6> metric;
  Environment env;
  bool full = false;

  /// Plant box with the position rows replaced by the workspace.
  StateBox<6> workspace_box() const
  {
    StateBox<6> b = quad.box;
    b.lower.head<2>() = env.ws_lower;
    b.upper.head<2>() = env.ws_upper;
    return b;
  }

  Eigen::VectorXd z_lower() const { return (Eigen::VectorXd(7) << quad.xi_box.lower, quad.box.lower).finished(); }
  Eigen::VectorXd z_upper() const { return (Eigen::VectorXd(7) << quad.xi_box.upper, quad.box.upper).finished(); }

  Vec<6> start_state() const
  {
    Vec<6> x = Vec<6>::Zero();
    x.head<2>() = env.start;
    return x;
  }

  StageCost stage_cost() const
  {
    StageCost c;
    c.Q = cfg.planner.Q;
    c.Qf = cfg.planner.Qf;
    c.R = cfg.planner.R;
    c.x_goal = Eigen::VectorXd::Zero(6);
    c.x_goal.head(2) = env.goal;
    c.u_ref = Eigen::Vector2d(quad.gravity, 0.0);
    return c;
  }
};

/// Context holds the metric and plant by value; pass it by reference, it must outlive controllers.
inline std::unique_ptr<Context> make_context(const CampaignConfig & cfg, bool full = false)
{
  auto ctx = std::make_unique<Context>();
  ctx->cfg = cfg;
  ctx->quad = planar_quadrotor(cfg.plant);
  try {
    ctx->metric = load_metric<6>(cfg.metric_path);
  } catch (const std::exception & e) {
    throw ConfigError(std::string("config: metric: ") + e.what());
  }
  ctx->full = full;
  if (full) {
    if (!cfg.full_scene) { throw ConfigError("config: --full needs a full_scene entry"); }
    ctx->env = *cfg.full_scene;
    ctx->cfg.planner.mppi.max_steps = cfg.full_max_steps;
  } else {
    ctx->env = cfg.scene;
  }
  return ctx;
}

/// nu_N(t, x), or zero without data.
struct LearnedMean
{
  std::shared_ptr<const GPModel> gp;

  bool learned() const { return gp && gp->N() > 0; }

  Vec<2> operator()(double t, const Vec<6> & x) const
  {
    if (!learned()) { return Vec<2>::Zero(); }
    Eigen::VectorXd z(7);
    z << t, x;
    return posterior_mean(*gp, z);
  }

  /// f(x) + B(x) (u + nu(t, x)).
  Vec<6> dynamics(const Quadrotor & q, double t, const Vec<6> & x, const Vec<2> & u) const
  {
    return q.sys.f(x) + q.sys.B(x) * (u + (*this)(t, x));
  }
};

/**
 * @brief Latin-hypercube states and times over X x X_xi with noisy measurements of h.
 *
 * The design uses rng_seed, the measurement noise rng_seed + 1. The input u cancels in the
 * measurement, the hover trim is used.
 */
inline Dataset collect_data(const Context & ctx, int n_new, uint64_t rng_seed)
{
  if (n_new < 1) { throw std::invalid_argument("collect_data: n_new must be positive"); }
  const Eigen::MatrixXd Z = latin_hypercube(ctx.z_lower(), ctx.z_upper(), n_new, rng_seed);
  std::vector<Vec<6>> xs;
  std::vector<Vec<2>> us;
  std::vector<Vec<1>> ts;
  for (int k = 0; k < n_new; ++k) {
    ts.push_back(Z.col(k).head<1>());
    xs.push_back(Z.col(k).tail<6>());
    us.push_back(Vec<2>(ctx.quad.gravity, 0.0));
  }
  return generate_measurements(ctx.quad.sys, ctx.quad.unc, xs, us, ts, ctx.cfg.gp.noise_std, rng_seed + 1);
}

/// Seed of the batch that grows the dataset to N points.
inline uint64_t data_seed(uint64_t seed, int N) { return detail::splitmix64(seed) + static_cast<uint64_t>(N); }

/// Appends the batch that brings data up to N points; the campaign calls this once per episode.
inline void grow_dataset(const Context & ctx, Dataset & data, int N)
{
  data.noise_std = ctx.cfg.gp.noise_std;
  const int n_new = N - data.size();
  if (n_new > 0) { data.append(collect_data(ctx, n_new, data_seed(ctx.cfg.seed, N))); }
}

struct BoundReport
{
  int N = 0;
  UncertaintyTriple triple;
  std::optional<RemainderBounds> remainder;
  CoveringParams covering;
};

/// Conservative triple for an empty dataset, otherwise grid suprema of the remainder bounds.
inline BoundReport uncertainty_bounds(const Context & ctx, const Dataset & data, std::shared_ptr<const GPModel> * model_out = nullptr)
{
  const auto & g = ctx.cfg.gp;
  BoundReport r;
  r.N = data.size();
  const auto lo = ctx.z_lower(), hi = ctx.z_upper();
  r.covering = covering_params(lo, hi, 2, 1, g.delta, g.tau);
  if (data.size() == 0) {
    r.triple = UncertaintyTriple{ctx.quad.bounds.Delta_h, ctx.quad.bounds.Delta_hx, ctx.quad.bounds.Delta_hxi, "conservative"};
    if (model_out) { model_out->reset(); }
    return r;
  }
  Dataset d = data;
  d.noise_std = g.noise_std;
  auto model = std::make_shared<GPModel>(fit(g.kernels, d, 1));
  std::vector<KernelRegularity> reg;
  for (const auto & k : g.kernels) { reg.push_back(kernel_regularity(k, lo, hi, 1)); }
  const auto cc = continuity_constants(*model, reg);
  const PriorBounds pb{ctx.quad.bounds.Delta_hx, ctx.quad.bounds.Delta_hxi, ctx.quad.bounds.hessian_bounds_xi,
    ctx.quad.bounds.hessian_bounds_x};
  const auto gt = gamma_terms(r.covering, cc, pb);
  r.remainder = remainder_bounds(*model, r.covering, gt, lo, hi, g.grid_resolution, g.refine_factor);
  r.triple = UncertaintyTriple{r.remainder->Delta, r.remainder->Delta_x, r.remainder->Delta_xi, "learned"};
  if (model_out) { *model_out = model; }
  return r;
}

using Plan = PlannedTrajectory<6, 2>;

/// u_d consistent with the controller's model: nominal-tagged plans shift by -nu under a learned model.
inline Vec<2> desired_input(const Plan & p, const LearnedMean & nu, std::size_t k)
{
  if (p.tag == "nominal" && nu.learned()) { return p.u[k] - nu(p.t[k], p.x[k]); }
  return p.u[k];
}

struct PlanResult
{
  Plan plan;
  Environment inflated;
  StateBox<6> box;  // workspace box shrunk by rho
  MPPIReport mppi;
  ILQRReport ilqr;
  double defect = 0.0;
  double clearance = 0.0;  // against the inflated obstacles; >= 0 is collision free
  bool reached_goal = false;
};

/**
 * @brief Plans from x_d(0) to the goal on the inflated scene and shrunk box.
 *
 * MPPI rolls out the nominal model and returns a nominal-tagged plan; the learned model enters
 * through desired_input. The iLQR planner optimizes the learned model directly when one is
 * given and ignores obstacles (they are caught by the clearance check).
 */
inline PlanResult plan_episode(const Context & ctx, const LearnedMean & nu, double rho, uint64_t seed, const std::string & kind)
{
  PlanResult r;
  r.inflated = tube_inflate(ctx.env, rho);
  r.box = ctx.workspace_box().shrunk(rho);
  const Vec<6> x0 = ctx.start_state();
  const auto cost = ctx.stage_cost();
  const auto nominal = [&](double, const Vec<6> & x, const Vec<2> & u) { return eval_nominal(ctx.quad.sys, x, u); };
  const auto tagged = [&](double t, const Vec<6> & x, const Vec<2> & u) { return nu.dynamics(ctx.quad, t, x, u); };
  if (kind == "mppi") {
    MPPIConfig mc = ctx.cfg.planner.mppi;
    mc.seed = seed;
    const Vec<2> noise = ctx.cfg.planner.noise_std ? *ctx.cfg.planner.noise_std
                                                   : Vec<2>::Constant(ctx.cfg.planner.noise_fraction * ctx.quad.gravity);
    r.plan = mppi_plan<6, 2>(nominal, r.inflated, r.box, x0, cost, noise, mc, &r.mppi);
    r.reached_goal = r.mppi.reached_goal;
    r.defect = plan_defect(r.plan, nominal);
  } else {
    r.plan = trajopt_lqr<6, 2>(tagged, x0, cost, &r.box, ctx.cfg.planner.ilqr, &r.ilqr);
    r.plan.tag = nu.learned() ? "learned" : "nominal";
    const Vec<6> e = r.plan.x.back() - Vec<6>(cost.x_goal);
    r.reached_goal = e.head<2>().norm() < ctx.cfg.planner.mppi.goal_tolerance;
    r.defect = plan_defect(r.plan, tagged);
  }
  r.clearance = plan_clearance(r.plan, r.inflated);
  return r;
}

/// Control-rate plan under the tagged dynamics, held u_d.
inline Plan densify_plan(const Context & ctx, const Plan & p, const LearnedMean & nu)
{
  if (p.tag == "nominal") {
    return densify(p, [&](double, const Vec<6> & x, const Vec<2> & u) { return eval_nominal(ctx.quad.sys, x, u); }, ctx.cfg.sim.dt);
  }
  return densify(p, [&](double t, const Vec<6> & x, const Vec<2> & u) { return nu.dynamics(ctx.quad, t, x, u); }, ctx.cfg.sim.dt);
}

inline L1Params<6> l1_params(const Context & ctx, const EpisodeSpec & e, double Delta)
{
  return L1Params<6>(ctx.cfg.A_m, ctx.cfg.Q_l1, e.Gamma, e.omega, Delta, ctx.cfg.eps_proj);
}

struct CertificateReport
{
  TubeParams tube;
  UncertaintyTriple triple;
  double E0 = 0.0;
  std::optional<CertificateConstants> constants;
  CertificateVerdict verdict;
  RequiredBandwidth required;
  std::string error;  // set when the constants are undefined (resonance)
  double Gamma = 0.0;

  bool feasible() const { return constants && verdict.feasible; }
};

/**
 * @brief Certificate of one plan: tube radius, constants over the tube, the three conditions.
 *
 * E0 is the geodesic energy between x_d(0) and x0. The plan is the whole concatenated MPPI
 * execution, so there is one E0 per episode.
 */
inline CertificateReport certify(const Context & ctx, const EpisodeSpec & e, const UncertaintyTriple & triple,
  const Plan & plan, const LearnedMean & nu, const Vec<6> & x0)
{
  CertificateReport r;
  r.triple = triple;
  r.Gamma = e.Gamma;
  r.tube = compute_tube_params<6>(ctx.metric, plan.x.front(), x0, e.rho_a, e.eps);
  r.E0 = solve_geodesic<6>(ctx.metric, plan.x.front(), x0, ctx.cfg.sim.geodesic_nodes).energy;
  std::vector<Vec<2>> us;
  for (std::size_t k = 0; k < plan.size(); ++k) { us.push_back(desired_input(plan, nu, k)); }
  const auto s = tube_suprema<6, 2>(ctx.metric, ctx.quad.sys, ctx.workspace_box(), plan.x, us, r.tube.rho, ctx.cfg.sim.tube_samples);
  const auto l1 = L1Summary<6>::from(l1_params(ctx, e, std::max(triple.Delta, 1e-12)));
  const auto & m = ctx.metric;
  try {
    r.constants = certificate_constants<6>(s, m.lambda, m.alpha_lower, m.alpha_upper, triple, l1);
    r.verdict = check_conditions(*r.constants, m.lambda, m.alpha_lower, r.tube, r.E0, e.Gamma);
  } catch (const std::invalid_argument & ex) {
    r.error = ex.what();
  }
  r.required = required_bandwidth<6>(s, m.lambda, m.alpha_lower, m.alpha_upper, triple, l1, r.tube, r.E0);
  return r;
}

/// One row per control step.
struct SimLog
{
  static constexpr int kColumns = 27;
  using Row = std::array<double, kColumns>;

  static const std::vector<std::string> & header()
  {
    static const std::vector<std::string> h = [] {
      std::vector<std::string> v{"t"};
      for (int i = 0; i < 6; ++i) { v.push_back("x" + std::to_string(i)); }
      for (int i = 0; i < 6; ++i) { v.push_back("x_d" + std::to_string(i)); }
      for (int i = 0; i < 2; ++i) { v.push_back("u_c" + std::to_string(i)); }
      for (int i = 0; i < 2; ++i) { v.push_back("u_a" + std::to_string(i)); }
      for (int i = 0; i < 2; ++i) { v.push_back("mu_hat" + std::to_string(i)); }
      for (int i = 0; i < 6; ++i) { v.push_back("x_tilde" + std::to_string(i)); }
      v.push_back("energy");
      v.push_back("tracking_error");
      return v;
    }();
    return h;
  }

  double dt = 0.0;
  std::vector<Row> rows;
  std::string stamp = "certified";  // or UNCERTIFIED
  UncertaintyTriple bounds;
  double rho = 0.0;
  bool feasible = false;

  double sup_error = 0.0;
  double max_penetration = -std::numeric_limits<double>::infinity();  // true position into the true obstacles
  bool left_workspace = false;
  long l1_clipped = 0;
  int l1_substeps = 0;
  int geodesic_nonconverged = 0;
  int feedback_infeasible = 0;

  Vec<6> x(std::size_t k) const { return Eigen::Map<const Vec<6>>(rows[k].data() + 1); }
  Vec<6> x_d(std::size_t k) const { return Eigen::Map<const Vec<6>>(rows[k].data() + 7); }
  Vec<2> u(std::size_t k) const { return Eigen::Map<const Vec<2>>(rows[k].data() + 13) + Eigen::Map<const Vec<2>>(rows[k].data() + 15); }
};

/**
 * @brief Closed loop on the true plant: CCM feedback on the learned (or nominal) model plus L1.
 *
 * u = u_c + u_a. The plant is integrated with RK4 at the plan's dt with u held; the adaptation
 * sees sigma = h - nu at both ends of the step.
 */
inline SimLog simulate_closed_loop(const Context & ctx, const Plan & dense, const LearnedMean & nu, const L1Params<6> & l1p,
  const Vec<6> & x0)
{
  const auto & q = ctx.quad;
  const double dt = dense.dt;
  SimLog log;
  log.dt = dt;
  CCMController<6, 2> ctrl(ctx.metric, ctx.cfg.sim.geodesic_nodes);
  L1Adaptation<6, 2> l1(l1p, q.sys, dt);
  log.l1_substeps = l1.substeps();
  const auto sigma = [&](double t, const Vec<6> & x) { return Vec<2>(q.unc.h(Vec<1>(t), x) - nu(t, x)); };

  Vec<6> x = x0;
  Vec<2> s0 = sigma(dense.t.front(), x);
  log.rows.reserve(dense.size());
  for (std::size_t k = 0; k < dense.size(); ++k) {
    const double t = dense.t[k];
    const Vec<6> & xd = dense.x[k];
    const Vec<2> ud = desired_input(dense, nu, k);
    const auto model = [&](const Vec<6> & z, const Vec<2> & u) { return nu.dynamics(q, t, z, u); };
    const Vec<6> xd_dot = model(xd, ud);
    const Vec<2> uc = ctrl.u_c(model, xd, xd_dot, ud, x);
    const auto st = l1.state();
    SimLog::Row row;
    row[0] = t;
    for (int i = 0; i < 6; ++i) {
      row[1 + i] = x(i);
      row[7 + i] = xd(i);
      row[19 + i] = st.x_tilde(i);
    }
    for (int j = 0; j < 2; ++j) {
      row[13 + j] = uc(j);
      row[15 + j] = st.u_a(j);
      row[17 + j] = st.mu(j);
    }
    row[25] = ctrl.energy();
    row[26] = (x - xd).norm();
    log.rows.push_back(row);
    log.sup_error = std::max(log.sup_error, row[26]);
    log.max_penetration = std::max(log.max_penetration, ctx.env.penetration(Point2(x(0), x(1))));
    if (!(x.head<2>().array() >= ctx.env.ws_lower.array()).all() || !(x.head<2>().array() <= ctx.env.ws_upper.array()).all()) {
      log.left_workspace = true;
    }
    if (k + 1 == dense.size()) { break; }

    const Vec<2> u = uc + st.u_a;
    const Vec<6> x1 = rk4_step([&](double s, const Vec<6> & z) { return eval_actual(q.sys, q.unc, Vec<1>(s), z, u); }, t, x, dt);
    const Vec<2> s1 = sigma(t + dt, x1);
    l1.step(x, x1, s0, s1);
    x = x1;
    s0 = s1;
  }
  log.l1_clipped = l1.clipped();
  log.geodesic_nonconverged = ctrl.nonconverged();
  log.feedback_infeasible = ctrl.infeasible();
  return log;
}

/// Plan-rate cost of a simulated run: stage terms scaled by dt / plan_dt, terminal on the last state.
inline double realized_cost(const SimLog & log, const StageCost & c, double plan_dt)
{
  double J = 0.0;
  const std::size_t n = log.rows.size();
  for (std::size_t k = 0; k + 1 < n; ++k) { J += c.stage(log.x(k), log.u(k)) * log.dt / plan_dt; }
  return J + c.terminal(log.x(n - 1));
}

struct EpisodeResult
{
  int index = 0;
  EpisodeSpec spec;
  BoundReport bounds;
  PlanResult planning;
  Plan dense;
  double dense_clearance = 0.0;
  double tube_box_excess = 0.0;  // > 0 when the tube leaves the workspace box
  CertificateReport certificate;
  bool simulated = false, forced = false;
  std::optional<SimLog> log;
  std::string status;  // certified, UNCERTIFIED, refused, violation
  int exit_code = kExitOk;
};

/**
 * @brief Bounds, plan, certificate and (if certified or forced) closed-loop simulation.
 *
 * A plan that collides with the inflated scene or a tube that leaves the workspace box is a
 * violation (exit code 3) and is not simulated. An infeasible certificate is refused (exit
 * code 2) unless force is set, in which case the run is stamped UNCERTIFIED.
 */
inline EpisodeResult run_episode(const Context & ctx, int k, const Dataset & data, bool force)
{
  EpisodeResult r;
  r.index = k;
  r.spec = ctx.cfg.episodes.at(k);
  std::shared_ptr<const GPModel> gp;
  r.bounds = uncertainty_bounds(ctx, data, &gp);
  const LearnedMean nu{gp};

  const Vec<6> xd0 = ctx.start_state();
  const Vec<6> x0 = xd0 + ctx.cfg.sim.initial_offset;
  const auto tube = compute_tube_params<6>(ctx.metric, xd0, x0, r.spec.rho_a, r.spec.eps);
  r.planning = plan_episode(ctx, nu, tube.rho, ctx.cfg.seed + static_cast<uint64_t>(k), ctx.cfg.planner.kind);
  r.dense = densify_plan(ctx, r.planning.plan, nu);
  r.dense_clearance = plan_clearance(r.dense, r.planning.inflated);
  r.tube_box_excess = tube_box_violation<6>(ctx.workspace_box(), r.dense.x, tube.rho);
  r.certificate = certify(ctx, r.spec, r.bounds.triple, r.planning.plan, nu, x0);

  if (r.dense_clearance < 0.0 || r.tube_box_excess > 0.0) {
    r.status = "violation";
    r.exit_code = kExitTubeViolation;
    return r;
  }
  const bool feasible = r.certificate.feasible();
  if (!feasible && !force) {
    r.status = "refused";
    r.exit_code = kExitInfeasible;
    return r;
  }
  r.forced = !feasible;
  r.status = feasible ? "certified" : "UNCERTIFIED";
  const auto l1p = l1_params(ctx, r.spec, r.bounds.triple.Delta);
  r.log = simulate_closed_loop(ctx, r.dense, nu, l1p, x0);
  r.simulated = true;
  r.log->stamp = r.status;
  r.log->bounds = r.bounds.triple;
  r.log->rho = tube.rho;
  r.log->feasible = feasible;
  if (r.log->sup_error > tube.rho || r.log->max_penetration > 0.0 || r.log->left_workspace) {
    r.exit_code = kExitTubeViolation;
  }
  return r;
}

struct CampaignReport
{
  std::vector<EpisodeResult> episodes;
  int exit_code = kExitOk;
};

/// Worst code wins: 3 over 2 over 0.
inline int combine_exit(int a, int b)
{
  const auto rank = [](int c) { return c == kExitTubeViolation ? 2 : c == kExitInfeasible ? 1 : 0; };
  return rank(a) >= rank(b) ? a : b;
}

/**
 * @brief Episodes in order on one growing dataset. only >= 0 runs that episode alone (data still
 * grows through the schedule).
 */
inline CampaignReport run_campaign(const Context & ctx, bool force, int only = -1)
{
  const auto & eps = ctx.cfg.episodes;
  if (only >= static_cast<int>(eps.size())) { throw ConfigError("config: --episode out of range"); }
  CampaignReport rep;
  Dataset data;
  for (int k = 0; k < static_cast<int>(eps.size()); ++k) {
    grow_dataset(ctx, data, eps[k].N);
    if (only >= 0 && k != only) { continue; }
    rep.episodes.push_back(run_episode(ctx, k, data, force));
    rep.exit_code = combine_exit(rep.exit_code, rep.episodes.back().exit_code);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Reports and plot data

inline json triple_json(const UncertaintyTriple & t)
{
  return {{"Delta", t.Delta}, {"Delta_x", t.Delta_x}, {"Delta_xi", t.Delta_xi}, {"source", t.source}};
}

inline json bound_report_json(const BoundReport & b)
{
  json j{{"N", b.N}, {"triple", triple_json(b.triple)}, {"delta", b.covering.delta}, {"tau", b.covering.tau},
    {"log_covering_number", b.covering.log_M}, {"beta", b.covering.beta}, {"beta_xi", b.covering.beta_xi},
    {"beta_x", b.covering.beta_x}};
  if (b.remainder) {
    const auto & r = *b.remainder;
    const auto vec = [](const Eigen::VectorXd & v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    j["grid"] = {{"resolution", r.resolution}, {"refine_factor", r.refine_factor}, {"evaluations", r.evaluations},
      {"argmax", vec(r.argmax)}, {"argmax_x", vec(r.argmax_x)}, {"argmax_xi", vec(r.argmax_xi)}};
  }
  return j;
}

inline json certificate_json(const CertificateReport & c)
{
  json j{{"tube", {{"rho", c.tube.rho}, {"rho_r", c.tube.rho_r}, {"rho_a", c.tube.rho_a}, {"eps", c.tube.eps},
                    {"initial_error", c.tube.initial_error}}},
    {"triple", triple_json(c.triple)}, {"E0", c.E0}, {"Gamma", c.Gamma}, {"feasible", c.feasible()}};
  if (!c.error.empty()) { j["error"] = c.error; }
  if (c.constants) {
    const auto & k = *c.constants;
    const auto & s = k.suprema;
    j["suprema"] = {{"Delta_f", s.Delta_f}, {"Delta_fx", s.Delta_fx}, {"Delta_B", s.Delta_B}, {"Delta_Bx", s.Delta_Bx},
      {"Delta_bx", s.Delta_bx}, {"Delta_Bpinv", s.Delta_Bpinv}, {"Delta_Bpinv_x", s.Delta_Bpinv_x}, {"Delta_ud", s.Delta_ud},
      {"Delta_Mx", s.Delta_Mx}, {"Delta_du", s.Delta_du}, {"samples", s.samples}};
    j["constants"] = {{"omega", k.omega}, {"Delta_Psix", k.Delta_Psix}, {"Delta_xr_dot", k.Delta_xr_dot},
      {"Delta_x_dot", k.Delta_x_dot}, {"Delta_x_tilde", k.Delta_x_tilde}, {"Delta_eta_tilde", k.Delta_eta_tilde},
      {"Delta_theta", k.Delta_theta}, {"Delta_Psi_dot", k.Delta_Psi_dot}, {"Delta_gamma_s_dot", k.Delta_gamma_s_dot},
      {"kappa", {k.kappa1, k.kappa2, k.kappa3, k.kappa4}}, {"zeta", {k.zeta1, k.zeta2, k.zeta3}}};
    j["margins"] = {c.verdict.margin[0], c.verdict.margin[1], c.verdict.margin[2]};
  }
  j["required_bandwidth"] = {{"attainable", c.required.attainable}};
  if (c.required.attainable) {
    j["required_bandwidth"]["omega"] = c.required.omega;
    j["required_bandwidth"]["Gamma_at_2omega"] = c.required.Gamma_at_2omega;
  }
  return j;
}

inline json episode_json(const EpisodeResult & e)
{
  json j{{"episode", e.index}, {"N", e.spec.N}, {"omega", e.spec.omega}, {"Gamma", e.spec.Gamma}, {"status", e.status},
    {"exit_code", e.exit_code}, {"bounds", bound_report_json(e.bounds)}, {"certificate", certificate_json(e.certificate)},
    {"plan", {{"tag", e.planning.plan.tag}, {"knots", e.planning.plan.size()}, {"duration", e.planning.plan.t.back()},
               {"reached_goal", e.planning.reached_goal}, {"defect", e.planning.defect},
               {"clearance", e.planning.clearance}, {"dense_clearance", e.dense_clearance},
               {"tube_box_excess", e.tube_box_excess}}}};
  if (e.log) {
    const auto & l = *e.log;
    j["simulation"] = {{"stamp", l.stamp}, {"steps", l.rows.size()}, {"dt", l.dt}, {"sup_error", l.sup_error},
      {"rho", l.rho}, {"inside_tube", l.sup_error <= l.rho}, {"max_penetration", l.max_penetration},
      {"left_workspace", l.left_workspace}, {"l1_substeps", l.l1_substeps}, {"l1_clipped", l.l1_clipped},
      {"geodesic_nonconverged", l.geodesic_nonconverged}, {"feedback_infeasible", l.feedback_infeasible}};
  }
  return j;
}

namespace detail {

inline std::ofstream open_csv(const fs::path & p)
{
  std::ofstream os(p);
  if (!os) { throw std::runtime_error("cannot write " + p.string()); }
  os << std::setprecision(17);
  return os;
}

/// Polygon with n edges circumscribing the disc of radius r around c.
inline std::vector<Point2> circumscribed(const Point2 & c, double r, int n = 16)
{
  std::vector<Point2> v;
  const double R = r / std::cos(M_PI / n);
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * (i + 0.5) / n;
    v.push_back(c + R * Point2(std::cos(a), std::sin(a)));
  }
  return v;
}

}  // namespace detail

inline void write_trace_csv(const SimLog & log, const fs::path & path)
{
  auto os = detail::open_csv(path);
  const auto & h = SimLog::header();
  for (std::size_t i = 0; i < h.size(); ++i) { os << (i ? "," : "") << h[i]; }
  os << "\n";
  for (const auto & row : log.rows) {
    for (int i = 0; i < SimLog::kColumns; ++i) { os << (i ? "," : "") << row[i]; }
    os << "\n";
  }
}

/**
 * @brief Per-episode trace, plan, tube polylines and envelopes, plus campaign tables.
 *
 * Layout under out_dir: campaign.json, bounds.csv, tubes.csv, scene.json and one episode_<k>/
 * per result with certificate.json, plan.csv, obstacles_inflated.csv and, when simulated,
 * trace.csv, tube.csv (16-gon around x_d every polyline_stride steps) and envelope.csv
 * (x_d -+ rho per state, and the ultimate bound when certified). Nothing is written for an
 * empty list.
 */
inline void emit_outputs(const std::vector<EpisodeResult> & results, const fs::path & out_dir, const Context & ctx)
{
  if (results.empty()) { return; }
  fs::create_directories(out_dir);
  json camp{{"scene", detail::scene_to_json(ctx.env)}, {"full", ctx.full}, {"seed", ctx.cfg.seed}, {"episodes", json::array()}};
  for (const auto & e : results) { camp["episodes"].push_back(episode_json(e)); }
  write_json(camp, (out_dir / "campaign.json").string());
  write_json(detail::scene_to_json(ctx.env), (out_dir / "scene.json").string());
  {
    auto os = detail::open_csv(out_dir / "bounds.csv");
    os << "episode,N,Delta,Delta_x,Delta_xi,source\n";
    for (const auto & e : results) {
      const auto & t = e.bounds.triple;
      os << e.index << "," << e.bounds.N << "," << t.Delta << "," << t.Delta_x << "," << t.Delta_xi << "," << t.source << "\n";
    }
  }
  {
    auto os = detail::open_csv(out_dir / "tubes.csv");
    os << "episode,N,omega,Gamma,rho,rho_r,rho_a,feasible,status,sup_error,required_omega\n";
    for (const auto & e : results) {
      const auto & c = e.certificate;
      os << e.index << "," << e.spec.N << "," << e.spec.omega << "," << e.spec.Gamma << "," << c.tube.rho << "," << c.tube.rho_r
         << "," << c.tube.rho_a << "," << (c.feasible() ? 1 : 0) << "," << e.status << ",";
      if (e.log) { os << e.log->sup_error; }
      os << ",";
      if (c.required.attainable) { os << c.required.omega; }
      os << "\n";
    }
  }
  for (const auto & e : results) {
    const fs::path dir = out_dir / ("episode_" + std::to_string(e.index));
    fs::create_directories(dir);
    write_json(episode_json(e), (dir / "certificate.json").string());
    write_plan_csv(e.planning.plan, (dir / "plan.csv").string());
    {
      auto os = detail::open_csv(dir / "obstacles_inflated.csv");
      os << "obstacle,vertex,p_x,p_z\n";
      for (std::size_t o = 0; o < e.planning.inflated.obstacles.size(); ++o) {
        const auto & v = e.planning.inflated.obstacles[o].v;
        for (std::size_t i = 0; i < v.size(); ++i) { os << o << "," << i << "," << v[i].x() << "," << v[i].y() << "\n"; }
      }
    }
    if (!e.log) { continue; }
    const auto & log = *e.log;
    write_trace_csv(log, dir / "trace.csv");
    const double rho = e.certificate.tube.rho;
    const int stride = std::max(1, ctx.cfg.sim.polyline_stride);
    {
      auto os = detail::open_csv(dir / "tube.csv");
      os << "sample,t,vertex,p_x,p_z\n";
      for (std::size_t k = 0; k < log.rows.size(); k += stride) {
        const Vec<6> xd = log.x_d(k);
        const auto poly = detail::circumscribed(Point2(xd(0), xd(1)), rho);
        for (std::size_t i = 0; i < poly.size(); ++i) {
          os << k << "," << log.rows[k][0] << "," << i << "," << poly[i].x() << "," << poly[i].y() << "\n";
        }
      }
    }
    {
      auto os = detail::open_csv(dir / "envelope.csv");
      os << "t,rho,uub";
      for (int i = 0; i < 6; ++i) { os << ",x_d" << i << ",lower" << i << ",upper" << i; }
      os << "\n";
      for (std::size_t k = 0; k < log.rows.size(); ++k) {
        const double t = log.rows[k][0];
        os << t << "," << rho << ",";
        if (e.certificate.feasible()) { os << e.certificate.verdict.uub(t); }
        const Vec<6> xd = log.x_d(k);
        for (int i = 0; i < 6; ++i) { os << "," << xd(i) << "," << xd(i) - rho << "," << xd(i) + rho; }
        os << "\n";
      }
    }
  }
}

}  // namespace rl1gp
