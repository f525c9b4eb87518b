// Command-line entry: campaign, bounds and certify subcommands.

#include <chrono>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "rl1gp/harness.hpp"

using namespace rl1gp;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_episode(const EpisodeResult & e)
{
  const auto & c = e.certificate;
  const auto & t = e.bounds.triple;
  std::printf("episode %d  N=%d  triple=(%.4g, %.4g, %.4g) %s\n", e.index, e.spec.N, t.Delta, t.Delta_x, t.Delta_xi,
    t.source.c_str());
  std::printf("  plan: %zu knots, %.2f s, goal %s, clearance %.3f\n", e.planning.plan.size(), e.planning.plan.t.back(),
    e.planning.reached_goal ? "reached" : "NOT reached", e.dense_clearance);
  std::printf("  certificate: omega=%g Gamma=%g rho=%.3g  %s", e.spec.omega, e.spec.Gamma, c.tube.rho,
    c.feasible() ? "feasible" : "infeasible");
  if (c.constants) { std::printf("  margins=(%.3g, %.3g, %.3g)", c.verdict.margin[0], c.verdict.margin[1], c.verdict.margin[2]); }
  if (!c.error.empty()) { std::printf("  (%s)", c.error.c_str()); }
  std::printf("\n");
  if (c.required.attainable) {
    std::printf("  conditions 1-2 need omega >= %.4g (Gamma >= %.3g at twice that)\n", c.required.omega, c.required.Gamma_at_2omega);
  }
  if (e.log) {
    std::printf("  simulation [%s]: sup|x - x_d| = %.4g (rho %.3g), penetration %.3g, L1 clipped %ld\n", e.log->stamp.c_str(),
      e.log->sup_error, e.log->rho, e.log->max_penetration, e.log->l1_clipped);
  } else {
    std::printf("  simulation: %s\n", e.status.c_str());
  }
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Learning-augmented L1 adaptive control with certified tubes"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_path, plan_path;
  int episode = -1;
  bool force = false, full = false;
  uint64_t seed = 0;

  auto * camp = app.add_subcommand("campaign", "Run the episode campaign and write outputs");
  camp->add_option("--config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  camp->add_option("--episode", episode, "Run only this episode index");
  camp->add_flag("--force", force, "Simulate infeasible certificates, stamped UNCERTIFIED");
  camp->add_flag("--full", full, "Use the full-size scene");
  auto * seed_opt = camp->add_option("--seed", seed, "Override the config seed");
  camp->add_option("--out", out_dir, "Output directory (default from config)");

  auto * bnd = app.add_subcommand("bounds", "Remainder bounds of a dataset");
  bnd->add_option("--config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  bnd->add_option("--dataset", dataset_path, "Dataset CSV (z..., y...)")->required()->check(CLI::ExistingFile);

  auto * cert = app.add_subcommand("certify", "Certificate of a plan");
  cert->add_option("--config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  cert->add_option("--plan", plan_path, "Plan CSV (t, x_d..., u_d...)")->required()->check(CLI::ExistingFile);
  cert->add_option("--episode", episode, "Episode whose omega, Gamma, rho_a, eps apply (default 0)");
  cert->add_option("--dataset", dataset_path, "Dataset for a learned triple (default: conservative)")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = load_config(config_path);
    if (*seed_opt) { cfg.seed = seed; }
    const auto ctx = make_context(cfg, full);

    if (*camp) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto rep = run_campaign(*ctx, force, episode);
      for (const auto & e : rep.episodes) { print_episode(e); }
      const fs::path out = out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir);
      emit_outputs(rep.episodes, out, *ctx);
      std::fprintf(stderr, "campaign: %.1f s, outputs in %s, exit %d\n", seconds_since(t0), out.string().c_str(), rep.exit_code);
      return rep.exit_code;
    }

    if (*bnd) {
      const auto data = read_dataset_csv(dataset_path, cfg.gp.noise_std);
      if (data.Z.rows() != 7 || data.Y.rows() != 2) { throw ConfigError("dataset: need 7 inputs (t, x) and 2 outputs"); }
      std::cout << bound_report_json(uncertainty_bounds(*ctx, data)).dump(2) << "\n";
      return kExitOk;
    }

    const int k = episode < 0 ? 0 : episode;
    if (k >= static_cast<int>(cfg.episodes.size())) { throw ConfigError("config: --episode out of range"); }
    const auto plan = read_plan_csv<6, 2>(plan_path);
    if (plan.size() < 2) { throw ConfigError("plan: need at least two rows"); }
    std::shared_ptr<const GPModel> gp;
    Dataset data;
    if (!dataset_path.empty()) { data = read_dataset_csv(dataset_path, cfg.gp.noise_std); }
    const auto bounds = uncertainty_bounds(*ctx, data, &gp);
    const Vec<6> x0 = plan.x.front() + cfg.sim.initial_offset;
    const auto c = certify(*ctx, cfg.episodes[k], bounds.triple, plan, LearnedMean{gp}, x0);
    std::cout << certificate_json(c).dump(2) << "\n";
    return c.feasible() ? kExitOk : kExitInfeasible;
  } catch (const ConfigError & e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitConfig;
  } catch (const std::exception & e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
