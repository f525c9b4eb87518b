#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rl1gp/harness.hpp"

using namespace rl1gp;

namespace {

json default_json()
{
  std::ifstream is(std::string(RL1GP_DATA_DIR) + "/default.json");
  return json::parse(is);
}

// Short obstacle-free hop with a coarse bound grid; seconds, not minutes.
json small_json()
{
  auto j = default_json();
  j["gp"]["grid_resolution"] = {3, 2, 2, 2, 3, 3, 2};
  j["gp"]["refine_factor"] = 2;
  j["episodes"] = {{{"N", 0}, {"omega", 30}, {"Gamma", 2e6}, {"rho_a", 0.3}, {"eps", 0.05}},
    {{"N", 8}, {"omega", 30}, {"Gamma", 2e6}, {"rho_a", 0.2}, {"eps", 0.05}}};
  j["scene"]["goal"] = {4.0, 5.0};
  j["scene"]["obstacles"] = json::array();
  auto & m = j["planner"]["mppi"];
  m["rollouts"] = 100;
  m["horizon"] = 60;
  m["max_steps"] = 300;
  m["goal_tolerance"] = 0.3;
  return j;
}

std::unique_ptr<Context> context_from(const json & j)
{
  return make_context(config_from_json(j, RL1GP_DATA_DIR));
}

std::vector<std::vector<double>> read_csv(const fs::path & p, std::string * header = nullptr)
{
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  if (header) { *header = line; }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> r;
    while (std::getline(ss, cell, ',')) { r.push_back(std::strtod(cell.c_str(), nullptr)); }
    rows.push_back(r);
  }
  return rows;
}

fs::path fresh_dir(const std::string & name)
{
  const fs::path d = fs::path(::testing::TempDir()) / name;
  fs::remove_all(d);
  return d;
}

int run_cli(const std::string & args)
{
  const int st = std::system((std::string(RL1GP_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

const CampaignReport & small_forced()
{
  static const auto ctx = context_from(small_json());
  static const auto rep = run_campaign(*ctx, true);
  return rep;
}

}  // namespace

TEST(Config, DefaultLoads)
{
  const auto cfg = load_config(std::string(RL1GP_DATA_DIR) + "/default.json");
  EXPECT_EQ(cfg.episodes.size(), 3u);
  EXPECT_EQ(cfg.planner.mppi.smoothing_half_width, 10);
  EXPECT_TRUE(fs::exists(cfg.metric_path));
  ASSERT_TRUE(cfg.full_scene.has_value());
  EXPECT_EQ(cfg.full_scene->obstacles.size(), 8u);
}

TEST(Config, InvalidValuesAreConfigErrors)
{
  const auto expect_error = [](const std::function<void(json &)> & edit) {
    auto j = default_json();
    edit(j);
    EXPECT_THROW(config_from_json(j, RL1GP_DATA_DIR), ConfigError) << j.dump().substr(0, 80);
  };
  expect_error([](json & j) { j["gp"]["delta"] = 1.5; });
  expect_error([](json & j) { j["gp"].erase("kernels"); });
  expect_error([](json & j) { j["gp"]["kernels"][0]["lengthscales"] = {1, 2}; });
  expect_error([](json & j) { j["episodes"] = json::array(); });
  expect_error([](json & j) { j["episodes"][1]["N"] = -3; });
  expect_error([](json & j) { j["planner"]["kind"] = "rrt"; });
  expect_error([](json & j) { j["planner"]["mppi"]["noise_knot_steps"] = 0; });
  expect_error([](json & j) { j["simulation"]["dt"] = 0.003; });
  expect_error([](json & j) { j["l1"]["A_m"] = 1.0; });
  expect_error([](json & j) { j["scene"]["obstacles"][0] = {{3, 5}, {3, 7}, {4, 7}, {4, 5}}; });  // clockwise
  expect_error([](json & j) { j["gp"]["noise_std"] = "loud"; });
}

TEST(Harness, CombineExitRanks)
{
  EXPECT_EQ(combine_exit(kExitOk, kExitInfeasible), kExitInfeasible);
  EXPECT_EQ(combine_exit(kExitInfeasible, kExitTubeViolation), kExitTubeViolation);
  EXPECT_EQ(combine_exit(kExitTubeViolation, kExitOk), kExitTubeViolation);
  EXPECT_EQ(combine_exit(kExitOk, kExitOk), kExitOk);
}

TEST(Harness, CollectDataDeterministic)
{
  const auto ctx = context_from(small_json());
  const auto a = collect_data(*ctx, 10, data_seed(0, 10));
  const auto b = collect_data(*ctx, 10, data_seed(0, 10));
  const auto c = collect_data(*ctx, 10, data_seed(1, 10));
  EXPECT_EQ(a.Z, b.Z);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_NE(a.Z, c.Z);
  for (int j = 0; j < a.size(); ++j) {
    EXPECT_TRUE(((a.Z.col(j).array() >= ctx->z_lower().array()) && (a.Z.col(j).array() <= ctx->z_upper().array())).all());
  }
}

TEST(Harness, SmallCampaignForced)
{
  const auto & rep = small_forced();
  ASSERT_EQ(rep.episodes.size(), 2u);
  EXPECT_EQ(rep.exit_code, kExitOk);
  for (const auto & e : rep.episodes) {
    EXPECT_TRUE(e.planning.reached_goal);
    ASSERT_TRUE(e.log.has_value());
    EXPECT_EQ(e.status, e.certificate.feasible() ? "certified" : "UNCERTIFIED");
    EXPECT_EQ(e.log->stamp, e.status);
    EXPECT_LE(e.log->sup_error, e.log->rho);
    EXPECT_EQ(e.log->rows.size(), e.dense.size());
  }
  EXPECT_EQ(rep.episodes[0].bounds.triple.source, "conservative");
  EXPECT_EQ(rep.episodes[1].bounds.triple.source, "learned");
  EXPECT_EQ(rep.episodes[0].planning.plan.tag, "nominal");
}

TEST(Harness, TrackingErrorColumn)
{
  const auto & log = *small_forced().episodes.back().log;
  for (std::size_t k = 0; k < log.rows.size(); k += 7) {
    EXPECT_NEAR(log.rows[k][26], (log.x(k) - log.x_d(k)).norm(), 1e-14);
  }
}

TEST(Harness, RefusedWithoutForce)
{
  auto j = small_json();
  j["episodes"] = {j["episodes"][0]};
  const auto ctx = context_from(j);
  const auto rep = run_campaign(*ctx, false);
  ASSERT_EQ(rep.episodes.size(), 1u);
  if (rep.episodes[0].certificate.feasible()) { GTEST_SKIP() << "episode certifies"; }
  EXPECT_EQ(rep.exit_code, kExitInfeasible);
  EXPECT_EQ(rep.episodes[0].status, "refused");
  EXPECT_FALSE(rep.episodes[0].log.has_value());
}

TEST(Harness, TubeOutsideWorkspaceIsViolation)
{
  auto j = small_json();
  j["episodes"] = {{{"N", 0}, {"omega", 30}, {"Gamma", 2e6}, {"rho_a", 1.2}, {"eps", 0.05}}};
  j["planner"]["mppi"]["max_steps"] = 20;
  const auto ctx = context_from(j);
  const auto rep = run_campaign(*ctx, true);
  EXPECT_GT(rep.episodes[0].tube_box_excess, 0.0);
  EXPECT_EQ(rep.episodes[0].status, "violation");
  EXPECT_EQ(rep.exit_code, kExitTubeViolation);
  EXPECT_FALSE(rep.episodes[0].log.has_value());
}

TEST(Outputs, EmptyListWritesNothing)
{
  const auto ctx = context_from(small_json());
  const auto dir = fresh_dir("empty_out");
  emit_outputs({}, dir, *ctx);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Outputs, LayoutHeadersAndTubePolylines)
{
  const auto ctx = context_from(small_json());
  const auto & rep = small_forced();
  const auto dir = fresh_dir("small_out");
  emit_outputs(rep.episodes, dir, *ctx);
  for (const char * f : {"campaign.json", "scene.json", "bounds.csv", "tubes.csv"}) { EXPECT_TRUE(fs::exists(dir / f)) << f; }
  for (const char * f : {"certificate.json", "plan.csv", "obstacles_inflated.csv", "trace.csv", "tube.csv", "envelope.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "episode_1" / f)) << f;
  }

  std::string header;
  const auto trace = read_csv(dir / "episode_1" / "trace.csv", &header);
  std::string expect;
  for (const auto & h : SimLog::header()) { expect += (expect.empty() ? "" : ",") + h; }
  EXPECT_EQ(header, expect);
  const auto & log = *rep.episodes[1].log;
  ASSERT_EQ(trace.size(), log.rows.size());
  for (int i = 0; i < SimLog::kColumns; ++i) { EXPECT_EQ(trace.back()[i], log.rows.back()[i]); }

  // every tube polygon contains the rho-disc around x_d and the realized position
  const double rho = rep.episodes[1].certificate.tube.rho;
  const auto tube = read_csv(dir / "episode_1" / "tube.csv");
  ASSERT_EQ(tube.size() % 16, 0u);
  for (std::size_t s = 0; s < tube.size(); s += 16) {
    Polygon p;
    for (int v = 0; v < 16; ++v) { p.v.push_back(Point2(tube[s + v][3], tube[s + v][4])); }
    ASSERT_TRUE(p.convex_ccw());
    const auto k = static_cast<std::size_t>(tube[s][0]);
    const Vec<6> xd = log.x_d(k);
    for (int a = 0; a < 32; ++a) {
      const double th = 2 * M_PI * a / 32;
      EXPECT_GE(p.signed_depth(Point2(xd(0) + rho * std::cos(th), xd(1) + rho * std::sin(th))), -1e-12);
    }
    EXPECT_GE(p.signed_depth(log.x(k).head<2>()), 0.0);
  }

  const auto env = read_csv(dir / "episode_1" / "envelope.csv", &header);
  EXPECT_EQ(header.substr(0, 22), "t,rho,uub,x_d0,lower0,");
  EXPECT_EQ(env.size(), log.rows.size());
}

TEST(Cli, ExitCodes)
{
  const auto dir = fresh_dir("cli");
  fs::create_directories(dir);
  auto j = default_json();
  j["gp"]["delta"] = 2.0;
  j["metric"] = std::string(RL1GP_DATA_DIR) + "/quadrotor_metric.json";
  write_json(j, (dir / "bad.json").string());
  EXPECT_EQ(run_cli("campaign --config " + (dir / "bad.json").string()), kExitConfig);
  EXPECT_NE(run_cli("campaign"), 0);  // missing --config

  auto s = small_json();
  s["metric"] = j["metric"];
  s["episodes"] = {s["episodes"][0]};
  write_json(s, (dir / "small.json").string());
  const auto ctx = context_from(s);
  const auto rep = run_campaign(*ctx, false);
  const int expect = rep.exit_code;
  EXPECT_EQ(run_cli("campaign --config " + (dir / "small.json").string() + " --out " + (dir / "o").string()), expect);

  // certify the plan the campaign wrote
  write_plan_csv(rep.episodes[0].planning.plan, (dir / "plan.csv").string());
  const int c = run_cli("certify --config " + (dir / "small.json").string() + " --plan " + (dir / "plan.csv").string());
  EXPECT_EQ(c, rep.episodes[0].certificate.feasible() ? kExitOk : kExitInfeasible);
}
