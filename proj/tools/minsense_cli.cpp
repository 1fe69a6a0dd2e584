// minsense: plan, smooth, validate, render and bench belief paths.
//
// Exit codes: 0 ok, 1 malformed input, 2 no solution, 3 infeasible seed path,
// 4 validation failure, 5 internal error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "minsense/errors.hpp"
#include "minsense/io.hpp"
#include "minsense/planner.hpp"
#include "minsense/smoother.hpp"

using namespace minsense;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kMalformed = 1, kNoSolution = 2, kInitInfeasible = 3, kValidation = 4, kInternal = 5 };

struct Options {
  std::string env;
  std::string path;
  std::string out = ".";
  std::vector<double> alpha;
  double pr = 0.9;
  double w_scale = 0.2e-3;
  int nodes = 500;
  int iters = 15;
  double tol = 1e-6;
  int steps = 0;
  std::uint64_t seed = 0;
  int mc_samples = 10000;
  int grid = 101;
};

ProcessModel model_of(const Options& o, int d) { return ProcessModel{o.w_scale * Mat::Identity(d, d), 1.0}; }

io::Scenario load_env(const Options& o) { return io::parse_scenario(io::read_file(o.env), o.env); }

BeliefPath load_path(const Options& o) { return io::parse_path(io::read_file(o.path), o.path); }

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return fs::path(o.out);
}

// Sum of the per-step entropy reductions, without the alpha weight.
double info_amount(const BeliefPath& p) {
  double s = 0.0;
  for (int k = 1; k <= p.K(); ++k) {
    const auto& st = p.steps[static_cast<std::size_t>(k)];
    s += 0.5 * h3(st.Q, st.S);
  }
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

BeliefPath plan(const io::Scenario& sc, const Options& o, double alpha, Tree* tree_out) {
  if (!sc.start) throw ParseError(o.env + ": planning needs a \"start\" entry with x and P");
  const SafetyConfig safety = SafetyConfig::from_probability(o.pr, sc.env.dim());
  const ProcessModel model = model_of(o, sc.env.dim());
  PlannerConfig pc;
  pc.n_nodes = o.nodes;
  pc.seed = mix_seed(o.seed, 0x706c616e);  // planner sub-stream
  Planner planner(sc.env, model, safety, alpha, pc);
  const Tree& tree = planner.build(sc.start->x, sc.start->P);
  if (tree_out) *tree_out = tree;
  BeliefPath p = extract_path(tree, sc.env, model, safety, o.steps);
  p.alpha = alpha;
  return p;
}

SmoothResult run_smoother(const io::Scenario& sc, const Options& o, const BeliefPath& seed, double alpha) {
  SmootherConfig cfg;
  cfg.alpha = alpha;
  cfg.safety = SafetyConfig::from_probability(o.pr, sc.env.dim());
  cfg.max_iters = o.iters;
  cfg.tol = o.tol;
  return smooth(seed, sc.env, model_of(o, sc.env.dim()), cfg);
}

int cmd_plan(const Options& o) {
  const io::Scenario sc = load_env(o);
  const double alpha = o.alpha.empty() ? 1.0 : o.alpha.front();
  Tree tree;
  const BeliefPath p = plan(sc, o, alpha, &tree);
  const fs::path dir = out_dir(o);
  io::write_file((dir / "path.json").string(), io::path_to_json(p));
  io::write_file((dir / "tree.json").string(), io::tree_to_json(tree));
  const CostBreakdown c = path_cost_parts(p);
  std::printf("plan: K=%d cost=%.10g (control %.10g, info %.10g) nodes=%zu -> %s\n", p.K(), c.total(), c.control, c.info,
              tree.nodes.size(), (dir / "path.json").string().c_str());
  return kOk;
}

int cmd_smooth(const Options& o) {
  const io::Scenario sc = load_env(o);
  const BeliefPath seed = load_path(o);
  const double alpha = o.alpha.empty() ? seed.alpha : o.alpha.front();
  const SmoothResult r = run_smoother(sc, o, seed, alpha);
  const double chi2 = SafetyConfig::from_probability(o.pr, sc.env.dim()).chi2;
  const ProcessModel model = model_of(o, sc.env.dim());
  const fs::path dir = out_dir(o);
  io::write_file((dir / "smoothed.json").string(), io::path_to_json(r.path));
  io::write_file((dir / "trace.csv").string(), io::trace_csv(r.trace));
  io::write_file((dir / "certificates.json").string(), io::certificates_to_json(r.path, sc.env, model, chi2));
  if (sc.env.dim() == 2) {
    io::write_file((dir / "before.svg").string(), io::render_svg(sc.env, &seed, chi2));
    io::write_file((dir / "after.svg").string(), io::render_svg(sc.env, &r.path, chi2));
  }
  std::printf("smooth: %zu iterations, cost %.10g -> %.10g%s%s\n", r.cost_history.size() - 1, r.cost_history.front(),
              r.cost_history.back(), r.converged ? " (converged)" : "", r.stalled ? " (solver stalled)" : "");
  if (!r.final_verdict.ok()) {
    std::fprintf(stderr, "smooth: final path failed re-certification\n");
    return kValidation;
  }
  return kOk;
}

int cmd_validate(const Options& o) {
  const io::Scenario sc = load_env(o);
  const BeliefPath p = load_path(o);
  const int d = sc.env.dim();
  const SafetyConfig safety = SafetyConfig::from_probability(o.pr, d);
  const ProcessModel model = model_of(o, d);

  bool transitions = true;
  int bad_k = -1, bad_j = -1;
  for (int k = 1; k <= p.K() && transitions; ++k) {
    const auto& prev = p.steps[static_cast<std::size_t>(k - 1)];
    const auto v = transition_safe(prev.x, p.steps[static_cast<std::size_t>(k)].x, prev.posterior_cov(), model.W, sc.env,
                                   safety.chi2, true);
    if (!v.safe) {
      transitions = false;
      bad_k = k;
      bad_j = v.first_unsafe;
    }
  }
  const auto& last = p.steps.back();
  const bool admissible = admissible_final(last.x, last.Q, last.S, sc.env, safety.chi2);
  const double kf = check_kf_tightness(p, model);
  const MonteCarloReport mc =
      monte_carlo_marginal_collision(p, sc.env, model, o.mc_samples, o.grid, mix_seed(o.seed, 0x6d63));
  const double bound = (1.0 - o.pr) + 3.0 * std::sqrt(o.pr * (1.0 - o.pr) / o.mc_samples);

  struct Row {
    const char* name;
    bool ok;
    std::string detail;
  };
  char buf[160];
  std::vector<Row> rows;
  std::snprintf(buf, sizeof buf, bad_k < 0 ? "%d transitions" : "transition %d, obstacle %d", bad_k < 0 ? p.K() : bad_k,
                bad_j);
  rows.push_back({"transition_safe", transitions, buf});
  rows.push_back({"admissible_final", admissible, admissible ? "target contains the final ellipse" : "final ellipse leaves the target"});
  std::snprintf(buf, sizeof buf, "max residual %.3g (limit 1e-5)", kf);
  rows.push_back({"kf_tightness", kf <= 1e-5, buf});
  std::snprintf(buf, sizeof buf, "max frequency %.4f at k=%d s=%.3f (limit %.4f)", mc.max_frequency, mc.worst_k,
                mc.worst_s, bound);
  rows.push_back({"monte_carlo", mc.max_frequency <= bound, buf});

  bool all = true;
  std::printf("%-18s %-6s %s\n", "check", "result", "detail");
  for (const auto& r : rows) {
    std::printf("%-18s %-6s %s\n", r.name, r.ok ? "pass" : "FAIL", r.detail.c_str());
    if (!r.ok) {
      std::fprintf(stderr, "validate: %s failed\n", r.name);
      all = false;
    }
  }
  return all ? kOk : kValidation;
}

int cmd_render(const Options& o) {
  const io::Scenario sc = load_env(o);
  const double chi2 = SafetyConfig::from_probability(o.pr, sc.env.dim()).chi2;
  std::string svg;
  if (o.path.empty()) {
    svg = io::render_svg(sc.env, nullptr, chi2);
  } else {
    const BeliefPath p = load_path(o);
    svg = io::render_svg(sc.env, &p, chi2);
  }
  fs::path target(o.out);
  if (fs::is_directory(target)) target /= "render.svg";
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  io::write_file(target.string(), svg);
  std::printf("render: %s\n", target.string().c_str());
  return kOk;
}

int cmd_bench(const Options& o) {
  const io::Scenario sc = load_env(o);
  const std::vector<double> alphas = o.alpha.empty() ? std::vector<double>{0.1, 1.0} : o.alpha;
  const fs::path dir = out_dir(o);
  std::printf("%-6s %-4s %-12s %-12s %-12s %-8s %-8s\n", "alpha", "K", "seed_cost", "smooth_cost", "info", "plan_s",
              "smooth_s");
  for (double a : alphas) {
    const auto t0 = std::chrono::steady_clock::now();
    const BeliefPath seed = plan(sc, o, a, nullptr);
    const double tp = seconds_since(t0);
    const auto t1 = std::chrono::steady_clock::now();
    const SmoothResult r = run_smoother(sc, o, seed, a);
    const double ts = seconds_since(t1);
    char name[64];
    std::snprintf(name, sizeof name, "trace_alpha%g.csv", a);
    io::write_file((dir / name).string(), io::trace_csv(r.trace));
    std::snprintf(name, sizeof name, "smoothed_alpha%g.json", a);
    io::write_file((dir / name).string(), io::path_to_json(r.path));
    std::printf("%-6g %-4d %-12.6g %-12.6g %-12.6g %-8.2f %-8.2f\n", a, seed.K(), r.cost_history.front(),
                r.cost_history.back(), info_amount(r.path), tp, ts);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Belief-space planning and smoothing with collision certificates"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c, bool needs_path) {
    c->add_option("--env", o.env, "environment JSON")->required()->check(CLI::ExistingFile);
    if (needs_path) c->add_option("--path", o.path, "belief path JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--pr", o.pr, "confidence level")->check(CLI::Range(1e-6, 1.0 - 1e-12));
    c->add_option("--w-scale", o.w_scale, "process noise per step, W = w I")->check(CLI::PositiveNumber);
    c->add_option("--out", o.out, "output directory (file for render)");
  };
  auto planning = [&](CLI::App* c) {
    c->add_option("--nodes", o.nodes, "planner node count")->check(CLI::Range(2, 1000000));
    c->add_option("--seed", o.seed, "root random seed");
    c->add_option("--steps", o.steps, "transitions in the extracted path (0 keeps the tree's)")->check(CLI::NonNegativeNumber);
  };
  auto smoothing = [&](CLI::App* c) {
    c->add_option("--iters", o.iters, "CCP iterations")->check(CLI::Range(1, 100000));
    c->add_option("--tol", o.tol, "stop once the cost decrease falls below this");
  };

  CLI::App* plan_cmd = app.add_subcommand("plan", "grow the tree and extract a seed path");
  common(plan_cmd, false);
  planning(plan_cmd);
  plan_cmd->add_option("--alpha", o.alpha, "information weight")->expected(1);

  CLI::App* smooth_cmd = app.add_subcommand("smooth", "run the CCP smoother on a seed path");
  common(smooth_cmd, true);
  smoothing(smooth_cmd);
  smooth_cmd->add_option("--alpha", o.alpha, "information weight (default: the path's)")->expected(1);

  CLI::App* validate_cmd = app.add_subcommand("validate", "certify a path and run the Monte Carlo check");
  common(validate_cmd, true);
  validate_cmd->add_option("--seed", o.seed, "Monte Carlo seed");
  validate_cmd->add_option("--samples", o.mc_samples, "Monte Carlo samples per grid point")->check(CLI::Range(1, 100000000));
  validate_cmd->add_option("--grid", o.grid, "grid points per transition")->check(CLI::Range(2, 100000));

  CLI::App* render_cmd = app.add_subcommand("render", "draw an environment and optional path as SVG");
  render_cmd->add_option("--env", o.env, "environment JSON")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--path", o.path, "belief path JSON")->check(CLI::ExistingFile);
  render_cmd->add_option("--pr", o.pr, "confidence level")->check(CLI::Range(1e-6, 1.0 - 1e-12));
  render_cmd->add_option("--out", o.out, "SVG file or directory");

  CLI::App* bench_cmd = app.add_subcommand("bench", "plan and smooth for each alpha, with timings");
  common(bench_cmd, false);
  planning(bench_cmd);
  smoothing(bench_cmd);
  bench_cmd->add_option("--alpha", o.alpha, "information weights (default 0.1 1.0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kMalformed;
  }

  try {
    if (*plan_cmd) return cmd_plan(o);
    if (*smooth_cmd) return cmd_smooth(o);
    if (*validate_cmd) return cmd_validate(o);
    if (*render_cmd) return cmd_render(o);
    if (*bench_cmd) return cmd_bench(o);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMalformed;
  } catch (const ShapeMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMalformed;
  } catch (const NoSolution& e) {
    std::fprintf(stderr, "no solution: %s\n", e.what());
    return kNoSolution;
  } catch (const InitInfeasible& e) {
    std::fprintf(stderr, "infeasible seed: transition k=%d obstacle j=%d is not certificate-safe\n", e.k, e.j);
    return kInitInfeasible;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "infeasible seed: %s\n", e.what());
    return kInitInfeasible;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kInternal;
}
