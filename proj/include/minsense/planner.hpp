#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "minsense/belief.hpp"
#include "minsense/collision.hpp"
#include "minsense/geometry.hpp"

namespace minsense {

struct PlannerConfig {
  int n_nodes = 500;
  double ed_min = 0.1;     // steering radius (m)
  double ig_min = 0.3;     // neighbor radius (m, Euclidean on means)
  std::uint64_t seed = 0;
  double goal_bias = 0.05;
  double s_max = 1e4;      // cap on isotropic measurement information (m^-2)
  int lookahead = 3;       // hold steps a new node must survive without sensing
  int max_attempts = 0;    // sampling budget; 0 means 50 * n_nodes
};

struct TreeNode {
  int id = 0;
  BeliefState state;
  int parent = -1;
  double cost_from_root = 0.0;
  double edge_cost = 0.0;
  bool admissible = false;  // final-state condition holds at this node
  int version = 0;          // bumped whenever the belief changes
  std::vector<int> children;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double alpha = 0.0;
  int samples_drawn = 0;
  int rewires = 0;
};

/// Result of steering one edge: arrival belief, steering cost, and whether the
/// arrival state is an admissible final state.
struct SteerResult {
  BeliefState state;
  double cost = 0.0;
  bool admissible = false;
};

/// Everything edge steering needs besides the two endpoints.
struct SteerContext {
  const Environment& env;
  const ProcessModel& model;
  SafetyConfig safety;
  double alpha = 0.0;
  double s_max = 1e4;
  int lookahead = 1;
};

/// i-th planner sample: uniform in the domain, or in the target with
/// probability goal_bias. Depends only on (seed, index).
Vec generate(const PlannerConfig& config, const Environment& env, int index);

/// Node whose mean is closest to x (ties to the lowest id).
int nearest(const Tree& tree, const Vec& x);

Vec scale(const Vec& x_near, const Vec& x_sample, double ed_min);

/// Steers parent -> x_new: certifies the transition, then picks the smallest
/// isotropic measurement s I that keeps the new node safe to hold for
/// `lookahead` steps (and admissible, when x_new lies in the target).
std::optional<SteerResult> edge_steer(const BeliefState& parent, const Vec& x_new, const SteerContext& ctx);

/// Smallest s in {0} U [.., s_max] with pred(s I) true, by bisection on log s.
/// pred must be monotone (true stays true as s grows).
template <typename Pred>
std::optional<double> minimal_isotropic_info(Pred&& pred, double s_max) {
  if (pred(0.0)) return 0.0;
  if (!pred(s_max)) return std::nullopt;
  double lo = std::log(1e-6 * s_max), hi = std::log(s_max);
  if (pred(std::exp(lo))) return std::exp(lo);
  for (int it = 0; it < 24; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (pred(std::exp(mid)))
      hi = mid;
    else
      lo = mid;
  }
  return std::exp(hi);
}

class Planner {
 public:
  Planner(const Environment& env, const ProcessModel& model, SafetyConfig safety, double alpha, PlannerConfig config);

  /// Starts a fresh tree at (x0, P0).
  void reset(const Vec& x0, const Mat& P0);

  /// One sampling iteration; returns the id of the added node or -1.
  int step(int sample_index);

  /// Adds x_new (already scaled): picks the cheapest parent among neighbors,
  /// then rewires neighbors through it. Returns the new id or -1.
  int extend_and_rewire(const Vec& x_new, int nearest_id);

  /// Runs until the tree holds n_nodes nodes or the sampling budget is spent.
  const Tree& build(const Vec& x0, const Mat& P0);

  const Tree& tree() const { return tree_; }
  Tree& mutable_tree() { return tree_; }
  std::vector<int> neighbors(const Vec& x) const;

  /// Cached steering between existing nodes (keyed by node pair and the
  /// parent's belief version).
  std::optional<SteerResult> steer_between(int from, int to);

  /// Recomputes costs from the root and compares with stored values.
  double cost_consistency_error() const;
  bool is_acyclic() const;

 private:
  void set_parent(int node, int parent);
  bool try_rewire(int node, int via);

  const Environment& env_;
  const ProcessModel& model_;
  SafetyConfig safety_;
  double alpha_;
  PlannerConfig config_;
  SteerContext ctx_;
  Tree tree_;
  std::map<std::tuple<int, int, int>, std::optional<SteerResult>> cache_;
};

/// Cheapest admissible node chained back to the root, resampled to k_target
/// transitions (0 keeps the natural count), with measurements re-selected along
/// the fixed mean sequence. Throws NoSolution when no node is admissible or the
/// resampled path cannot be certified.
BeliefPath extract_path(const Tree& tree, const Environment& env, const ProcessModel& model,
                        const SafetyConfig& safety, int k_target, double s_max = 1e4);

/// Beliefs along a fixed mean sequence with the smallest isotropic measurement
/// at each step that certifies the following transition (and admissibility at
/// the last step). Throws NoSolution if some step cannot be certified.
BeliefPath greedy_measurements(const std::vector<Vec>& means, const Mat& P0, const Environment& env,
                               const ProcessModel& model, const SafetyConfig& safety, double alpha,
                               double s_max = 1e4);

/// Axis-aligned bounding box of a bounded polytope (lower, upper).
std::pair<Vec, Vec> bounding_box(const Polytope& p);

}  // namespace minsense
