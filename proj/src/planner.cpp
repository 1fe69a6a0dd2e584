#include "minsense/planner.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <random>

#include "minsense/conic.hpp"
#include "minsense/errors.hpp"

namespace minsense {

namespace {

constexpr std::uint64_t kPlannerStream = 0x706c616e6e6572ULL;

bool static_safe(const Vec& x, const Mat& P, const Environment& env, double chi2) {
  const double tol = certificate_tol(chi2);
  for (const auto& obs : env.unified)
    if (discrete_dual(x, P, obs).value < chi2 - tol) return false;
  return true;
}

Vec sample_in(const Polytope& p, const std::pair<Vec, Vec>& bb, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec x(bb.first.size());
  for (int tries = 0; tries < 10000; ++tries) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = bb.first(i) + u(rng) * (bb.second(i) - bb.first(i));
    if (p.contains(x)) return x;
  }
  throw NumericalFailure("sampler: region has negligible volume inside its bounding box");
}

}  // namespace

std::pair<Vec, Vec> bounding_box(const Polytope& p) {
  const int d = p.dim();
  Vec lo(d), hi(d);
  if (d == 2) {
    if (!is_bounded_2d(p)) throw DomainError("bounding box: polytope is unbounded");
    const auto v = vertices_2d(p);
    if (v.empty()) throw DomainError("bounding box: polytope is empty");
    lo = v.front();
    hi = v.front();
    for (const auto& q : v) {
      lo = lo.cwiseMin(Vec(q));
      hi = hi.cwiseMax(Vec(q));
    }
    return {lo, hi};
  }
  for (int i = 0; i < d; ++i)
    for (int sgn : {1, -1}) {
      conic::ConicProblem lp;
      const conic::VecVar x = lp.add_vector("x", d);
      lp.add_objective(static_cast<double>(sgn) * x(i));
      for (int r = 0; r < p.faces(); ++r) lp.add_nonneg(p.b(r) - conic::dot(p.A.row(r).transpose(), x.exprs()));
      const auto sol = conic::solve(lp);
      if (sol.status != conic::Status::optimal) throw DomainError("bounding box: polytope is unbounded");
      (sgn > 0 ? lo : hi)(i) = sol.value(x)(i);
    }
  return {lo, hi};
}

Vec generate(const PlannerConfig& config, const Environment& env, int index) {
  std::mt19937_64 rng(mix_seed(mix_seed(config.seed, kPlannerStream), static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool goal = u(rng) < config.goal_bias;
  const Polytope& region = goal ? env.target : env.domain;
  return sample_in(region, bounding_box(region), rng);
}

int nearest(const Tree& tree, const Vec& x) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (const auto& n : tree.nodes) {
    const double d = (n.state.x - x).squaredNorm();
    if (d < bd) {
      bd = d;
      best = n.id;
    }
  }
  return best;
}

Vec scale(const Vec& x_near, const Vec& x_sample, double ed_min) {
  if (!(ed_min > 0.0)) throw DomainError("scale: ed_min must be positive");
  const Vec d = x_sample - x_near;
  const double n = d.norm();
  if (n <= ed_min) return x_sample;
  return x_near + (ed_min / n) * d;
}

std::optional<SteerResult> edge_steer(const BeliefState& parent, const Vec& x_new, const SteerContext& ctx) {
  const Mat P_par = parent.posterior_cov();
  const Mat& W = ctx.model.W;
  const double chi2 = ctx.safety.chi2;
  if (!transition_safe(parent.x, x_new, P_par, W, ctx.env, chi2, true, true).safe) return std::nullopt;

  const Mat Q = inverse_spd(P_par + W);
  const int d = static_cast<int>(Q.rows());
  const Mat I = Mat::Identity(d, d);
  auto hold = [&](double s) {
    return static_safe(x_new, inverse_spd(Q + s * I) + ctx.lookahead * W, ctx.env, chi2);
  };
  std::optional<double> s = minimal_isotropic_info(hold, ctx.s_max);
  bool admissible = false;
  if (ctx.env.target.contains(x_new)) {
    auto adm = [&](double v) { return admissible_final(x_new, Q, v * I, ctx.env, chi2); };
    if (const auto sa = minimal_isotropic_info(adm, ctx.s_max)) {
      s = std::max(s.value_or(0.0), *sa);
      admissible = true;
    }
  }
  if (!s) return std::nullopt;

  SteerResult out;
  out.state = BeliefState{x_new, Q, *s * I};
  out.cost = step_cost(parent.x, x_new, Q, out.state.S, ctx.alpha);
  out.admissible = admissible;
  return out;
}

// ---------------------------------------------------------------------------

Planner::Planner(const Environment& env, const ProcessModel& model, SafetyConfig safety, double alpha,
                 PlannerConfig config)
    : env_(env),
      model_(model),
      safety_(safety),
      alpha_(alpha),
      config_(config),
      ctx_{env, model, safety, alpha, config.s_max, config.lookahead} {
  if (config_.n_nodes < 2) throw DomainError("planner: n_nodes must be at least 2");
  if (!(config_.ed_min > 0.0)) throw DomainError("planner: ed_min must be positive");
  if (!(config_.goal_bias >= 0.0 && config_.goal_bias <= 1.0)) throw DomainError("planner: goal_bias outside [0, 1]");
}

void Planner::reset(const Vec& x0, const Mat& P0) {
  tree_ = Tree{};
  tree_.alpha = alpha_;
  cache_.clear();
  TreeNode root;
  root.id = 0;
  const int d = static_cast<int>(P0.rows());
  root.state = BeliefState{x0, inverse_spd(P0), Mat::Zero(d, d)};
  root.admissible = admissible_final(x0, root.state.Q, root.state.S, env_, safety_.chi2);
  tree_.nodes.push_back(std::move(root));
}

std::vector<int> Planner::neighbors(const Vec& x) const {
  std::vector<int> out;
  const double r2 = config_.ig_min * config_.ig_min;
  for (const auto& n : tree_.nodes)
    if ((n.state.x - x).squaredNorm() <= r2) out.push_back(n.id);
  return out;
}

std::optional<SteerResult> Planner::steer_between(int from, int to) {
  const auto key = std::make_tuple(from, to, tree_.nodes[static_cast<std::size_t>(from)].version);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  auto r = edge_steer(tree_.nodes[static_cast<std::size_t>(from)].state,
                      tree_.nodes[static_cast<std::size_t>(to)].state.x, ctx_);
  cache_.emplace(key, r);
  return r;
}

void Planner::set_parent(int node, int parent) {
  auto& n = tree_.nodes[static_cast<std::size_t>(node)];
  if (n.parent >= 0) {
    auto& ch = tree_.nodes[static_cast<std::size_t>(n.parent)].children;
    ch.erase(std::remove(ch.begin(), ch.end(), node), ch.end());
  }
  n.parent = parent;
  auto& ch = tree_.nodes[static_cast<std::size_t>(parent)].children;
  ch.insert(std::upper_bound(ch.begin(), ch.end(), node), node);
}

int Planner::extend_and_rewire(const Vec& x_new, int nearest_id) {
  const auto first = edge_steer(tree_.nodes[static_cast<std::size_t>(nearest_id)].state, x_new, ctx_);
  if (!first) return -1;

  const std::vector<int> nbrs = neighbors(x_new);
  int best_parent = nearest_id;
  SteerResult best = *first;
  double best_total = tree_.nodes[static_cast<std::size_t>(nearest_id)].cost_from_root + first->cost;
  for (int nb : nbrs) {
    if (nb == nearest_id) continue;
    const auto& n = tree_.nodes[static_cast<std::size_t>(nb)];
    // the information term is nonnegative, so distance alone bounds the edge cost
    if (n.cost_from_root + (n.state.x - x_new).squaredNorm() >= best_total) continue;
    const auto r = edge_steer(n.state, x_new, ctx_);
    if (r && n.cost_from_root + r->cost < best_total) {
      best_total = n.cost_from_root + r->cost;
      best = *r;
      best_parent = nb;
    }
  }

  TreeNode node;
  node.id = static_cast<int>(tree_.nodes.size());
  node.state = best.state;
  node.cost_from_root = best_total;
  node.edge_cost = best.cost;
  node.admissible = best.admissible;
  tree_.nodes.push_back(std::move(node));
  const int id = static_cast<int>(tree_.nodes.size()) - 1;
  set_parent(id, best_parent);

  for (int nb : nbrs) {
    if (nb == best_parent) continue;
    const auto& n = tree_.nodes[static_cast<std::size_t>(nb)];
    if (best_total + (n.state.x - x_new).squaredNorm() >= n.cost_from_root) continue;
    if (try_rewire(nb, id)) ++tree_.rewires;
  }
  return id;
}

bool Planner::try_rewire(int node, int via) {
  // via must not sit below node
  for (int a = via; a >= 0; a = tree_.nodes[static_cast<std::size_t>(a)].parent)
    if (a == node) return false;
  const auto r = steer_between(via, node);
  if (!r) return false;
  const auto& vn = tree_.nodes[static_cast<std::size_t>(via)];
  const double new_cost = vn.cost_from_root + r->cost;
  if (!(new_cost < tree_.nodes[static_cast<std::size_t>(node)].cost_from_root - 1e-12)) return false;

  // Beliefs below node change with it: re-steer the whole subtree first and
  // only commit if every edge survives and no cost goes up.
  struct Update {
    int id;
    SteerResult res;
    double cost;
  };
  std::vector<Update> updates{{node, *r, new_cost}};
  std::map<int, std::size_t> slot{{node, 0}};
  for (std::size_t q = 0; q < updates.size(); ++q) {
    const int cur = updates[q].id;
    for (int c : tree_.nodes[static_cast<std::size_t>(cur)].children) {
      const auto& cn = tree_.nodes[static_cast<std::size_t>(c)];
      const auto rc = edge_steer(updates[q].res.state, cn.state.x, ctx_);
      if (!rc) return false;
      const double cc = updates[q].cost + rc->cost;
      if (cc > cn.cost_from_root + 1e-12) return false;
      slot[c] = updates.size();
      updates.push_back({c, *rc, cc});
    }
  }
  set_parent(node, via);
  for (const auto& u : updates) {
    auto& n = tree_.nodes[static_cast<std::size_t>(u.id)];
    n.state = u.res.state;
    n.edge_cost = u.res.cost;
    n.cost_from_root = u.cost;
    n.admissible = u.res.admissible;
    ++n.version;
  }
  return true;
}

int Planner::step(int sample_index) {
  ++tree_.samples_drawn;
  const Vec xs = generate(config_, env_, sample_index);
  const int near = nearest(tree_, xs);
  const Vec x_new = scale(tree_.nodes[static_cast<std::size_t>(near)].state.x, xs, config_.ed_min);
  if ((x_new - tree_.nodes[static_cast<std::size_t>(near)].state.x).norm() < 1e-9) return -1;
  return extend_and_rewire(x_new, near);
}

const Tree& Planner::build(const Vec& x0, const Mat& P0) {
  reset(x0, P0);
  const int budget = config_.max_attempts > 0 ? config_.max_attempts : 50 * config_.n_nodes;
  for (int i = 0; static_cast<int>(tree_.nodes.size()) < config_.n_nodes && i < budget; ++i) step(i);
  return tree_;
}

double Planner::cost_consistency_error() const {
  double err = 0.0;
  for (const auto& n : tree_.nodes) {
    if (n.parent < 0) {
      err = std::max(err, std::abs(n.cost_from_root));
      continue;
    }
    const auto& p = tree_.nodes[static_cast<std::size_t>(n.parent)];
    const double edge = step_cost(p.state.x, n.state.x, n.state.Q, n.state.S, alpha_);
    err = std::max(err, std::abs(p.cost_from_root + edge - n.cost_from_root));
  }
  return err;
}

bool Planner::is_acyclic() const {
  const int n = static_cast<int>(tree_.nodes.size());
  for (const auto& node : tree_.nodes) {
    int hops = 0;
    for (int a = node.id; a != 0; a = tree_.nodes[static_cast<std::size_t>(a)].parent) {
      if (a < 0 || ++hops > n) return false;
    }
    for (int c : node.children)
      if (tree_.nodes[static_cast<std::size_t>(c)].parent != node.id) return false;
  }
  return tree_.nodes.empty() || tree_.nodes.front().parent == -1;
}

// ---------------------------------------------------------------------------

BeliefPath greedy_measurements(const std::vector<Vec>& means, const Mat& P0, const Environment& env,
                               const ProcessModel& model, const SafetyConfig& safety, double alpha, double s_max) {
  const int K = static_cast<int>(means.size()) - 1;
  if (K < 1) throw DomainError("greedy measurements: need at least two means");
  const int d = static_cast<int>(P0.rows());
  const Mat I = Mat::Identity(d, d);
  const double chi2 = safety.chi2;
  BeliefPath path;
  path.alpha = alpha;
  path.steps.push_back({means[0], inverse_spd(P0), Mat::Zero(d, d)});
  if (!transition_safe(means[0], means[1], P0, model.W, env, chi2, true, true).safe)
    throw NoSolution("first transition is unsafe from the initial belief");
  Mat P = P0;
  for (int k = 1; k <= K; ++k) {
    const Mat Q = inverse_spd(P + model.W);
    const Vec& x = means[static_cast<std::size_t>(k)];
    std::optional<double> s;
    if (k < K) {
      const Vec& xn = means[static_cast<std::size_t>(k + 1)];
      s = minimal_isotropic_info(
          [&](double v) { return transition_safe(x, xn, inverse_spd(Q + v * I), model.W, env, chi2, true, true).safe; },
          s_max);
    } else {
      s = minimal_isotropic_info([&](double v) { return admissible_final(x, Q, v * I, env, chi2); }, s_max);
    }
    if (!s) throw NoSolution("no measurement up to the cap certifies step " + std::to_string(k));
    path.steps.push_back({x, Q, *s * I});
    P = inverse_spd(Q + *s * I);
  }
  return path;
}

BeliefPath extract_path(const Tree& tree, const Environment& env, const ProcessModel& model,
                        const SafetyConfig& safety, int k_target, double s_max) {
  int best = -1;
  for (const auto& n : tree.nodes)
    if (n.admissible && (best < 0 || n.cost_from_root < tree.nodes[static_cast<std::size_t>(best)].cost_from_root))
      best = n.id;
  if (best < 0) throw NoSolution("no admissible final state in the tree");

  std::vector<Vec> means;
  BeliefPath chain;
  chain.alpha = tree.alpha;
  for (int a = best; a >= 0; a = tree.nodes[static_cast<std::size_t>(a)].parent) {
    means.push_back(tree.nodes[static_cast<std::size_t>(a)].state.x);
    chain.steps.push_back(tree.nodes[static_cast<std::size_t>(a)].state);
  }
  std::reverse(means.begin(), means.end());
  std::reverse(chain.steps.begin(), chain.steps.end());
  if (chain.K() >= 1 && (k_target <= 0 || chain.K() == k_target)) return chain;
  const auto& root = tree.nodes.front().state;
  const Mat P0 = inverse_spd(root.Q + root.S);
  if (means.size() == 1) {
    // root already admissible: hold in place for one step
    means.push_back(means.front());
  }

  if (k_target > 0) {
    while (static_cast<int>(means.size()) - 1 < k_target) {
      std::size_t li = 0;
      double ld = -1.0;
      for (std::size_t i = 0; i + 1 < means.size(); ++i) {
        const double len = (means[i + 1] - means[i]).norm();
        if (len > ld + 1e-15) {
          ld = len;
          li = i;
        }
      }
      means.insert(means.begin() + static_cast<std::ptrdiff_t>(li) + 1, 0.5 * (means[li] + means[li + 1]));
    }
    while (static_cast<int>(means.size()) - 1 > k_target) {
      // Try interior vertices in order of how far they bend the path.
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t i = 1; i + 1 < means.size(); ++i) {
        const Vec a = means[i - 1], b = means[i + 1], v = means[i];
        const Vec ab = b - a;
        const double t = ab.squaredNorm() > 0 ? std::clamp((v - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0) : 0.0;
        order.emplace_back((a + t * ab - v).norm(), i);
      }
      std::sort(order.begin(), order.end());
      bool merged = false;
      for (const auto& [dev, i] : order) {
        std::vector<Vec> trial = means;
        trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(i));
        try {
          greedy_measurements(trial, P0, env, model, safety, tree.alpha, s_max);
        } catch (const NoSolution&) {
          continue;
        }
        means = std::move(trial);
        merged = true;
        break;
      }
      if (!merged) throw NoSolution("cannot merge the extracted path down to the requested step count");
    }
  }
  return greedy_measurements(means, P0, env, model, safety, tree.alpha, s_max);
}

}  // namespace minsense
