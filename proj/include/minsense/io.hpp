#pragma once

#include <optional>
#include <string>
#include <vector>

#include "minsense/belief.hpp"
#include "minsense/collision.hpp"
#include "minsense/geometry.hpp"
#include "minsense/planner.hpp"
#include "minsense/smoother.hpp"

namespace minsense::io {

/// Initial belief carried by an environment file under the optional "start" key.
struct Start {
  Vec x;
  Mat P;
};

struct Scenario {
  Environment env;
  std::optional<Start> start;
};

// All parse functions throw ParseError. Syntax errors name line and column;
// schema errors name the offending field. `source` prefixes the message.

Scenario parse_scenario(const std::string& text, const std::string& source = "<input>");
std::string scenario_to_json(const Scenario& s);

BeliefPath parse_path(const std::string& text, const std::string& source = "<input>");
/// Full-precision numbers: parse_path(path_to_json(p)) reproduces p bit for bit.
std::string path_to_json(const BeliefPath& path);

/// Per-transition certificates recomputed from scratch (one entry per
/// transition and unified obstacle) plus the final-state verdict.
std::string certificates_to_json(const BeliefPath& path, const Environment& env, const ProcessModel& model,
                                 double chi2);

/// Node list and parent edges.
std::string tree_to_json(const Tree& tree);

/// Header iter,cost,cost_control,cost_info,viol,ms then one row per entry.
std::string trace_csv(const std::vector<TraceRow>& rows);

struct RenderOptions {
  double width_px = 800.0;
  int segments = 64;
};

/// Domain, obstacles, target, mean polyline, prior (blue) and posterior (red)
/// confidence ellipses at level chi2 for steps 1..K. A null path draws the
/// environment only. 2-D only (ShapeMismatch otherwise). Output depends only
/// on the inputs.
std::string render_svg(const Environment& env, const BeliefPath* path, double chi2, const RenderOptions& opt = {});

/// 64-gon (by default) approximating {x : (x - c)^T P^{-1} (x - c) <= chi2}.
std::vector<Eigen::Vector2d> ellipse_polygon(const Vec& c, const Mat& P, double chi2, int segments = 64);

std::string read_file(const std::string& file);  // ParseError when unreadable
void write_file(const std::string& file, const std::string& content);

}  // namespace minsense::io
