#include "minsense/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "minsense/errors.hpp"

namespace minsense::io {

using nlohmann::json;

namespace {

std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is one past the offending character
    const auto [l, c] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ParseError(source + ":" + std::to_string(l) + ":" + std::to_string(c) + ": invalid JSON (" + e.what() + ")");
  }
}

// Schema errors carry the field path.
struct Ctx {
  const std::string& source;
  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw ParseError(source + ": " + where + ": " + what);
  }
};

const json& field(const Ctx& cx, const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) cx.fail(where, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) cx.fail(where, "missing key \"" + key + "\"");
  return *it;
}

double number(const Ctx& cx, const json& j, const std::string& where) {
  if (!j.is_number()) cx.fail(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) cx.fail(where, "non-finite number");
  return v;
}

Vec vector_of(const Ctx& cx, const json& j, const std::string& where) {
  if (!j.is_array()) cx.fail(where, "expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = number(cx, j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

// Row-major nested arrays; cols < 0 accepts any common width.
Mat matrix_of(const Ctx& cx, const json& j, const std::string& where, int cols = -1) {
  if (!j.is_array()) cx.fail(where, "expected an array of rows");
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Mat(0, std::max(cols, 0));
  Mat m;
  for (int r = 0; r < rows; ++r) {
    const std::string w = where + "[" + std::to_string(r) + "]";
    const Vec row = vector_of(cx, j[static_cast<std::size_t>(r)], w);
    if (r == 0) {
      if (cols >= 0 && row.size() != cols) cx.fail(w, "expected " + std::to_string(cols) + " columns");
      m.resize(rows, row.size());
    } else if (row.size() != m.cols()) {
      cx.fail(w, "row length differs from the first row");
    }
    m.row(r) = row.transpose();
  }
  return m;
}

Polytope polytope_of(const Ctx& cx, const json& j, const std::string& where, int d) {
  Polytope p;
  p.A = matrix_of(cx, field(cx, j, "A", where), where + ".A", d);
  p.b = vector_of(cx, field(cx, j, "b", where), where + ".b");
  if (p.A.rows() == 0) cx.fail(where + ".A", "polytope has no faces");
  if (p.b.size() != p.A.rows()) cx.fail(where + ".b", "length differs from the row count of A");
  return p;
}

json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vec(m.row(r).transpose())));
  return a;
}

json to_json(const Polytope& p) { return {{"A", to_json(p.A)}, {"b", to_json(p.b)}}; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& source) {
  const Ctx cx{source};
  const json j = parse_json(text, source);
  if (!j.is_object()) cx.fail("(root)", "expected an object");
  const Polytope domain = polytope_of(cx, field(cx, j, "domain", "(root)"), "domain", -1);
  const int d = domain.dim();
  std::vector<Polytope> obstacles;
  const json& obs = field(cx, j, "obstacles", "(root)");
  if (!obs.is_array()) cx.fail("obstacles", "expected an array");
  for (std::size_t i = 0; i < obs.size(); ++i)
    obstacles.push_back(polytope_of(cx, obs[i], "obstacles[" + std::to_string(i) + "]", d));
  const Polytope target = polytope_of(cx, field(cx, j, "target", "(root)"), "target", d);

  Scenario s;
  try {
    s.env = build_environment(domain, std::move(obstacles), target);
  } catch (const Error& e) {
    throw ParseError(source + ": invalid environment: " + e.what());
  }
  if (const auto it = j.find("start"); it != j.end()) {
    Start st;
    st.x = vector_of(cx, field(cx, *it, "x", "start"), "start.x");
    st.P = matrix_of(cx, field(cx, *it, "P", "start"), "start.P", d);
    if (st.x.size() != d) cx.fail("start.x", "dimension differs from the domain");
    if (st.P.rows() != d) cx.fail("start.P", "dimension differs from the domain");
    if (!is_symmetric(st.P, 1e-12 * std::max(1.0, st.P.norm())) || min_eigenvalue(st.P) <= 0.0)
      cx.fail("start.P", "not symmetric positive definite");
    s.start = std::move(st);
  }
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["domain"] = to_json(s.env.domain);
  j["obstacles"] = json::array();
  for (const auto& o : s.env.obstacles) j["obstacles"].push_back(to_json(o));
  j["target"] = to_json(s.env.target);
  if (s.start) j["start"] = {{"x", to_json(s.start->x)}, {"P", to_json(s.start->P)}};
  return j.dump(2) + "\n";
}

BeliefPath parse_path(const std::string& text, const std::string& source) {
  const Ctx cx{source};
  const json j = parse_json(text, source);
  BeliefPath p;
  p.alpha = number(cx, field(cx, j, "alpha", "(root)"), "alpha");
  if (p.alpha < 0.0) cx.fail("alpha", "must be nonnegative");
  const json& steps = field(cx, j, "steps", "(root)");
  if (!steps.is_array() || steps.empty()) cx.fail("steps", "expected a nonempty array");
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::string w = "steps[" + std::to_string(k) + "]";
    BeliefState st;
    st.x = vector_of(cx, field(cx, steps[k], "x", w), w + ".x");
    const int d = static_cast<int>(st.x.size());
    st.Q = matrix_of(cx, field(cx, steps[k], "Q", w), w + ".Q", d);
    st.S = matrix_of(cx, field(cx, steps[k], "S", w), w + ".S", d);
    if (d == 0 || st.Q.rows() != d || st.S.rows() != d) cx.fail(w, "x, Q and S dimensions differ");
    if (k > 0 && d != p.steps.front().x.size()) cx.fail(w, "dimension differs from steps[0]");
    p.steps.push_back(std::move(st));
  }
  if (p.K() >= 1) {
    try {
      validate_path(p);
    } catch (const Error& e) {
      throw ParseError(source + ": invalid path: " + e.what());
    }
  }
  return p;
}

std::string path_to_json(const BeliefPath& path) {
  json j;
  j["alpha"] = path.alpha;
  j["steps"] = json::array();
  for (const auto& st : path.steps) j["steps"].push_back({{"x", to_json(st.x)}, {"Q", to_json(st.Q)}, {"S", to_json(st.S)}});
  return j.dump(2) + "\n";
}

std::string certificates_to_json(const BeliefPath& path, const Environment& env, const ProcessModel& model,
                                 double chi2) {
  json j;
  j["chi2"] = chi2;
  j["transitions"] = json::array();
  bool all = true;
  for (int k = 1; k <= path.K(); ++k) {
    const auto& prev = path.steps[static_cast<std::size_t>(k - 1)];
    const auto v = transition_safe(prev.x, path.steps[static_cast<std::size_t>(k)].x, prev.posterior_cov(), model.W,
                                   env, chi2);
    json t = {{"k", k}, {"safe", v.safe}, {"obstacles", json::array()}};
    for (std::size_t o = 0; o < v.certificates.size(); ++o) {
      const auto& c = v.certificates[o];
      json e = {{"j", o}, {"certified", c.has_value()}};
      if (c) {
        e["lambda"] = to_json(c->lambda);
        e["margin"] = c->margin;
      }
      t["obstacles"].push_back(std::move(e));
    }
    all = all && v.safe;
    j["transitions"].push_back(std::move(t));
  }
  const auto& last = path.steps.back();
  const bool adm = admissible_final(last.x, last.Q, last.S, env, chi2);
  j["final_admissible"] = adm;
  j["ok"] = all && adm;
  return j.dump(2) + "\n";
}

std::string tree_to_json(const Tree& tree) {
  json j;
  j["alpha"] = tree.alpha;
  j["nodes"] = json::array();
  j["edges"] = json::array();
  for (const auto& n : tree.nodes) {
    j["nodes"].push_back({{"id", n.id},
                          {"x", to_json(n.state.x)},
                          {"parent", n.parent},
                          {"cost", n.cost_from_root},
                          {"admissible", n.admissible}});
    if (n.parent >= 0) j["edges"].push_back({n.parent, n.id});
  }
  return j.dump() + "\n";
}

std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string s = "iter,cost,cost_control,cost_info,viol,ms\n";
  for (const auto& r : rows)
    s += std::to_string(r.iter) + "," + num(r.cost) + "," + num(r.cost_control) + "," + num(r.cost_info) + "," +
         num(r.viol) + "," + num(r.ms) + "\n";
  return s;
}

std::vector<Eigen::Vector2d> ellipse_polygon(const Vec& c, const Mat& P, double chi2, int segments) {
  if (c.size() != 2 || P.rows() != 2 || P.cols() != 2) throw ShapeMismatch("ellipse_polygon: 2-D only");
  const Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(P));
  const Mat L = es.eigenvectors() * (chi2 * es.eigenvalues().cwiseMax(0.0)).cwiseSqrt().asDiagonal();
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(segments));
  const double pi = std::acos(-1.0);
  for (int i = 0; i < segments; ++i) {
    const double th = 2.0 * pi * i / segments;
    pts.emplace_back(c + L * Eigen::Vector2d(std::cos(th), std::sin(th)));
  }
  return pts;
}

std::string render_svg(const Environment& env, const BeliefPath* path, double chi2, const RenderOptions& opt) {
  if (env.dim() != 2) throw ShapeMismatch("render: 2-D environments only");
  const auto [lo, hi] = bounding_box(env.domain);
  const double span_x = hi(0) - lo(0), span_y = hi(1) - lo(1);
  const double s = opt.width_px / span_x;
  const double H = span_y * s;
  auto X = [&](double x) { return px((x - lo(0)) * s); };
  auto Y = [&](double y) { return px((hi(1) - y) * s); };  // y up
  auto points = [&](const std::vector<Eigen::Vector2d>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + X(v[i].x()) + "," + Y(v[i].y());
    return out;
  };
  auto poly = [&](const Polytope& p, const std::string& cls, const std::string& style) {
    return "<polygon class=\"" + cls + "\" points=\"" + points(vertices_2d(p)) + "\" " + style + "/>\n";
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(opt.width_px) << "\" height=\"" << px(H)
     << "\" viewBox=\"0 0 " << px(opt.width_px) << " " << px(H) << "\">\n";
  os << poly(env.domain, "domain", "fill=\"white\" stroke=\"black\" stroke-width=\"2\"");
  for (const auto& o : env.obstacles) os << poly(o, "obstacle", "fill=\"#808080\" stroke=\"black\"");
  os << poly(env.target, "target", "fill=\"#b5e3b5\" stroke=\"#2e7d32\"");
  if (path && !path->steps.empty()) {
    const auto& steps = path->steps;
    for (std::size_t k = 1; k < steps.size(); ++k) {
      os << "<polygon class=\"prior\" points=\"" << points(ellipse_polygon(steps[k].x, steps[k].prior_cov(), chi2, opt.segments))
         << "\" fill=\"none\" stroke=\"blue\" stroke-width=\"1\"/>\n";
      os << "<polygon class=\"posterior\" points=\""
         << points(ellipse_polygon(steps[k].x, steps[k].posterior_cov(), chi2, opt.segments))
         << "\" fill=\"none\" stroke=\"red\" stroke-width=\"1\"/>\n";
    }
    std::vector<Eigen::Vector2d> means;
    for (const auto& st : steps) means.emplace_back(st.x(0), st.x(1));
    os << "<polyline class=\"mean\" points=\"" << points(means) << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    for (const auto& m : means)
      os << "<circle class=\"node\" cx=\"" << X(m.x()) << "\" cy=\"" << Y(m.y()) << "\" r=\"2.500\" fill=\"black\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string read_file(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ParseError(file + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(file + ": cannot write");
  out << content;
  if (!out) throw Error(file + ": write failed");
}

}  // namespace minsense::io
