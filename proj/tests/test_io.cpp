#include <doctest.h>

#include <json.hpp>
#include <random>
#include <regex>

#include "helpers.hpp"
#include "minsense/errors.hpp"
#include "minsense/io.hpp"

using namespace minsense;
using testing_util::box;
using testing_util::random_spd;
using testing_util::random_vec;

namespace {

const ProcessModel kModel{0.2e-3 * Mat::Identity(2, 2), 1.0};

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

std::vector<std::string> attr_values(const std::string& svg, const std::string& cls) {
  std::vector<std::string> out;
  const std::regex re("class=\"" + cls + "\" points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back((*it)[1]);
  return out;
}

BeliefPath six_step_path() {
  std::vector<Vec> xs = {Eigen::Vector2d(0.1, 0.9), Eigen::Vector2d(0.2, 0.75), Eigen::Vector2d(0.33, 0.6),
                         Eigen::Vector2d(0.45, 0.48), Eigen::Vector2d(0.6, 0.4), Eigen::Vector2d(0.75, 0.28),
                         Eigen::Vector2d(0.875, 0.125)};
  std::vector<Mat> ss(7, Mat::Zero(2, 2));
  ss[3] = 3000 * Mat::Identity(2, 2);
  ss[6] = 20000 * Mat::Identity(2, 2);
  return kalman_path(xs, ss, 1e-4 * Mat::Identity(2, 2), kModel, 1.0);
}

Environment six_step_env() {
  return build_environment(box(0, 1, 0, 1), {box(0.3, 0.5, 0.0, 0.35), box(0.55, 0.75, 0.55, 1.0)},
                           box(0.8, 0.95, 0.05, 0.2));
}

const char* kEnvText = R"({
  "domain": {"A": [[1, 0], [-1, 0], [0, 1], [0, -1]], "b": [1, 0, 1, 0]},
  "obstacles": [{"A": [[1, 0], [-1, 0], [0, 1], [0, -1]], "b": [0.55, -0.45, 0.4, 0]}],
  "target": {"A": [[1, 0], [-1, 0], [0, 1], [0, -1]], "b": [0.95, -0.8, 0.95, -0.8]},
  "start": {"x": [0.1, 0.1], "P": [[1e-4, 0], [0, 1e-4]]}
}
)";

}  // namespace

TEST_SUITE("io") {

TEST_CASE("path JSON round trip is exact") {
  std::mt19937_64 rng(71);
  for (int t = 0; t < 50; ++t) {
    BeliefPath p;
    p.alpha = random_vec(rng, 1, 0, 2)(0);
    const int K = 1 + static_cast<int>(rng() % 8);
    for (int k = 0; k <= K; ++k)
      p.steps.push_back({random_vec(rng, 2, -1, 1), random_spd(rng, 2, 1e3, 100), k % 2 ? random_spd(rng, 2, 10, 10) : Mat::Zero(2, 2)});
    const BeliefPath q = io::parse_path(io::path_to_json(p));
    REQUIRE(q.steps.size() == p.steps.size());
    CHECK(q.alpha == p.alpha);
    for (std::size_t k = 0; k < p.steps.size(); ++k) {
      CHECK(q.steps[k].x == p.steps[k].x);
      CHECK(q.steps[k].Q == p.steps[k].Q);
      CHECK(q.steps[k].S == p.steps[k].S);
    }
  }
}

TEST_CASE("environment files") {
  const io::Scenario s = io::parse_scenario(kEnvText);
  CHECK(s.env.num_obstacles() == 1);
  CHECK(s.env.num_unified() == 5);
  REQUIRE(s.start);
  CHECK(s.start->x == Vec(Eigen::Vector2d(0.1, 0.1)));
  const io::Scenario r = io::parse_scenario(io::scenario_to_json(s));
  CHECK(r.env.domain.A == s.env.domain.A);
  CHECK(r.env.target.b == s.env.target.b);
  CHECK(r.start->P == s.start->P);

  SUBCASE("syntax errors carry the line") {
    const std::string bad = "{\n  \"domain\": {\"A\": [[1, 0]],\n  \"b\": [1,, 0]}\n}";
    try {
      io::parse_scenario(bad, "env.json");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).rfind("env.json:3:", 0) == 0);
    }
  }
  SUBCASE("schema errors name the field") {
    auto message = [](const std::string& text) {
      try {
        io::parse_scenario(text);
      } catch (const ParseError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    nlohmann::json j = nlohmann::json::parse(kEnvText);
    j.erase("target");
    CHECK(message(j.dump()).find("missing key \"target\"") != std::string::npos);
    j = nlohmann::json::parse(kEnvText);
    j["obstacles"][0]["A"][1] = {1, 2, 3};
    CHECK(message(j.dump()).find("obstacles[0].A[1]") != std::string::npos);
    j = nlohmann::json::parse(kEnvText);
    j["start"]["P"] = {{1, 0}, {0, -1}};
    CHECK(message(j.dump()).find("start.P") != std::string::npos);
    j = nlohmann::json::parse(kEnvText);
    j["target"]["b"][0] = 1.5;  // leaves the domain
    CHECK(message(j.dump()).find("invalid environment") != std::string::npos);
    j = nlohmann::json::parse(kEnvText);
    j["domain"]["b"][0] = "one";
    CHECK(message(j.dump()).find("domain.b[0]") != std::string::npos);
  }
  CHECK_THROWS_AS(io::read_file("/nonexistent/env.json"), ParseError);
}

TEST_CASE("path files with bad content") {
  CHECK_THROWS_AS(io::parse_path("{\"alpha\": 1, \"steps\": []}"), ParseError);
  CHECK_THROWS_AS(io::parse_path("{\"alpha\": 1, \"steps\": [{\"x\": [0, 0], \"Q\": [[1, 0], [0, 1]]}]}"), ParseError);
  const std::string neg =
      "{\"alpha\": 1, \"steps\": [{\"x\": [0, 0], \"Q\": [[1, 0], [0, 1]], \"S\": [[0, 0], [0, 0]]},"
      "{\"x\": [0, 0], \"Q\": [[-1, 0], [0, 1]], \"S\": [[0, 0], [0, 0]]}]}";
  CHECK_THROWS_AS(io::parse_path(neg), ParseError);
}

TEST_CASE("trace CSV") {
  std::vector<TraceRow> rows = {{0, 2.5, 0.5, 2.0, 0.0, 1.0}, {1, 2.25, 0.5, 1.75, 1e-12, 12.5}};
  const std::string csv = io::trace_csv(rows);
  CHECK(csv.rfind("iter,cost,cost_control,cost_info,viol,ms\n", 0) == 0);
  CHECK(count(csv, "\n") == 3);
  CHECK(csv.find("\n1,2.25,0.5,1.75,9.9999999999999998e-13,12.5\n") != std::string::npos);
}

TEST_CASE("ellipse polygon lies on the confidence level") {
  const double chi2 = chi2_quantile(0.9, 2);
  const Vec c = Eigen::Vector2d(0.3, -0.2);
  const Mat P = Eigen::Matrix2d{{2e-3, 5e-4}, {5e-4, 1e-3}};
  const auto pts = io::ellipse_polygon(c, P, chi2);
  CHECK(pts.size() == 64);
  const Mat Pi = inverse_spd(P);
  for (const auto& p : pts) {
    const Vec r = p - Eigen::Vector2d(c);
    CHECK(r.dot(Pi * r) == doctest::Approx(chi2).epsilon(1e-10));
  }
}

TEST_CASE("rendering") {
  const double chi2 = chi2_quantile(0.9, 2);
  const Environment env = six_step_env();
  const BeliefPath path = six_step_path();
  const std::string svg = io::render_svg(env, &path, chi2);
  CHECK(svg == io::render_svg(env, &path, chi2));
  const auto prior = attr_values(svg, "prior"), post = attr_values(svg, "posterior");
  REQUIRE(prior.size() == 6);
  REQUIRE(post.size() == 6);
  int identical = 0;
  for (std::size_t k = 0; k < 6; ++k) identical += prior[k] == post[k];
  CHECK(identical == 4);  // no measurement at four of the six steps
  CHECK(count(svg, "class=\"obstacle\"") == 2);
  CHECK(count(svg, "class=\"target\"") == 1);
  CHECK(count(svg, "class=\"mean\"") == 1);
  CHECK(count(prior[0], ",") == 64);

  const std::string bare = io::render_svg(env, nullptr, chi2);
  CHECK(count(bare, "class=\"prior\"") == 0);
  CHECK(count(bare, "class=\"domain\"") == 1);

  Polytope cube;
  cube.A = Mat::Zero(6, 3);
  cube.b = Vec::Ones(6);
  for (int i = 0; i < 3; ++i) {
    cube.A(2 * i, i) = 1;
    cube.A(2 * i + 1, i) = -1;
  }
  Polytope small = cube;
  small.b *= 0.5;
  CHECK_THROWS_AS(io::render_svg(build_environment(cube, {}, small), nullptr, chi2), ShapeMismatch);
}

TEST_CASE("certificate and tree dumps") {
  const double chi2 = chi2_quantile(0.9, 2);
  const auto j = nlohmann::json::parse(io::certificates_to_json(six_step_path(), six_step_env(), kModel, chi2));
  CHECK(j["ok"] == true);
  CHECK(j["transitions"].size() == 6);
  CHECK(j["transitions"][0]["obstacles"].size() == 6);

  Tree t;
  t.nodes.resize(3);
  for (int i = 0; i < 3; ++i) {
    t.nodes[static_cast<std::size_t>(i)].id = i;
    t.nodes[static_cast<std::size_t>(i)].state.x = Eigen::Vector2d(i, 0);
  }
  t.nodes[1].parent = 0;
  t.nodes[2].parent = 1;
  const auto tj = nlohmann::json::parse(io::tree_to_json(t));
  CHECK(tj["nodes"].size() == 3);
  CHECK(tj["edges"].size() == 2);
  CHECK(tj["edges"][1] == nlohmann::json::array({1, 2}));
}

}  // TEST_SUITE
