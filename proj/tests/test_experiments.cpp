/*
 Copyright 2026 The PPC Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ppc/experiments.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using ppc::Vec2;

namespace {

ppc::EpisodeLog synthetic_log(const std::vector<int>& feasible, const std::vector<double>& cost,
                              std::uint64_t seed = 1) {
    ppc::EpisodeLog log;
    log.seed = seed;
    for (std::size_t t = 0; t < feasible.size(); ++t) {
        ppc::StepRecord r;
        r.t = static_cast<long>(t);
        r.feasible = feasible[t] != 0;
        r.cost = cost.empty() ? 1.0 : cost[t];
        log.steps.push_back(r);
    }
    return log;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

// Lies about nothing but always drives straight at the goal.
class GreedyController final : public ppc::Controller {
public:
    std::string name() const override { return "greedy"; }
    void reset(const ppc::EnvState&, std::uint64_t, long) override {}
    Vec2 act(const ppc::EnvState& env, ppc::StepRecord& rec) override {
        rec.feasible = true;
        return ppc::clip_to_disk(env.goal - env.q, env.u_max);
    }
};

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ppc_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("configuration defaults validate and hash stably") {
    ppc::RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.get_long("T") == 300);
    CHECK(cfg.get_longs("seeds") == std::vector<long>{0, 1, 2});
    CHECK(cfg.get_long("N") == 300);
    CHECK(cfg.get("ppc.kappa_method") == "ray_secant");
    CHECK(cfg.get_long("ppc.window_steps") == 5);
    CHECK(cfg.get_double("ppc.schedule_c") == 10.0);
    CHECK_FALSE(cfg.get_bool("env.bounded_feasibility"));
    ppc::RunConfig other;
    CHECK(cfg.hash() == other.hash());
    other.set("N", "301");
    CHECK(cfg.hash() != other.hash());
    CHECK(cfg.to_text().rfind("T=300\n", 0) == 0);
    CHECK(count_lines(cfg.to_text()) == ppc::config_keys().size());
}

TEST_CASE("configuration text parses comments and reports line numbers") {
    ppc::RunConfig cfg;
    ppc::apply_config_text(cfg, "# header\n\nT = 50   # short\nseeds=4, 5\n");
    CHECK(cfg.get_long("T") == 50);
    CHECK(cfg.get_longs("seeds") == std::vector<long>{4, 5});
    try {
        ppc::apply_config_text(cfg, "T=10\n\nbogus.key = 3\n", "file.cfg");
        FAIL("expected a ConfigError");
    } catch (const ppc::ConfigError& e) {
        CHECK(std::string(e.what()).find("file.cfg:3") != std::string::npos);
        CHECK(std::string(e.what()).find("bogus.key") != std::string::npos);
    }
    try {
        ppc::apply_config_text(cfg, "T 10\n");
        FAIL("expected a ConfigError");
    } catch (const ppc::ConfigError& e) {
        CHECK(std::string(e.what()).find("config:1") != std::string::npos);
    }
    CHECK_THROWS_AS(ppc::apply_config_text(cfg, "= 4\n"), ppc::ConfigError);
    CHECK_THROWS_AS(ppc::apply_config_file(cfg, "/nonexistent/ppc.cfg"), ppc::ConfigError);
}

TEST_CASE("validation rejects bad values") {
    const std::vector<std::pair<std::string, std::string>> bad = {
        {"T", "0"},
        {"T", "abc"},
        {"N", "-3"},
        {"seeds", ""},
        {"ppc.kappa_method", "magic"},
        {"cem.elite_fraction", "1.5"},
        {"ppc.alpha_percentile", "101"},
        {"controllers", "ppc,unicorn"},
        {"cbf.next_position", "maybe"},
        {"exp2.ratios", "1,x"},
        {"ppc.eta0", "inf"},
    };
    for (const auto& [k, v] : bad) {
        CAPTURE(k);
        ppc::RunConfig cfg;
        cfg.set(k, v);
        CHECK_THROWS_AS(cfg.validate(), ppc::ConfigError);
    }
    ppc::RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("nope", "1"), ppc::ConfigError);
    CHECK_THROWS_AS(cfg.get("nope"), ppc::ConfigError);
    cfg.set("T", "0");
    CHECK_THROWS_AS(ppc::run_experiment(1, cfg), ppc::ConfigError);
    CHECK_THROWS_AS(ppc::run_experiment(9, ppc::RunConfig{}), ppc::ConfigError);
}

TEST_CASE("controller settings follow the configuration") {
    ppc::RunConfig cfg;
    cfg.set("N", "123");
    cfg.set("ppc.kappa_method", "fisher_band");
    cfg.set("cbf.next_position", "true");
    const auto s = ppc::controller_settings(cfg);
    CHECK(s.ppc.n_samples == 123);
    CHECK(s.ppc.curvature.method == ppc::CurvatureMethod::FisherBand);
    CHECK(s.cbf.use_next_position);
    CHECK(s.ppc.inner_steps == 50);
    CHECK(s.ppc.retraction_steps == 25);
    CHECK(s.ppc.alpha_percentile == 10.0);
}

TEST_CASE("safety and normalized cost") {
    const auto a = synthetic_log({1, 1, 0, 1}, {1, 2, 3, 4});
    const auto o = synthetic_log({1, 1, 1, 1}, {2, 2, 2, 2});
    CHECK(ppc::safety_rate(a) == 0.75);
    CHECK(ppc::violations_total(a) == 1);
    CHECK(ppc::normalized_cost(a, o) == doctest::Approx(10.0 / 8.0));
    CHECK(std::isnan(ppc::safety_rate(ppc::EpisodeLog{})));
    CHECK_THROWS_AS(ppc::normalized_cost(a, synthetic_log({1}, {1})), ppc::MismatchedEpisodes);
    CHECK_THROWS_AS(ppc::normalized_cost(a, synthetic_log({1, 1, 1, 1}, {}, 9)), ppc::MismatchedEpisodes);
    // Safe-step ratio: mean cost over feasible steps (7/3) over the oracle mean (2).
    CHECK(ppc::safe_step_cost_ratio(a, o) == doctest::Approx(7.0 / 6.0));
}

TEST_CASE("adaptation steps match a brute-force rolling window") {
    ppc::Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> f(200);
        const double p = ppc::uniform(rng, 0.6, 1.0);
        for (auto& x : f) x = ppc::uniform(rng, 0, 1) < p;
        const auto log = synthetic_log(f, {});
        const long change = static_cast<long>(ppc::uniform(rng, 0, 150));
        const long window = 20;
        long expect = ppc::kNeverRecovered;
        for (long t = change + window - 1; t < 200; ++t) {
            int ok = 0;
            for (long s = t - window + 1; s <= t; ++s) ok += f[static_cast<std::size_t>(s)];
            if (ok >= 0.95 * window) {
                expect = t - change + 1;
                break;
            }
        }
        CHECK(ppc::adaptation_steps(log, change, 0.95, window) == expect);
    }
    const auto all_ok = synthetic_log(std::vector<int>(100, 1), {});
    CHECK(ppc::adaptation_steps(all_ok, 10, 0.95, 50) == 50);
    CHECK(ppc::adaptation_steps(all_ok, 100, 0.95, 50) == ppc::kNeverRecovered);
    CHECK_THROWS_AS(ppc::adaptation_steps(all_ok, 0, 0.95, 0), std::invalid_argument);
}

TEST_CASE("post-switch and steady safety split on mode switches") {
    auto log = synthetic_log({1, 1, 0, 0, 1, 1, 1, 0, 1, 1}, {});
    CHECK(std::isnan(ppc::post_switch_and_steady_safety(log, 2).first));
    log.events = {2, 5, 7};
    log.event_kinds = {ppc::EventKind::ModeSwitch, ppc::EventKind::Reshuffle, ppc::EventKind::ModeSwitch};
    const auto [post, steady] = ppc::post_switch_and_steady_safety(log, 2);
    // Post steps: 2, 3, 7, 8.
    CHECK(post == doctest::Approx(1.0 / 4.0));
    // Steady steps: 0, 1, 4, 5, 6, 9.
    CHECK(steady == 1.0);
}

TEST_CASE("displacement check uses filter-inactive steps only") {
    ppc::EpisodeLog log;
    ppc::StepRecord r;
    r.beta_t = 2.0;
    r.kappa = 4.0;
    r.g_c = 8.0;  // bound 1
    r.action = Vec2(0.5, 0.0);
    log.steps.push_back(r);
    r.action = Vec2(1.2, 0.0);
    log.steps.push_back(r);
    r.filter_active = true;
    r.action = Vec2(5, 0);
    log.steps.push_back(r);
    const auto d = ppc::displacement_check(log);
    CHECK(d.checked == 2);
    CHECK(d.violations == 1);
    CHECK(d.worst_excess == doctest::Approx(0.2));
}

TEST_CASE("pearson correlation") {
    CHECK(ppc::pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(ppc::pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    const std::vector<double> a = {1, 3, 2, 5, 4}, b = {2, 1, 4, 3, 6};
    double ma = 3, mb = 3.2, sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < 5; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    CHECK(ppc::pearson(a, b) == doctest::Approx(sab / std::sqrt(saa * sbb)));
    CHECK(std::isnan(ppc::pearson({1}, {1})));
    CHECK(std::isnan(ppc::pearson({1, 1}, {1, 2})));
}

TEST_CASE("mode schedule alternates modes deterministically") {
    const auto a = ppc::make_mode_schedule(4, 300, 40, 4);
    const auto b = ppc::make_mode_schedule(4, 300, 40, 4);
    CHECK(a.sequence == b.sequence);
    CHECK(a.sequence.size() == 8);
    for (std::size_t i = 1; i < a.sequence.size(); ++i) CHECK(a.sequence[i] != a.sequence[i - 1]);
    for (int m : a.sequence) {
        CHECK(m >= 0);
        CHECK(m <= 3);
    }
    CHECK_THROWS_AS(ppc::make_mode_schedule(4, 300, 0, 4), std::invalid_argument);
}

TEST_CASE("episodes recompute feasibility and log events") {
    ppc::EpisodeSpec spec;
    spec.seed = 2;
    spec.horizon = 60;
    spec.reshuffle_step = 30;
    GreedyController greedy;
    const auto log = ppc::run_episode(spec, greedy);
    REQUIRE(log.steps.size() == 60);
    CHECK(log.events == std::vector<long>{30});
    CHECK(log.event_kinds == std::vector<ppc::EventKind>{ppc::EventKind::Reshuffle});
    auto env = ppc::make_initial_state(2, spec.setup);
    double path = 0.0;
    for (long t = 0; t < 30; ++t) {
        const auto& r = log.steps[static_cast<std::size_t>(t)];
        CHECK(r.q == env.q);
        CHECK(r.feasible == ppc::is_feasible(env, r.action));
        CHECK(r.cost == doctest::Approx((env.q + r.action - env.goal).squaredNorm()));
        for (const auto& ob : env.obstacles)
            path += (ppc::obstacle_position(ob, t + 1) - ppc::obstacle_position(ob, t)).norm();
        env = ppc::step(env, r.action);
    }
    CHECK(log.obstacle_tracks.size() == 60);
    CHECK(log.path_length > path);
    const auto again = ppc::run_episode(spec, greedy);
    for (std::size_t t = 0; t < 60; ++t) CHECK(again.steps[t].action == log.steps[t].action);
    spec.horizon = 0;
    CHECK_THROWS_AS(ppc::run_episode(spec, greedy), std::invalid_argument);
}

TEST_CASE("mode episodes switch layouts on block boundaries") {
    ppc::EpisodeSpec spec;
    spec.seed = 1;
    spec.horizon = 100;
    spec.modes = ppc::make_mode_schedule(1, 100, 20, 4);
    GreedyController greedy;
    const auto log = ppc::run_episode(spec, greedy);
    CHECK(log.events == std::vector<long>{20, 40, 60, 80});
    for (auto k : log.event_kinds) CHECK(k == ppc::EventKind::ModeSwitch);
    for (std::size_t t = 0; t < 100; ++t) CHECK(log.steps[t].context_mode == spec.modes->sequence[t / 20]);
}

TEST_CASE("CSV column order is fixed") {
    CHECK(join(ppc::step_csv_columns()) ==
          "t,q_x,q_y,goal_x,goal_y,u_x,u_y,feasible,cost,clearance,beta_t,beta_star,kappa,kappa_floored,"
          "r_alpha,alpha,bandwidth,g_c,peak_x,peak_y,filter_active,filter_iterations,filter_failed,blocked,"
          "context_fallback,context_mode,n_cumulative,wall_clock_ns,event");
    CHECK(join(ppc::summary_csv_columns()) ==
          "experiment,variant,variant_value,controller,seed,safety_rate,normalized_cost,adaptation_steps,"
          "mean_step_ns,violations_total,post_switch_safety,steady_safety,safe_step_cost_ratio,score_error,"
          "path_length,beta_star_median");
    CHECK(join(ppc::obstacle_csv_columns()) == "t,k,x,y,radius");
    CHECK(ppc::aggregate_csv_columns().front() == "experiment");
    CHECK(ppc::aggregate_csv_columns().size() == 20);
}

TEST_CASE("step CSV round-trips exactly") {
    ppc::EpisodeSpec spec;
    spec.seed = 5;
    spec.horizon = 25;
    spec.reshuffle_step = 10;
    auto ctrl = ppc::make_controller("ppc", ppc::ControllerSettings{});
    const auto log = ppc::run_episode(spec, *ctrl);
    const std::string text = ppc::step_csv(log);
    CHECK(count_lines(text) == 26);
    const auto back = ppc::parse_step_csv(text, 5, "ppc");
    REQUIRE(back.steps.size() == log.steps.size());
    CHECK(back.events == log.events);
    CHECK(back.event_kinds == log.event_kinds);
    for (std::size_t t = 0; t < log.steps.size(); ++t) {
        const auto& a = log.steps[t];
        const auto& b = back.steps[t];
        CHECK(a.action == b.action);
        CHECK(a.cost == b.cost);
        CHECK(a.kappa == b.kappa);
        CHECK(a.beta_t == b.beta_t);
        CHECK(a.density_peak == b.density_peak);
        CHECK(a.feasible == b.feasible);
        CHECK(a.filter_active == b.filter_active);
        CHECK(a.n_cumulative == b.n_cumulative);
        CHECK(a.g_c == b.g_c);
    }
    CHECK(ppc::safety_rate(back) == ppc::safety_rate(log));
    CHECK(ppc::step_csv(back) == text);
    CHECK_THROWS(ppc::parse_step_csv("t,q_x\n1,2\n"));
}

TEST_CASE("summary CSV round-trips and aggregates with sample std") {
    std::vector<ppc::SummaryRow> rows;
    for (int s = 0; s < 3; ++s) {
        ppc::SummaryRow r;
        r.experiment = "exp1";
        r.controller = "ppc";
        r.seed = static_cast<std::uint64_t>(s);
        r.metrics.safety_rate = 0.9 + 0.01 * s;
        r.metrics.normalized_cost = 1.0 + s;
        r.metrics.adaptation_steps = s == 2 ? ppc::kNeverRecovered : 40 + s;
        rows.push_back(r);
    }
    const auto text = ppc::summary_csv(rows);
    const auto back = ppc::parse_summary_csv(text);
    REQUIRE(back.size() == 3);
    CHECK(back[1].metrics.safety_rate == rows[1].metrics.safety_rate);
    CHECK(back[2].metrics.adaptation_steps == ppc::kNeverRecovered);
    CHECK(std::isnan(back[0].score_error));
    CHECK(ppc::summary_csv(back) == text);

    const auto agg = ppc::aggregate_csv(rows);
    std::istringstream in(agg);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    REQUIRE(f.size() == 20);
    CHECK(f[4] == "3");
    CHECK(std::stod(f[5]) == doctest::Approx(0.91));
    CHECK(std::stod(f[6]) == doctest::Approx(0.01));
    CHECK(std::stod(f[7]) == doctest::Approx(2.0));
    CHECK(std::stod(f[8]) == doctest::Approx(1.0));
    CHECK(std::stod(f[9]) == doctest::Approx(40.5));
    CHECK(f[10] == "1");
}

TEST_CASE("manifest records schema, hash and columns") {
    ppc::RunConfig cfg;
    cfg.set("T", "77");
    const auto m = ppc::manifest_text("exp3", cfg, "running", {{"x", 0.5}});
    std::ostringstream hash;
    hash << std::hex << cfg.hash();
    CHECK(m.find("schema_version=1\n") != std::string::npos);
    CHECK(m.find("experiment=exp3\n") != std::string::npos);
    CHECK(m.find("status=running\n") != std::string::npos);
    CHECK(m.find("config_hash=" + hash.str() + "\n") != std::string::npos);
    CHECK(m.find("T=77\n") != std::string::npos);
    CHECK(m.find("columns.step=" + join(ppc::step_csv_columns()) + "\n") != std::string::npos);
    CHECK(m.find("config.ppc.window_steps=5\n") != std::string::npos);
    CHECK(m.find("result.x=0.5\n") != std::string::npos);
    cfg.set("exp3.T", "12");
    CHECK(ppc::manifest_text("exp3", cfg, "running").find("T=12\n") != std::string::npos);
}

TEST_CASE("a small stiffness sweep writes the documented layout") {
    ppc::RunConfig cfg;
    cfg.set("T", "12");
    cfg.set("seeds", "0");
    cfg.set("N", "60");
    cfg.set("exp2.landscape_t", "5");
    cfg.set("exp2.landscape_grid", "11");
    const auto out = temp_dir("exp2");
    ppc::write_manifest(out, "exp2", cfg, "running");
    CHECK(read_file(out / "exp2" / "manifest.txt").find("status=running") != std::string::npos);
    const auto rs = ppc::run_experiment(2, cfg);
    ppc::write_results(rs, cfg, out);
    const auto dir = out / "exp2";
    CHECK(read_file(dir / "manifest.txt").find("status=complete") != std::string::npos);
    const auto stiff = read_file(dir / "stiffness.csv");
    CHECK(count_lines(stiff) == 1 + 7);
    CHECK(std::filesystem::exists(dir / "ppc_beta0.1" / "0.csv"));
    CHECK(std::filesystem::exists(dir / "ppc_beta10" / "0.csv"));
    CHECK(std::filesystem::exists(dir / "oracle" / "0.csv"));
    CHECK(std::filesystem::exists(dir / "obstacles" / "0.csv"));
    CHECK(count_lines(read_file(dir / "landscape.csv")) == 1 + 121);
    CHECK(read_file(dir / "landscape_points.csv").find("u_star,") != std::string::npos);
    const auto rows = ppc::parse_summary_csv(read_file(dir / "summary.csv"));
    CHECK(rows.size() == 8);
    // Aggregates are recomputable from the step CSVs.
    const auto oracle = ppc::parse_step_csv(read_file(dir / "oracle" / "0.csv"), 0);
    const auto ppc1 = ppc::parse_step_csv(read_file(dir / "ppc_beta1" / "0.csv"), 0);
    for (const auto& r : rows) {
        if (r.variant_value != "1" || r.controller != "ppc") continue;
        CHECK(r.metrics.safety_rate == doctest::Approx(ppc::safety_rate(ppc1)));
        CHECK(r.metrics.normalized_cost == doctest::Approx(ppc::normalized_cost(ppc1, oracle)));
    }
    CHECK(rs.scalars.count("safety.beta10") == 1);
    std::filesystem::remove_all(out);
}

TEST_CASE("experiments are reproducible for a fixed configuration") {
    ppc::RunConfig cfg;
    cfg.set("T", "15");
    cfg.set("seeds", "3");
    cfg.set("N", "50");
    cfg.set("controllers", "ppc,cbf_qp");
    const auto a = ppc::run_experiment(1, cfg);
    cfg.set("jobs", "1");
    const auto b = ppc::run_experiment(1, cfg);
    REQUIRE(a.logs.size() == 3);
    REQUIRE(b.logs.size() == 3);
    for (std::size_t i = 0; i < a.logs.size(); ++i) {
        auto strip = [](ppc::EpisodeLog l) {
            for (auto& s : l.steps) s.wall_clock_ns = 0;
            return ppc::step_csv(l);
        };
        CHECK(a.logs[i].label == b.logs[i].label);
        CHECK(strip(a.logs[i].log) == strip(b.logs[i].log));
    }
}
