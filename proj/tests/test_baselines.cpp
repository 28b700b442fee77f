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

#include "ppc/baselines.hpp"

#include <cmath>
#include <limits>

using ppc::Vec2;

namespace {

ppc::EnvState random_env(std::uint64_t seed, std::size_t n_obstacles = 6) {
    ppc::EpisodeSetup setup;
    setup.canonical_start = false;
    setup.n_obstacles = n_obstacles;
    auto s = ppc::make_initial_state(seed, setup);
    s.t = static_cast<long>(seed * 7 % 150);
    return s;
}

bool admissible(const Vec2& u, const std::vector<ppc::HalfPlane>& cons, double radius, double tol) {
    if (u.norm() > radius + tol) return false;
    for (const auto& c : cons)
        if (c.a.dot(u) < c.b - tol) return false;
    return true;
}

}  // namespace

TEST_CASE("grid oracle matches brute-force enumeration") {
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
        const auto env = random_env(seed);
        const int res = 61;
        Vec2 u;
        try {
            u = ppc::oracle_action(env, res);
        } catch (const ppc::NoFeasibleCell&) {
            continue;
        }
        CHECK(ppc::is_feasible(env, u));
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j) {
                const Vec2 v(-1.0 + 2.0 * i / (res - 1), -1.0 + 2.0 * j / (res - 1));
                if (v.norm() <= 1.0 && ppc::is_feasible(env, v)) best = std::min(best, (env.q + v - env.goal).squaredNorm());
            }
        CHECK((env.q + u - env.goal).squaredNorm() == doctest::Approx(best).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ppc::oracle_action(random_env(0), 1), std::invalid_argument);
}

TEST_CASE("oracle cost is below any feasible action up to grid resolution") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto env = random_env(seed);
        const ppc::CostModel cost{env.q, env.goal, env.u_max};
        const Vec2 u = ppc::oracle_action(env);
        const double cell = 2.0 / (ppc::kOracleGrid - 1);
        ppc::Rng rng(seed);
        for (const auto& v : ppc::sample_feasible(env, 300, rng)) {
            CHECK(cost.value(u) <= cost.value(v) + 2.0 * cell * cost.g_c());
        }
    }
}

TEST_CASE("oracle throws when nothing is feasible") {
    ppc::EnvState env;
    env.q = {5, 5};
    ppc::ObstacleSpec ob;
    ob.center_base = {5, 5};
    ob.radius = 3.0;
    env.obstacles = {ob};
    CHECK_THROWS_AS(ppc::oracle_action(env, 21), ppc::NoFeasibleCell);
}

TEST_CASE("two-dimensional QP agrees with a dense grid search") {
    ppc::Rng rng(11);
    const int res = 801;
    int feasible_cases = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const Vec2 u_nom(ppc::uniform(rng, -2, 2), ppc::uniform(rng, -2, 2));
        std::vector<ppc::HalfPlane> cons;
        const int m = static_cast<int>(ppc::uniform(rng, 0, 4));
        for (int k = 0; k < m; ++k) {
            const double ang = ppc::uniform(rng, 0, 2 * ppc::kPi);
            cons.push_back({Vec2(std::cos(ang), std::sin(ang)) * ppc::uniform(rng, 0.5, 2.0), ppc::uniform(rng, -1.0, 0.6)});
        }
        const auto r = ppc::solve_qp2d(u_nom, cons, 1.0);
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j) {
                const Vec2 v(-1.0 + 2.0 * i / (res - 1), -1.0 + 2.0 * j / (res - 1));
                if (admissible(v, cons, 1.0, 0.0)) best = std::min(best, (v - u_nom).squaredNorm());
            }
        if (!std::isfinite(best)) {
            CHECK(r.infeasible);
            continue;
        }
        ++feasible_cases;
        REQUIRE_FALSE(r.infeasible);
        CHECK(admissible(r.u, cons, 1.0, 1e-9));
        CHECK((r.u - u_nom).squaredNorm() <= best + 1e-12);
        // Grid cell half-diagonal bounds the grid's suboptimality.
        const double d = std::sqrt(2.0) * 1.0 / (res - 1);
        CHECK(std::sqrt(best) - std::sqrt((r.u - u_nom).squaredNorm()) <= 2 * d + 1e-9);
    }
    CHECK(feasible_cases > 20);
}

TEST_CASE("infeasible QP scales the nominal action") {
    const std::vector<ppc::HalfPlane> cons = {{Vec2(1, 0), 0.5}, {Vec2(-1, 0), 0.5}};
    const auto r = ppc::solve_qp2d(Vec2(0.8, 0), cons, 1.0);
    CHECK(r.infeasible);
    CHECK(r.u.norm() <= 1.0);
    const auto unconstrained = ppc::solve_qp2d(Vec2(0.3, 0.2), {}, 1.0);
    CHECK_FALSE(unconstrained.infeasible);
    CHECK(unconstrained.u == Vec2(0.3, 0.2));
    const auto clipped = ppc::solve_qp2d(Vec2(3, 4), {}, 1.0);
    CHECK((clipped.u - Vec2(0.6, 0.8)).norm() < 1e-12);
}

TEST_CASE("CBF row linearizes the barrier") {
    const Vec2 q(1, 2), c(3, 2);
    const auto row = ppc::cbf_row(q, c, 1.0, 0.5);
    // h = 4 - 1 = 3; grad = 2 (q - c).
    CHECK(row.a == Vec2(-4, 0));
    CHECK(row.b == doctest::Approx(-1.5));
    ppc::EnvState env;
    env.q = {0.5, 9.7};
    CHECK(ppc::workspace_halfplanes(env).empty());
    env.bounded_feasibility = true;
    const auto hp = ppc::workspace_halfplanes(env);
    REQUIRE(hp.size() == 4);
    CHECK(admissible(Vec2(0.2, 0.2), hp, 1.0, 0.0));
    CHECK_FALSE(admissible(Vec2(0.0, 0.5), hp, 1.0, 0.0));
    CHECK_FALSE(admissible(Vec2(-0.6, 0.0), hp, 1.0, 0.0));
}

TEST_CASE("CBF-QP action satisfies every linearized constraint") {
    for (bool next : {false, true}) {
        ppc::CbfConfig cfg;
        cfg.use_next_position = next;
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            const auto env = random_env(seed, 10);
            const auto r = ppc::cbf_qp_action(env, cfg);
            CHECK(r.u.norm() <= env.u_max + 1e-12);
            if (r.infeasible) continue;
            auto cons = ppc::workspace_halfplanes(env);
            for (const auto& ob : env.obstacles)
                cons.push_back(ppc::cbf_row(env.q, ppc::obstacle_position(ob, env.t + (next ? 1 : 0), env.bounds),
                                            ob.radius + env.d_safe, cfg.gamma));
            for (const auto& c : cons) CHECK(c.a.dot(r.u) - c.b >= -1e-9);
        }
    }
}

TEST_CASE("GP posterior mean interpolates with small noise and has the right gradient") {
    ppc::GpConstraintModel gp;
    ppc::Rng rng(1);
    std::vector<Vec2> xs;
    std::vector<double> ys;
    for (int i = 0; i < 25; ++i) {
        const Vec2 x(ppc::uniform(rng, 0, 3), ppc::uniform(rng, 0, 3));
        xs.push_back(x);
        ys.push_back(std::sin(x.x()) + 0.5 * x.y());
        gp.add(x, ys.back(), rng);
    }
    gp.set_hyperparameters(0.8, 1.0, 1e-10);
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(gp.mean(xs[i]) == doctest::Approx(ys[i]).epsilon(1e-5));
    const Vec2 p(1.3, 1.7);
    const double e = 1e-5;
    const Vec2 fd((gp.mean(p + Vec2(e, 0)) - gp.mean(p - Vec2(e, 0))) / (2 * e),
                  (gp.mean(p + Vec2(0, e)) - gp.mean(p - Vec2(0, e))) / (2 * e));
    CHECK((gp.mean_gradient(p) - fd).norm() < 1e-6 * std::max(1.0, fd.norm()));
}

TEST_CASE("GP log marginal likelihood matches the closed form on two points") {
    ppc::GpConstraintModel gp;
    ppc::Rng rng(0);
    gp.add(Vec2(0, 0), 1.0, rng);
    gp.add(Vec2(1, 0), 3.0, rng);
    const double ell = 0.7, sf2 = 1.5, nz = 0.1;
    const double k = sf2 * std::exp(-0.5 / (ell * ell));
    const double a = sf2 + nz;
    const double det = a * a - k * k;
    // Centred targets (-1, 1).
    const double quad = (a * 1 + k * 1 + a * 1 + k * 1) / det;
    const double expect = -0.5 * quad - 0.5 * std::log(det) - std::log(2 * ppc::kPi);
    CHECK(gp.log_marginal_likelihood(ell, sf2, nz) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("GP refit chooses the grid maximizer and the reservoir stays bounded") {
    ppc::GpConfig cfg;
    cfg.max_points = 40;
    ppc::GpConstraintModel gp(cfg);
    ppc::Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const Vec2 x(ppc::uniform(rng, 0, 5), ppc::uniform(rng, 0, 5));
        gp.add(x, std::cos(x.x()), rng);
    }
    CHECK(gp.size() == 40);
    CHECK(gp.seen() == 200);
    gp.refit_hyperparameters();
    const double chosen = gp.log_marginal_likelihood(gp.lengthscale(), gp.signal_variance(), gp.noise_variance());
    for (double ell : cfg.lengthscales)
        for (double nz : cfg.noise_variances)
            CHECK(gp.log_marginal_likelihood(ell, gp.signal_variance(), nz) <= chosen + 1e-12);
}

TEST_CASE("GP-CBF adds one learned constraint") {
    ppc::EnvState env;
    env.q = {5, 5};
    env.goal = {9, 5};
    ppc::GpConstraintModel empty;
    CHECK((ppc::gp_cbf_action(env, empty, 0.5).u - Vec2(1, 0)).norm() < 1e-12);
    ppc::GpConstraintModel gp;
    ppc::Rng rng(0);
    // Clearance falls off to the right of x = 5.5.
    for (double x = 3.0; x <= 7.0; x += 0.25)
        for (double y = 4.0; y <= 6.0; y += 0.5) gp.add(Vec2(x, y), 5.5 - x, rng);
    gp.set_hyperparameters(1.0, 1.0, 1e-6);
    const auto r = ppc::gp_cbf_action(env, gp, 0.5);
    const double h = gp.mean(env.q);
    CHECK(gp.mean_gradient(env.q).dot(r.u) >= -0.5 * h - 1e-9);
    CHECK(r.u.x() < 0.5);
}

TEST_CASE("CEM returns a high-density action near the constrained optimum") {
    const double h = 0.3;
    const ppc::Kde kde({Vec2(0, 0)}, h);
    const double alpha = 0.3 / (2 * ppc::kPi * h * h);
    const double radius = h * std::sqrt(2 * std::log(1 / 0.3));
    ppc::EnvState env;
    env.q = {5, 5};
    env.goal = {8, 5};
    ppc::Rng rng(2);
    const auto r = ppc::cem_action(env, kde, alpha, ppc::CemConfig{}, rng);
    CHECK_FALSE(r.no_feasible);
    CHECK(kde.density(r.u) >= alpha);
    CHECK(r.u.x() > 0.9 * radius);
    CHECK(std::abs(r.u.y()) < 0.1);
    ppc::Rng again(2);
    CHECK(ppc::cem_action(env, kde, alpha, ppc::CemConfig{}, again).u == r.u);
}

TEST_CASE("CEM flags when no candidate clears alpha") {
    const ppc::Kde kde({Vec2(0.9, 0.0)}, 0.02);
    ppc::EnvState env;
    ppc::CemConfig cfg;
    cfg.iterations = 1;
    ppc::Rng rng(3);
    const auto r = ppc::cem_action(env, kde, 1e6, cfg, rng);
    CHECK(r.no_feasible);
    CHECK(r.u.norm() <= 1.0 + 1e-12);
}

TEST_CASE("swept radii cover the motion over the horizon") {
    const auto env = random_env(5);
    const long horizon = 120;
    const auto radii = ppc::swept_radii(env, horizon);
    REQUIRE(radii.size() == env.obstacles.size());
    for (std::size_t k = 0; k < radii.size(); ++k) {
        const auto& ob = env.obstacles[k];
        const Vec2 o0 = ppc::obstacle_position(ob, env.t, env.bounds);
        double sweep = 0.0;
        for (long t = env.t; t <= env.t + horizon; ++t)
            sweep = std::max(sweep, (ppc::obstacle_position(ob, t, env.bounds) - o0).norm());
        CHECK(radii[k] == doctest::Approx(ob.radius + env.d_safe + sweep));
    }
    const auto zero = ppc::swept_radii(env, 0);
    CHECK(zero[0] == doctest::Approx(env.obstacles[0].radius + env.d_safe));
}

TEST_CASE("static conservative action respects the inflated discs") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto env = random_env(seed, 3);
        const auto radii = ppc::swept_radii(env, 10);
        std::vector<Vec2> centers;
        for (const auto& ob : env.obstacles) centers.push_back(ppc::obstacle_position(ob, env.t, env.bounds));
        const auto r = ppc::static_conservative_action(env, centers, radii, 1.0);
        CHECK(r.u.norm() <= 1.0 + 1e-12);
        if (r.infeasible) continue;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const auto row = ppc::cbf_row(env.q, centers[k], radii[k], 1.0);
            CHECK(row.a.dot(r.u) >= row.b - 1e-9);
        }
    }
}

TEST_CASE("every controller stays on the action disk and is deterministic") {
    ppc::ControllerSettings s;
    s.ppc.n_samples = 100;
    s.offline_samples = 100;
    s.offline_context_per_mode = 50;
    ppc::EpisodeSetup setup;
    for (const auto& name : ppc::known_controllers()) {
        CAPTURE(name);
        auto run = [&]() {
            auto c = ppc::make_controller(name, s);
            CHECK(c->name() == name);
            auto env = ppc::make_initial_state(2, setup);
            c->reset(env, 2, 8);
            std::vector<Vec2> us;
            for (int t = 0; t < 8; ++t) {
                ppc::StepRecord rec;
                const Vec2 u = c->act(env, rec);
                CHECK(u.norm() <= env.u_max + 1e-12);
                const auto next = ppc::step(env, u);
                c->observe(env, u, next);
                env = next;
                us.push_back(u);
            }
            return us;
        };
        CHECK(run() == run());
    }
    CHECK_THROWS_AS(ppc::make_controller("nope", s), ppc::ConfigError);
}
