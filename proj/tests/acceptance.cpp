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

// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero only when
// something throws. Optional argv[1]: directory for the experiment outputs.

#include "ppc/controller.hpp"
#include "ppc/density.hpp"
#include "ppc/experiments.hpp"
#include "ppc/theory_checks.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

namespace {

using ppc::Mat2;
using ppc::Vec2;

int g_pass = 0;
int g_fail = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    (ok ? g_pass : g_fail)++;
    std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

struct Model {
    std::vector<Vec2> pts;
    std::vector<double> w;
    double h = 0.1;
};

long double oracle_log_density(const Model& m, long double x, long double y) {
    long double total_w = 0.0L;
    for (double wi : m.w) total_w += wi;
    std::vector<long double> e(m.pts.size());
    long double top = -1e300L;
    for (std::size_t i = 0; i < m.pts.size(); ++i) {
        const long double dx = x - m.pts[i].x();
        const long double dy = y - m.pts[i].y();
        e[i] = std::log(static_cast<long double>(m.w[i]) / total_w) - (dx * dx + dy * dy) / (2.0L * m.h * m.h);
        top = std::max(top, e[i]);
    }
    long double s = 0.0L;
    for (long double v : e) s += std::exp(v - top);
    return top + std::log(s) - std::log(2.0L * 3.14159265358979323846L * m.h * m.h);
}

Vec2 fd_gradient(const Model& m, const Vec2& u, double e) {
    auto d = [&](int axis, long double step) {
        const long double dx = axis == 0 ? step : 0.0L, dy = axis == 1 ? step : 0.0L;
        return (oracle_log_density(m, u.x() + dx, u.y() + dy) - oracle_log_density(m, u.x() - dx, u.y() - dy)) /
               (2.0L * step);
    };
    Vec2 g;
    for (int a = 0; a < 2; ++a) g(a) = static_cast<double>((4.0L * d(a, e / 2) - d(a, e)) / 3.0L);
    return g;
}

Mat2 fd_neg_hessian(const Model& m, const Vec2& u, double e) {
    auto hess = [&](long double s) {
        auto f = [&](long double dx, long double dy) { return oracle_log_density(m, u.x() + dx, u.y() + dy); };
        const long double f0 = f(0, 0);
        Mat2 out;
        out(0, 0) = static_cast<double>((f(s, 0) - 2 * f0 + f(-s, 0)) / (s * s));
        out(1, 1) = static_cast<double>((f(0, s) - 2 * f0 + f(0, -s)) / (s * s));
        out(0, 1) = out(1, 0) = static_cast<double>((f(s, s) - f(s, -s) - f(-s, s) + f(-s, -s)) / (4 * s * s));
        return out;
    };
    return -(4.0 * hess(e / 2) - hess(e)) / 3.0;
}

void analytic_suite() {
    // Random weighted models; evaluation points inside the alpha-superlevel set.
    double worst_score = 0.0, worst_fisher = 0.0;
    long points = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        ppc::Rng rng(1000 + seed);
        Model m;
        const int n = 5 + static_cast<int>(ppc::uniform(rng, 0.0, 60.0));
        m.h = ppc::uniform(rng, 0.05, 0.4);
        for (int i = 0; i < n; ++i) {
            m.pts.emplace_back(ppc::uniform(rng, -1.0, 1.0), ppc::uniform(rng, -1.0, 1.0));
            m.w.push_back(ppc::uniform(rng, 0.2, 1.0));
        }
        const ppc::Kde kde(m.pts, m.w, m.h);
        const double alpha = ppc::select_alpha(kde, m.pts, 10.0);
        for (int k = 0; k < 1000;) {
            const Vec2 u(ppc::uniform(rng, -1.2, 1.2), ppc::uniform(rng, -1.2, 1.2));
            if (kde.density(u) < alpha) continue;
            ++k;
            ++points;
            const Vec2 s = kde.score(u);
            worst_score = std::max(worst_score,
                                   (s - fd_gradient(m, u, 1e-2 * m.h)).norm() / std::max(s.norm(), 1.0 / m.h));
            const Mat2 fi = kde.fisher_info(u);
            worst_fisher = std::max(worst_fisher, (fi - fd_neg_hessian(m, u, 2e-2 * m.h)).norm() /
                                                      std::max(fi.norm(), 1.0 / (m.h * m.h)));
        }
    }
    report(worst_score < 1e-5, "score_vs_finite_differences",
           "worst_rel=" + num(worst_score) + " tol=1e-05 models=50 points=" + std::to_string(points));
    report(worst_fisher < 1e-4, "fisher_vs_finite_differences",
           "worst_rel=" + num(worst_fisher) + " tol=0.0001 models=50 points=" + std::to_string(points));

    double worst = 0.0;
    for (double h : {0.1, 0.3, 0.7}) {
        const Vec2 c(0.4, -0.2);
        const ppc::Kde kde({c}, h);
        worst = std::max(worst, std::abs(kde.density(c) - 1.0 / (2.0 * ppc::kPi * h * h)) * h * h);
        for (const Vec2& u : {Vec2(0.0, 0.0), Vec2(1.0, 0.5), Vec2(0.41, -0.19)}) {
            worst = std::max(worst, (kde.score(u) - (c - u) / (h * h)).norm() * h * h);
            worst = std::max(worst, (kde.fisher_info(u) - Mat2::Identity() / (h * h)).norm() * h * h);
        }
        const ppc::ScoreFn score = [&](const Vec2& u) { return kde.score(u); };
        for (double beta : {0.1, 0.5, 2.0}) {
            const ppc::CostModel cost{Vec2(2.0, 2.0), Vec2(2.5, 2.3), 1.0};
            const double b = beta / (h * h);
            const Vec2 expect = (2.0 * (cost.goal - cost.q) + b * c) / (2.0 + b);
            const double eta = ppc::step_size(2.0, beta, kde.lambda_max(), 0.02);
            worst = std::max(worst, (ppc::plan(cost, score, beta, eta, 20000, Vec2::Zero()).u - expect).norm());
        }
    }
    report(worst < 1e-6, "single_gaussian_closed_forms", "worst=" + num(worst) + " tol=1e-06");

    const auto reports = ppc::run_all_checks(0);
    auto find = [&](const std::string& name) -> const ppc::CheckReport& {
        for (const auto& r : reports)
            if (r.name == name) return r;
        throw std::runtime_error("missing check " + name);
    };
    auto line = [](const ppc::CheckReport& r) {
        return "worst=" + num(r.worst_violation) + " tol=" + num(r.tolerance) + " probes=" +
               std::to_string(r.probes) + (r.skipped ? " skipped" : "");
    };
    const auto& gibbs = find("gibbs_map");
    report(gibbs.pass && !gibbs.skipped, "gibbs_map", line(gibbs));
    const auto& mix = find("mixture_hessian");
    report(mix.pass && !mix.skipped, "mixture_hessian", line(mix));
    bool all = true;
    std::string detail;
    for (const char* name : {"landscape", "contraction", "critical_stiffness", "comparator_sensitivity",
                             "level_set_stability", "ctx_gap"}) {
        const auto& r = find(name);
        all = all && r.pass && !r.skipped;
        detail += std::string(detail.empty() ? "" : " ") + name + "=" + (r.pass && !r.skipped ? "ok" : "bad");
    }
    report(all, "structural_checks", detail);
}

ppc::ResultSet run(int id, const ppc::RunConfig& cfg, const char* out) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rs = ppc::run_experiment(id, cfg);
    if (out != nullptr) ppc::write_results(rs, cfg, out);
    std::cout << "# exp" << id << " seconds="
              << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) << std::endl;
    return rs;
}

double at(const ppc::ResultSet& rs, const std::string& key) {
    const auto it = rs.scalars.find(key);
    if (it == rs.scalars.end()) throw std::runtime_error(rs.experiment + " has no scalar " + key);
    return it->second;
}

void experiment_suite(const char* out) {
    const ppc::RunConfig cfg;  // T=300, seeds 0,1,2
    cfg.validate();

    const auto e1 = run(1, cfg, out);
    {
        const double st = at(e1, "safety.static_conservative"), p = at(e1, "safety.ppc"), c = at(e1, "safety.cem");
        const double nc = at(e1, "normalized_cost.ppc");
        report(st >= p && p >= c && p >= 0.90 && nc < 1.0, "exp1_ordering",
               "safety static=" + num(st) + " ppc=" + num(p) + " cem=" + num(c) + " normalized_cost.ppc=" + num(nc));
    }
    {
        ppc::DisplacementCheck total;
        for (const auto& l : e1.logs) {
            if (l.log.controller != "ppc") continue;
            const auto d = ppc::displacement_check(l.log, 1e-3);
            total.checked += d.checked;
            total.violations += d.violations;
            total.worst_excess = std::max(total.worst_excess, d.worst_excess);
        }
        report(total.checked > 0 && total.violations == 0, "displacement_bound",
               "checked=" + std::to_string(total.checked) + " violations=" + std::to_string(total.violations) +
                   " worst_excess=" + num(total.worst_excess) + " tol=0.001");
    }

    const auto e2 = run(2, cfg, out);
    {
        const double gap = at(e2, "safety.beta10") - at(e2, "safety.beta0.1");
        const double c10 = at(e2, "normalized_cost.beta10"), c1 = at(e2, "normalized_cost.beta1");
        report(gap >= 0.10 && c10 > c1, "exp2_phase_transition",
               "safety_gap=" + num(gap) + " cost.beta10=" + num(c10) + " cost.beta1=" + num(c1));
    }

    const auto e3 = run(3, cfg, out);
    {
        const auto budgets = cfg.get_longs("exp3.budgets");
        bool monotone = true;
        std::string safeties;
        for (std::size_t i = 0; i < budgets.size(); ++i) {
            const double s = at(e3, "safety.N" + std::to_string(budgets[i]));
            safeties += (i ? "," : "") + num(s);
            if (i > 0 && s < at(e3, "safety.N" + std::to_string(budgets[i - 1])) - 0.02) monotone = false;
        }
        const double slope = at(e3, "rate_exponent");
        const double lo = at(e3, "score_error.N" + std::to_string(budgets.front()));
        const double hi = at(e3, "score_error.N" + std::to_string(budgets.back()));
        report(monotone && slope <= -1.0 / 3.0 && hi < 0.1 * lo, "exp3_rate",
               "safety_by_N=" + safeties + " slope=" + num(slope) + " score_error first=" + num(lo) +
                   " last=" + num(hi));
    }

    const auto e4 = run(4, cfg, out);
    {
        const double p = at(e4, "safety.ppc.K20"), c = at(e4, "safety.cbf_qp.K20");
        report(p - c >= 0.15, "exp4_scalability", "safety ppc=" + num(p) + " cbf_qp=" + num(c));
    }

    const auto e5 = run(5, cfg, out);
    {
        const double r = at(e5, "pearson_cost_path_length"), m = at(e5, "min_speed_safety");
        report(r > 0.0 && m >= 0.85, "exp5_drift", "pearson=" + num(r) + " min_speed_safety=" + num(m));
    }

    const auto e6 = run(6, cfg, out);
    {
        const double gap = at(e6, "safety.ppc_context") - at(e6, "safety.ppc_marginal");
        const double post = at(e6, "post_switch_safety.offline_context");
        const double steady = at(e6, "steady_safety.offline_context");
        report(gap >= 0.02 && post < steady, "exp6_context",
               "safety_gap=" + num(gap) + " offline post_switch=" + num(post) + " steady=" + num(steady));
    }
}

}  // namespace

int main(int argc, char** argv) {
    try {
        analytic_suite();
        experiment_suite(argc > 1 ? argv[1] : nullptr);
    } catch (const std::exception& e) {
        std::cout << "ERROR " << e.what() << std::endl;
        return 2;
    }
    std::cout << "acceptance: pass=" << g_pass << " fail=" << g_fail << std::endl;
    return 0;
}
