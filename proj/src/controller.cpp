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

#include "ppc/controller.hpp"

#include <algorithm>

namespace ppc {

std::pair<double, Vec2> cost_and_grad(const CostModel& cost, const Vec2& u) {
    return {cost.value(u), cost.grad(u)};
}

double beta_schedule(double beta_star, double c, long n_cumulative) {
    if (n_cumulative < 1) throw std::invalid_argument("n_cumulative must be >= 1");
    return beta_star * (1.0 + c / std::sqrt(static_cast<double>(n_cumulative)));
}

double step_size(double l_c, double beta, double lambda_max, double eta0) {
    return std::min(eta0, 1.0 / (l_c + beta * lambda_max));
}

PlanResult plan(const CostModel& cost, const ScoreFn& score, double beta, double eta, int k,
                const Vec2& u_warm) {
    PlanResult out;
    out.u = u_warm;
    if (k <= 0) return out;
    Vec2 u = u_warm;
    for (int it = 0; it < k; ++it) {
        Vec2 s;
        try {
            s = score(u);
        } catch (const DensityUnderflow&) {
            out.stopped_early = true;
            break;
        }
        u -= eta * (cost.grad(u) - beta * s);
        out.iterations = it + 1;
    }
    out.u = clip_to_disk(u, cost.u_max);
    return out;
}

FilterReport safety_filter(const Kde& model, double alpha, const Vec2& u_ppc, int j, double eta_r,
                           double u_max) {
    FilterReport rep;
    rep.u = u_ppc;
    KdeEval ev = model.evaluate(u_ppc, false);
    rep.input_density = std::exp(ev.log_density);
    rep.final_density = rep.input_density;
    const double log_alpha = std::log(alpha);
    if (ev.log_density >= log_alpha) return rep;

    rep.active = true;
    Vec2 u = u_ppc;
    Vec2 best_u = u_ppc;
    double best_log = ev.log_density;
    for (int it = 0; it < j; ++it) {
        u = clip_to_disk(u + eta_r * ev.score, u_max);
        ev = model.evaluate(u, false);
        rep.iterations = it + 1;
        if (ev.log_density > best_log) {
            best_log = ev.log_density;
            best_u = u;
        }
        if (ev.log_density >= log_alpha) break;
    }
    rep.exhausted = best_log < log_alpha;
    rep.u = best_u;
    rep.final_density = std::exp(best_log);
    return rep;
}

DensitySnapshot analyze_density(Kde model, const std::vector<Vec2>& probes, const CostModel& cost,
                                const PpcConfig& cfg) {
    DensitySnapshot snap;
    std::vector<double> logd(probes.size());
    std::vector<double> dens(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
        logd[i] = model.log_density(probes[i]);
        dens[i] = std::exp(logd[i]);
    }
    const double alpha = percentile(std::move(dens), cfg.alpha_percentile);
    snap.curvature = estimate_curvature(model, alpha, cost.g_c(), probes, logd, cfg.curvature);
    snap.model = std::move(model);
    return snap;
}

Vec2 plan_and_filter(const DensitySnapshot& snap, const CostModel& cost, double beta,
                     const PpcConfig& cfg, const Vec2& u_warm, StepRecord& rec) {
    const Kde& model = snap.model;
    const CurvatureEstimate& ce = snap.curvature;
    const double eta = step_size(CostModel::kLipschitz, beta, ce.lambda_max, cfg.eta0);
    const ScoreFn score = [&model](const Vec2& u) { return model.score(u); };
    const PlanResult pr = plan(cost, score, beta, eta, cfg.inner_steps, u_warm);
    const double h = model.bandwidth();
    const FilterReport fr =
        safety_filter(model, ce.alpha, pr.u, cfg.retraction_steps, 0.5 * h * h, cost.u_max);

    rec.beta_t = beta;
    rec.beta_star = ce.beta_star;
    rec.kappa = ce.kappa;
    rec.kappa_floored = ce.kappa_floored;
    rec.r_alpha = ce.r_alpha;
    rec.alpha = ce.alpha;
    rec.bandwidth = h;
    rec.g_c = ce.g_c;
    rec.density_peak = ce.density_peak;
    rec.filter_active = fr.active;
    rec.filter_iterations = fr.iterations;
    rec.filter_failed = fr.exhausted;
    return fr.u;
}

PpcStepResult ppc_step(const EnvState& env, SampleBuffer& buffer, const PpcConfig& cfg,
                       PpcState& state, Rng& rng, const std::optional<Context>& xi) {
    PpcStepResult res;
    StepRecord& rec = res.record;
    rec.t = env.t;
    const CostModel cost{env.q, env.goal, env.u_max};

    std::vector<Vec2> samples;
    try {
        samples = sample_feasible(env, cfg.n_samples, rng, cfg.max_attempts_per_sample);
    } catch (const FeasibleRegionTooSmall&) {
        rec.blocked = true;
        rec.n_cumulative = state.n_cumulative;
        state.u_prev = Vec2::Zero();
        res.action = Vec2::Zero();
        return res;
    }
    buffer.add(env.t, samples, xi);
    state.n_cumulative += static_cast<long>(samples.size());
    rec.n_cumulative = state.n_cumulative;

    Kde model;
    if (xi) {
        try {
            model = conditional_model(fit_conditional(buffer, cfg.bandwidth), *xi);
        } catch (const ContextUnderflow&) {
            rec.context_fallback = true;
            model = fit_points(samples, cfg.bandwidth);
        }
    } else {
        model = fit_marginal(buffer, cfg.bandwidth);
    }

    DensitySnapshot snap;
    try {
        snap = analyze_density(std::move(model), samples, cost, cfg);
    } catch (const NoInteriorPoint&) {
        // Stale window entries dominate; the fresh samples alone still define M_t.
        snap = analyze_density(fit_points(samples, cfg.bandwidth), samples, cost, cfg);
    }

    double beta = 0.0;
    if (cfg.beta_mode == BetaMode::Schedule) {
        beta = beta_schedule(snap.curvature.beta_star, cfg.schedule_c, state.n_cumulative);
    } else {
        beta = cfg.beta_ratio * snap.curvature.beta_star;
    }

    res.action = plan_and_filter(snap, cost, beta, cfg, state.u_prev, rec);
    state.u_prev = res.action;
    state.beta_t = beta;
    state.last_filter_active = rec.filter_active;
    return res;
}

}  // namespace ppc
