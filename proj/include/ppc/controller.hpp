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

#pragma once

#include "ppc/common.hpp"
#include "ppc/density.hpp"
#include "ppc/env_sim.hpp"

#include <functional>
#include <optional>

namespace ppc {

// Tracking cost ||q + u - g||^2.
struct CostModel {
    Vec2 q = Vec2::Zero();
    Vec2 goal = Vec2::Zero();
    double u_max = 1.0;

    static constexpr double kLipschitz = 2.0;

    double value(const Vec2& u) const { return (q + u - goal).squaredNorm(); }
    Vec2 grad(const Vec2& u) const { return 2.0 * (q + u - goal); }
    double g_c() const { return 2.0 * ((q - goal).norm() + u_max); }
};

std::pair<double, Vec2> cost_and_grad(const CostModel& cost, const Vec2& u);

double beta_schedule(double beta_star, double c, long n_cumulative);

double step_size(double l_c, double beta, double lambda_max, double eta0);

struct PlanResult {
    Vec2 u = Vec2::Zero();
    int iterations = 0;
    bool stopped_early = false;
};

// May throw DensityUnderflow; plan() then stops at the last valid iterate.
using ScoreFn = std::function<Vec2(const Vec2&)>;

PlanResult plan(const CostModel& cost, const ScoreFn& score, double beta, double eta, int k,
                const Vec2& u_warm);

struct FilterReport {
    Vec2 u = Vec2::Zero();
    bool active = false;
    bool exhausted = false;
    int iterations = 0;
    double input_density = 0.0;
    double final_density = 0.0;
};

FilterReport safety_filter(const Kde& model, double alpha, const Vec2& u_ppc, int j, double eta_r,
                           double u_max = 1.0);

enum class BetaMode {
    Schedule,    // beta* (1 + C / sqrt(N_t))
    FixedRatio,  // beta_ratio * beta*, schedule off
};

struct PpcConfig {
    std::size_t n_samples = 300;
    long window_steps = 5;
    int inner_steps = 50;
    double schedule_c = 10.0;
    int retraction_steps = 25;
    double alpha_percentile = 10.0;
    double eta0 = 0.02;
    int max_attempts_per_sample = 50;
    BetaMode beta_mode = BetaMode::Schedule;
    double beta_ratio = 1.0;
    BandwidthConfig bandwidth;
    CurvatureConfig curvature;
};

struct PpcState {
    Vec2 u_prev = Vec2::Zero();
    long n_cumulative = 0;
    double beta_t = 0.0;
    bool last_filter_active = false;
};

// One row of the per-step log shared by every controller.
struct StepRecord {
    long t = 0;
    Vec2 q = Vec2::Zero();
    Vec2 goal = Vec2::Zero();
    Vec2 action = Vec2::Zero();
    bool feasible = true;
    double cost = 0.0;
    double clearance = 0.0;
    double beta_t = 0.0;
    double beta_star = 0.0;
    double kappa = 0.0;
    bool kappa_floored = false;
    double r_alpha = 0.0;
    double alpha = 0.0;
    double bandwidth = 0.0;
    double g_c = 0.0;
    Vec2 density_peak = Vec2::Zero();
    bool filter_active = false;
    int filter_iterations = 0;
    bool filter_failed = false;
    bool blocked = false;
    bool context_fallback = false;
    int context_mode = -1;
    long n_cumulative = 0;
    long wall_clock_ns = 0;
};

// Everything the planner/filter pair needs for one decision.
struct DensitySnapshot {
    Kde model;
    CurvatureEstimate curvature;
};

// Fit -> alpha -> curvature on a given model; probes are the step's samples.
DensitySnapshot analyze_density(Kde model, const std::vector<Vec2>& probes, const CostModel& cost,
                                const PpcConfig& cfg);

// Plan + filter given a snapshot and a stiffness. Fills the controller
// fields of `rec` (not feasibility, cost, or timing).
Vec2 plan_and_filter(const DensitySnapshot& snap, const CostModel& cost, double beta,
                     const PpcConfig& cfg, const Vec2& u_warm, StepRecord& rec);

struct PpcStepResult {
    Vec2 action = Vec2::Zero();
    StepRecord record;
};

// Full online step. With `xi` set and a conditional buffer, the density is
// the context-conditional KDE; ContextUnderflow falls back to the marginal
// KDE of the current step's samples.
PpcStepResult ppc_step(const EnvState& env, SampleBuffer& buffer, const PpcConfig& cfg,
                       PpcState& state, Rng& rng, const std::optional<Context>& xi = std::nullopt);

}  // namespace ppc
