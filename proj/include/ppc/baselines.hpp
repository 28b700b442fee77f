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
#include "ppc/controller.hpp"
#include "ppc/density.hpp"
#include "ppc/env_sim.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace ppc {

// ---------------------------------------------------------------------------
// Grid oracle

inline constexpr int kOracleGrid = 201;

// Feasible grid cell of least tracking cost. Throws NoFeasibleCell.
Vec2 oracle_action(const EnvState& env, int resolution = kOracleGrid);

// ---------------------------------------------------------------------------
// Two-dimensional QP: min ||u - u_nom||^2 s.t. a_i . u >= b_i, ||u|| <= radius.

struct HalfPlane {
    Vec2 a = Vec2::Zero();
    double b = 0.0;
};

struct QpResult {
    Vec2 u = Vec2::Zero();
    bool infeasible = false;
};

// Exact by enumeration of active sets: none, one line, two lines, the disk,
// and disk-line intersections. On infeasibility returns s * u_nom for the
// largest admissible s in [0, 1], else the origin.
QpResult solve_qp2d(const Vec2& u_nom, const std::vector<HalfPlane>& cons, double radius,
                    double tol = 1e-9);

std::vector<HalfPlane> workspace_halfplanes(const EnvState& env);

// Linearized discrete CBF rows a . u >= -gamma h for h = ||q - c||^2 - R^2.
HalfPlane cbf_row(const Vec2& q, const Vec2& center, double radius, double gamma);

struct CbfConfig {
    double gamma = 0.5;
    // false: barrier on o_k(t); true: on o_k(t+1).
    bool use_next_position = false;
};

QpResult cbf_qp_action(const EnvState& env, const CbfConfig& cfg = {});

// ---------------------------------------------------------------------------
// GP-CBF

struct GpConfig {
    int refit_period = 50;
    std::size_t max_points = 500;
    double gamma = 0.5;
    std::vector<double> lengthscales{0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0};
    std::vector<double> noise_variances{1e-4, 1e-2};
};

// RBF-kernel GP regression of the clearance on the next position.
class GpConstraintModel {
public:
    explicit GpConstraintModel(GpConfig cfg = {});

    void add(const Vec2& x, double y, Rng& rng);
    // Grid search on the log marginal likelihood; then refactor.
    void refit_hyperparameters();
    void set_hyperparameters(double lengthscale, double signal_variance, double noise_variance);

    std::size_t size() const { return xs_.size(); }
    long seen() const { return seen_; }
    double lengthscale() const { return ell_; }
    double noise_variance() const { return noise_; }
    double signal_variance() const { return sf2_; }

    double mean(const Vec2& x) const;
    Vec2 mean_gradient(const Vec2& x) const;
    double log_marginal_likelihood(double ell, double sf2, double noise) const;

    const GpConfig& config() const { return cfg_; }

private:
    void factor();

    GpConfig cfg_;
    std::vector<Vec2> xs_;
    std::vector<double> ys_;
    long seen_ = 0;
    double ell_ = 0.5;
    double sf2_ = 1.0;
    double noise_ = 1e-2;
    double prior_mean_ = 0.0;
    Eigen::VectorXd alpha_;
    bool dirty_ = true;
};

QpResult gp_cbf_action(const EnvState& env, const GpConstraintModel& gp, double gamma);

// ---------------------------------------------------------------------------
// CEM

struct CemConfig {
    std::size_t n_candidates = 300;
    double elite_fraction = 0.1;
    int iterations = 5;
    double init_std = 0.5;
};

struct CemResult {
    Vec2 u = Vec2::Zero();
    bool no_feasible = false;
    Vec2 final_mean = Vec2::Zero();
};

CemResult cem_action(const EnvState& env, const Kde& model, double alpha, const CemConfig& cfg,
                     Rng& rng);

// ---------------------------------------------------------------------------
// Static conservative

// r + d_safe + max over t in [0, horizon] of ||o(t) - o(0)||.
std::vector<double> swept_radii(const EnvState& initial, long horizon);

QpResult static_conservative_action(const EnvState& env, const std::vector<Vec2>& centers0,
                                    const std::vector<double>& radii, double gamma = 1.0);

// ---------------------------------------------------------------------------
// Uniform per-step controller interface

class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;
    // Recurring-mode episodes announce their layouts before reset.
    virtual void set_mode_layouts(const ModeLayouts& /*layouts*/) {}
    virtual void reset(const EnvState& initial, std::uint64_t seed, long horizon) = 0;
    // `rec.context_mode` is filled by the caller before the call.
    virtual Vec2 act(const EnvState& env, StepRecord& rec) = 0;
    // Realized transition; learning baselines update here.
    virtual void observe(const EnvState& /*before*/, const Vec2& /*u*/, const EnvState& /*after*/) {}
};

struct ControllerSettings {
    PpcConfig ppc;
    CbfConfig cbf;
    GpConfig gp;
    CemConfig cem;
    std::size_t offline_samples = 500;
    std::size_t offline_context_per_mode = 200;
    double static_gamma = 1.0;
    std::uint64_t projection_seed = 7;
};

// Names: ppc, offline_drgd, cbf_qp, gp_cbf, cem, static_conservative, oracle,
// ppc_context, ppc_marginal, offline_context.
std::unique_ptr<Controller> make_controller(const std::string& name, const ControllerSettings& s);

const std::vector<std::string>& known_controllers();

}  // namespace ppc
