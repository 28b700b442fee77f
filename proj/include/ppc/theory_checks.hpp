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

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ppc {

class MultiBasin : public Error {
public:
    explicit MultiBasin(const std::string& what) : Error(what) {}
};

class SmallnessViolated : public Error {
public:
    explicit SmallnessViolated(const std::string& what) : Error(what) {}
};

class IdentifiabilityViolated : public Error {
public:
    explicit IdentifiabilityViolated(const std::string& what) : Error(what) {}
};

class PreconditionViolated : public Error {
public:
    explicit PreconditionViolated(const std::string& what) : Error(what) {}
};

struct GridSpec {
    Vec2 lo{-1.0, -1.0};
    Vec2 hi{1.0, 1.0};
    int resolution = 201;

    double cell() const { return (hi.x() - lo.x()) / (resolution - 1); }
    // Row i runs along y, column j along x.
    Vec2 point(int i, int j) const {
        return {lo.x() + (hi.x() - lo.x()) * j / (resolution - 1),
                lo.y() + (hi.y() - lo.y()) * i / (resolution - 1)};
    }
    std::size_t size() const { return static_cast<std::size_t>(resolution) * resolution; }
};

struct SyntheticScene {
    Kde density;
    CostModel cost;
    double beta = 1.0;
    double alpha = 0.0;           // superlevel threshold
    GridSpec grid;
    double density_offset = 0.0;  // uniform bump added to the density (level-set check only)
};

// Discrete-context mixture; component 0 is the current context.
struct MixtureScene {
    std::vector<double> weights;
    std::vector<Kde> components;
    CostModel cost;
    double beta = 1.0;
    double alpha = 0.0;  // threshold on the current-context density
    GridSpec grid;
};

struct CheckReport {
    std::string name;
    bool pass = false;
    bool skipped = false;  // degenerate or rejected scene; not a failure
    double worst_violation = 0.0;
    double tolerance = 0.0;
    long probes = 0;
    std::map<std::string, double> params;
    std::string note;
};

// One structured-text record per report.
std::string format_report(const CheckReport& r);

// Union of reports sharing a name and tolerance: worst of the worst, all must pass.
CheckReport merge_reports(const std::string& name, const std::vector<CheckReport>& parts);

// Geometry of the basin of the alpha-superlevel set that holds the grid density peak.
struct BasinInfo {
    std::vector<char> in_component;  // grid-indexed
    std::size_t component_size = 0;
    std::size_t peak_index = 0;
    Vec2 peak = Vec2::Zero();  // mean-shift refined density maximizer
    double kappa = 0.0;        // grid min of lambda_min(Fisher) over the component
    double lambda = 0.0;       // 1 / h^2
    double r_alpha = 0.0;      // ray distance from the peak to the level set
    double g_c = 0.0;          // grid max of ||grad c|| over the component
};

// Throws MultiBasin when the component has several grid maxima or is not
// log-concave; std::invalid_argument when the grid margin is under 3h.
BasinInfo analyze_basin(const SyntheticScene& scene);

// G_c / (kappa r_alpha) for the scene.
double critical_stiffness(const SyntheticScene& scene);

// Newton refinement of a stationary point of F from `start`.
Vec2 refine_minimizer(const SyntheticScene& scene, const Vec2& start, double beta);

CheckReport check_landscape(const SyntheticScene& scene);
CheckReport check_contraction(const SyntheticScene& scene, int k, std::uint64_t seed = 0,
                              int warm_starts = 100, double eta_scale = 1.0);
CheckReport check_critical_stiffness(const SyntheticScene& scene, const std::vector<double>& beta_grid);
CheckReport check_comparator_sensitivity(const SyntheticScene& scene_t, const SyntheticScene& scene_t1);
CheckReport check_level_set_stability(const SyntheticScene& truth, const SyntheticScene& estimate,
                                      double alpha);
CheckReport check_mixture_hessian(const MixtureScene& scene, const std::vector<Vec2>& probes);
CheckReport check_ctx_gap(const MixtureScene& scene);
CheckReport check_gibbs_map(const SyntheticScene& scene);

// Least-squares slope of ln(error) against ln(N).
double fit_rate_exponent(const std::vector<std::pair<double, double>>& series);

// Closed-form mixture pieces at u: posterior weights, E_w[hessian of ln p_j], Cov_w(s_j).
struct MixtureTerms {
    std::vector<double> posterior;
    Mat2 expected_hessian = Mat2::Zero();
    Mat2 score_covariance = Mat2::Zero();
    Mat2 marginal_hessian() const { return expected_hessian + score_covariance; }
};
MixtureTerms mixture_terms(const MixtureScene& scene, const Vec2& u);

// Scene builders used by the standard suite and the tests.
SyntheticScene gaussian_scene(const Vec2& center, double h, const CostModel& cost, double beta,
                              double alpha_fraction = 0.3, int resolution = 201);
SyntheticScene kde_scene(const std::vector<Vec2>& points, double h, const CostModel& cost, double beta,
                         double alpha_fraction = 0.3, int resolution = 201);
MixtureScene translated_gaussian_mixture(const std::vector<Vec2>& centers,
                                         const std::vector<double>& weights, double h,
                                         const CostModel& cost, double beta,
                                         double alpha_fraction = 0.3, int resolution = 161);

// Every check over its scene family; one merged report per check.
std::vector<CheckReport> run_all_checks(std::uint64_t seed = 0);

}  // namespace ppc
