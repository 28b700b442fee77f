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
#include "ppc/env_sim.hpp"

#include <deque>
#include <limits>
#include <optional>
#include <vector>

namespace ppc {

// Kernel terms whose log-weight falls below this are treated as zero.
inline constexpr double kLogUnderflow = -700.0;

struct BufferEntry {
    Vec2 action;
    std::optional<Context> context;
    long step = 0;
};

// Time-stamped feasible actions. Entries older than `window_steps` are
// evicted on insert; n_cumulative counts every sample ever added.
class SampleBuffer {
public:
    SampleBuffer(long window_steps, std::size_t per_step_cap);

    void add(long step, const std::vector<Vec2>& actions,
             const std::optional<Context>& context = std::nullopt);
    void evict_before(long current_step);

    const std::deque<BufferEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    long n_cumulative() const { return n_cumulative_; }
    long window_steps() const { return window_steps_; }
    std::size_t per_step_cap() const { return per_step_cap_; }

    std::vector<Vec2> actions() const;

private:
    long window_steps_;
    std::size_t per_step_cap_;
    std::deque<BufferEntry> entries_;
    long n_cumulative_ = 0;
};

struct KdeEval {
    double log_density = -std::numeric_limits<double>::infinity();
    Vec2 score = Vec2::Zero();
    Mat2 fisher = Mat2::Zero();
    bool underflow = false;
};

// Weighted isotropic Gaussian KDE in the action plane. Points are held as
// structure-of-arrays so kernel sums vectorize.
class Kde {
public:
    Kde() = default;
    Kde(const std::vector<Vec2>& points, double bandwidth);
    Kde(const std::vector<Vec2>& points, const std::vector<double>& weights, double bandwidth);

    std::size_t size() const { return static_cast<std::size_t>(x_.size()); }
    double bandwidth() const { return h_; }
    double lambda_max() const { return 1.0 / (h_ * h_); }
    Vec2 point(std::size_t i) const { return {x_(i), y_(i)}; }
    double weight(std::size_t i) const { return std::exp(logw_(i)); }

    double log_density(const Vec2& u) const;
    double density(const Vec2& u) const;
    // Throws DensityUnderflow when every kernel term is below the floor.
    Vec2 score(const Vec2& u) const;
    Mat2 fisher_info(const Vec2& u) const;

    // Full evaluation; never throws. `fisher` is filled only if requested.
    KdeEval evaluate(const Vec2& u, bool with_fisher = true) const;

    // Whitespace-delimited dump: header line "h N", then "x y weight" rows.
    std::string dump() const;

private:
    Eigen::ArrayXd x_, y_, logw_;
    double h_ = 1.0;
    double log_norm_ = 0.0;
};

// h = c_h * sigma * n^(-1/(dim+4)), floored.
double bandwidth_rule(double sigma, std::size_t n, int dim, double c_h, double floor);

// Mean per-axis sample standard deviation.
double mean_axis_std(const std::vector<Vec2>& pts);

struct BandwidthConfig {
    double c_h = 1.06;
    double floor_u = 0.02;
    double floor_ctx = 0.05;
};

Kde fit_marginal(const SampleBuffer& buffer, const BandwidthConfig& cfg = {});
Kde fit_points(const std::vector<Vec2>& points, const BandwidthConfig& cfg = {});

// Product-kernel KDE over (action, context).
struct CondKde {
    std::vector<Vec2> points;
    std::vector<Context> contexts;
    double bandwidth_u = 1.0;
    double bandwidth_ctx = 1.0;
};

CondKde fit_conditional(const SampleBuffer& buffer, const BandwidthConfig& cfg = {});

// Weighted action KDE with weights proportional to K_hxi(xi - xi_i).
// Terms whose relative log-weight is below `prune_log_ratio` are dropped.
// Throws ContextUnderflow when no context kernel clears the floor.
Kde conditional_model(const CondKde& cond, const Context& xi, double prune_log_ratio = -40.0);

// Linear-interpolation percentile (position p/100 * (n - 1) of the sorted values).
double percentile(std::vector<double> values, double p);

double select_alpha(const Kde& model, const std::vector<Vec2>& probes, double pct = 10.0);

enum class CurvatureMethod {
    // min over rays of inward radial score / ray length at the alpha boundary
    RaySecant,
    // min lambda_min(fisher) over band probes and ray boundary points
    FisherBand,
};

struct CurvatureConfig {
    CurvatureMethod method = CurvatureMethod::RaySecant;
    double kappa_floor = 1e-3;
    int rays = 16;
    double band_upper = 1.5;  // band = [alpha, band_upper * alpha]
    int mean_shift_iters = 100;
    int bisection_iters = 30;
    double max_ray_length = 4.0;
};

struct CurvatureEstimate {
    double kappa = 0.0;
    double kappa_raw = 0.0;
    bool kappa_floored = false;
    double lambda_max = 0.0;
    double r_alpha = 0.0;
    double alpha = 0.0;
    double beta_star = 0.0;
    double g_c = 0.0;
    Vec2 density_peak = Vec2::Zero();
    std::vector<Vec2> boundary_points;
};

// Mean-shift fixed point of the KDE reached from `start`.
Vec2 find_mode(const Kde& model, const Vec2& start, int max_iters = 200);

// Distance from `center` along `dir` (unit) to the first crossing of density = alpha.
double ray_boundary_distance(const Kde& model, const Vec2& center, const Vec2& dir, double alpha,
                             double max_length, int bisection_iters);

CurvatureEstimate estimate_curvature(const Kde& model, double alpha, double g_c,
                                     const std::vector<Vec2>& probes,
                                     const CurvatureConfig& cfg = {});

// Same, with log-densities at the probes already computed.
CurvatureEstimate estimate_curvature(const Kde& model, double alpha, double g_c,
                                     const std::vector<Vec2>& probes,
                                     const std::vector<double>& probe_log_density,
                                     const CurvatureConfig& cfg);

// Mean squared score difference over eval_points.
double score_error(const Kde& model_a, const Kde& reference, const std::vector<Vec2>& eval_points);

}  // namespace ppc
