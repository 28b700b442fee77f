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

#include "ppc/density.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace ppc {

SampleBuffer::SampleBuffer(long window_steps, std::size_t per_step_cap)
    : window_steps_(window_steps), per_step_cap_(per_step_cap) {
    if (window_steps < 1) throw std::invalid_argument("window_steps must be >= 1");
}

void SampleBuffer::add(long step, const std::vector<Vec2>& actions,
                       const std::optional<Context>& context) {
    evict_before(step);
    const std::size_t take = std::min(actions.size(), per_step_cap_);
    for (std::size_t i = 0; i < take; ++i) entries_.push_back({actions[i], context, step});
    n_cumulative_ += static_cast<long>(actions.size());
}

void SampleBuffer::evict_before(long current_step) {
    while (!entries_.empty() && entries_.front().step <= current_step - window_steps_) {
        entries_.pop_front();
    }
}

std::vector<Vec2> SampleBuffer::actions() const {
    std::vector<Vec2> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.action);
    return out;
}

// ---------------------------------------------------------------------------

Kde::Kde(const std::vector<Vec2>& points, double bandwidth)
    : Kde(points, std::vector<double>(points.size(), 1.0), bandwidth) {}

Kde::Kde(const std::vector<Vec2>& points, const std::vector<double>& weights, double bandwidth)
    : h_(bandwidth) {
    if (points.empty()) throw EmptyBuffer("KDE needs at least one point");
    if (weights.size() != points.size()) throw std::invalid_argument("weights/points size mismatch");
    if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    const auto n = static_cast<Eigen::Index>(points.size());
    x_.resize(n);
    y_.resize(n);
    logw_.resize(n);
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("weights must be non-negative");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("weights sum to zero");
    for (Eigen::Index i = 0; i < n; ++i) {
        x_(i) = points[i].x();
        y_(i) = points[i].y();
        logw_(i) = std::log(weights[i] / total);
    }
    log_norm_ = std::log(2.0 * kPi * h_ * h_);
}

KdeEval Kde::evaluate(const Vec2& u, bool with_fisher) const {
    KdeEval out;
    const double inv_h2 = 1.0 / (h_ * h_);
    const Eigen::ArrayXd dx = x_ - u.x();
    const Eigen::ArrayXd dy = y_ - u.y();
    const Eigen::ArrayXd e = logw_ - 0.5 * inv_h2 * (dx.square() + dy.square());
    const double m = e.maxCoeff();
    if (!(m > kLogUnderflow)) {
        out.underflow = true;
        // Nearest-kernel limit keeps the direction meaningful for callers that
        // tolerate far-field evaluation.
        Eigen::Index k = 0;
        e.maxCoeff(&k);
        out.log_density = m - log_norm_;
        out.score = Vec2(dx(k), dy(k)) * inv_h2;
        if (with_fisher) out.fisher = Mat2::Identity() * inv_h2;
        return out;
    }
    const Eigen::ArrayXd r = (e - m).exp();
    const double s = r.sum();
    out.log_density = m + std::log(s) - log_norm_;
    const double mx = (r * dx).sum() / s;
    const double my = (r * dy).sum() / s;
    out.score = Vec2(mx, my) * inv_h2;
    if (with_fisher) {
        const Eigen::ArrayXd cx = dx - mx;
        const Eigen::ArrayXd cy = dy - my;
        const double sxx = (r * cx.square()).sum() / s;
        const double syy = (r * cy.square()).sum() / s;
        const double sxy = (r * cx * cy).sum() / s;
        Mat2 cov;
        cov << sxx, sxy, sxy, syy;
        out.fisher = Mat2::Identity() * inv_h2 - cov * (inv_h2 * inv_h2);
    }
    return out;
}

double Kde::log_density(const Vec2& u) const {
    const double inv_h2 = 1.0 / (h_ * h_);
    const Eigen::ArrayXd e =
        logw_ - 0.5 * inv_h2 * ((x_ - u.x()).square() + (y_ - u.y()).square());
    const double m = e.maxCoeff();
    if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
    return m + std::log((e - m).exp().sum()) - log_norm_;
}

double Kde::density(const Vec2& u) const { return std::exp(log_density(u)); }

Vec2 Kde::score(const Vec2& u) const {
    const KdeEval ev = evaluate(u, false);
    if (ev.underflow) throw DensityUnderflow("all kernels underflow at the query point");
    return ev.score;
}

Mat2 Kde::fisher_info(const Vec2& u) const {
    const KdeEval ev = evaluate(u, true);
    if (ev.underflow) throw DensityUnderflow("all kernels underflow at the query point");
    return ev.fisher;
}

std::string Kde::dump() const {
    std::ostringstream os;
    os << std::setprecision(17) << h_ << ' ' << x_.size() << '\n';
    for (Eigen::Index i = 0; i < x_.size(); ++i) {
        os << x_(i) << ' ' << y_(i) << ' ' << std::exp(logw_(i)) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------

double bandwidth_rule(double sigma, std::size_t n, int dim, double c_h, double floor) {
    if (n == 0) return floor;
    const double h = c_h * sigma * std::pow(static_cast<double>(n), -1.0 / (dim + 4));
    return std::max(floor, h);
}

double mean_axis_std(const std::vector<Vec2>& pts) {
    if (pts.size() < 2) return 0.0;
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Vec2 ss = Vec2::Zero();
    for (const auto& p : pts) ss += (p - mean).cwiseAbs2();
    ss /= static_cast<double>(pts.size() - 1);
    return 0.5 * (std::sqrt(ss.x()) + std::sqrt(ss.y()));
}

Kde fit_points(const std::vector<Vec2>& points, const BandwidthConfig& cfg) {
    if (points.empty()) throw EmptyBuffer("no samples to fit");
    const double h = bandwidth_rule(mean_axis_std(points), points.size(), 2, cfg.c_h, cfg.floor_u);
    return Kde(points, h);
}

Kde fit_marginal(const SampleBuffer& buffer, const BandwidthConfig& cfg) {
    if (buffer.empty()) throw EmptyBuffer("sample buffer is empty");
    return fit_points(buffer.actions(), cfg);
}

CondKde fit_conditional(const SampleBuffer& buffer, const BandwidthConfig& cfg) {
    if (buffer.empty()) throw EmptyBuffer("sample buffer is empty");
    CondKde out;
    out.points.reserve(buffer.size());
    out.contexts.reserve(buffer.size());
    for (const auto& e : buffer.entries()) {
        if (!e.context) throw std::invalid_argument("conditional fit needs a context on every entry");
        out.points.push_back(e.action);
        out.contexts.push_back(*e.context);
    }
    const std::size_t n = out.points.size();
    out.bandwidth_u = bandwidth_rule(mean_axis_std(out.points), n, 2, cfg.c_h, cfg.floor_u);

    double sigma_ctx = 0.0;
    if (n >= 2) {
        Context mean = Context::Zero();
        for (const auto& c : out.contexts) mean += c;
        mean /= static_cast<double>(n);
        Context ss = Context::Zero();
        for (const auto& c : out.contexts) ss += (c - mean).cwiseAbs2();
        ss /= static_cast<double>(n - 1);
        sigma_ctx = ss.cwiseSqrt().mean();
    }
    out.bandwidth_ctx = bandwidth_rule(sigma_ctx, n, kContextDim, cfg.c_h, cfg.floor_ctx);
    return out;
}

Kde conditional_model(const CondKde& cond, const Context& xi, double prune_log_ratio) {
    if (cond.points.empty()) throw EmptyBuffer("conditional model is empty");
    const std::size_t n = cond.points.size();
    const double inv = 0.5 / (cond.bandwidth_ctx * cond.bandwidth_ctx);
    std::vector<double> lw(n);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        lw[i] = -inv * (cond.contexts[i] - xi).squaredNorm();
        m = std::max(m, lw[i]);
    }
    if (!(m > kLogUnderflow)) throw ContextUnderflow("context is far from every stored context");
    std::vector<Vec2> pts;
    std::vector<double> w;
    pts.reserve(n);
    w.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double rel = lw[i] - m;
        if (rel < prune_log_ratio) continue;
        pts.push_back(cond.points[i]);
        w.push_back(std::exp(rel));
    }
    return Kde(pts, w, cond.bandwidth_u);
}

// ---------------------------------------------------------------------------

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double select_alpha(const Kde& model, const std::vector<Vec2>& probes, double pct) {
    if (probes.empty()) throw std::invalid_argument("select_alpha needs probe points");
    std::vector<double> d;
    d.reserve(probes.size());
    for (const auto& p : probes) d.push_back(model.density(p));
    return percentile(std::move(d), pct);
}

Vec2 find_mode(const Kde& model, const Vec2& start, int max_iters) {
    const double h = model.bandwidth();
    const double h2 = h * h;
    Vec2 u = start;
    for (int it = 0; it < max_iters; ++it) {
        const KdeEval ev = model.evaluate(u, false);
        if (ev.underflow) break;
        // Mean-shift: u + h^2 s(u) is the responsibility-weighted mean.
        const Vec2 step = h2 * ev.score;
        u += step;
        if (step.norm() < 1e-7 * h) break;
    }
    return u;
}

double ray_boundary_distance(const Kde& model, const Vec2& center, const Vec2& dir, double alpha,
                             double max_length, int bisection_iters) {
    const double log_alpha = std::log(alpha);
    const double stride = 0.5 * model.bandwidth();
    double inside = 0.0;
    double outside = -1.0;
    for (double t = stride; t <= max_length + 0.5 * stride; t += stride) {
        if (model.log_density(center + t * dir) < log_alpha) {
            outside = t;
            break;
        }
        inside = t;
    }
    if (outside < 0.0) return max_length;
    for (int it = 0; it < bisection_iters; ++it) {
        const double mid = 0.5 * (inside + outside);
        if (model.log_density(center + mid * dir) >= log_alpha) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    return 0.5 * (inside + outside);
}

namespace {

double min_eigenvalue(const Mat2& m) {
    const double tr = 0.5 * (m(0, 0) + m(1, 1));
    const double diff = 0.5 * (m(0, 0) - m(1, 1));
    return tr - std::sqrt(diff * diff + m(0, 1) * m(1, 0));
}

}  // namespace

CurvatureEstimate estimate_curvature(const Kde& model, double alpha, double g_c,
                                     const std::vector<Vec2>& probes, const CurvatureConfig& cfg) {
    std::vector<double> logd(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) logd[i] = model.log_density(probes[i]);
    return estimate_curvature(model, alpha, g_c, probes, logd, cfg);
}

CurvatureEstimate estimate_curvature(const Kde& model, double alpha, double g_c,
                                     const std::vector<Vec2>& probes,
                                     const std::vector<double>& logd,
                                     const CurvatureConfig& cfg) {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (logd.size() != probes.size()) throw std::invalid_argument("probe/log-density size mismatch");
    CurvatureEstimate est;
    est.alpha = alpha;
    est.g_c = g_c;
    est.lambda_max = model.lambda_max();

    // Highest-density probe seeds the mode search.
    const double log_alpha = std::log(alpha);
    double best = -std::numeric_limits<double>::infinity();
    Vec2 start = Vec2::Zero();
    for (std::size_t i = 0; i < probes.size(); ++i) {
        if (logd[i] > best) {
            best = logd[i];
            start = probes[i];
        }
    }
    if (probes.empty() || best < log_alpha) {
        throw NoInteriorPoint("no probe reaches the alpha level");
    }
    est.density_peak = find_mode(model, start, cfg.mean_shift_iters);

    est.r_alpha = std::numeric_limits<double>::infinity();
    est.boundary_points.reserve(static_cast<std::size_t>(cfg.rays));
    for (int k = 0; k < cfg.rays; ++k) {
        const double ang = 2.0 * kPi * k / cfg.rays;
        const Vec2 dir(std::cos(ang), std::sin(ang));
        const double r = ray_boundary_distance(model, est.density_peak, dir, alpha,
                                               cfg.max_ray_length, cfg.bisection_iters);
        est.r_alpha = std::min(est.r_alpha, r);
        est.boundary_points.push_back(est.density_peak + r * dir);
    }

    double kmin = std::numeric_limits<double>::infinity();
    if (cfg.method == CurvatureMethod::RaySecant) {
        for (int k = 0; k < cfg.rays; ++k) {
            const Vec2 dir = (est.boundary_points[k] - est.density_peak).normalized();
            const double r = (est.boundary_points[k] - est.density_peak).norm();
            if (!(r > 0.0)) continue;
            const double inward = -model.evaluate(est.boundary_points[k], false).score.dot(dir);
            kmin = std::min(kmin, inward / r);
        }
    } else {
        const double log_upper = log_alpha + std::log(cfg.band_upper);
        for (std::size_t i = 0; i < probes.size(); ++i) {
            if (logd[i] < log_alpha || logd[i] > log_upper) continue;
            kmin = std::min(kmin, min_eigenvalue(model.evaluate(probes[i]).fisher));
        }
        for (const auto& b : est.boundary_points) {
            kmin = std::min(kmin, min_eigenvalue(model.evaluate(b).fisher));
        }
    }
    est.kappa_raw = kmin;
    est.kappa_floored = !(kmin > cfg.kappa_floor);
    est.kappa = est.kappa_floored ? cfg.kappa_floor : std::min(kmin, est.lambda_max);
    est.beta_star = g_c / (est.kappa * est.r_alpha);
    return est;
}

double score_error(const Kde& model_a, const Kde& reference, const std::vector<Vec2>& eval_points) {
    if (eval_points.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& p : eval_points) {
        const Vec2 d = model_a.evaluate(p, false).score - reference.evaluate(p, false).score;
        acc += d.squaredNorm();
    }
    return acc / static_cast<double>(eval_points.size());
}

}  // namespace ppc
