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

#include "ppc/baselines.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace ppc {

Vec2 oracle_action(const EnvState& env, int resolution) {
    if (resolution < 2) throw std::invalid_argument("oracle grid needs >= 2 cells per axis");
    std::vector<Vec2> centers;
    std::vector<double> need_sq;
    for (const auto& ob : env.obstacles) {
        centers.push_back(obstacle_position(ob, env.t + 1, env.bounds));
        const double need = ob.radius + env.d_safe;
        need_sq.push_back(need * need);
    }
    const double r2 = env.u_max * env.u_max;
    const double step = 2.0 * env.u_max / (resolution - 1);
    double best_cost = std::numeric_limits<double>::infinity();
    double best_norm = std::numeric_limits<double>::infinity();
    Vec2 best = Vec2::Zero();
    bool found = false;
    for (int i = 0; i < resolution; ++i) {
        const double ux = -env.u_max + i * step;
        for (int j = 0; j < resolution; ++j) {
            const double uy = -env.u_max + j * step;
            const double n2 = ux * ux + uy * uy;
            if (n2 > r2 * (1.0 + 1e-12)) continue;
            const Vec2 next(env.q.x() + ux, env.q.y() + uy);
            if (env.bounded_feasibility && !env.bounds.contains(next)) continue;
            bool ok = true;
            for (std::size_t k = 0; k < centers.size(); ++k) {
                if ((next - centers[k]).squaredNorm() < need_sq[k]) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            const double c = (next - env.goal).squaredNorm();
            if (c < best_cost || (c == best_cost && n2 < best_norm)) {
                best_cost = c;
                best_norm = n2;
                best = Vec2(ux, uy);
                found = true;
            }
        }
    }
    if (!found) throw NoFeasibleCell("every oracle grid cell is infeasible");
    return best;
}

// ---------------------------------------------------------------------------

QpResult solve_qp2d(const Vec2& u_nom, const std::vector<HalfPlane>& cons, double radius,
                    double tol) {
    auto admissible = [&](const Vec2& u) {
        if (u.norm() > radius + tol) return false;
        for (const auto& c : cons) {
            if (c.a.dot(u) < c.b - tol) return false;
        }
        return true;
    };
    QpResult out;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    auto consider = [&](const Vec2& u) {
        if (!u.allFinite() || !admissible(u)) return;
        const double obj = (u - u_nom).squaredNorm();
        if (obj < best) {
            best = obj;
            out.u = u;
            found = true;
        }
    };

    consider(u_nom);
    for (const auto& c : cons) {
        const double a2 = c.a.squaredNorm();
        if (a2 <= 0.0) continue;
        consider(u_nom + (c.b - c.a.dot(u_nom)) / a2 * c.a);
    }
    for (std::size_t i = 0; i < cons.size(); ++i) {
        for (std::size_t j = i + 1; j < cons.size(); ++j) {
            Mat2 m;
            m << cons[i].a.x(), cons[i].a.y(), cons[j].a.x(), cons[j].a.y();
            const double det = m.determinant();
            if (std::abs(det) < 1e-14 * (1.0 + m.squaredNorm())) continue;
            consider(m.inverse() * Vec2(cons[i].b, cons[j].b));
        }
    }
    const double nn = u_nom.norm();
    if (nn > 0.0) consider(u_nom * (radius / nn));
    for (const auto& c : cons) {
        const double an = c.a.norm();
        if (an <= 0.0) continue;
        const Vec2 p0 = c.a * (c.b / (an * an));
        const double rem = radius * radius - p0.squaredNorm();
        if (rem < 0.0) continue;
        const Vec2 d(-c.a.y() / an, c.a.x() / an);
        const double t = std::sqrt(rem);
        consider(p0 + t * d);
        consider(p0 - t * d);
    }
    if (found) {
        out.u = clip_to_disk(out.u, radius);
        return out;
    }

    out.infeasible = true;
    double lo = 0.0;
    double hi = 1.0;
    if (nn > 0.0) hi = std::min(hi, radius / nn);
    for (const auto& c : cons) {
        const double k = c.a.dot(u_nom);
        if (std::abs(k) < 1e-15) {
            if (c.b > tol) lo = std::numeric_limits<double>::infinity();
        } else if (k > 0.0) {
            lo = std::max(lo, c.b / k);
        } else {
            hi = std::min(hi, c.b / k);
        }
    }
    out.u = (lo <= hi) ? clip_to_disk(hi * u_nom, radius) : Vec2::Zero();
    return out;
}

std::vector<HalfPlane> workspace_halfplanes(const EnvState& env) {
    if (!env.bounded_feasibility) return {};
    const Vec2& q = env.q;
    return {
        {Vec2(1.0, 0.0), env.bounds.lo.x() - q.x()},
        {Vec2(-1.0, 0.0), q.x() - env.bounds.hi.x()},
        {Vec2(0.0, 1.0), env.bounds.lo.y() - q.y()},
        {Vec2(0.0, -1.0), q.y() - env.bounds.hi.y()},
    };
}

HalfPlane cbf_row(const Vec2& q, const Vec2& center, double radius, double gamma) {
    const Vec2 diff = q - center;
    const double h = diff.squaredNorm() - radius * radius;
    return {2.0 * diff, -gamma * h};
}

QpResult cbf_qp_action(const EnvState& env, const CbfConfig& cfg) {
    const Vec2 u_nom = clip_to_disk(env.goal - env.q, env.u_max);
    std::vector<HalfPlane> cons = workspace_halfplanes(env);
    const long when = cfg.use_next_position ? env.t + 1 : env.t;
    for (const auto& ob : env.obstacles) {
        cons.push_back(cbf_row(env.q, obstacle_position(ob, when, env.bounds), ob.radius + env.d_safe,
                               cfg.gamma));
    }
    return solve_qp2d(u_nom, cons, env.u_max);
}

// ---------------------------------------------------------------------------

GpConstraintModel::GpConstraintModel(GpConfig cfg) : cfg_(std::move(cfg)) {}

void GpConstraintModel::add(const Vec2& x, double y, Rng& rng) {
    ++seen_;
    if (xs_.size() < cfg_.max_points) {
        xs_.push_back(x);
        ys_.push_back(y);
        dirty_ = true;
        return;
    }
    // Reservoir sampling keeps a uniform subsample of everything seen.
    const auto j = static_cast<long>(uniform(rng, 0.0, static_cast<double>(seen_)));
    if (j < static_cast<long>(cfg_.max_points)) {
        xs_[static_cast<std::size_t>(j)] = x;
        ys_[static_cast<std::size_t>(j)] = y;
        dirty_ = true;
    }
}

void GpConstraintModel::set_hyperparameters(double lengthscale, double signal_variance,
                                            double noise_variance) {
    ell_ = lengthscale;
    sf2_ = signal_variance;
    noise_ = noise_variance;
    dirty_ = true;
}

namespace {

double target_variance(const std::vector<double>& ys) {
    if (ys.size() < 2) return 1.0;
    const double m = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double v = 0.0;
    for (double y : ys) v += (y - m) * (y - m);
    return std::max(v / static_cast<double>(ys.size()), 1e-4);
}

Eigen::MatrixXd rbf_gram(const std::vector<Vec2>& xs, double ell, double sf2) {
    const auto n = static_cast<Eigen::Index>(xs.size());
    Eigen::MatrixXd k(n, n);
    const double inv = 0.5 / (ell * ell);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = sf2;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = sf2 * std::exp(-inv * (xs[i] - xs[j]).squaredNorm());
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

}  // namespace

double GpConstraintModel::log_marginal_likelihood(double ell, double sf2, double noise) const {
    if (xs_.empty()) return 0.0;
    const auto n = static_cast<Eigen::Index>(xs_.size());
    Eigen::MatrixXd k = rbf_gram(xs_, ell, sf2);
    k.diagonal().array() += noise;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double m = std::accumulate(ys_.begin(), ys_.end(), 0.0) / static_cast<double>(n);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = ys_[static_cast<std::size_t>(i)] - m;
    const Eigen::VectorXd a = llt.solve(y);
    const Eigen::MatrixXd l = llt.matrixL();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    return -0.5 * y.dot(a) - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * kPi);
}

void GpConstraintModel::refit_hyperparameters() {
    if (xs_.size() < 2) return;
    const double sf2 = target_variance(ys_);
    double best = -std::numeric_limits<double>::infinity();
    double best_ell = ell_;
    double best_noise = noise_;
    for (double ell : cfg_.lengthscales) {
        for (double nz : cfg_.noise_variances) {
            const double lml = log_marginal_likelihood(ell, sf2, nz);
            if (lml > best) {
                best = lml;
                best_ell = ell;
                best_noise = nz;
            }
        }
    }
    set_hyperparameters(best_ell, sf2, best_noise);
}

void GpConstraintModel::factor() {
    const auto n = static_cast<Eigen::Index>(xs_.size());
    prior_mean_ = n ? std::accumulate(ys_.begin(), ys_.end(), 0.0) / static_cast<double>(n) : 0.0;
    if (n == 0) {
        alpha_.resize(0);
        dirty_ = false;
        return;
    }
    Eigen::MatrixXd k = rbf_gram(xs_, ell_, sf2_);
    k.diagonal().array() += noise_;
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = ys_[static_cast<std::size_t>(i)] - prior_mean_;
    alpha_ = k.ldlt().solve(y);
    dirty_ = false;
}

double GpConstraintModel::mean(const Vec2& x) const {
    if (dirty_) const_cast<GpConstraintModel*>(this)->factor();
    double acc = prior_mean_;
    const double inv = 0.5 / (ell_ * ell_);
    for (std::size_t i = 0; i < xs_.size(); ++i) {
        acc += alpha_(static_cast<Eigen::Index>(i)) * sf2_ * std::exp(-inv * (x - xs_[i]).squaredNorm());
    }
    return acc;
}

Vec2 GpConstraintModel::mean_gradient(const Vec2& x) const {
    if (dirty_) const_cast<GpConstraintModel*>(this)->factor();
    Vec2 g = Vec2::Zero();
    const double inv = 0.5 / (ell_ * ell_);
    for (std::size_t i = 0; i < xs_.size(); ++i) {
        const double k = sf2_ * std::exp(-inv * (x - xs_[i]).squaredNorm());
        g += alpha_(static_cast<Eigen::Index>(i)) * k * (xs_[i] - x) / (ell_ * ell_);
    }
    return g;
}

QpResult gp_cbf_action(const EnvState& env, const GpConstraintModel& gp, double gamma) {
    const Vec2 u_nom = clip_to_disk(env.goal - env.q, env.u_max);
    std::vector<HalfPlane> cons = workspace_halfplanes(env);
    if (gp.size() > 0) {
        const double h = gp.mean(env.q);
        cons.push_back({gp.mean_gradient(env.q), -gamma * h});
    }
    return solve_qp2d(u_nom, cons, env.u_max);
}

// ---------------------------------------------------------------------------

CemResult cem_action(const EnvState& env, const Kde& model, double alpha, const CemConfig& cfg,
                     Rng& rng) {
    const CostModel cost{env.q, env.goal, env.u_max};
    const double log_alpha = std::log(alpha);
    const std::size_t n = cfg.n_candidates;
    const std::size_t n_elite =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.elite_fraction * n)));
    Vec2 mean = Vec2::Zero();
    Vec2 stdv = Vec2::Constant(cfg.init_std);
    CemResult res;
    double best_cost = std::numeric_limits<double>::infinity();
    bool found = false;

    std::vector<Vec2> cand(n);
    std::vector<double> c(n), ld(n);
    std::vector<std::size_t> order(n);
    for (int it = 0; it < cfg.iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 z(standard_normal(rng), standard_normal(rng));
            cand[i] = clip_to_disk(mean + stdv.cwiseProduct(z), env.u_max);
            c[i] = cost.value(cand[i]);
            ld[i] = model.log_density(cand[i]);
        }
        std::vector<std::size_t> feas;
        for (std::size_t i = 0; i < n; ++i) {
            if (ld[i] >= log_alpha) feas.push_back(i);
        }
        std::stable_sort(feas.begin(), feas.end(), [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
        if (!feas.empty() && c[feas.front()] < best_cost) {
            best_cost = c[feas.front()];
            res.u = cand[feas.front()];
            found = true;
        }
        std::vector<std::size_t> elites;
        if (!feas.empty()) {
            elites.assign(feas.begin(), feas.begin() + static_cast<long>(std::min(n_elite, feas.size())));
        } else {
            // Nothing clears alpha: pull the proposal toward high density instead.
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ld[a] > ld[b]; });
            elites.assign(order.begin(), order.begin() + static_cast<long>(n_elite));
        }
        Vec2 m = Vec2::Zero();
        for (auto i : elites) m += cand[i];
        m /= static_cast<double>(elites.size());
        Vec2 v = Vec2::Zero();
        for (auto i : elites) v += (cand[i] - m).cwiseAbs2();
        v /= static_cast<double>(elites.size());
        mean = m;
        stdv = v.cwiseSqrt().cwiseMax(1e-3);
    }
    res.final_mean = mean;
    if (!found) {
        res.no_feasible = true;
        res.u = clip_to_disk(mean, env.u_max);
    }
    return res;
}

// ---------------------------------------------------------------------------

std::vector<double> swept_radii(const EnvState& initial, long horizon) {
    std::vector<double> out;
    out.reserve(initial.obstacles.size());
    for (const auto& ob : initial.obstacles) {
        const Vec2 o0 = obstacle_position(ob, initial.t, initial.bounds);
        double sweep = 0.0;
        for (long t = initial.t; t <= initial.t + horizon; ++t) {
            sweep = std::max(sweep, (obstacle_position(ob, t, initial.bounds) - o0).norm());
        }
        out.push_back(ob.radius + initial.d_safe + sweep);
    }
    return out;
}

QpResult static_conservative_action(const EnvState& env, const std::vector<Vec2>& centers0,
                                    const std::vector<double>& radii, double gamma) {
    const Vec2 u_nom = clip_to_disk(env.goal - env.q, env.u_max);
    std::vector<HalfPlane> cons = workspace_halfplanes(env);
    for (std::size_t k = 0; k < centers0.size(); ++k) {
        cons.push_back(cbf_row(env.q, centers0[k], radii[k], gamma));
    }
    return solve_qp2d(u_nom, cons, env.u_max);
}

// ---------------------------------------------------------------------------

namespace {

bool same_obstacles(const std::vector<ObstacleSpec>& a, const std::vector<ObstacleSpec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const auto& x = a[k];
        const auto& y = b[k];
        if (x.center_base != y.center_base || x.radius != y.radius || x.amp_x != y.amp_x ||
            x.amp_y != y.amp_y || x.freq_x != y.freq_x || x.freq_y != y.freq_y ||
            x.phase_x != y.phase_x || x.phase_y != y.phase_y) {
            return false;
        }
    }
    return true;
}

class PpcController final : public Controller {
public:
    PpcController(std::string name, PpcConfig cfg, bool use_context, std::uint64_t projection_seed)
        : name_(std::move(name)), cfg_(std::move(cfg)), use_context_(use_context),
          projection_(use_context ? make_projection(projection_seed) : Projection::Zero()) {}

    std::string name() const override { return name_; }

    void reset(const EnvState&, std::uint64_t seed, long horizon) override {
        const long window = use_context_ ? horizon + 1 : cfg_.window_steps;
        buffer_ = std::make_unique<SampleBuffer>(window, cfg_.n_samples);
        state_ = PpcState{};
        rng_ = Rng(derive_seed(seed, "oracle-samples"));
    }

    Vec2 act(const EnvState& env, StepRecord& rec) override {
        std::optional<Context> xi;
        if (use_context_) xi = render_context(env, projection_).embedding;
        const int mode = rec.context_mode;
        PpcStepResult r = ppc_step(env, *buffer_, cfg_, state_, rng_, xi);
        rec = r.record;
        rec.context_mode = mode;
        return r.action;
    }

private:
    std::string name_;
    PpcConfig cfg_;
    bool use_context_;
    Projection projection_;
    std::unique_ptr<SampleBuffer> buffer_;
    PpcState state_;
    Rng rng_;
};

class OfflineDrgdController final : public Controller {
public:
    OfflineDrgdController(PpcConfig cfg, std::size_t n_offline)
        : cfg_(std::move(cfg)), n_offline_(n_offline) {}

    std::string name() const override { return "offline_drgd"; }

    void reset(const EnvState& initial, std::uint64_t seed, long) override {
        Rng rng(derive_seed(seed, "oracle-samples"));
        const auto samples = sample_feasible(initial, n_offline_, rng, cfg_.max_attempts_per_sample);
        const CostModel cost0{initial.q, initial.goal, initial.u_max};
        snap_ = analyze_density(fit_points(samples, cfg_.bandwidth), samples, cost0, cfg_);
        beta_ = cfg_.beta_mode == BetaMode::Schedule
                    ? beta_schedule(snap_.curvature.beta_star, cfg_.schedule_c,
                                    static_cast<long>(n_offline_))
                    : cfg_.beta_ratio * snap_.curvature.beta_star;
        u_prev_ = Vec2::Zero();
    }

    Vec2 act(const EnvState& env, StepRecord& rec) override {
        const CostModel cost{env.q, env.goal, env.u_max};
        const Vec2 u = plan_and_filter(snap_, cost, beta_, cfg_, u_prev_, rec);
        rec.n_cumulative = static_cast<long>(n_offline_);
        u_prev_ = u;
        return u;
    }

    const DensitySnapshot& snapshot() const { return snap_; }

private:
    PpcConfig cfg_;
    std::size_t n_offline_;
    DensitySnapshot snap_;
    double beta_ = 0.0;
    Vec2 u_prev_ = Vec2::Zero();
};

class CbfQpController final : public Controller {
public:
    explicit CbfQpController(CbfConfig cfg) : cfg_(cfg) {}
    std::string name() const override { return "cbf_qp"; }
    void reset(const EnvState&, std::uint64_t, long) override {}
    Vec2 act(const EnvState& env, StepRecord& rec) override {
        const QpResult r = cbf_qp_action(env, cfg_);
        rec.filter_failed = r.infeasible;
        return r.u;
    }

private:
    CbfConfig cfg_;
};

class GpCbfController final : public Controller {
public:
    explicit GpCbfController(GpConfig cfg) : cfg_(std::move(cfg)), gp_(cfg_) {}
    std::string name() const override { return "gp_cbf"; }
    void reset(const EnvState&, std::uint64_t seed, long) override {
        gp_ = GpConstraintModel(cfg_);
        rng_ = Rng(derive_seed(seed, "gp-reservoir"));
        steps_ = 0;
    }
    Vec2 act(const EnvState& env, StepRecord& rec) override {
        if (steps_ % cfg_.refit_period == 0) gp_.refit_hyperparameters();
        ++steps_;
        const QpResult r = gp_cbf_action(env, gp_, cfg_.gamma);
        rec.filter_failed = r.infeasible;
        return r.u;
    }
    void observe(const EnvState& before, const Vec2& u, const EnvState& after) override {
        (void)after;
        gp_.add(before.q + u, clearance(before, u), rng_);
    }

private:
    GpConfig cfg_;
    GpConstraintModel gp_;
    Rng rng_;
    long steps_ = 0;
};

class CemController final : public Controller {
public:
    CemController(PpcConfig ppc, CemConfig cem) : ppc_(std::move(ppc)), cem_(cem) {}
    std::string name() const override { return "cem"; }
    void reset(const EnvState&, std::uint64_t seed, long) override {
        buffer_ = std::make_unique<SampleBuffer>(ppc_.window_steps, ppc_.n_samples);
        rng_ = Rng(derive_seed(seed, "oracle-samples"));
        cem_rng_ = Rng(derive_seed(seed, "cem"));
    }
    Vec2 act(const EnvState& env, StepRecord& rec) override {
        std::vector<Vec2> samples;
        try {
            samples = sample_feasible(env, ppc_.n_samples, rng_, ppc_.max_attempts_per_sample);
        } catch (const FeasibleRegionTooSmall&) {
            rec.blocked = true;
            return Vec2::Zero();
        }
        buffer_->add(env.t, samples);
        const Kde model = fit_marginal(*buffer_, ppc_.bandwidth);
        const double alpha = select_alpha(model, samples, ppc_.alpha_percentile);
        const CemResult r = cem_action(env, model, alpha, cem_, cem_rng_);
        rec.alpha = alpha;
        rec.bandwidth = model.bandwidth();
        rec.filter_failed = r.no_feasible;
        rec.n_cumulative = buffer_->n_cumulative();
        return r.u;
    }

private:
    PpcConfig ppc_;
    CemConfig cem_;
    std::unique_ptr<SampleBuffer> buffer_;
    Rng rng_;
    Rng cem_rng_;
};

class StaticConservativeController final : public Controller {
public:
    explicit StaticConservativeController(double gamma) : gamma_(gamma) {}
    std::string name() const override { return "static_conservative"; }
    void reset(const EnvState& initial, std::uint64_t, long horizon) override {
        horizon_end_ = initial.t + horizon;
        precompute(initial);
    }
    Vec2 act(const EnvState& env, StepRecord& rec) override {
        // A new obstacle parameter set (reshuffle) gets its own sweep.
        if (!same_obstacles(env.obstacles, known_)) precompute(env);
        const QpResult r = static_conservative_action(env, centers0_, radii_, gamma_);
        rec.filter_failed = r.infeasible;
        return r.u;
    }
    const std::vector<double>& radii() const { return radii_; }

private:
    void precompute(const EnvState& env) {
        known_ = env.obstacles;
        radii_ = swept_radii(env, std::max<long>(0, horizon_end_ - env.t));
        centers0_.clear();
        for (const auto& ob : env.obstacles) centers0_.push_back(obstacle_position(ob, env.t, env.bounds));
    }

    double gamma_;
    long horizon_end_ = 0;
    std::vector<ObstacleSpec> known_;
    std::vector<double> radii_;
    std::vector<Vec2> centers0_;
};

class OracleController final : public Controller {
public:
    std::string name() const override { return "oracle"; }
    void reset(const EnvState&, std::uint64_t, long) override {}
    Vec2 act(const EnvState& env, StepRecord& rec) override {
        try {
            return oracle_action(env);
        } catch (const NoFeasibleCell&) {
            rec.blocked = true;
            return Vec2::Zero();
        }
    }
};

// Conditional KDE fit once from `per_mode` samples per layout, then frozen:
// no oracle queries during the episode.
class OfflineContextController final : public Controller {
public:
    OfflineContextController(PpcConfig cfg, std::size_t per_mode, std::uint64_t projection_seed)
        : cfg_(std::move(cfg)), per_mode_(per_mode), projection_(make_projection(projection_seed)) {}

    std::string name() const override { return "offline_context"; }

    void set_mode_layouts(const ModeLayouts& layouts) override { layouts_ = layouts; }

    // Collects per_mode samples at t = 0 in every layout, then freezes.
    void reset(const EnvState& initial, std::uint64_t seed, long horizon) override {
        buffer_ = std::make_unique<SampleBuffer>(horizon + 1, std::max(cfg_.n_samples, per_mode_));
        state_ = PpcState{};
        Rng rng(derive_seed(seed, "oracle-samples"));
        std::vector<EnvState> scenes;
        if (layouts_) {
            for (int m = 0; m < 4; ++m) scenes.push_back(set_mode(initial, m, *layouts_));
        } else {
            scenes.push_back(initial);
        }
        for (const auto& env : scenes) {
            try {
                const auto pts = sample_feasible(env, per_mode_, rng, cfg_.max_attempts_per_sample);
                buffer_->add(0, pts, render_context(env, projection_).embedding);
                state_.n_cumulative += static_cast<long>(pts.size());
            } catch (const FeasibleRegionTooSmall&) {
            }
        }
    }

    Vec2 act(const EnvState& env, StepRecord& rec) override {
        const int mode = rec.context_mode;
        rec.n_cumulative = state_.n_cumulative;
        if (buffer_->empty()) {
            rec.blocked = true;
            return Vec2::Zero();
        }
        const Context xi = render_context(env, projection_).embedding;
        const CostModel cost{env.q, env.goal, env.u_max};
        Kde model;
        try {
            model = conditional_model(fit_conditional(*buffer_, cfg_.bandwidth), xi);
        } catch (const ContextUnderflow&) {
            rec.context_fallback = true;
            model = fit_marginal(*buffer_, cfg_.bandwidth);
        }
        std::vector<Vec2> probes;
        probes.reserve(model.size());
        for (std::size_t i = 0; i < model.size(); ++i) probes.push_back(model.point(i));
        DensitySnapshot snap = analyze_density(std::move(model), probes, cost, cfg_);
        const double beta = beta_schedule(snap.curvature.beta_star, cfg_.schedule_c,
                                          std::max<long>(1, state_.n_cumulative));
        const Vec2 u = plan_and_filter(snap, cost, beta, cfg_, state_.u_prev, rec);
        rec.context_mode = mode;
        state_.u_prev = u;
        return u;
    }

private:
    PpcConfig cfg_;
    std::size_t per_mode_;
    Projection projection_;
    std::optional<ModeLayouts> layouts_;
    std::unique_ptr<SampleBuffer> buffer_;
    PpcState state_;
};

}  // namespace

const std::vector<std::string>& known_controllers() {
    static const std::vector<std::string> names = {
        "ppc", "offline_drgd", "cbf_qp", "gp_cbf", "cem", "static_conservative",
        "oracle", "ppc_context", "ppc_marginal", "offline_context"};
    return names;
}

std::unique_ptr<Controller> make_controller(const std::string& name, const ControllerSettings& s) {
    if (name == "ppc" || name == "ppc_marginal") {
        return std::make_unique<PpcController>(name, s.ppc, false, s.projection_seed);
    }
    if (name == "ppc_context") {
        return std::make_unique<PpcController>(name, s.ppc, true, s.projection_seed);
    }
    if (name == "offline_drgd") return std::make_unique<OfflineDrgdController>(s.ppc, s.offline_samples);
    if (name == "cbf_qp") return std::make_unique<CbfQpController>(s.cbf);
    if (name == "gp_cbf") return std::make_unique<GpCbfController>(s.gp);
    if (name == "cem") return std::make_unique<CemController>(s.ppc, s.cem);
    if (name == "static_conservative") {
        return std::make_unique<StaticConservativeController>(s.static_gamma);
    }
    if (name == "oracle") return std::make_unique<OracleController>();
    if (name == "offline_context") {
        return std::make_unique<OfflineContextController>(s.ppc, s.offline_context_per_mode,
                                                          s.projection_seed);
    }
    throw ConfigError("unknown controller '" + name + "'");
}

}  // namespace ppc
