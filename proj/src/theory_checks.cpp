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

#include "ppc/theory_checks.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace ppc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kRays = 720;

std::pair<double, double> eig2(const Mat2& m) {
    const double a = m(0, 0), d = m(1, 1), b = 0.5 * (m(0, 1) + m(1, 0));
    const double mid = 0.5 * (a + d);
    const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
    return {mid - rad, mid + rad};
}

double free_energy(const SyntheticScene& s, const Vec2& u, double beta) {
    return s.cost.value(u) - beta * s.density.log_density(u);
}

Vec2 free_energy_grad(const SyntheticScene& s, const Vec2& u, double beta) {
    return s.cost.grad(u) - beta * s.density.evaluate(u, false).score;
}

double min_ray_distance(const Kde& model, const Vec2& center, double alpha, double max_length) {
    double best = kInf;
    for (int r = 0; r < kRays; ++r) {
        const double th = 2.0 * kPi * r / kRays;
        best = std::min(best, ray_boundary_distance(model, center, Vec2(std::cos(th), std::sin(th)), alpha,
                                                    max_length, 60));
    }
    return best;
}

std::size_t idx(const GridSpec& g, int i, int j) {
    return static_cast<std::size_t>(i) * g.resolution + j;
}

CheckReport skipped(const std::string& name, double tol, const std::string& note) {
    CheckReport r;
    r.name = name;
    r.pass = true;
    r.skipped = true;
    r.tolerance = tol;
    r.note = note;
    return r;
}

}  // namespace

std::string format_report(const CheckReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << "check=" << r.name << " pass=" << (r.pass ? "true" : "false")
       << " skipped=" << (r.skipped ? "true" : "false") << " worst=" << r.worst_violation
       << " tol=" << r.tolerance << " probes=" << r.probes;
    for (const auto& [k, v] : r.params) os << ' ' << k << '=' << v;
    if (!r.note.empty()) os << " note=\"" << r.note << '"';
    return os.str();
}

CheckReport merge_reports(const std::string& name, const std::vector<CheckReport>& parts) {
    CheckReport out;
    out.name = name;
    out.pass = true;
    out.worst_violation = -kInf;
    long scenes = 0, skipped_scenes = 0;
    for (const auto& p : parts) {
        out.tolerance = p.tolerance;
        ++scenes;
        if (p.skipped) {
            ++skipped_scenes;
            if (!p.note.empty() && out.note.find(p.note) == std::string::npos) {
                out.note += (out.note.empty() ? "" : "; ") + p.note;
            }
            continue;
        }
        out.pass = out.pass && p.pass;
        out.worst_violation = std::max(out.worst_violation, p.worst_violation);
        out.probes += p.probes;
    }
    if (out.worst_violation == -kInf) out.worst_violation = 0.0;
    out.skipped = scenes > 0 && skipped_scenes == scenes;
    out.params["scenes"] = static_cast<double>(scenes);
    out.params["skipped_scenes"] = static_cast<double>(skipped_scenes);
    return out;
}

// ---------------------------------------------------------------------------
// Basin geometry

BasinInfo analyze_basin(const SyntheticScene& scene) {
    const GridSpec& g = scene.grid;
    const Kde& p = scene.density;
    const int n = g.resolution;
    BasinInfo b;
    std::vector<double> logd(g.size());
    std::size_t best = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            logd[idx(g, i, j)] = p.log_density(g.point(i, j));
            if (logd[idx(g, i, j)] > logd[best]) best = idx(g, i, j);
        }
    }
    const double log_alpha = std::log(scene.alpha);
    if (logd[best] < log_alpha) throw MultiBasin("alpha exceeds the density peak");
    b.peak_index = best;
    b.in_component.assign(g.size(), 0);
    std::deque<std::size_t> queue{best};
    b.in_component[best] = 1;
    while (!queue.empty()) {
        const std::size_t c = queue.front();
        queue.pop_front();
        const int ci = static_cast<int>(c / n), cj = static_cast<int>(c % n);
        const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            const int ni = ci + di[k], nj = cj + dj[k];
            if (ni < 0 || nj < 0 || ni >= n || nj >= n) continue;
            const std::size_t m = idx(g, ni, nj);
            if (b.in_component[m] || logd[m] < log_alpha) continue;
            b.in_component[m] = 1;
            queue.push_back(m);
        }
    }

    const double h = p.bandwidth();
    long maxima = 0;
    b.kappa = kInf;
    b.lambda = 1.0 / (h * h);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t c = idx(g, i, j);
            if (!b.in_component[c]) continue;
            ++b.component_size;
            const Vec2 u = g.point(i, j);
            const double edge = std::min({u.x() - g.lo.x(), g.hi.x() - u.x(), u.y() - g.lo.y(), g.hi.y() - u.y()});
            if (edge < 3.0 * h) {
                throw std::invalid_argument("grid margin around the superlevel set is below 3h");
            }
            bool is_max = true;
            for (int di = -1; di <= 1 && is_max; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    if (logd[idx(g, i + di, j + dj)] > logd[c]) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) ++maxima;
            b.kappa = std::min(b.kappa, eig2(p.fisher_info(u)).first);
            b.g_c = std::max(b.g_c, scene.cost.grad(u).norm());
        }
    }
    if (maxima != 1) throw MultiBasin("superlevel component holds " + std::to_string(maxima) + " grid maxima");
    if (!(b.kappa > 0.0)) throw MultiBasin("density is not log-concave on the superlevel component");
    b.peak = find_mode(p, g.point(static_cast<int>(best / n), static_cast<int>(best % n)), 500);
    const double span = (g.hi - g.lo).norm();
    b.r_alpha = min_ray_distance(p, b.peak, scene.alpha, span);
    return b;
}

double critical_stiffness(const SyntheticScene& scene) {
    const BasinInfo b = analyze_basin(scene);
    return b.g_c / (b.kappa * b.r_alpha);
}

Vec2 refine_minimizer(const SyntheticScene& scene, const Vec2& start, double beta) {
    Vec2 u = start;
    for (int it = 0; it < 100; ++it) {
        const KdeEval ev = scene.density.evaluate(u, true);
        const Vec2 grad = scene.cost.grad(u) - beta * ev.score;
        const Mat2 hess = 2.0 * Mat2::Identity() + beta * ev.fisher;
        const Vec2 step = hess.ldlt().solve(grad);
        u -= step;
        if (step.norm() < 1e-14 * (1.0 + u.norm())) break;
    }
    return u;
}

// ---------------------------------------------------------------------------
// Landscape: strong convexity, smoothness, and the PL inequality.

CheckReport check_landscape(const SyntheticScene& scene) {
    constexpr double kTol = 1e-6;
    if (scene.beta <= 0.0) return skipped("landscape", kTol, "beta = 0: PL holds with mu = 0");
    const BasinInfo b = analyze_basin(scene);
    const GridSpec& g = scene.grid;
    const double mu = scene.beta * b.kappa;
    const double l = CostModel::kLipschitz + scene.beta * b.lambda;

    std::vector<double> f(g.size(), kInf);
    double f_star = kInf, scale = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        if (!b.in_component[c]) continue;
        const Vec2 u = g.point(static_cast<int>(c / g.resolution), static_cast<int>(c % g.resolution));
        f[c] = free_energy(scene, u, scene.beta);
        f_star = std::min(f_star, f[c]);
        scale = std::max(scale, std::abs(f[c]));
    }
    scale = std::max(scale, 1.0);

    CheckReport r;
    r.name = "landscape";
    r.tolerance = kTol;
    r.worst_violation = -kInf;
    for (std::size_t c = 0; c < g.size(); ++c) {
        if (!b.in_component[c]) continue;
        const Vec2 u = g.point(static_cast<int>(c / g.resolution), static_cast<int>(c % g.resolution));
        const KdeEval ev = scene.density.evaluate(u, true);
        const Mat2 hf = 2.0 * Mat2::Identity() + scene.beta * ev.fisher;
        const auto [lo, hi] = eig2(hf);
        const Vec2 grad = scene.cost.grad(u) - scene.beta * ev.score;
        const double v = std::max({mu - lo, hi - l, 2.0 * mu * (f[c] - f_star) - grad.squaredNorm()});
        r.worst_violation = std::max(r.worst_violation, v / scale);
        ++r.probes;
    }
    r.pass = r.worst_violation <= kTol;
    r.params = {{"mu", mu}, {"L", l}, {"kappa", b.kappa}, {"beta", scene.beta}};
    return r;
}

// ---------------------------------------------------------------------------
// Contraction of gradient descent from warm starts inside the attraction ball.

CheckReport check_contraction(const SyntheticScene& scene, int k, std::uint64_t seed, int warm_starts,
                              double eta_scale) {
    constexpr double kTol = 1e-6;
    if (scene.beta <= 0.0) return skipped("contraction", kTol, "beta = 0");
    const BasinInfo b = analyze_basin(scene);
    const GridSpec& g = scene.grid;
    const double mu = scene.beta * b.kappa;
    const double l = CostModel::kLipschitz + scene.beta * b.lambda;
    const double eta = eta_scale / l;

    std::size_t arg = b.peak_index;
    double best = kInf;
    for (std::size_t c = 0; c < g.size(); ++c) {
        if (!b.in_component[c]) continue;
        const double fc = free_energy(
            scene, g.point(static_cast<int>(c / g.resolution), static_cast<int>(c % g.resolution)), scene.beta);
        if (fc < best) {
            best = fc;
            arg = c;
        }
    }
    const Vec2 u_star = refine_minimizer(
        scene, g.point(static_cast<int>(arg / g.resolution), static_cast<int>(arg % g.resolution)), scene.beta);
    if (scene.density.log_density(u_star) < std::log(scene.alpha)) {
        return skipped("contraction", kTol, "minimizer not interior");
    }
    const double radius = min_ray_distance(scene.density, u_star, scene.alpha, (g.hi - g.lo).norm());
    const double f_star = free_energy(scene, u_star, scene.beta);
    const double scale = std::max(1.0, std::abs(f_star));

    CheckReport r;
    r.name = "contraction";
    r.tolerance = kTol;
    r.worst_violation = -kInf;
    Rng rng(derive_seed(seed, "contraction"));
    const double rate = std::pow(1.0 - eta * mu, k);
    for (int s = 0; s < warm_starts; ++s) {
        const double th = uniform(rng, 0.0, 2.0 * kPi);
        const double rad = 0.999 * radius * std::sqrt(uniform(rng, 0.0, 1.0));
        Vec2 u = u_star + rad * Vec2(std::cos(th), std::sin(th));
        const double f0 = free_energy(scene, u, scene.beta);
        for (int it = 0; it < k; ++it) u -= eta * free_energy_grad(scene, u, scene.beta);
        const double fk = free_energy(scene, u, scene.beta);
        r.worst_violation = std::max(r.worst_violation, ((fk - f_star) - rate * (f0 - f_star)) / scale);
        ++r.probes;
    }
    r.pass = r.worst_violation <= kTol;
    r.params = {{"mu", mu}, {"L", l}, {"eta", eta}, {"K", k}, {"radius", radius}};
    return r;
}

// ---------------------------------------------------------------------------
// Interior placement above the critical stiffness.

CheckReport check_critical_stiffness(const SyntheticScene& scene, const std::vector<double>& beta_grid) {
    const BasinInfo b = analyze_basin(scene);
    const GridSpec& g = scene.grid;
    const int n = g.resolution;
    const double cell = g.cell();
    const double beta_star = b.g_c / (b.kappa * b.r_alpha);

    std::vector<Vec2> outside;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t c = idx(g, i, j);
            if (b.in_component[c]) continue;
            bool near = false;
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    const int ni = i + di, nj = j + dj;
                    if (ni >= 0 && nj >= 0 && ni < n && nj < n && b.in_component[idx(g, ni, nj)]) near = true;
                }
            }
            if (near) outside.push_back(g.point(i, j));
        }
    }

    CheckReport r;
    r.name = "critical_stiffness";
    r.tolerance = 0.0;
    r.worst_violation = -kInf;
    r.params = {{"beta_star", beta_star}, {"kappa", b.kappa}, {"r_alpha", b.r_alpha}, {"G_c", b.g_c}};
    for (double beta : beta_grid) {
        std::size_t arg = b.peak_index;
        double best = kInf;
        for (std::size_t c = 0; c < g.size(); ++c) {
            if (!b.in_component[c]) continue;
            const double fc = free_energy(scene, g.point(static_cast<int>(c / n), static_cast<int>(c % n)), beta);
            if (fc < best) {
                best = fc;
                arg = c;
            }
        }
        const int ai = static_cast<int>(arg / n), aj = static_cast<int>(arg % n);
        bool interior = true;
        for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) interior = interior && b.in_component[idx(g, ai + di, aj + dj)];
        }
        const Vec2 u = g.point(ai, aj);
        double margin = kInf;
        for (const auto& o : outside) margin = std::min(margin, (o - u).norm());
        const double disp = (u - b.peak).norm();
        const double bound = b.g_c / (beta * b.kappa);
        const std::string tag = "ratio_" + std::to_string(beta / beta_star).substr(0, 5);
        r.params[tag + ".interior"] = interior ? 1.0 : 0.0;
        r.params[tag + ".displacement"] = disp;
        if (beta <= beta_star) continue;
        double v = std::max(disp - (bound + cell), (b.r_alpha - bound - cell) - margin);
        if (!interior) v = std::max(v, cell);
        r.worst_violation = std::max(r.worst_violation, v);
        ++r.probes;
    }
    if (r.probes == 0) r.worst_violation = 0.0;
    r.pass = r.worst_violation <= r.tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Comparator shift between consecutive scenes.

CheckReport check_comparator_sensitivity(const SyntheticScene& scene_t, const SyntheticScene& scene_t1) {
    constexpr double kTol = 1e-6;
    if (scene_t.beta != scene_t1.beta) throw PreconditionViolated("scenes must share beta");
    const auto minimizer = [](const SyntheticScene& s, const BasinInfo& b) {
        const GridSpec& g = s.grid;
        std::size_t arg = b.peak_index;
        double best = kInf;
        for (std::size_t c = 0; c < g.size(); ++c) {
            if (!b.in_component[c]) continue;
            const double fc = free_energy(
                s, g.point(static_cast<int>(c / g.resolution), static_cast<int>(c % g.resolution)), s.beta);
            if (fc < best) {
                best = fc;
                arg = c;
            }
        }
        return refine_minimizer(
            s, g.point(static_cast<int>(arg / g.resolution), static_cast<int>(arg % g.resolution)), s.beta);
    };
    const BasinInfo b0 = analyze_basin(scene_t);
    const BasinInfo b1 = analyze_basin(scene_t1);
    const Vec2 u0 = minimizer(scene_t, b0);
    const Vec2 u1 = minimizer(scene_t1, b1);
    const double la0 = std::log(scene_t.alpha), la1 = std::log(scene_t1.alpha);
    if (scene_t.density.log_density(u0) < la0 || scene_t1.density.log_density(u1) < la1) {
        throw PreconditionViolated("minimizer not interior");
    }
    if (scene_t1.density.log_density(u0) < la1) {
        throw PreconditionViolated("previous minimizer outside the new superlevel set");
    }
    const GridSpec& g = scene_t1.grid;
    double sup = 0.0;
    for (int i = 0; i < g.resolution; ++i) {
        for (int j = 0; j < g.resolution; ++j) {
            const Vec2 u = g.point(i, j);
            sup = std::max(sup, (scene_t1.density.evaluate(u, false).score -
                                 scene_t.density.evaluate(u, false).score).norm());
        }
    }
    const double bound = sup / b1.kappa;
    const double shift = (u1 - u0).norm();
    CheckReport r;
    r.name = "comparator_sensitivity";
    r.tolerance = kTol;
    r.probes = static_cast<long>(g.size());
    r.worst_violation = (shift - bound) / std::max(bound, 1e-12);
    r.pass = r.worst_violation <= kTol;
    r.params = {{"shift", shift}, {"bound", bound}, {"kappa", b1.kappa}, {"sup_score_gap", sup}};
    return r;
}

// ---------------------------------------------------------------------------
// Level-set stability under a sup-norm density perturbation.

CheckReport check_level_set_stability(const SyntheticScene& truth, const SyntheticScene& estimate,
                                      double alpha) {
    const GridSpec& g = truth.grid;
    const int n = g.resolution;
    const double cell = g.cell();
    std::vector<double> pt(g.size()), pe(g.size());
    std::vector<Vec2> grad_t(g.size());
    double gap = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t c = idx(g, i, j);
            const Vec2 u = g.point(i, j);
            const KdeEval et = truth.density.evaluate(u, false);
            pt[c] = std::exp(et.log_density) + truth.density_offset;
            grad_t[c] = std::exp(et.log_density) * et.score;
            pe[c] = estimate.density.density(u) + estimate.density_offset;
            gap = std::max(gap, std::abs(pe[c] - pt[c]));
        }
    }
    if (!(gap < alpha)) throw SmallnessViolated("sup-norm gap is not below alpha");

    const auto boundary_of = [&](const std::vector<double>& p) {
        std::vector<std::size_t> out;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const std::size_t c = idx(g, i, j);
                if (p[c] < alpha) continue;
                const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int ni = i + di[k], nj = j + dj[k];
                    if (ni < 0 || nj < 0 || ni >= n || nj >= n || p[idx(g, ni, nj)] < alpha) {
                        out.push_back(c);
                        break;
                    }
                }
            }
        }
        return out;
    };
    const auto pos = [&](std::size_t c) { return g.point(static_cast<int>(c / n), static_cast<int>(c % n)); };
    const auto bt = boundary_of(pt);
    const auto be = boundary_of(pe);
    if (bt.empty() || be.empty()) throw PreconditionViolated("empty superlevel set");

    // Directed distances from each set to the other through its boundary points.
    const auto directed = [&](const std::vector<double>& from, const std::vector<double>& to,
                              const std::vector<std::size_t>& to_boundary) {
        double worst = 0.0;
        for (std::size_t c = 0; c < g.size(); ++c) {
            if (from[c] < alpha || to[c] >= alpha) continue;
            double d = kInf;
            for (std::size_t m : to_boundary) d = std::min(d, (pos(c) - pos(m)).norm());
            worst = std::max(worst, d);
        }
        return worst;
    };
    const double hausdorff = std::max(directed(pt, pe, be), directed(pe, pt, bt));

    // Empirical inward-normal constant over growing interior boundary tubes.
    std::vector<std::pair<double, double>> tube;  // (distance to boundary, normal derivative)
    for (std::size_t c = 0; c < g.size(); ++c) {
        if (pt[c] < alpha) continue;
        double d = kInf;
        std::size_t near = bt.front();
        for (std::size_t m : bt) {
            const double dd = (pos(c) - pos(m)).norm();
            if (dd < d) {
                d = dd;
                near = m;
            }
        }
        if (d > 40.0 * cell) continue;
        const Vec2 nb = grad_t[near];
        if (nb.norm() <= 0.0) continue;
        tube.emplace_back(d, grad_t[c].dot(nb / nb.norm()));
    }
    std::sort(tube.begin(), tube.end());
    double c_bd = kInf, tube_radius = 0.0;
    bool ok = false;
    std::size_t t = 0;
    for (int steps = 2; steps <= 40 && !ok; ++steps) {
        const double radius = steps * cell;
        while (t < tube.size() && tube[t].first <= radius) c_bd = std::min(c_bd, tube[t++].second);
        if (c_bd > 0.0 && (alpha + gap) / c_bd <= radius) {
            ok = true;
            tube_radius = radius;
        }
    }
    CheckReport r;
    r.name = "level_set_stability";
    r.tolerance = 0.0;
    r.probes = static_cast<long>(g.size());
    r.params = {{"hausdorff", hausdorff}, {"sup_gap", gap}, {"alpha", alpha}};
    if (!ok) {
        r.pass = true;
        r.skipped = true;
        r.note = "inward-normal constant vanishes on the boundary tube; bound vacuous";
        return r;
    }
    const double bound = (alpha + gap) / c_bd + 2.0 * cell;
    r.params["c_boundary"] = c_bd;
    r.params["tube_radius"] = tube_radius;
    r.params["bound"] = bound;
    r.worst_violation = hausdorff - bound;
    r.pass = r.worst_violation <= r.tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Mixture Hessian identity and the contextual gap.

MixtureTerms mixture_terms(const MixtureScene& scene, const Vec2& u) {
    const std::size_t k = scene.components.size();
    MixtureTerms out;
    std::vector<double> logw(k);
    std::vector<KdeEval> ev(k);
    double mx = -kInf;
    for (std::size_t j = 0; j < k; ++j) {
        ev[j] = scene.components[j].evaluate(u, true);
        if (ev[j].underflow) throw PreconditionViolated("conditional density vanishes at a probe");
        logw[j] = std::log(scene.weights[j]) + ev[j].log_density;
        mx = std::max(mx, logw[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logw[j] - mx);
    out.posterior.resize(k);
    Vec2 mean = Vec2::Zero();
    for (std::size_t j = 0; j < k; ++j) {
        out.posterior[j] = std::exp(logw[j] - mx) / z;
        mean += out.posterior[j] * ev[j].score;
        out.expected_hessian -= out.posterior[j] * ev[j].fisher;
    }
    for (std::size_t j = 0; j < k; ++j) {
        const Vec2 d = ev[j].score - mean;
        out.score_covariance += out.posterior[j] * d * d.transpose();
    }
    return out;
}

namespace {

double mixture_log_density(const MixtureScene& s, const Vec2& u) {
    double mx = -kInf;
    std::vector<double> l(s.components.size());
    for (std::size_t j = 0; j < l.size(); ++j) {
        l[j] = std::log(s.weights[j]) + s.components[j].log_density(u);
        mx = std::max(mx, l[j]);
    }
    double z = 0.0;
    for (double v : l) z += std::exp(v - mx);
    return mx + std::log(z);
}

Mat2 fd_hessian(const MixtureScene& s, const Vec2& u, double e) {
    const auto f = [&](double dx, double dy) { return mixture_log_density(s, u + Vec2(dx, dy)); };
    const double f0 = f(0, 0);
    Mat2 h;
    h(0, 0) = (f(e, 0) - 2.0 * f0 + f(-e, 0)) / (e * e);
    h(1, 1) = (f(0, e) - 2.0 * f0 + f(0, -e)) / (e * e);
    h(0, 1) = h(1, 0) = (f(e, e) - f(e, -e) - f(-e, e) + f(-e, -e)) / (4.0 * e * e);
    return h;
}

}  // namespace

CheckReport check_mixture_hessian(const MixtureScene& scene, const std::vector<Vec2>& probes) {
    constexpr double kTol = 1e-5;
    if (scene.components.empty() || scene.weights.size() != scene.components.size()) {
        throw PreconditionViolated("mixture needs one weight per component");
    }
    double h_min = kInf;
    for (const auto& c : scene.components) h_min = std::min(h_min, c.bandwidth());
    const double e = 1e-2 * h_min;
    CheckReport r;
    r.name = "mixture_hessian";
    r.tolerance = kTol;
    r.worst_violation = 0.0;
    for (const auto& u : probes) {
        const Mat2 closed = mixture_terms(scene, u).marginal_hessian();
        const Mat2 fd = (4.0 * fd_hessian(scene, u, 0.5 * e) - fd_hessian(scene, u, e)) / 3.0;
        const double scale = std::max(1.0, closed.norm());
        r.worst_violation = std::max(r.worst_violation, (fd - closed).norm() / scale);
        ++r.probes;
    }
    r.pass = r.worst_violation <= kTol;
    r.params = {{"contexts", static_cast<double>(scene.components.size())}};
    return r;
}

CheckReport check_ctx_gap(const MixtureScene& scene) {
    constexpr double kTol = 1e-6;
    const std::size_t k = scene.components.size();
    if (k == 0 || scene.weights.size() != k) throw PreconditionViolated("mixture needs one weight per component");
    const double h = scene.components.front().bandwidth();
    std::vector<Vec2> pts;
    std::vector<double> wts;
    for (std::size_t j = 0; j < k; ++j) {
        const Kde& c = scene.components[j];
        for (std::size_t i = 0; i < c.size(); ++i) {
            pts.push_back(c.point(i));
            wts.push_back(scene.weights[j] * c.weight(i));
        }
    }
    const GridSpec& g = scene.grid;
    const double log_alpha = std::log(scene.alpha);
    const Kde& current = scene.components.front();
    double kappa_c = kInf, kappa_m = kInf, sigma2 = kInf, g_c = 0.0, scale = 1.0;
    long probes = 0;
    bool identifiable = true;
    for (std::size_t j = 0; j < k && identifiable; ++j) {
        identifiable = std::abs(scene.components[j].bandwidth() - h) <= 1e-12 * h;
    }
    if (!identifiable) throw IdentifiabilityViolated("contexts differ in bandwidth");
    const Kde marginal(pts, wts, h);
    for (int i = 0; i < g.resolution; ++i) {
        for (int jj = 0; jj < g.resolution; ++jj) {
            const Vec2 u = g.point(i, jj);
            if (current.log_density(u) < log_alpha) continue;
            const MixtureTerms mt = mixture_terms(scene, u);
            const Mat2 h_cur = -current.fisher_info(u);
            scale = std::max(scale, h_cur.norm());
            if ((mt.expected_hessian - h_cur).norm() > 1e-9 * scale) {
                throw IdentifiabilityViolated("posterior-averaged Hessian differs from the current context's");
            }
            kappa_c = std::min(kappa_c, eig2(-h_cur).first);
            kappa_m = std::min(kappa_m, eig2(marginal.fisher_info(u)).first);
            sigma2 = std::min(sigma2, eig2(mt.score_covariance).first);
            g_c = std::max(g_c, scene.cost.grad(u).norm());
            ++probes;
        }
    }
    if (probes == 0) throw PreconditionViolated("empty superlevel set");
    CheckReport r;
    r.name = "ctx_gap";
    r.tolerance = kTol;
    r.probes = probes;
    r.worst_violation = (std::max(sigma2, 0.0) - (kappa_c - kappa_m)) / std::max(1.0, kappa_c);
    r.params = {{"kappa_ctx", kappa_c}, {"kappa_marg", kappa_m}, {"sigma2", sigma2}};
    if (kappa_m > 0.0) {
        const double residual = g_c * std::max(sigma2, 0.0) / (scene.beta * kappa_c * kappa_m);
        const double bound_gap = g_c / (scene.beta * kappa_m) - g_c / (scene.beta * kappa_c);
        r.params["residual_gap"] = residual;
        r.params["bound_gap"] = bound_gap;
        r.worst_violation =
            std::max(r.worst_violation, (residual - bound_gap) / std::max(1.0, std::abs(bound_gap)));
    } else {
        r.note = "marginal not log-concave on the set; residual comparison skipped";
    }
    r.pass = r.worst_violation <= kTol;
    return r;
}

// ---------------------------------------------------------------------------
// Gibbs policy MAP versus free-energy argmin.

CheckReport check_gibbs_map(const SyntheticScene& scene) {
    const GridSpec& g = scene.grid;
    const int n = g.resolution;
    std::vector<double> dens(g.size()), cost(g.size()), f(g.size());
    double c_min = kInf;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t c = idx(g, i, j);
            const Vec2 u = g.point(i, j);
            const double ld = scene.density.log_density(u);
            dens[c] = std::exp(ld);
            cost[c] = scene.cost.value(u);
            f[c] = cost[c] - scene.beta * ld;
            c_min = std::min(c_min, cost[c]);
        }
    }
    // Unnormalized policy with exp(-c_min / beta) factored out of Z.
    std::vector<double> pol(g.size());
    double z = 0.0, z_coarse = 0.0;
    const double area = g.cell() * g.cell();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t c = idx(g, i, j);
            pol[c] = dens[c] * std::exp(-(cost[c] - c_min) / scene.beta);
            z += pol[c] * area;
            if (i % 2 == 0 && j % 2 == 0) z_coarse += pol[c] * 4.0 * area;
        }
    }
    CheckReport r;
    r.name = "gibbs_map";
    r.tolerance = 0.0;
    r.probes = static_cast<long>(g.size());
    if (!(z > 0.0) || !std::isfinite(z)) {
        r.pass = false;
        r.worst_violation = kInf;
        r.note = "partition function not positive and finite";
        return r;
    }
    const double refine = std::abs(z - z_coarse) / z;
    r.params["z_refinement"] = refine;
    if (refine > 1e-2) return skipped("gibbs_map", 0.0, "partition function quadrature not converged");
    std::size_t map = 0, arg = 0;
    for (std::size_t c = 1; c < g.size(); ++c) {
        if (pol[c] / z > pol[map] / z) map = c;
        if (f[c] < f[arg]) arg = c;
    }
    const int mi = static_cast<int>(map / n), mj = static_cast<int>(map % n);
    const int ai = static_cast<int>(arg / n), aj = static_cast<int>(arg % n);
    r.worst_violation = std::max(std::abs(mi - ai), std::abs(mj - aj));
    r.pass = r.worst_violation <= r.tolerance;
    r.params["map_x"] = g.point(mi, mj).x();
    r.params["map_y"] = g.point(mi, mj).y();
    return r;
}

double fit_rate_exponent(const std::vector<std::pair<double, double>>& series) {
    if (series.size() < 4) throw std::invalid_argument("rate fit needs at least four points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto [nn, err] = series[i];
        if (i > 0 && !(nn > series[i - 1].first)) throw std::invalid_argument("N must be strictly increasing");
        if (!(err > 0.0) || !(nn > 0.0)) throw std::invalid_argument("N and errors must be positive");
        const double x = std::log(nn), y = std::log(err);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double m = static_cast<double>(series.size());
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// Scene builders and the standard suite

SyntheticScene kde_scene(const std::vector<Vec2>& points, double h, const CostModel& cost, double beta,
                         double alpha_fraction, int resolution) {
    SyntheticScene s;
    s.density = Kde(points, h);
    s.cost = cost;
    s.beta = beta;
    Vec2 lo = points.front(), hi = points.front(), mean = Vec2::Zero();
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
        mean += p / static_cast<double>(points.size());
    }
    double best_ld = s.density.log_density(mean);
    for (const auto& p : points) best_ld = std::max(best_ld, s.density.log_density(find_mode(s.density, p, 500)));
    s.alpha = alpha_fraction * std::exp(best_ld);
    const double reach = (std::sqrt(2.0 * std::log(1.0 / alpha_fraction)) + 3.5) * h;
    const Vec2 mid = 0.5 * (lo + hi);
    const double half = 0.5 * std::max(hi.x() - lo.x(), hi.y() - lo.y()) + reach;
    s.grid.lo = mid - Vec2(half, half);
    s.grid.hi = mid + Vec2(half, half);
    s.grid.resolution = resolution;
    return s;
}

SyntheticScene gaussian_scene(const Vec2& center, double h, const CostModel& cost, double beta,
                              double alpha_fraction, int resolution) {
    return kde_scene({center}, h, cost, beta, alpha_fraction, resolution);
}

MixtureScene translated_gaussian_mixture(const std::vector<Vec2>& centers, const std::vector<double>& weights,
                                         double h, const CostModel& cost, double beta, double alpha_fraction,
                                         int resolution) {
    MixtureScene m;
    double total = 0.0;
    for (double w : weights) total += w;
    for (std::size_t j = 0; j < centers.size(); ++j) {
        m.components.emplace_back(std::vector<Vec2>{centers[j]}, h);
        m.weights.push_back(weights[j] / total);
    }
    m.cost = cost;
    m.beta = beta;
    m.alpha = alpha_fraction / (2.0 * kPi * h * h);
    const double reach = (std::sqrt(2.0 * std::log(1.0 / alpha_fraction)) + 1.0) * h;
    m.grid.lo = centers.front() - Vec2(reach, reach);
    m.grid.hi = centers.front() + Vec2(reach, reach);
    m.grid.resolution = resolution;
    return m;
}

std::vector<CheckReport> run_all_checks(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "checks"));
    const CostModel pull{Vec2::Zero(), Vec2(2.5, 1.5), 1.0};

    // Single-basin scene family: one Gaussian, tight random clusters, a separated pair.
    std::vector<SyntheticScene> scenes;
    scenes.push_back(gaussian_scene(Vec2(0.2, -0.1), 0.4, pull, 1.0));
    for (int s = 0; s < 4; ++s) {
        const Vec2 c(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
        std::vector<Vec2> pts;
        for (int i = 0; i < 5; ++i) {
            pts.push_back(c + 0.15 * Vec2(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)));
        }
        scenes.push_back(kde_scene(pts, 0.4, pull, uniform(rng, 0.2, 2.0)));
    }
    scenes.push_back(kde_scene({Vec2(-0.7, 0.0), Vec2(0.7, 0.0)}, 0.4, pull, 1.0, 0.9));
    SyntheticScene below_saddle = kde_scene({Vec2(-0.7, 0.0), Vec2(0.7, 0.0)}, 0.4, pull, 1.0, 0.3);

    std::vector<CheckReport> out;
    {
        std::vector<CheckReport> parts;
        for (const auto& s : scenes) parts.push_back(check_landscape(s));
        try {
            parts.push_back(check_landscape(below_saddle));
        } catch (const MultiBasin& e) {
            parts.push_back(skipped("landscape", 1e-6, std::string("rejected: ") + e.what()));
        }
        out.push_back(merge_reports("landscape", parts));
    }
    {
        std::vector<CheckReport> parts;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            for (double ratio : {0.5, 3.0}) {
                SyntheticScene s = scenes[i];
                s.beta = ratio * critical_stiffness(s);
                parts.push_back(check_contraction(s, 25, seed + i));
                parts.push_back(check_contraction(s, 10, seed + i, 100, 0.5));
            }
        }
        out.push_back(merge_reports("contraction", parts));
    }
    {
        std::vector<CheckReport> parts;
        for (const auto& s : scenes) {
            const double bs = critical_stiffness(s);
            parts.push_back(check_critical_stiffness(s, {0.1 * bs, 0.5 * bs, 1.5 * bs, 2.0 * bs, 5.0 * bs, 10.0 * bs}));
        }
        out.push_back(merge_reports("critical_stiffness", parts));
    }
    {
        std::vector<CheckReport> parts;
        for (const auto& s : scenes) {
            SyntheticScene a = s;
            a.beta = 3.0 * critical_stiffness(s);
            std::vector<Vec2> moved;
            const Vec2 delta(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05));
            for (std::size_t i = 0; i < s.density.size(); ++i) moved.push_back(s.density.point(i) + delta);
            SyntheticScene b = a;
            b.density = Kde(moved, s.density.bandwidth());
            b.grid.lo += delta;
            b.grid.hi += delta;
            parts.push_back(check_comparator_sensitivity(a, b));
        }
        out.push_back(merge_reports("comparator_sensitivity", parts));
    }
    {
        std::vector<CheckReport> parts;
        for (std::size_t k = 0; k + 1 < scenes.size(); ++k) {
            const SyntheticScene& t = scenes[k];
            parts.push_back(check_level_set_stability(t, t, t.alpha));
            SyntheticScene bump = t;
            bump.density_offset = 1e-3;
            parts.push_back(check_level_set_stability(t, bump, t.alpha));
            std::vector<Vec2> jit;
            for (std::size_t i = 0; i < t.density.size(); ++i) {
                jit.push_back(t.density.point(i) + 0.02 * Vec2(standard_normal(rng), standard_normal(rng)));
            }
            SyntheticScene est = t;
            est.density = Kde(jit, t.density.bandwidth());
            parts.push_back(check_level_set_stability(t, est, t.alpha));
        }
        out.push_back(merge_reports("level_set_stability", parts));
    }
    {
        std::vector<CheckReport> parts;
        for (int s = 0; s < 20; ++s) {
            MixtureScene m;
            const int contexts = 2 + static_cast<int>(uniform(rng, 0.0, 3.0));
            std::vector<Vec2> all;
            for (int j = 0; j < contexts; ++j) {
                std::vector<Vec2> pts;
                const int npts = 3 + static_cast<int>(uniform(rng, 0.0, 5.0));
                for (int i = 0; i < npts; ++i) {
                    pts.emplace_back(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
                    all.push_back(pts.back());
                }
                m.components.emplace_back(pts, uniform(rng, 0.3, 0.6));
                m.weights.push_back(uniform(rng, 0.1, 1.0));
            }
            double tot = 0.0;
            for (double w : m.weights) tot += w;
            for (double& w : m.weights) w /= tot;
            std::vector<Vec2> probes;
            for (int i = 0; i < 10; ++i) {
                probes.push_back(all[static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(all.size()))) %
                                     all.size()] +
                                 0.3 * Vec2(standard_normal(rng), standard_normal(rng)));
            }
            parts.push_back(check_mixture_hessian(m, probes));
        }
        out.push_back(merge_reports("mixture_hessian", parts));
    }
    {
        std::vector<CheckReport> parts;
        const double h = 0.4;
        parts.push_back(check_ctx_gap(
            translated_gaussian_mixture({Vec2(0, 0)}, {1.0}, h, pull, 1.0)));
        parts.push_back(check_ctx_gap(
            translated_gaussian_mixture({Vec2(0, 0), Vec2(0.3, 0.0)}, {0.5, 0.5}, h, pull, 1.0)));
        parts.push_back(check_ctx_gap(translated_gaussian_mixture(
            {Vec2(0, 0), Vec2(0.3, 0.0), Vec2(0.1, 0.3)}, {0.4, 0.3, 0.3}, h, pull, 2.0)));
        parts.push_back(check_ctx_gap(translated_gaussian_mixture(
            {Vec2(0, 0), Vec2(0.25, 0.1), Vec2(-0.1, 0.25), Vec2(-0.2, -0.2)}, {0.25, 0.25, 0.25, 0.25}, h,
            pull, 0.5)));
        out.push_back(merge_reports("ctx_gap", parts));
    }
    {
        std::vector<CheckReport> parts;
        for (std::size_t k = 0; k < 3 && k < scenes.size(); ++k) {
            SyntheticScene s = scenes[k];
            s.grid.resolution = 401;
            parts.push_back(check_gibbs_map(s));
        }
        out.push_back(merge_reports("gibbs_map", parts));
    }
    return out;
}

}  // namespace ppc
