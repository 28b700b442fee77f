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

#include "ppc/env_sim.hpp"

#include <cmath>
#include <limits>

namespace ppc {

Vec2 obstacle_position(const ObstacleSpec& spec, long t, const Box& bounds) {
    const double td = static_cast<double>(t);
    Vec2 p = spec.center_base + Vec2(spec.amp_x * std::sin(spec.freq_x * td + spec.phase_x),
                                     spec.amp_y * std::cos(spec.freq_y * td + spec.phase_y));
    const double r = spec.radius;
    p.x() = std::clamp(p.x(), bounds.lo.x() + r, bounds.hi.x() - r);
    p.y() = std::clamp(p.y(), bounds.lo.y() + r, bounds.hi.y() - r);
    return p;
}

double clearance(const EnvState& state, const Vec2& u) {
    const Vec2 next = state.q + u;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& ob : state.obstacles) {
        const Vec2 o = obstacle_position(ob, state.t + 1, state.bounds);
        best = std::min(best, (next - o).norm() - ob.radius - state.d_safe);
    }
    return best;
}

bool is_feasible(const EnvState& state, const Vec2& u) {
    // Relative slack on the norm absorbs the rounding of clip_to_disk.
    if (u.norm() > state.u_max * (1.0 + 1e-12)) return false;
    const Vec2 next = state.q + u;
    if (state.bounded_feasibility && !state.bounds.contains(next)) return false;
    for (const auto& ob : state.obstacles) {
        const Vec2 o = obstacle_position(ob, state.t + 1, state.bounds);
        const double need = ob.radius + state.d_safe;
        if ((next - o).squaredNorm() < need * need) return false;
    }
    return true;
}

namespace {

// Precomputed obstacle positions at t+1 make the rejection loop cheap.
struct FeasibilityProbe {
    Vec2 q;
    double u_max;
    Box bounds;
    bool bounded;
    std::vector<Vec2> centers;
    std::vector<double> need_sq;

    explicit FeasibilityProbe(const EnvState& s) : q(s.q), u_max(s.u_max), bounds(s.bounds), bounded(s.bounded_feasibility) {
        centers.reserve(s.obstacles.size());
        need_sq.reserve(s.obstacles.size());
        for (const auto& ob : s.obstacles) {
            centers.push_back(obstacle_position(ob, s.t + 1, s.bounds));
            const double need = ob.radius + s.d_safe;
            need_sq.push_back(need * need);
        }
    }

    bool operator()(const Vec2& u) const {
        if (u.norm() > u_max * (1.0 + 1e-12)) return false;
        const Vec2 next = q + u;
        if (bounded && !bounds.contains(next)) return false;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if ((next - centers[k]).squaredNorm() < need_sq[k]) return false;
        }
        return true;
    }
};

}  // namespace

std::vector<Vec2> sample_feasible(const EnvState& state, std::size_t n, Rng& rng,
                                  int max_attempts_per_sample) {
    std::vector<Vec2> out;
    if (n == 0) return out;
    out.reserve(n);
    const FeasibilityProbe feasible(state);
    const std::size_t budget = n * static_cast<std::size_t>(std::max(1, max_attempts_per_sample));
    std::size_t attempts = 0;
    while (out.size() < n) {
        if (attempts >= budget) {
            throw FeasibleRegionTooSmall("accepted " + std::to_string(out.size()) + " of " +
                                         std::to_string(n) + " samples in " +
                                         std::to_string(attempts) + " proposals");
        }
        ++attempts;
        // Uniform on the disk: radius ~ u_max * sqrt(U).
        const double rad = state.u_max * std::sqrt(uniform(rng, 0.0, 1.0));
        const double ang = uniform(rng, 0.0, 2.0 * kPi);
        const Vec2 u(rad * std::cos(ang), rad * std::sin(ang));
        if (feasible(u)) out.push_back(u);
    }
    return out;
}

Vec2 goal_from_stream(std::uint64_t goal_seed, long k) {
    Rng rng(derive_seed(goal_seed, "goal", static_cast<std::uint64_t>(k)));
    const double x = uniform(rng, 1.0, 9.0);
    const double y = uniform(rng, 1.0, 9.0);
    return {x, y};
}

EnvState step(const EnvState& state, const Vec2& u) {
    EnvState next = state;
    next.q = state.bounds.clamp(state.q + u);
    next.t = state.t + 1;
    if ((next.q - next.goal).norm() <= next.goal_radius) {
        // Redraw until the goal actually moves away from the arrival disk.
        Vec2 g = next.goal;
        do {
            ++next.goal_count;
            g = goal_from_stream(next.goal_seed, next.goal_count);
        } while ((g - next.q).norm() <= next.goal_radius);
        next.goal = g;
    }
    return next;
}

ObstacleSpec draw_obstacle(Rng& rng, const ObstacleDistribution& dist) {
    ObstacleSpec ob;
    ob.center_base = Vec2(uniform(rng, dist.base_lo.x(), dist.base_hi.x()),
                          uniform(rng, dist.base_lo.y(), dist.base_hi.y()));
    ob.radius = uniform(rng, dist.radius_lo, dist.radius_hi);
    ob.amp_x = uniform(rng, dist.amp_lo, dist.amp_hi);
    ob.amp_y = uniform(rng, dist.amp_lo, dist.amp_hi);
    ob.freq_x = dist.speed_multiplier * uniform(rng, dist.freq_lo, dist.freq_hi);
    ob.freq_y = dist.speed_multiplier * uniform(rng, dist.freq_lo, dist.freq_hi);
    ob.phase_x = uniform(rng, 0.0, 2.0 * kPi);
    ob.phase_y = uniform(rng, 0.0, 2.0 * kPi);
    return ob;
}

std::vector<ObstacleSpec> draw_obstacles(std::size_t count, Rng& rng,
                                         const ObstacleDistribution& dist) {
    std::vector<ObstacleSpec> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(draw_obstacle(rng, dist));
    return out;
}

EnvState reshuffle(const EnvState& state, Rng& rng, const ObstacleDistribution& dist) {
    EnvState next = state;
    next.obstacles = draw_obstacles(state.obstacles.size(), rng, dist);
    return next;
}

ModeLayouts make_mode_layouts(Rng& rng, std::size_t obstacles_per_mode, double speed_multiplier) {
    ModeLayouts out;
    // Cluster box inside each quadrant; small amplitudes keep the cluster
    // in its quadrant while still drifting within the mode.
    const std::array<Vec2, 4> offsets = {Vec2(0.0, 0.0), Vec2(5.0, 0.0), Vec2(0.0, 5.0),
                                         Vec2(5.0, 5.0)};
    for (int m = 0; m < 4; ++m) {
        ObstacleDistribution dist;
        dist.base_lo = offsets[m] + Vec2(1.3, 1.3);
        dist.base_hi = offsets[m] + Vec2(3.7, 3.7);
        dist.amp_lo = 0.2;
        dist.amp_hi = 0.6;
        dist.speed_multiplier = speed_multiplier;
        out.layouts[m] = draw_obstacles(obstacles_per_mode, rng, dist);
    }
    return out;
}

EnvState set_mode(const EnvState& state, int mode, const ModeLayouts& layouts) {
    if (mode < 0 || mode > 3) throw std::invalid_argument("mode must be in 0..3");
    EnvState next = state;
    next.obstacles = layouts.layouts[static_cast<std::size_t>(mode)];
    return next;
}

namespace {

bool start_is_clear(const EnvState& s) {
    for (long tt : {s.t, s.t + 1}) {
        for (const auto& ob : s.obstacles) {
            const Vec2 o = obstacle_position(ob, tt, s.bounds);
            if ((s.q - o).norm() < ob.radius + s.d_safe + 0.2) return false;
        }
    }
    return true;
}

}  // namespace

EnvState make_initial_state(std::uint64_t seed, const EpisodeSetup& setup) {
    Rng rng(derive_seed(seed, "env"));
    EnvState s;
    s.goal_seed = derive_seed(seed, "goal-stream");
    s.bounded_feasibility = setup.bounded_feasibility;
    if (setup.canonical_start) {
        s.q = Vec2(1.0, 1.0);
        s.goal = Vec2(9.0, 9.0);
    } else {
        s.q = Vec2(uniform(rng, 1.0, 9.0), uniform(rng, 1.0, 9.0));
        do {
            s.goal = Vec2(uniform(rng, 1.0, 9.0), uniform(rng, 1.0, 9.0));
        } while ((s.goal - s.q).norm() < 3.0);
    }
    for (int attempt = 0; attempt < 200; ++attempt) {
        s.obstacles = draw_obstacles(setup.n_obstacles, rng, setup.dist);
        if (start_is_clear(s)) break;
    }
    return s;
}

Projection make_projection(std::uint64_t seed, double entry_scale) {
    Rng rng(derive_seed(seed, "projection"));
    Projection r;
    for (int i = 0; i < r.rows(); ++i) {
        for (int j = 0; j < r.cols(); ++j) r(i, j) = entry_scale * standard_normal(rng);
    }
    return r;
}

ContextObservation render_context(const EnvState& state, const Projection& projection) {
    ContextObservation obs;
    obs.raster.setZero();
    const Vec2 extent = state.bounds.hi - state.bounds.lo;
    const double cw = extent.x() / kRasterSide;
    const double ch = extent.y() / kRasterSide;

    std::vector<Vec2> centers;
    centers.reserve(state.obstacles.size());
    for (const auto& ob : state.obstacles) centers.push_back(obstacle_position(ob, state.t, state.bounds));

    for (int row = 0; row < kRasterSide; ++row) {
        for (int col = 0; col < kRasterSide; ++col) {
            const Vec2 c = state.bounds.lo + Vec2((col + 0.5) * cw, (row + 0.5) * ch);
            for (std::size_t k = 0; k < centers.size(); ++k) {
                if ((c - centers[k]).norm() <= state.obstacles[k].radius) {
                    obs.raster(raster_index(row, col, 0)) = 1.0;
                    break;
                }
            }
        }
    }
    auto cell_of = [&](const Vec2& p) {
        const int col = std::clamp(static_cast<int>(std::floor((p.x() - state.bounds.lo.x()) / cw)), 0,
                                   kRasterSide - 1);
        const int row = std::clamp(static_cast<int>(std::floor((p.y() - state.bounds.lo.y()) / ch)), 0,
                                   kRasterSide - 1);
        return std::pair{row, col};
    };
    const auto [rr, rc] = cell_of(state.q);
    obs.raster(raster_index(rr, rc, 1)) = 1.0;
    const auto [gr, gc] = cell_of(state.goal);
    obs.raster(raster_index(gr, gc, 2)) = 1.0;

    obs.embedding = (projection * obs.raster).array().tanh().matrix();
    return obs;
}

}  // namespace ppc
