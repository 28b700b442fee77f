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

// Ground-truth 2D navigation benchmark: a single-integrator robot among
// circular obstacles that move on Lissajous curves. The environment is the
// only component that knows obstacle geometry; controllers that respect the
// black-box interface see it solely through is_feasible / sample_feasible.

#pragma once

#include "ppc/common.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

namespace ppc {

struct Box {
    Vec2 lo{0.0, 0.0};
    Vec2 hi{10.0, 10.0};

    bool contains(const Vec2& p) const {
        return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
    }
    Vec2 clamp(const Vec2& p) const {
        return {std::clamp(p.x(), lo.x(), hi.x()), std::clamp(p.y(), lo.y(), hi.y())};
    }
};

struct ObstacleSpec {
    Vec2 center_base{5.0, 5.0};
    double radius = 0.5;
    double amp_x = 0.0;
    double amp_y = 0.0;
    double freq_x = 0.0;  // rad/step
    double freq_y = 0.0;
    double phase_x = 0.0;
    double phase_y = 0.0;
};

// Distribution from which obstacle parameters are drawn.
struct ObstacleDistribution {
    Vec2 base_lo{2.0, 2.0};
    Vec2 base_hi{8.0, 8.0};
    double radius_lo = 0.4;
    double radius_hi = 0.8;
    double amp_lo = 0.5;
    double amp_hi = 2.0;
    double freq_lo = 0.02;
    double freq_hi = 0.08;
    double speed_multiplier = 1.0;  // scales both frequencies
};

struct EnvState {
    long t = 0;
    Vec2 q{1.0, 1.0};
    Vec2 goal{9.0, 9.0};
    std::vector<ObstacleSpec> obstacles;
    double u_max = 1.0;
    double d_safe = 0.3;
    Box bounds;
    double goal_radius = 0.5;
    // Adds "q + u inside bounds" to feasibility; off, the plant clamp alone keeps q in the box.
    bool bounded_feasibility = false;
    // Counter-based goal stream: the k-th resampled goal depends only on
    // (goal_seed, k), so controllers run on matched seeds see the same goals.
    std::uint64_t goal_seed = 0;
    long goal_count = 0;
};

// Lissajous position clamped so the whole disk stays inside `bounds`.
Vec2 obstacle_position(const ObstacleSpec& spec, long t, const Box& bounds = Box{});

// Signed clearance min_k ||q + u - o_k(t+1)|| - r_k - d_safe (+inf without obstacles).
double clearance(const EnvState& state, const Vec2& u);

bool is_feasible(const EnvState& state, const Vec2& u);

// Uniform proposal on the u_max disk with accept/reject. Throws
// FeasibleRegionTooSmall once more than max_attempts_per_sample * n
// proposals have been spent.
std::vector<Vec2> sample_feasible(const EnvState& state, std::size_t n, Rng& rng,
                                  int max_attempts_per_sample = 50);

EnvState step(const EnvState& state, const Vec2& u);

// k-th goal of the stream; uniform on [1, 9]^2.
Vec2 goal_from_stream(std::uint64_t goal_seed, long k);

ObstacleSpec draw_obstacle(Rng& rng, const ObstacleDistribution& dist);
std::vector<ObstacleSpec> draw_obstacles(std::size_t count, Rng& rng,
                                         const ObstacleDistribution& dist);

// Redraws every obstacle's kinematic parameters and radius; robot and goal
// are kept.
EnvState reshuffle(const EnvState& state, Rng& rng, const ObstacleDistribution& dist = {});

// Quadrant cluster layouts for the recurring-mode benchmark.
// Mode index: 0 = SW, 1 = SE, 2 = NW, 3 = NE.
struct ModeLayouts {
    std::array<std::vector<ObstacleSpec>, 4> layouts;
};

ModeLayouts make_mode_layouts(Rng& rng, std::size_t obstacles_per_mode = 4,
                              double speed_multiplier = 1.0);

EnvState set_mode(const EnvState& state, int mode, const ModeLayouts& layouts);

struct EpisodeSetup {
    std::size_t n_obstacles = 5;
    ObstacleDistribution dist;
    bool canonical_start = true;  // robot (1,1), goal (9,9)
    bool bounded_feasibility = false;
};

// Deterministic initial state for an episode seed. Obstacles are redrawn
// (bounded retries) until the start position is clear at t = 0 and t = 1.
EnvState make_initial_state(std::uint64_t seed, const EpisodeSetup& setup);

// ---------------------------------------------------------------------------
// Context observation

inline constexpr int kRasterSide = 16;
inline constexpr int kRasterChannels = 3;
inline constexpr int kRasterSize = kRasterSide * kRasterSide * kRasterChannels;  // 768
inline constexpr int kContextDim = 12;

using Context = Eigen::Matrix<double, kContextDim, 1>;
using Projection = Eigen::Matrix<double, kContextDim, kRasterSize>;

struct ContextObservation {
    // Row-major, channel-last: index = (row * 16 + col) * 3 + channel with
    // row along y and col along x; cell (0, 0) touches workspace corner (0, 0).
    // Channels: 0 obstacle occupancy, 1 robot, 2 goal.
    Eigen::Matrix<double, kRasterSize, 1> raster;
    Context embedding;
};

inline int raster_index(int row, int col, int channel) {
    return (row * kRasterSide + col) * kRasterChannels + channel;
}

Projection make_projection(std::uint64_t seed, double entry_scale = 0.25);

ContextObservation render_context(const EnvState& state, const Projection& projection);

}  // namespace ppc
