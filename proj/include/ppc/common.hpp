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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ppc {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Rng = std::mt19937_64;

inline constexpr double kPi = 3.14159265358979323846;

// Base class for every recoverable error raised by the library. Each
// failure mode named in the module contracts gets its own subtype so
// callers can branch on it.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PPC_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                  \
    public:                                                      \
        explicit Name(const std::string& what) : Error(what) {}  \
    }

PPC_DEFINE_ERROR(FeasibleRegionTooSmall);
PPC_DEFINE_ERROR(EmptyBuffer);
PPC_DEFINE_ERROR(DensityUnderflow);
PPC_DEFINE_ERROR(ContextUnderflow);
PPC_DEFINE_ERROR(NoInteriorPoint);
PPC_DEFINE_ERROR(NoFeasibleCell);
PPC_DEFINE_ERROR(MismatchedEpisodes);
PPC_DEFINE_ERROR(ConfigError);

#undef PPC_DEFINE_ERROR

// splitmix64 finalizer; used to derive independent, reproducible streams
// from a run seed and a small set of tags.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(mix64(base) ^ a) ^ b);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t b = 0) {
    return derive_seed(base, hash_tag(tag), b);
}

// Uniform double in [lo, hi). Implemented directly on the engine output so
// results do not depend on the standard library's distribution internals.
inline double uniform(Rng& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

// Standard normal via Box-Muller on the engine output (same rationale).
inline double standard_normal(Rng& rng) {
    double u1 = uniform(rng, 0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

inline Vec2 clip_to_disk(const Vec2& u, double radius) {
    const double n = u.norm();
    if (n <= radius) return u;
    return u * (radius / n);
}

}  // namespace ppc
