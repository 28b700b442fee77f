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

#include "ppc/experiments.hpp"

#include "ppc/theory_checks.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#ifndef PPC_VERSION
#define PPC_VERSION "unknown"
#endif

namespace ppc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

bool parse_double(const std::string& text, double& out) {
    const std::string s = trim(text);
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    if (*b == '+') ++b;
    const auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

bool parse_long(const std::string& text, long& out) {
    const std::string s = trim(text);
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    if (*b == '+') ++b;
    const auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

bool parse_bool(const std::string& text, bool& out) {
    const std::string s = trim(text);
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

std::vector<std::string> list_items(const std::string& value) {
    std::vector<std::string> out;
    for (const auto& item : split(value, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

const ConfigKey* find_key(const std::string& key) {
    for (const auto& k : config_keys()) {
        if (k.key == key) return &k;
    }
    return nullptr;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double median_of(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
    if (v.empty()) return kNaN;
    return percentile(std::move(v), 50.0);
}

constexpr KeyKind kInt = KeyKind::Int;
constexpr KeyKind kDouble = KeyKind::Double;
constexpr KeyKind kBool = KeyKind::Bool;
constexpr KeyKind kIntList = KeyKind::IntList;
constexpr KeyKind kDoubleList = KeyKind::DoubleList;
constexpr KeyKind kStringList = KeyKind::StringList;
constexpr KeyKind kChoice = KeyKind::Choice;
constexpr double kNoMin = -std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"T", "300", kInt, 1, "", "episode length in steps"},
        {"seeds", "0,1,2", kIntList, 0, "", "environment seeds; the first uses the canonical start"},
        {"N", "300", kInt, 1, "", "feasibility samples per step"},
        {"controllers", "", kStringList, kNoMin, "", "controller subset; empty selects the experiment default"},
        {"jobs", "0", kInt, 0, "", "worker threads; 0 uses all cores"},
        {"env.n_obstacles", "5", kInt, 1, "", "obstacle count"},
        {"env.bounded_feasibility", "false", kBool, kNoMin, "", "count q + u outside the workspace as a violation"},
        {"ppc.window_steps", "5", kInt, 1, "", "marginal sample buffer window"},
        {"ppc.inner_steps", "50", kInt, 0, "", "planner gradient steps per control step"},
        {"ppc.schedule_c", "10", kDouble, 0, "", "stiffness schedule constant C"},
        {"ppc.retraction_steps", "25", kInt, 0, "", "safety filter score-ascent budget"},
        {"ppc.alpha_percentile", "10", kDouble, 0, "", "level-set threshold percentile"},
        {"ppc.eta0", "0.02", kDouble, 0, "", "base planner step size"},
        {"ppc.max_attempts", "50", kInt, 1, "", "rejection attempts per requested sample"},
        {"ppc.kappa_method", "ray_secant", kChoice, kNoMin, "ray_secant|fisher_band", "curvature estimator"},
        {"ppc.kappa_floor", "0.001", kDouble, 0, "", "curvature floor"},
        {"ppc.rays", "16", kInt, 1, "", "boundary rays for r_alpha and kappa"},
        {"ppc.c_h", "1.06", kDouble, 0, "", "bandwidth rule constant"},
        {"ppc.h_floor", "0.02", kDouble, 0, "", "action bandwidth floor"},
        {"ppc.h_ctx_floor", "0.05", kDouble, 0, "", "context bandwidth floor"},
        {"cbf.gamma", "0.5", kDouble, 0, "", "class-K coefficient"},
        {"cbf.next_position", "false", kBool, kNoMin, "", "barrier on o_k(t+1) instead of o_k(t)"},
        {"gp.refit_period", "50", kInt, 1, "", "steps between hyperparameter refits"},
        {"gp.max_points", "500", kInt, 1, "", "GP training set cap (reservoir)"},
        {"gp.gamma", "0.5", kDouble, 0, "", "class-K coefficient"},
        {"cem.candidates", "300", kInt, 1, "", "candidates per iteration"},
        {"cem.elite_fraction", "0.1", kDouble, 0, "", "elite fraction"},
        {"cem.iterations", "5", kInt, 1, "", "proposal updates"},
        {"cem.init_std", "0.5", kDouble, 0, "", "initial proposal std"},
        {"offline.samples", "500", kInt, 1, "", "offline DRGD samples at t=0"},
        {"offline.context_per_mode", "200", kInt, 1, "", "offline contextual samples per mode"},
        {"static.gamma", "1", kDouble, 0, "", "class-K coefficient of the static QP"},
        {"context.projection_seed", "7", kInt, 0, "", "random projection seed"},
        {"metrics.adaptation_window", "50", kInt, 1, "", "rolling window for adaptation steps"},
        {"metrics.adaptation_threshold", "0.95", kDouble, 0, "", "recovered safety level"},
        {"metrics.post_switch_window", "10", kInt, 1, "", "steps after a mode switch"},
        {"exp1.reshuffle", "true", kBool, kNoMin, "", "reshuffle obstacles at T/2"},
        {"exp2.ratios", "0.1,0.2,0.5,1,2,5,10", kDoubleList, 0, "", "beta / beta* sweep"},
        {"exp2.landscape_t", "200", kInt, 0, "", "landscape snapshot step (clamped to T-1)"},
        {"exp2.landscape_N", "200", kInt, 1, "", "landscape snapshot samples"},
        {"exp2.landscape_grid", "101", kInt, 3, "", "landscape grid points per axis"},
        {"exp3.T", "0", kInt, 0, "", "episode length override; 0 uses T"},
        {"exp3.budgets", "10,50,100,500,1000", kIntList, 1, "", "samples per step"},
        {"exp3.reference_samples", "10000", kInt, 1, "", "reference KDE size"},
        {"exp3.eval_points", "500", kInt, 1, "", "score error evaluation draws"},
        {"exp3.error_every", "50", kInt, 1, "", "score error snapshot period in steps"},
        {"exp3.reference_bandwidth", "shared", kChoice, kNoMin, "shared|matched|rule",
         "shared: every KDE uses the rule at the reference size; matched: the reference takes the "
         "test KDE's h; rule: each KDE uses its own rule"},
        {"exp4.T", "0", kInt, 0, "", "episode length override; 0 uses T"},
        {"exp4.obstacles", "3,5,10,15,20", kIntList, 1, "", "obstacle counts"},
        {"exp5.T", "0", kInt, 0, "", "episode length override; 0 uses T"},
        {"exp5.speeds", "0.25,0.5,1,2,4,8", kDoubleList, 0, "", "obstacle speed multipliers"},
        {"exp6.T", "0", kInt, 0, "", "episode length override; 0 uses T"},
        {"exp6.N", "25", kInt, 1, "", "samples per step"},
        {"exp6.period", "40", kInt, 1, "", "steps between mode switches"},
        {"exp6.obstacles_per_mode", "4", kInt, 1, "", "obstacles in each mode layout"},
        {"exp6.marginal_window", "0", kInt, 0, "", "PPC-Marginal window; 0 keeps the whole episode"},
        {"exp6.rolling_window", "40", kInt, 1, "", "rolling safety window for plots"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    double v = 0.0;
    if (!parse_double(get(key), v)) throw ConfigError("key '" + key + "': expected a number");
    return v;
}

long RunConfig::get_long(const std::string& key) const {
    long v = 0;
    if (!parse_long(get(key), v)) throw ConfigError("key '" + key + "': expected an integer");
    return v;
}

bool RunConfig::get_bool(const std::string& key) const {
    bool v = false;
    if (!parse_bool(get(key), v)) throw ConfigError("key '" + key + "': expected true or false");
    return v;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : list_items(get(key))) {
        double v = 0.0;
        if (!parse_double(item, v)) throw ConfigError("key '" + key + "': bad number '" + item + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<long> RunConfig::get_longs(const std::string& key) const {
    std::vector<long> out;
    for (const auto& item : list_items(get(key))) {
        long v = 0;
        if (!parse_long(item, v)) throw ConfigError("key '" + key + "': bad integer '" + item + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> RunConfig::get_strings(const std::string& key) const {
    return list_items(get(key));
}

void RunConfig::validate() const {
    for (const auto& k : config_keys()) {
        const auto below = [&](double v) {
            if (v < k.min_value) {
                throw ConfigError("key '" + k.key + "': value " + fmt(v) + " below minimum " +
                                  fmt(k.min_value));
            }
        };
        switch (k.kind) {
            case KeyKind::Int: below(static_cast<double>(get_long(k.key))); break;
            case KeyKind::Double: {
                const double v = get_double(k.key);
                if (!std::isfinite(v)) throw ConfigError("key '" + k.key + "': not finite");
                below(v);
                break;
            }
            case KeyKind::Bool: (void)get_bool(k.key); break;
            case KeyKind::IntList: {
                const auto v = get_longs(k.key);
                if (v.empty()) throw ConfigError("key '" + k.key + "': empty list");
                for (long x : v) below(static_cast<double>(x));
                break;
            }
            case KeyKind::DoubleList: {
                const auto v = get_doubles(k.key);
                if (v.empty()) throw ConfigError("key '" + k.key + "': empty list");
                for (double x : v) below(x);
                break;
            }
            case KeyKind::StringList: break;
            case KeyKind::Choice: {
                const auto options = split(k.choices, '|');
                if (std::find(options.begin(), options.end(), get(k.key)) == options.end()) {
                    throw ConfigError("key '" + k.key + "': expected one of " + k.choices);
                }
                break;
            }
            case KeyKind::String: break;
        }
    }
    if (get_double("cem.elite_fraction") > 1.0) {
        throw ConfigError("key 'cem.elite_fraction': must be at most 1");
    }
    if (get_double("ppc.alpha_percentile") > 100.0) {
        throw ConfigError("key 'ppc.alpha_percentile': must be at most 100");
    }
    for (const auto& name : get_strings("controllers")) {
        const auto& known = known_controllers();
        if (std::find(known.begin(), known.end(), name) == known.end()) {
            throw ConfigError("key 'controllers': unknown controller '" + name + "'");
        }
    }
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& k : config_keys()) out += k.key + "=" + get(k.key) + "\n";
    return out;
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_text()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": missing key");
        if (!find_key(key)) throw ConfigError(where + ": unknown config key '" + key + "'");
        cfg.set(key, line.substr(eq + 1));
    }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
}

ControllerSettings controller_settings(const RunConfig& cfg) {
    ControllerSettings s;
    PpcConfig& p = s.ppc;
    p.n_samples = static_cast<std::size_t>(cfg.get_long("N"));
    p.window_steps = cfg.get_long("ppc.window_steps");
    p.inner_steps = static_cast<int>(cfg.get_long("ppc.inner_steps"));
    p.schedule_c = cfg.get_double("ppc.schedule_c");
    p.retraction_steps = static_cast<int>(cfg.get_long("ppc.retraction_steps"));
    p.alpha_percentile = cfg.get_double("ppc.alpha_percentile");
    p.eta0 = cfg.get_double("ppc.eta0");
    p.max_attempts_per_sample = static_cast<int>(cfg.get_long("ppc.max_attempts"));
    p.curvature.method = cfg.get("ppc.kappa_method") == "fisher_band" ? CurvatureMethod::FisherBand
                                                                        : CurvatureMethod::RaySecant;
    p.curvature.kappa_floor = cfg.get_double("ppc.kappa_floor");
    p.curvature.rays = static_cast<int>(cfg.get_long("ppc.rays"));
    p.bandwidth.c_h = cfg.get_double("ppc.c_h");
    p.bandwidth.floor_u = cfg.get_double("ppc.h_floor");
    p.bandwidth.floor_ctx = cfg.get_double("ppc.h_ctx_floor");
    s.cbf.gamma = cfg.get_double("cbf.gamma");
    s.cbf.use_next_position = cfg.get_bool("cbf.next_position");
    s.gp.refit_period = static_cast<int>(cfg.get_long("gp.refit_period"));
    s.gp.max_points = static_cast<std::size_t>(cfg.get_long("gp.max_points"));
    s.gp.gamma = cfg.get_double("gp.gamma");
    s.cem.n_candidates = static_cast<std::size_t>(cfg.get_long("cem.candidates"));
    s.cem.elite_fraction = cfg.get_double("cem.elite_fraction");
    s.cem.iterations = static_cast<int>(cfg.get_long("cem.iterations"));
    s.cem.init_std = cfg.get_double("cem.init_std");
    s.offline_samples = static_cast<std::size_t>(cfg.get_long("offline.samples"));
    s.offline_context_per_mode = static_cast<std::size_t>(cfg.get_long("offline.context_per_mode"));
    s.static_gamma = cfg.get_double("static.gamma");
    s.projection_seed = static_cast<std::uint64_t>(cfg.get_long("context.projection_seed"));
    return s;
}

// ---------------------------------------------------------------------------
// Episodes

ModeSchedule make_mode_schedule(std::uint64_t seed, long horizon, int period, std::size_t per_mode,
                                double speed_multiplier) {
    if (period < 1) throw std::invalid_argument("mode period must be >= 1");
    ModeSchedule ms;
    ms.period = period;
    Rng layout_rng(derive_seed(seed, "mode-layouts"));
    ms.layouts = make_mode_layouts(layout_rng, per_mode, speed_multiplier);
    Rng rng(derive_seed(seed, "mode-schedule"));
    const long blocks = std::max<long>(1, (horizon + period - 1) / period);
    int prev = static_cast<int>(uniform(rng, 0.0, 4.0));
    ms.sequence.push_back(prev);
    for (long b = 1; b < blocks; ++b) {
        int m = static_cast<int>(uniform(rng, 0.0, 3.0));
        if (m >= prev) ++m;
        ms.sequence.push_back(m);
        prev = m;
    }
    return ms;
}

EpisodeLog run_episode(const EpisodeSpec& spec, Controller& controller,
                       const std::string& config_snapshot, const StepHook& hook) {
    if (spec.horizon < 1) throw std::invalid_argument("episode horizon must be >= 1");
    EpisodeLog log;
    log.seed = spec.seed;
    log.controller = controller.name();
    log.config_snapshot = config_snapshot;
    log.steps.reserve(static_cast<std::size_t>(spec.horizon));

    EnvState env = make_initial_state(spec.seed, spec.setup);
    if (spec.modes) {
        env = set_mode(env, spec.modes->sequence.front(), spec.modes->layouts);
        controller.set_mode_layouts(spec.modes->layouts);
    }
    controller.reset(env, spec.seed, spec.horizon);
    Rng reshuffle_rng(derive_seed(spec.seed, "reshuffle"));

    for (long t = 0; t < spec.horizon; ++t) {
        if (t > 0 && t == spec.reshuffle_step) {
            env = reshuffle(env, reshuffle_rng, spec.reshuffle_dist);
            log.events.push_back(t);
            log.event_kinds.push_back(EventKind::Reshuffle);
        }
        int mode = -1;
        if (spec.modes) {
            const auto& seq = spec.modes->sequence;
            const std::size_t block =
                std::min<std::size_t>(static_cast<std::size_t>(t / spec.modes->period), seq.size() - 1);
            mode = seq[block];
            if (t > 0 && t % spec.modes->period == 0 && block < seq.size() &&
                seq[block] != seq[block - 1]) {
                env = set_mode(env, mode, spec.modes->layouts);
                log.events.push_back(t);
                log.event_kinds.push_back(EventKind::ModeSwitch);
            }
        }
        if (hook) hook(env);

        std::vector<Vec2> positions;
        std::vector<double> radii;
        for (const auto& ob : env.obstacles) {
            positions.push_back(obstacle_position(ob, env.t, env.bounds));
            radii.push_back(ob.radius);
        }

        StepRecord rec;
        rec.context_mode = mode;
        const auto start = std::chrono::steady_clock::now();
        Vec2 u = controller.act(env, rec);
        const auto stop = std::chrono::steady_clock::now();
        rec.wall_clock_ns =
            std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count();
        if (!u.allFinite()) u = Vec2::Zero();

        rec.t = env.t;
        rec.q = env.q;
        rec.goal = env.goal;
        rec.action = u;
        rec.context_mode = mode;
        rec.feasible = is_feasible(env, u);
        rec.clearance = clearance(env, u);
        rec.cost = CostModel{env.q, env.goal, env.u_max}.value(u);
        log.steps.push_back(rec);

        for (std::size_t k = 0; k < env.obstacles.size(); ++k) {
            const Vec2 next = obstacle_position(env.obstacles[k], env.t + 1, env.bounds);
            log.path_length += (next - positions[k]).norm();
        }
        log.obstacle_tracks.push_back(std::move(positions));
        log.obstacle_radii.push_back(std::move(radii));

        const EnvState after = step(env, u);
        controller.observe(env, u, after);
        env = after;
    }
    return log;
}

// ---------------------------------------------------------------------------
// Metrics

double safety_rate(const EpisodeLog& log) {
    if (log.steps.empty()) return kNaN;
    long ok = 0;
    for (const auto& r : log.steps) ok += r.feasible ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(log.steps.size());
}

double normalized_cost(const EpisodeLog& log, const EpisodeLog& oracle_log) {
    if (log.steps.empty() || oracle_log.steps.empty()) {
        throw MismatchedEpisodes("normalized cost needs non-empty episodes");
    }
    if (log.steps.size() != oracle_log.steps.size() || log.seed != oracle_log.seed) {
        throw MismatchedEpisodes("episodes differ in seed or length");
    }
    double c = 0.0;
    double o = 0.0;
    for (const auto& r : log.steps) c += r.cost;
    for (const auto& r : oracle_log.steps) o += r.cost;
    if (o <= 0.0) return c <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return c / o;
}

long adaptation_steps(const EpisodeLog& log, long change_step, double threshold, long window) {
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    const long n = static_cast<long>(log.steps.size());
    if (change_step < 0 || change_step >= n) return kNeverRecovered;
    long ok = 0;
    for (long t = change_step; t < n; ++t) {
        ok += log.steps[static_cast<std::size_t>(t)].feasible ? 1 : 0;
        if (t - window >= change_step) ok -= log.steps[static_cast<std::size_t>(t - window)].feasible ? 1 : 0;
        if (t - change_step + 1 < window) continue;
        if (static_cast<double>(ok) >= threshold * static_cast<double>(window)) {
            return t - change_step + 1;
        }
    }
    return kNeverRecovered;
}

double mean_step_ns(const EpisodeLog& log) {
    if (log.steps.empty()) return kNaN;
    double s = 0.0;
    for (const auto& r : log.steps) s += static_cast<double>(r.wall_clock_ns);
    return s / static_cast<double>(log.steps.size());
}

long violations_total(const EpisodeLog& log) {
    long v = 0;
    for (const auto& r : log.steps) v += r.feasible ? 0 : 1;
    return v;
}

std::pair<double, double> post_switch_and_steady_safety(const EpisodeLog& log, long post_window) {
    const std::size_t n = log.steps.size();
    std::vector<char> post(n, 0);
    bool any = false;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (log.event_kinds[i] != EventKind::ModeSwitch) continue;
        any = true;
        for (long t = log.events[i]; t < log.events[i] + post_window && t < static_cast<long>(n); ++t) {
            post[static_cast<std::size_t>(t)] = 1;
        }
    }
    if (!any) return {kNaN, safety_rate(log)};
    long post_ok = 0, post_n = 0, steady_ok = 0, steady_n = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const int ok = log.steps[t].feasible ? 1 : 0;
        if (post[t]) {
            post_ok += ok;
            ++post_n;
        } else {
            steady_ok += ok;
            ++steady_n;
        }
    }
    const auto ratio = [](long a, long b) { return b > 0 ? static_cast<double>(a) / b : kNaN; };
    return {ratio(post_ok, post_n), ratio(steady_ok, steady_n)};
}

double safe_step_cost_ratio(const EpisodeLog& log, const EpisodeLog& oracle_log) {
    if (log.steps.empty() || oracle_log.steps.empty()) {
        throw MismatchedEpisodes("cost ratio needs non-empty episodes");
    }
    if (log.steps.size() != oracle_log.steps.size() || log.seed != oracle_log.seed) {
        throw MismatchedEpisodes("episodes differ in seed or length");
    }
    double c = 0.0;
    long n = 0;
    for (const auto& r : log.steps) {
        if (!r.feasible) continue;
        c += r.cost;
        ++n;
    }
    double o = 0.0;
    for (const auto& r : oracle_log.steps) o += r.cost;
    o /= static_cast<double>(oracle_log.steps.size());
    if (n == 0 || o <= 0.0) return kNaN;
    return (c / static_cast<double>(n)) / o;
}

DisplacementCheck displacement_check(const EpisodeLog& log, double tol) {
    DisplacementCheck out;
    out.worst_excess = -std::numeric_limits<double>::infinity();
    for (const auto& r : log.steps) {
        if (r.blocked || r.filter_active || r.beta_t <= 0.0 || r.kappa <= 0.0) continue;
        const double bound = r.g_c / (r.beta_t * r.kappa);
        if (!std::isfinite(bound)) continue;
        const double excess = (r.action - r.density_peak).norm() - bound;
        ++out.checked;
        if (excess > tol) ++out.violations;
        out.worst_excess = std::max(out.worst_excess, excess);
    }
    if (out.checked == 0) out.worst_excess = 0.0;
    return out;
}

MetricsSummary summarize(const EpisodeLog& log, const EpisodeLog* oracle_log, const MetricsOptions& opt) {
    MetricsSummary m;
    m.safety_rate = safety_rate(log);
    m.normalized_cost = oracle_log ? normalized_cost(log, *oracle_log) : kNaN;
    m.adaptation_steps = kNeverRecovered;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (log.event_kinds[i] == EventKind::Reshuffle) {
            m.adaptation_steps =
                adaptation_steps(log, log.events[i], opt.adaptation_threshold, opt.adaptation_window);
            break;
        }
    }
    m.mean_step_ns = mean_step_ns(log);
    m.violations_total = violations_total(log);
    const auto [post, steady] = post_switch_and_steady_safety(log, opt.post_switch_window);
    m.post_switch_safety = post;
    m.steady_safety = steady;
    m.safe_step_cost_ratio = oracle_log ? safe_step_cost_ratio(log, *oracle_log) : kNaN;
    return m;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) return kNaN;
    const double ma = mean_of(a);
    const double mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return kNaN;
    return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Experiment plumbing

namespace {

struct Job {
    std::string label;
    std::string env_label;
    std::string controller;
    ControllerSettings settings;
    EpisodeSpec spec;
    StepHook hook;
};

template <class T>
std::vector<T> run_parallel(const std::vector<std::function<T()>>& tasks, long jobs) {
    std::vector<T> out(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                out[i] = tasks[i]();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::size_t threads = jobs > 0 ? static_cast<std::size_t>(jobs)
                                   : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(1, tasks.size()));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<LabeledLog> run_jobs(const std::vector<Job>& jobs, const RunConfig& cfg,
                                 const std::string& experiment, const Progress& progress) {
    std::mutex progress_mu;
    std::atomic<std::size_t> done{0};
    const std::string snapshot = cfg.to_text();
    std::vector<std::function<LabeledLog()>> tasks;
    tasks.reserve(jobs.size());
    for (const auto& job : jobs) {
        tasks.emplace_back([&job, &snapshot, &progress, &progress_mu, &done, &experiment, total = jobs.size()] {
            auto controller = make_controller(job.controller, job.settings);
            LabeledLog out{job.label, job.env_label, run_episode(job.spec, *controller, snapshot, job.hook)};
            const std::size_t k = ++done;
            if (progress) {
                std::lock_guard<std::mutex> lock(progress_mu);
                progress(experiment + " [" + std::to_string(k) + "/" + std::to_string(total) + "] " +
                         job.label + " seed " + std::to_string(job.spec.seed) + " safety " +
                         fmt(safety_rate(out.log)));
            }
            return out;
        });
    }
    return run_parallel(tasks, cfg.get_long("jobs"));
}

long horizon_for(const RunConfig& cfg, const std::string& exp) {
    const std::string key = exp + ".T";
    if (find_key(key)) {
        const long t = cfg.get_long(key);
        if (t > 0) return t;
    }
    return cfg.get_long("T");
}

std::vector<std::uint64_t> seeds_of(const RunConfig& cfg) {
    std::vector<std::uint64_t> out;
    for (long s : cfg.get_longs("seeds")) out.push_back(static_cast<std::uint64_t>(s));
    return out;
}

EpisodeSpec base_spec(const RunConfig& cfg, std::size_t seed_index, std::uint64_t seed, long horizon) {
    EpisodeSpec spec;
    spec.seed = seed;
    spec.horizon = horizon;
    spec.setup.n_obstacles = static_cast<std::size_t>(cfg.get_long("env.n_obstacles"));
    spec.setup.canonical_start = seed_index == 0;
    spec.setup.bounded_feasibility = cfg.get_bool("env.bounded_feasibility");
    return spec;
}

std::vector<std::string> controllers_or(const RunConfig& cfg, std::vector<std::string> fallback) {
    auto chosen = cfg.get_strings("controllers");
    return chosen.empty() ? fallback : chosen;
}

std::string value_label(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

MetricsOptions metrics_options(const RunConfig& cfg) {
    MetricsOptions m;
    m.adaptation_window = cfg.get_long("metrics.adaptation_window");
    m.adaptation_threshold = cfg.get_double("metrics.adaptation_threshold");
    m.post_switch_window = cfg.get_long("metrics.post_switch_window");
    return m;
}

const EpisodeLog* find_oracle(const std::vector<LabeledLog>& logs, const std::string& env_label,
                              std::uint64_t seed) {
    for (const auto& l : logs) {
        if (l.log.controller == "oracle" && l.env_label == env_label && l.log.seed == seed) return &l.log;
    }
    return nullptr;
}

double beta_star_median(const EpisodeLog& log) {
    std::vector<double> v;
    for (const auto& r : log.steps) {
        if (r.beta_star > 0.0) v.push_back(r.beta_star);
    }
    return median_of(std::move(v));
}

// One row per log; `value_by_env` maps "env_label|label" to the row's variant value.
void add_rows(ResultSet& rs, const RunConfig& cfg, const std::string& variant,
              const std::map<std::string, std::string>& value_by_env) {
    const MetricsOptions opt = metrics_options(cfg);
    for (const auto& l : rs.logs) {
        SummaryRow row;
        row.experiment = rs.experiment;
        row.variant = variant;
        const auto it = value_by_env.find(l.env_label + "|" + l.label);
        row.variant_value = it != value_by_env.end() ? it->second : "";
        row.controller = l.log.controller;
        row.seed = l.log.seed;
        row.metrics = summarize(l.log, find_oracle(rs.logs, l.env_label, l.log.seed), opt);
        row.path_length = l.log.path_length;
        row.beta_star_median = beta_star_median(l.log);
        rs.rows.push_back(row);
    }
}

struct Group {
    std::vector<const SummaryRow*> rows;
};

std::map<std::tuple<std::string, std::string, std::string>, Group> group_rows(
    const std::vector<SummaryRow>& rows) {
    std::map<std::tuple<std::string, std::string, std::string>, Group> g;
    for (const auto& r : rows) g[{r.variant, r.variant_value, r.controller}].rows.push_back(&r);
    return g;
}

template <class F>
std::vector<double> collect(const Group& g, F f) {
    std::vector<double> v;
    for (const auto* r : g.rows) v.push_back(f(*r));
    return v;
}

double mean_metric(const std::vector<SummaryRow>& rows, const std::string& controller,
                   const std::string& value, double MetricsSummary::*field) {
    std::vector<double> v;
    for (const auto& r : rows) {
        if (r.controller == controller && r.variant_value == value) v.push_back(r.metrics.*field);
    }
    return mean_of(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// Experiment 1: main comparison with a reshuffle at T/2.

ResultSet run_experiment_1(const RunConfig& cfg, const Progress& progress) {
    ResultSet rs;
    rs.experiment = "exp1";
    const long horizon = horizon_for(cfg, "exp1");
    const auto settings = controller_settings(cfg);
    auto names = controllers_or(cfg, {"ppc", "offline_drgd", "cbf_qp", "gp_cbf", "cem",
                                      "static_conservative"});
    if (std::find(names.begin(), names.end(), "oracle") == names.end()) names.push_back("oracle");
    const auto seeds = seeds_of(cfg);
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        EpisodeSpec spec = base_spec(cfg, i, seeds[i], horizon);
        if (cfg.get_bool("exp1.reshuffle")) spec.reshuffle_step = horizon / 2;
        for (const auto& name : names) jobs.push_back({name, "obstacles", name, settings, spec, {}});
    }
    rs.logs = run_jobs(jobs, cfg, rs.experiment, progress);
    add_rows(rs, cfg, "", {});
    for (const auto& name : names) {
        rs.scalars["safety." + name] = mean_metric(rs.rows, name, "", &MetricsSummary::safety_rate);
        rs.scalars["normalized_cost." + name] =
            mean_metric(rs.rows, name, "", &MetricsSummary::normalized_cost);
    }
    return rs;
}

// ---------------------------------------------------------------------------
// Experiment 2: fixed-ratio stiffness sweep, plus one free-energy landscape.

namespace {

void landscape_tables(const RunConfig& cfg, ResultSet& rs, std::uint64_t seed, long horizon) {
    const long t_snap = std::clamp<long>(cfg.get_long("exp2.landscape_t"), 0, horizon - 1);
    ControllerSettings settings = controller_settings(cfg);
    EpisodeSpec spec = base_spec(cfg, 0, seed, t_snap + 1);
    std::optional<EnvState> snap_env;
    const StepHook hook = [&](const EnvState& env) {
        if (env.t == t_snap) snap_env = env;
    };
    auto ctrl = make_controller("ppc", settings);
    (void)run_episode(spec, *ctrl, {}, hook);
    if (!snap_env) return;
    const EnvState& env = *snap_env;

    PpcConfig pc = settings.ppc;
    Rng rng(derive_seed(seed, "landscape"));
    const auto samples =
        sample_feasible(env, static_cast<std::size_t>(cfg.get_long("exp2.landscape_N")), rng,
                        pc.max_attempts_per_sample);
    const CostModel cost{env.q, env.goal, env.u_max};
    const DensitySnapshot snap = analyze_density(fit_points(samples, pc.bandwidth), samples, cost, pc);
    const auto& ce = snap.curvature;
    const double beta = beta_schedule(ce.beta_star, pc.schedule_c, static_cast<long>(samples.size()));
    const double eta = step_size(CostModel::kLipschitz, beta, ce.lambda_max, pc.eta0);
    const Kde& model = snap.model;
    const ScoreFn score = [&model](const Vec2& u) { return model.evaluate(u, false).score; };
    const Vec2 u_star = plan(cost, score, beta, eta, 5000, ce.density_peak).u;

    const long g = cfg.get_long("exp2.landscape_grid");
    std::ostringstream grid;
    grid << "u_x,u_y,cost,log_density,free_energy,feasible,in_level_set\n";
    const double log_alpha = std::log(ce.alpha);
    for (long i = 0; i < g; ++i) {
        for (long j = 0; j < g; ++j) {
            const Vec2 u(-env.u_max + 2.0 * env.u_max * static_cast<double>(j) / static_cast<double>(g - 1),
                         -env.u_max + 2.0 * env.u_max * static_cast<double>(i) / static_cast<double>(g - 1));
            const double ld = model.evaluate(u, false).log_density;
            const double c = cost.value(u);
            grid << fmt(u.x()) << ',' << fmt(u.y()) << ',' << fmt(c) << ',' << fmt(ld) << ','
                 << fmt(c - beta * ld) << ',' << (is_feasible(env, u) ? 1 : 0) << ','
                 << (ld >= log_alpha ? 1 : 0) << '\n';
        }
    }
    rs.tables["landscape.csv"] = grid.str();

    std::ostringstream pts;
    pts << "name,u_x,u_y,value\n";
    pts << "u_star," << fmt(u_star.x()) << ',' << fmt(u_star.y()) << ",nan\n";
    pts << "u_bar," << fmt(ce.density_peak.x()) << ',' << fmt(ce.density_peak.y()) << ",nan\n";
    const Vec2 u_oracle = oracle_action(env);
    pts << "oracle," << fmt(u_oracle.x()) << ',' << fmt(u_oracle.y()) << ",nan\n";
    pts << "displacement,nan,nan," << fmt((u_star - ce.density_peak).norm()) << '\n';
    pts << "displacement_bound,nan,nan," << fmt(ce.g_c / (beta * ce.kappa)) << '\n';
    pts << "true_boundary_distance,nan,nan," << fmt(clearance(env, u_star)) << '\n';
    pts << "beta,nan,nan," << fmt(beta) << '\n';
    pts << "beta_star,nan,nan," << fmt(ce.beta_star) << '\n';
    pts << "kappa,nan,nan," << fmt(ce.kappa) << '\n';
    pts << "r_alpha,nan,nan," << fmt(ce.r_alpha) << '\n';
    pts << "alpha,nan,nan," << fmt(ce.alpha) << '\n';
    pts << "t,nan,nan," << fmt(static_cast<double>(t_snap)) << '\n';
    rs.tables["landscape_points.csv"] = pts.str();
}

}  // namespace

ResultSet run_experiment_2(const RunConfig& cfg, const Progress& progress) {
    ResultSet rs;
    rs.experiment = "exp2";
    const long horizon = horizon_for(cfg, "exp2");
    const auto ratios = cfg.get_doubles("exp2.ratios");
    const auto seeds = seeds_of(cfg);
    std::vector<Job> jobs;
    std::map<std::string, std::string> value_by;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const EpisodeSpec spec = base_spec(cfg, i, seeds[i], horizon);
        for (double ratio : ratios) {
            ControllerSettings s = controller_settings(cfg);
            s.ppc.beta_mode = BetaMode::FixedRatio;
            s.ppc.beta_ratio = ratio;
            const std::string label = "ppc_beta" + value_label(ratio);
            value_by["obstacles|" + label] = value_label(ratio);
            jobs.push_back({label, "obstacles", "ppc", s, spec, {}});
        }
        jobs.push_back({"oracle", "obstacles", "oracle", controller_settings(cfg), spec, {}});
    }
    rs.logs = run_jobs(jobs, cfg, rs.experiment, progress);
    add_rows(rs, cfg, "beta_ratio", value_by);

    std::ostringstream tab;
    tab << "beta_ratio,beta_star_median,safety_mean,safety_std,normalized_cost_mean,"
           "normalized_cost_std,total_cost_mean\n";
    for (double ratio : ratios) {
        const std::string v = value_label(ratio);
        std::vector<double> safety, ncost, bstar, total;
        for (std::size_t k = 0; k < rs.rows.size(); ++k) {
            const auto& r = rs.rows[k];
            if (r.controller != "ppc" || r.variant_value != v) continue;
            safety.push_back(r.metrics.safety_rate);
            ncost.push_back(r.metrics.normalized_cost);
            bstar.push_back(r.beta_star_median);
            double c = 0.0;
            for (const auto& st : rs.logs[k].log.steps) c += st.cost;
            total.push_back(c);
        }
        tab << v << ',' << fmt(median_of(bstar)) << ',' << fmt(mean_of(safety)) << ','
            << fmt(std_of(safety)) << ',' << fmt(mean_of(ncost)) << ',' << fmt(std_of(ncost)) << ','
            << fmt(mean_of(total)) << '\n';
        rs.scalars["safety.beta" + v] = mean_of(safety);
        rs.scalars["normalized_cost.beta" + v] = mean_of(ncost);
    }
    rs.tables["stiffness.csv"] = tab.str();
    if (!seeds.empty()) landscape_tables(cfg, rs, seeds.front(), horizon);
    return rs;
}

// ---------------------------------------------------------------------------
// Experiment 3: sample budget and score error against a large reference KDE.

namespace {

double score_error_at(const EnvState& env, std::size_t n, const RunConfig& cfg,
                      const BandwidthConfig& bw, Rng& rng) {
    const auto test_pts = sample_feasible(env, n, rng, 1000);
    const auto ref_pts =
        sample_feasible(env, static_cast<std::size_t>(cfg.get_long("exp3.reference_samples")), rng, 1000);
    const std::string mode = cfg.get("exp3.reference_bandwidth");
    Kde test, ref;
    if (mode == "shared") {
        ref = fit_points(ref_pts, bw);
        test = Kde(test_pts, ref.bandwidth());
    } else if (mode == "matched") {
        test = fit_points(test_pts, bw);
        ref = Kde(ref_pts, test.bandwidth());
    } else {
        test = fit_points(test_pts, bw);
        ref = fit_points(ref_pts, bw);
    }
    const auto n_eval = static_cast<std::size_t>(cfg.get_long("exp3.eval_points"));
    std::vector<Vec2> eval;
    eval.reserve(n_eval);
    const auto n_ref = static_cast<double>(ref_pts.size());
    for (std::size_t i = 0; i < n_eval; ++i) {
        const auto pick = std::min(ref_pts.size() - 1, static_cast<std::size_t>(uniform(rng, 0.0, n_ref)));
        const Vec2& c = ref_pts[pick];
        eval.emplace_back(c.x() + ref.bandwidth() * standard_normal(rng),
                          c.y() + ref.bandwidth() * standard_normal(rng));
    }
    return score_error(test, ref, eval);
}

}  // namespace

ResultSet run_experiment_3(const RunConfig& cfg, const Progress& progress) {
    ResultSet rs;
    rs.experiment = "exp3";
    const long horizon = horizon_for(cfg, "exp3");
    const auto budgets = cfg.get_longs("exp3.budgets");
    const auto seeds = seeds_of(cfg);
    const long every = cfg.get_long("exp3.error_every");
    std::vector<Job> jobs;
    std::map<std::string, std::string> value_by;
    std::vector<std::shared_ptr<std::vector<EnvState>>> states;
    std::vector<std::size_t> state_job;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const EpisodeSpec spec = base_spec(cfg, i, seeds[i], horizon);
        for (long n : budgets) {
            ControllerSettings s = controller_settings(cfg);
            s.ppc.n_samples = static_cast<std::size_t>(n);
            const std::string label = "ppc_N" + std::to_string(n);
            value_by["obstacles|" + label] = std::to_string(n);
            auto store = std::make_shared<std::vector<EnvState>>();
            StepHook hook = [store, every](const EnvState& env) {
                if (env.t % every == 0) store->push_back(env);
            };
            state_job.push_back(jobs.size());
            states.push_back(store);
            jobs.push_back({label, "obstacles", "ppc", s, spec, hook});
        }
        jobs.push_back({"oracle", "obstacles", "oracle", controller_settings(cfg), spec, {}});
    }
    rs.logs = run_jobs(jobs, cfg, rs.experiment, progress);
    add_rows(rs, cfg, "N", value_by);

    // Score errors on the environment states each run visited.
    const BandwidthConfig bw = controller_settings(cfg).ppc.bandwidth;
    std::vector<std::function<double()>> tasks;
    for (std::size_t k = 0; k < states.size(); ++k) {
        const Job& job = jobs[state_job[k]];
        const auto store = states[k];
        tasks.emplace_back([store, &job, &cfg, bw] {
            std::vector<double> errs;
            for (const auto& env : *store) {
                Rng rng(derive_seed(derive_seed(job.spec.seed, "score-error"), job.settings.ppc.n_samples,
                                    static_cast<std::uint64_t>(env.t)));
                errs.push_back(score_error_at(env, job.settings.ppc.n_samples, cfg, bw, rng));
            }
            return mean_of(errs);
        });
    }
    const auto errors = run_parallel(tasks, cfg.get_long("jobs"));
    for (std::size_t k = 0; k < states.size(); ++k) rs.rows[state_job[k]].score_error = errors[k];
    if (progress) progress("exp3 score errors computed");

    std::ostringstream tab;
    tab << "N,safety_mean,safety_std,score_error_mean,score_error_std\n";
    std::vector<std::pair<double, double>> series;
    for (long n : budgets) {
        const std::string v = std::to_string(n);
        std::vector<double> safety, err;
        for (const auto& r : rs.rows) {
            if (r.controller != "ppc" || r.variant_value != v) continue;
            safety.push_back(r.metrics.safety_rate);
            err.push_back(r.score_error);
        }
        tab << v << ',' << fmt(mean_of(safety)) << ',' << fmt(std_of(safety)) << ',' << fmt(mean_of(err))
            << ',' << fmt(std_of(err)) << '\n';
        series.emplace_back(static_cast<double>(n), mean_of(err));
        rs.scalars["safety.N" + v] = mean_of(safety);
        rs.scalars["score_error.N" + v] = mean_of(err);
    }
    rs.tables["rate_fit.csv"] = tab.str();
    try {
        rs.scalars["rate_exponent"] = fit_rate_exponent(series);
    } catch (const std::exception&) {
        rs.scalars["rate_exponent"] = kNaN;
    }
    return rs;
}

// ---------------------------------------------------------------------------
// Experiment 4: obstacle count.

ResultSet run_experiment_4(const RunConfig& cfg, const Progress& progress) {
    ResultSet rs;
    rs.experiment = "exp4";
    const long horizon = horizon_for(cfg, "exp4");
    const auto counts = cfg.get_longs("exp4.obstacles");
    auto names = controllers_or(cfg, {"ppc", "cbf_qp", "cem"});
    if (std::find(names.begin(), names.end(), "oracle") == names.end()) names.push_back("oracle");
    const auto seeds = seeds_of(cfg);
    const auto settings = controller_settings(cfg);
    std::vector<Job> jobs;
    std::map<std::string, std::string> value_by;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        for (long k : counts) {
            EpisodeSpec spec = base_spec(cfg, i, seeds[i], horizon);
            spec.setup.n_obstacles = static_cast<std::size_t>(k);
            const std::string env_label = "obstacles_K" + std::to_string(k);
            for (const auto& name : names) {
                const std::string label = name + "_K" + std::to_string(k);
                value_by[env_label + "|" + label] = std::to_string(k);
                jobs.push_back({label, env_label, name, settings, spec, {}});
            }
        }
    }
    rs.logs = run_jobs(jobs, cfg, rs.experiment, progress);
    add_rows(rs, cfg, "K_o", value_by);
    for (long k : counts) {
        for (const auto& name : names) {
            rs.scalars["safety." + name + ".K" + std::to_string(k)] =
                mean_metric(rs.rows, name, std::to_string(k), &MetricsSummary::safety_rate);
        }
    }
    return rs;
}

// ---------------------------------------------------------------------------
// Experiment 5: obstacle speed sweep.

ResultSet run_experiment_5(const RunConfig& cfg, const Progress& progress) {
    ResultSet rs;
    rs.experiment = "exp5";
    const long horizon = horizon_for(cfg, "exp5");
    const auto speeds = cfg.get_doubles("exp5.speeds");
    const auto seeds = seeds_of(cfg);
    const auto settings = controller_settings(cfg);
    auto names = controllers_or(cfg, {"ppc"});
    if (std::find(names.begin(), names.end(), "oracle") == names.end()) names.push_back("oracle");
    std::vector<Job> jobs;
    std::map<std::string, std::string> value_by;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        for (double w : speeds) {
            EpisodeSpec spec = base_spec(cfg, i, seeds[i], horizon);
            spec.setup.dist.speed_multiplier = w;
            const std::string env_label = "obstacles_speed" + value_label(w);
            for (const auto& name : names) {
                const std::string label = name + "_speed" + value_label(w);
                value_by[env_label + "|" + label] = value_label(w);
                jobs.push_back({label, env_label, name, settings, spec, {}});
            }
        }
    }
    rs.logs = run_jobs(jobs, cfg, rs.experiment, progress);
    add_rows(rs, cfg, "speed", value_by);

    const std::string primary = names.front();
    std::ostringstream tab;
    tab << "speed,path_length_mean,normalized_cost_mean,normalized_cost_std,safety_mean,safety_std\n";
    std::vector<double> xs, ys, ex, ey;
    double min_safety = 1.0;
    for (double w : speeds) {
        const std::string v = value_label(w);
        std::vector<double> pl, nc, sf;
        for (const auto& r : rs.rows) {
            if (r.controller != primary || r.variant_value != v) continue;
            pl.push_back(r.path_length);
            nc.push_back(r.metrics.normalized_cost);
            sf.push_back(r.metrics.safety_rate);
            ex.push_back(r.path_length);
            ey.push_back(r.metrics.normalized_cost);
        }
        tab << v << ',' << fmt(mean_of(pl)) << ',' << fmt(mean_of(nc)) << ',' << fmt(std_of(nc)) << ','
            << fmt(mean_of(sf)) << ',' << fmt(std_of(sf)) << '\n';
        xs.push_back(mean_of(pl));
        ys.push_back(mean_of(nc));
        min_safety = std::min(min_safety, mean_of(sf));
        rs.scalars["safety.speed" + v] = mean_of(sf);
        rs.scalars["normalized_cost.speed" + v] = mean_of(nc);
    }
    rs.tables["correlation.csv"] = tab.str();
    rs.scalars["pearson_cost_path_length"] = pearson(xs, ys);
    rs.scalars["pearson_cost_path_length_episodes"] = pearson(ex, ey);
    rs.scalars["min_speed_safety"] = min_safety;
    return rs;
}

// ---------------------------------------------------------------------------
// Experiment 6: recurring mode switches.

ResultSet run_experiment_6(const RunConfig& cfg, const Progress& progress) {
    ResultSet rs;
    rs.experiment = "exp6";
    const long horizon = horizon_for(cfg, "exp6");
    const int period = static_cast<int>(cfg.get_long("exp6.period"));
    const auto per_mode = static_cast<std::size_t>(cfg.get_long("exp6.obstacles_per_mode"));
    auto names = controllers_or(cfg, {"ppc_context", "ppc_marginal", "offline_context"});
    if (std::find(names.begin(), names.end(), "oracle") == names.end()) names.push_back("oracle");
    const auto seeds = seeds_of(cfg);
    ControllerSettings base = controller_settings(cfg);
    base.ppc.n_samples = static_cast<std::size_t>(cfg.get_long("exp6.N"));
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        EpisodeSpec spec = base_spec(cfg, i, seeds[i], horizon);
        spec.setup.n_obstacles = per_mode;
        spec.modes = make_mode_schedule(seeds[i], horizon, period, per_mode);
        for (const auto& name : names) {
            ControllerSettings s = base;
            if (name == "ppc_marginal") {
                const long w = cfg.get_long("exp6.marginal_window");
                s.ppc.window_steps = w > 0 ? w : horizon + 1;
            }
            jobs.push_back({name, "obstacles", name, s, spec, {}});
        }
    }
    rs.logs = run_jobs(jobs, cfg, rs.experiment, progress);
    add_rows(rs, cfg, "", {});
    for (const auto& name : names) {
        rs.scalars["safety." + name] = mean_metric(rs.rows, name, "", &MetricsSummary::safety_rate);
        rs.scalars["post_switch_safety." + name] =
            mean_metric(rs.rows, name, "", &MetricsSummary::post_switch_safety);
        rs.scalars["steady_safety." + name] =
            mean_metric(rs.rows, name, "", &MetricsSummary::steady_safety);
        rs.scalars["safe_step_cost_ratio." + name] =
            mean_metric(rs.rows, name, "", &MetricsSummary::safe_step_cost_ratio);
    }
    return rs;
}

ResultSet run_experiment(int id, const RunConfig& cfg, const Progress& progress) {
    cfg.validate();
    switch (id) {
        case 1: return run_experiment_1(cfg, progress);
        case 2: return run_experiment_2(cfg, progress);
        case 3: return run_experiment_3(cfg, progress);
        case 4: return run_experiment_4(cfg, progress);
        case 5: return run_experiment_5(cfg, progress);
        case 6: return run_experiment_6(cfg, progress);
        default: throw ConfigError("unknown experiment id " + std::to_string(id));
    }
}

// ---------------------------------------------------------------------------
// Persistence

const std::vector<std::string>& step_csv_columns() {
    static const std::vector<std::string> cols = {
        "t", "q_x", "q_y", "goal_x", "goal_y", "u_x", "u_y", "feasible", "cost", "clearance",
        "beta_t", "beta_star", "kappa", "kappa_floored", "r_alpha", "alpha", "bandwidth", "g_c",
        "peak_x", "peak_y", "filter_active", "filter_iterations", "filter_failed", "blocked",
        "context_fallback", "context_mode", "n_cumulative", "wall_clock_ns", "event"};
    return cols;
}

const std::vector<std::string>& summary_csv_columns() {
    static const std::vector<std::string> cols = {
        "experiment", "variant", "variant_value", "controller", "seed", "safety_rate",
        "normalized_cost", "adaptation_steps", "mean_step_ns", "violations_total",
        "post_switch_safety", "steady_safety", "safe_step_cost_ratio", "score_error",
        "path_length", "beta_star_median"};
    return cols;
}

const std::vector<std::string>& obstacle_csv_columns() {
    static const std::vector<std::string> cols = {"t", "k", "x", "y", "radius"};
    return cols;
}

const std::vector<std::string>& aggregate_csv_columns() {
    static const std::vector<std::string> cols = {
        "experiment", "variant", "variant_value", "controller", "n_seeds", "safety_mean",
        "safety_std", "normalized_cost_mean", "normalized_cost_std", "adaptation_steps_mean",
        "never_recovered", "mean_step_ns", "violations_mean", "post_switch_safety_mean",
        "steady_safety_mean", "safe_step_cost_ratio_mean", "safe_step_cost_ratio_std",
        "score_error_mean", "score_error_std", "path_length_mean"};
    return cols;
}

namespace {

std::string header(const std::vector<std::string>& cols) {
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i) out += ',';
        out += cols[i];
    }
    return out + "\n";
}

}  // namespace

std::string step_csv(const EpisodeLog& log) {
    std::ostringstream os;
    os << header(step_csv_columns());
    std::map<long, EventKind> ev;
    for (std::size_t i = 0; i < log.events.size(); ++i) ev[log.events[i]] = log.event_kinds[i];
    for (std::size_t i = 0; i < log.steps.size(); ++i) {
        const auto& r = log.steps[i];
        const auto it = ev.find(static_cast<long>(i));
        const int event = it == ev.end() ? 0 : static_cast<int>(it->second);
        os << r.t << ',' << fmt(r.q.x()) << ',' << fmt(r.q.y()) << ',' << fmt(r.goal.x()) << ','
           << fmt(r.goal.y()) << ',' << fmt(r.action.x()) << ',' << fmt(r.action.y()) << ','
           << (r.feasible ? 1 : 0) << ',' << fmt(r.cost) << ',' << fmt(r.clearance) << ','
           << fmt(r.beta_t) << ',' << fmt(r.beta_star) << ',' << fmt(r.kappa) << ','
           << (r.kappa_floored ? 1 : 0) << ',' << fmt(r.r_alpha) << ',' << fmt(r.alpha) << ','
           << fmt(r.bandwidth) << ',' << fmt(r.g_c) << ',' << fmt(r.density_peak.x()) << ','
           << fmt(r.density_peak.y()) << ',' << (r.filter_active ? 1 : 0) << ',' << r.filter_iterations
           << ',' << (r.filter_failed ? 1 : 0) << ',' << (r.blocked ? 1 : 0) << ','
           << (r.context_fallback ? 1 : 0) << ',' << r.context_mode << ',' << r.n_cumulative << ','
           << r.wall_clock_ns << ',' << event << '\n';
    }
    return os.str();
}

namespace {

std::vector<std::vector<std::string>> parse_table(const std::string& text,
                                                  const std::vector<std::string>& expected) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto cols = split(line, ',');
    if (cols != expected) throw std::runtime_error("CSV header does not match the schema");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != expected.size()) throw std::runtime_error("CSV row has wrong field count");
        rows.push_back(std::move(fields));
    }
    return rows;
}

double to_d(const std::string& s) {
    if (s == "nan") return kNaN;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    if (!parse_double(s, v)) throw std::runtime_error("bad number '" + s + "' in CSV");
    return v;
}

long to_l(const std::string& s) {
    long v = 0;
    if (!parse_long(s, v)) throw std::runtime_error("bad integer '" + s + "' in CSV");
    return v;
}

}  // namespace

EpisodeLog parse_step_csv(const std::string& text, std::uint64_t seed, const std::string& controller) {
    EpisodeLog log;
    log.seed = seed;
    log.controller = controller;
    for (const auto& f : parse_table(text, step_csv_columns())) {
        StepRecord r;
        std::size_t i = 0;
        r.t = to_l(f[i++]);
        r.q = {to_d(f[i]), to_d(f[i + 1])};
        i += 2;
        r.goal = {to_d(f[i]), to_d(f[i + 1])};
        i += 2;
        r.action = {to_d(f[i]), to_d(f[i + 1])};
        i += 2;
        r.feasible = to_l(f[i++]) != 0;
        r.cost = to_d(f[i++]);
        r.clearance = to_d(f[i++]);
        r.beta_t = to_d(f[i++]);
        r.beta_star = to_d(f[i++]);
        r.kappa = to_d(f[i++]);
        r.kappa_floored = to_l(f[i++]) != 0;
        r.r_alpha = to_d(f[i++]);
        r.alpha = to_d(f[i++]);
        r.bandwidth = to_d(f[i++]);
        r.g_c = to_d(f[i++]);
        r.density_peak = {to_d(f[i]), to_d(f[i + 1])};
        i += 2;
        r.filter_active = to_l(f[i++]) != 0;
        r.filter_iterations = static_cast<int>(to_l(f[i++]));
        r.filter_failed = to_l(f[i++]) != 0;
        r.blocked = to_l(f[i++]) != 0;
        r.context_fallback = to_l(f[i++]) != 0;
        r.context_mode = static_cast<int>(to_l(f[i++]));
        r.n_cumulative = to_l(f[i++]);
        r.wall_clock_ns = to_l(f[i++]);
        const long event = to_l(f[i++]);
        if (event != 0) {
            log.events.push_back(static_cast<long>(log.steps.size()));
            log.event_kinds.push_back(static_cast<EventKind>(event));
        }
        log.steps.push_back(r);
    }
    return log;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << header(summary_csv_columns());
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        os << r.experiment << ',' << r.variant << ',' << r.variant_value << ',' << r.controller << ','
           << r.seed << ',' << fmt(m.safety_rate) << ',' << fmt(m.normalized_cost) << ','
           << m.adaptation_steps << ',' << fmt(m.mean_step_ns) << ',' << m.violations_total << ','
           << fmt(m.post_switch_safety) << ',' << fmt(m.steady_safety) << ','
           << fmt(m.safe_step_cost_ratio) << ',' << fmt(r.score_error) << ',' << fmt(r.path_length)
           << ',' << fmt(r.beta_star_median) << '\n';
    }
    return os.str();
}

std::vector<SummaryRow> parse_summary_csv(const std::string& text) {
    std::vector<SummaryRow> out;
    for (const auto& f : parse_table(text, summary_csv_columns())) {
        SummaryRow r;
        r.experiment = f[0];
        r.variant = f[1];
        r.variant_value = f[2];
        r.controller = f[3];
        r.seed = static_cast<std::uint64_t>(to_l(f[4]));
        r.metrics.safety_rate = to_d(f[5]);
        r.metrics.normalized_cost = to_d(f[6]);
        r.metrics.adaptation_steps = to_l(f[7]);
        r.metrics.mean_step_ns = to_d(f[8]);
        r.metrics.violations_total = to_l(f[9]);
        r.metrics.post_switch_safety = to_d(f[10]);
        r.metrics.steady_safety = to_d(f[11]);
        r.metrics.safe_step_cost_ratio = to_d(f[12]);
        r.score_error = to_d(f[13]);
        r.path_length = to_d(f[14]);
        r.beta_star_median = to_d(f[15]);
        out.push_back(r);
    }
    return out;
}

std::string obstacle_csv(const EpisodeLog& log) {
    std::ostringstream os;
    os << header(obstacle_csv_columns());
    for (std::size_t t = 0; t < log.obstacle_tracks.size(); ++t) {
        for (std::size_t k = 0; k < log.obstacle_tracks[t].size(); ++k) {
            const Vec2& p = log.obstacle_tracks[t][k];
            os << t << ',' << k << ',' << fmt(p.x()) << ',' << fmt(p.y()) << ','
               << fmt(log.obstacle_radii[t][k]) << '\n';
        }
    }
    return os.str();
}

std::string aggregate_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << header(aggregate_csv_columns());
    std::string experiment = rows.empty() ? "" : rows.front().experiment;
    for (const auto& [key, g] : group_rows(rows)) {
        const auto& [variant, value, controller] = key;
        const auto safety = collect(g, [](const SummaryRow& r) { return r.metrics.safety_rate; });
        const auto ncost = collect(g, [](const SummaryRow& r) { return r.metrics.normalized_cost; });
        std::vector<double> adapt;
        long never = 0;
        for (const auto* r : g.rows) {
            if (r->metrics.adaptation_steps == kNeverRecovered) {
                ++never;
            } else {
                adapt.push_back(static_cast<double>(r->metrics.adaptation_steps));
            }
        }
        const auto ns = collect(g, [](const SummaryRow& r) { return r.metrics.mean_step_ns; });
        const auto viol = collect(g, [](const SummaryRow& r) { return static_cast<double>(r.metrics.violations_total); });
        const auto post = collect(g, [](const SummaryRow& r) { return r.metrics.post_switch_safety; });
        const auto steady = collect(g, [](const SummaryRow& r) { return r.metrics.steady_safety; });
        const auto ssc = collect(g, [](const SummaryRow& r) { return r.metrics.safe_step_cost_ratio; });
        const auto err = collect(g, [](const SummaryRow& r) { return r.score_error; });
        const auto pl = collect(g, [](const SummaryRow& r) { return r.path_length; });
        os << experiment << ',' << variant << ',' << value << ',' << controller << ',' << g.rows.size()
           << ',' << fmt(mean_of(safety)) << ',' << fmt(std_of(safety)) << ',' << fmt(mean_of(ncost))
           << ',' << fmt(std_of(ncost)) << ',' << fmt(mean_of(adapt)) << ',' << never << ','
           << fmt(mean_of(ns)) << ',' << fmt(mean_of(viol)) << ',' << fmt(mean_of(post)) << ','
           << fmt(mean_of(steady)) << ',' << fmt(mean_of(ssc)) << ',' << fmt(std_of(ssc)) << ','
           << fmt(mean_of(err)) << ',' << fmt(std_of(err)) << ',' << fmt(mean_of(pl)) << '\n';
    }
    return os.str();
}

std::string manifest_text(const std::string& experiment, const RunConfig& cfg, const std::string& status,
                          const std::map<std::string, double>& scalars) {
    std::ostringstream os;
    const auto join = [](const std::vector<std::string>& cols) {
        std::string s;
        for (std::size_t i = 0; i < cols.size(); ++i) s += (i ? "," : "") + cols[i];
        return s;
    };
    os << "schema_version=" << kSchemaVersion << '\n';
    os << "experiment=" << experiment << '\n';
    os << "status=" << status << '\n';
    os << "version=" << PPC_VERSION << '\n';
    os << "config_hash=" << std::hex << cfg.hash() << std::dec << '\n';
    os << "seeds=" << cfg.get("seeds") << '\n';
    os << "T=" << horizon_for(cfg, experiment) << '\n';
    os << "rolling_window="
       << (experiment == "exp6" ? cfg.get("exp6.rolling_window") : cfg.get("metrics.adaptation_window"))
       << '\n';
    os << "adaptation_threshold=" << cfg.get("metrics.adaptation_threshold") << '\n';
    os << "post_switch_window=" << cfg.get("metrics.post_switch_window") << '\n';
    os << "columns.step=" << join(step_csv_columns()) << '\n';
    os << "columns.summary=" << join(summary_csv_columns()) << '\n';
    os << "columns.aggregate=" << join(aggregate_csv_columns()) << '\n';
    os << "columns.obstacles=" << join(obstacle_csv_columns()) << '\n';
    for (const auto& k : config_keys()) os << "config." << k.key << '=' << cfg.get(k.key) << '\n';
    for (const auto& [k, v] : scalars) os << "result." << k << '=' << fmt(v) << '\n';
    return os.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp + "'");
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void write_manifest(const std::filesystem::path& out_dir, const std::string& experiment,
                    const RunConfig& cfg, const std::string& status,
                    const std::map<std::string, double>& scalars) {
    write_file(out_dir / experiment / "manifest.txt", manifest_text(experiment, cfg, status, scalars));
}

std::filesystem::path write_results(const ResultSet& rs, const RunConfig& cfg,
                                    const std::filesystem::path& out_dir) {
    const auto dir = out_dir / rs.experiment;
    std::map<std::string, const EpisodeLog*> env_logs;
    for (const auto& l : rs.logs) {
        write_file(dir / l.label / (std::to_string(l.log.seed) + ".csv"), step_csv(l.log));
        env_logs.emplace(l.env_label + "/" + std::to_string(l.log.seed), &l.log);
    }
    for (const auto& [key, log] : env_logs) write_file(dir / (key + ".csv"), obstacle_csv(*log));
    write_file(dir / "summary.csv", summary_csv(rs.rows));
    write_file(dir / "aggregate.csv", aggregate_csv(rs.rows));
    for (const auto& [name, text] : rs.tables) write_file(dir / name, text);
    write_manifest(out_dir, rs.experiment, cfg, "complete", rs.scalars);
    return dir / "manifest.txt";
}

}  // namespace ppc
