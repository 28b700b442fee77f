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

#include "ppc/baselines.hpp"
#include "ppc/controller.hpp"
#include "ppc/env_sim.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ppc {

// ---------------------------------------------------------------------------
// Flat key=value run configuration.

enum class KeyKind { Int, Double, Bool, IntList, DoubleList, StringList, Choice, String };

struct ConfigKey {
    std::string key;
    std::string default_value;
    KeyKind kind = KeyKind::String;
    double min_value = -std::numeric_limits<double>::infinity();
    std::string choices;  // '|'-separated, Choice keys only
    std::string help;
};

const std::vector<ConfigKey>& config_keys();

class RunConfig {
public:
    RunConfig();  // documented defaults

    // Throws ConfigError on unknown keys.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    double get_double(const std::string& key) const;
    long get_long(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<long> get_longs(const std::string& key) const;
    std::vector<std::string> get_strings(const std::string& key) const;

    // Range and type checks; throws ConfigError naming the key.
    void validate() const;

    // Canonical "key=value\n" lines in registry order.
    std::string to_text() const;
    std::uint64_t hash() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Grammar: one `key = value` per line; '#' starts a comment; blank lines
// ignored. Errors carry the line number.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

ControllerSettings controller_settings(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Episodes

struct ModeSchedule {
    int period = 40;
    ModeLayouts layouts;
    std::vector<int> sequence;  // mode per block
};

struct EpisodeSpec {
    std::uint64_t seed = 0;
    long horizon = 300;
    EpisodeSetup setup;
    long reshuffle_step = -1;
    ObstacleDistribution reshuffle_dist;
    std::optional<ModeSchedule> modes;
};

enum class EventKind : int { None = 0, Reshuffle = 1, ModeSwitch = 2 };

struct EpisodeLog {
    std::uint64_t seed = 0;
    std::string controller;
    std::string config_snapshot;
    std::vector<StepRecord> steps;
    std::vector<long> events;             // steps carrying a reshuffle or mode switch
    std::vector<EventKind> event_kinds;
    double path_length = 0.0;             // sum_t sum_k ||o_k(t+1) - o_k(t)||
    std::vector<std::vector<Vec2>> obstacle_tracks;  // [t][k] positions at t
    std::vector<std::vector<double>> obstacle_radii; // [t][k]
};

// Deterministic mode sequence: each block draws a mode different from the last.
ModeSchedule make_mode_schedule(std::uint64_t seed, long horizon, int period, std::size_t per_mode,
                                double speed_multiplier = 1.0);

// Called with the environment state before each controller call.
using StepHook = std::function<void(const EnvState&)>;

EpisodeLog run_episode(const EpisodeSpec& spec, Controller& controller,
                       const std::string& config_snapshot = {}, const StepHook& hook = {});

// ---------------------------------------------------------------------------
// Metrics

inline constexpr long kNeverRecovered = -1;

double safety_rate(const EpisodeLog& log);
double normalized_cost(const EpisodeLog& log, const EpisodeLog& oracle_log);
long adaptation_steps(const EpisodeLog& log, long change_step, double threshold = 0.95,
                      long window = 50);
double mean_step_ns(const EpisodeLog& log);
long violations_total(const EpisodeLog& log);
// Safety on the first `post_window` steps after each mode switch and on the rest.
std::pair<double, double> post_switch_and_steady_safety(const EpisodeLog& log, long post_window);
// Cost ratio to the oracle restricted to this controller's feasible steps.
double safe_step_cost_ratio(const EpisodeLog& log, const EpisodeLog& oracle_log);

struct DisplacementCheck {
    long checked = 0;
    long violations = 0;
    double worst_excess = 0.0;  // max of ||u - u_bar|| - G_c / (beta kappa)
};

// Filter-inactive, non-blocked steps with a finite bound.
DisplacementCheck displacement_check(const EpisodeLog& log, double tol = 1e-3);

struct MetricsSummary {
    double safety_rate = 0.0;
    double normalized_cost = 0.0;
    long adaptation_steps = kNeverRecovered;
    double mean_step_ns = 0.0;
    long violations_total = 0;
    double post_switch_safety = 0.0;
    double steady_safety = 0.0;
    double safe_step_cost_ratio = 0.0;
};

struct MetricsOptions {
    long adaptation_window = 50;
    double adaptation_threshold = 0.95;
    long post_switch_window = 10;
};

MetricsSummary summarize(const EpisodeLog& log, const EpisodeLog* oracle_log,
                         const MetricsOptions& opt = {});

// ---------------------------------------------------------------------------
// Result sets

struct SummaryRow {
    std::string experiment;
    std::string variant;        // e.g. "beta_ratio", "N", "K_o", "speed", or ""
    std::string variant_value;
    std::string controller;
    std::uint64_t seed = 0;
    MetricsSummary metrics;
    double score_error = std::numeric_limits<double>::quiet_NaN();
    double path_length = std::numeric_limits<double>::quiet_NaN();
    double beta_star_median = std::numeric_limits<double>::quiet_NaN();
};

struct LabeledLog {
    std::string label;  // directory name: controller plus variant suffix
    std::string env_label;  // obstacle-track directory name
    EpisodeLog log;
};

struct ResultSet {
    std::string experiment;
    std::vector<LabeledLog> logs;
    std::vector<SummaryRow> rows;
    // Extra named tables (file name -> CSV text), e.g. the exp2 sweep.
    std::map<std::string, std::string> tables;
    // Scalars reported on the summary line and in the manifest.
    std::map<std::string, double> scalars;
};

using Progress = std::function<void(const std::string&)>;

ResultSet run_experiment_1(const RunConfig& cfg, const Progress& progress = {});
ResultSet run_experiment_2(const RunConfig& cfg, const Progress& progress = {});
ResultSet run_experiment_3(const RunConfig& cfg, const Progress& progress = {});
ResultSet run_experiment_4(const RunConfig& cfg, const Progress& progress = {});
ResultSet run_experiment_5(const RunConfig& cfg, const Progress& progress = {});
ResultSet run_experiment_6(const RunConfig& cfg, const Progress& progress = {});
ResultSet run_experiment(int id, const RunConfig& cfg, const Progress& progress = {});

// Pearson correlation; NaN for fewer than two points or zero variance.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr const char* kSchemaVersion = "1";

const std::vector<std::string>& step_csv_columns();
const std::vector<std::string>& summary_csv_columns();
const std::vector<std::string>& obstacle_csv_columns();
const std::vector<std::string>& aggregate_csv_columns();

std::string step_csv(const EpisodeLog& log);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::string obstacle_csv(const EpisodeLog& log);
// Mean and std (ddof 1) per (variant, value, controller) over seeds.
std::string aggregate_csv(const std::vector<SummaryRow>& rows);

// Inverse of step_csv (fields used by the metrics only are guaranteed).
EpisodeLog parse_step_csv(const std::string& text, std::uint64_t seed = 0,
                          const std::string& controller = {});
std::vector<SummaryRow> parse_summary_csv(const std::string& text);

std::string manifest_text(const std::string& experiment, const RunConfig& cfg,
                          const std::string& status, const std::map<std::string, double>& scalars = {});

// Written before any episode runs; write_results overwrites it on completion.
void write_manifest(const std::filesystem::path& out_dir, const std::string& experiment,
                    const RunConfig& cfg, const std::string& status,
                    const std::map<std::string, double>& scalars = {});

// exp<k>/<label>/<seed>.csv, exp<k>/<env_label>/<seed>.csv, exp<k>/summary.csv,
// extra tables, and exp<k>/manifest.txt.
std::filesystem::path write_results(const ResultSet& rs, const RunConfig& cfg,
                                    const std::filesystem::path& out_dir);

}  // namespace ppc
