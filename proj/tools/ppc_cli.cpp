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

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;

struct Options {
    std::string experiment;
    std::string config_file;
    std::vector<std::string> sets;
    std::string out_dir;
    std::optional<long> horizon;
    std::optional<std::string> seeds;
    std::optional<long> n;
    std::optional<std::string> controllers;
    std::optional<long> jobs;
    bool full_scale = false;
};

std::string defaults_table() {
    std::ostringstream os;
    os << "Configuration keys (key default: help):\n";
    for (const auto& k : ppc::config_keys()) {
        os << "  " << k.key << " = " << (k.default_value.empty() ? "\"\"" : k.default_value);
        if (!k.choices.empty()) os << " [" << k.choices << "]";
        os << ": " << k.help << '\n';
    }
    return os.str();
}

// Precedence: defaults < --full-scale < --config file < --set < dedicated flags.
ppc::RunConfig load_config(const Options& o) {
    ppc::RunConfig cfg;
    if (o.full_scale) {
        cfg.set("T", "1000");
        cfg.set("seeds", "0,1,2,3,4");
    }
    if (!o.config_file.empty()) ppc::apply_config_file(cfg, o.config_file);
    for (const auto& s : o.sets) ppc::apply_config_text(cfg, s, "--set");
    if (o.horizon) cfg.set("T", std::to_string(*o.horizon));
    if (o.seeds) cfg.set("seeds", *o.seeds);
    if (o.n) cfg.set("N", std::to_string(*o.n));
    if (o.controllers) cfg.set("controllers", *o.controllers);
    if (o.jobs) cfg.set("jobs", std::to_string(*o.jobs));
    cfg.validate();
    return cfg;
}

std::filesystem::path out_dir_of(const Options& o) {
    if (const char* env = std::getenv("PPC_OUT_DIR"); env != nullptr && *env != '\0') return env;
    return o.out_dir.empty() ? std::filesystem::path("results") : std::filesystem::path(o.out_dir);
}

std::string summary_line(const ppc::ResultSet& rs, double seconds) {
    std::ostringstream os;
    os.precision(4);
    os << rs.experiment << ": episodes=" << rs.logs.size() << " seconds=" << seconds;
    for (const auto& [k, v] : rs.scalars) os << ' ' << k << '=' << v;
    return os.str();
}

int run_checks(const ppc::RunConfig& cfg, const std::filesystem::path& out) {
    const auto seeds = cfg.get_longs("seeds");
    const std::uint64_t seed = seeds.empty() ? 0 : static_cast<std::uint64_t>(seeds.front());
    ppc::write_manifest(out, "checks", cfg, "running");
    const auto reports = ppc::run_all_checks(seed);
    std::ostringstream text;
    bool ok = true;
    long failed = 0;
    for (const auto& r : reports) {
        text << ppc::format_report(r) << '\n';
        if (!r.pass) {
            ok = false;
            ++failed;
        }
    }
    std::cout << text.str();
    std::filesystem::create_directories(out / "checks");
    std::ofstream(out / "checks" / "reports.txt") << text.str();
    ppc::write_manifest(out, "checks", cfg, ok ? "complete" : "failed",
                        {{"checks", static_cast<double>(reports.size())},
                         {"failed", static_cast<double>(failed)}});
    std::cout << "checks: total=" << reports.size() << " failed=" << failed << '\n';
    return ok ? kExitOk : kExitCheckFailed;
}

int run_command(const Options& o) {
    const ppc::RunConfig cfg = load_config(o);
    const auto out = out_dir_of(o);
    if (o.experiment == "checks") return run_checks(cfg, out);
    std::vector<int> ids;
    if (o.experiment == "all") {
        ids = {1, 2, 3, 4, 5, 6};
    } else if (o.experiment.size() == 4 && o.experiment.rfind("exp", 0) == 0 && o.experiment[3] >= '1' &&
               o.experiment[3] <= '6') {
        ids = {o.experiment[3] - '0'};
    } else {
        throw ppc::ConfigError("unknown experiment '" + o.experiment + "'; expected exp1..exp6, all, or checks");
    }
    const ppc::Progress progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
    for (int id : ids) {
        const std::string name = "exp" + std::to_string(id);
        ppc::write_manifest(out, name, cfg, "running");
        const auto t0 = std::chrono::steady_clock::now();
        const ppc::ResultSet rs = ppc::run_experiment(id, cfg, progress);
        ppc::write_results(rs, cfg, out);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << summary_line(rs, secs) << std::endl;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penalized predictive control: experiments and theory checks"};
    app.footer(defaults_table());
    app.require_subcommand(1);
    Options o;

    const auto add_common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config_file, "key=value configuration file");
        sub->add_option("--set", o.sets, "override one key (key=value); repeatable");
        sub->add_option("--T", o.horizon, "episode length");
        sub->add_option("--seeds", o.seeds, "comma-separated seeds");
        sub->add_option("--N", o.n, "feasibility samples per step");
        sub->add_option("--controllers", o.controllers, "comma-separated controller subset");
        sub->add_option("--jobs", o.jobs, "worker threads (0 = all cores)");
        sub->add_flag("--full-scale", o.full_scale, "T=1000 with five seeds");
    };

    CLI::App* run = app.add_subcommand("run", "run an experiment (exp1..exp6, all) or the theory checks");
    run->add_option("experiment,--experiment", o.experiment, "exp1..exp6, all, or checks");
    run->add_option("--out", o.out_dir, "output directory (PPC_OUT_DIR overrides)");
    add_common(run);

    CLI::App* show = app.add_subcommand("show-config", "print the effective configuration");
    add_common(show);
    CLI::App* validate = app.add_subcommand("validate-config", "check a configuration and exit");
    add_common(validate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (show->parsed()) {
            std::cout << load_config(o).to_text();
            return kExitOk;
        }
        if (validate->parsed()) {
            const auto cfg = load_config(o);
            std::cout << "ok config_hash=" << std::hex << cfg.hash() << std::dec << '\n';
            return kExitOk;
        }
        if (o.experiment.empty()) throw ppc::ConfigError("run needs an experiment: exp1..exp6, all, or checks");
        return run_command(o);
    } catch (const ppc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
}
