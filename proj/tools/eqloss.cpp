#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "eqloss/experiments.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"eqloss: uncertainty sampling experiments"};
    app.require_subcommand(1, 1);

    struct Opts {
        std::string config, out;
        std::optional<std::uint64_t> seed;
        std::optional<std::size_t> trials;
    };
    std::vector<std::pair<CLI::App*, Opts>> subs;
    subs.reserve(eqloss::command_names().size());
    for (const auto& name : eqloss::command_names()) {
        auto& [sub, o] = subs.emplace_back(app.add_subcommand(name), Opts{});
        sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory (default out/<command>)");
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--trials", o.trials, "number of trials")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    for (auto& [sub, o] : subs) {
        if (!sub->parsed()) continue;
        const std::string cmd = sub->get_name();
        const fs::path out = o.out.empty() ? fs::path("out") / cmd : fs::path(o.out);
        eqloss::json overrides = eqloss::json::object();
        if (o.seed) overrides["seed"] = *o.seed;
        if (o.trials) overrides["trials"] = *o.trials;
        try {
            const auto cfg = eqloss::resolve_config(
                cmd, o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config), overrides);
            const auto res = eqloss::run_command(cmd, cfg, out, eqloss::thread_budget());
            if (res.exit_code != 0) {
                std::cerr << "eqloss " << cmd << ": FAILED, see " << (out / "failures.json").string() << '\n';
                for (const auto& f : res.failures["failures"])
                    std::cerr << "  " << f["check"].get<std::string>() << ": " << f["detail"].get<std::string>() << '\n';
            } else {
                std::cout << "eqloss " << cmd << ": ok, wrote " << out.string() << '\n';
            }
            return res.exit_code;
        } catch (const eqloss::ConfigError& e) {
            std::cerr << "eqloss " << cmd << ": " << e.what() << '\n';
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "eqloss " << cmd << ": " << e.what() << '\n';
            return 1;
        }
    }
    return 2;
}
