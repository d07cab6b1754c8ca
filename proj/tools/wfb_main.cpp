#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "wfb/cli.hpp"

int main(int argc, char** argv) {
    using namespace wfb::cli;
    CLI::App app{"Willmore flow with free boundary: geometry checks, flows, exponent fits and operator spectra"};
    app.require_subcommand(1);
    app.set_version_flag("--version", artifact_version());

    RunOptions opt;
    std::optional<std::uint64_t> seed;
    std::optional<Command> chosen;
    const std::pair<const char*, std::vector<const char*>> groups[] = {
        {"geom", {"check"}}, {"flow", {"run", "stability"}}, {"ls", {"fit", "abstract"}}, {"linop", {"spectrum"}}};
    for (const auto& [group, actions] : groups) {
        CLI::App* g = app.add_subcommand(group, std::string(group) + " commands");
        g->require_subcommand(1);
        for (const char* action : actions) {
            const Command cmd = *parse_command(group, action);
            CLI::App* a = g->add_subcommand(action, command_name(cmd));
            a->add_option("--config", opt.config_path, "scenario config file")->required();
            a->add_option("--out", opt.out_dir, std::string("output directory; default $") + kOutRootEnv + "/<command>-<hash>");
            a->add_option("--seed", seed, "overrides every seed in the config");
            a->add_option("--threads", opt.threads, "worker threads for sampling and ladders")->check(CLI::PositiveNumber);
            a->callback([&chosen, cmd] { chosen = cmd; });
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }
    opt.seed = seed;

    const RunReport rep = run_file(*chosen, opt);
    std::cout << rep.command << ": " << rep.status << " -> " << rep.out_dir << "\n";
    for (const auto& i : rep.issues) std::cerr << i.str() << "\n";
    if (rep.issues.empty() && !rep.error_message.empty()) std::cerr << rep.error_message << "\n";
    return rep.exit_code;
}
