#include <string>
#include <vector>

#include <CLI11.hpp>

#include "afc/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"afc_lab: class-incremental learning experiments with "
                 "importance-weighted feature distillation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string mode;
    bool have_seed = false;

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        auto* c = cmd->add_option("--config", config_path, "experiment config (JSON)");
        if (need_config) c->required();
        cmd->add_option("--out", out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", seed, "training seed (overrides config)")
            ->each([&](const std::string&) { have_seed = true; });
        cmd->add_option("--mode", mode, "afc | uniform | finetune (overrides config)");
    };

    auto* run = app.add_subcommand("run", "run one experiment");
    add_common(run, true);

    auto* sweep = app.add_subcommand("sweep", "run one experiment per value of a config key");
    add_common(sweep, true);
    std::string sweep_set;
    int jobs = 1;
    sweep->add_option("--set", sweep_set, "key=v1,v2,... (e.g. lambda_disc=2,3,4,5,6)")->required();
    sweep->add_option("--jobs", jobs, "parallel sub-runs");

    auto* verify = app.add_subcommand("verify", "run every numerical verification suite");
    std::string verify_out = ".";
    verify->add_option("--out", verify_out, "directory for verify_report.json");
    bool inject_fault = false;
    verify->add_flag("--inject-backward-fault", inject_fault,
                     "flip one backward rule to prove the harness detects it");

    auto* inspect = app.add_subcommand("inspect-importance", "dump sorted channel importance");
    std::string ckpt;
    int layer = -1;
    inspect->add_option("--checkpoint", ckpt, "stage checkpoint file")->required();
    inspect->add_option("--layer", layer, "restrict to one tapped layer");

    CLI11_PARSE(app, argc, argv);

    afc::RunOverrides ov;
    if (!out_dir.empty()) ov.out = out_dir;
    if (have_seed) ov.seed = seed;
    if (!mode.empty()) ov.mode = mode;

    if (run->parsed()) return afc::cmd_run(config_path, ov);
    if (sweep->parsed()) {
        const auto eq = sweep_set.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 >= sweep_set.size()) {
            std::cerr << "config error: --set expects key=v1,v2,...\n";
            return 1;
        }
        const std::string key = sweep_set.substr(0, eq);
        std::vector<std::string> values;
        std::string rest = sweep_set.substr(eq + 1);
        std::size_t at = 0;
        while (at <= rest.size()) {
            const std::size_t comma = rest.find(',', at);
            values.push_back(rest.substr(at, comma == std::string::npos ? comma : comma - at));
            if (comma == std::string::npos) break;
            at = comma + 1;
        }
        return afc::cmd_sweep(config_path, key, values, ov, jobs);
    }
    if (verify->parsed()) return afc::cmd_verify(verify_out, inject_fault);
    if (inspect->parsed()) return afc::cmd_inspect_importance(ckpt, layer);
    return 1;
}
