#include <CLI11.hpp>
#include <cstdio>

#include "gmmt/runners.hpp"

using namespace gmmt;

int main(int argc, char** argv) {
    CLI::App app{"gmmt - generative multi-modal fusion engine on a synthetic tracking world"};
    app.require_subcommand(1);
    app.fallthrough(true);

    std::string config_path, out_dir, mode, checkpoint, axis;
    std::uint64_t seed = 0;
    int steps = 0, blocks = 0, count = 1;
    double lambda = -1;
    bool force = false;

    auto* opt_config = app.add_option("--config", config_path, "run configuration file (INI)");
    auto* opt_seed = app.add_option("--seed", seed, "master seed override");
    auto* opt_mode = app.add_option("--mode", mode, "generative mode: raw|cgan|dm");
    auto* opt_steps = app.add_option("--steps", steps, "reverse diffusion steps at inference");
    auto* opt_lambda = app.add_option("--lambda", lambda, "generative loss weight");
    auto* opt_blocks = app.add_option("--blocks", blocks, "denoiser block pairs");
    auto* opt_out = app.add_option("--out", out_dir, "output directory override");

    CLI::App* cmd_train = app.add_subcommand("train", "train a model, write checkpoint and loss log");
    CLI::App* cmd_infer = app.add_subcommand("infer", "generate fused feature dumps from a checkpoint");
    cmd_infer->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    cmd_infer->add_option("--count", count, "number of scenarios to fuse");
    CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint, write report.csv");
    cmd_eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    CLI::App* cmd_ablate =
        app.add_subcommand("ablate", "train and compare BASE/RAW/CGAN/DM, write ablate.csv");
    CLI::App* cmd_sweep = app.add_subcommand("sweep", "sweep steps|lambda|blocks, write CSV");
    cmd_sweep->add_option("--axis", axis, "sweep axis: steps|lambda|blocks")->required();
    cmd_sweep->add_option("--checkpoint", checkpoint, "reuse a trained checkpoint (steps axis)");
    CLI::App* cmd_goldens = app.add_subcommand("goldens", "regenerate golden scenario files");
    cmd_goldens->add_flag("--force", force, "overwrite existing golden files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = opt_config->count() ? RunConfig::load(config_path) : RunConfig{};
        if (opt_seed->count()) cfg.seed = seed;
        if (opt_mode->count()) cfg.mode = mode;
        if (opt_steps->count()) cfg.steps = steps;
        if (opt_lambda->count()) cfg.lambda = lambda;
        if (opt_blocks->count()) cfg.blocks = blocks;
        if (opt_out->count()) cfg.out_dir = out_dir;

        if (cmd_train->parsed()) {
            const std::string path = run_train(cfg);
            std::printf("checkpoint: %s\n", path.c_str());
        } else if (cmd_infer->parsed()) {
            run_infer(cfg, checkpoint, count);
            std::printf("wrote %d fused dump(s) to %s\n", count, cfg.out_dir.c_str());
        } else if (cmd_eval->parsed()) {
            EvalSummary s = run_eval(cfg, checkpoint);
            std::printf("scenarios=%d pr=%.1f npr=%.1f sr_auc=%.1f sr_ratio=%.1f re=%.1f f=%.1f\n",
                        s.scenarios, s.report.pr * 100, s.report.npr * 100, s.report.sr_auc * 100,
                        s.report.sr_ratio * 100, s.report.re * 100, s.report.f_score * 100);
        } else if (cmd_ablate->parsed()) {
            run_ablate(cfg);
            std::printf("ablation table written to %s/ablate.csv\n", cfg.out_dir.c_str());
        } else if (cmd_sweep->parsed()) {
            run_sweep(cfg, axis, checkpoint);
            std::printf("sweep written to %s/sweep_%s.csv\n", cfg.out_dir.c_str(), axis.c_str());
        } else if (cmd_goldens->parsed()) {
            run_goldens(cfg, force);
            std::printf("golden scenarios written to %s\n", cfg.out_dir.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    }
    return 0;
}
