#include <CLI11.hpp>
#include <iostream>

#include "svp/commands.hpp"

using namespace svp;

int main(int argc, char** argv) {
    CLI::App app{"stochastic future prediction on synthetic worlds"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, checkpoint_path, input_path;
    int64_t seed_override = -1, n_samples_override = -1, horizon_override = -1;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("--config", config_path, "run configuration file")
                ->required();
        sub->add_option("--seed", seed_override, "override the config seed");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, true);

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    add_common(train, true);
    train->add_option("--data", data_dir, "dataset directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, true);
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval->add_option("--n-samples", n_samples_override, "rollouts per sequence");
    eval->add_option("--horizon", horizon_override, "prediction horizon");

    auto* sample = app.add_subcommand("sample", "roll out and dump predictions");
    add_common(sample, true);
    sample->add_option("--data", data_dir, "dataset directory")->required();
    sample->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    sample->add_option("--n-samples", n_samples_override, "number of rollouts");
    sample->add_option("--horizon", horizon_override, "prediction horizon");

    auto* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference checks for every differentiable op");

    auto* plot = app.add_subcommand("plot", "render CSVs and dumps to PGM");
    plot->add_option("input", input_path, "loss CSV, dataset dir, or dump file")
        ->required();
    plot->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (plot->parsed()) return cmd_plot(input_path, out_dir);

        RunConfig cfg = parse_config_file(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
        if (n_samples_override > 0) cfg.n_samples = n_samples_override;

        if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
        if (train->parsed()) return cmd_train(cfg, data_dir, out_dir);
        if (eval->parsed())
            return cmd_eval(cfg, checkpoint_path, data_dir, out_dir, horizon_override);
        if (sample->parsed())
            return cmd_sample(cfg, checkpoint_path, data_dir, out_dir,
                              horizon_override);
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
