#include <gvidgp/cli.hpp>

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> iterations;

    [[nodiscard]] gvidgp::Overrides overrides() const { return {seed, output_dir, iterations}; }
};

CLI::App* add_config_command(CLI::App& app, const std::string& name, const std::string& help, CommonArgs& args) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("config", args.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "Override train.seed");
    cmd->add_option("--output-dir", args.output_dir,
                    std::string("Override output_dir (default: config, then $") + gvidgp::kOutputDirEnv + ", then " +
                        gvidgp::kDefaultOutputDir + ")");
    cmd->add_option("--iterations", args.iterations, "Override train.iterations");
    return cmd;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized variational inference for sparse and deep Gaussian processes"};
    app.require_subcommand(1);

    CommonArgs train_args, bench_args, grad_args;
    auto* train = add_config_command(app, "train", "Train one model and write checkpoint, trace and metrics", train_args);
    auto* bench = add_config_command(app, "benchmark", "Compare methods over seeded train/test splits", bench_args);
    auto* grad = add_config_command(app, "gradcheck", "Audit gradients against central finite differences", grad_args);
    bool corrupt = false;
    grad->add_flag("--corrupt-gradient", corrupt, "Testing hook: perturb one gradient entry before the comparison");

    std::string checkpoint, input, output;
    bool has_header = false;
    std::size_t samples = 100;
    std::uint64_t seed = 0;
    auto* pred = app.add_subcommand("predict", "Predictive mean and variance for new inputs");
    pred->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
    pred->add_option("--input", input, "CSV of raw feature columns")->required()->check(CLI::ExistingFile);
    pred->add_flag("--header", has_header, "Input CSV has a header row");
    pred->add_option("--output", output, "Output CSV")->required();
    pred->add_option("--samples", samples, "Number of sample paths")->capture_default_str();
    pred->add_option("--seed", seed, "Sample-path seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : gvidgp::kExitConfig;
    }

    if (*train) return gvidgp::cmd_train(train_args.config, train_args.overrides());
    if (*bench) return gvidgp::cmd_benchmark(bench_args.config, bench_args.overrides());
    if (*grad) {
        gvidgp::GradientHook hook;
        if (corrupt) hook = [](Eigen::VectorXd& g) { g(0) = 1.5 * g(0) + 0.1; };
        return gvidgp::cmd_gradcheck(grad_args.config, grad_args.overrides(), std::cout, std::cerr, hook);
    }
    return gvidgp::cmd_predict(checkpoint, input, has_header, output, samples, seed);
}
