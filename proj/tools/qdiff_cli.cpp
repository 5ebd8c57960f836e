// qdiff command-line frontend: train, sample, evaluate, compare.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "qdiff/qdiff.hpp"

namespace {

using nlohmann::json;

/// Run-config flags. Each one writes into `overlay`, which is applied on top
/// of the config file, so flags win.
struct ConfigFlags {
    std::string config_file;
    json overlay = json::object();

    template <class T>
    void add(CLI::App &app, const std::string &flag, const std::string &key,
             const std::string &help) {
        app.add_option_function<T>(
            flag, [this, key](const T &v) { overlay[key] = v; }, help);
    }

    void register_on(CLI::App &app) {
        app.add_option("--config", config_file, "JSON run config (flags override it)")
            ->check(CLI::ExistingFile);
        add<std::string>(app, "--dataset", "dataset", "mnist or medmnist");
        add<std::string>(app, "--data-dir", "data_dir",
                         "directory with IDX files (default $QDIFF_DATA_DIR or ./data)");
        add<std::string>(app, "--npz", "npz_path", "MedMNIST .npz archive");
        add<int>(app, "--class", "class_label", "class label to train on");
        add<std::string>(app, "--model", "model", "classical or quantum");
        add<std::string>(app, "--ansatz", "ansatz", "paper_literal or ry_variational");
        add<int>(app, "--qubits", "n_qubits", "circuit width");
        add<int>(app, "--layers", "n_layers", "variational layers");
        add<bool>(app, "--skip-connections", "skip_connections", "U-Net skip connections");
        add<int>(app, "--epochs", "epochs", "training epochs");
        add<int>(app, "--batch-size", "batch_size", "minibatch size");
        add<double>(app, "--lr", "lr", "Adam learning rate");
        add<int>(app, "--steps", "T", "diffusion steps T");
        add<double>(app, "--offset", "s", "cosine schedule offset s");
        add<double>(app, "--ema-beta", "ema_beta", "EMA decay");
        add<std::uint64_t>(app, "--seed", "seed", "master seed");
        add<int>(app, "--max-train-images", "max_train_images", "cap on training images");
        add<std::string>(app, "--output-dir", "output_dir", "root of run directories");
        add<std::string>(app, "--run-id", "run_id", "run directory name");
        add<int>(app, "--workers", "workers",
                 "threads for parameter shift (bit-reproducible only at 1)");
        add<int>(app, "--grid-samples", "grid_samples", "images per epoch grid");
        add<int>(app, "--eval-samples", "eval_samples", "samples drawn for evaluation");
        add<std::string>(app, "--extractor", "extractor", "pixel_pca or fixed_random_conv");
        add<int>(app, "--feature-dim", "feature_dim", "feature dimension for fid_like");
    }

    qdiff::RunConfig resolve() const {
        qdiff::RunConfig cfg;
        if (!config_file.empty()) {
            cfg = qdiff::load_config_file(config_file, cfg);
        }
        cfg = qdiff::config_from_json(overlay, cfg);
        cfg.validate();
        return cfg;
    }
};

int exit_code_for(const std::exception &e) {
    using qdiff::ExitCode;
    if (dynamic_cast<const qdiff::UsageError *>(&e)) return int(ExitCode::usage);
    if (dynamic_cast<const qdiff::NumericalError *>(&e)) return int(ExitCode::numerical);
    return int(ExitCode::data);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Hybrid quantum-classical diffusion model"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    auto *train = app.add_subcommand("train", "train one model");
    train_flags.register_on(*train);

    ConfigFlags compare_flags;
    auto *compare = app.add_subcommand("compare", "train and evaluate both variants");
    compare_flags.register_on(*compare);

    std::string checkpoint, out_prefix = "samples";
    std::size_t n_samples = 16;
    std::uint64_t sample_seed = 0;
    int sample_workers = 1;
    auto *sample = app.add_subcommand("sample", "draw samples from a checkpoint");
    sample->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    sample->add_option("-n,--count", n_samples, "number of samples");
    sample->add_option("--seed", sample_seed, "sampling seed");
    sample->add_option("-o,--out", out_prefix, "output prefix for .png and .npy");
    sample->add_option("--workers", sample_workers, "threads (bit-reproducible only at 1)");

    ConfigFlags eval_flags;
    std::string dump, report, variant = "unknown";
    auto *evaluate = app.add_subcommand("evaluate", "score a sample dump against test images");
    evaluate->add_option("dump", dump, "sample dump (.npy)")->required();
    evaluate->add_option("--report", report, "append records to this .jsonl file");
    evaluate->add_option("--variant", variant, "model variant label for the records");
    eval_flags.register_on(*evaluate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : int(qdiff::ExitCode::usage);
    }

    try {
        if (*train) {
            const auto r = qdiff::cmd_train(train_flags.resolve());
            for (const auto &e : r.epochs) {
                std::printf("epoch %d  loss %.6f  %.1fs\n", e.epoch, e.mean_loss, e.wall_time);
            }
            std::printf("checkpoint: %s\n", r.checkpoint.c_str());
        } else if (*sample) {
            const auto r = qdiff::cmd_sample(checkpoint, n_samples, sample_seed, out_prefix,
                                             sample_workers);
            std::printf("%s\n%s\n", r.png.c_str(), r.dump.c_str());
        } else if (*evaluate) {
            qdiff::EvaluateOptions opts;
            opts.dump = dump;
            opts.data = eval_flags.resolve();
            opts.seed = opts.data.seed;
            opts.model_variant = variant;
            opts.report = report;
            for (const auto &rec : qdiff::cmd_evaluate(opts)) {
                std::cout << rec.dump() << '\n';
            }
        } else if (*compare) {
            const auto r = qdiff::cmd_compare(compare_flags.resolve());
            std::cout << r.text;
        }
    } catch (const qdiff::Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return int(qdiff::ExitCode::data);
    }
    return 0;
}
