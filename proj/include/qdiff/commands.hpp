#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdiff/checkpoint.hpp"
#include "qdiff/config.hpp"
#include "qdiff/data.hpp"
#include "qdiff/diffusion.hpp"
#include "qdiff/metrics.hpp"
#include "qdiff/rng.hpp"
#include "qdiff/unet.hpp"

namespace qdiff {

inline constexpr int kCheckpointFormat = 1;
inline constexpr const char *kSelectionRule = "lowest epoch-mean training loss";

/// All images of `split` for the configured dataset and class, in [-1, 1].
inline ImageBatch load_class_images(const RunConfig &cfg, Split split) {
    ImageBatch all;
    if (cfg.dataset == Dataset::mnist) {
        const std::filesystem::path dir(cfg.data_dir);
        const std::string prefix = split == Split::train ? "train" : "t10k";
        all = load_idx(dir / (prefix + "-images-idx3-ubyte"),
                       dir / (prefix + "-labels-idx1-ubyte"));
    } else {
        all = load_npz(cfg.resolved_npz_path(), split);
    }
    ImageBatch cls = filter_class(all, cfg.class_label);
    if (cls.empty()) {
        throw FormatError(std::string(to_string(cfg.dataset)) + " " +
                          std::string(to_string(split)) + " split has no images of class " +
                          std::to_string(cfg.class_label));
    }
    return normalize(cls, Normalization::signed_unit);
}

inline ImageBatch load_training_set(const RunConfig &cfg) {
    ImageBatch train = load_class_images(cfg, Split::train);
    if (cfg.max_train_images) {
        train = take_front(train, static_cast<std::size_t>(*cfg.max_train_images));
    }
    return train;
}

inline void append_jsonl(const std::filesystem::path &path, const nlohmann::json &record) {
    std::ofstream out(path, std::ios::app);
    out << record.dump() << '\n';
    if (!out) {
        throw IoError("cannot append to " + path.string());
    }
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<nlohmann::json> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            records.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception &e) {
            throw FormatError(path.string() + ": line " + std::to_string(lineno) + ": " +
                              e.what());
        }
    }
    return records;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// FNV-1a over the decimal index sequence; equal digests mean equal orders.
inline std::string order_digest(const std::vector<std::size_t> &order) {
    std::string text;
    for (std::size_t i : order) {
        text += std::to_string(i);
        text += ',';
    }
    return hex64(fnv1a(text));
}

inline std::size_t grid_columns(std::size_t n) {
    return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
}

/// EMA-model samples from `model_cfg` with the given parameters.
inline ImageBatch sample_images(const UNetConfig &model_cfg, const ParamSet &params,
                                const NoiseSchedule &sched, std::size_t n,
                                std::uint64_t seed, int workers) {
    Rng rng(seed);
    auto predict = [&](const Tensor &x, std::span<const int> t) {
        return unet_forward(x, t, model_cfg, params, workers);
    };
    return reverse_sample(predict, sched, n, model_cfg.in_channels, rng);
}

// ---------------------------------------------------------------------------
// train

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double wall_time = 0.0;
    std::string batch_order;
};

struct TrainResult {
    std::filesystem::path run_dir;
    std::filesystem::path checkpoint;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_loss = 0.0;
};

/**
 * Train one model.
 *
 * Writes into {output_dir}/{run_id}/:
 *   config.json       resolved config
 *   train_log.jsonl   one {epoch, mean_loss, wall_time, batch_order} per epoch
 *   epoch_NNN.png     EMA sample grid after each epoch
 *   checkpoint.qck    best checkpoint (lowest epoch-mean loss); with 0 epochs,
 *                     the initial weights
 */
inline TrainResult cmd_train(const RunConfig &cfg) {
    cfg.validate();
    const NoiseSchedule sched = build_cosine_schedule(cfg.T, cfg.s);
    const ImageBatch train = load_training_set(cfg);
    const UNetConfig model_cfg = cfg.unet_config(train.channels());
    model_cfg.validate();

    TrainResult result;
    result.run_dir = cfg.run_dir();
    std::filesystem::create_directories(result.run_dir);
    nlohmann::json echo = to_json(cfg);
    echo["best_checkpoint_rule"] = kSelectionRule;
    echo["train_images"] = train.size();
    io::write_text(result.run_dir / "config.json", echo.dump(2) + "\n");
    const auto log_path = result.run_dir / "train_log.jsonl";
    std::filesystem::remove(log_path);
    result.checkpoint = result.run_dir / "checkpoint.qck";

    Rng init_rng(derive_seed(cfg.seed, "init"));
    Rng quantum_rng(derive_seed(cfg.seed, "init.quantum"));
    Rng batch_rng(derive_seed(cfg.seed, "batching"));
    Rng noise_rng(derive_seed(cfg.seed, "noise"));
    const std::uint64_t grid_seed = derive_seed(cfg.seed, "sampling.grid");

    Trainer<UNet> trainer(UNet::create(model_cfg, init_rng, quantum_rng, cfg.workers),
                          AdamOptions{.lr = cfg.lr}, cfg.ema_beta);

    auto save = [&](int epoch, const nlohmann::json &loss) {
        Checkpoint ck;
        ck.manifest = {{"format", kCheckpointFormat},
                       {"config", to_json(cfg)},
                       {"in_channels", model_cfg.in_channels},
                       {"epoch", epoch},
                       {"mean_loss", loss},
                       {"selection", kSelectionRule},
                       {"adam_steps", trainer.adam.steps()}};
        ck.params = trainer.model.params().clone(true);
        ck.ema = trainer.ema.params().clone(false);
        save_checkpoint(ck, result.checkpoint);
    };
    if (cfg.epochs == 0) {
        save(0, nullptr);
        return result;
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), batch_rng.engine());
        double weighted = 0.0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const std::vector<std::size_t> idx(
                order.begin() + static_cast<long>(b),
                order.begin() + static_cast<long>(std::min(b + bs, order.size())));
            const double loss = train_step(trainer, select(train, idx), sched, noise_rng);
            if (!std::isfinite(loss)) {
                throw NumericalError("non-finite training loss at epoch " +
                                     std::to_string(epoch));
            }
            weighted += loss * static_cast<double>(idx.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = weighted / static_cast<double>(order.size());
        rec.batch_order = order_digest(order);

        const auto n_grid = static_cast<std::size_t>(cfg.grid_samples);
        const ImageBatch grid = sample_images(model_cfg, trainer.ema.params(), sched,
                                              n_grid, grid_seed, cfg.workers);
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.png", epoch);
        write_png_grid(grid, grid_columns(n_grid), result.run_dir / name);

        rec.wall_time = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start).count();
        append_jsonl(log_path, {{"epoch", rec.epoch},
                                {"mean_loss", rec.mean_loss},
                                {"wall_time", rec.wall_time},
                                {"batch_order", rec.batch_order}});
        result.epochs.push_back(rec);

        if (result.best_epoch == 0 || rec.mean_loss < result.best_loss) {
            result.best_epoch = epoch;
            result.best_loss = rec.mean_loss;
            save(epoch, rec.mean_loss);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// sample

struct LoadedModel {
    RunConfig config;
    UNetConfig model;
    ParamSet ema;
};

inline LoadedModel load_model(const std::filesystem::path &checkpoint) {
    Checkpoint ck = load_checkpoint(checkpoint);
    if (!ck.manifest.contains("config") ||
        ck.manifest.value("format", 0) != kCheckpointFormat) {
        throw FormatError(checkpoint.string() + ": manifest: missing config or unsupported format");
    }
    LoadedModel m;
    try {
        m.config = config_from_json(ck.manifest["config"]);
    } catch (const UsageError &e) {
        throw FormatError(checkpoint.string() + ": manifest.config: " + e.what());
    }
    const auto channels = ck.manifest.value("in_channels", std::size_t{0});
    if (channels != 1 && channels != 3) {
        throw FormatError(checkpoint.string() + ": manifest.in_channels: expected 1 or 3");
    }
    m.model = m.config.unet_config(channels);
    Rng r1(0), r2(0);
    const ParamSet expected = init_unet_params(m.model, r1, r2);
    if (expected.size() != ck.ema.size()) {
        throw FormatError(checkpoint.string() + ": ema: expected " +
                          std::to_string(expected.size()) + " tensors, found " +
                          std::to_string(ck.ema.size()));
    }
    for (const auto &[name, t] : expected) {
        if (!ck.ema.contains(name)) {
            throw FormatError(checkpoint.string() + ": ema/" + name + ": missing");
        }
        if (ck.ema.at(name).shape() != t.shape()) {
            throw FormatError(checkpoint.string() + ": ema/" + name + ": shape " +
                              to_string(ck.ema.at(name).shape()) + ", expected " +
                              to_string(t.shape()));
        }
    }
    m.ema = std::move(ck.ema);
    return m;
}

struct SampleResult {
    std::filesystem::path png;
    std::filesystem::path dump;
    ImageBatch images;
};

/// n EMA-model samples; writes {out_prefix}.png and {out_prefix}.npy.
inline SampleResult cmd_sample(const std::filesystem::path &checkpoint, std::size_t n,
                               std::uint64_t seed, const std::filesystem::path &out_prefix,
                               int workers = 1) {
    if (n == 0) {
        throw UsageError("sample count must be >= 1");
    }
    const LoadedModel m = load_model(checkpoint);
    const NoiseSchedule sched = build_cosine_schedule(m.config.T, m.config.s);
    SampleResult r;
    r.images = sample_images(m.model, m.ema, sched, n, derive_seed(seed, "sampling"), workers);
    if (out_prefix.has_parent_path()) {
        std::filesystem::create_directories(out_prefix.parent_path());
    }
    r.png = out_prefix.string() + ".png";
    r.dump = out_prefix.string() + ".npy";
    write_png_grid(r.images, grid_columns(n), r.png);
    write_sample_dump(r.images, r.dump);
    return r;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
    std::filesystem::path dump;
    RunConfig data; // dataset, paths, class_label, extractor, feature_dim
    std::uint64_t seed = 0;
    std::string model_variant = "unknown";
    std::filesystem::path report; // metrics.jsonl, appended; empty: none
};

/// set_ssim and fid_like of a sample dump against the class's test split.
inline std::vector<nlohmann::json> evaluate_batch(const ImageBatch &generated,
                                                  const EvaluateOptions &opts) {
    const ImageBatch reference = load_class_images(opts.data, Split::test);
    if (generated.channels() != reference.channels() ||
        generated.image_numel() != reference.image_numel()) {
        throw DimensionError("generated samples " + to_string(generated.data.shape()) +
                             " do not match reference images " +
                             to_string(reference.data.shape()));
    }
    const std::uint64_t metric_seed = derive_seed(opts.seed, "metric");
    const double ssim = metrics::set_ssim(generated, reference, metric_seed);
    const metrics::FeatureExtractor fx(opts.data.extractor,
                                       static_cast<std::size_t>(opts.data.feature_dim),
                                       derive_seed(opts.seed, "extractor"));
    const double fid = metrics::fid_like(generated, reference, fx);

    std::vector<nlohmann::json> records;
    for (const auto &[metric, value] :
         {std::pair<const char *, double>{"set_ssim", ssim}, {"fid_like", fid}}) {
        records.push_back({{"metric", metric},
                           {"dataset", to_string(opts.data.dataset)},
                           {"class", opts.data.class_label},
                           {"model_variant", opts.model_variant},
                           {"value", value},
                           {"seed", opts.seed},
                           {"extractor", metrics::to_string(opts.data.extractor)},
                           {"feature_dim", opts.data.feature_dim},
                           {"n_generated", generated.size()},
                           {"n_reference", reference.size()}});
    }
    if (!opts.report.empty()) {
        if (opts.report.has_parent_path()) {
            std::filesystem::create_directories(opts.report.parent_path());
        }
        for (const auto &r : records) {
            append_jsonl(opts.report, r);
        }
    }
    return records;
}

inline std::vector<nlohmann::json> cmd_evaluate(const EvaluateOptions &opts) {
    return evaluate_batch(read_sample_dump(opts.dump), opts);
}

// ---------------------------------------------------------------------------
// compare

struct CompareRow {
    std::string variant;
    double ssim = 0.0;
    double fid_like = 0.0;
};

struct CompareResult {
    std::filesystem::path table;
    std::vector<CompareRow> rows;
    std::string text;
};

inline std::string format_comparison(const RunConfig &cfg, const std::vector<CompareRow> &rows,
                                     std::size_t train_images) {
    std::string out;
    char line[160];
    out += "| Model     | SSIM      | FID-like     |\n";
    out += "|-----------|-----------|--------------|\n";
    for (const auto &r : rows) {
        std::snprintf(line, sizeof line, "| %-9s | %9.6f | %12.6f |\n", r.variant.c_str(),
                      r.ssim, r.fid_like);
        out += line;
    }
    const auto &c = rows.at(0), &q = rows.at(1);
    out += "\n";
    out += "dataset=" + std::string(to_string(cfg.dataset)) +
           " class=" + std::to_string(cfg.class_label) +
           " train_images=" + std::to_string(train_images) +
           " epochs=" + std::to_string(cfg.epochs) + " T=" + std::to_string(cfg.T) +
           " seed=" + std::to_string(cfg.seed) +
           " ansatz=" + std::string(quantum::to_string(cfg.ansatz)) +
           " eval_samples=" + std::to_string(cfg.eval_samples) + "\n";
    out += "FID-like is the Frechet distance of " +
           std::string(metrics::to_string(cfg.extractor)) + " features (dim " +
           std::to_string(cfg.feature_dim) +
           "), not Inception features; values are not comparable to published FID.\n";
    out += std::string("gap: quantum ") + (q.ssim > c.ssim ? "higher" : q.ssim < c.ssim ? "lower" : "equal") +
           " SSIM, " + (q.fid_like < c.fid_like ? "lower" : q.fid_like > c.fid_like ? "higher" : "equal") +
           " FID-like than classical\n";
    return out;
}

/**
 * Train classical and quantum variants with one seed and data budget, sample
 * both, evaluate both, and write {run_dir}/comparison.md plus
 * comparison.jsonl.
 */
inline CompareResult cmd_compare(const RunConfig &base) {
    base.validate();
    const auto root = base.run_dir();
    std::filesystem::create_directories(root);
    io::write_text(root / "config.json", to_json(base).dump(2) + "\n");

    CompareResult result;
    std::size_t train_images = 0;
    const auto report = root / "metrics.jsonl";
    std::filesystem::remove(report);
    for (BottleneckKind variant : {BottleneckKind::classical, BottleneckKind::quantum}) {
        RunConfig cfg = base;
        cfg.model = variant;
        cfg.output_dir = root.string();
        cfg.run_id = std::string(to_string(variant));
        const TrainResult trained = cmd_train(cfg);
        train_images = load_training_set(cfg).size();
        const SampleResult samples =
            cmd_sample(trained.checkpoint, static_cast<std::size_t>(cfg.eval_samples),
                       cfg.seed, trained.run_dir / "samples", cfg.workers);
        EvaluateOptions eo{samples.dump, cfg, cfg.seed, cfg.run_id, report};
        const auto records = evaluate_batch(samples.images, eo);
        result.rows.push_back({cfg.run_id, records.at(0)["value"].get<double>(),
                               records.at(1)["value"].get<double>()});
    }
    result.text = format_comparison(base, result.rows, train_images);
    result.table = root / "comparison.md";
    io::write_text(result.table, result.text);
    const auto jsonl = root / "comparison.jsonl";
    std::filesystem::remove(jsonl);
    for (const auto &r : result.rows) {
        append_jsonl(jsonl, {{"variant", r.variant}, {"ssim", r.ssim}, {"fid_like", r.fid_like}});
    }
    return result;
}

} // namespace qdiff
