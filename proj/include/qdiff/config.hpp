#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "qdiff/error.hpp"
#include "qdiff/metrics.hpp"
#include "qdiff/quantum.hpp"
#include "qdiff/unet.hpp"

namespace qdiff {

enum class Dataset { mnist, medmnist };

inline std::string_view to_string(Dataset d) {
    return d == Dataset::mnist ? "mnist" : "medmnist";
}

inline Dataset parse_dataset(std::string_view s) {
    if (s == "mnist") {
        return Dataset::mnist;
    }
    if (s == "medmnist") {
        return Dataset::medmnist;
    }
    throw UsageError("unknown dataset '" + std::string(s) + "' (expected mnist or medmnist)");
}

/// Default data directory: $QDIFF_DATA_DIR, else ./data.
inline std::string default_data_dir() {
    if (const char *env = std::getenv("QDIFF_DATA_DIR"); env && *env) {
        return env;
    }
    return "data";
}

/**
 * Everything a run depends on. A run is reproducible from its echoed config
 * when workers == 1.
 *
 * MNIST reads {data_dir}/{train,t10k}-{images-idx3,labels-idx1}-ubyte;
 * MedMNIST reads the NPZ archive at npz_path (default {data_dir}/pathmnist.npz).
 */
struct RunConfig {
    Dataset dataset = Dataset::mnist;
    std::string data_dir = default_data_dir();
    std::string npz_path; // empty: {data_dir}/pathmnist.npz
    int class_label = 0;

    BottleneckKind model = BottleneckKind::quantum;
    quantum::Ansatz ansatz = quantum::Ansatz::ry_variational;
    int n_qubits = 16;
    int n_layers = 3;
    bool skip_connections = false;

    int epochs = 30;
    int batch_size = 64;
    double lr = 3e-4;
    int T = 1000;
    double s = 0.008;
    double ema_beta = 0.999;
    std::uint64_t seed = 0;
    std::optional<int> max_train_images;

    std::string output_dir = "runs";
    std::string run_id; // empty: "{model}-seed{seed}"
    int workers = 1;
    int grid_samples = 16;
    int eval_samples = 64;
    metrics::ExtractorKind extractor = metrics::ExtractorKind::pixel_pca;
    int feature_dim = 64;

    std::string resolved_run_id() const {
        return run_id.empty() ? std::string(to_string(model)) + "-seed" + std::to_string(seed)
                              : run_id;
    }

    std::filesystem::path run_dir() const {
        return std::filesystem::path(output_dir) / resolved_run_id();
    }

    std::filesystem::path resolved_npz_path() const {
        return npz_path.empty() ? std::filesystem::path(data_dir) / "pathmnist.npz"
                                : std::filesystem::path(npz_path);
    }

    /// Model for images with `channels` planes (MNIST is 1; MedMNIST is 1 or 3).
    UNetConfig unet_config(std::size_t channels) const {
        UNetConfig cfg;
        cfg.in_channels = channels;
        cfg.bottleneck = model;
        cfg.circuit = {n_qubits, n_layers, ansatz};
        cfg.skip_connections = skip_connections;
        return cfg;
    }

    void validate() const {
        auto require = [](bool ok, const std::string &what) {
            if (!ok) {
                throw UsageError("invalid config: " + what);
            }
        };
        require(epochs >= 0, "epochs must be >= 0");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(lr > 0.0, "lr must be positive");
        require(T >= 1, "T must be >= 1");
        require(s > 0.0, "s must be positive");
        require(ema_beta > 0.0 && ema_beta < 1.0, "ema_beta must lie in (0, 1)");
        require(!max_train_images || *max_train_images >= 1,
                "max_train_images must be >= 1");
        require(workers >= 1, "workers must be >= 1");
        require(grid_samples >= 1, "grid_samples must be >= 1");
        require(eval_samples >= 2, "eval_samples must be >= 2");
        require(feature_dim >= 1, "feature_dim must be >= 1");
        require(n_qubits >= 1 && n_qubits <= 24, "n_qubits must lie in 1..24");
        require(n_layers >= 1, "n_layers must be >= 1");
        require(class_label >= 0, "class_label must be >= 0");
        require(output_dir.size() > 0, "output_dir must not be empty");
    }
};

inline nlohmann::json to_json(const RunConfig &c) {
    nlohmann::json j;
    j["dataset"] = to_string(c.dataset);
    j["data_dir"] = c.data_dir;
    j["npz_path"] = c.npz_path;
    j["class_label"] = c.class_label;
    j["model"] = to_string(c.model);
    j["ansatz"] = quantum::to_string(c.ansatz);
    j["n_qubits"] = c.n_qubits;
    j["n_layers"] = c.n_layers;
    j["skip_connections"] = c.skip_connections;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["T"] = c.T;
    j["s"] = c.s;
    j["ema_beta"] = c.ema_beta;
    j["seed"] = c.seed;
    j["max_train_images"] = c.max_train_images ? nlohmann::json(*c.max_train_images)
                                               : nlohmann::json(nullptr);
    j["output_dir"] = c.output_dir;
    j["run_id"] = c.resolved_run_id();
    j["workers"] = c.workers;
    j["grid_samples"] = c.grid_samples;
    j["eval_samples"] = c.eval_samples;
    j["extractor"] = metrics::to_string(c.extractor);
    j["feature_dim"] = c.feature_dim;
    return j;
}

/// Overlay the keys of `j` onto `base`. Unknown keys and wrong types are usage errors.
inline RunConfig config_from_json(const nlohmann::json &j, RunConfig base = {}) {
    if (!j.is_object()) {
        throw UsageError("config must be a JSON object");
    }
    RunConfig c = std::move(base);
    for (const auto &[key, value] : j.items()) {
        try {
            if (key == "dataset") c.dataset = parse_dataset(value.get<std::string>());
            else if (key == "data_dir") c.data_dir = value.get<std::string>();
            else if (key == "npz_path") c.npz_path = value.get<std::string>();
            else if (key == "class_label") c.class_label = value.get<int>();
            else if (key == "model") c.model = parse_bottleneck(value.get<std::string>());
            else if (key == "ansatz") c.ansatz = quantum::parse_ansatz(value.get<std::string>());
            else if (key == "n_qubits") c.n_qubits = value.get<int>();
            else if (key == "n_layers") c.n_layers = value.get<int>();
            else if (key == "skip_connections") c.skip_connections = value.get<bool>();
            else if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "lr") c.lr = value.get<double>();
            else if (key == "T") c.T = value.get<int>();
            else if (key == "s") c.s = value.get<double>();
            else if (key == "ema_beta") c.ema_beta = value.get<double>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "max_train_images") {
                if (value.is_null()) c.max_train_images.reset();
                else c.max_train_images = value.get<int>();
            }
            else if (key == "output_dir") c.output_dir = value.get<std::string>();
            else if (key == "run_id") c.run_id = value.get<std::string>();
            else if (key == "workers") c.workers = value.get<int>();
            else if (key == "grid_samples") c.grid_samples = value.get<int>();
            else if (key == "eval_samples") c.eval_samples = value.get<int>();
            else if (key == "extractor") c.extractor = metrics::parse_extractor(value.get<std::string>());
            else if (key == "feature_dim") c.feature_dim = value.get<int>();
            else throw UsageError("unknown config key '" + key + "'");
        } catch (const nlohmann::json::exception &e) {
            throw UsageError("config key '" + key + "': " + e.what());
        }
    }
    return c;
}

inline RunConfig load_config_file(const std::filesystem::path &path, RunConfig base = {}) {
    const auto bytes = io::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception &e) {
        throw UsageError(path.string() + ": invalid JSON: " + e.what());
    }
    return config_from_json(j, std::move(base));
}

} // namespace qdiff
