#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kecrs/params.hpp"

namespace kecrs {

struct TrainConfig {
    double lr_rec = 3e-3;
    double lr_gen = 1e-1;
    int batch_rec = 128;
    int batch_gen = 32;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double clip_threshold = 0.1;
    double l2_coeff = 1e-5;
    double lambda1 = 1.5;
    double lambda2 = 0.025;
    double lambda3 = 0.1;
    int epochs = 50;
    int patience = 5;  // 0 disables early stopping
    std::uint64_t seed = 0;

    // Model and data settings carried by the same file.
    int d_k = 8;
    int d_f = 8;
    int rgcn_layers = 2;
    int d_model = 16;
    int heads = 2;
    int enc_layers = 1;
    int dec_layers = 1;
    int max_context = 256;
    int max_response = 20;
    int min_freq = 2;

    /// Unknown keys are rejected; missing keys keep their defaults.
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

/// Settings consumed by one optimizer step.
struct OptimizerSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double clip_threshold = 0.1;
    double l2_coeff = 0.0;
};

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

struct StepReport {
    double grad_norm = 0.0;     // after the L2 term, before clipping
    double clipped_norm = 0.0;  // after clipping
};

/// Adds l2_coeff * theta to every trainable gradient, scales the global
/// gradient norm down to clip_threshold, then applies a bias-corrected Adam
/// update. Frozen parameters are untouched. Throws NumericalError naming the
/// first tensor with a non-finite gradient, before anything is modified.
StepReport clip_and_step(ParamStore& params, AdamState& state, const OptimizerSettings& opt);

struct FdOptions {
    double step = 1e-5;
    std::size_t coords_per_tensor = 20;
    std::uint64_t seed = 7;
};

struct FdTensorReport {
    std::string name;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose +/- evaluations straddle a ReLU kink
    double max_rel_error = 0.0;
    // Same formula over the vectors of checked coordinates, with Euclidean
    // norms. Insensitive to roundoff in coordinates whose gradient is tiny
    // next to the rest of the tensor.
    double norm_rel_error = 0.0;
};

struct FdReport {
    std::vector<FdTensorReport> tensors;
    double max_rel_error = 0.0;
};

/// Loss callback: evaluates the scalar loss, adding gradients into
/// params().grad when `with_grad` is set.
using LossFn = std::function<double(bool with_grad)>;

/// Central differences on sampled coordinates of every trainable tensor
/// against the analytic gradient; relative error |a-n| / max(|a|, |n|, 1e-8).
FdReport finite_difference_check(ParamStore& params, const LossFn& loss, const FdOptions& opt = {});

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;  // NaN without validation data
};

/// Hooks binding the generic loop to one model.
struct TrainTask {
    ParamStore* params = nullptr;
    std::size_t num_examples = 0;
    /// Loss over the given example indices with gradients added; nullopt for
    /// a batch that contributes nothing.
    std::function<std::optional<double>(std::span<const std::size_t> batch)> batch_loss;
    /// Validation loss, or nullopt when there is no validation data.
    std::function<std::optional<double>()> validation_loss;
};

struct TrainLoopConfig {
    OptimizerSettings optimizer;
    int epochs = 10;
    int batch_size = 32;
    int patience = 5;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<EpochRecord> curve;
    int best_epoch = 0;
    bool diverged = false;
    std::string divergence;
};

/// Seeded shuffling and batching; each epoch's train loss is the mean of its
/// batch losses. Selection uses validation loss when available, training loss
/// otherwise. On return params hold the best epoch's values; on divergence
/// they hold the last good values.
TrainResult train_loop(const TrainTask& task, const TrainLoopConfig& cfg);

void write_loss_curve(const std::filesystem::path& path, std::span<const EpochRecord> curve);

}  // namespace kecrs
