#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpdl/dp_synth.hpp"
#include "dpdl/losses.hpp"
#include "dpdl/mccnet.hpp"
#include "dpdl/param_store.hpp"

namespace dpdl::train {

struct TrainConfig {
    double lr0 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 200;
    int lr_half_period = 60;  // epochs
    int patch = 64;
    int batch = 4;
    std::uint64_t seed = 0;
    mccnet::NetworkConfig network;
    losses::LossConfig loss;

    /// Throws ConfigError unless every field is in range and patch is a multiple of 8.
    void validate() const;
};

/// lr0 * 0.5^floor(epoch / lr_half_period).
double lr_at(int epoch, const TrainConfig& cfg);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One moment pair per unique parameter tensor, in ParamStore entry order.
struct AdamState {
    std::vector<Tensor<float>> m;
    std::vector<Tensor<float>> v;
    std::uint64_t step = 0;
};

/// Bias-corrected Adam on every unique tensor of `params`, using the gradients
/// they hold scaled by `grad_scale`. Throws ContractError when a gradient is
/// missing or mis-shaped, or when `state` belongs to a different store.
void adam_step(ParamStore<float>& params, AdamState& state, const AdamConfig& cfg, double lr,
               double grad_scale = 1.0);

/// The same spatial window of left, right, gt and disparity; the top-left
/// corner lies on even coordinates.
synth::DPSample crop_pair(const synth::DPSample& sample, std::size_t patch, std::mt19937_64& rng);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_psnr = 0.0;
    double val_ssim = 0.0;
    double val_mae = 0.0;
};

struct EvalReport {
    double psnr = 0.0;  // mean over images; +inf when every image is exact
    double ssim = 0.0;
    double msssim = 0.0;
    double mae = 0.0;
    std::size_t n_images = 0;
};

/// Runs the network on every sample at full size and averages the metrics.
/// `input_only` scores the left view itself instead (the no-restoration baseline).
EvalReport evaluate(ParamStore<float>& params, const mccnet::NetworkConfig& net,
                    const std::vector<synth::DPSample>& data, bool input_only = false);

/// Non-finite training loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainOptions {
    // Checkpoints ("last", "best") and history.csv go here; empty keeps everything in memory.
    std::filesystem::path out_dir;
    // Continue from out_dir/last when it exists.
    bool resume = false;
    // Stop after this many completed epochs in this call (0 = run to cfg.epochs).
    int stop_after = 0;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ParamStore<float> params;
    AdamState adam;
    std::vector<EpochRecord> history;
    int epochs_done = 0;
    double best_val_psnr = 0.0;
};

/// Trains from a He initialization (or the checkpoint when resuming). Each
/// epoch visits the training set in a seeded random order, one random crop per
/// sample, accumulating gradients over `batch` samples per Adam step.
TrainResult train(const std::vector<synth::DPSample>& train_set, const std::vector<synth::DPSample>& val_set,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

// Checkpoints: a directory with manifest.json (config, names, shapes,
// aliases, optimizer step, progress) plus one TNSR per parameter and moment.
struct Checkpoint {
    TrainConfig config;
    ParamStore<float> params;
    AdamState adam;
    int epochs_done = 0;
    double best_val_psnr = 0.0;
};

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, const ParamStore<float>& params,
                     const AdamState& adam, int epochs_done, double best_val_psnr);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_history(const std::filesystem::path& file, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(const std::filesystem::path& file);

}  // namespace dpdl::train
