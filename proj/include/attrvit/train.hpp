#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "attrvit/dataset.hpp"
#include "attrvit/tensor.hpp"
#include "attrvit/vit.hpp"

namespace attrvit {

struct TrainConfig {
    scalar learning_rate = scalar(1e-4);
    int64_t batch_size = 64;
    int64_t epochs = 1;
    int64_t max_steps = 0;  // 0 = bounded by epochs only
    scalar beta1 = scalar(0.9);
    scalar beta2 = scalar(0.999);
    scalar adam_eps = scalar(1e-8);
    uint64_t seed = 0;
    int64_t checkpoint_interval = 0;  // steps between snapshots; 0 = final only

    void validate() const;
};

// First and second moment buffers, aligned with VitWeights iteration order.
struct AdamState {
    std::vector<Tensor> m, v;
    int64_t step = 0;

    static AdamState init(VitWeights& w);
};

// One Adam element update with bias correction; t is the 1-based step.
void adam_update(scalar* param, const scalar* grad, scalar* m, scalar* v, int64_t n, int64_t t,
                 const TrainConfig& cfg);

// Applies Adam to every parameter from its accumulated gradient. Increments
// state.step.
void adam_step(VitWeights& w, AdamState& state, const TrainConfig& cfg);

// Everything needed to continue training bit-exactly: weights, moments,
// step counter, RNG state and the in-progress epoch order/cursor.
struct Checkpoint {
    ModelConfig model;
    VitWeights weights;
    AdamState adam;
    uint64_t rng_state = 0;
    int64_t epoch = 0;                // index of the in-progress epoch
    std::vector<int64_t> epoch_order; // shuffled sample order of that epoch
    int64_t epoch_cursor = 0;         // next position in epoch_order
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CurvePoint {
    int64_t step = 0;
    int64_t epoch = 0;
    scalar loss = 0;
};

void write_loss_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

struct FitHooks {
    // Called every time a sample enters a training batch.
    std::function<void(const SampleRef&)> on_sample;
    std::function<void(int64_t epoch, scalar mean_loss)> on_epoch;
    // When set, snapshots land here as ckpt-<step>.ckpt.
    std::filesystem::path checkpoint_dir;
};

struct FitResult {
    Checkpoint checkpoint;
    std::vector<CurvePoint> curve;
};

// Seeded training from scratch: init weights, shuffle seen-class batches,
// minimize the mean attribute-regression loss with Adam.
FitResult fit(const DatasetBundle& bundle, const ModelConfig& model, const TrainConfig& cfg,
              const FitHooks& hooks = {});

// Continues from a checkpoint; bit-identical to never having stopped.
FitResult fit_resume(const DatasetBundle& bundle, Checkpoint ck, const TrainConfig& cfg,
                     const FitHooks& hooks = {});

}  // namespace attrvit
