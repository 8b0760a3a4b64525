#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gbi/checkpoint.hpp"
#include "gbi/ops.hpp"
#include "gbi/synth.hpp"
#include "gbi/tensor.hpp"

namespace gbi {

struct SeqModelConfig {
    int hidden = 100;
    int history = 5;
    bool has_task_input = false;
    int task_dim = 2;
    float lr = 1e-3f;
    // Sharpening temperature applied when hard one-hot labels are passed
    // through the softmax input map; belief-valued inputs use temperature 1.
    float z_input_temp = 0.1f;
    float sigma_floor = 1e-4f;
};

struct GaussianPrediction {
    float mean = 0.0f;
    float sigma = 1.0f;
};

// Single-layer LSTM over a fixed observation window, with an optional task
// input concatenated to every step, and a Gaussian head (mean, softplus sigma).
class SeqModel {
public:
    static SeqModel init(const SeqModelConfig& cfg, uint64_t seed);

    const SeqModelConfig& config() const { return cfg_; }
    std::vector<Tensor> parameters();
    // Freezing drops parameter gradients so inference backward passes only
    // propagate to the task input.
    void set_frozen(bool frozen);

    struct ForwardResult {
        Tensor mean;    // [1]
        Tensor sigma;   // [1]
        Tensor hidden;  // [hidden], final step
    };
    // z_in must be a valid task input (post-softmax) iff has_task_input.
    ForwardResult forward(std::span<const double> window, const Tensor& z_in) const;

    // Belief logits -> model task input (plain softmax).
    Tensor map_task_input(const Tensor& z_logits) const;
    // Hard label -> model task input (sharpened softmax of the one-hot).
    Tensor map_task_label(int label) const;

    // Tape-free convenience; probs may be empty for task-free models.
    GaussianPrediction predict(std::span<const double> window, std::span<const float> z_probs) const;
    std::vector<float> hidden_activations(std::span<const double> window,
                                          std::span<const float> z_probs) const;

    Checkpoint to_checkpoint(uint64_t seed, int64_t steps) const;
    static SeqModel from_checkpoint(const Checkpoint& ckpt);

private:
    SeqModelConfig cfg_;
    int input_dim_ = 1;
    // gate order: input, forget, cell, output
    Tensor w_x_[4], w_h_[4], b_[4];
    Tensor w_out_, b_out_;
    Tensor zero_bias_;

    Tensor input_probs_tensor(std::span<const float> z_probs) const;
};

enum class ZSource { ground_truth, none };

struct ToyTrainResult {
    std::vector<float> step_losses;           // one per predicted target
    std::vector<double> block_losses;         // per-block mean loss
    std::vector<double> block_losses_trimmed; // first `trim` predictions of each block excluded
    int last_block_label = 0;
};

// Sequential single-sample training: predict each next observation from the
// preceding window, Adam on the Gaussian NLL. The ground_truth source feeds
// the one-hot context of the target step.
ToyTrainResult train_toy(SeqModel& model, const BlockSequence& data, ZSource z_source,
                         int trim = 20);

struct TaskVarianceResult {
    std::vector<std::vector<double>> per_unit_variance;  // [task][unit]
    std::vector<std::vector<int>> active_units;          // [task], sorted
    double shared_ratio = 0.0;
};

// Per-unit activation variance across each task's samples; units in the top
// `active_fraction` by variance count as task-active.
TaskVarianceResult task_variance(const SeqModel& model, const BlockSequence& data,
                                 double active_fraction = 0.25);

}  // namespace gbi
