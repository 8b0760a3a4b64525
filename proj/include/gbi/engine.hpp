#pragma once

#include <functional>
#include <span>
#include <vector>

#include "gbi/seq_model.hpp"
#include "gbi/synth.hpp"
#include "gbi/tensor.hpp"

namespace gbi {

// Probability vector over task abstractions, kept in logit space and
// projected with a softmax.
struct TaskBelief {
    std::vector<float> logits;
    std::vector<float> probs;

    static TaskBelief uniform(int k);
    static TaskBelief from_logits(std::vector<float> logits);
    int arg_max() const;
    double entropy() const;
};

struct InferenceConfig {
    float gamma = 1.0f;      // one-step update rate
    float alpha = 0.0f;      // entropy weight; its gradient vanishes at the uniform init
    float iter_lr = 0.01f;   // Adam rate for iterative refinement
    float iter_l2 = 0.01f;   // L2 on the belief logits (entropy surrogate)
    int iter_steps = 50;
    float engaged_lr = 0.5f;   // plain gradient rate for the streaming engaged state
    // infinity-norm gradient clip for engaged updates; the NLL's 1/sigma^2
    // factor spikes the raw gradient by orders of magnitude at block switches
    float engaged_clip = 0.4f;
    // L2 pull on the engaged task units (the entropy surrogate); bounds their
    // within-block drift so a context switch stays reachable
    float engaged_l2 = 0.05f;
    float graft_scale = 10.0f;

    void validate() const;
};

// Builds the scalar loss of one datum given the mapped task input tensor.
using TaskLossFn = std::function<Tensor(const Tensor& z_input)>;
// Maps belief logits to the model's task input tensor.
using TaskInputFn = std::function<Tensor(const Tensor& z_logits)>;

struct OneStepResult {
    TaskBelief belief;
    std::vector<float> gradient;  // dLoss/dlogits at the uniform point
    float loss = 0.0f;
};

// One backward pass from the maximal-entropy point: the returned belief is
// softmax(-gamma * gradient). The model must be frozen by the caller.
OneStepResult one_step_infer(int task_dim, const TaskInputFn& input_fn, const TaskLossFn& loss_fn,
                             const InferenceConfig& cfg);

struct IterativeResult {
    std::vector<TaskBelief> trajectory;  // iter_steps + 1 entries, init first
    std::vector<float> losses;           // loss at each pre-step belief
    bool diverged = false;
};

// Adam refinement of the belief logits. Stops early if the loss exceeds
// 10x its initial value.
IterativeResult iterative_optimize(int task_dim, const TaskInputFn& input_fn,
                                   const TaskLossFn& loss_fn, const TaskBelief& init,
                                   const InferenceConfig& cfg);

// Inner product of the optimized belief with its loss gradient. Raw
// unnormalized score; better-explained observations score higher (the
// gradient under the chosen belief has less room to improve).
double neural_evidence(std::span<const float> z_min, std::span<const float> z_gradient);

enum class StreamMode { default_state, engaged };

struct StreamStep {
    int step = 0;                // index of the target observation
    double x = 0.0;
    float pred_mean = 0.0f;
    float pred_sigma = 1.0f;
    // default mode: one-step belief probs; engaged mode: the raw task units
    // after this step's update (unconstrained, so they can recompose beyond
    // the trained one-hot vertices)
    std::vector<float> belief;
    std::vector<float> gradient;
    double evidence = 0.0;
};

// Streams a toy sequence through a frozen task-input model. default_state
// clamps the task input at uniform and reads one-step beliefs; engaged feeds
// persistent task units and descends them once per step.
std::vector<StreamStep> stream_run(const SeqModel& model, std::span<const double> obs,
                                   StreamMode mode, const InferenceConfig& cfg);

// One-step inference for a single toy window/target pair.
OneStepResult seq_one_step(const SeqModel& model, std::span<const double> window, double target,
                           const InferenceConfig& cfg);

struct MeanMse {
    double mean = 0.0;
    double mse = 0.0;
};

// Per-mean MSE of next-observation predictions over the last eval_window
// targets of each sweep stream. Task-input models run engaged; baselines run
// plain.
std::vector<MeanMse> generalization_eval(const SeqModel& model,
                                         const std::vector<BlockSequence>& sweep,
                                         const std::vector<double>& means,
                                         const InferenceConfig& cfg, int eval_window = 10);

// Width of the x-interval where the second hypothesis wins the one-step
// belief, probed with constant windows over [x_lo, x_hi].
double hypothesis2_belief_width(const SeqModel& model, const InferenceConfig& cfg, double x_lo,
                                double x_hi, double dx);

}  // namespace gbi
