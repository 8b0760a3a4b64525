#include "gbi/engine.hpp"

#include <algorithm>
#include <cmath>

#include "gbi/ops.hpp"

namespace gbi {

namespace {

std::vector<float> softmax_values(std::span<const float> logits) {
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    std::vector<float> out(logits.size());
    float denom = 0.0f;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        denom += out[i];
    }
    for (float& v : out) v /= denom;
    return out;
}

}  // namespace

TaskBelief TaskBelief::uniform(int k) {
    return from_logits(std::vector<float>(static_cast<size_t>(k), 0.0f));
}

TaskBelief TaskBelief::from_logits(std::vector<float> logits) {
    TaskBelief b;
    b.probs = softmax_values(logits);
    b.logits = std::move(logits);
    return b;
}

int TaskBelief::arg_max() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double TaskBelief::entropy() const {
    double h = 0.0;
    for (float p : probs)
        if (p > 0.0f) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
    return h;
}

void InferenceConfig::validate() const {
    if (!(gamma > 0.0f)) throw Error("InferenceConfig: gamma must be positive");
    if (iter_steps < 1) throw Error("InferenceConfig: iter_steps must be >= 1");
}

OneStepResult one_step_infer(int task_dim, const TaskInputFn& input_fn, const TaskLossFn& loss_fn,
                             const InferenceConfig& cfg) {
    cfg.validate();
    Tape tape;
    Tensor z_logits = Tensor::zeros({task_dim}, true);
    Tensor loss = loss_fn(input_fn(z_logits));
    tape.backward(loss);

    OneStepResult r;
    r.loss = loss.item();
    r.gradient.assign(z_logits.grad().begin(), z_logits.grad().end());
    std::vector<float> updated(static_cast<size_t>(task_dim));
    for (int i = 0; i < task_dim; ++i)
        updated[static_cast<size_t>(i)] = -cfg.gamma * r.gradient[static_cast<size_t>(i)];
    r.belief = TaskBelief::from_logits(std::move(updated));
    return r;
}

IterativeResult iterative_optimize(int task_dim, const TaskInputFn& input_fn,
                                   const TaskLossFn& loss_fn, const TaskBelief& init,
                                   const InferenceConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(init.logits.size()) != task_dim)
        throw Error("iterative_optimize: init size mismatch");

    Tensor z_logits = Tensor::from({task_dim}, init.logits, true);
    Adam opt({z_logits}, cfg.iter_lr, 0.9f, 0.999f, 1e-8f, cfg.iter_l2);

    IterativeResult r;
    r.trajectory.push_back(init);
    float initial_loss = 0.0f;
    for (int step = 0; step < cfg.iter_steps; ++step) {
        Tape tape;
        Tensor loss = loss_fn(input_fn(z_logits));
        const float loss_v = loss.item();
        if (step == 0) initial_loss = loss_v;
        r.losses.push_back(loss_v);
        if (step > 0 && loss_v > 10.0f * initial_loss + 1e-6f) {
            r.diverged = true;
            break;
        }
        tape.backward(loss);
        opt.step();
        r.trajectory.push_back(
            TaskBelief::from_logits({z_logits.data().begin(), z_logits.data().end()}));
    }
    return r;
}

double neural_evidence(std::span<const float> z_min, std::span<const float> z_gradient) {
    if (z_min.size() != z_gradient.size()) throw Error("neural_evidence: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < z_min.size(); ++i)
        acc += static_cast<double>(z_min[i]) * z_gradient[i];
    return acc;
}

OneStepResult seq_one_step(const SeqModel& model, std::span<const double> window, double target,
                           const InferenceConfig& cfg) {
    if (!model.config().has_task_input) throw Error("seq_one_step: model has no task input");
    TaskInputFn input_fn = [&model](const Tensor& logits) { return model.map_task_input(logits); };
    TaskLossFn loss_fn = [&model, window, target](const Tensor& z_in) {
        auto fwd = model.forward(window, z_in);
        return gaussian_nll_loss(fwd.mean, fwd.sigma, Tensor::scalar(static_cast<float>(target)));
    };
    return one_step_infer(model.config().task_dim, input_fn, loss_fn, cfg);
}

std::vector<StreamStep> stream_run(const SeqModel& model, std::span<const double> obs,
                                   StreamMode mode, const InferenceConfig& cfg) {
    cfg.validate();
    if (!model.config().has_task_input) throw Error("stream_run: model has no task input");
    const int history = model.config().history;
    const int k = model.config().task_dim;
    if (static_cast<int>(obs.size()) < history + 1)
        throw Error("stream_run: stream shorter than history+1");

    std::vector<StreamStep> trace;
    trace.reserve(obs.size() - static_cast<size_t>(history));
    // engaged state starts at the maximal-entropy input (uniform task units)
    Tensor z_units = Tensor::from(
        {k}, std::vector<float>(static_cast<size_t>(k), 1.0f / static_cast<float>(k)), true);

    for (int t = history; t < static_cast<int>(obs.size()); ++t) {
        std::span<const double> window(obs.data() + t - history, static_cast<size_t>(history));
        const double target = obs[static_cast<size_t>(t)];
        StreamStep step;
        step.step = t;
        step.x = target;

        if (mode == StreamMode::default_state) {
            OneStepResult one = seq_one_step(model, window, target, cfg);
            auto pred = model.predict(window, TaskBelief::uniform(k).probs);
            step.pred_mean = pred.mean;
            step.pred_sigma = pred.sigma;
            step.belief = one.belief.probs;
            step.gradient = one.gradient;
            step.evidence = neural_evidence(one.belief.probs, one.gradient);
        } else {
            // engaged state: the task units themselves are optimized, with no
            // simplex projection, so the belief can recompose beyond the
            // trained vertices (this is what lets predictions extrapolate)
            Tape tape;
            auto fwd = model.forward(window, z_units);
            step.pred_mean = fwd.mean.item();
            step.pred_sigma = fwd.sigma.item();
            Tensor loss =
                gaussian_nll_loss(fwd.mean, fwd.sigma, Tensor::scalar(static_cast<float>(target)));
            tape.backward(loss);
            step.gradient.assign(z_units.grad().begin(), z_units.grad().end());
            float ginf = 0.0f;
            for (float g : step.gradient) ginf = std::max(ginf, std::fabs(g));
            const float clip = ginf > cfg.engaged_clip ? cfg.engaged_clip / ginf : 1.0f;
            auto zv = z_units.mutable_data();
            for (int i = 0; i < k; ++i)
                zv[static_cast<size_t>(i)] -=
                    cfg.engaged_lr * (clip * step.gradient[static_cast<size_t>(i)] +
                                      cfg.engaged_l2 * zv[static_cast<size_t>(i)]);
            z_units.zero_grad();
            step.belief.assign(z_units.data().begin(), z_units.data().end());
            step.evidence = neural_evidence(step.belief, step.gradient);
        }
        trace.push_back(std::move(step));
    }
    return trace;
}

std::vector<MeanMse> generalization_eval(const SeqModel& model,
                                         const std::vector<BlockSequence>& sweep,
                                         const std::vector<double>& means,
                                         const InferenceConfig& cfg, int eval_window) {
    if (sweep.size() != means.size()) throw Error("generalization_eval: sweep/means size mismatch");
    const int history = model.config().history;
    std::vector<MeanMse> out;
    out.reserve(sweep.size());
    for (size_t d = 0; d < sweep.size(); ++d) {
        const auto& obs = sweep[d].observations;
        const int n = static_cast<int>(obs.size());
        if (n < history + eval_window + 1)
            throw Error("generalization_eval: stream too short for the eval window");

        std::vector<double> sq_errors;
        if (model.config().has_task_input) {
            auto trace = stream_run(model, obs, StreamMode::engaged, cfg);
            for (size_t i = trace.size() - static_cast<size_t>(eval_window); i < trace.size(); ++i) {
                const double e = trace[i].pred_mean - trace[i].x;
                sq_errors.push_back(e * e);
            }
        } else {
            for (int t = n - eval_window; t < n; ++t) {
                std::span<const double> window(obs.data() + t - history, static_cast<size_t>(history));
                const double e = model.predict(window, {}).mean - obs[static_cast<size_t>(t)];
                sq_errors.push_back(e * e);
            }
        }
        double acc = 0.0;
        for (double e : sq_errors) acc += e;
        out.push_back({means[d], acc / static_cast<double>(sq_errors.size())});
    }
    return out;
}

double hypothesis2_belief_width(const SeqModel& model, const InferenceConfig& cfg, double x_lo,
                                double x_hi, double dx) {
    if (!(dx > 0.0) || !(x_hi > x_lo)) throw Error("hypothesis2_belief_width: bad grid");
    const int history = model.config().history;
    int wins = 0;
    for (double x = x_lo; x <= x_hi + 1e-12; x += dx) {
        std::vector<double> window(static_cast<size_t>(history), x);
        OneStepResult r = seq_one_step(model, window, x, cfg);
        if (r.belief.probs[1] > 0.5f) ++wins;
    }
    return wins * dx;
}

}  // namespace gbi
