#include <doctest.h>

#include <cmath>

#include "gbi/engine.hpp"
#include "gbi/rng.hpp"
#include "gbi/metrics.hpp"
#include "gbi/ops.hpp"
#include "gbi/seq_model.hpp"
#include "gbi/synth.hpp"

using namespace gbi;

namespace {

const SeqModel& trained_gbi() {
    static SeqModel model = [] {
        GenerativeParams params;
        auto data = generate_blocks(1, 3000, params);
        SeqModelConfig cfg;
        cfg.has_task_input = true;
        SeqModel m = SeqModel::init(cfg, 77);
        train_toy(m, data, ZSource::ground_truth);
        m.set_frozen(true);
        return m;
    }();
    return model;
}

// quadratic surrogate loss over the task input: (z - target)^2 summed
TaskLossFn quadratic_loss(std::vector<float> target) {
    return [target](const Tensor& z_in) {
        Tensor t = Tensor::from({static_cast<int>(target.size())}, target);
        Tensor d = sub(z_in, t);
        return sum(mul(d, d));
    };
}

TaskInputFn identity_input() {
    return [](const Tensor& logits) { return scale(logits, 1.0f); };
}

TaskInputFn softmax_input() {
    return [](const Tensor& logits) { return softmax(logits, 0); };
}

}  // namespace

TEST_CASE("belief type basics") {
    TaskBelief u = TaskBelief::uniform(4);
    for (float p : u.probs) CHECK(p == doctest::Approx(0.25));
    CHECK(u.entropy() == doctest::Approx(std::log(4.0)));

    TaskBelief b = TaskBelief::from_logits({2.0f, 0.0f, -1.0f});
    CHECK(b.arg_max() == 0);
    double total = 0;
    for (float p : b.probs) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("one_step_infer basics") {
    InferenceConfig cfg;

    SUBCASE("zero gradient leaves the belief uniform") {
        // loss independent of z: gradient is exactly zero
        TaskLossFn flat = [](const Tensor& z_in) { return scale(sum(mul(z_in, Tensor::zeros(z_in.shape()))), 1.0f); };
        auto r = one_step_infer(2, softmax_input(), flat, cfg);
        CHECK(r.belief.probs[0] == doctest::Approx(0.5));
        CHECK(r.gradient[0] == 0.0f);
    }

    SUBCASE("negative gradient on a slot raises its belief") {
        // loss decreases when logit 0 grows: pulls belief toward slot 0
        TaskLossFn pull = [](const Tensor& z_in) { return scale(slice(z_in, 0, 1, 1), 1.0f); };
        auto r = one_step_infer(2, identity_input(), pull, cfg);
        CHECK(r.gradient[1] > 0.0f);
        CHECK(r.belief.probs[0] > 0.5f);
    }

    SUBCASE("output is always a valid distribution") {
        Rng rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<float> target(3);
            for (float& v : target) v = static_cast<float>(rng.uniform(-2.0, 2.0));
            auto r = one_step_infer(3, softmax_input(), quadratic_loss(target), cfg);
            double total = 0;
            for (float p : r.belief.probs) {
                CHECK(p >= 0.0f);
                CHECK(p <= 1.0f);
                total += p;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
    }

    SUBCASE("larger gamma lowers the belief entropy") {
        TaskLossFn pull = [](const Tensor& z_in) { return scale(slice(z_in, 0, 1, 1), 1.0f); };
        InferenceConfig soft = cfg;
        soft.gamma = 0.5f;
        InferenceConfig sharp = cfg;
        sharp.gamma = 4.0f;
        auto a = one_step_infer(2, identity_input(), pull, soft);
        auto b = one_step_infer(2, identity_input(), pull, sharp);
        CHECK(b.belief.entropy() < a.belief.entropy());
    }
}

TEST_CASE("permutation equivariance of one-step inference") {
    const auto& model = trained_gbi();
    // permuting the task channels of the loss permutes the belief identically
    std::vector<double> window{0.21, 0.18, 0.22, 0.19, 0.2};
    const double target = 0.2;
    InferenceConfig cfg;
    auto direct = seq_one_step(model, window, target, cfg);

    // same model consulted with swapped task channels
    TaskInputFn swapped_input = [&model](const Tensor& logits) {
        Tensor sw = concat({slice(logits, 0, 1, 1), slice(logits, 0, 0, 1)}, 0);
        return model.map_task_input(sw);
    };
    TaskLossFn loss = [&](const Tensor& z_in) {
        auto fwd = model.forward(window, z_in);
        return gaussian_nll_loss(fwd.mean, fwd.sigma, Tensor::scalar(static_cast<float>(target)));
    };
    auto perm = one_step_infer(2, swapped_input, loss, cfg);
    CHECK(perm.belief.probs[0] == doctest::Approx(direct.belief.probs[1]).epsilon(1e-4));
    CHECK(perm.belief.probs[1] == doctest::Approx(direct.belief.probs[0]).epsilon(1e-4));
}

TEST_CASE("iterative_optimize on a quadratic surrogate") {
    InferenceConfig cfg;
    cfg.iter_steps = 40;

    SUBCASE("stationary start stays near the optimum") {
        InferenceConfig pure = cfg;
        pure.iter_l2 = 0.0f;  // the L2 pull would move the optimum
        auto r = iterative_optimize(2, identity_input(), quadratic_loss({0.3f, -0.4f}),
                                    TaskBelief::from_logits({0.3f, -0.4f}), pure);
        CHECK(r.trajectory.size() == 41);
        CHECK(r.losses.size() == 40);
        for (float l : r.losses) CHECK(l < 0.01f);
        CHECK(std::fabs(r.trajectory.back().logits[0] - 0.3f) < 2 * cfg.iter_lr);
        CHECK(!r.diverged);
    }

    SUBCASE("losses decrease in most consecutive pairs") {
        auto r = iterative_optimize(2, identity_input(), quadratic_loss({1.0f, -1.0f}),
                                    TaskBelief::uniform(2), cfg);
        int improving = 0;
        for (size_t i = 1; i < r.losses.size(); ++i)
            if (r.losses[i] <= r.losses[i - 1]) ++improving;
        CHECK(improving >= static_cast<int>(0.8 * (r.losses.size() - 1)));
        CHECK(r.losses.back() < r.losses.front());
    }

    SUBCASE("divergence guard stops the loop") {
        // a drifting objective whose value keeps climbing regardless of z
        auto counter = std::make_shared<int>(0);
        TaskLossFn drifting = [counter](const Tensor& z_in) {
            const float level = 0.1f + 0.5f * static_cast<float>((*counter)++);
            return add(sum(mul(z_in, z_in)), Tensor::scalar(level));
        };
        auto r = iterative_optimize(2, identity_input(), drifting, TaskBelief::uniform(2), cfg);
        CHECK(r.diverged);
        CHECK(r.losses.size() < 40);
    }
}

TEST_CASE("neural evidence") {
    std::vector<float> z{0.7f, 0.3f};
    std::vector<float> zero{0.0f, 0.0f};
    CHECK(neural_evidence(z, zero) == 0.0);
    std::vector<float> g{-1.0f, 2.0f};
    CHECK(neural_evidence(z, g) == doctest::Approx(0.7 * -1.0 + 0.3 * 2.0));
    CHECK_THROWS_AS(neural_evidence(z, std::vector<float>{1.0f}), Error);
}

TEST_CASE("default-state stream matches the exact filter") {
    const auto& model = trained_gbi();
    GenerativeParams params;
    auto held = generate_blocks(991, 520, params);
    InferenceConfig cfg;
    auto trace = stream_run(model, held.observations, StreamMode::default_state, cfg);
    auto filt = filter_sequence(held.observations, params, {0.5, 0.5});

    std::vector<double> belief0, lik0;
    int agree = 0, total = 0;
    for (const auto& st : trace) {
        const auto& f = filt[static_cast<size_t>(st.step)];
        const double l0 = f.likelihood[0] / (f.likelihood[0] + f.likelihood[1]);
        belief0.push_back(st.belief[0]);
        lik0.push_back(l0);
        bool near_boundary = false;
        for (int b : held.block_starts)
            if (st.step >= b && st.step < b + 5) near_boundary = true;
        if (near_boundary) continue;
        ++total;
        if ((l0 > 0.5) == (st.belief[0] > 0.5f)) ++agree;
    }
    CHECK(pearson(belief0, lik0) > 0.8);
    CHECK(static_cast<double>(agree) / total > 0.9);
}

TEST_CASE("grafted posterior tracks the exact posterior") {
    const auto& model = trained_gbi();
    GenerativeParams params;
    auto held = generate_blocks(1234, 520, params);
    InferenceConfig cfg;
    auto trace = stream_run(model, held.observations, StreamMode::default_state, cfg);
    auto filt = filter_sequence(held.observations, params, {0.5, 0.5});

    std::array<double, 2> prior{0.5, 0.5};
    std::vector<double> grafted, exact;
    for (const auto& st : trace) {
        FilterState g = graft_step(prior, {st.gradient[0], st.gradient[1]}, cfg.graft_scale, params);
        prior = g.posterior;
        grafted.push_back(g.posterior[0]);
        exact.push_back(filt[static_cast<size_t>(st.step)].posterior[0]);
    }
    CHECK(pearson(grafted, exact) > 0.8);
}

TEST_CASE("engaged stream dynamics") {
    const auto& model = trained_gbi();
    InferenceConfig cfg;

    SUBCASE("constant stream converges and stays") {
        auto stream = generalization_sweep(4, {0.2}, 0.1, 300)[0];
        auto trace = stream_run(model, stream.observations, StreamMode::engaged, cfg);
        int stable = 0;
        for (size_t i = trace.size() - 100; i < trace.size(); ++i)
            if (trace[i].belief[0] > trace[i].belief[1]) ++stable;
        CHECK(stable == 100);
    }

    SUBCASE("block switches flip the winning unit within 20 steps") {
        GenerativeParams params;
        auto held = generate_blocks(991, 800, params);
        auto trace = stream_run(model, held.observations, StreamMode::engaged, cfg);
        int flips = 0, switches = 0;
        for (size_t bi = 1; bi < held.block_starts.size(); ++bi) {
            const int b = held.block_starts[bi];
            if (b < 6) continue;
            const int want = held.z_true[static_cast<size_t>(b)];
            ++switches;
            for (const auto& st : trace)
                if (st.step >= b && st.step < b + 20 &&
                    (st.belief[1] > st.belief[0]) == (want == 1)) {
                    ++flips;
                    break;
                }
        }
        CHECK(switches >= 10);
        CHECK(static_cast<double>(flips) / switches >= 0.9);
    }

    SUBCASE("ambiguous stream still matches the mean") {
        auto stream = generalization_sweep(3, {0.5}, 0.1, 200)[0];
        auto trace = stream_run(model, stream.observations, StreamMode::engaged, cfg);
        double mean_pred = 0;
        int n = 0;
        for (size_t i = 50; i < trace.size(); ++i) {
            mean_pred += trace[i].pred_mean;
            ++n;
        }
        CHECK(std::fabs(mean_pred / n - 0.5) < 0.1);
    }

    SUBCASE("in-distribution evidence beats far-out-of-range evidence") {
        auto streams = generalization_sweep(5, {0.2, 1.2}, 0.1, 120);
        auto in_trace = stream_run(model, streams[0].observations, StreamMode::default_state, cfg);
        auto out_trace = stream_run(model, streams[1].observations, StreamMode::default_state, cfg);
        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        std::vector<double> in_e, out_e;
        for (const auto& s : in_trace) in_e.push_back(s.evidence);
        for (const auto& s : out_trace) out_e.push_back(s.evidence);
        CHECK(median(in_e) > median(out_e));
    }
}

TEST_CASE("generalization eval produces one row per mean") {
    const auto& model = trained_gbi();
    InferenceConfig cfg;
    std::vector<double> means{0.2, 0.5, 1.0};
    auto sweep = generalization_sweep(9, means, 0.1, 60);
    auto rows = generalization_eval(model, sweep, means, cfg);
    CHECK(rows.size() == 3);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].mean == means[i]);
        CHECK(rows[i].mse >= 0.0);
        CHECK(rows[i].mse < 1.0);
    }
    // training-mean stream is predicted at least as well as the far one
    CHECK(rows[0].mse < rows[2].mse + 0.05);
}

TEST_CASE("fixed correct context on the training mean matches training error") {
    const auto& model = trained_gbi();
    GenerativeParams params;

    // same-protocol MSE with the correct fixed context: on fresh streams at
    // the training means, and on a fresh stream from the generative model
    auto fixed_z_mse = [&](const BlockSequence& seq, int from, int to) {
        double acc = 0;
        int n = 0;
        for (int t = std::max(from, 5); t < to; ++t) {
            const int label = seq.z_true[static_cast<size_t>(t)];
            Tensor z = model.map_task_label(label);
            std::span<const double> window(seq.observations.data() + t - 5, 5);
            const double e =
                model.predict(window, std::vector<float>(z.data().begin(), z.data().end())).mean -
                seq.observations[static_cast<size_t>(t)];
            acc += e * e;
            ++n;
        }
        return acc / n;
    };

    auto in_dist = generate_blocks(55, 400, params);
    const double reference = fixed_z_mse(in_dist, 5, 400);

    auto at_train_mean = generalization_sweep(56, {0.2}, 0.1, 60)[0];
    const double eval_mse = fixed_z_mse(at_train_mean, 50, 60);
    CHECK(eval_mse <= reference + 0.02);
}

TEST_CASE("engaged mode requires a task-input model") {
    SeqModelConfig cfg;
    cfg.has_task_input = false;
    SeqModel plain = SeqModel::init(cfg, 1);
    std::vector<double> obs(20, 0.2);
    CHECK_THROWS_AS(stream_run(plain, obs, StreamMode::engaged, InferenceConfig{}), Error);
}
