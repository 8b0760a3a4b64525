#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gbi/rng.hpp"
#include "gbi/seq_model.hpp"
#include "gbi/synth.hpp"

using namespace gbi;

namespace {

// one trained model pair shared across cases; training is deterministic
struct Trained {
    BlockSequence data;
    SeqModel gbi;
    SeqModel lstm;
    ToyTrainResult gbi_result;
    ToyTrainResult lstm_result;
};

const Trained& trained() {
    static Trained t = [] {
        GenerativeParams params;
        SeqModelConfig gbi_cfg;
        gbi_cfg.has_task_input = true;
        SeqModelConfig lstm_cfg;
        lstm_cfg.has_task_input = false;
        Trained out{generate_blocks(5, 5000, params), SeqModel::init(gbi_cfg, 41),
                    SeqModel::init(lstm_cfg, 41), {}, {}};
        out.gbi_result = train_toy(out.gbi, out.data, ZSource::ground_truth);
        out.lstm_result = train_toy(out.lstm, out.data, ZSource::none);
        return out;
    }();
    return t;
}

}  // namespace

TEST_CASE("forward contract") {
    SeqModelConfig cfg;
    cfg.has_task_input = true;
    SeqModel model = SeqModel::init(cfg, 3);
    std::vector<double> window{0.1, 0.2, 0.3, 0.2, 0.1};

    auto pred = model.predict(window, std::vector<float>{0.5f, 0.5f});
    CHECK(std::isfinite(pred.mean));
    CHECK(pred.sigma > 0.0f);

    // wrong window length and task-input misuse
    std::vector<double> short_window{0.1, 0.2};
    CHECK_THROWS_AS(model.predict(short_window, std::vector<float>{0.5f, 0.5f}), Error);
    CHECK_THROWS_AS(model.predict(window, {}), Error);

    SeqModelConfig plain_cfg;
    plain_cfg.has_task_input = false;
    SeqModel plain = SeqModel::init(plain_cfg, 3);
    CHECK_THROWS_AS(plain.predict(window, std::vector<float>{0.5f, 0.5f}), Error);
}

TEST_CASE("sigma stays positive over random inputs") {
    SeqModelConfig cfg;
    cfg.hidden = 16;
    cfg.has_task_input = true;
    SeqModel model = SeqModel::init(cfg, 9);
    Rng rng(10);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> window(5);
        for (double& v : window) v = rng.uniform(-5.0, 5.0);
        auto pred = model.predict(window, std::vector<float>{0.5f, 0.5f});
        CHECK(pred.sigma > 0.0f);
    }
}

TEST_CASE("dead task input gives identical predictions for either hypothesis") {
    SeqModelConfig cfg;
    cfg.hidden = 12;
    cfg.has_task_input = true;
    SeqModel model = SeqModel::init(cfg, 4);
    // zero the task-input rows of every gate's input weights
    for (Tensor& p : model.parameters()) {
        if (p.rank() == 2 && p.dim(0) == 3) {
            auto data = p.mutable_data();
            for (int r = 1; r < 3; ++r)
                for (int c = 0; c < p.dim(1); ++c) data[static_cast<size_t>(r * p.dim(1) + c)] = 0.0f;
        }
    }
    std::vector<double> window{0.3, 0.1, 0.4, 0.1, 0.5};
    auto a = model.predict(window, std::vector<float>{1.0f, 0.0f});
    auto b = model.predict(window, std::vector<float>{0.0f, 1.0f});
    CHECK(a.mean == b.mean);
    CHECK(a.sigma == b.sigma);
}

TEST_CASE("training is deterministic given seed, config and data") {
    GenerativeParams params;
    auto data = generate_blocks(8, 400, params);
    SeqModelConfig cfg;
    cfg.has_task_input = true;
    SeqModel a = SeqModel::init(cfg, 21);
    SeqModel b = SeqModel::init(cfg, 21);
    auto ra = train_toy(a, data, ZSource::ground_truth);
    auto rb = train_toy(b, data, ZSource::ground_truth);
    CHECK(ra.step_losses == rb.step_losses);
}

TEST_CASE("loss curve bookkeeping and validation") {
    GenerativeParams params;
    auto data = generate_blocks(2, 300, params);
    SeqModelConfig cfg;
    cfg.has_task_input = false;
    SeqModel model = SeqModel::init(cfg, 2);
    auto result = train_toy(model, data, ZSource::none);
    CHECK(result.step_losses.size() == 300 - 5);
    CHECK(result.block_losses.size() == static_cast<size_t>(data.n_blocks()));
    CHECK(result.last_block_label == data.z_true.back());

    BlockSequence tiny;
    tiny.observations = {0.1, 0.2, 0.3};
    tiny.z_true = {0, 0, 0};
    tiny.block_starts = {0};
    SeqModel fresh = SeqModel::init(cfg, 2);
    CHECK_THROWS_AS(train_toy(fresh, tiny, ZSource::none), Error);
}

TEST_CASE("trained model predicts the block mean under the correct context") {
    const auto& t = trained();
    std::vector<double> window(5, 0.2);
    Tensor z = t.gbi.map_task_label(0);
    std::vector<float> probs(z.data().begin(), z.data().end());
    auto pred = t.gbi.predict(window, probs);
    CHECK(std::fabs(pred.mean - 0.2) < 0.05);

    Tensor z1 = t.gbi.map_task_label(1);
    std::vector<float> probs1(z1.data().begin(), z1.data().end());
    auto pred1 = t.gbi.predict(std::vector<double>(5, 0.8), probs1);
    CHECK(std::fabs(pred1.mean - 0.8) < 0.05);
}

TEST_CASE("wrong context hurts held-out within-block loss") {
    const auto& t = trained();
    GenerativeParams params;
    auto held = generate_blocks(77, 6500, params);  // ~135 blocks
    int checked = 0;
    int right_wins = 0;
    for (int b = 0; b < held.n_blocks(); ++b) {
        auto [start, end] = held.block_range(b);
        if (end - start < 25 || start < 5) continue;
        const int label = held.z_true[static_cast<size_t>(start)];
        double right = 0.0, wrong = 0.0;
        for (int target = start + 15; target < end; ++target) {
            std::span<const double> window(held.observations.data() + target - 5, 5);
            const double x = held.observations[static_cast<size_t>(target)];
            Tensor zr = t.gbi.map_task_label(label);
            Tensor zw = t.gbi.map_task_label(1 - label);
            auto pr = t.gbi.predict(window, std::vector<float>(zr.data().begin(), zr.data().end()));
            auto pw = t.gbi.predict(window, std::vector<float>(zw.data().begin(), zw.data().end()));
            auto nll = [](const GaussianPrediction& p, double target_x) {
                const double d = p.mean - target_x;
                return d * d / (2.0 * p.sigma * p.sigma) + std::log(p.sigma);
            };
            right += nll(pr, x);
            wrong += nll(pw, x);
        }
        ++checked;
        if (right < wrong) ++right_wins;
    }
    CHECK(checked >= 100);
    CHECK(right_wins == checked);
}

TEST_CASE("task variance separates modules more in the task-aware model") {
    const auto& t = trained();
    auto gbi_var = task_variance(t.gbi, t.data, 0.25);
    auto lstm_var = task_variance(t.lstm, t.data, 0.25);
    CHECK(gbi_var.active_units[0].size() == 25);
    CHECK(gbi_var.shared_ratio >= 0.0);
    CHECK(gbi_var.shared_ratio <= 1.0);
    CHECK(gbi_var.shared_ratio < lstm_var.shared_ratio);
}

TEST_CASE("task variance edge cases") {
    // identical sample sets for both tasks -> identical top sets
    SeqModelConfig cfg;
    cfg.hidden = 8;
    cfg.has_task_input = false;
    SeqModel model = SeqModel::init(cfg, 5);
    BlockSequence data;
    Rng rng(6);
    for (int i = 0; i < 40; ++i) {
        data.observations.push_back(rng.uniform(0.0, 1.0));
        data.z_true.push_back(0);
    }
    auto obs_copy = data.observations;
    for (int i = 0; i < 40; ++i) {
        data.observations.push_back(obs_copy[static_cast<size_t>(i)]);
        data.z_true.push_back(1);
    }
    data.block_starts = {0, 40};
    auto result = task_variance(model, data, 0.25);
    CHECK(result.shared_ratio == 1.0);

    BlockSequence empty_task = data;
    for (auto& z : empty_task.z_true) z = 0;
    CHECK_THROWS_AS(task_variance(model, empty_task, 0.25), Error);
}

TEST_CASE("checkpoint round trip restores the exact model") {
    const auto& t = trained();
    const std::string path =
        (std::filesystem::temp_directory_path() / "gbi_seq_roundtrip.ckpt").string();
    t.gbi.to_checkpoint(41, 4995).save(path);
    Checkpoint loaded = Checkpoint::load(path);
    SeqModel restored = SeqModel::from_checkpoint(loaded);
    CHECK(restored.config().has_task_input);
    CHECK(restored.config().hidden == 100);

    std::vector<double> window{0.15, 0.22, 0.18, 0.25, 0.2};
    Tensor z = t.gbi.map_task_label(0);
    std::vector<float> probs(z.data().begin(), z.data().end());
    auto a = t.gbi.predict(window, probs);
    auto b = restored.predict(window, probs);
    CHECK(a.mean == b.mean);
    CHECK(a.sigma == b.sigma);
    std::remove(path.c_str());

    Checkpoint wrong = loaded;
    wrong.metadata_json = R"({"model":"autoencoder"})";
    CHECK_THROWS_AS(SeqModel::from_checkpoint(wrong), Error);
}
