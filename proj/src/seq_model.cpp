#include "gbi/seq_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <json.hpp>

#include "gbi/rng.hpp"

namespace gbi {

using json = nlohmann::json;

namespace {
constexpr const char* kGateNames[4] = {"i", "f", "g", "o"};
}

SeqModel SeqModel::init(const SeqModelConfig& cfg, uint64_t seed) {
    if (cfg.hidden < 1 || cfg.history < 1) throw Error("SeqModel: hidden and history must be >= 1");
    SeqModel m;
    m.cfg_ = cfg;
    m.input_dim_ = 1 + (cfg.has_task_input ? cfg.task_dim : 0);

    Rng rng(seed);
    const float bound = 1.0f / std::sqrt(static_cast<float>(cfg.hidden));
    auto uniform_tensor = [&](Shape shape) {
        std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
        for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
        return Tensor::from(std::move(shape), std::move(data), true);
    };

    for (int gate = 0; gate < 4; ++gate) {
        m.w_x_[gate] = uniform_tensor({m.input_dim_, cfg.hidden});
        m.w_h_[gate] = uniform_tensor({cfg.hidden, cfg.hidden});
        m.b_[gate] = uniform_tensor({cfg.hidden});
    }
    {
        // forget gate starts open
        auto fb = m.b_[1].mutable_data();
        for (float& v : fb) v = 1.0f;
    }
    m.w_out_ = uniform_tensor({cfg.hidden, 2});
    m.b_out_ = uniform_tensor({2});
    m.zero_bias_ = Tensor::zeros({cfg.hidden});
    return m;
}

std::vector<Tensor> SeqModel::parameters() {
    std::vector<Tensor> ps;
    for (int gate = 0; gate < 4; ++gate) {
        ps.push_back(w_x_[gate]);
        ps.push_back(w_h_[gate]);
        ps.push_back(b_[gate]);
    }
    ps.push_back(w_out_);
    ps.push_back(b_out_);
    return ps;
}

void SeqModel::set_frozen(bool frozen) {
    for (Tensor& p : parameters()) p.set_requires_grad(!frozen);
}

SeqModel::ForwardResult SeqModel::forward(std::span<const double> window, const Tensor& z_in) const {
    if (static_cast<int>(window.size()) != cfg_.history)
        throw Error("SeqModel: window length " + std::to_string(window.size()) + ", expected " +
                    std::to_string(cfg_.history));
    if (cfg_.has_task_input != z_in.defined())
        throw Error(cfg_.has_task_input ? "SeqModel: task input required but missing"
                                        : "SeqModel: task input passed to a task-free model");
    if (z_in.defined() && z_in.numel() != cfg_.task_dim)
        throw Error("SeqModel: task input size " + std::to_string(z_in.numel()) + ", expected " +
                    std::to_string(cfg_.task_dim));

    Tensor h = Tensor::zeros({cfg_.hidden});
    Tensor c = Tensor::zeros({cfg_.hidden});
    for (int t = 0; t < cfg_.history; ++t) {
        Tensor xt = Tensor::scalar(static_cast<float>(window[static_cast<size_t>(t)]));
        Tensor in_vec = cfg_.has_task_input ? concat({xt, z_in}, 0) : xt;
        Tensor pre[4];
        for (int gate = 0; gate < 4; ++gate)
            pre[gate] = add(linear(in_vec, w_x_[gate], b_[gate]), linear(h, w_h_[gate], zero_bias_));
        Tensor ig = sigmoid(pre[0]);
        Tensor fg = sigmoid(pre[1]);
        Tensor gg = tanh(pre[2]);
        Tensor og = sigmoid(pre[3]);
        c = add(mul(fg, c), mul(ig, gg));
        h = mul(og, tanh(c));
    }
    Tensor out = linear(h, w_out_, b_out_);
    Tensor mean_t = slice(out, 0, 0, 1);
    Tensor sigma_t = add(softplus(slice(out, 0, 1, 1)), Tensor::scalar(cfg_.sigma_floor));
    return {mean_t, sigma_t, h};
}

Tensor SeqModel::map_task_input(const Tensor& z_logits) const {
    return softmax(z_logits, 0);
}

Tensor SeqModel::map_task_label(int label) const {
    if (label < 0 || label >= cfg_.task_dim) throw Error("SeqModel: label out of range");
    Tensor logits = Tensor::zeros({cfg_.task_dim});
    logits.mutable_data()[static_cast<size_t>(label)] = 1.0f;
    return softmax(scale(logits, 1.0f / cfg_.z_input_temp), 0);
}

Tensor SeqModel::input_probs_tensor(std::span<const float> z_probs) const {
    if (!cfg_.has_task_input) {
        if (!z_probs.empty()) throw Error("SeqModel: task input passed to a task-free model");
        return Tensor{};
    }
    if (static_cast<int>(z_probs.size()) != cfg_.task_dim)
        throw Error("SeqModel: task probs size mismatch");
    return Tensor::from({cfg_.task_dim}, std::vector<float>(z_probs.begin(), z_probs.end()));
}

GaussianPrediction SeqModel::predict(std::span<const double> window,
                                     std::span<const float> z_probs) const {
    auto r = forward(window, input_probs_tensor(z_probs));
    return {r.mean.item(), r.sigma.item()};
}

std::vector<float> SeqModel::hidden_activations(std::span<const double> window,
                                                std::span<const float> z_probs) const {
    auto r = forward(window, input_probs_tensor(z_probs));
    return {r.hidden.data().begin(), r.hidden.data().end()};
}

Checkpoint SeqModel::to_checkpoint(uint64_t seed, int64_t steps) const {
    Checkpoint ckpt;
    for (int gate = 0; gate < 4; ++gate) {
        ckpt.add(std::string("lstm.w_x") + kGateNames[gate], w_x_[gate]);
        ckpt.add(std::string("lstm.w_h") + kGateNames[gate], w_h_[gate]);
        ckpt.add(std::string("lstm.b_") + kGateNames[gate], b_[gate]);
    }
    ckpt.add("head.w", w_out_);
    ckpt.add("head.b", b_out_);
    json meta;
    meta["model"] = "seq";
    meta["hidden"] = cfg_.hidden;
    meta["history"] = cfg_.history;
    meta["has_task_input"] = cfg_.has_task_input;
    meta["task_dim"] = cfg_.task_dim;
    meta["lr"] = cfg_.lr;
    meta["z_input_temp"] = cfg_.z_input_temp;
    meta["seed"] = seed;
    meta["steps"] = steps;
    ckpt.metadata_json = meta.dump();
    return ckpt;
}

SeqModel SeqModel::from_checkpoint(const Checkpoint& ckpt) {
    json meta = json::parse(ckpt.metadata_json);
    if (meta.value("model", "") != "seq")
        throw Error("checkpoint: expected a seq model, metadata says '" +
                    meta.value("model", std::string("?")) + "'");
    SeqModelConfig cfg;
    cfg.hidden = meta.at("hidden").get<int>();
    cfg.history = meta.at("history").get<int>();
    cfg.has_task_input = meta.at("has_task_input").get<bool>();
    cfg.task_dim = meta.at("task_dim").get<int>();
    cfg.lr = meta.value("lr", 1e-3f);
    cfg.z_input_temp = meta.value("z_input_temp", 0.1f);

    SeqModel m = SeqModel::init(cfg, 0);
    const int in_dim = 1 + (cfg.has_task_input ? cfg.task_dim : 0);
    for (int gate = 0; gate < 4; ++gate) {
        m.w_x_[gate] = ckpt.require(std::string("lstm.w_x") + kGateNames[gate], {in_dim, cfg.hidden});
        m.w_h_[gate] = ckpt.require(std::string("lstm.w_h") + kGateNames[gate], {cfg.hidden, cfg.hidden});
        m.b_[gate] = ckpt.require(std::string("lstm.b_") + kGateNames[gate], {cfg.hidden});
    }
    m.w_out_ = ckpt.require("head.w", {cfg.hidden, 2});
    m.b_out_ = ckpt.require("head.b", {2});
    for (Tensor& p : m.parameters()) p.set_requires_grad(true);
    return m;
}

ToyTrainResult train_toy(SeqModel& model, const BlockSequence& data, ZSource z_source, int trim) {
    const int history = model.config().history;
    const int n = static_cast<int>(data.observations.size());
    if (n < history + 1) throw Error("train_toy: need at least history+1 observations");
    if (data.block_starts.empty()) throw Error("train_toy: sequence has no blocks");
    if (z_source == ZSource::ground_truth && !model.config().has_task_input)
        throw Error("train_toy: ground_truth z_source requires a task-input model");

    Adam opt(model.parameters(), model.config().lr);
    ToyTrainResult result;
    result.step_losses.reserve(static_cast<size_t>(n - history));

    std::vector<double> block_sum(static_cast<size_t>(data.n_blocks()), 0.0);
    std::vector<int> block_count(static_cast<size_t>(data.n_blocks()), 0);
    std::vector<double> trim_sum(static_cast<size_t>(data.n_blocks()), 0.0);
    std::vector<int> trim_count(static_cast<size_t>(data.n_blocks()), 0);

    for (int t = history; t < n; ++t) {
        std::span<const double> window(data.observations.data() + t - history,
                                       static_cast<size_t>(history));
        Tape tape;
        Tensor z_in;
        if (z_source == ZSource::ground_truth)
            z_in = model.map_task_label(data.z_true[static_cast<size_t>(t)]);
        auto fwd = model.forward(window, z_in);
        Tensor target = Tensor::scalar(static_cast<float>(data.observations[static_cast<size_t>(t)]));
        Tensor loss = gaussian_nll_loss(fwd.mean, fwd.sigma, target);
        const float loss_v = loss.item();
        tape.backward(loss);
        opt.step();

        result.step_losses.push_back(loss_v);
        const int block = data.block_of(t);
        block_sum[static_cast<size_t>(block)] += loss_v;
        block_count[static_cast<size_t>(block)] += 1;
        if (t - data.block_starts[static_cast<size_t>(block)] >= trim) {
            trim_sum[static_cast<size_t>(block)] += loss_v;
            trim_count[static_cast<size_t>(block)] += 1;
        }
    }

    for (int b = 0; b < data.n_blocks(); ++b) {
        const auto bi = static_cast<size_t>(b);
        result.block_losses.push_back(block_count[bi] ? block_sum[bi] / block_count[bi]
                                                      : std::numeric_limits<double>::quiet_NaN());
        result.block_losses_trimmed.push_back(trim_count[bi] ? trim_sum[bi] / trim_count[bi]
                                                             : std::numeric_limits<double>::quiet_NaN());
    }
    result.last_block_label = data.z_true.back();
    return result;
}

TaskVarianceResult task_variance(const SeqModel& model, const BlockSequence& data,
                                 double active_fraction) {
    const int history = model.config().history;
    const int hidden = model.config().hidden;
    const int n = static_cast<int>(data.observations.size());

    // Welford accumulators per task
    std::vector<std::vector<double>> mean(2, std::vector<double>(static_cast<size_t>(hidden), 0.0));
    std::vector<std::vector<double>> m2(2, std::vector<double>(static_cast<size_t>(hidden), 0.0));
    std::vector<int> counts(2, 0);

    for (int t = history; t < n; ++t) {
        std::span<const double> window(data.observations.data() + t - history,
                                       static_cast<size_t>(history));
        const int task = data.z_true[static_cast<size_t>(t)];
        std::vector<float> z_probs;
        if (model.config().has_task_input) {
            Tensor z = model.map_task_label(task);
            z_probs.assign(z.data().begin(), z.data().end());
        }
        const std::vector<float> h = model.hidden_activations(window, z_probs);
        counts[static_cast<size_t>(task)] += 1;
        const double k = counts[static_cast<size_t>(task)];
        for (int u = 0; u < hidden; ++u) {
            const auto ui = static_cast<size_t>(u);
            const double delta = h[ui] - mean[static_cast<size_t>(task)][ui];
            mean[static_cast<size_t>(task)][ui] += delta / k;
            m2[static_cast<size_t>(task)][ui] += delta * (h[ui] - mean[static_cast<size_t>(task)][ui]);
        }
    }
    if (counts[0] < 2 || counts[1] < 2)
        throw Error("task_variance: both tasks need at least two samples");

    TaskVarianceResult result;
    const int n_active = std::max(1, static_cast<int>(hidden * active_fraction));
    for (int task = 0; task < 2; ++task) {
        std::vector<double> var(static_cast<size_t>(hidden));
        for (int u = 0; u < hidden; ++u)
            var[static_cast<size_t>(u)] =
                m2[static_cast<size_t>(task)][static_cast<size_t>(u)] / (counts[static_cast<size_t>(task)] - 1);
        std::vector<int> order(static_cast<size_t>(hidden));
        for (int u = 0; u < hidden; ++u) order[static_cast<size_t>(u)] = u;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return var[static_cast<size_t>(a)] > var[static_cast<size_t>(b)]; });
        std::vector<int> active(order.begin(), order.begin() + n_active);
        std::sort(active.begin(), active.end());
        result.per_unit_variance.push_back(std::move(var));
        result.active_units.push_back(std::move(active));
    }

    std::vector<int> inter, uni;
    std::set_intersection(result.active_units[0].begin(), result.active_units[0].end(),
                          result.active_units[1].begin(), result.active_units[1].end(),
                          std::back_inserter(inter));
    std::set_union(result.active_units[0].begin(), result.active_units[0].end(),
                   result.active_units[1].begin(), result.active_units[1].end(),
                   std::back_inserter(uni));
    result.shared_ratio = uni.empty() ? 1.0 : static_cast<double>(inter.size()) / uni.size();
    return result;
}

}  // namespace gbi
