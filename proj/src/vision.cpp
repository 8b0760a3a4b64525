#include "gbi/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "gbi/ops.hpp"
#include "gbi/rng.hpp"

namespace gbi {

using json = nlohmann::json;

namespace {

uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("idx: truncated header in '" + path + "'");
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

Tensor LabeledImageSet::batch(std::span<const int> indices) const {
    const size_t px = static_cast<size_t>(rows) * cols;
    std::vector<float> data(indices.size() * px);
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto img = image(indices[i]);
        std::copy(img.begin(), img.end(), data.begin() + i * px);
    }
    return Tensor::from({static_cast<int>(indices.size()), 1, rows, cols}, std::move(data));
}

std::span<const float> LabeledImageSet::image(int index) const {
    const size_t px = static_cast<size_t>(rows) * cols;
    return {pixels.data() + static_cast<size_t>(index) * px, px};
}

void LabeledImageSet::standardize() {
    if (pixels.empty()) throw Error("standardize: empty image set");
    double acc = 0.0;
    for (float p : pixels) acc += p;
    const double mu = acc / static_cast<double>(pixels.size());
    double var = 0.0;
    for (float p : pixels) var += (p - mu) * (p - mu);
    const double sd = std::sqrt(var / static_cast<double>(pixels.size()));
    if (!(sd > 0.0)) throw Error("standardize: zero pixel variance");
    for (float& p : pixels) p = static_cast<float>((p - mu) / sd);
    // original scale is kept so exports can undo the full chain
    norm.standardized = true;
    norm.mean = norm.mean + norm.stddev * static_cast<float>(mu);
    norm.stddev = norm.stddev * static_cast<float>(sd);
}

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgf(images_path, std::ios::binary);
    if (!imgf) throw Error("idx: cannot open '" + images_path + "'");
    const uint32_t img_magic = read_be_u32(imgf, images_path);
    if (img_magic != 0x00000803u)
        throw Error("idx: bad image magic in '" + images_path + "': expected 0x00000803, found 0x" +
                    [&] { char b[16]; std::snprintf(b, sizeof(b), "%08x", img_magic); return std::string(b); }());
    const uint32_t count = read_be_u32(imgf, images_path);
    const uint32_t rows = read_be_u32(imgf, images_path);
    const uint32_t cols = read_be_u32(imgf, images_path);

    std::ifstream labf(labels_path, std::ios::binary);
    if (!labf) throw Error("idx: cannot open '" + labels_path + "'");
    const uint32_t lab_magic = read_be_u32(labf, labels_path);
    if (lab_magic != 0x00000801u)
        throw Error("idx: bad label magic in '" + labels_path + "': expected 0x00000801, found 0x" +
                    [&] { char b[16]; std::snprintf(b, sizeof(b), "%08x", lab_magic); return std::string(b); }());
    const uint32_t lab_count = read_be_u32(labf, labels_path);
    if (lab_count != count)
        throw Error("idx: count mismatch, " + std::to_string(count) + " images vs " +
                    std::to_string(lab_count) + " labels");

    LabeledImageSet set;
    set.count = static_cast<int>(count);
    set.rows = static_cast<int>(rows);
    set.cols = static_cast<int>(cols);

    const size_t n_px = static_cast<size_t>(count) * rows * cols;
    std::vector<unsigned char> raw(n_px);
    if (!imgf.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n_px)))
        throw Error("idx: truncated pixel data in '" + images_path + "'");
    set.pixels.resize(n_px);
    for (size_t i = 0; i < n_px; ++i) set.pixels[i] = static_cast<float>(raw[i]) / 255.0f;

    std::vector<unsigned char> lab(count);
    if (!labf.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(count)))
        throw Error("idx: truncated label data in '" + labels_path + "'");
    set.labels.assign(lab.begin(), lab.end());
    for (int y : set.labels)
        if (y < 0 || y > 9) throw Error("idx: label " + std::to_string(y) + " out of range");
    return set;
}

namespace {

Tensor uniform_init(Shape shape, int fan_in, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
    return Tensor::from(std::move(shape), std::move(data), true);
}

}  // namespace

Autoencoder Autoencoder::init(const VisionConfig& cfg, uint64_t seed) {
    if (cfg.latent_dim != 8) throw Error("Autoencoder: the conv stack fixes latent_dim at 8");
    Autoencoder m;
    m.cfg_ = cfg;
    Rng rng(seed);
    // encoder 1 -> 2 -> 4 -> 8
    m.ew_[0] = uniform_init({2, 1, 3, 3}, 1 * 9, rng);
    m.eb_[0] = uniform_init({2}, 1 * 9, rng);
    m.ew_[1] = uniform_init({4, 2, 3, 3}, 2 * 9, rng);
    m.eb_[1] = uniform_init({4}, 2 * 9, rng);
    m.ew_[2] = uniform_init({8, 4, 7, 7}, 4 * 49, rng);
    m.eb_[2] = uniform_init({8}, 4 * 49, rng);
    // decoder mirrors the stack; the first stage also absorbs the class input.
    // transposed convs scale by the per-position fan (out_channels * k^2), and
    // the relu-feeding biases start slightly positive so the paint path is
    // alive at the first update
    const int dec_in = cfg.latent_dim + cfg.class_dim;
    m.dw_[0] = uniform_init({dec_in, 4, 7, 7}, 4 * 49, rng);
    m.db_[0] = Tensor::full({4}, 0.05f, true);
    m.dw_[1] = uniform_init({4, 2, 3, 3}, 2 * 9, rng);
    m.db_[1] = Tensor::full({2}, 0.05f, true);
    m.dw_[2] = uniform_init({2, 1, 3, 3}, 1 * 9, rng);
    m.db_[2] = uniform_init({1}, 1 * 9, rng);
    return m;
}

std::vector<Tensor> Autoencoder::parameters() {
    std::vector<Tensor> ps;
    for (int i = 0; i < 3; ++i) {
        ps.push_back(ew_[i]);
        ps.push_back(eb_[i]);
    }
    for (int i = 0; i < 3; ++i) {
        ps.push_back(dw_[i]);
        ps.push_back(db_[i]);
    }
    return ps;
}

void Autoencoder::set_frozen(bool frozen) {
    for (Tensor& p : parameters()) p.set_requires_grad(!frozen);
}

Tensor Autoencoder::encode(const Tensor& images) const {
    Tensor h = relu(conv2d(images, ew_[0], eb_[0], 2, 1));   // 28 -> 14
    h = relu(conv2d(h, ew_[1], eb_[1], 2, 1));               // 14 -> 7
    h = conv2d(h, ew_[2], eb_[2], 1, 0);                     // 7 -> 1
    return reshape(h, {h.dim(0), cfg_.latent_dim});
}

Tensor Autoencoder::decode(const Tensor& latent, const Tensor& class_in) const {
    Tensor z = latent;
    if (cfg_.class_dim > 0) {
        if (!class_in.defined()) throw Error("Autoencoder: class input required");
        z = concat({latent, class_in}, 1);
    }
    const int n = z.dim(0);
    Tensor h = reshape(z, {n, cfg_.latent_dim + cfg_.class_dim, 1, 1});
    h = relu(conv2d_transpose(h, dw_[0], db_[0], 1, 0));         // 1 -> 7
    h = relu(conv2d_transpose(h, dw_[1], db_[1], 2, 1, 1));      // 7 -> 14
    return conv2d_transpose(h, dw_[2], db_[2], 2, 1, 1);         // 14 -> 28
}

Tensor Autoencoder::map_class_input(const Tensor& z_logits) const {
    return softmax(z_logits, 1);
}

Tensor Autoencoder::map_class_labels(std::span<const int> labels) const {
    const int k = cfg_.class_dim;
    std::vector<float> data(labels.size() * static_cast<size_t>(k), 0.0f);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw Error("Autoencoder: label " + std::to_string(labels[i]) + " out of range");
        data[i * static_cast<size_t>(k) + static_cast<size_t>(labels[i])] = 1.0f;
    }
    Tensor onehot = Tensor::from({static_cast<int>(labels.size()), k}, std::move(data));
    return softmax(scale(onehot, 1.0f / cfg_.z_input_temp), 1);
}

namespace {

json vision_meta(const char* kind, const VisionConfig& cfg, uint64_t seed,
                 const Normalization& norm) {
    json meta;
    meta["model"] = kind;
    meta["image_size"] = cfg.image_size;
    meta["latent_dim"] = cfg.latent_dim;
    meta["class_dim"] = cfg.class_dim;
    meta["epochs"] = cfg.epochs;
    meta["batch"] = cfg.batch;
    meta["lr"] = cfg.lr;
    meta["z_input_temp"] = cfg.z_input_temp;
    meta["seed"] = seed;
    meta["standardized"] = norm.standardized;
    meta["norm_mean"] = norm.mean;
    meta["norm_std"] = norm.stddev;
    return meta;
}

VisionConfig vision_config_from_meta(const json& meta) {
    VisionConfig cfg;
    cfg.image_size = meta.value("image_size", 28);
    cfg.latent_dim = meta.value("latent_dim", 8);
    cfg.class_dim = meta.value("class_dim", 10);
    cfg.epochs = meta.value("epochs", 4);
    cfg.batch = meta.value("batch", 128);
    cfg.lr = meta.value("lr", 1e-3f);
    cfg.z_input_temp = meta.value("z_input_temp", 0.1f);
    return cfg;
}

}  // namespace

Checkpoint Autoencoder::to_checkpoint(uint64_t seed, const Normalization& norm) const {
    Checkpoint ckpt;
    const char* enc[3] = {"enc.conv1", "enc.conv2", "enc.conv3"};
    const char* dec[3] = {"dec.convt1", "dec.convt2", "dec.convt3"};
    for (int i = 0; i < 3; ++i) {
        ckpt.add(std::string(enc[i]) + ".w", ew_[i]);
        ckpt.add(std::string(enc[i]) + ".b", eb_[i]);
    }
    for (int i = 0; i < 3; ++i) {
        ckpt.add(std::string(dec[i]) + ".w", dw_[i]);
        ckpt.add(std::string(dec[i]) + ".b", db_[i]);
    }
    ckpt.metadata_json = vision_meta("autoencoder", cfg_, seed, norm).dump();
    return ckpt;
}

Autoencoder Autoencoder::from_checkpoint(const Checkpoint& ckpt) {
    json meta = json::parse(ckpt.metadata_json);
    if (meta.value("model", "") != "autoencoder")
        throw Error("checkpoint: expected an autoencoder, metadata says '" +
                    meta.value("model", std::string("?")) + "'");
    Autoencoder m = Autoencoder::init(vision_config_from_meta(meta), 0);
    const int dec_in = m.cfg_.latent_dim + m.cfg_.class_dim;
    m.ew_[0] = ckpt.require("enc.conv1.w", {2, 1, 3, 3});
    m.eb_[0] = ckpt.require("enc.conv1.b", {2});
    m.ew_[1] = ckpt.require("enc.conv2.w", {4, 2, 3, 3});
    m.eb_[1] = ckpt.require("enc.conv2.b", {4});
    m.ew_[2] = ckpt.require("enc.conv3.w", {8, 4, 7, 7});
    m.eb_[2] = ckpt.require("enc.conv3.b", {8});
    m.dw_[0] = ckpt.require("dec.convt1.w", {dec_in, 4, 7, 7});
    m.db_[0] = ckpt.require("dec.convt1.b", {4});
    m.dw_[1] = ckpt.require("dec.convt2.w", {4, 2, 3, 3});
    m.db_[1] = ckpt.require("dec.convt2.b", {2});
    m.dw_[2] = ckpt.require("dec.convt3.w", {2, 1, 3, 3});
    m.db_[2] = ckpt.require("dec.convt3.b", {1});
    for (Tensor& p : m.parameters()) p.set_requires_grad(true);
    return m;
}

ConvClassifier ConvClassifier::init(const VisionConfig& cfg, uint64_t seed) {
    ConvClassifier m;
    m.cfg_ = cfg;
    Rng rng(seed ^ 0x5a5a5a5aULL);
    m.w_[0] = uniform_init({2, 1, 3, 3}, 1 * 9, rng);
    m.b_[0] = uniform_init({2}, 1 * 9, rng);
    m.w_[1] = uniform_init({4, 2, 3, 3}, 2 * 9, rng);
    m.b_[1] = uniform_init({4}, 2 * 9, rng);
    m.w_[2] = uniform_init({8, 4, 7, 7}, 4 * 49, rng);
    m.b_[2] = uniform_init({8}, 4 * 49, rng);
    m.head_w_ = uniform_init({8, 10}, 8, rng);
    m.head_b_ = uniform_init({10}, 8, rng);
    return m;
}

std::vector<Tensor> ConvClassifier::parameters() {
    std::vector<Tensor> ps;
    for (int i = 0; i < 3; ++i) {
        ps.push_back(w_[i]);
        ps.push_back(b_[i]);
    }
    ps.push_back(head_w_);
    ps.push_back(head_b_);
    return ps;
}

void ConvClassifier::set_frozen(bool frozen) {
    for (Tensor& p : parameters()) p.set_requires_grad(!frozen);
}

Tensor ConvClassifier::logits(const Tensor& images) const {
    Tensor h = relu(conv2d(images, w_[0], b_[0], 2, 1));
    h = relu(conv2d(h, w_[1], b_[1], 2, 1));
    h = conv2d(h, w_[2], b_[2], 1, 0);
    h = relu(reshape(h, {h.dim(0), 8}));
    return linear(h, head_w_, head_b_);
}

Checkpoint ConvClassifier::to_checkpoint(uint64_t seed, const Normalization& norm) const {
    Checkpoint ckpt;
    const char* names[3] = {"clf.conv1", "clf.conv2", "clf.conv3"};
    for (int i = 0; i < 3; ++i) {
        ckpt.add(std::string(names[i]) + ".w", w_[i]);
        ckpt.add(std::string(names[i]) + ".b", b_[i]);
    }
    ckpt.add("clf.head.w", head_w_);
    ckpt.add("clf.head.b", head_b_);
    ckpt.metadata_json = vision_meta("classifier", cfg_, seed, norm).dump();
    return ckpt;
}

ConvClassifier ConvClassifier::from_checkpoint(const Checkpoint& ckpt) {
    json meta = json::parse(ckpt.metadata_json);
    if (meta.value("model", "") != "classifier")
        throw Error("checkpoint: expected a classifier, metadata says '" +
                    meta.value("model", std::string("?")) + "'");
    ConvClassifier m = ConvClassifier::init(vision_config_from_meta(meta), 0);
    m.w_[0] = ckpt.require("clf.conv1.w", {2, 1, 3, 3});
    m.b_[0] = ckpt.require("clf.conv1.b", {2});
    m.w_[1] = ckpt.require("clf.conv2.w", {4, 2, 3, 3});
    m.b_[1] = ckpt.require("clf.conv2.b", {4});
    m.w_[2] = ckpt.require("clf.conv3.w", {8, 4, 7, 7});
    m.b_[2] = ckpt.require("clf.conv3.b", {8});
    m.head_w_ = ckpt.require("clf.head.w", {8, 10});
    m.head_b_ = ckpt.require("clf.head.b", {10});
    for (Tensor& p : m.parameters()) p.set_requires_grad(true);
    return m;
}

namespace {

std::vector<std::vector<int>> epoch_batches(int count, int batch, Rng& rng) {
    std::vector<int> order(static_cast<size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    for (int i = count - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[rng.below(static_cast<uint64_t>(i) + 1)]);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < count; start += batch) {
        const int end = std::min(start + batch, count);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

std::vector<int> all_indices(int count) {
    std::vector<int> ix(static_cast<size_t>(count));
    std::iota(ix.begin(), ix.end(), 0);
    return ix;
}

}  // namespace

VisionTrainReport train_autoencoder(Autoencoder& model, const LabeledImageSet& train,
                                    const LabeledImageSet& val, uint64_t seed) {
    Adam opt(model.parameters(), model.config().lr);
    Rng rng = Rng(seed).fork(7);
    VisionTrainReport report;

    auto eval_loss = [&](const LabeledImageSet& set) {
        double acc = 0.0;
        size_t n_batches = 0;
        const auto ix = all_indices(set.count);
        for (int start = 0; start < set.count; start += model.config().batch) {
            const int end = std::min(start + model.config().batch, set.count);
            std::span<const int> chunk(ix.data() + start, static_cast<size_t>(end - start));
            Tensor images = set.batch(chunk);
            Tensor class_in;
            if (model.config().class_dim > 0)
                class_in = model.map_class_labels(
                    std::span<const int>(set.labels.data() + start, chunk.size()));
            Tensor recon = model.decode(model.encode(images), class_in);
            acc += mse_loss(recon, images).item();
            ++n_batches;
        }
        return acc / static_cast<double>(n_batches);
    };

    for (int epoch = 0; epoch < model.config().epochs; ++epoch) {
        double epoch_loss = 0.0;
        size_t n_batches = 0;
        for (const auto& batch : epoch_batches(train.count, model.config().batch, rng)) {
            std::vector<int> labels;
            labels.reserve(batch.size());
            for (int i : batch) labels.push_back(train.labels[static_cast<size_t>(i)]);
            Tape tape;
            Tensor images = train.batch(batch);
            Tensor class_in;
            if (model.config().class_dim > 0) class_in = model.map_class_labels(labels);
            Tensor recon = model.decode(model.encode(images), class_in);
            Tensor loss = mse_loss(recon, images);
            epoch_loss += loss.item();
            ++n_batches;
            tape.backward(loss);
            opt.step();
        }
        report.train_losses.push_back(epoch_loss / static_cast<double>(n_batches));
        report.val_losses.push_back(eval_loss(val));
    }
    return report;
}

VisionTrainReport train_classifier(ConvClassifier& model, const LabeledImageSet& train,
                                   const LabeledImageSet& val, uint64_t seed) {
    Adam opt(model.parameters(), model.config().lr);
    Rng rng = Rng(seed).fork(8);
    VisionTrainReport report;

    auto eval_loss = [&](const LabeledImageSet& set) {
        double acc = 0.0;
        size_t n_batches = 0;
        const auto ix = all_indices(set.count);
        for (int start = 0; start < set.count; start += model.config().batch) {
            const int end = std::min(start + model.config().batch, set.count);
            std::span<const int> chunk(ix.data() + start, static_cast<size_t>(end - start));
            Tensor logits = model.logits(set.batch(chunk));
            acc += cross_entropy(logits, std::span<const int>(set.labels.data() + start, chunk.size()))
                       .item();
            ++n_batches;
        }
        return acc / static_cast<double>(n_batches);
    };

    for (int epoch = 0; epoch < model.config().epochs; ++epoch) {
        double epoch_loss = 0.0;
        size_t n_batches = 0;
        for (const auto& batch : epoch_batches(train.count, model.config().batch, rng)) {
            std::vector<int> labels;
            labels.reserve(batch.size());
            for (int i : batch) labels.push_back(train.labels[static_cast<size_t>(i)]);
            Tape tape;
            Tensor loss = cross_entropy(model.logits(train.batch(batch)), labels);
            epoch_loss += loss.item();
            ++n_batches;
            tape.backward(loss);
            opt.step();
        }
        report.train_losses.push_back(epoch_loss / static_cast<double>(n_batches));
        report.val_losses.push_back(eval_loss(val));
    }
    return report;
}

ClassifyMethod classify_method_from_string(const std::string& name) {
    if (name == "gbi") return ClassifyMethod::gbi;
    if (name == "iterative") return ClassifyMethod::iterative;
    if (name == "likelihood") return ClassifyMethod::likelihood;
    if (name == "nbi") return ClassifyMethod::nbi;
    if (name == "discriminative") return ClassifyMethod::discriminative;
    throw Error("classify: unknown method '" + name + "'");
}

std::string classify_method_name(ClassifyMethod method) {
    switch (method) {
        case ClassifyMethod::gbi: return "gbi";
        case ClassifyMethod::iterative: return "iterative";
        case ClassifyMethod::likelihood: return "likelihood";
        case ClassifyMethod::nbi: return "nbi";
        case ClassifyMethod::discriminative: return "discriminative";
    }
    throw Error("classify: bad method enum");
}

int classify_runs(ClassifyMethod method, const InferenceConfig& cfg) {
    switch (method) {
        case ClassifyMethod::gbi: return 1;
        case ClassifyMethod::iterative: return cfg.iter_steps;
        case ClassifyMethod::likelihood: return 10;
        case ClassifyMethod::nbi: return 10;
        case ClassifyMethod::discriminative: return 1;
    }
    throw Error("classify: bad method enum");
}

namespace {

// Per image: gradient of the summed per-image pixel-mean reconstruction loss
// with respect to the class-belief logits. Rows are independent, so batch
// size never changes an image's gradient.
std::vector<std::vector<float>> batched_class_gradients(const Autoencoder& ae, const Tensor& images,
                                                        Tensor& z_logits) {
    const int n = images.dim(0);
    const int k = ae.config().class_dim;
    Tape tape;
    Tensor latent = ae.encode(images);
    Tensor class_in = ae.map_class_input(z_logits);
    Tensor recon = ae.decode(latent, class_in);
    Tensor diff = sub(recon, images);
    Tensor loss = scale(sum(mul(diff, diff)),
                        1.0f / static_cast<float>(images.dim(2) * images.dim(3)));
    tape.backward(loss);

    std::vector<std::vector<float>> grads(static_cast<size_t>(n));
    auto g = z_logits.grad();
    for (int i = 0; i < n; ++i)
        grads[static_cast<size_t>(i)].assign(g.begin() + static_cast<size_t>(i) * k,
                                             g.begin() + static_cast<size_t>(i + 1) * k);
    return grads;
}

std::vector<float> normalized_belief(std::span<const float> gradient) {
    double mu = 0.0;
    for (float g : gradient) mu += g;
    mu /= static_cast<double>(gradient.size());
    double var = 0.0;
    for (float g : gradient) var += (g - mu) * (g - mu);
    const double sd = std::sqrt(var / static_cast<double>(gradient.size())) + 1e-12;
    std::vector<float> logits(gradient.size());
    for (size_t i = 0; i < gradient.size(); ++i)
        logits[i] = static_cast<float>(-(gradient[i] - mu) / sd);
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    float denom = 0.0f;
    for (float& v : logits) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (float& v : logits) v /= denom;
    return logits;
}

// Per-image pixel-mean squared reconstruction error under a forced label.
std::vector<double> per_image_mse(const Autoencoder& ae, const Tensor& images, const Tensor& latent,
                                  int label) {
    const int n = images.dim(0);
    std::vector<int> labels(static_cast<size_t>(n), label);
    Tensor recon = ae.decode(latent, ae.map_class_labels(labels));
    auto rv = recon.data();
    auto xv = images.data();
    const size_t px = static_cast<size_t>(images.dim(2)) * images.dim(3);
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (size_t p = 0; p < px; ++p) {
            const size_t ix = static_cast<size_t>(i) * px + p;
            const double d = static_cast<double>(rv[ix]) - xv[ix];
            acc += d * d;
        }
        out[static_cast<size_t>(i)] = acc / static_cast<double>(px);
    }
    return out;
}

}  // namespace

ClassifyResult classify(const Autoencoder& ae, const ConvClassifier* classifier,
                        const LabeledImageSet& data, ClassifyMethod method,
                        const InferenceConfig& icfg, int limit) {
    if (ae.config().class_dim != 10 && method != ClassifyMethod::discriminative)
        throw Error("classify: needs a label-conditioned autoencoder");
    if (method == ClassifyMethod::discriminative && classifier == nullptr)
        throw Error("classify: discriminative method needs a classifier");
    icfg.validate();

    const int n = limit < 0 ? data.count : std::min(limit, data.count);
    const int k = 10;
    const int batch = 256;
    ClassifyResult result;
    result.predicted.reserve(static_cast<size_t>(n));
    result.scores.reserve(static_cast<size_t>(n));
    result.runs_per_inference = classify_runs(method, icfg);

    const auto ix = all_indices(n);
    for (int start = 0; start < n; start += batch) {
        const int end = std::min(start + batch, n);
        std::span<const int> chunk(ix.data() + start, static_cast<size_t>(end - start));
        Tensor images = data.batch(chunk);
        const int bn = images.dim(0);

        switch (method) {
            case ClassifyMethod::gbi: {
                Tensor z_logits = Tensor::zeros({bn, k}, true);
                auto grads = batched_class_gradients(ae, images, z_logits);
                for (const auto& g : grads) {
                    std::vector<float> belief = normalized_belief(g);
                    result.predicted.push_back(static_cast<int>(
                        std::min_element(g.begin(), g.end()) - g.begin()));
                    result.scores.push_back(std::move(belief));
                }
                break;
            }
            case ClassifyMethod::iterative: {
                Tensor z_logits = Tensor::zeros({bn, k}, true);
                Tensor latent = ae.encode(images);  // constant across iterations
                Adam opt({z_logits}, icfg.iter_lr, 0.9f, 0.999f, 1e-8f, icfg.iter_l2);
                for (int step = 0; step < icfg.iter_steps; ++step) {
                    Tape tape;
                    Tensor class_in = ae.map_class_input(z_logits);
                    Tensor recon = ae.decode(latent, class_in);
                    Tensor diff = sub(recon, images);
                    Tensor loss = scale(sum(mul(diff, diff)),
                                        1.0f / static_cast<float>(images.dim(2) * images.dim(3)));
                    tape.backward(loss);
                    opt.step();
                }
                auto lv = z_logits.data();
                for (int i = 0; i < bn; ++i) {
                    std::vector<float> row(lv.begin() + static_cast<size_t>(i) * k,
                                           lv.begin() + static_cast<size_t>(i + 1) * k);
                    result.predicted.push_back(static_cast<int>(
                        std::max_element(row.begin(), row.end()) - row.begin()));
                    result.scores.push_back(std::move(row));
                }
                break;
            }
            case ClassifyMethod::likelihood: {
                Tensor latent = ae.encode(images);
                std::vector<std::vector<double>> mse(static_cast<size_t>(k));
                for (int label = 0; label < k; ++label)
                    mse[static_cast<size_t>(label)] = per_image_mse(ae, images, latent, label);
                for (int i = 0; i < bn; ++i) {
                    std::vector<float> row(static_cast<size_t>(k));
                    int best = 0;
                    for (int label = 0; label < k; ++label) {
                        row[static_cast<size_t>(label)] =
                            -static_cast<float>(mse[static_cast<size_t>(label)][static_cast<size_t>(i)]);
                        if (row[static_cast<size_t>(label)] > row[static_cast<size_t>(best)]) best = label;
                    }
                    result.predicted.push_back(best);
                    result.scores.push_back(std::move(row));
                }
                break;
            }
            case ClassifyMethod::nbi: {
                Tensor latent_plain = ae.encode(images);
                std::vector<std::vector<double>> norms(static_cast<size_t>(k));
                for (int label = 0; label < k; ++label) {
                    std::vector<float> onehot(static_cast<size_t>(bn) * k, 0.0f);
                    for (int i = 0; i < bn; ++i)
                        onehot[static_cast<size_t>(i) * k + static_cast<size_t>(label)] = 1.0f;
                    Tensor class_in = Tensor::from({bn, k}, std::move(onehot), true);
                    Tape tape;
                    Tensor recon = ae.decode(latent_plain, class_in);
                    Tensor diff = sub(recon, images);
                    Tensor loss = scale(sum(mul(diff, diff)),
                                        1.0f / static_cast<float>(images.dim(2) * images.dim(3)));
                    tape.backward(loss);
                    auto g = class_in.grad();
                    auto& per_label = norms[static_cast<size_t>(label)];
                    per_label.resize(static_cast<size_t>(bn));
                    for (int i = 0; i < bn; ++i) {
                        double acc = 0.0;
                        for (int c = 0; c < k; ++c) {
                            const float gv = g[static_cast<size_t>(i) * k + static_cast<size_t>(c)];
                            acc += static_cast<double>(gv) * gv;
                        }
                        per_label[static_cast<size_t>(i)] = std::sqrt(acc);
                    }
                }
                for (int i = 0; i < bn; ++i) {
                    std::vector<float> row(static_cast<size_t>(k));
                    int best = 0;
                    for (int label = 0; label < k; ++label) {
                        row[static_cast<size_t>(label)] =
                            -static_cast<float>(norms[static_cast<size_t>(label)][static_cast<size_t>(i)]);
                        if (row[static_cast<size_t>(label)] > row[static_cast<size_t>(best)]) best = label;
                    }
                    result.predicted.push_back(best);
                    result.scores.push_back(std::move(row));
                }
                break;
            }
            case ClassifyMethod::discriminative: {
                Tensor logits = classifier->logits(images);
                auto lv = logits.data();
                for (int i = 0; i < bn; ++i) {
                    std::vector<float> row(lv.begin() + static_cast<size_t>(i) * k,
                                           lv.begin() + static_cast<size_t>(i + 1) * k);
                    result.predicted.push_back(static_cast<int>(
                        std::max_element(row.begin(), row.end()) - row.begin()));
                    result.scores.push_back(std::move(row));
                }
                break;
            }
        }
    }
    return result;
}

double accuracy_of(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size() || predicted.empty())
        throw Error("accuracy_of: size mismatch or empty");
    size_t hits = 0;
    for (size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

OodScores ood_scores(const Autoencoder& ae, const ConvClassifier& classifier,
                     const LabeledImageSet& data, const InferenceConfig& icfg, int limit) {
    icfg.validate();
    const int n = limit < 0 ? data.count : std::min(limit, data.count);
    const int k = 10;
    const int batch = 256;
    OodScores scores;
    scores.gbi_belief_max.reserve(static_cast<size_t>(n));

    const auto ix = all_indices(n);
    for (int start = 0; start < n; start += batch) {
        const int end = std::min(start + batch, n);
        std::span<const int> chunk(ix.data() + start, static_cast<size_t>(end - start));
        Tensor images = data.batch(chunk);
        const int bn = images.dim(0);

        Tensor z_logits = Tensor::zeros({bn, k}, true);
        auto grads = batched_class_gradients(ae, images, z_logits);
        for (const auto& g : grads) {
            double best = -static_cast<double>(icfg.gamma) * g[0];
            for (int c = 1; c < k; ++c)
                best = std::max(best, -static_cast<double>(icfg.gamma) * g[static_cast<size_t>(c)]);
            scores.gbi_belief_max.push_back(best);
        }

        Tensor logits = classifier.logits(images);
        auto lv = logits.data();
        for (int i = 0; i < bn; ++i) {
            const size_t row = static_cast<size_t>(i) * k;
            float mx = lv[row];
            for (int c = 1; c < k; ++c) mx = std::max(mx, lv[row + static_cast<size_t>(c)]);
            scores.clf_logit_max.push_back(mx);
            float denom = 0.0f;
            for (int c = 0; c < k; ++c) denom += std::exp(lv[row + static_cast<size_t>(c)] - mx);
            scores.clf_softmax_max.push_back(1.0 / static_cast<double>(denom));
        }
    }
    return scores;
}

std::vector<std::vector<float>> conditional_generate(const Autoencoder& ae,
                                                     std::span<const float> image) {
    if (ae.config().class_dim < 1) throw Error("conditional_generate: unconditioned model");
    const int side = ae.config().image_size;
    if (static_cast<int>(image.size()) != side * side)
        throw Error("conditional_generate: image size mismatch");
    Tensor x = Tensor::from({1, 1, side, side}, std::vector<float>(image.begin(), image.end()));
    Tensor latent = ae.encode(x);
    std::vector<std::vector<float>> out;
    out.reserve(static_cast<size_t>(ae.config().class_dim));
    for (int label = 0; label < ae.config().class_dim; ++label) {
        std::vector<int> labels{label};
        Tensor recon = ae.decode(latent, ae.map_class_labels(labels));
        out.emplace_back(recon.data().begin(), recon.data().end());
    }
    return out;
}

void write_pgm_strip(const std::string& path, const std::vector<std::vector<float>>& tiles,
                     int rows, int cols, const Normalization& norm) {
    if (tiles.empty()) throw Error("write_pgm_strip: no tiles");
    for (const auto& t : tiles)
        if (static_cast<int>(t.size()) != rows * cols)
            throw Error("write_pgm_strip: tile size mismatch");
    const int width = cols * static_cast<int>(tiles.size());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("write_pgm_strip: cannot open '" + path + "'");
    f << "P5\n" << width << " " << rows << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(width));
    for (int r = 0; r < rows; ++r) {
        for (size_t t = 0; t < tiles.size(); ++t)
            for (int c = 0; c < cols; ++c) {
                float v = tiles[t][static_cast<size_t>(r) * cols + c];
                if (norm.standardized) v = v * norm.stddev + norm.mean;
                const float scaled = std::clamp(v, 0.0f, 1.0f) * 255.0f;
                row[t * static_cast<size_t>(cols) + static_cast<size_t>(c)] =
                    static_cast<unsigned char>(std::lround(scaled));
            }
        f.write(reinterpret_cast<const char*>(row.data()), width);
    }
    if (!f) throw Error("write_pgm_strip: write failed for '" + path + "'");
}

}  // namespace gbi
