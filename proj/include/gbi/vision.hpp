#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gbi/checkpoint.hpp"
#include "gbi/engine.hpp"
#include "gbi/tensor.hpp"

namespace gbi {

struct Normalization {
    bool standardized = false;
    float mean = 0.0f;
    float stddev = 1.0f;
};

struct LabeledImageSet {
    int count = 0, rows = 0, cols = 0;
    std::vector<float> pixels;  // count * rows * cols, row-major, [0,1] when raw
    std::vector<int> labels;
    Normalization norm;

    Tensor batch(std::span<const int> indices) const;  // [N, 1, rows, cols]
    std::span<const float> image(int index) const;
    // Rescales to dataset mean 0 / std 1 in place. A second call is a no-op
    // up to rounding.
    void standardize();
};

// Big-endian IDX pair (image magic 0x00000803, label magic 0x00000801),
// pixels scaled to [0,1].
LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path);

struct VisionConfig {
    int image_size = 28;
    int latent_dim = 8;   // fixed by the conv stack: 8 channels collapse to 1x1
    int class_dim = 10;   // 0 trains an unconditioned autoencoder
    int epochs = 4;
    int batch = 128;
    float lr = 1e-3f;
    float z_input_temp = 0.1f;
};

// Conv encoder (1->2->4->8, strides 2/2/1) to an 8-dim embedding; mirrored
// transposed-conv decoder fed the embedding concatenated with the class
// input.
class Autoencoder {
public:
    static Autoencoder init(const VisionConfig& cfg, uint64_t seed);
    const VisionConfig& config() const { return cfg_; }
    std::vector<Tensor> parameters();
    void set_frozen(bool frozen);

    Tensor encode(const Tensor& images) const;  // [N,1,28,28] -> [N,8]
    // class_in [N, class_dim] (ignored when class_dim == 0) -> [N,1,28,28]
    Tensor decode(const Tensor& latent, const Tensor& class_in) const;

    // Belief logits [N, class_dim] -> decoder class input (plain softmax rows).
    Tensor map_class_input(const Tensor& z_logits) const;
    // Hard labels -> sharpened near-one-hot rows.
    Tensor map_class_labels(std::span<const int> labels) const;

    Checkpoint to_checkpoint(uint64_t seed, const Normalization& norm) const;
    static Autoencoder from_checkpoint(const Checkpoint& ckpt);

private:
    VisionConfig cfg_;
    Tensor ew_[3], eb_[3];
    Tensor dw_[3], db_[3];
};

// Same backbone as the encoder plus a nonlinear head to 10 classes.
class ConvClassifier {
public:
    static ConvClassifier init(const VisionConfig& cfg, uint64_t seed);
    const VisionConfig& config() const { return cfg_; }
    std::vector<Tensor> parameters();
    void set_frozen(bool frozen);

    Tensor logits(const Tensor& images) const;  // [N, 10]

    Checkpoint to_checkpoint(uint64_t seed, const Normalization& norm) const;
    static ConvClassifier from_checkpoint(const Checkpoint& ckpt);

private:
    VisionConfig cfg_;
    Tensor w_[3], b_[3];
    Tensor head_w_, head_b_;
};

struct VisionTrainReport {
    std::vector<double> train_losses;  // per epoch
    std::vector<double> val_losses;    // per epoch
};

VisionTrainReport train_autoencoder(Autoencoder& model, const LabeledImageSet& train,
                                    const LabeledImageSet& val, uint64_t seed);
VisionTrainReport train_classifier(ConvClassifier& model, const LabeledImageSet& train,
                                   const LabeledImageSet& val, uint64_t seed);

enum class ClassifyMethod { gbi, iterative, likelihood, nbi, discriminative };

ClassifyMethod classify_method_from_string(const std::string& name);
std::string classify_method_name(ClassifyMethod method);
int classify_runs(ClassifyMethod method, const InferenceConfig& cfg);

struct ClassifyResult {
    std::vector<int> predicted;
    // Per-sample scores; argmax equals predicted. For gbi these are the
    // std-normalized gradient beliefs used for confidence reporting.
    std::vector<std::vector<float>> scores;
    int runs_per_inference = 1;
};

// classifier may be null except for the discriminative method. limit trims
// the evaluated sample count (-1 = all).
ClassifyResult classify(const Autoencoder& ae, const ConvClassifier* classifier,
                        const LabeledImageSet& data, ClassifyMethod method,
                        const InferenceConfig& icfg, int limit = -1);

double accuracy_of(std::span<const int> predicted, std::span<const int> labels);

struct OodScores {
    std::vector<double> gbi_belief_max;    // max one-step belief logit
    std::vector<double> clf_logit_max;
    std::vector<double> clf_softmax_max;
};

OodScores ood_scores(const Autoencoder& ae, const ConvClassifier& classifier,
                     const LabeledImageSet& data, const InferenceConfig& icfg, int limit = -1);

// Decoder outputs for one source image with the label forced to 0..class_dim-1.
std::vector<std::vector<float>> conditional_generate(const Autoencoder& ae,
                                                     std::span<const float> image);

// Horizontal strip of equally sized grayscale tiles as a binary PGM (P5),
// pixels de-standardized with norm and clipped to [0,255].
void write_pgm_strip(const std::string& path, const std::vector<std::vector<float>>& tiles,
                     int rows, int cols, const Normalization& norm);

}  // namespace gbi
