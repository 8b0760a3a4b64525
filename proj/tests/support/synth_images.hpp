#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "gbi/rng.hpp"
#include "gbi/vision.hpp"

namespace gbi::testing {

// Writes a LabeledImageSet as a big-endian IDX pair.
inline void write_idx_pair(const LabeledImageSet& set, const std::string& images_path,
                           const std::string& labels_path) {
    auto put_be32 = [](std::ofstream& f, uint32_t v) {
        const unsigned char b[4] = {
            static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        f.write(reinterpret_cast<const char*>(b), 4);
    };
    std::ofstream imgf(images_path, std::ios::binary | std::ios::trunc);
    put_be32(imgf, 0x00000803u);
    put_be32(imgf, static_cast<uint32_t>(set.count));
    put_be32(imgf, static_cast<uint32_t>(set.rows));
    put_be32(imgf, static_cast<uint32_t>(set.cols));
    for (float p : set.pixels) {
        const unsigned char b =
            static_cast<unsigned char>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f));
        imgf.write(reinterpret_cast<const char*>(&b), 1);
    }
    std::ofstream labf(labels_path, std::ios::binary | std::ios::trunc);
    put_be32(labf, 0x00000801u);
    put_be32(labf, static_cast<uint32_t>(set.count));
    for (int y : set.labels) {
        const unsigned char b = static_cast<unsigned char>(y);
        labf.write(reinterpret_cast<const char*>(&b), 1);
    }
}

// Synthetic 10-class image task: 5 smooth base patterns x 2 subtle variants.
// The reconstruction-optimal coarse code keeps the base and drops the variant
// detail, so the class input carries information the latent does not -- the
// regime the gradient-based classifier needs.
inline LabeledImageSet make_synth_images(int count, uint64_t seed) {
    Rng trng(424242);
    std::vector<std::vector<float>> base(5, std::vector<float>(784));
    std::vector<std::vector<float>> detail(5, std::vector<float>(784));
    for (int k = 0; k < 5; ++k) {
        const double fy1 = trng.uniform(0.15, 0.5), fx1 = trng.uniform(0.15, 0.5);
        const double p1 = trng.uniform(0, 6.28), p2 = trng.uniform(0, 6.28);
        const double dy = trng.uniform(0.9, 1.4), dx = trng.uniform(0.9, 1.4);
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                base[static_cast<size_t>(k)][static_cast<size_t>(y * 28 + x)] =
                    static_cast<float>(0.5 + 0.35 * std::sin(fy1 * y + fx1 * x + p1));
                detail[static_cast<size_t>(k)][static_cast<size_t>(y * 28 + x)] =
                    static_cast<float>(0.20 * std::sin(dy * y + dx * x + p2));
            }
    }
    Rng rng(seed);
    LabeledImageSet set;
    set.count = count;
    set.rows = set.cols = 28;
    set.pixels.resize(static_cast<size_t>(count) * 784);
    set.labels.resize(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int c = static_cast<int>(rng.below(10));
        const int k = c / 2, v = c % 2;
        set.labels[static_cast<size_t>(i)] = c;
        const double gy = rng.uniform(0.05, 0.3), gx = rng.uniform(0.05, 0.3);
        const double gp = rng.uniform(0, 6.28);
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                const double field = 0.25 * std::sin(gy * y + gx * x + gp);
                const double d = (v ? 1.0 : -1.0) *
                                 detail[static_cast<size_t>(k)][static_cast<size_t>(y * 28 + x)];
                const double val = base[static_cast<size_t>(k)][static_cast<size_t>(y * 28 + x)] + d +
                                   field + 0.02 * rng.uniform(-1, 1);
                set.pixels[static_cast<size_t>(i) * 784 + static_cast<size_t>(y * 28 + x)] =
                    static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
    }
    return set;
}

}  // namespace gbi::testing
