#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gbi/bayes.hpp"

namespace gbi {

// A generated observation stream with its ground-truth context labels.
// block_starts[i] is the index where block i begins (block_starts[0] == 0).
struct BlockSequence {
    std::vector<double> observations;
    std::vector<int> z_true;
    std::vector<int> block_starts;

    int n_blocks() const { return static_cast<int>(block_starts.size()); }
    int block_of(int step) const;
    // [start, end) of a block.
    std::pair<int, int> block_range(int block) const;
};

// Switching draws and emission draws come from two independent streams forked
// from the seed, so two runs that share a seed have identical block structure
// even when the emission parameters differ.
BlockSequence generate_blocks(uint64_t seed, int n_steps, const GenerativeParams& params);

// One single-block stream per mean, sigma fixed.
std::vector<BlockSequence> generalization_sweep(uint64_t seed, const std::vector<double>& means,
                                                double sigma, int steps_per_mean);

// The standard sweep grid: -0.2 through 1.2 in 0.1 increments.
std::vector<double> default_sweep_means();

// Two-hypothesis training streams (mu 0.3/0.7) with sigma of the second
// hypothesis varied per stream; the first stays at 0.3.
std::vector<BlockSequence> variance_sweep(uint64_t seed, const std::vector<double>& sigmas,
                                          int n_steps);

// CSV with header "step,x,z_true".
std::string sequence_csv(const BlockSequence& seq);

}  // namespace gbi
