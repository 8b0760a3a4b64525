#include "gbi/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "gbi/rng.hpp"

namespace gbi {

int BlockSequence::block_of(int step) const {
    auto it = std::upper_bound(block_starts.begin(), block_starts.end(), step);
    return static_cast<int>(it - block_starts.begin()) - 1;
}

std::pair<int, int> BlockSequence::block_range(int block) const {
    const int start = block_starts[static_cast<size_t>(block)];
    const int end = block + 1 < n_blocks() ? block_starts[static_cast<size_t>(block) + 1]
                                           : static_cast<int>(observations.size());
    return {start, end};
}

BlockSequence generate_blocks(uint64_t seed, int n_steps, const GenerativeParams& params) {
    if (n_steps < 1) throw Error("generate_blocks: n_steps must be >= 1");
    params.validate();
    Rng root(seed);
    Rng switches = root.fork(1);
    Rng emissions = root.fork(2);

    BlockSequence seq;
    seq.observations.reserve(static_cast<size_t>(n_steps));
    seq.z_true.reserve(static_cast<size_t>(n_steps));

    int z = switches.bernoulli(0.5) ? 1 : 0;
    int block_len = 0;
    seq.block_starts.push_back(0);
    for (int t = 0; t < n_steps; ++t) {
        if (t > 0) {
            bool flip;
            if (block_len >= params.max_block) {
                flip = true;
                switches.bernoulli(params.p_v);  // keep the stream aligned across param sets
            } else if (block_len < params.min_block) {
                flip = false;
                switches.bernoulli(params.p_v);
            } else {
                flip = switches.bernoulli(params.p_v);
            }
            if (flip) {
                z = 1 - z;
                block_len = 0;
                seq.block_starts.push_back(t);
            }
        }
        ++block_len;
        seq.z_true.push_back(z);
        seq.observations.push_back(
            emissions.gaussian(params.mu[static_cast<size_t>(z)], params.sigma[static_cast<size_t>(z)]));
    }
    return seq;
}

std::vector<BlockSequence> generalization_sweep(uint64_t seed, const std::vector<double>& means,
                                                double sigma, int steps_per_mean) {
    if (means.empty()) throw Error("generalization_sweep: empty mean list");
    if (steps_per_mean < 1) throw Error("generalization_sweep: steps_per_mean must be >= 1");
    std::vector<BlockSequence> out;
    out.reserve(means.size());
    uint64_t ds = 0;
    for (double m : means) {
        Rng emissions = Rng(seed).fork(100 + ds++);
        BlockSequence seq;
        seq.block_starts.push_back(0);
        for (int t = 0; t < steps_per_mean; ++t) {
            seq.observations.push_back(emissions.gaussian(m, sigma));
            seq.z_true.push_back(m >= 0.5 ? 1 : 0);  // nominal label; single block anyway
        }
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<double> default_sweep_means() {
    std::vector<double> means;
    for (int i = -2; i <= 12; ++i) means.push_back(i / 10.0);
    return means;
}

std::vector<BlockSequence> variance_sweep(uint64_t seed, const std::vector<double>& sigmas,
                                          int n_steps) {
    if (sigmas.empty()) throw Error("variance_sweep: empty sigma list");
    std::vector<BlockSequence> out;
    out.reserve(sigmas.size());
    for (double s2 : sigmas) {
        if (!(s2 > 0.0)) throw Error("variance_sweep: sigma must be positive");
        GenerativeParams p;
        p.mu = {0.3, 0.7};
        p.sigma = {0.3, s2};
        out.push_back(generate_blocks(seed, n_steps, p));
    }
    return out;
}

std::string sequence_csv(const BlockSequence& seq) {
    std::string csv = "step,x,z_true\n";
    char buf[64];
    for (size_t t = 0; t < seq.observations.size(); ++t) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%d\n", t, seq.observations[t], seq.z_true[t]);
        csv += buf;
    }
    return csv;
}

}  // namespace gbi
