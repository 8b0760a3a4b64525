#pragma once

#include <array>
#include <vector>

#include "gbi/tensor.hpp"

namespace gbi {

// Ground-truth switching model: a binary context draws each observation from
// N(mu[z], sigma[z]); the context flips with probability p_v per step, with
// block lengths clamped to [min_block, max_block] by the generator.
struct GenerativeParams {
    std::array<double, 2> mu{0.2, 0.8};
    std::array<double, 2> sigma{0.1, 0.1};
    double p_v = 0.005;
    int min_block = 20;
    int max_block = 50;

    void validate() const;
};

// Filtering state after absorbing one observation. All quantities are exact
// (double precision); log_evidence accumulates over a sequence.
struct FilterState {
    std::array<double, 2> posterior{};
    std::array<double, 2> likelihood{};
    double evidence = 0.0;
    double log_evidence = 0.0;
};

double gaussian_likelihood(double x, double mu, double sigma);

// One forward-filtering update: transition the prior, weight by the
// per-hypothesis likelihood of x, renormalize. evidence is the pre-
// normalization mass (the marginal of x given the past).
FilterState filter_step(const std::array<double, 2>& prior, double x, const GenerativeParams& params);

std::vector<FilterState> filter_sequence(std::span<const double> obs, const GenerativeParams& params,
                                         const std::array<double, 2>& initial_prior);

// Same update with an external pseudo-likelihood sigmoid(-scale * gradient)
// standing in for the Gaussian term.
FilterState graft_step(const std::array<double, 2>& prior, const std::array<double, 2>& z_gradient,
                       double scale, const GenerativeParams& params);

}  // namespace gbi
