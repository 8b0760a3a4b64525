#include "gbi/bayes.hpp"

#include <cmath>
#include <string>

namespace gbi {

void GenerativeParams::validate() const {
    if (!(sigma[0] > 0.0) || !(sigma[1] > 0.0))
        throw Error("GenerativeParams: sigma must be positive");
    if (!(p_v >= 0.0 && p_v <= 1.0)) throw Error("GenerativeParams: p_v must lie in [0, 1]");
    if (min_block > max_block || min_block < 1)
        throw Error("GenerativeParams: invalid block bounds [" + std::to_string(min_block) + ", " +
                    std::to_string(max_block) + "]");
}

double gaussian_likelihood(double x, double mu, double sigma) {
    if (!(sigma > 0.0)) throw Error("gaussian_likelihood: sigma must be positive");
    const double d = (x - mu) / sigma;
    return std::exp(-0.5 * d * d) / (sigma * std::sqrt(2.0 * M_PI));
}

namespace {

std::array<double, 2> transition_prior(const std::array<double, 2>& prior, double p_v) {
    return {(1.0 - p_v) * prior[0] + p_v * prior[1], p_v * prior[0] + (1.0 - p_v) * prior[1]};
}

FilterState combine(const std::array<double, 2>& predictive, const std::array<double, 2>& lik) {
    FilterState st;
    st.likelihood = lik;
    st.evidence = lik[0] * predictive[0] + lik[1] * predictive[1];
    if (!(st.evidence > 0.0)) throw Error("filter: zero evidence, degenerate prior or likelihood");
    st.posterior = {lik[0] * predictive[0] / st.evidence, lik[1] * predictive[1] / st.evidence};
    st.log_evidence = std::log(st.evidence);
    return st;
}

void check_prior(const std::array<double, 2>& prior) {
    const double s = prior[0] + prior[1];
    if (!(s > 0.0) || prior[0] < 0.0 || prior[1] < 0.0)
        throw Error("filter: degenerate prior [" + std::to_string(prior[0]) + ", " +
                    std::to_string(prior[1]) + "]");
}

}  // namespace

FilterState filter_step(const std::array<double, 2>& prior, double x, const GenerativeParams& params) {
    params.validate();
    check_prior(prior);
    const double s = prior[0] + prior[1];
    const std::array<double, 2> normalized{prior[0] / s, prior[1] / s};
    const auto predictive = transition_prior(normalized, params.p_v);
    return combine(predictive, {gaussian_likelihood(x, params.mu[0], params.sigma[0]),
                                gaussian_likelihood(x, params.mu[1], params.sigma[1])});
}

std::vector<FilterState> filter_sequence(std::span<const double> obs, const GenerativeParams& params,
                                         const std::array<double, 2>& initial_prior) {
    if (obs.empty()) throw Error("filter_sequence: empty observation sequence");
    std::vector<FilterState> states;
    states.reserve(obs.size());
    std::array<double, 2> prior = initial_prior;
    double log_evidence = 0.0;  // running log product keeps long sequences finite
    for (double x : obs) {
        FilterState st = filter_step(prior, x, params);
        log_evidence += st.log_evidence;
        st.log_evidence = log_evidence;
        prior = st.posterior;
        states.push_back(st);
    }
    return states;
}

FilterState graft_step(const std::array<double, 2>& prior, const std::array<double, 2>& z_gradient,
                       double scale, const GenerativeParams& params) {
    params.validate();
    check_prior(prior);
    const double s = prior[0] + prior[1];
    const std::array<double, 2> normalized{prior[0] / s, prior[1] / s};
    const auto predictive = transition_prior(normalized, params.p_v);
    const std::array<double, 2> pseudo{1.0 / (1.0 + std::exp(scale * z_gradient[0])),
                                       1.0 / (1.0 + std::exp(scale * z_gradient[1]))};
    return combine(predictive, pseudo);
}

}  // namespace gbi
