#include "gbi/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace gbi {

RocResult aucroc(std::span<const double> scores_pos, std::span<const double> scores_neg) {
    if (scores_pos.empty() || scores_neg.empty()) throw Error("aucroc: empty score list");

    // merged descending sweep; U counted with half credit for ties
    std::vector<std::pair<double, int>> all;  // (score, is_positive)
    all.reserve(scores_pos.size() + scores_neg.size());
    for (double s : scores_pos) all.emplace_back(s, 1);
    for (double s : scores_neg) all.emplace_back(s, 0);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    const double np = static_cast<double>(scores_pos.size());
    const double nn = static_cast<double>(scores_neg.size());

    RocResult r;
    double tp = 0.0, fp = 0.0, u = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        double tie_pos = 0.0, tie_neg = 0.0;
        while (j < all.size() && all[j].first == all[i].first) {
            (all[j].second ? tie_pos : tie_neg) += 1.0;
            ++j;
        }
        // positives in this tie group beat every remaining (lower) negative,
        // and tie with the group's negatives
        u += tie_pos * (nn - fp - tie_neg) + 0.5 * tie_pos * tie_neg;
        tp += tie_pos;
        fp += tie_neg;
        r.thresholds.push_back(all[i].first);
        r.tpr.push_back(tp / np);
        r.fpr.push_back(fp / nn);
        i = j;
    }
    r.auc = u / (np * nn);
    return r;
}

std::vector<ConfidenceBin> confidence_bins(const std::vector<std::vector<float>>& beliefs,
                                           std::span<const int> predicted,
                                           std::span<const int> labels, int n_bins) {
    if (beliefs.size() != predicted.size() || beliefs.size() != labels.size())
        throw Error("confidence_bins: input length mismatch");
    if (n_bins < 1) throw Error("confidence_bins: n_bins must be >= 1");

    std::vector<ConfidenceBin> bins(static_cast<size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        bins[static_cast<size_t>(b)].lo = static_cast<double>(b) / n_bins;
        bins[static_cast<size_t>(b)].hi = static_cast<double>(b + 1) / n_bins;
    }
    for (size_t i = 0; i < beliefs.size(); ++i) {
        const float conf = *std::max_element(beliefs[i].begin(), beliefs[i].end());
        int b = static_cast<int>(conf * n_bins);
        b = std::clamp(b, 0, n_bins - 1);  // confidence 1.0 lands in the top bin
        bins[static_cast<size_t>(b)].count += 1;
        if (predicted[i] == labels[i]) bins[static_cast<size_t>(b)].correct += 1;
    }
    return bins;
}

namespace {

bool near(double a, double b) { return std::fabs(a - b) < 1e-9; }

}  // namespace

MseGroups mse_groups(const std::vector<MeanMse>& per_mean, double train_mu1, double train_mu2,
                     int last_block_label) {
    const double last_mu = last_block_label == 0 ? train_mu1 : train_mu2;
    const double other_mu = last_block_label == 0 ? train_mu2 : train_mu1;
    const double lo = std::min(train_mu1, train_mu2);
    const double hi = std::max(train_mu1, train_mu2);

    double sums[4] = {0, 0, 0, 0};
    int counts[4] = {0, 0, 0, 0};
    for (const MeanMse& m : per_mean) {
        int group;
        if (near(m.mean, last_mu)) group = 0;
        else if (near(m.mean, other_mu)) group = 1;
        else if (m.mean > lo && m.mean < hi) group = 2;
        else group = 3;
        sums[group] += m.mse;
        counts[group] += 1;
    }
    for (int g = 0; g < 4; ++g)
        if (counts[g] == 0) throw Error("mse_groups: sweep does not cover group " + std::to_string(g));
    return {sums[0] / counts[0], sums[1] / counts[1], sums[2] / counts[2], sums[3] / counts[3]};
}

double mean_of(std::span<const double> xs) {
    if (xs.empty()) throw Error("mean_of: empty");
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

double sem_of(std::span<const double> xs) {
    if (xs.empty()) throw Error("sem_of: empty");
    if (xs.size() == 1) return 0.0;
    const double mu = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1)) /
           std::sqrt(static_cast<double>(xs.size()));
}

std::vector<GroupedMseRow> mse_group_table(const std::vector<MseGroups>& per_seed) {
    if (per_seed.empty()) throw Error("mse_group_table: no seeds");
    const char* names[4] = {"last_training_block_mean", "other_mean", "inside_training_range",
                            "outside_training_range"};
    std::vector<GroupedMseRow> rows;
    for (int g = 0; g < 4; ++g) {
        std::vector<double> vals;
        vals.reserve(per_seed.size());
        for (const MseGroups& s : per_seed)
            vals.push_back(g == 0 ? s.last_block : g == 1 ? s.other_mean : g == 2 ? s.inside : s.outside);
        rows.push_back({names[g], mean_of(vals), sem_of(vals)});
    }
    return rows;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw Error("pearson: need two equal-length series");
    const double ma = mean_of(a), mb = mean_of(b);
    double num = 0.0, da = 0.0, db = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    if (da == 0.0 || db == 0.0) throw Error("pearson: degenerate (constant) series");
    return num / std::sqrt(da * db);
}

namespace {

std::vector<double> ranks_of(std::span<const double> xs) {
    std::vector<size_t> order(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return xs[i] < xs[j]; });
    std::vector<double> ranks(xs.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (size_t k = i; k < j; ++k) ranks[order[k]] = avg;
        i = j;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = ranks_of(a);
    const auto rb = ranks_of(b);
    return pearson(ra, rb);
}

}  // namespace gbi
