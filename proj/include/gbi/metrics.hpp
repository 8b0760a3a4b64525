#pragma once

#include <span>
#include <string>
#include <vector>

#include "gbi/engine.hpp"

namespace gbi {

struct RocResult {
    double auc = 0.0;
    std::vector<double> thresholds;
    std::vector<double> tpr;
    std::vector<double> fpr;
};

// Rank-statistic AUC (ties count half) plus the threshold sweep, positives
// being the class expected to score higher.
RocResult aucroc(std::span<const double> scores_pos, std::span<const double> scores_neg);

struct ConfidenceBin {
    double lo = 0.0, hi = 0.0;
    int count = 0;
    int correct = 0;
    double accuracy() const { return count ? static_cast<double>(correct) / count : 0.0; }
};

// Bins by max-belief into n_bins equal-width bins over [0,1]; the last bin is
// closed at 1.
std::vector<ConfidenceBin> confidence_bins(const std::vector<std::vector<float>>& beliefs,
                                           std::span<const int> predicted,
                                           std::span<const int> labels, int n_bins = 10);

struct GroupedMseRow {
    std::string name;
    double mean = 0.0;  // across seeds
    double sem = 0.0;
};

// Collapses one sweep (per-mean MSEs) into the four report groups, given the
// training means and which of them generated the final training block.
struct MseGroups {
    double last_block = 0.0;
    double other_mean = 0.0;
    double inside = 0.0;   // means in [0.3, 0.7]
    double outside = 0.0;  // means < 0.2 or > 0.8
};
MseGroups mse_groups(const std::vector<MeanMse>& per_mean, double train_mu1, double train_mu2,
                     int last_block_label);

// Mean +- SEM across seeds, rows ordered last-block / other / inside / outside.
std::vector<GroupedMseRow> mse_group_table(const std::vector<MseGroups>& per_seed);

double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

double mean_of(std::span<const double> xs);
double sem_of(std::span<const double> xs);

}  // namespace gbi
