#pragma once

#include <string>
#include <vector>

namespace attrlab {

struct WelchResult {
    double t = 0.0;
    double dof = 0.0;
    double p_two_sided = 1.0;
    bool significant = false;  // at 95%
};

// Welch two-sample t-test with Welch-Satterthwaite dof; p via the regularized
// incomplete beta function. Needs |a|,|b| >= 2 and variance in at least one
// sample.
WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b);

// One-sided p for H1: mean(a) > mean(b).
double welch_p_greater(const std::vector<double>& a, const std::vector<double>& b);

double regularized_incomplete_beta(double a, double b, double x);

double mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);

// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct RankedMethod {
    std::string name;
    double mean = 0.0;
    int rank = 0;
};

// Sort by mean (direction-aware) and give consecutive methods the same rank
// when their pairwise Welch test is not significant at 95%.
std::vector<RankedMethod> rank_methods(const std::vector<std::string>& names,
                                       const std::vector<std::vector<double>>& samples,
                                       bool lower_is_better);

}  // namespace attrlab
