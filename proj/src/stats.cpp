#include "attrlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace attrlab {

double mean(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean: empty sample");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
}

double sample_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("sample_variance: need >= 2 values");
    const double m = mean(xs);
    double acc = 0;
    for (double x : xs) acc += (x - m) * (x - m);
    return acc / double(xs.size() - 1);
}

namespace {

// Continued fraction for the incomplete beta (Lentz), standard formulation.
double betacf(double a, double b, double x) {
    const int kMaxIter = 300;
    const double kEps = 3e-16, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete beta: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_beta =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
        b * std::log(1.0 - x);
    const double front = std::exp(ln_beta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

namespace {

struct WelchCore {
    double t, dof;
};

WelchCore welch_core(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("welch_ttest: both samples need >= 2 values");
    const double va = sample_variance(a), vb = sample_variance(b);
    if (va == 0.0 && vb == 0.0) {
        if (mean(a) == mean(b)) return {0.0, double(a.size() + b.size() - 2)};
        throw std::invalid_argument("welch_ttest: degenerate variance in both samples");
    }
    const double na = double(a.size()), nb = double(b.size());
    const double sa = va / na, sb = vb / nb;
    const double t = (mean(a) - mean(b)) / std::sqrt(sa + sb);
    const double dof =
        (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    return {t, dof};
}

double student_sf(double t, double dof) {  // P(T > t)
    if (t == 0.0) return 0.5;
    const double x = dof / (dof + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x);
    return t > 0 ? tail : 1.0 - tail;
}

}  // namespace

WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    WelchCore c = welch_core(a, b);
    WelchResult r;
    r.t = c.t;
    r.dof = c.dof;
    r.p_two_sided =
        (c.t == 0.0) ? 1.0 : regularized_incomplete_beta(c.dof / 2.0, 0.5,
                                                         c.dof / (c.dof + c.t * c.t));
    r.significant = r.p_two_sided < 0.05;
    return r;
}

double welch_p_greater(const std::vector<double>& a, const std::vector<double>& b) {
    WelchCore c = welch_core(a, b);
    return student_sf(c.t, c.dof);
}

namespace {

std::vector<double> ranks_of(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;  // average rank, 1-based
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("spearman: matched samples of size >= 2 required");
    std::vector<double> rx = ranks_of(xs), ry = ranks_of(ys);
    const double mx = mean(rx), my = mean(ry);
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0 || dy == 0) throw std::invalid_argument("spearman: constant ranks");
    return num / std::sqrt(dx * dy);
}

std::vector<RankedMethod> rank_methods(const std::vector<std::string>& names,
                                       const std::vector<std::vector<double>>& samples,
                                       bool lower_is_better) {
    if (names.size() != samples.size() || names.empty())
        throw std::invalid_argument("rank_methods: matched names and samples required");
    std::vector<RankedMethod> out(names.size());
    std::vector<std::size_t> order(names.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::vector<double> means(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) means[i] = mean(samples[i]);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return lower_is_better ? means[i] < means[j] : means[i] > means[j];
    });
    int rank = 1;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k > 0) {
            bool nonsig;
            const bool var0a = sample_variance(samples[order[k]]) == 0.0;
            const bool var0b = sample_variance(samples[order[k - 1]]) == 0.0;
            if (var0a && var0b) {
                nonsig = means[order[k]] == means[order[k - 1]];
            } else {
                WelchResult w = welch_ttest(samples[order[k]], samples[order[k - 1]]);
                nonsig = !w.significant;
            }
            if (!nonsig) ++rank;
        }
        out[order[k]] = RankedMethod{names[order[k]], means[order[k]], rank};
    }
    return out;
}

}  // namespace attrlab
