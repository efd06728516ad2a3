#pragma once

// Independent oracle implementations used to cross-check the library. These
// deliberately avoid the library's code paths: normal equations instead of
// QR, counting ranks instead of sort-based ranking, explicit 2^N sign
// enumeration instead of the DP over rank sums.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// OLS via explicit normal equations (X^T X)^{-1} X^T y.
inline Eigen::VectorXd ols_normal_equations(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd xtx = X.transpose() * X;
    return xtx.inverse() * (X.transpose() * y);
}

// Average rank of each element by pairwise counting.
inline std::vector<double> counting_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t smaller = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (v[j] < v[i]) ++smaller;
            if (v[j] == v[i]) ++equal;
        }
        ranks[i] = static_cast<double>(smaller) + 0.5 * static_cast<double>(equal + 1);
    }
    return ranks;
}

inline double pearson_plain(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman_rank_then_pearson(const std::vector<double>& x,
                                         const std::vector<double>& y) {
    return pearson_plain(counting_ranks(x), counting_ranks(y));
}

struct WilcoxonExact {
    double statistic;
    double p_two_sided;
};

// Exact two-sided signed-rank p-value by enumerating all 2^n sign vectors.
inline WilcoxonExact wilcoxon_enumerate(const std::vector<double>& diffs) {
    std::vector<double> abs_d;
    std::vector<int> sign;
    for (double d : diffs) {
        if (d == 0.0) continue;
        abs_d.push_back(std::fabs(d));
        sign.push_back(d > 0.0 ? 1 : 0);
    }
    const std::size_t n = abs_d.size();
    const std::vector<double> ranks = counting_ranks(abs_d);
    double w_obs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (sign[i]) w_obs += ranks[i];

    const std::uint64_t total = 1ULL << n;
    std::uint64_t count_le = 0, count_ge = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1ULL << i)) w += ranks[i];
        if (w <= w_obs + 1e-12) ++count_le;
        if (w >= w_obs - 1e-12) ++count_ge;
    }
    const double lower = static_cast<double>(count_le) / static_cast<double>(total);
    const double upper = static_cast<double>(count_ge) / static_cast<double>(total);
    return {w_obs, std::min(1.0, 2.0 * std::min(lower, upper))};
}

}  // namespace oracle
