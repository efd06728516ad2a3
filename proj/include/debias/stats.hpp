#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "debias/error.hpp"

namespace debias::stats {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Ordinary least squares
// ---------------------------------------------------------------------------

struct OlsFit {
    Eigen::VectorXd coef;
    Eigen::VectorXd residuals;
};

inline OlsFit ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (X.rows() != y.size()) throw NumericError("ols_fit: X rows must match y length");
    if (X.rows() < X.cols()) throw NumericError("ols_fit: need N >= p");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) throw NumericError("ols_fit: rank-deficient design");
    OlsFit fit;
    fit.coef = qr.solve(y);
    fit.residuals = y - X * fit.coef;
    return fit;
}

/// Shared-design multi-response solve; one QR, coefficient matrix p x F.
struct OlsMultiFit {
    Eigen::MatrixXd coef;       // p x F
    Eigen::MatrixXd residuals;  // N x F
};

inline OlsMultiFit ols_fit_multi(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    if (X.rows() != Y.rows()) throw NumericError("ols_fit_multi: row mismatch");
    if (X.rows() < X.cols()) throw NumericError("ols_fit_multi: need N >= p");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) throw NumericError("ols_fit_multi: rank-deficient design");
    OlsMultiFit fit;
    fit.coef = qr.solve(Y);
    fit.residuals = Y - X * fit.coef;
    return fit;
}

// ---------------------------------------------------------------------------
// PCA on standardized features
// ---------------------------------------------------------------------------

struct PcaBasis {
    Eigen::VectorXd mean;                // F
    Eigen::VectorXd scale;               // F, per-feature sd divisor
    Eigen::MatrixXd components;          // m x F, orthonormal rows
    Eigen::VectorXd explained_variance;  // m, non-increasing
};

namespace detail {

// Sign convention: the entry of largest magnitude in each component is
// positive, which pins the eigenvector sign across runs and platforms.
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
}

}  // namespace detail

/// PCA of per-feature standardized data (mean 0, variance 1). Throws on
/// constant features, which cannot be standardized.
inline PcaBasis pca_fit(const Eigen::MatrixXd& values, int m) {
    const Eigen::Index n = values.rows();
    const Eigen::Index f = values.cols();
    if (n < 2) throw NumericError("pca_fit: need N >= 2");
    if (m < 1 || m > std::min<Eigen::Index>(n - 1, f))
        throw NumericError("pca_fit: m must be in [1, min(N-1, F)]");
    PcaBasis basis;
    basis.mean = values.colwise().mean();
    Eigen::MatrixXd centered = values.rowwise() - basis.mean.transpose();
    basis.scale = (centered.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt();
    for (Eigen::Index j = 0; j < f; ++j)
        if (!(basis.scale[j] > 0.0))
            throw NumericError("pca_fit: feature column " + std::to_string(j) + " has zero variance");
    centered.array().rowwise() /= basis.scale.transpose().array();

    const Eigen::MatrixXd corr = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
    if (eig.info() != Eigen::Success) throw NumericError("pca_fit: eigendecomposition failed");

    basis.components.resize(m, f);
    basis.explained_variance.resize(m);
    for (int i = 0; i < m; ++i) {
        const Eigen::Index src = f - 1 - i;  // Eigen sorts ascending
        Eigen::VectorXd comp = eig.eigenvectors().col(src);
        detail::fix_sign(comp);
        basis.components.row(i) = comp.transpose();
        basis.explained_variance[i] = std::max(0.0, eig.eigenvalues()[src]);
    }
    return basis;
}

/// Project rows onto the basis; scores are mean-zero on the fit data.
inline Eigen::MatrixXd pca_transform(const PcaBasis& basis, const Eigen::MatrixXd& values) {
    if (values.cols() != basis.mean.size())
        throw DataError("pca_transform: feature count mismatch");
    Eigen::MatrixXd z = values.rowwise() - basis.mean.transpose();
    z.array().rowwise() /= basis.scale.transpose().array();
    return z * basis.components.transpose();
}

// ---------------------------------------------------------------------------
// Probabilistic PCA (closed-form maximum likelihood)
// ---------------------------------------------------------------------------

struct PpcaFit {
    Eigen::MatrixXd W;         // F x k loadings
    double noise_var = 0.0;    // sigma^2
    Eigen::VectorXd mean;      // F
    double log_likelihood = 0.0;
};

/// Closed-form PPCA: W spans the top-k eigenvectors of the (1/N) sample
/// covariance, sigma^2 is the mean of the discarded eigenvalues.
inline PpcaFit ppca_fit(const Eigen::MatrixXd& values, int k) {
    const Eigen::Index n = values.rows();
    const Eigen::Index f = values.cols();
    if (k < 1 || k >= f) throw NumericError("ppca_fit: need 1 <= k < F");
    if (n <= k) throw NumericError("ppca_fit: need N > k");
    PpcaFit fit;
    fit.mean = values.colwise().mean();
    const Eigen::MatrixXd centered = values.rowwise() - fit.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("ppca_fit: eigendecomposition failed");

    double tail = 0.0;
    for (Eigen::Index i = 0; i < f - k; ++i) tail += std::max(0.0, eig.eigenvalues()[i]);
    fit.noise_var = tail / static_cast<double>(f - k);
    if (!(fit.noise_var > 0.0))
        throw NumericError("ppca_fit: degenerate sample covariance (zero residual variance)");

    fit.W.resize(f, k);
    double log_det_top = 0.0;
    for (int i = 0; i < k; ++i) {
        const Eigen::Index src = f - 1 - i;
        const double lambda = std::max(eig.eigenvalues()[src], fit.noise_var);
        Eigen::VectorXd u = eig.eigenvectors().col(src);
        detail::fix_sign(u);
        fit.W.col(i) = u * std::sqrt(lambda - fit.noise_var);
        log_det_top += std::log(lambda);
    }
    // At the ML point, tr(C^{-1} S) = F and log|C| splits into the kept
    // eigenvalues plus (F-k) copies of sigma^2.
    fit.log_likelihood = -0.5 * static_cast<double>(n) *
                         (static_cast<double>(f) * std::log(2.0 * M_PI) + log_det_top +
                          static_cast<double>(f - k) * std::log(fit.noise_var) +
                          static_cast<double>(f));
    return fit;
}

/// Direct Gaussian log-likelihood of rows under N(mean, W W^T + sigma^2 I).
inline double gaussian_loglik(const Eigen::MatrixXd& values, const Eigen::VectorXd& mean,
                              const Eigen::MatrixXd& cov) {
    const Eigen::Index n = values.rows();
    const Eigen::Index f = values.cols();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("gaussian_loglik: covariance not SPD");
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < f; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    const Eigen::MatrixXd centered = values.rowwise() - mean.transpose();
    const Eigen::MatrixXd solved = llt.solve(centered.transpose());
    const double quad = (centered.transpose().cwiseProduct(solved)).sum();
    return -0.5 * (static_cast<double>(n) * (static_cast<double>(f) * std::log(2.0 * M_PI) + log_det) + quad);
}

// ---------------------------------------------------------------------------
// Rank statistics
// ---------------------------------------------------------------------------

/// Average ranks (1-based); ties share the mean of their rank range.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
    Eigen::VectorXd ranks(n);
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Eigen::Index t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const double n = static_cast<double>(x.size());
    const Eigen::VectorXd xc = x.array() - x.mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double sx = xc.norm();
    const double sy = yc.norm();
    if (!(sx > 0.0) || !(sy > 0.0)) throw NumericError("pearson: zero variance input");
    (void)n;
    return xc.dot(yc) / (sx * sy);
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size()) throw NumericError("spearman: length mismatch");
    if (x.size() < 3) throw NumericError("spearman: need N >= 3");
    const Eigen::VectorXd rx = average_ranks(x);
    const Eigen::VectorXd ry = average_ranks(y);
    if ((rx.array() - rx.mean()).abs().maxCoeff() == 0.0 ||
        (ry.array() - ry.mean()).abs().maxCoeff() == 0.0)
        throw NumericError("spearman: constant input has no rank variance");
    return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

struct WilcoxonResult {
    double statistic = 0.0;  // W+ = sum of ranks of positive differences
    double p_value = 1.0;
    int n_used = 0;          // pairs remaining after dropping zero differences
    bool exact = false;
};

/// Two-sided signed-rank test of paired samples. Exact distribution for
/// n <= 25 (dynamic program over doubled ranks so tied average ranks stay
/// integral); normal approximation with continuity and tie corrections above.
inline WilcoxonResult wilcoxon_signed_rank(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw NumericError("wilcoxon: length mismatch");
    std::vector<double> diffs;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    const int n = static_cast<int>(diffs.size());
    if (n == 0) throw DataError("wilcoxon: all differences are zero");
    if (n < 5) throw DataError("wilcoxon: need >= 5 nonzero differences, have " + std::to_string(n));

    Eigen::VectorXd abs_d(n);
    for (int i = 0; i < n; ++i) abs_d[i] = std::abs(diffs[i]);
    const Eigen::VectorXd ranks = average_ranks(abs_d);

    WilcoxonResult res;
    res.n_used = n;
    for (int i = 0; i < n; ++i)
        if (diffs[i] > 0.0) res.statistic += ranks[i];

    if (n <= 25) {
        res.exact = true;
        // Doubled ranks are integers even with .5 average ranks.
        std::vector<long long> u(n);
        long long total = 0;
        for (int i = 0; i < n; ++i) {
            u[i] = std::llround(2.0 * ranks[i]);
            total += u[i];
        }
        std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
        count[0] = 1.0;
        long long reach = 0;
        for (int i = 0; i < n; ++i) {
            reach += u[i];
            for (long long s = reach; s >= u[i]; --s) count[s] += count[s - u[i]];
        }
        const auto s_obs = std::llround(2.0 * res.statistic);
        double lower = 0.0, upper = 0.0, all = 0.0;
        for (long long s = 0; s <= total; ++s) {
            all += count[s];
            if (s <= s_obs) lower += count[s];
            if (s >= s_obs) upper += count[s];
        }
        res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    } else {
        const double nn = n;
        const double mean = nn * (nn + 1.0) / 4.0;
        double tie_corr = 0.0;
        {
            std::vector<double> sorted(abs_d.data(), abs_d.data() + n);
            std::sort(sorted.begin(), sorted.end());
            std::size_t i = 0;
            while (i < sorted.size()) {
                std::size_t j = i;
                while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
                const double t = static_cast<double>(j - i + 1);
                tie_corr += t * t * t - t;
                i = j + 1;
            }
        }
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_corr / 48.0;
        if (!(var > 0.0)) throw NumericError("wilcoxon: zero variance under ties");
        const double shift = res.statistic - mean;
        const double cc = shift > 0.0 ? -0.5 : (shift < 0.0 ? 0.5 : 0.0);
        const double z = (shift + cc) / std::sqrt(var);
        res.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
    }
    return res;
}

}  // namespace debias::stats
