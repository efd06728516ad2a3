#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "debias/core.hpp"
#include "debias/error.hpp"
#include "debias/stats.hpp"

namespace debias::harmonize {

using nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

enum class UnseenGroupPolicy { error, passthrough };

// ---------------------------------------------------------------------------
// Shared fit context: groups, designs, per-feature regression
// ---------------------------------------------------------------------------

namespace detail {

struct GroupIndex {
    std::vector<std::string> levels;
    std::vector<int> row_group;        // per row, index into levels
    std::vector<std::vector<int>> rows;  // per group
};

inline GroupIndex index_groups(const FeatureTable& t, std::string_view group_by,
                               int min_per_group) {
    auto [labels, levels] = resolve_groups(t, group_by);
    GroupIndex gi;
    gi.levels = levels;
    gi.row_group.resize(labels.size());
    gi.rows.resize(levels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto it = std::lower_bound(levels.begin(), levels.end(), labels[r]);
        const int g = static_cast<int>(it - levels.begin());
        gi.row_group[r] = g;
        gi.rows[g].push_back(static_cast<int>(r));
    }
    for (std::size_t g = 0; g < gi.rows.size(); ++g)
        if (static_cast<int>(gi.rows[g].size()) < min_per_group)
            throw DataError("group '" + gi.levels[g] + "' has " + std::to_string(gi.rows[g].size()) +
                            " subjects, need >= " + std::to_string(min_per_group));
    return gi;
}

inline Eigen::MatrixXd group_dummies(const GroupIndex& gi) {
    const auto n = static_cast<Eigen::Index>(gi.row_group.size());
    const auto g = static_cast<Eigen::Index>(gi.levels.size());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, g - 1);
    for (Eigen::Index r = 0; r < n; ++r)
        if (gi.row_group[r] > 0) d(r, gi.row_group[r] - 1) = 1.0;
    return d;
}

// Flag remove columns that are constant within every group: they are
// perfectly collinear with the group dummies and make the fit unidentifiable.
inline void diagnose_group_collinearity(const GroupIndex& gi, const Eigen::MatrixXd& R,
                                        const std::vector<std::string>& r_names) {
    for (Eigen::Index c = 0; c < R.cols(); ++c) {
        bool constant_within = true;
        for (const auto& rows : gi.rows) {
            const double first = R(rows.front(), c);
            for (int r : rows)
                if (R(r, c) != first) {
                    constant_within = false;
                    break;
                }
            if (!constant_within) break;
        }
        if (constant_within)
            throw DataError("remove covariate column '" + r_names[c] +
                            "' is constant within each group and collinear with the group effect");
    }
}

struct RegressionFit {
    Eigen::VectorXd alpha;   // F
    Eigen::MatrixXd beta;    // pk x F
    Eigen::MatrixXd zeta;    // pr x F
    Eigen::MatrixXd gamma;   // G x F, reference row zero
    Eigen::MatrixXd residuals;  // N x F
};

// Per-feature OLS on [1 | group dummies | K | R] with one shared QR.
inline RegressionFit fit_regression(const FeatureTable& t, const GroupIndex& gi,
                                    const Eigen::MatrixXd& K, const Eigen::MatrixXd& R,
                                    const std::vector<std::string>& r_names) {
    const Eigen::Index n = t.n_rows();
    const auto g = static_cast<Eigen::Index>(gi.levels.size());
    Eigen::MatrixXd design(n, 1 + (g - 1) + K.cols() + R.cols());
    design.col(0).setOnes();
    design.middleCols(1, g - 1) = group_dummies(gi);
    if (K.cols() > 0) design.middleCols(g, K.cols()) = K;
    if (R.cols() > 0) design.rightCols(R.cols()) = R;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols()) {
        diagnose_group_collinearity(gi, R, r_names);
        throw DataError("rank-deficient harmonization design (" + std::to_string(qr.rank()) +
                        " of " + std::to_string(design.cols()) + " columns independent)");
    }
    RegressionFit fit;
    const Eigen::MatrixXd coef = qr.solve(t.values);
    fit.alpha = coef.row(0).transpose();
    fit.gamma = Eigen::MatrixXd::Zero(g, t.n_features());
    fit.gamma.bottomRows(g - 1) = coef.middleRows(1, g - 1);
    fit.beta = coef.middleRows(g, K.cols());
    fit.zeta = coef.bottomRows(R.cols());
    fit.residuals = t.values - design * coef;
    return fit;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Z-score model
// ---------------------------------------------------------------------------

struct ZScoreModel {
    std::string group_by = "group";
    std::vector<std::string> group_levels;
    std::vector<std::string> feature_names;
    Eigen::MatrixXd mean;  // G x F
    Eigen::MatrixXd sd;    // G x F, > 0
};

inline ZScoreModel fit_zscore(const FeatureTable& t, std::string_view group_by = "group") {
    const auto gi = detail::index_groups(t, group_by, 2);
    ZScoreModel m;
    m.group_by = std::string(group_by);
    m.group_levels = gi.levels;
    m.feature_names = t.feature_names;
    const auto g = static_cast<Eigen::Index>(gi.levels.size());
    m.mean.resize(g, t.n_features());
    m.sd.resize(g, t.n_features());
    for (Eigen::Index i = 0; i < g; ++i) {
        const auto& rows = gi.rows[i];
        Eigen::MatrixXd block(static_cast<Eigen::Index>(rows.size()), t.n_features());
        for (std::size_t r = 0; r < rows.size(); ++r) block.row(static_cast<Eigen::Index>(r)) = t.values.row(rows[r]);
        m.mean.row(i) = block.colwise().mean();
        const Eigen::MatrixXd centered = block.rowwise() - m.mean.row(i);
        m.sd.row(i) =
            (centered.colwise().squaredNorm() / static_cast<double>(rows.size() - 1)).cwiseSqrt();
        for (Eigen::Index f = 0; f < t.n_features(); ++f)
            if (!(m.sd(i, f) > 0.0))
                throw DataError("zero within-group variance for group '" + gi.levels[i] +
                                "', feature '" + t.feature_names[f] + "'");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Linear residual model
// ---------------------------------------------------------------------------

struct LinearModel {
    std::string group_by = "group";
    std::vector<std::string> group_levels;
    std::vector<std::string> feature_names;
    CovariateSpec spec;
    DesignRecipe keep_recipe;
    DesignRecipe remove_recipe;
    Eigen::VectorXd alpha;  // F
    Eigen::MatrixXd beta;   // pk x F
    Eigen::MatrixXd zeta;   // pr x F
    Eigen::MatrixXd gamma;  // G x F, reference row exactly zero
};

inline LinearModel fit_linear(const FeatureTable& t, std::string_view group_by,
                              const CovariateSpec& spec) {
    if (spec.substitute_pcs != 0)
        throw ConfigError("substitute_pc is only supported by the combatpp family");
    const auto gi = detail::index_groups(t, group_by, 1);
    auto [K, R] = build_design(t, spec);
    const auto fit = detail::fit_regression(t, gi, K.m, R.m, R.column_names);
    LinearModel m;
    m.group_by = std::string(group_by);
    m.group_levels = gi.levels;
    m.feature_names = t.feature_names;
    m.spec = spec;
    m.keep_recipe = K.recipe;
    m.remove_recipe = R.recipe;
    m.alpha = fit.alpha;
    m.beta = fit.beta;
    m.zeta = fit.zeta;
    m.gamma = fit.gamma;
    return m;
}

// ---------------------------------------------------------------------------
// ComBat with empirical Bayes shrinkage
// ---------------------------------------------------------------------------

struct EbPriors {
    Eigen::VectorXd gamma_bar;  // per group: normal prior mean
    Eigen::VectorXd tau2;       // per group: normal prior variance
    Eigen::VectorXd lambda;     // per group: inverse-gamma shape
    Eigen::VectorXd theta;      // per group: inverse-gamma scale
};

struct CombatModel {
    std::string group_by = "group";
    std::vector<std::string> group_levels;
    std::vector<std::string> feature_names;
    CovariateSpec spec;
    DesignRecipe keep_recipe;
    DesignRecipe remove_recipe;
    Eigen::VectorXd alpha;        // F
    Eigen::MatrixXd beta;         // pk x F
    Eigen::MatrixXd zeta;         // pr x F (+ pc columns for combatpp)
    Eigen::VectorXd pooled_sd;    // F, s_f
    Eigen::MatrixXd gamma_hat;    // G x F, per-group mean of Z (unshrunk)
    Eigen::MatrixXd delta2_hat;   // G x F, per-group variance of Z (unshrunk)
    Eigen::MatrixXd gamma_star;   // G x F, EB location
    Eigen::MatrixXd delta_star;   // G x F, EB scale (sd), > 0
    EbPriors priors;
    std::vector<int> group_counts;
};

/// ComBat++ carries the ComBat parameters plus the frozen PC basis used to
/// rebuild substitute-confounder scores at apply time.
struct CombatPPModel {
    CombatModel combat;
    int n_pcs = 0;
    stats::PcaBasis pc_basis;  // valid when n_pcs > 0
};

/// Principal-component substitute confounders: scores of the top-m PCs
/// computed across all features.
inline std::pair<Eigen::MatrixXd, stats::PcaBasis> substitute_confounders(const FeatureTable& t,
                                                                          int m) {
    stats::PcaBasis basis = stats::pca_fit(t.values, m);
    return {stats::pca_transform(basis, t.values), std::move(basis)};
}

namespace detail {

// Method-of-moments inverse-gamma hyperparameters from the across-feature
// spread of the per-group variances.
inline void ig_moments(double m, double v, double& lambda, double& theta) {
    lambda = (2.0 * v + m * m) / v;
    theta = (m * v + m * m * m) / v;
}

inline CombatModel fit_combat_impl(const FeatureTable& t, std::string_view group_by,
                                   const CovariateSpec& spec, const Eigen::MatrixXd& K,
                                   const Eigen::MatrixXd& R,
                                   const std::vector<std::string>& r_names,
                                   const DesignRecipe& keep_recipe,
                                   const DesignRecipe& remove_recipe) {
    const auto gi = index_groups(t, group_by, 2);
    const auto fit = fit_regression(t, gi, K, R, r_names);
    const Eigen::Index n = t.n_rows();
    const Eigen::Index nf = t.n_features();
    const auto g = static_cast<Eigen::Index>(gi.levels.size());

    CombatModel m;
    m.group_by = std::string(group_by);
    m.group_levels = gi.levels;
    m.feature_names = t.feature_names;
    m.spec = spec;
    m.keep_recipe = keep_recipe;
    m.remove_recipe = remove_recipe;
    m.alpha = fit.alpha;
    m.beta = fit.beta;
    m.zeta = fit.zeta;

    m.pooled_sd =
        (fit.residuals.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt();
    for (Eigen::Index f = 0; f < nf; ++f)
        if (!(m.pooled_sd[f] > 0.0))
            throw DataError("zero pooled variance for feature '" + t.feature_names[f] + "'");

    // Standardize without removing the group effect; per-group moments of Z
    // are the unshrunk location/scale estimates.
    Eigen::MatrixXd z = t.values;
    z.noalias() -= Eigen::VectorXd::Ones(n) * m.alpha.transpose();
    if (K.cols() > 0) z.noalias() -= K * m.beta;
    if (R.cols() > 0) z.noalias() -= R * m.zeta;
    z.array().rowwise() /= m.pooled_sd.transpose().array();

    m.gamma_hat.resize(g, nf);
    m.delta2_hat.resize(g, nf);
    m.group_counts.resize(static_cast<std::size_t>(g));
    for (Eigen::Index i = 0; i < g; ++i) {
        const auto& rows = gi.rows[i];
        m.group_counts[static_cast<std::size_t>(i)] = static_cast<int>(rows.size());
        Eigen::MatrixXd block(static_cast<Eigen::Index>(rows.size()), nf);
        for (std::size_t r = 0; r < rows.size(); ++r) block.row(static_cast<Eigen::Index>(r)) = z.row(rows[r]);
        m.gamma_hat.row(i) = block.colwise().mean();
        const Eigen::MatrixXd centered = block.rowwise() - m.gamma_hat.row(i);
        m.delta2_hat.row(i) =
            centered.colwise().squaredNorm() / static_cast<double>(rows.size() - 1);
    }

    // Empirical Bayes per group: normal prior on the location, inverse-gamma
    // on the variance, hyperparameters by method of moments across features,
    // then fixed-point iteration of the conditional posterior estimates.
    m.priors.gamma_bar.resize(g);
    m.priors.tau2.resize(g);
    m.priors.lambda.resize(g);
    m.priors.theta.resize(g);
    m.gamma_star.resize(g, nf);
    m.delta_star.resize(g, nf);
    const double fcount = static_cast<double>(nf);
    for (Eigen::Index i = 0; i < g; ++i) {
        const double n_i = static_cast<double>(m.group_counts[static_cast<std::size_t>(i)]);
        const Eigen::RowVectorXd gh = m.gamma_hat.row(i);
        const Eigen::RowVectorXd d2 = m.delta2_hat.row(i);
        const double gbar = gh.mean();
        const double tau2 = nf > 1 ? (gh.array() - gbar).square().sum() / (fcount - 1.0) : 0.0;
        const double mm = d2.mean();
        const double vv = nf > 1 ? (d2.array() - mm).square().sum() / (fcount - 1.0) : 0.0;
        m.priors.gamma_bar[i] = gbar;
        m.priors.tau2[i] = tau2;

        const bool degenerate_ig = !(vv > 1e-12);
        double lambda = 0.0, theta = 0.0;
        if (!degenerate_ig) ig_moments(mm, vv, lambda, theta);
        m.priors.lambda[i] = lambda;
        m.priors.theta[i] = theta;

        Eigen::RowVectorXd gstar = gh;
        Eigen::RowVectorXd d2star = d2;
        double change = 0.0;
        int it = 0;
        for (; it < 100; ++it) {
            Eigen::RowVectorXd gnew(nf), dnew(nf);
            for (Eigen::Index f = 0; f < nf; ++f) {
                const double w_num = n_i * tau2;
                gnew[f] = tau2 > 0.0 ? (w_num * gh[f] + d2star[f] * gbar) / (w_num + d2star[f])
                                     : gbar;
                const double sum2 = (n_i - 1.0) * d2[f] + n_i * (gh[f] - gnew[f]) * (gh[f] - gnew[f]);
                dnew[f] = degenerate_ig ? mm : (theta + 0.5 * sum2) / (n_i / 2.0 + lambda - 1.0);
            }
            change = std::max((gnew - gstar).cwiseAbs().maxCoeff(),
                              (dnew - d2star).cwiseAbs().maxCoeff());
            gstar = gnew;
            d2star = dnew;
            if (change < 1e-6) break;
        }
        if (change >= 1e-6)
            throw NumericError("ComBat EB iteration did not converge for group '" + gi.levels[i] +
                               "' (last change " + std::to_string(change) + ")");
        for (Eigen::Index f = 0; f < nf; ++f)
            if (!(d2star[f] > 0.0))
                throw NumericError("non-positive EB variance for group '" + gi.levels[i] + "'");
        m.gamma_star.row(i) = gstar;
        m.delta_star.row(i) = d2star.cwiseSqrt();
    }
    return m;
}

}  // namespace detail

inline CombatModel fit_combat(const FeatureTable& t, std::string_view group_by,
                              const CovariateSpec& spec) {
    if (spec.substitute_pcs != 0)
        throw ConfigError("substitute_pc is only supported by the combatpp family");
    auto [K, R] = build_design(t, spec);
    return detail::fit_combat_impl(t, group_by, spec, K.m, R.m, R.column_names, K.recipe,
                                   R.recipe);
}

inline CombatPPModel fit_combatpp(const FeatureTable& t, std::string_view group_by,
                                  const CovariateSpec& spec) {
    auto [K, R] = build_design(t, spec);
    CombatPPModel pp;
    pp.n_pcs = spec.substitute_pcs;
    Eigen::MatrixXd r_full = R.m;
    std::vector<std::string> r_names = R.column_names;
    if (pp.n_pcs > 0) {
        if (pp.n_pcs > std::min<Eigen::Index>(t.n_rows() - 1, t.n_features()))
            throw ConfigError("substitute_pc(" + std::to_string(pp.n_pcs) +
                              ") exceeds the available rank");
        auto [scores, basis] = substitute_confounders(t, pp.n_pcs);
        pp.pc_basis = std::move(basis);
        r_full.conservativeResize(Eigen::NoChange, R.m.cols() + pp.n_pcs);
        r_full.rightCols(pp.n_pcs) = scores;
        for (int c = 0; c < pp.n_pcs; ++c) r_names.push_back("pc" + std::to_string(c + 1));
    }
    pp.combat = detail::fit_combat_impl(t, group_by, spec, K.m, r_full, r_names, K.recipe,
                                        R.recipe);
    return pp;
}

// ---------------------------------------------------------------------------
// Apply
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> rows_to_groups(const FeatureTable& t, std::string_view group_by,
                                       const std::vector<std::string>& levels,
                                       UnseenGroupPolicy policy,
                                       std::vector<std::string>* warnings) {
    auto [labels, table_levels] = resolve_groups(t, group_by);
    std::vector<int> out(labels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto it = std::lower_bound(levels.begin(), levels.end(), labels[r]);
        if (it == levels.end() || *it != labels[r]) {
            if (policy == UnseenGroupPolicy::error)
                throw DataError("group '" + labels[r] + "' was not seen at fit time");
            out[r] = -1;
            if (warnings)
                warnings->push_back("row " + std::to_string(r) + ": unseen group '" + labels[r] +
                                    "' passed through unharmonized");
        } else {
            out[r] = static_cast<int>(it - levels.begin());
        }
    }
    return out;
}

inline void check_features(const FeatureTable& t, const std::vector<std::string>& names) {
    if (t.feature_names != names)
        throw DataError("feature columns do not match the fitted model");
}

}  // namespace detail

inline FeatureTable apply(const ZScoreModel& m, const FeatureTable& t,
                          UnseenGroupPolicy policy = UnseenGroupPolicy::error,
                          std::vector<std::string>* warnings = nullptr) {
    detail::check_features(t, m.feature_names);
    const auto rows = detail::rows_to_groups(t, m.group_by, m.group_levels, policy, warnings);
    FeatureTable out = t;
    for (Eigen::Index r = 0; r < t.n_rows(); ++r) {
        const int g = rows[static_cast<std::size_t>(r)];
        if (g < 0) continue;
        out.values.row(r) = (t.values.row(r) - m.mean.row(g)).cwiseQuotient(m.sd.row(g));
    }
    return out;
}

inline FeatureTable apply(const LinearModel& m, const FeatureTable& t,
                          UnseenGroupPolicy policy = UnseenGroupPolicy::error,
                          std::vector<std::string>* warnings = nullptr) {
    detail::check_features(t, m.feature_names);
    const auto rows = detail::rows_to_groups(t, m.group_by, m.group_levels, policy, warnings);
    const DesignMatrix R = materialize_design(m.remove_recipe, t);
    FeatureTable out = t;
    Eigen::MatrixXd removed = Eigen::MatrixXd::Zero(t.n_rows(), t.n_features());
    if (R.m.cols() > 0) removed = R.m * m.zeta;
    for (Eigen::Index r = 0; r < t.n_rows(); ++r) {
        const int g = rows[static_cast<std::size_t>(r)];
        if (g < 0) continue;
        out.values.row(r) = t.values.row(r) - m.gamma.row(g) - removed.row(r);
    }
    return out;
}

namespace detail {

inline FeatureTable apply_combat(const CombatModel& m, const Eigen::MatrixXd& r_block,
                                 const FeatureTable& t, UnseenGroupPolicy policy,
                                 std::vector<std::string>* warnings) {
    check_features(t, m.feature_names);
    const auto rows = rows_to_groups(t, m.group_by, m.group_levels, policy, warnings);
    const DesignMatrix K = materialize_design(m.keep_recipe, t);

    Eigen::MatrixXd kept = Eigen::MatrixXd::Zero(t.n_rows(), t.n_features());
    kept.noalias() += Eigen::VectorXd::Ones(t.n_rows()) * m.alpha.transpose();
    if (K.m.cols() > 0) kept.noalias() += K.m * m.beta;

    Eigen::MatrixXd z = t.values - kept;
    if (r_block.cols() > 0) z.noalias() -= r_block * m.zeta;
    z.array().rowwise() /= m.pooled_sd.transpose().array();

    FeatureTable out = t;
    for (Eigen::Index r = 0; r < t.n_rows(); ++r) {
        const int g = rows[static_cast<std::size_t>(r)];
        if (g < 0) continue;
        out.values.row(r) =
            ((z.row(r) - m.gamma_star.row(g)).cwiseQuotient(m.delta_star.row(g)))
                .cwiseProduct(m.pooled_sd.transpose()) +
            kept.row(r);
    }
    return out;
}

}  // namespace detail

inline FeatureTable apply(const CombatModel& m, const FeatureTable& t,
                          UnseenGroupPolicy policy = UnseenGroupPolicy::error,
                          std::vector<std::string>* warnings = nullptr) {
    const DesignMatrix R = materialize_design(m.remove_recipe, t);
    return detail::apply_combat(m, R.m, t, policy, warnings);
}

inline FeatureTable apply(const CombatPPModel& m, const FeatureTable& t,
                          UnseenGroupPolicy policy = UnseenGroupPolicy::error,
                          std::vector<std::string>* warnings = nullptr) {
    const DesignMatrix R = materialize_design(m.combat.remove_recipe, t);
    Eigen::MatrixXd r_full = R.m;
    if (m.n_pcs > 0) {
        const Eigen::MatrixXd scores = stats::pca_transform(m.pc_basis, t.values);
        r_full.conservativeResize(Eigen::NoChange, R.m.cols() + m.n_pcs);
        r_full.rightCols(m.n_pcs) = scores;
    }
    return detail::apply_combat(m.combat, r_full, t, policy, warnings);
}

// ---------------------------------------------------------------------------
// Serialization (versioned JSON, lossless doubles)
// ---------------------------------------------------------------------------

namespace detail {

inline json to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Eigen::MatrixXd mat_from_json(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Eigen::MatrixXd(0, 0);
    const auto cols = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j.at(r).size()) != cols)
            throw DataError("corrupted model file: ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    }
    return m;
}

inline Eigen::VectorXd vec_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
    return v;
}

inline json recipe_to_json(const DesignRecipe& r) {
    json entries = json::array();
    for (const auto& e : r.entries) {
        json je;
        if (e.categorical) {
            je["kind"] = "categorical";
            je["covariate"] = e.cat.covariate;
            je["reference"] = e.cat.reference;
            je["levels"] = e.cat.levels;
        } else {
            je["kind"] = "numeric";
            je["covariate"] = e.num.covariate;
            je["center"] = e.num.center;
            je["squared"] = e.num.squared;
        }
        entries.push_back(std::move(je));
    }
    return entries;
}

inline DesignRecipe recipe_from_json(const json& j) {
    DesignRecipe r;
    for (const auto& je : j) {
        DesignRecipe::Entry e;
        if (je.at("kind") == "categorical") {
            e.categorical = true;
            e.cat.covariate = je.at("covariate").get<std::string>();
            e.cat.reference = je.at("reference").get<std::string>();
            e.cat.levels = je.at("levels").get<std::vector<std::string>>();
        } else {
            e.num.covariate = je.at("covariate").get<std::string>();
            e.num.center = je.at("center").get<double>();
            e.num.squared = je.at("squared").get<bool>();
        }
        r.entries.push_back(std::move(e));
    }
    return r;
}

inline json spec_to_json(const CovariateSpec& s) {
    json j;
    j["keep"] = s.keep;
    j["remove"] = s.remove;
    j["substitute_pcs"] = s.substitute_pcs;
    j["expand_age_quadratic"] = s.expand_age_quadratic;
    return j;
}

inline CovariateSpec spec_from_json(const json& j) {
    CovariateSpec s;
    s.keep = j.at("keep").get<std::vector<std::string>>();
    s.remove = j.at("remove").get<std::vector<std::string>>();
    s.substitute_pcs = j.at("substitute_pcs").get<int>();
    s.expand_age_quadratic = j.at("expand_age_quadratic").get<bool>();
    return s;
}

inline json pca_to_json(const stats::PcaBasis& b) {
    json j;
    j["mean"] = to_json(b.mean);
    j["scale"] = to_json(b.scale);
    j["components"] = to_json(b.components);
    j["explained_variance"] = to_json(b.explained_variance);
    return j;
}

inline stats::PcaBasis pca_from_json(const json& j) {
    stats::PcaBasis b;
    b.mean = vec_from_json(j.at("mean"));
    b.scale = vec_from_json(j.at("scale"));
    b.components = mat_from_json(j.at("components"));
    b.explained_variance = vec_from_json(j.at("explained_variance"));
    return b;
}

inline json combat_to_json(const CombatModel& m) {
    json p;
    p["group_by"] = m.group_by;
    p["spec"] = spec_to_json(m.spec);
    p["keep_recipe"] = recipe_to_json(m.keep_recipe);
    p["remove_recipe"] = recipe_to_json(m.remove_recipe);
    p["alpha"] = to_json(m.alpha);
    p["beta"] = to_json(m.beta);
    p["zeta"] = to_json(m.zeta);
    p["pooled_sd"] = to_json(m.pooled_sd);
    p["gamma_hat"] = to_json(m.gamma_hat);
    p["delta2_hat"] = to_json(m.delta2_hat);
    p["gamma_star"] = to_json(m.gamma_star);
    p["delta_star"] = to_json(m.delta_star);
    p["eb_gamma_bar"] = to_json(m.priors.gamma_bar);
    p["eb_tau2"] = to_json(m.priors.tau2);
    p["eb_lambda"] = to_json(m.priors.lambda);
    p["eb_theta"] = to_json(m.priors.theta);
    p["group_counts"] = m.group_counts;
    return p;
}

inline CombatModel combat_from_json(const json& p, std::vector<std::string> groups,
                                    std::vector<std::string> features) {
    CombatModel m;
    m.group_levels = std::move(groups);
    m.feature_names = std::move(features);
    m.group_by = p.at("group_by").get<std::string>();
    m.spec = spec_from_json(p.at("spec"));
    m.keep_recipe = recipe_from_json(p.at("keep_recipe"));
    m.remove_recipe = recipe_from_json(p.at("remove_recipe"));
    m.alpha = vec_from_json(p.at("alpha"));
    m.beta = mat_from_json(p.at("beta"));
    m.zeta = mat_from_json(p.at("zeta"));
    m.pooled_sd = vec_from_json(p.at("pooled_sd"));
    m.gamma_hat = mat_from_json(p.at("gamma_hat"));
    m.delta2_hat = mat_from_json(p.at("delta2_hat"));
    m.gamma_star = mat_from_json(p.at("gamma_star"));
    m.delta_star = mat_from_json(p.at("delta_star"));
    m.priors.gamma_bar = vec_from_json(p.at("eb_gamma_bar"));
    m.priors.tau2 = vec_from_json(p.at("eb_tau2"));
    m.priors.lambda = vec_from_json(p.at("eb_lambda"));
    m.priors.theta = vec_from_json(p.at("eb_theta"));
    m.group_counts = p.at("group_counts").get<std::vector<int>>();
    return m;
}

}  // namespace detail

using AnyModel = std::variant<ZScoreModel, LinearModel, CombatModel, CombatPPModel>;

inline std::string family_name(const AnyModel& m) {
    switch (m.index()) {
        case 0: return "zscore";
        case 1: return "linear";
        case 2: return "combat";
        default: return "combatpp";
    }
}

inline json model_to_json(const AnyModel& any) {
    json j;
    j["family"] = family_name(any);
    j["version"] = kModelSchemaVersion;
    if (const auto* m = std::get_if<ZScoreModel>(&any)) {
        j["group_levels"] = m->group_levels;
        j["feature_names"] = m->feature_names;
        json p;
        p["group_by"] = m->group_by;
        p["mean"] = detail::to_json(m->mean);
        p["sd"] = detail::to_json(m->sd);
        j["parameters"] = std::move(p);
    } else if (const auto* m = std::get_if<LinearModel>(&any)) {
        j["group_levels"] = m->group_levels;
        j["feature_names"] = m->feature_names;
        json p;
        p["group_by"] = m->group_by;
        p["spec"] = detail::spec_to_json(m->spec);
        p["keep_recipe"] = detail::recipe_to_json(m->keep_recipe);
        p["remove_recipe"] = detail::recipe_to_json(m->remove_recipe);
        p["alpha"] = detail::to_json(m->alpha);
        p["beta"] = detail::to_json(m->beta);
        p["zeta"] = detail::to_json(m->zeta);
        p["gamma"] = detail::to_json(m->gamma);
        j["parameters"] = std::move(p);
    } else if (const auto* m = std::get_if<CombatModel>(&any)) {
        j["group_levels"] = m->group_levels;
        j["feature_names"] = m->feature_names;
        j["parameters"] = detail::combat_to_json(*m);
    } else {
        const auto& pp = std::get<CombatPPModel>(any);
        j["group_levels"] = pp.combat.group_levels;
        j["feature_names"] = pp.combat.feature_names;
        j["parameters"] = detail::combat_to_json(pp.combat);
        j["n_pcs"] = pp.n_pcs;
        if (pp.n_pcs > 0) j["pca_basis"] = detail::pca_to_json(pp.pc_basis);
    }
    return j;
}

inline void save_model(const AnyModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << model_to_json(m).dump(2) << '\n';
}

inline AnyModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("corrupted model file '" + path + "': " + e.what());
    }
    if (!j.contains("version") || j.at("version").get<int>() != kModelSchemaVersion)
        throw DataError("model schema version mismatch in '" + path + "'");
    const std::string family = j.at("family").get<std::string>();
    auto groups = j.at("group_levels").get<std::vector<std::string>>();
    auto features = j.at("feature_names").get<std::vector<std::string>>();
    const json& p = j.at("parameters");
    try {
        if (family == "zscore") {
            ZScoreModel m;
            m.group_levels = std::move(groups);
            m.feature_names = std::move(features);
            m.group_by = p.at("group_by").get<std::string>();
            m.mean = detail::mat_from_json(p.at("mean"));
            m.sd = detail::mat_from_json(p.at("sd"));
            return m;
        }
        if (family == "linear") {
            LinearModel m;
            m.group_levels = std::move(groups);
            m.feature_names = std::move(features);
            m.group_by = p.at("group_by").get<std::string>();
            m.spec = detail::spec_from_json(p.at("spec"));
            m.keep_recipe = detail::recipe_from_json(p.at("keep_recipe"));
            m.remove_recipe = detail::recipe_from_json(p.at("remove_recipe"));
            m.alpha = detail::vec_from_json(p.at("alpha"));
            m.beta = detail::mat_from_json(p.at("beta"));
            m.zeta = detail::mat_from_json(p.at("zeta"));
            m.gamma = detail::mat_from_json(p.at("gamma"));
            return m;
        }
        if (family == "combat")
            return detail::combat_from_json(p, std::move(groups), std::move(features));
        if (family == "combatpp") {
            CombatPPModel pp;
            pp.combat = detail::combat_from_json(p, std::move(groups), std::move(features));
            pp.n_pcs = j.at("n_pcs").get<int>();
            if (pp.n_pcs > 0) pp.pc_basis = detail::pca_from_json(j.at("pca_basis"));
            return pp;
        }
    } catch (const json::exception& e) {
        throw DataError("corrupted model file '" + path + "': " + e.what());
    }
    throw DataError("unknown model family '" + family + "' in '" + path + "'");
}

/// Load a model and require a specific family.
template <typename Model>
Model load_model_as(const std::string& path) {
    AnyModel any = load_model(path);
    if (auto* m = std::get_if<Model>(&any)) return std::move(*m);
    throw DataError("model file '" + path + "' holds family '" + family_name(any) +
                    "', not the requested one");
}

inline FeatureTable apply(const AnyModel& any, const FeatureTable& t,
                          UnseenGroupPolicy policy = UnseenGroupPolicy::error,
                          std::vector<std::string>* warnings = nullptr) {
    return std::visit([&](const auto& m) { return apply(m, t, policy, warnings); }, any);
}

}  // namespace debias::harmonize
