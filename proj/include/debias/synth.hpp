#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "debias/causal.hpp"
#include "debias/core.hpp"
#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias::synth {

// ---------------------------------------------------------------------------
// Generative recipe
// ---------------------------------------------------------------------------

/// Multi-site tabular generator. Feature model per subject j in group i:
///   Y_jf = alpha_f + gamma_if + beta_f^T k_j + loading_f^T z_j + delta_if * eps_jf
/// with eps ~ N(0, noise_sd^2). Group 0 (the lexicographically smallest
/// label) carries gamma = 0 so the planted site effects match the estimand
/// of treatment-coded fits; other groups draw gamma ~ N(0, site_location_sd^2)
/// and delta log-uniform over site_scale_range (all groups).
struct GenerativeSpec {
    int n_groups = 2;
    std::vector<int> subjects_per_group = {100};  // broadcast when size 1
    int n_features = 10;

    double alpha_sd = 1.0;            // spread of baseline feature levels
    double site_location_sd = 0.0;    // spread of true gamma_if
    double site_scale_lo = 1.0;       // true delta_if range (log-uniform)
    double site_scale_hi = 1.0;

    double age_lo = 20.0;
    double age_hi = 80.0;
    std::vector<std::pair<double, double>> age_windows;  // optional per-group
    double age_linear_sd = 0.0;       // per-feature linear age coefficient spread
    double age_quadratic_sd = 0.0;
    double sex_effect_sd = 0.0;       // per-feature shift for sex == M
    double fixed_age_slope = 0.0;     // deterministic linear slope override
    int fixed_age_features = 0;       // leading features receiving the fixed slope

    struct Latent {
        int dims = 0;
        double loading_sd = 1.0;
        bool affects_y = false;
        std::vector<double> group_mean;   // per-group latent mean shift (broadcast empty -> 0)
        std::vector<double> group_scale;  // per-group latent sd (broadcast empty -> 1)
    } latent;

    double causal_weight = 0.0;   // sd of true feature->outcome weights; 0 disables the path
    bool make_outcome = false;    // emit numeric covariate "outcome"
    double outcome_noise_sd = 1.0;

    double noise_sd = 1.0;
    double icv_lo = 0.0;          // icv enabled when hi > lo > 0
    double icv_hi = 0.0;
    std::uint64_t seed = 0;

    bool icv_enabled() const { return icv_hi > icv_lo && icv_lo > 0.0; }

    void validate() const {
        if (n_groups < 1 || n_features < 1) throw ConfigError("synth: need groups >= 1, features >= 1");
        if (n_groups > 99) throw ConfigError("synth: at most 99 groups");
        if (subjects_per_group.empty()) throw ConfigError("synth: subjects_per_group empty");
        if (subjects_per_group.size() != 1 &&
            subjects_per_group.size() != static_cast<std::size_t>(n_groups))
            throw ConfigError("synth: subjects_per_group must have 1 or n_groups entries");
        for (int s : subjects_per_group)
            if (s < 2) throw ConfigError("synth: need >= 2 subjects per group");
        if (!(site_scale_lo > 0.0) || site_scale_hi < site_scale_lo)
            throw ConfigError("synth: site_scale range must be positive with hi >= lo");
        if (!(noise_sd > 0.0)) throw ConfigError("synth: noise_sd must be > 0");
        if (!age_windows.empty() && age_windows.size() != static_cast<std::size_t>(n_groups))
            throw ConfigError("synth: age_windows must have n_groups entries");
        if (latent.dims < 0) throw ConfigError("synth: latent dims must be >= 0");
        if (!latent.group_mean.empty() &&
            latent.group_mean.size() != static_cast<std::size_t>(n_groups))
            throw ConfigError("synth: latent.group_mean must have n_groups entries");
        if (!latent.group_scale.empty() &&
            latent.group_scale.size() != static_cast<std::size_t>(n_groups))
            throw ConfigError("synth: latent.group_scale must have n_groups entries");
        if (latent.affects_y && latent.dims == 0)
            throw ConfigError("synth: latent.affects_y requires latent.dims >= 1");
    }

    std::string regime() const {
        const bool causal_path = causal_weight != 0.0;
        const bool confounded_path = latent.dims > 0 && latent.affects_y;
        if (causal_path && confounded_path) return "mixed";
        if (causal_path) return "causal";
        if (confounded_path) return "confounded";
        return "none";
    }
};

/// The planted parameters behind one generated table.
struct GroundTruth {
    Eigen::MatrixXd gamma_true;      // G x F (row 0 zero)
    Eigen::MatrixXd delta_true;      // G x F
    Eigen::MatrixXd beta_true;       // F x 3: [age linear, age quadratic, sex==M]
    double age_center = 0.0;         // age offset used by the generative beta basis
    Eigen::MatrixXd latent_scores;   // N x k_true
    Eigen::MatrixXd latent_loading;  // F x k_true
    Eigen::VectorXd w_true;          // F, feature -> outcome weights
    Eigen::VectorXd w_y;             // k_true, latent -> outcome weights
    std::string regime;
    Eigen::MatrixXd clean_values;    // alpha + beta k + latent only plus unit-scale noise
    Eigen::MatrixXd pre_icv_values;  // full model before icv scaling
};

// ---------------------------------------------------------------------------
// Table generation
// ---------------------------------------------------------------------------

inline std::string group_label(int g) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "site%02d", g);
    return buf;
}

inline std::pair<FeatureTable, GroundTruth> generate(const GenerativeSpec& spec) {
    spec.validate();
    const int g_count = spec.n_groups;
    const int f_count = spec.n_features;
    const int k_true = spec.latent.dims;

    std::vector<int> sizes(static_cast<std::size_t>(g_count));
    for (int g = 0; g < g_count; ++g)
        sizes[g] = spec.subjects_per_group.size() == 1 ? spec.subjects_per_group[0]
                                                       : spec.subjects_per_group[g];
    int n_total = 0;
    for (int s : sizes) n_total += s;

    GroundTruth truth;
    truth.regime = spec.regime();
    truth.age_center = 0.5 * (spec.age_lo + spec.age_hi);

    // Independent streams per purpose so toggling one block never shifts
    // the draws of another.
    Rng rng_alpha(derive_seed(spec.seed, "alpha"));
    Rng rng_gamma(derive_seed(spec.seed, "gamma"));
    Rng rng_delta(derive_seed(spec.seed, "delta"));
    Rng rng_beta(derive_seed(spec.seed, "beta"));
    Rng rng_loading(derive_seed(spec.seed, "latent_loading"));
    Rng rng_w(derive_seed(spec.seed, "outcome_w"));

    Eigen::VectorXd alpha(f_count);
    for (int f = 0; f < f_count; ++f) alpha[f] = rng_alpha.normal(0.0, spec.alpha_sd);

    truth.gamma_true = Eigen::MatrixXd::Zero(g_count, f_count);
    for (int g = 1; g < g_count; ++g)
        for (int f = 0; f < f_count; ++f)
            truth.gamma_true(g, f) = rng_gamma.normal(0.0, spec.site_location_sd);

    truth.delta_true.resize(g_count, f_count);
    const double log_lo = std::log(spec.site_scale_lo);
    const double log_hi = std::log(spec.site_scale_hi);
    for (int g = 0; g < g_count; ++g)
        for (int f = 0; f < f_count; ++f)
            truth.delta_true(g, f) = std::exp(rng_delta.uniform(log_lo, log_hi));

    truth.beta_true.resize(f_count, 3);
    for (int f = 0; f < f_count; ++f) {
        truth.beta_true(f, 0) = rng_beta.normal(0.0, spec.age_linear_sd);
        truth.beta_true(f, 1) = rng_beta.normal(0.0, spec.age_quadratic_sd);
        truth.beta_true(f, 2) = rng_beta.normal(0.0, spec.sex_effect_sd);
        if (spec.fixed_age_slope != 0.0 && f < spec.fixed_age_features)
            truth.beta_true(f, 0) = spec.fixed_age_slope;
    }

    truth.latent_loading.resize(f_count, k_true);
    for (int f = 0; f < f_count; ++f)
        for (int d = 0; d < k_true; ++d)
            truth.latent_loading(f, d) = rng_loading.normal(0.0, spec.latent.loading_sd);

    truth.w_true.resize(f_count);
    for (int f = 0; f < f_count; ++f) truth.w_true[f] = rng_w.normal(0.0, std::abs(spec.causal_weight));
    if (spec.causal_weight == 0.0) truth.w_true.setZero();
    truth.w_y.resize(k_true);
    for (int d = 0; d < k_true; ++d) truth.w_y[d] = rng_w.normal();
    if (!spec.latent.affects_y) truth.w_y.setZero();

    FeatureTable table;
    table.values.resize(n_total, f_count);
    table.feature_names.reserve(static_cast<std::size_t>(f_count));
    for (int f = 0; f < f_count; ++f) table.feature_names.push_back("f" + std::to_string(f + 1));
    table.subject_ids.reserve(static_cast<std::size_t>(n_total));
    table.groups.reserve(static_cast<std::size_t>(n_total));

    Eigen::VectorXd age(n_total);
    std::vector<std::string> sex(static_cast<std::size_t>(n_total));
    truth.latent_scores = Eigen::MatrixXd::Zero(n_total, k_true);
    truth.clean_values.resize(n_total, f_count);
    truth.pre_icv_values.resize(n_total, f_count);

    int row = 0;
    for (int g = 0; g < g_count; ++g) {
        Rng rng_age(derive_seed(spec.seed, "age", static_cast<std::uint64_t>(g)));
        Rng rng_sex(derive_seed(spec.seed, "sex", static_cast<std::uint64_t>(g)));
        Rng rng_latent(derive_seed(spec.seed, "latent_scores", static_cast<std::uint64_t>(g)));
        Rng rng_noise(derive_seed(spec.seed, "noise", static_cast<std::uint64_t>(g)));
        const auto [age_lo, age_hi] =
            spec.age_windows.empty() ? std::make_pair(spec.age_lo, spec.age_hi)
                                     : spec.age_windows[static_cast<std::size_t>(g)];
        const double z_mean = spec.latent.group_mean.empty() ? 0.0 : spec.latent.group_mean[g];
        const double z_scale = spec.latent.group_scale.empty() ? 1.0 : spec.latent.group_scale[g];
        const std::string label = group_label(g);

        for (int s = 0; s < sizes[g]; ++s, ++row) {
            char id[16];
            std::snprintf(id, sizeof(id), "s%06d", row + 1);
            table.subject_ids.emplace_back(id);
            table.groups.push_back(label);
            age[row] = rng_age.uniform(age_lo, age_hi);
            const bool male = rng_sex.uniform() < 0.5;
            sex[static_cast<std::size_t>(row)] = male ? "M" : "F";
            for (int d = 0; d < k_true; ++d)
                truth.latent_scores(row, d) = z_mean + z_scale * rng_latent.normal();

            const double age_c = age[row] - truth.age_center;
            for (int f = 0; f < f_count; ++f) {
                double base = alpha[f] + truth.beta_true(f, 0) * age_c +
                              truth.beta_true(f, 1) * age_c * age_c +
                              (male ? truth.beta_true(f, 2) : 0.0);
                for (int d = 0; d < k_true; ++d)
                    base += truth.latent_loading(f, d) * truth.latent_scores(row, d);
                const double eps = rng_noise.normal(0.0, spec.noise_sd);
                truth.clean_values(row, f) = base + eps;
                truth.pre_icv_values(row, f) =
                    base + truth.gamma_true(g, f) + truth.delta_true(g, f) * eps;
            }
        }
    }
    table.values = truth.pre_icv_values;
    table.group_levels = sorted_unique(table.groups);

    Covariate age_cov{"age", false, age, {}, {}};
    Covariate sex_cov{"sex", true, {}, sex, sorted_unique(sex)};
    table.covariates.push_back(std::move(age_cov));
    table.covariates.push_back(std::move(sex_cov));

    if (spec.icv_enabled()) {
        Rng rng_icv(derive_seed(spec.seed, "icv"));
        Eigen::VectorXd icv(n_total);
        for (int r = 0; r < n_total; ++r) icv[r] = rng_icv.uniform(spec.icv_lo, spec.icv_hi);
        table.values.array().colwise() *= icv.array();
        table.covariates.push_back(Covariate{"icv", false, icv, {}, {}});
    }

    if (spec.make_outcome) {
        Rng rng_out(derive_seed(spec.seed, "outcome_noise"));
        Eigen::VectorXd outcome = truth.pre_icv_values * truth.w_true;
        outcome += truth.latent_scores * truth.w_y;
        for (int r = 0; r < n_total; ++r) outcome[r] += rng_out.normal(0.0, spec.outcome_noise_sd);
        table.covariates.push_back(Covariate{"outcome", false, outcome, {}, {}});
    }

    validate_table(table);
    return {std::move(table), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Causal-pair generation (the two limiting regimes)
// ---------------------------------------------------------------------------

enum class CausalRegime { causal, confounded };

struct CausalPairTruth {
    Eigen::VectorXd w_true;          // p (causal regime)
    Eigen::MatrixXd latent_scores;   // N x k (confounded regime)
    Eigen::MatrixXd latent_loading;  // k x p
    Eigen::VectorXd w_y;             // k
    std::string regime;
    Eigen::MatrixXd X;               // raw, pre-standardization
    Eigen::VectorXd Y;
};

/// Causal regime: X iid standard normal, Y = w^T x + noise.
/// Confounded regime: Z iid standard normal, X = W^T z + noise,
/// Y = w_y^T z + noise, no direct X -> Y path. Loading columns are
/// normalized to unit length so every coordinate carries the same
/// signal-to-noise ratio and column standardization at analysis time does
/// not distort the planted factor structure.
inline std::pair<causal::CausalProblem, CausalPairTruth>
generate_causal_pair(int n, int p, int k, CausalRegime regime, std::uint64_t seed,
                     double w_scale = 1.0, double noise_sd = 0.5) {
    if (n < 4 || p < 1 || k < 1) throw ConfigError("generate_causal_pair: bad dimensions");
    if (!(noise_sd > 0.0)) throw ConfigError("generate_causal_pair: noise_sd must be > 0");
    CausalPairTruth truth;
    truth.regime = regime == CausalRegime::causal ? "causal" : "confounded";
    Rng rng_x(derive_seed(seed, "pair_x"));
    Rng rng_w(derive_seed(seed, "pair_w"));
    Rng rng_noise(derive_seed(seed, "pair_noise"));

    truth.X.resize(n, p);
    truth.Y.resize(n);
    if (regime == CausalRegime::causal) {
        truth.w_true.resize(p);
        for (int j = 0; j < p; ++j) truth.w_true[j] = rng_w.normal(0.0, w_scale);
        if (w_scale == 0.0) truth.w_true.setZero();
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < p; ++j) truth.X(r, j) = rng_x.normal();
        truth.Y = truth.X * truth.w_true;
        for (int r = 0; r < n; ++r) truth.Y[r] += rng_noise.normal(0.0, noise_sd);
    } else {
        truth.latent_loading.resize(k, p);
        for (int d = 0; d < k; ++d)
            for (int j = 0; j < p; ++j) truth.latent_loading(d, j) = rng_w.normal();
        for (int j = 0; j < p; ++j) truth.latent_loading.col(j).normalize();
        truth.w_y.resize(k);
        for (int d = 0; d < k; ++d) truth.w_y[d] = rng_w.normal();
        truth.w_y.normalize();
        truth.latent_scores.resize(n, k);
        for (int r = 0; r < n; ++r)
            for (int d = 0; d < k; ++d) truth.latent_scores(r, d) = rng_x.normal();
        truth.X = truth.latent_scores * truth.latent_loading;
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < p; ++j) truth.X(r, j) += rng_noise.normal(0.0, noise_sd);
        truth.Y = truth.latent_scores * truth.w_y;
        for (int r = 0; r < n; ++r) truth.Y[r] += rng_noise.normal(0.0, noise_sd);
    }
    auto problem = causal::make_problem(truth.X, truth.Y, k);
    return {std::move(problem), std::move(truth)};
}

}  // namespace debias::synth
