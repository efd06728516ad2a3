#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "debias/classify.hpp"
#include "debias/rng.hpp"
#include "debias/synth.hpp"
#include "support/testutil.hpp"

using namespace debias;

namespace {

// Two well-separated Gaussian clouds.
FeatureTable separable_table(int per_group, int features, double shift, std::uint64_t seed) {
    Rng rng(seed);
    FeatureTable t;
    t.feature_names.reserve(static_cast<std::size_t>(features));
    for (int f = 0; f < features; ++f) t.feature_names.push_back("f" + std::to_string(f + 1));
    const int n = 2 * per_group;
    t.values.resize(n, features);
    for (int r = 0; r < n; ++r) {
        const bool second = r >= per_group;
        t.subject_ids.push_back("s" + std::to_string(r));
        t.groups.push_back(second ? "g2" : "g1");
        for (int f = 0; f < features; ++f)
            t.values(r, f) = rng.normal() + (second ? shift : -shift);
    }
    t.group_levels = {"g1", "g2"};
    return t;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TEST(Classifier, SeparableGroupsAreLearned) {
    const FeatureTable table = separable_table(200, 5, 5.0, 201);
    const Split split = stratified_split(table, 0.7, 1);
    const FeatureTable train = subset(table, split.train_indices);
    const FeatureTable test = subset(table, split.test_indices);
    const auto ens = classify::fit_classifier(train, "group", 100, 0, 2);
    const auto pred = classify::predict_classes(ens, test.values);
    auto [labels, levels] = resolve_groups(test, "group");
    int correct = 0;
    for (std::size_t r = 0; r < pred.size(); ++r)
        if (ens.class_levels[static_cast<std::size_t>(pred[r])] == labels[r]) ++correct;
    EXPECT_GE(static_cast<double>(correct) / static_cast<double>(pred.size()), 0.99);
}

TEST(Classifier, ShuffledLabelsFallToChance) {
    synth::GenerativeSpec spec;
    spec.n_groups = 5;
    spec.subjects_per_group = {150};
    spec.n_features = 8;
    spec.site_location_sd = 1.5;
    spec.seed = 202;
    const auto [table, truth] = synth::generate(spec);
    const FeatureTable shuffled = classify::with_shuffled_groups(table, 77);
    const auto res = classify::name_that_dataset(shuffled, "group", 0.7, 7, std::nullopt, 200);
    EXPECT_NEAR(res.accuracy, res.chance, 0.05);
}

TEST(Classifier, DeterministicForFixedSeed) {
    const FeatureTable table = separable_table(60, 4, 1.0, 203);
    const auto a = classify::fit_classifier(table, "group", 50, 0, 99);
    const auto b = classify::fit_classifier(table, "group", 50, 0, 99);
    const auto pa = classify::predict_classes(a, table.values);
    const auto pb = classify::predict_classes(b, table.values);
    EXPECT_EQ(pa, pb);
}

TEST(Classifier, SingleClassRejected) {
    FeatureTable t = separable_table(10, 2, 1.0, 204);
    for (auto& g : t.groups) g = "only";
    t.group_levels = {"only"};
    EXPECT_THROW(classify::fit_classifier(t, "group"), DataError);
}

TEST(Classifier, DuplicatedFeatureNeverLowersTrainingFit) {
    const FeatureTable base = separable_table(50, 3, 2.0, 205);
    FeatureTable dup = base;
    dup.feature_names.push_back("f1_copy");
    dup.values.conservativeResize(Eigen::NoChange, 4);
    dup.values.col(3) = dup.values.col(0);

    auto train_accuracy = [](const FeatureTable& t) {
        const auto ens = classify::fit_classifier(t, "group", 60, 0, 3);
        const auto pred = classify::predict_classes(ens, t.values);
        int correct = 0;
        for (std::size_t r = 0; r < pred.size(); ++r)
            if (ens.class_levels[static_cast<std::size_t>(pred[r])] == t.groups[r]) ++correct;
        return static_cast<double>(correct) / static_cast<double>(pred.size());
    };
    EXPECT_GE(train_accuracy(dup), train_accuracy(base) - 1e-12);
}

TEST(Regressor, LearnsSumOfFeatures) {
    Rng rng(206);
    FeatureTable t;
    t.feature_names = {"f1", "f2", "f3"};
    const int n = 1000;
    t.values.resize(n, 3);
    Eigen::VectorXd target(n);
    for (int r = 0; r < n; ++r) {
        t.subject_ids.push_back("s" + std::to_string(r));
        t.groups.push_back("g");
        for (int f = 0; f < 3; ++f) t.values(r, f) = rng.normal();
        target[r] = t.values.row(r).sum();
    }
    t.group_levels = {"g"};
    t.covariates.push_back(Covariate{"y", false, target, {}, {}});

    const Split split = stratified_split(t, 0.7, 4);
    const FeatureTable train = subset(t, split.train_indices);
    const FeatureTable test = subset(t, split.test_indices);
    const auto ens = classify::fit_regressor(train, "y", 200, 0, 5);
    const double sd = std::sqrt((target.array() - target.mean()).square().mean());

    // noiseless training data is nearly memorized
    const double train_err = classify::mae(classify::predict_values(ens, train.values),
                                           train.find_covariate("y")->numeric);
    EXPECT_LE(train_err, 0.1 * sd);

    const double err = classify::mae(classify::predict_values(ens, test.values),
                                     test.find_covariate("y")->numeric);
    EXPECT_LE(err, 0.35 * sd);
}

TEST(Regressor, ConstantTargetWarnsAndPredictsConstant) {
    FeatureTable t = separable_table(20, 2, 1.0, 207);
    t.covariates.push_back(Covariate{"y", false, Eigen::VectorXd::Constant(40, 3.5), {}, {}});
    std::vector<std::string> warnings;
    const auto ens = classify::fit_regressor(t, "y", 20, 0, 6, &warnings);
    EXPECT_EQ(warnings.size(), 1u);
    const Eigen::VectorXd pred = classify::predict_values(ens, t.values);
    EXPECT_LT((pred.array() - 3.5).abs().maxCoeff(), 1e-12);
    EXPECT_DOUBLE_EQ(classify::mae(pred, t.find_covariate("y")->numeric), 0.0);
}

TEST(Mae, IdenticalVectorsGiveZero) {
    Eigen::VectorXd v(4);
    v << 1, 2, 3, 4;
    EXPECT_DOUBLE_EQ(classify::mae(v, v), 0.0);
}

TEST(NameThatDataset, ChanceBaselines) {
    synth::GenerativeSpec spec;
    spec.n_groups = 17;
    spec.subjects_per_group = {12};
    spec.n_features = 3;
    spec.seed = 208;
    const auto [table, truth] = synth::generate(spec);
    const auto res = classify::name_that_dataset(table, "group", 0.5, 9, std::nullopt, 20);
    EXPECT_NEAR(res.chance, 0.0588, 0.0001);           // 1/17
    EXPECT_NEAR(res.weighted_chance, 0.0588, 0.0001);  // equal sizes
}

TEST(NameThatDataset, WeightedChanceAccountsForImbalance) {
    synth::GenerativeSpec spec;
    spec.n_groups = 2;
    spec.subjects_per_group = {90, 10};
    spec.n_features = 3;
    spec.seed = 209;
    const auto [table, truth] = synth::generate(spec);
    const auto res = classify::name_that_dataset(table, "group", 0.5, 9, std::nullopt, 20);
    EXPECT_NEAR(res.weighted_chance, 0.81 + 0.01, 1e-12);
}

TEST(NameThatDataset, ConfusionRowSumsMatchTestCounts) {
    synth::GenerativeSpec spec;
    spec.n_groups = 4;
    spec.subjects_per_group = {40};
    spec.n_features = 5;
    spec.site_location_sd = 1.0;
    spec.seed = 210;
    const auto [table, truth] = synth::generate(spec);
    const auto res = classify::name_that_dataset(table, "group", 0.75, 11, std::nullopt, 50);
    EXPECT_EQ(res.confusion.counts.rows(), 4);
    for (Eigen::Index g = 0; g < 4; ++g) EXPECT_EQ(res.confusion.counts.row(g).sum(), 10);
    EXPECT_EQ(res.confusion.counts.sum(), res.n_test);
}

TEST(NameThatDataset, SingleGroupRejected) {
    FeatureTable t = separable_table(10, 2, 1.0, 211);
    for (auto& g : t.groups) g = "only";
    t.group_levels = {"only"};
    EXPECT_THROW(classify::name_that_dataset(t, "group", 0.5, 1), DataError);
}

TEST(NameThatDataset, HarmonizationReducesFingerprint) {
    synth::GenerativeSpec spec;
    spec.n_groups = 6;
    spec.subjects_per_group = {150};
    spec.n_features = 12;
    spec.site_location_sd = 1.0;
    spec.site_scale_lo = 0.5;
    spec.site_scale_hi = 2.0;
    spec.seed = 212;
    const auto [table, truth] = synth::generate(spec);
    const auto raw = classify::name_that_dataset(table, "group", 0.7, 13, std::nullopt, 200);
    classify::HarmonizerConfig combat{"combat", CovariateSpec{}, false};
    const auto fixed = classify::name_that_dataset(table, "group", 0.7, 13, combat, 200);
    EXPECT_GE(raw.accuracy, 0.80);
    EXPECT_LE(fixed.accuracy, raw.accuracy - 0.25);
}

TEST(NameThatDataset, CombatPPRemovesLatentFingerprint) {
    // Global latent factor with site-dependent spread: ComBat equalizes the
    // per-feature moments but not the shared-direction correlation; the PC
    // substitute confounder removes that too.
    std::vector<double> gaps;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        synth::GenerativeSpec spec;
        spec.n_groups = 6;
        spec.subjects_per_group = {150};
        spec.n_features = 15;
        spec.site_location_sd = 1.0;
        spec.site_scale_lo = 0.5;
        spec.site_scale_hi = 2.0;
        spec.latent.dims = 1;
        spec.latent.loading_sd = 1.5;
        spec.latent.group_scale = {0.3, 0.8, 1.3, 1.8, 2.3, 2.8};
        spec.noise_sd = 1.0;
        spec.seed = seed * 1000;
        const auto [table, truth] = synth::generate(spec);

        classify::HarmonizerConfig combat{"combat", CovariateSpec{}, false};
        CovariateSpec pp_spec;
        pp_spec.substitute_pcs = 1;
        classify::HarmonizerConfig pp{"combatpp", pp_spec, false};
        const auto rc = classify::name_that_dataset(table, "group", 0.7, seed, combat, 200);
        const auto rp = classify::name_that_dataset(table, "group", 0.7, seed, pp, 200);
        gaps.push_back(rc.accuracy - rp.accuracy);
    }
    EXPECT_GE(median(gaps), 0.05);
}

TEST(NameThatDataset, WholeTableModeMirrorsChainedHarmonization) {
    synth::GenerativeSpec spec;
    spec.n_groups = 3;
    spec.subjects_per_group = {60};
    spec.n_features = 6;
    spec.site_location_sd = 1.0;
    spec.seed = 213;
    const auto [table, truth] = synth::generate(spec);
    CovariateSpec cs;
    classify::HarmonizerConfig whole{"combat", cs, true};
    const auto via_mode = classify::name_that_dataset(table, "group", 0.7, 31, whole, 80);

    const auto model = harmonize::fit_combat(table, "group", cs);
    const FeatureTable pre = harmonize::apply(model, table);
    const auto via_files = classify::name_that_dataset(pre, "group", 0.7, 31, std::nullopt, 80);
    EXPECT_DOUBLE_EQ(via_mode.accuracy, via_files.accuracy);
    EXPECT_TRUE(via_mode.confusion.counts == via_files.confusion.counts);
}

TEST(LeaveOneGroupOut, NoHarmonizerEqualsRawPipeline) {
    synth::GenerativeSpec spec;
    spec.n_groups = 3;
    spec.subjects_per_group = {50};
    spec.n_features = 5;
    spec.fixed_age_slope = 0.05;
    spec.fixed_age_features = 5;
    spec.seed = 214;
    const auto [table, truth] = synth::generate(spec);
    const auto a = classify::leave_one_group_out(table, "group", "age", std::nullopt, 3, 80);
    const auto b = classify::leave_one_group_out(table, "group", "age", std::nullopt, 3, 80);
    EXPECT_EQ(a.mae_per_group.size(), 3u);
    EXPECT_EQ(a.mae_per_group, b.mae_per_group);
    for (double m : a.mae_per_group) EXPECT_GT(m, 0.0);
}

TEST(LeaveOneGroupOut, CombatImprovesCrossSiteTransfer) {
    // Strong site offsets corrupt transfer to the held-out group; ComBat
    // removes them (fit on the whole table, the paper's evaluation shape).
    std::vector<double> raw_medians, combat_medians;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        synth::GenerativeSpec spec;
        spec.n_groups = 5;
        spec.subjects_per_group = {100};
        spec.n_features = 8;
        spec.site_location_sd = 2.0;
        spec.fixed_age_slope = 0.06;
        spec.fixed_age_features = 8;
        spec.noise_sd = 1.0;
        spec.seed = seed * 77;
        const auto [table, truth] = synth::generate(spec);
        const auto raw = classify::leave_one_group_out(table, "group", "age", std::nullopt,
                                                       seed, 150);
        CovariateSpec cs;
        cs.keep = {"age"};
        classify::HarmonizerConfig combat{"combat", cs, true};
        const auto fixed = classify::leave_one_group_out(table, "group", "age", combat, seed, 150);
        raw_medians.push_back(median(raw.mae_per_group));
        combat_medians.push_back(median(fixed.mae_per_group));
    }
    EXPECT_LE(median(combat_medians), median(raw_medians));
}
