#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "debias/core.hpp"
#include "debias/synth.hpp"
#include "support/testutil.hpp"

using namespace debias;
using testutil::TempDir;

namespace {

TableSchema small_schema() {
    TableSchema s;
    s.subject_col = "id";
    s.group_col = "site";
    s.feature_cols = {"f1", "f2"};
    s.covariate_cols = {{"age", false}, {"sex", true}};
    return s;
}

}  // namespace

TEST(LoadTable, MinimalWellFormed) {
    TempDir tmp;
    testutil::write_file(tmp.path("t.csv"),
                         "id,site,age,sex,f1,f2\n"
                         "a,s1,30,F,1.5,2.5\n"
                         "b,s1,40,M,2.5,3.5\n"
                         "c,s2,50,F,3.5,4.5\n");
    LoadReport rep;
    const FeatureTable t = load_table(tmp.path("t.csv"), small_schema(), &rep);
    EXPECT_EQ(t.n_rows(), 3);
    EXPECT_EQ(t.n_features(), 2);
    EXPECT_EQ(rep.rows_kept, 3u);
    EXPECT_TRUE(rep.dropped.empty());
    EXPECT_EQ(t.group_levels, (std::vector<std::string>{"s1", "s2"}));
    EXPECT_DOUBLE_EQ(t.values(0, 0), 1.5);
    EXPECT_DOUBLE_EQ(t.find_covariate("age")->numeric[2], 50.0);
}

TEST(LoadTable, BlankFeatureCellDropsRow) {
    TempDir tmp;
    testutil::write_file(tmp.path("t.csv"),
                         "id,site,age,sex,f1,f2\n"
                         "a,s1,30,F,1.5,2.5\n"
                         "b,s1,40,M,,3.5\n"
                         "c,s2,50,F,3.5,4.5\n");
    LoadReport rep;
    const FeatureTable t = load_table(tmp.path("t.csv"), small_schema(), &rep);
    EXPECT_EQ(t.n_rows(), 2);
    ASSERT_EQ(rep.dropped.size(), 1u);
    EXPECT_EQ(rep.dropped[0].first, 1u);
    EXPECT_NE(rep.dropped[0].second.find("f1"), std::string::npos);
}

TEST(LoadTable, HardErrors) {
    TempDir tmp;
    testutil::write_file(tmp.path("missing.csv"), "id,site,age,f1,f2\na,s1,30,1,2\n");
    EXPECT_THROW(load_table(tmp.path("missing.csv"), small_schema()), DataError);

    testutil::write_file(tmp.path("garbage.csv"),
                         "id,site,age,sex,f1,f2\na,s1,30,F,abc,2\nb,s1,40,M,1,2\n");
    EXPECT_THROW(load_table(tmp.path("garbage.csv"), small_schema()), DataError);

    testutil::write_file(tmp.path("dup.csv"),
                         "id,site,age,sex,f1,f2\na,s1,30,F,1,2\na,s1,40,M,1,2\n");
    EXPECT_THROW(load_table(tmp.path("dup.csv"), small_schema()), DataError);
}

TEST(LoadTable, FeatureGlobExpansion) {
    TempDir tmp;
    testutil::write_file(tmp.path("t.csv"),
                         "id,site,age,sex,vol_a,vol_b,thk_a\n"
                         "a,s1,30,F,1,2,3\n"
                         "b,s2,40,M,4,5,6\n");
    TableSchema s = small_schema();
    s.feature_cols = {"vol_*"};
    const FeatureTable t = load_table(tmp.path("t.csv"), s);
    EXPECT_EQ(t.feature_names, (std::vector<std::string>{"vol_a", "vol_b"}));
}

TEST(LoadTable, RoundTripIsIdentity) {
    synth::GenerativeSpec spec;
    spec.n_groups = 3;
    spec.subjects_per_group = {20};
    spec.n_features = 5;
    spec.site_location_sd = 1.0;
    spec.site_scale_lo = 0.5;
    spec.site_scale_hi = 2.0;
    spec.age_linear_sd = 0.05;
    spec.seed = 7;
    const auto [table, truth] = synth::generate(spec);

    TempDir tmp;
    write_table(table, tmp.path("t.csv"));
    LoadReport rep;
    const FeatureTable back = load_table(tmp.path("t.csv"), canonical_schema(table), &rep);
    EXPECT_EQ(rep.dropped.size(), 0u);
    ASSERT_EQ(back.n_rows(), table.n_rows());
    EXPECT_LT((back.values - table.values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((back.find_covariate("age")->numeric - table.find_covariate("age")->numeric)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
    EXPECT_EQ(back.groups, table.groups);
    EXPECT_EQ(back.subject_ids, table.subject_ids);
}

TEST(BuildDesign, QuadraticAgeAndSex) {
    const FeatureTable t = testutil::tiny_table();
    CovariateSpec spec;
    spec.keep = {"age", "sex"};
    spec.expand_age_quadratic = true;
    const auto [K, R] = build_design(t, spec);
    EXPECT_EQ(K.column_names, (std::vector<std::string>{"age_c", "age_c2", "sex=M"}));
    EXPECT_EQ(R.m.cols(), 0);
    // centered age has mean zero
    EXPECT_NEAR(K.m.col(0).mean(), 0.0, 1e-12);
    EXPECT_NEAR(K.m(0, 1), K.m(0, 0) * K.m(0, 0), 1e-12);
}

TEST(BuildDesign, EmptySpecYieldsZeroColumns) {
    const FeatureTable t = testutil::tiny_table();
    const auto [K, R] = build_design(t, CovariateSpec{});
    EXPECT_EQ(K.m.cols(), 0);
    EXPECT_EQ(R.m.cols(), 0);
}

TEST(BuildDesign, TreatmentCodingDropsReference) {
    FeatureTable t = testutil::tiny_table();
    Covariate mf{"manufacturer", true, {}, {"ge", "siemens", "philips", "ge", "siemens", "philips"},
                 {"ge", "philips", "siemens"}};
    t.covariates.push_back(mf);
    CovariateSpec spec;
    spec.remove = {"manufacturer"};
    const auto [K, R] = build_design(t, spec);
    EXPECT_EQ(R.m.cols(), 2);
    EXPECT_EQ(R.column_names,
              (std::vector<std::string>{"manufacturer=philips", "manufacturer=siemens"}));
}

TEST(BuildDesign, RankDeficiencyNamesColumns) {
    FeatureTable t = testutil::tiny_table();
    Covariate dup{"age_copy", false, t.find_covariate("age")->numeric, {}, {}};
    t.covariates.push_back(dup);
    CovariateSpec spec;
    spec.keep = {"age", "age_copy"};
    try {
        build_design(t, spec);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("age"), std::string::npos);
    }
}

TEST(BuildDesign, KeepRemoveOverlapRejected) {
    const FeatureTable t = testutil::tiny_table();
    CovariateSpec spec;
    spec.keep = {"age"};
    spec.remove = {"age"};
    EXPECT_THROW(build_design(t, spec), ConfigError);
}

TEST(BuildDesign, RowPermutationEquivariance) {
    const FeatureTable t = testutil::tiny_table();
    CovariateSpec spec;
    spec.keep = {"age", "sex"};
    spec.expand_age_quadratic = true;
    const auto [K, R] = build_design(t, spec);

    std::vector<int> perm{5, 2, 0, 4, 1, 3};
    const FeatureTable shuffled = subset(t, perm);
    const auto [K2, R2] = build_design(shuffled, spec);
    for (Eigen::Index r = 0; r < K.m.rows(); ++r)
        EXPECT_LT((K2.m.row(r) - K.m.row(perm[static_cast<std::size_t>(r)])).cwiseAbs().maxCoeff(),
                  1e-12);
}

TEST(StratifiedSplit, ExactDivisibility) {
    synth::GenerativeSpec spec;
    spec.n_groups = 2;
    spec.subjects_per_group = {10};
    spec.n_features = 2;
    spec.seed = 3;
    const auto [table, truth] = synth::generate(spec);
    const Split split = stratified_split(table, 0.7, 42);
    EXPECT_EQ(split.train_indices.size(), 14u);
    for (const auto& level : table.group_levels) {
        const int train = static_cast<int>(std::count_if(
            split.train_indices.begin(), split.train_indices.end(),
            [&](int r) { return table.groups[static_cast<std::size_t>(r)] == level; }));
        EXPECT_EQ(train, 7);
    }
}

TEST(StratifiedSplit, DeterministicAndDisjoint) {
    synth::GenerativeSpec spec;
    spec.n_groups = 3;
    spec.subjects_per_group = {9, 11, 23};
    spec.n_features = 2;
    spec.seed = 5;
    const auto [table, truth] = synth::generate(spec);
    const Split a = stratified_split(table, 0.6, 17);
    const Split b = stratified_split(table, 0.6, 17);
    EXPECT_EQ(a.train_indices, b.train_indices);
    EXPECT_EQ(a.test_indices, b.test_indices);

    std::vector<int> all = a.train_indices;
    all.insert(all.end(), a.test_indices.begin(), a.test_indices.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expected(static_cast<std::size_t>(table.n_rows()));
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
}

TEST(StratifiedSplit, PaperSizedGroupsStayWithinOneSubject) {
    // 17 groups with the studies' relative sizes (downsampled).
    const std::vector<int> sizes{78, 55, 52, 48, 84, 13, 7, 74, 78, 34, 56, 28, 10, 31, 21, 20, 74};
    synth::GenerativeSpec spec;
    spec.n_groups = 17;
    spec.subjects_per_group = sizes;
    spec.n_features = 2;
    spec.seed = 11;
    const auto [table, truth] = synth::generate(spec);
    const Split split = stratified_split(table, 0.7, 23);
    for (std::size_t g = 0; g < table.group_levels.size(); ++g) {
        const auto& level = table.group_levels[g];
        const double train = static_cast<double>(std::count_if(
            split.train_indices.begin(), split.train_indices.end(),
            [&](int r) { return table.groups[static_cast<std::size_t>(r)] == level; }));
        const double total = static_cast<double>(
            std::count(table.groups.begin(), table.groups.end(), level));
        EXPECT_LE(std::abs(train - 0.7 * total), 1.0) << "group " << level;
    }
}

TEST(StratifiedSplit, SingletonGroupIsAnError) {
    FeatureTable t = testutil::tiny_table();
    t.groups[5] = "s3";
    t.group_levels = {"s1", "s2", "s3"};
    try {
        stratified_split(t, 0.5, 1);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("s3"), std::string::npos);
    }
}

TEST(RelativeToIcv, DividesListedFeatures) {
    FeatureTable t = testutil::tiny_table();
    Eigen::VectorXd icv(6);
    icv << 1.6e6, 1.6e6, 1.6e6, 1.6e6, 1.6e6, 1.6e6;
    t.covariates.push_back(Covariate{"icv", false, icv, {}, {}});
    t.values(0, 0) = 8000.0;
    const FeatureTable out = relative_to_icv(t, {"f1"});
    EXPECT_DOUBLE_EQ(out.values(0, 0), 0.005);
    EXPECT_DOUBLE_EQ(out.values(0, 1), t.values(0, 1));
}

TEST(RelativeToIcv, UnitIcvIsIdentity) {
    FeatureTable t = testutil::tiny_table();
    t.covariates.push_back(Covariate{"icv", false, Eigen::VectorXd::Ones(6), {}, {}});
    const FeatureTable out = relative_to_icv(t, {"f1", "f2"});
    EXPECT_LT((out.values - t.values).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(RelativeToIcv, NonPositiveIcvRejected) {
    FeatureTable t = testutil::tiny_table();
    Eigen::VectorXd icv = Eigen::VectorXd::Ones(6);
    icv[3] = 0.0;
    t.covariates.push_back(Covariate{"icv", false, icv, {}, {}});
    EXPECT_THROW(relative_to_icv(t, {"f1"}), DataError);
}

TEST(RelativeToIcv, RecoversPlantedPreScalingValues) {
    synth::GenerativeSpec spec;
    spec.n_groups = 2;
    spec.subjects_per_group = {30};
    spec.n_features = 4;
    spec.site_location_sd = 0.5;
    spec.icv_lo = 1.2e6;
    spec.icv_hi = 1.8e6;
    spec.seed = 9;
    const auto [table, truth] = synth::generate(spec);
    const FeatureTable out = relative_to_icv(table, table.feature_names);
    EXPECT_LT((out.values - truth.pre_icv_values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ParseRemoveTokens, SubstitutePcSyntax) {
    const auto [names, pcs] = parse_remove_tokens({"manufacturer", "substitute_pc(3)"});
    EXPECT_EQ(names, (std::vector<std::string>{"manufacturer"}));
    EXPECT_EQ(pcs, 3);
    EXPECT_THROW(parse_remove_tokens({"substitute_pc(x)"}), ConfigError);
}
