#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "debias/core.hpp"
#include "debias/error.hpp"
#include "debias/harmonize.hpp"
#include "debias/parallel.hpp"
#include "debias/rng.hpp"

namespace debias::classify {

using nlohmann::json;

enum class TreeMode { classify, regress };

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // class index or leaf mean
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct TreeEnsemble {
    std::vector<Tree> trees;
    int n_trees = 0;
    int mtry = 0;
    TreeMode mode = TreeMode::classify;
    std::uint64_t seed = 0;
    std::vector<std::string> class_levels;  // classify mode
    double target_mean = 0.0;               // regress mode bookkeeping
};

// ---------------------------------------------------------------------------
// Tree growth
// ---------------------------------------------------------------------------

namespace detail {

struct GrowContext {
    const Eigen::MatrixXd& values;   // N x F
    const std::vector<int>& labels;  // classify
    const Eigen::VectorXd& target;   // regress
    TreeMode mode;
    int n_classes;
    int mtry;
    Rng rng;
    // scratch
    std::vector<int> feature_pool;
    std::vector<std::pair<double, int>> sorted;  // (value, row)
    std::vector<int> counts_left, counts_total;
};

inline double gini(const std::vector<int>& counts, double n) {
    double s = 0.0;
    for (int c : counts) {
        const double p = static_cast<double>(c) / n;
        s += p * p;
    }
    return 1.0 - s;
}

// Best split of rows[lo,hi) on one feature; thresholds are midpoints between
// consecutive distinct sorted values. Returns false if the feature is
// constant within the node.
inline bool best_split_on_feature(GrowContext& ctx, const std::vector<int>& rows, int lo, int hi,
                                  int feature, double& best_score, double& best_threshold) {
    const int n = hi - lo;
    ctx.sorted.clear();
    for (int i = lo; i < hi; ++i) ctx.sorted.emplace_back(ctx.values(rows[i], feature), rows[i]);
    std::sort(ctx.sorted.begin(), ctx.sorted.end());
    if (ctx.sorted.front().first == ctx.sorted.back().first) return false;

    bool found = false;
    if (ctx.mode == TreeMode::classify) {
        std::fill(ctx.counts_left.begin(), ctx.counts_left.end(), 0);
        std::fill(ctx.counts_total.begin(), ctx.counts_total.end(), 0);
        for (const auto& [v, r] : ctx.sorted) ++ctx.counts_total[ctx.labels[r]];
        std::vector<int> left = ctx.counts_left;
        std::vector<int> right = ctx.counts_total;
        for (int i = 0; i + 1 < n; ++i) {
            const int cls = ctx.labels[ctx.sorted[i].second];
            ++left[cls];
            --right[cls];
            if (ctx.sorted[i].first == ctx.sorted[i + 1].first) continue;
            const double nl = i + 1;
            const double nr = n - i - 1;
            const double score = nl * gini(left, nl) + nr * gini(right, nr);
            if (!found || score < best_score) {
                found = true;
                best_score = score;
                best_threshold = 0.5 * (ctx.sorted[i].first + ctx.sorted[i + 1].first);
            }
        }
    } else {
        double sum_right = 0.0, sum2_right = 0.0;
        for (const auto& [v, r] : ctx.sorted) {
            const double y = ctx.target[r];
            sum_right += y;
            sum2_right += y * y;
        }
        double sum_left = 0.0, sum2_left = 0.0;
        for (int i = 0; i + 1 < n; ++i) {
            const double y = ctx.target[ctx.sorted[i].second];
            sum_left += y;
            sum2_left += y * y;
            sum_right -= y;
            sum2_right -= y * y;
            if (ctx.sorted[i].first == ctx.sorted[i + 1].first) continue;
            const double nl = i + 1;
            const double nr = n - i - 1;
            const double sse_left = sum2_left - sum_left * sum_left / nl;
            const double sse_right = sum2_right - sum_right * sum_right / nr;
            const double score = sse_left + sse_right;
            if (!found || score < best_score) {
                found = true;
                best_score = score;
                best_threshold = 0.5 * (ctx.sorted[i].first + ctx.sorted[i + 1].first);
            }
        }
    }
    return found;
}

inline double leaf_value(const GrowContext& ctx, const std::vector<int>& rows, int lo, int hi) {
    if (ctx.mode == TreeMode::regress) {
        double s = 0.0;
        for (int i = lo; i < hi; ++i) s += ctx.target[rows[i]];
        return s / static_cast<double>(hi - lo);
    }
    std::vector<int> counts(static_cast<std::size_t>(ctx.n_classes), 0);
    for (int i = lo; i < hi; ++i) ++counts[ctx.labels[rows[i]]];
    // majority; ties fall to the lexicographically smaller class level
    int best = 0;
    for (int c = 1; c < ctx.n_classes; ++c)
        if (counts[c] > counts[best]) best = c;
    return static_cast<double>(best);
}

inline bool node_is_pure(const GrowContext& ctx, const std::vector<int>& rows, int lo, int hi) {
    if (ctx.mode == TreeMode::classify) {
        const int first = ctx.labels[rows[lo]];
        for (int i = lo + 1; i < hi; ++i)
            if (ctx.labels[rows[i]] != first) return false;
        return true;
    }
    const double first = ctx.target[rows[lo]];
    for (int i = lo + 1; i < hi; ++i)
        if (ctx.target[rows[i]] != first) return false;
    return true;
}

inline int grow_node(GrowContext& ctx, Tree& tree, std::vector<int>& rows, int lo, int hi) {
    const int node_ix = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int n = hi - lo;
    if (n < 2 || node_is_pure(ctx, rows, lo, hi)) {
        tree.nodes[node_ix].value = leaf_value(ctx, rows, lo, hi);
        return node_ix;
    }

    const int n_features = static_cast<int>(ctx.values.cols());
    // mtry candidates via partial Fisher-Yates; scan the rest only if none
    // of the sampled features admits a split.
    auto& pool = ctx.feature_pool;
    pool.resize(static_cast<std::size_t>(n_features));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < std::min(ctx.mtry, n_features); ++i)
        std::swap(pool[i], pool[i + static_cast<int>(ctx.rng.below(
                                       static_cast<std::uint64_t>(n_features - i)))]);

    int best_feature = -1;
    double best_score = 0.0, best_threshold = 0.0;
    auto consider = [&](int f) {
        double score = 0.0, threshold = 0.0;
        if (best_split_on_feature(ctx, rows, lo, hi, f, score, threshold)) {
            if (best_feature < 0 || score < best_score) {
                best_feature = f;
                best_score = score;
                best_threshold = threshold;
            }
        }
    };
    const int m = std::min(ctx.mtry, n_features);
    for (int i = 0; i < m; ++i) consider(pool[i]);
    if (best_feature < 0)
        for (int i = m; i < n_features; ++i) consider(pool[i]);
    if (best_feature < 0) {
        tree.nodes[node_ix].value = leaf_value(ctx, rows, lo, hi);
        return node_ix;
    }

    const auto mid_it = std::partition(rows.begin() + lo, rows.begin() + hi, [&](int r) {
        return ctx.values(r, best_feature) <= best_threshold;
    });
    const int mid = static_cast<int>(mid_it - rows.begin());
    tree.nodes[node_ix].feature = best_feature;
    tree.nodes[node_ix].threshold = best_threshold;
    const int left = grow_node(ctx, tree, rows, lo, mid);
    const int right = grow_node(ctx, tree, rows, mid, hi);
    tree.nodes[node_ix].left = left;
    tree.nodes[node_ix].right = right;
    return node_ix;
}

inline Tree grow_tree(const Eigen::MatrixXd& values, const std::vector<int>& labels,
                      const Eigen::VectorXd& target, TreeMode mode, int n_classes, int mtry,
                      std::uint64_t tree_seed) {
    GrowContext ctx{values, labels, target, mode, n_classes, mtry, Rng(tree_seed), {}, {}, {}, {}};
    ctx.counts_left.resize(static_cast<std::size_t>(std::max(1, n_classes)));
    ctx.counts_total.resize(static_cast<std::size_t>(std::max(1, n_classes)));
    const int n = static_cast<int>(values.rows());
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) rows[i] = static_cast<int>(ctx.rng.below(static_cast<std::uint64_t>(n)));
    Tree tree;
    tree.nodes.reserve(static_cast<std::size_t>(2 * n));
    grow_node(ctx, tree, rows, 0, n);
    return tree;
}

inline double tree_predict(const Tree& tree, const Eigen::MatrixXd& values, Eigen::Index row) {
    int ix = 0;
    while (tree.nodes[ix].feature >= 0)
        ix = values(row, tree.nodes[ix].feature) <= tree.nodes[ix].threshold ? tree.nodes[ix].left
                                                                             : tree.nodes[ix].right;
    return tree.nodes[ix].value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ensemble fit / predict
// ---------------------------------------------------------------------------

inline int default_mtry(Eigen::Index n_features) {
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_features)))));
}

/// Bootstrap forest on a raw feature matrix. Per-tree seeds derive from the
/// master seed by tree index, so parallel training cannot change results.
inline TreeEnsemble fit_forest(const Eigen::MatrixXd& values, const std::vector<int>& labels,
                               const Eigen::VectorXd& target, TreeMode mode, int n_classes,
                               int n_trees, int mtry, std::uint64_t seed) {
    if (values.rows() < 1 || values.cols() < 1) throw DataError("forest: empty training data");
    if (n_trees < 1) throw ConfigError("forest: n_trees must be >= 1");
    TreeEnsemble ens;
    ens.n_trees = n_trees;
    ens.mtry = mtry > 0 ? mtry : default_mtry(values.cols());
    ens.mode = mode;
    ens.seed = seed;
    ens.trees.resize(static_cast<std::size_t>(n_trees));
    parallel_for(static_cast<std::size_t>(n_trees), [&](std::size_t t) {
        ens.trees[t] = detail::grow_tree(values, labels, target, mode, n_classes, ens.mtry,
                                         derive_seed(seed, "tree", t));
    });
    return ens;
}

inline std::vector<int> predict_classes(const TreeEnsemble& ens, const Eigen::MatrixXd& values) {
    if (ens.mode != TreeMode::classify) throw ConfigError("ensemble is not a classifier");
    std::vector<int> out(static_cast<std::size_t>(values.rows()));
    const int n_classes = static_cast<int>(ens.class_levels.size());
    parallel_for(static_cast<std::size_t>(values.rows()), [&](std::size_t r) {
        std::vector<int> votes(static_cast<std::size_t>(n_classes), 0);
        for (const auto& tree : ens.trees)
            ++votes[static_cast<int>(detail::tree_predict(tree, values, static_cast<Eigen::Index>(r)))];
        int best = 0;
        for (int c = 1; c < n_classes; ++c)
            if (votes[c] > votes[best]) best = c;  // tie keeps the smaller level
        out[r] = best;
    });
    return out;
}

inline Eigen::VectorXd predict_values(const TreeEnsemble& ens, const Eigen::MatrixXd& values) {
    if (ens.mode != TreeMode::regress) throw ConfigError("ensemble is not a regressor");
    Eigen::VectorXd out(values.rows());
    parallel_for(static_cast<std::size_t>(values.rows()), [&](std::size_t r) {
        double s = 0.0;
        for (const auto& tree : ens.trees)
            s += detail::tree_predict(tree, values, static_cast<Eigen::Index>(r));
        out[static_cast<Eigen::Index>(r)] = s / static_cast<double>(ens.trees.size());
    });
    return out;
}

// ---------------------------------------------------------------------------
// FeatureTable front ends
// ---------------------------------------------------------------------------

namespace detail {

inline std::pair<std::vector<int>, std::vector<std::string>>
class_labels(const FeatureTable& t, std::string_view target) {
    auto [labels, levels] = resolve_groups(t, target);
    std::vector<int> ix(labels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto it = std::lower_bound(levels.begin(), levels.end(), labels[r]);
        ix[r] = static_cast<int>(it - levels.begin());
    }
    return {std::move(ix), levels};
}

}  // namespace detail

inline TreeEnsemble fit_classifier(const FeatureTable& train, std::string_view target,
                                   int n_trees = 500, int mtry = 0, std::uint64_t seed = 0) {
    auto [labels, levels] = detail::class_labels(train, target);
    if (levels.size() < 2) throw DataError("classification target has a single class");
    TreeEnsemble ens = fit_forest(train.values, labels, Eigen::VectorXd(), TreeMode::classify,
                                  static_cast<int>(levels.size()), n_trees, mtry, seed);
    ens.class_levels = levels;
    return ens;
}

inline TreeEnsemble fit_regressor(const FeatureTable& train, std::string_view target,
                                  int n_trees = 500, int mtry = 0, std::uint64_t seed = 0,
                                  std::vector<std::string>* warnings = nullptr) {
    const Covariate* c = train.find_covariate(target);
    if (!c || c->categorical)
        throw DataError("regression target '" + std::string(target) + "' must be a numeric covariate");
    if ((c->numeric.array() - c->numeric[0]).abs().maxCoeff() == 0.0 && warnings)
        warnings->push_back("regression target '" + std::string(target) +
                            "' is constant; the forest predicts that constant");
    TreeEnsemble ens = fit_forest(train.values, {}, c->numeric, TreeMode::regress, 0, n_trees,
                                  mtry, seed);
    ens.target_mean = c->numeric.mean();
    return ens;
}

inline double mae(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    if (pred.size() != truth.size()) throw DataError("mae: length mismatch");
    if (pred.size() == 0) throw DataError("mae: empty input");
    return (pred - truth).cwiseAbs().mean();
}

// ---------------------------------------------------------------------------
// Name That Dataset
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    Eigen::MatrixXi counts;  // rows = true group, cols = predicted
    std::vector<std::string> group_levels;

    double accuracy() const {
        const double total = counts.sum();
        if (total == 0.0) return 0.0;
        double diag = 0.0;
        for (Eigen::Index i = 0; i < counts.rows(); ++i) diag += counts(i, i);
        return diag / total;
    }
};

struct HarmonizerConfig {
    std::string family;  // zscore | linear | combat | combatpp
    CovariateSpec spec;
    bool fit_on_whole_table = false;  // default: fit on the training partition
};

struct NameThatDatasetResult {
    double accuracy = 0.0;
    double chance = 0.0;           // 1/G
    double weighted_chance = 0.0;  // sum (n_g/N)^2
    ConfusionMatrix confusion;
    long n_train = 0;
    long n_test = 0;
};

namespace detail {

inline harmonize::AnyModel fit_family(const FeatureTable& t, std::string_view group_by,
                                      const HarmonizerConfig& cfg) {
    if (cfg.family == "zscore") return harmonize::fit_zscore(t, group_by);
    if (cfg.family == "linear") return harmonize::fit_linear(t, group_by, cfg.spec);
    if (cfg.family == "combat") return harmonize::fit_combat(t, group_by, cfg.spec);
    if (cfg.family == "combatpp") return harmonize::fit_combatpp(t, group_by, cfg.spec);
    throw ConfigError("unknown harmonization family '" + cfg.family + "'");
}

}  // namespace detail

/// Stratified split, optional harmonization, forest fit, metrics on the test
/// partition. Chance baselines are computed on the full table.
inline NameThatDatasetResult name_that_dataset(const FeatureTable& table,
                                               std::string_view group_by, double fraction,
                                               std::uint64_t seed,
                                               const std::optional<HarmonizerConfig>& harmonizer =
                                                   std::nullopt,
                                               int n_trees = 500, int mtry = 0) {
    auto [labels, levels] = resolve_groups(table, group_by);
    if (levels.size() < 2) throw DataError("name_that_dataset: need >= 2 groups");

    const Split split = stratified_split(table, fraction, seed, group_by);
    FeatureTable train = subset(table, split.train_indices);
    FeatureTable test = subset(table, split.test_indices);
    if (harmonizer) {
        if (harmonizer->fit_on_whole_table) {
            const auto model = detail::fit_family(table, group_by, *harmonizer);
            const FeatureTable whole = harmonize::apply(model, table);
            train = subset(whole, split.train_indices);
            test = subset(whole, split.test_indices);
        } else {
            const auto model = detail::fit_family(train, group_by, *harmonizer);
            train = harmonize::apply(model, train);
            test = harmonize::apply(model, test);
        }
    }

    TreeEnsemble ens = fit_classifier(train, group_by, n_trees, mtry, derive_seed(seed, "forest"));
    auto [test_labels, test_levels] = detail::class_labels(test, group_by);
    const std::vector<int> pred = predict_classes(ens, test.values);

    NameThatDatasetResult res;
    res.n_train = static_cast<long>(split.train_indices.size());
    res.n_test = static_cast<long>(split.test_indices.size());
    const auto g = static_cast<Eigen::Index>(ens.class_levels.size());
    res.confusion.group_levels = ens.class_levels;
    res.confusion.counts = Eigen::MatrixXi::Zero(g, g);
    for (std::size_t r = 0; r < pred.size(); ++r) {
        // map test-local level index onto the classifier's level set
        const auto& lvl = test_levels[static_cast<std::size_t>(test_labels[r])];
        const auto it = std::lower_bound(ens.class_levels.begin(), ens.class_levels.end(), lvl);
        res.confusion.counts(static_cast<Eigen::Index>(it - ens.class_levels.begin()),
                             pred[r]) += 1;
    }
    res.accuracy = res.confusion.accuracy();
    res.chance = 1.0 / static_cast<double>(levels.size());
    double weighted = 0.0;
    const double n = static_cast<double>(labels.size());
    for (const auto& lvl : levels) {
        const double ng = static_cast<double>(std::count(labels.begin(), labels.end(), lvl));
        weighted += (ng / n) * (ng / n);
    }
    res.weighted_chance = weighted;
    return res;
}

/// Shuffled-label control: permutes the grouping column, destroying any real
/// association between features and group.
inline FeatureTable with_shuffled_groups(const FeatureTable& t, std::uint64_t seed) {
    FeatureTable out = t;
    Rng rng(derive_seed(seed, "shuffle_groups"));
    for (std::size_t i = out.groups.size() - 1; i > 0; --i)
        std::swap(out.groups[i], out.groups[rng.below(i + 1)]);
    return out;
}

// ---------------------------------------------------------------------------
// Leave-one-group-out regression
// ---------------------------------------------------------------------------

struct LeaveOneGroupOutResult {
    std::vector<std::string> group_levels;
    std::vector<double> mae_per_group;
};

/// One regression per held-out group. When a harmonizer is given it is fit on
/// the whole table first (the held-out group must be seen by the model for
/// its site parameters to exist at apply time).
inline LeaveOneGroupOutResult leave_one_group_out(const FeatureTable& table,
                                                  std::string_view group_by,
                                                  std::string_view target,
                                                  const std::optional<HarmonizerConfig>& harmonizer =
                                                      std::nullopt,
                                                  std::uint64_t seed = 0, int n_trees = 500) {
    auto [labels, levels] = resolve_groups(table, group_by);
    if (levels.size() < 3) throw DataError("leave_one_group_out: need >= 3 groups");

    FeatureTable working = table;
    if (harmonizer) {
        const auto model = detail::fit_family(table, group_by, *harmonizer);
        working = harmonize::apply(model, table);
    }

    LeaveOneGroupOutResult res;
    res.group_levels = levels;
    res.mae_per_group.resize(levels.size(), 0.0);
    for (std::size_t g = 0; g < levels.size(); ++g) {
        std::vector<int> train_rows, test_rows;
        for (std::size_t r = 0; r < labels.size(); ++r)
            (labels[r] == levels[g] ? test_rows : train_rows).push_back(static_cast<int>(r));
        const FeatureTable train = subset(working, train_rows);
        const FeatureTable test = subset(working, test_rows);
        const TreeEnsemble ens =
            fit_regressor(train, target, n_trees, 0, derive_seed(seed, "loo", g));
        const Covariate* truth = test.find_covariate(target);
        res.mae_per_group[g] = mae(predict_values(ens, test.values), truth->numeric);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------

inline json metrics_json(const NameThatDatasetResult& r) {
    json j;
    j["accuracy"] = r.accuracy;
    j["chance"] = r.chance;
    j["weighted_chance"] = r.weighted_chance;
    j["n_train"] = r.n_train;
    j["n_test"] = r.n_test;
    json conf;
    conf["labels"] = r.confusion.group_levels;
    json counts = json::array();
    for (Eigen::Index i = 0; i < r.confusion.counts.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < r.confusion.counts.cols(); ++c)
            row.push_back(r.confusion.counts(i, c));
        counts.push_back(std::move(row));
    }
    conf["counts"] = std::move(counts);
    j["confusion"] = std::move(conf);
    return j;
}

inline void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "true\\predicted";
    for (const auto& l : cm.group_levels) out << ',' << l;
    out << '\n';
    for (Eigen::Index i = 0; i < cm.counts.rows(); ++i) {
        out << cm.group_levels[static_cast<std::size_t>(i)];
        for (Eigen::Index c = 0; c < cm.counts.cols(); ++c) out << ',' << cm.counts(i, c);
        out << '\n';
    }
}

}  // namespace debias::classify
