#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

struct Covariate {
    std::string name;
    bool categorical = false;
    Eigen::VectorXd numeric;           // per row, when !categorical
    std::vector<std::string> labels;   // per row, when categorical
    std::vector<std::string> levels;   // sorted unique labels
};

/// Subjects x features matrix with group labels and covariates. Immutable
/// after construction by convention; operations return new tables.
struct FeatureTable {
    std::vector<std::string> subject_ids;   // N
    std::vector<std::string> groups;        // N, each one of group_levels
    std::vector<std::string> group_levels;  // sorted unique
    Eigen::MatrixXd values;                 // N x F
    std::vector<std::string> feature_names; // F
    std::vector<Covariate> covariates;

    Eigen::Index n_rows() const { return values.rows(); }
    Eigen::Index n_features() const { return values.cols(); }

    const Covariate* find_covariate(std::string_view name) const {
        for (const auto& c : covariates)
            if (c.name == name) return &c;
        return nullptr;
    }

    int group_index(std::string_view label) const {
        auto it = std::lower_bound(group_levels.begin(), group_levels.end(), label);
        if (it == group_levels.end() || *it != label) return -1;
        return static_cast<int>(it - group_levels.begin());
    }

    int feature_index(std::string_view name) const {
        for (std::size_t f = 0; f < feature_names.size(); ++f)
            if (feature_names[f] == name) return static_cast<int>(f);
        return -1;
    }

    /// Per-row index into group_levels.
    std::vector<int> group_rows() const {
        std::vector<int> idx(groups.size());
        for (std::size_t j = 0; j < groups.size(); ++j) idx[j] = group_index(groups[j]);
        return idx;
    }
};

inline std::vector<std::string> sorted_unique(const std::vector<std::string>& v) {
    std::vector<std::string> out(v);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline void validate_table(const FeatureTable& t) {
    const auto n = t.values.rows();
    if (n < 1 || t.values.cols() < 1) throw DataError("table must have N >= 1 rows and F >= 1 features");
    if (static_cast<Eigen::Index>(t.subject_ids.size()) != n ||
        static_cast<Eigen::Index>(t.groups.size()) != n)
        throw DataError("subject/group column length does not match value matrix");
    if (sorted_unique(t.feature_names).size() != t.feature_names.size())
        throw DataError("feature names are not unique");
    if (static_cast<Eigen::Index>(t.feature_names.size()) != t.values.cols())
        throw DataError("feature name count does not match value matrix");
    for (const auto& g : t.groups)
        if (t.group_index(g) < 0) throw DataError("group label '" + g + "' not in declared levels");
    if (!t.values.allFinite()) throw DataError("value matrix contains non-finite entries");
    for (const auto& c : t.covariates) {
        if (c.categorical) {
            if (static_cast<Eigen::Index>(c.labels.size()) != n)
                throw DataError("covariate '" + c.name + "' length mismatch");
        } else if (c.numeric.size() != n) {
            throw DataError("covariate '" + c.name + "' length mismatch");
        }
    }
}

/// Row subset preserving column structure and level sets.
inline FeatureTable subset(const FeatureTable& t, const std::vector<int>& rows) {
    FeatureTable out;
    out.feature_names = t.feature_names;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), t.values.cols());
    out.subject_ids.reserve(rows.size());
    out.groups.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.subject_ids.push_back(t.subject_ids[rows[i]]);
        out.groups.push_back(t.groups[rows[i]]);
        out.values.row(static_cast<Eigen::Index>(i)) = t.values.row(rows[i]);
    }
    out.group_levels = sorted_unique(out.groups);
    for (const auto& c : t.covariates) {
        Covariate cc;
        cc.name = c.name;
        cc.categorical = c.categorical;
        if (c.categorical) {
            cc.labels.reserve(rows.size());
            for (int r : rows) cc.labels.push_back(c.labels[r]);
            cc.levels = sorted_unique(cc.labels);
        } else {
            cc.numeric.resize(static_cast<Eigen::Index>(rows.size()));
            for (std::size_t i = 0; i < rows.size(); ++i)
                cc.numeric[static_cast<Eigen::Index>(i)] = c.numeric[rows[i]];
        }
        out.covariates.push_back(std::move(cc));
    }
    return out;
}

/// Resolve a grouping source: "group" means the table's group column,
/// anything else must name a categorical covariate.
inline std::pair<std::vector<std::string>, std::vector<std::string>>
resolve_groups(const FeatureTable& t, std::string_view group_by) {
    if (group_by == "group" || group_by.empty()) return {t.groups, t.group_levels};
    const Covariate* c = t.find_covariate(group_by);
    if (!c || !c->categorical)
        throw DataError("group-by column '" + std::string(group_by) + "' is not a categorical covariate");
    return {c->labels, c->levels};
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct TableSchema {
    std::string subject_col;
    std::string group_col;
    std::vector<std::string> feature_cols;  // explicit names and/or prefix globs "vol_*"
    // covariate column name -> categorical?
    std::vector<std::pair<std::string, bool>> covariate_cols;
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rows_kept = 0;
    std::vector<std::pair<std::size_t, std::string>> dropped;  // (data row index, reason)
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& cell, double& out) {
    const std::string s = trim(cell);
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace detail

/// Load a CSV into a validated FeatureTable. Rows with blank feature or
/// covariate cells are dropped and reported; non-numeric garbage and
/// duplicate subject ids are hard errors.
inline FeatureTable load_table(const std::string& path, const TableSchema& schema,
                               LoadReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file '" + path + "'");
    const auto header = detail::split_csv_line(line);
    std::map<std::string, int> col_of;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string name = detail::trim(header[i]);
        if (col_of.count(name)) throw DataError("duplicate column '" + name + "' in header");
        col_of[name] = static_cast<int>(i);
    }
    auto require = [&](const std::string& name) {
        auto it = col_of.find(name);
        if (it == col_of.end()) throw DataError("missing required column '" + name + "'");
        return it->second;
    };

    const int subject_ix = require(schema.subject_col);
    const int group_ix = require(schema.group_col);

    // Expand feature globs against the header, keeping header order and
    // skipping columns already claimed by other roles.
    std::set<std::string> claimed{schema.subject_col, schema.group_col};
    for (const auto& [cname, cat] : schema.covariate_cols) claimed.insert(cname);
    std::vector<std::string> feature_names;
    std::vector<int> feature_ix;
    for (const auto& spec : schema.feature_cols) {
        if (!spec.empty() && spec.back() == '*') {
            const std::string prefix = spec.substr(0, spec.size() - 1);
            bool any = false;
            for (std::size_t i = 0; i < header.size(); ++i) {
                const std::string name = detail::trim(header[i]);
                if (name.rfind(prefix, 0) == 0 && !claimed.count(name)) {
                    feature_names.push_back(name);
                    feature_ix.push_back(static_cast<int>(i));
                    any = true;
                }
            }
            if (!any) throw DataError("feature glob '" + spec + "' matched no columns");
        } else {
            feature_ix.push_back(require(spec));
            feature_names.push_back(spec);
        }
    }
    if (feature_names.empty()) throw DataError("schema names no feature columns");

    std::vector<std::pair<std::string, int>> cov_ix;
    for (const auto& [cname, cat] : schema.covariate_cols) cov_ix.emplace_back(cname, require(cname));

    LoadReport rep;
    std::vector<std::string> subjects, groups;
    std::vector<std::vector<double>> rows_values;
    std::vector<std::vector<std::string>> rows_cov;
    std::size_t data_row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        ++rep.rows_read;
        const std::size_t row_ix = data_row++;
        if (cells.size() != header.size())
            throw DataError("row " + std::to_string(row_ix) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(header.size()));

        std::string drop_reason;
        std::vector<double> vals(feature_ix.size());
        for (std::size_t f = 0; f < feature_ix.size(); ++f) {
            const std::string cell = detail::trim(cells[feature_ix[f]]);
            if (cell.empty()) {
                drop_reason = "missing value in column '" + feature_names[f] + "'";
                break;
            }
            if (!detail::parse_double(cell, vals[f]))
                throw DataError("non-numeric feature cell '" + cell + "' in column '" +
                                feature_names[f] + "', row " + std::to_string(row_ix));
        }
        std::vector<std::string> covs(cov_ix.size());
        if (drop_reason.empty()) {
            for (std::size_t c = 0; c < cov_ix.size(); ++c) {
                covs[c] = detail::trim(cells[cov_ix[c].second]);
                if (covs[c].empty()) {
                    drop_reason = "missing value in column '" + cov_ix[c].first + "'";
                    break;
                }
            }
        }
        if (!drop_reason.empty()) {
            rep.dropped.emplace_back(row_ix, drop_reason);
            continue;
        }
        subjects.push_back(detail::trim(cells[subject_ix]));
        groups.push_back(detail::trim(cells[group_ix]));
        rows_values.push_back(std::move(vals));
        rows_cov.push_back(std::move(covs));
    }
    rep.rows_kept = subjects.size();

    {
        auto dup = subjects;
        std::sort(dup.begin(), dup.end());
        auto it = std::adjacent_find(dup.begin(), dup.end());
        if (it != dup.end()) throw DataError("duplicate subject_id '" + *it + "'");
    }
    if (subjects.empty()) throw DataError("no valid rows in '" + path + "'");

    FeatureTable t;
    t.subject_ids = std::move(subjects);
    t.groups = std::move(groups);
    t.group_levels = sorted_unique(t.groups);
    t.feature_names = std::move(feature_names);
    t.values.resize(static_cast<Eigen::Index>(rows_values.size()),
                    static_cast<Eigen::Index>(t.feature_names.size()));
    for (std::size_t r = 0; r < rows_values.size(); ++r)
        for (std::size_t f = 0; f < rows_values[r].size(); ++f)
            t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = rows_values[r][f];

    for (std::size_t c = 0; c < cov_ix.size(); ++c) {
        Covariate cov;
        cov.name = cov_ix[c].first;
        cov.categorical = schema.covariate_cols[c].second;
        if (cov.categorical) {
            for (const auto& row : rows_cov) cov.labels.push_back(row[c]);
            cov.levels = sorted_unique(cov.labels);
        } else {
            cov.numeric.resize(static_cast<Eigen::Index>(rows_cov.size()));
            for (std::size_t r = 0; r < rows_cov.size(); ++r) {
                double v = 0.0;
                if (!detail::parse_double(rows_cov[r][c], v))
                    throw DataError("non-numeric cell '" + rows_cov[r][c] + "' in numeric covariate '" +
                                    cov.name + "'");
                cov.numeric[static_cast<Eigen::Index>(r)] = v;
            }
        }
        t.covariates.push_back(std::move(cov));
    }
    validate_table(t);
    if (report) *report = rep;
    return t;
}

/// Canonical column layout used by write_table: subject_id, group,
/// covariates, features. Doubles are written in shortest round-trip form.
inline TableSchema canonical_schema(const FeatureTable& t) {
    TableSchema s;
    s.subject_col = "subject_id";
    s.group_col = "group";
    s.feature_cols = t.feature_names;
    for (const auto& c : t.covariates) s.covariate_cols.emplace_back(c.name, c.categorical);
    return s;
}

inline void write_table(const FeatureTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "subject_id,group";
    for (const auto& c : t.covariates) out << ',' << c.name;
    for (const auto& f : t.feature_names) out << ',' << f;
    out << '\n';
    for (Eigen::Index r = 0; r < t.n_rows(); ++r) {
        out << t.subject_ids[r] << ',' << t.groups[r];
        for (const auto& c : t.covariates) {
            out << ',';
            if (c.categorical)
                out << c.labels[r];
            else
                out << detail::format_double(c.numeric[r]);
        }
        for (Eigen::Index f = 0; f < t.n_features(); ++f)
            out << ',' << detail::format_double(t.values(r, f));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Covariate spec and design matrices
// ---------------------------------------------------------------------------

/// Keep/remove covariate selection (the model's k and r regressor blocks).
/// substitute_pcs > 0 requests that many principal-component substitute
/// confounders appended to the remove block by the harmonization fits.
struct CovariateSpec {
    std::vector<std::string> keep;
    std::vector<std::string> remove;
    int substitute_pcs = 0;
    bool expand_age_quadratic = false;

    void validate(const FeatureTable& t) const {
        for (const auto& k : keep)
            for (const auto& r : remove)
                if (k == r) throw ConfigError("covariate '" + k + "' is in both keep and remove");
        for (const auto& name : keep)
            if (!t.find_covariate(name)) throw ConfigError("keep covariate '" + name + "' not in table");
        for (const auto& name : remove)
            if (!t.find_covariate(name)) throw ConfigError("remove covariate '" + name + "' not in table");
        if (expand_age_quadratic &&
            std::find(keep.begin(), keep.end(), "age") == keep.end())
            throw ConfigError("expand_age_quadratic requires 'age' in keep");
        if (substitute_pcs < 0) throw ConfigError("substitute_pc count must be >= 0");
    }
};

/// Parse remove tokens of the form "name" or "substitute_pc(m)".
inline std::pair<std::vector<std::string>, int>
parse_remove_tokens(const std::vector<std::string>& tokens) {
    std::vector<std::string> names;
    int pcs = 0;
    for (const auto& tok : tokens) {
        if (tok.rfind("substitute_pc(", 0) == 0 && tok.back() == ')') {
            const std::string num = tok.substr(14, tok.size() - 15);
            int m = 0;
            try {
                m = std::stoi(num);
            } catch (...) {
                throw ConfigError("bad substitute_pc token '" + tok + "'");
            }
            if (m < 0) throw ConfigError("bad substitute_pc token '" + tok + "'");
            pcs += m;
        } else {
            names.push_back(tok);
        }
    }
    return {names, pcs};
}

/// Reapplication recipe for one design block: numeric columns (optionally
/// centered/squared) and treatment-coded categoricals with frozen levels.
struct DesignRecipe {
    struct NumericCol {
        std::string covariate;
        double center = 0.0;
        bool squared = false;
    };
    struct CategoricalCol {
        std::string covariate;
        std::string reference;              // omitted level
        std::vector<std::string> levels;    // fit-time levels, sorted
    };
    struct Entry {
        bool categorical = false;
        NumericCol num;
        CategoricalCol cat;
    };
    std::vector<Entry> entries;
};

struct DesignMatrix {
    Eigen::MatrixXd m;                          // N x C
    std::vector<std::string> column_names;
    DesignRecipe recipe;
};

namespace detail {

inline DesignRecipe build_recipe(const FeatureTable& t, const std::vector<std::string>& names,
                                 bool expand_age_quadratic) {
    DesignRecipe recipe;
    for (const auto& name : names) {
        const Covariate* c = t.find_covariate(name);
        if (!c) throw ConfigError("covariate '" + name + "' not in table");
        DesignRecipe::Entry e;
        if (c->categorical) {
            e.categorical = true;
            e.cat.covariate = name;
            e.cat.levels = c->levels;
            if (e.cat.levels.size() < 2)
                throw DataError("categorical covariate '" + name + "' has a single level");
            e.cat.reference = e.cat.levels.front();  // lexicographically smallest
            recipe.entries.push_back(e);
        } else if (name == "age" && expand_age_quadratic) {
            DesignRecipe::Entry lin;
            lin.num = {name, c->numeric.mean(), false};
            recipe.entries.push_back(lin);
            DesignRecipe::Entry quad;
            quad.num = {name, lin.num.center, true};
            recipe.entries.push_back(quad);
        } else {
            e.num = {name, 0.0, false};
            recipe.entries.push_back(e);
        }
    }
    return recipe;
}

}  // namespace detail

/// Materialize a recipe against a table. Unseen categorical levels are a
/// data error (the fit-time encoding cannot represent them).
inline DesignMatrix materialize_design(const DesignRecipe& recipe, const FeatureTable& t) {
    DesignMatrix dm;
    dm.recipe = recipe;
    const Eigen::Index n = t.n_rows();
    std::vector<Eigen::VectorXd> cols;
    for (const auto& e : recipe.entries) {
        const Covariate* c = t.find_covariate(e.categorical ? e.cat.covariate : e.num.covariate);
        if (!c)
            throw DataError("covariate '" + (e.categorical ? e.cat.covariate : e.num.covariate) +
                            "' missing at apply time");
        if (e.categorical) {
            if (!c->categorical)
                throw DataError("covariate '" + e.cat.covariate + "' changed type");
            std::map<std::string, int> level_ix;
            for (std::size_t l = 0; l < e.cat.levels.size(); ++l) level_ix[e.cat.levels[l]] = static_cast<int>(l);
            std::vector<Eigen::VectorXd> dummies(e.cat.levels.size() - 1, Eigen::VectorXd::Zero(n));
            for (Eigen::Index r = 0; r < n; ++r) {
                auto it = level_ix.find(c->labels[r]);
                if (it == level_ix.end())
                    throw DataError("unseen level '" + c->labels[r] + "' of covariate '" +
                                    e.cat.covariate + "'");
                if (it->second > 0) dummies[it->second - 1][r] = 1.0;
            }
            for (std::size_t l = 1; l < e.cat.levels.size(); ++l) {
                dm.column_names.push_back(e.cat.covariate + "=" + e.cat.levels[l]);
                cols.push_back(std::move(dummies[l - 1]));
            }
        } else {
            if (c->categorical)
                throw DataError("covariate '" + e.num.covariate + "' changed type");
            Eigen::VectorXd v = c->numeric.array() - e.num.center;
            if (e.num.squared) {
                v = v.array().square();
                dm.column_names.push_back(e.num.covariate + "_c2");
            } else {
                dm.column_names.push_back(e.num.center != 0.0 ? e.num.covariate + "_c"
                                                              : e.num.covariate);
            }
            cols.push_back(std::move(v));
        }
    }
    dm.m.resize(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) dm.m.col(static_cast<Eigen::Index>(j)) = cols[j];
    return dm;
}

namespace detail {

// Rank check of [1 | M]; throws naming the columns beyond the numerical rank.
inline void check_full_rank(const DesignMatrix& dm, const std::string& which) {
    if (dm.m.cols() == 0) return;
    Eigen::MatrixXd aug(dm.m.rows(), dm.m.cols() + 1);
    aug.col(0).setOnes();
    aug.rightCols(dm.m.cols()) = dm.m;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(aug);
    qr.setThreshold(1e-10);
    const auto rank = qr.rank();
    if (rank == aug.cols()) return;
    std::string offending;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = rank; i < aug.cols(); ++i) {
        const Eigen::Index col = perm[i];
        if (col == 0) {
            offending += offending.empty() ? "(intercept)" : ", (intercept)";
        } else {
            const auto& name = dm.column_names[static_cast<std::size_t>(col - 1)];
            offending += offending.empty() ? name : ", " + name;
        }
    }
    throw DataError("rank-deficient " + which + " design; dependent columns: " + offending);
}

}  // namespace detail

/// Build the keep (K) and remove (R) design blocks for a covariate spec.
/// Substitute-confounder columns are appended to R later by the
/// harmonization fits, not here.
inline std::pair<DesignMatrix, DesignMatrix> build_design(const FeatureTable& t,
                                                          const CovariateSpec& spec) {
    spec.validate(t);
    DesignMatrix K = materialize_design(detail::build_recipe(t, spec.keep, spec.expand_age_quadratic), t);
    DesignMatrix R = materialize_design(detail::build_recipe(t, spec.remove, false), t);
    detail::check_full_rank(K, "keep");
    detail::check_full_rank(R, "remove");
    return {std::move(K), std::move(R)};
}

// ---------------------------------------------------------------------------
// Stratified splits
// ---------------------------------------------------------------------------

struct Split {
    std::vector<int> train_indices;
    std::vector<int> test_indices;
    std::string stratify_by = "group";
    double fraction = 0.0;
    std::uint64_t seed = 0;
};

/// Deterministic per-group split; each group's train count is the rounded
/// group fraction clamped so both sides stay non-empty.
inline Split stratified_split(const FeatureTable& t, double fraction, std::uint64_t seed,
                              std::string_view group_by = "group") {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0,1)");
    auto [labels, levels] = resolve_groups(t, group_by);
    std::vector<std::vector<int>> by_group(levels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        auto it = std::lower_bound(levels.begin(), levels.end(), labels[r]);
        by_group[static_cast<std::size_t>(it - levels.begin())].push_back(static_cast<int>(r));
    }
    Split split;
    split.stratify_by = std::string(group_by);
    split.fraction = fraction;
    split.seed = seed;
    Rng rng(derive_seed(seed, "stratified_split"));
    for (std::size_t g = 0; g < levels.size(); ++g) {
        auto& rows = by_group[g];
        if (rows.size() < 2)
            throw DataError("group '" + levels[g] + "' has fewer than 2 subjects");
        for (std::size_t i = rows.size() - 1; i > 0; --i)
            std::swap(rows[i], rows[rng.below(i + 1)]);
        auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size()) + 0.5));
        n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
        for (std::size_t i = 0; i < rows.size(); ++i)
            (i < n_train ? split.train_indices : split.test_indices).push_back(rows[i]);
    }
    std::sort(split.train_indices.begin(), split.train_indices.end());
    std::sort(split.test_indices.begin(), split.test_indices.end());
    return split;
}

// ---------------------------------------------------------------------------
// ICV normalization
// ---------------------------------------------------------------------------

/// Divide the listed feature columns elementwise by the icv covariate.
inline FeatureTable relative_to_icv(const FeatureTable& t, const std::vector<std::string>& features) {
    const Covariate* icv = t.find_covariate("icv");
    if (!icv || icv->categorical) throw DataError("numeric covariate 'icv' required");
    for (Eigen::Index r = 0; r < icv->numeric.size(); ++r)
        if (!(icv->numeric[r] > 0.0))
            throw DataError("icv must be strictly positive (row " + std::to_string(r) + ")");
    FeatureTable out = t;
    for (const auto& name : features) {
        const int f = t.feature_index(name);
        if (f < 0) throw DataError("unknown feature '" + name + "'");
        out.values.col(f).array() /= icv->numeric.array();
    }
    return out;
}

}  // namespace debias
