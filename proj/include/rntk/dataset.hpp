#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rntk/errors.hpp"
#include "rntk/kernel.hpp"

namespace rntk {

/// Labelled fixed-length vectors. `labels` are coded 0..K-1 in the order of
/// the sorted original label values kept in `class_values`.
struct Dataset {
    std::string name;
    Matrix features;  ///< N x T
    std::vector<int> labels;
    std::vector<int> class_values;

    [[nodiscard]] Eigen::Index size() const { return features.rows(); }
    [[nodiscard]] Eigen::Index length() const { return features.cols(); }
    [[nodiscard]] int num_classes() const { return static_cast<int>(class_values.size()); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string cell_location(const std::string& name, std::size_t row, std::size_t col) {
    return name + ": row " + std::to_string(row + 1) + ", column " + std::to_string(col + 1);
}

}  // namespace detail

/// Parses the dataset CSV format: numeric features separated by commas, the
/// last column an integer label, no header, one sample per line.
inline Dataset parse_dataset(std::string_view text, std::string name) {
    std::vector<std::vector<double>> rows;
    std::vector<int> raw_labels;
    std::size_t width = 0;
    std::size_t row = 0;
    while (!text.empty()) {
        const auto eol = text.find('\n');
        std::string_view line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        if (detail::trim(line).empty()) {
            ++row;
            continue;
        }
        std::vector<std::string_view> cells;
        for (std::size_t start = 0;;) {
            const auto comma = line.find(',', start);
            cells.push_back(detail::trim(line.substr(start, comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (cells.size() < 2) {
            throw ParseError(detail::cell_location(name, row, 0) + ": expected features followed by a label column");
        }
        if (width == 0) width = cells.size();
        if (cells.size() != width) {
            throw ParseError(name + ": row " + std::to_string(row + 1) + " has " + std::to_string(cells.size()) +
                             " columns, expected " + std::to_string(width));
        }
        std::vector<double> values(width - 1);
        for (std::size_t c = 0; c + 1 < width; ++c) {
            const auto cell = cells[c];
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty()) {
                throw ParseError(detail::cell_location(name, row, c) + ": not a number '" + std::string(cell) + "'");
            }
            if (!std::isfinite(v)) {
                throw ParseError(detail::cell_location(name, row, c) + ": non-finite value '" + std::string(cell) + "'");
            }
            values[c] = v;
        }
        const auto cell = cells.back();
        int label = 0;
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
        if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty()) {
            throw ParseError(detail::cell_location(name, row, width - 1) + ": label is not an integer '" +
                             std::string(cell) + "'");
        }
        rows.push_back(std::move(values));
        raw_labels.push_back(label);
        ++row;
    }
    if (rows.empty()) throw ParseError(name + ": no samples");

    Dataset d;
    d.name = std::move(name);
    d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c + 1 < width; ++c) d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
    d.class_values = raw_labels;
    std::sort(d.class_values.begin(), d.class_values.end());
    d.class_values.erase(std::unique(d.class_values.begin(), d.class_values.end()), d.class_values.end());
    for (int v : raw_labels) {
        d.labels.push_back(static_cast<int>(std::lower_bound(d.class_values.begin(), d.class_values.end(), v) -
                                            d.class_values.begin()));
    }
    return d;
}

/// Reads a dataset CSV; the dataset is named after the file stem.
inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), path.stem().string());
}

/// Rows of a dataset, selected by index.
inline Matrix take_rows(const Matrix& m, const std::vector<int>& idx) { return m(idx, Eigen::all); }

inline std::vector<int> take(const std::vector<int>& v, const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
    return out;
}

/// Per-feature z-scores with statistics from `train` only; zero-variance
/// features become 0 in both outputs. Test values are never clipped.
inline std::pair<Matrix, Matrix> normalize(const Matrix& train, const Matrix& test) {
    if (train.cols() != test.cols()) throw ShapeError("normalize: feature lengths differ");
    if (train.rows() == 0) throw ShapeError("normalize: empty training set");
    Matrix a = train, b = test;
    for (Eigen::Index c = 0; c < train.cols(); ++c) {
        const double mean = train.col(c).mean();
        const double var = (train.col(c).array() - mean).square().mean();
        const double sd = std::sqrt(var);
        if (!(sd > 0.0)) {
            a.col(c).setZero();
            b.col(c).setZero();
        } else {
            a.col(c) = (train.col(c).array() - mean) / sd;
            b.col(c) = (test.col(c).array() - mean) / sd;
        }
    }
    return {std::move(a), std::move(b)};
}

/// Index sets for the validation phase and the 4-fold cross-testing phase.
struct SplitPlan {
    std::vector<int> train_half;
    std::vector<int> validation_half;
    std::array<std::vector<int>, 4> folds;

    /// Rows outside fold `k`, ascending.
    [[nodiscard]] std::vector<int> fold_train(std::size_t k) const {
        std::vector<int> out;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            if (f != k) out.insert(out.end(), folds[f].begin(), folds[f].end());
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

/// FNV-1a, used to derive a platform-independent split seed from a dataset name.
inline std::uint64_t name_seed(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace detail {

// Fisher-Yates driven by raw mt19937_64 output so the permutation is the
// same on every standard library.
inline std::vector<int> permutation(int n, std::mt19937_64& engine) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const std::uint64_t bound = static_cast<std::uint64_t>(i) + 1;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r;
        do {
            r = engine();
        } while (r >= limit);
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(r % bound)]);
    }
    return p;
}

}  // namespace detail

/// Deterministic half split and 4-fold partition of N rows.
inline SplitPlan make_splits(int n, std::uint64_t seed) {
    if (n < 8) throw ShapeError("make_splits: at least 8 samples are required");
    std::mt19937_64 engine(seed);
    SplitPlan plan;
    auto half = detail::permutation(n, engine);
    plan.train_half.assign(half.begin(), half.begin() + n / 2);
    plan.validation_half.assign(half.begin() + n / 2, half.end());
    std::sort(plan.train_half.begin(), plan.train_half.end());
    std::sort(plan.validation_half.begin(), plan.validation_half.end());
    const auto perm = detail::permutation(n, engine);
    std::size_t pos = 0;
    for (int k = 0; k < 4; ++k) {
        const auto size = static_cast<std::size_t>(n / 4 + (k < n % 4 ? 1 : 0));
        plan.folds[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                             perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(plan.folds[k].begin(), plan.folds[k].end());
        pos += size;
    }
    return plan;
}

/// Parses a `<name>.splits.json` sidecar:
/// {"validation_half": [...], "folds": [[...], [...], [...], [...]]}.
/// The training half is the complement of `validation_half`.
inline SplitPlan parse_splits(const nlohmann::json& j, int n) {
    auto indices = [n](const nlohmann::json& arr, const char* what) {
        if (!arr.is_array()) throw ParseError(std::string("splits: '") + what + "' must be an array");
        std::vector<int> out;
        for (const auto& v : arr) {
            if (!v.is_number_integer()) throw ParseError(std::string("splits: '") + what + "' holds a non-integer");
            const int i = v.get<int>();
            if (i < 0 || i >= n) throw ParseError(std::string("splits: index out of range in '") + what + "'");
            out.push_back(i);
        }
        std::sort(out.begin(), out.end());
        if (std::adjacent_find(out.begin(), out.end()) != out.end()) {
            throw ParseError(std::string("splits: duplicate index in '") + what + "'");
        }
        return out;
    };
    if (!j.contains("validation_half") || !j.contains("folds")) {
        throw ParseError("splits: expected keys 'validation_half' and 'folds'");
    }
    SplitPlan plan;
    plan.validation_half = indices(j.at("validation_half"), "validation_half");
    std::vector<char> in_val(static_cast<std::size_t>(n), 0);
    for (int i : plan.validation_half) in_val[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < n; ++i) {
        if (!in_val[static_cast<std::size_t>(i)]) plan.train_half.push_back(i);
    }
    if (plan.train_half.empty() || plan.validation_half.empty()) throw ParseError("splits: a half is empty");
    const auto& folds = j.at("folds");
    if (!folds.is_array() || folds.size() != 4) throw ParseError("splits: 'folds' must hold exactly 4 arrays");
    std::vector<int> seen(static_cast<std::size_t>(n), 0);
    for (std::size_t k = 0; k < 4; ++k) {
        plan.folds[k] = indices(folds[k], "folds");
        if (plan.folds[k].empty()) throw ParseError("splits: empty fold");
        for (int i : plan.folds[k]) ++seen[static_cast<std::size_t>(i)];
    }
    if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
        throw ParseError("splits: folds must partition every row exactly once");
    }
    return plan;
}

/// Sidecar splits next to `csv` when present, otherwise seeded from the dataset name.
inline SplitPlan splits_for(const std::filesystem::path& csv, const Dataset& d) {
    auto sidecar = csv;
    sidecar.replace_filename(csv.stem().string() + ".splits.json");
    if (std::filesystem::exists(sidecar)) {
        std::ifstream in(sidecar);
        try {
            return parse_splits(nlohmann::json::parse(in), static_cast<int>(d.size()));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(sidecar.string() + ": " + e.what());
        }
    }
    return make_splits(static_cast<int>(d.size()), name_seed(d.name));
}

}  // namespace rntk
