#pragma once

// Core data types for the unit-level nested-error regression model
//   y_ij = x_ij' beta + v_i + e_ij
// and the three hierarchical-Bayes variants fitted to it.

#include "hbsae/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hbsae {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// DG: normal errors. CDM: contamination mixture with sigma1^2 < sigma2^2.
/// GDM: symmetric two-component mixture with p_e > 1/2.
enum class Variant { DG, CDM, GDM };

constexpr std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::DG: return "DG";
    case Variant::CDM: return "CDM";
    case Variant::GDM: return "GDM";
    }
    return "?";
}

inline Variant parse_variant(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
    if (s == "DG") return Variant::DG;
    if (s == "CDM") return Variant::CDM;
    if (s == "GDM") return Variant::GDM;
    fail(ErrorCode::InvalidConfig, "unknown model variant '" + std::string(name) + "'");
}

constexpr bool is_mixture(Variant v) { return v != Variant::DG; }

struct UnitRecord {
    std::string area_id;
    double y = 0.0;
    Vector x;  // includes the intercept entry when the model has one
};

enum class CovariateScale { Original, Log };

/// Per-area population metadata. Row i of `xbar` holds the population mean of
/// the covariate vector (intercept entry included) for area `ids[i]`.
struct AreaFrame {
    std::vector<std::string> ids;
    std::vector<long long> N;
    Matrix xbar;
    CovariateScale scale = CovariateScale::Original;

    int size() const { return static_cast<int>(ids.size()); }

    std::optional<int> index_of(std::string_view id) const {
        for (int i = 0; i < size(); ++i)
            if (ids[i] == id) return i;
        return std::nullopt;
    }
};

/// Validated sample. Units are grouped by area, areas ordered as in the
/// AreaFrame; units of area i occupy [area_start[i], area_start[i+1]).
struct Dataset {
    std::vector<std::string> area_ids;
    std::vector<int> n_per_area;
    std::vector<int> area_start;
    std::vector<int> area_of_unit;
    std::vector<int> unit_in_area;
    std::vector<int> source_row;  // position of the unit in the input record list
    Vector y;
    Matrix X;
    std::optional<int> intercept_column;
    bool log_scale = false;

    int m() const { return static_cast<int>(area_ids.size()); }
    int n() const { return static_cast<int>(y.size()); }
    int q() const { return static_cast<int>(X.cols()); }
};

struct ChainConfig {
    int n_draws = 10000;
    int burn_in = 5000;
    int thin = 1;
    int n_chains = 2;
    std::uint64_t seed = 20240501ULL;

    void validate() const {
        if (n_draws < 1) fail(ErrorCode::InvalidConfig, "n_draws must be >= 1");
        if (burn_in < 0) fail(ErrorCode::InvalidConfig, "burn_in must be >= 0");
        if (thin < 1) fail(ErrorCode::InvalidConfig, "thin must be >= 1");
        if (n_chains < 1) fail(ErrorCode::InvalidConfig, "n_chains must be >= 1");
    }
};

/// Test hooks that hold selected blocks at their initial values.
struct FrozenBlocks {
    bool z = false;
    bool eta = false;
    bool p_e = false;
    std::optional<double> eta_value;  // replaces the initial eta when set
};

struct ModelSpec {
    Variant variant = Variant::GDM;
    ChainConfig chain;
    FrozenBlocks frozen;
};

/// One Gibbs state. For DG, z is all ones, eta = 1 and p_e = 1.
struct ChainState {
    Vector beta;
    Vector v;
    std::vector<std::uint8_t> z;
    double sigma1_sq = 1.0;
    double eta = 1.0;
    double sigma_v_sq = 1.0;
    double p_e = 1.0;

    double sigma2_sq() const { return eta * sigma1_sq; }
};

/// Throws InvariantViolation if `s` is not a legal state for `variant`.
inline void check_state(const ChainState& s, Variant variant, std::string_view where = {}) {
    auto bad = [&](const std::string& what) {
        std::string msg = what;
        if (!where.empty()) msg += " after " + std::string(where);
        fail(ErrorCode::InvariantViolation, msg);
    };
    if (!s.beta.allFinite()) bad("non-finite beta");
    if (!s.v.allFinite()) bad("non-finite area effect");
    if (!(std::isfinite(s.sigma1_sq) && s.sigma1_sq > 0)) bad("sigma1_sq not positive");
    if (!(std::isfinite(s.sigma_v_sq) && s.sigma_v_sq > 0)) bad("sigma_v_sq not positive");
    if (!(std::isfinite(s.eta) && s.eta > 0)) bad("eta not positive");
    switch (variant) {
    case Variant::GDM:
        if (!(s.p_e > 0.5 && s.p_e < 1.0)) bad("p_e outside (1/2, 1)");
        break;
    case Variant::CDM:
        if (!(s.p_e > 0.0 && s.p_e < 1.0)) bad("p_e outside (0, 1)");
        if (!(s.eta > 1.0)) bad("eta <= 1 under CDM ordering");
        break;
    case Variant::DG:
        break;
    }
}

struct ValidationOptions {
    bool allow_unsampled_areas = false;
};

namespace detail {

inline bool all_finite(const Vector& x) { return x.allFinite(); }

inline std::optional<int> find_intercept(const Matrix& X) {
    for (int k = 0; k < X.cols(); ++k)
        if ((X.col(k).array() == 1.0).all()) return k;
    return std::nullopt;
}

} // namespace detail

/// Builds a Dataset indexed consistently with `frame`. Rejects designs under
/// which a full conditional of the sampler would be improper.
inline Dataset validate_dataset(const std::vector<UnitRecord>& records, const AreaFrame& frame,
                                const ValidationOptions& options = {}) {
    if (records.empty()) fail(ErrorCode::EmptyData, "no unit records");
    const auto q = records.front().x.size();
    if (q == 0) fail(ErrorCode::InvalidParameter, "records carry no covariates");

    std::unordered_map<std::string, int> frame_index;
    for (int i = 0; i < frame.size(); ++i) {
        if (!frame_index.emplace(frame.ids[i], i).second)
            fail(ErrorCode::AreaMismatch, "duplicate area '" + frame.ids[i] + "' in area frame");
    }
    if (frame.xbar.rows() != frame.size() || static_cast<int>(frame.N.size()) != frame.size())
        fail(ErrorCode::AreaMismatch, "area frame columns have inconsistent lengths");
    if (frame.xbar.cols() != q)
        fail(ErrorCode::AreaMismatch, "area frame covariate dimension differs from records");
    if (!frame.xbar.allFinite()) fail(ErrorCode::NonFiniteValue, "non-finite population covariate mean");

    std::vector<std::vector<int>> members(frame.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.x.size() != q)
            fail(ErrorCode::InvalidParameter, "record " + std::to_string(r) + " has covariate length " +
                                                  std::to_string(rec.x.size()) + ", expected " + std::to_string(q));
        if (!std::isfinite(rec.y) || !detail::all_finite(rec.x))
            fail(ErrorCode::NonFiniteValue, "record " + std::to_string(r) + " has a non-finite value");
        auto it = frame_index.find(rec.area_id);
        if (it == frame_index.end())
            fail(ErrorCode::AreaMismatch, "area '" + rec.area_id + "' missing from area frame");
        members[it->second].push_back(static_cast<int>(r));
    }

    Dataset d;
    const int m = frame.size();
    const int n = static_cast<int>(records.size());
    d.area_ids = frame.ids;
    d.n_per_area.resize(m);
    d.area_start.resize(m + 1);
    d.y.resize(n);
    d.X.resize(n, q);
    d.area_of_unit.resize(n);
    d.unit_in_area.resize(n);
    d.source_row.resize(n);

    int cursor = 0;
    for (int i = 0; i < m; ++i) {
        const int ni = static_cast<int>(members[i].size());
        if (ni == 0 && !options.allow_unsampled_areas)
            fail(ErrorCode::AreaMismatch, "area '" + frame.ids[i] + "' has no sampled units");
        if (frame.N[i] < ni)
            fail(ErrorCode::AreaMismatch, "area '" + frame.ids[i] + "' has N smaller than its sample size");
        if (frame.N[i] <= 0) fail(ErrorCode::AreaMismatch, "area '" + frame.ids[i] + "' has non-positive N");
        d.n_per_area[i] = ni;
        d.area_start[i] = cursor;
        for (int j = 0; j < ni; ++j, ++cursor) {
            const auto& rec = records[members[i][j]];
            d.y[cursor] = rec.y;
            d.X.row(cursor) = rec.x.transpose();
            d.area_of_unit[cursor] = i;
            d.unit_in_area[cursor] = j;
            d.source_row[cursor] = members[i][j];
        }
    }
    d.area_start[m] = cursor;

    int sampled_areas = 0;
    for (int ni : d.n_per_area) sampled_areas += ni > 0;
    if (m < 3 || sampled_areas < 3)
        fail(ErrorCode::TooFewAreas, "need at least 3 sampled areas, got " + std::to_string(sampled_areas));
    if (n < q + 3)
        fail(ErrorCode::TooFewUnits, "need n >= q + 3 (n=" + std::to_string(n) + ", q=" + std::to_string(q) + ")");

    Eigen::ColPivHouseholderQR<Matrix> qr(d.X);
    if (qr.rank() < q) fail(ErrorCode::RankDeficientDesign, "design matrix has rank " + std::to_string(qr.rank()) +
                                                               " < q=" + std::to_string(q));
    d.intercept_column = detail::find_intercept(d.X);
    return d;
}

/// Log-transforms responses and all non-intercept covariates. The area frame
/// must already carry population means of the log covariates: the mean of
/// logs cannot be recovered from original-scale means.
inline std::pair<Dataset, AreaFrame> log_transform_dataset(const Dataset& data, const AreaFrame& frame) {
    if (frame.scale != CovariateScale::Log)
        fail(ErrorCode::AreaScaleMismatch,
             "log-scale fit needs population means of log covariates (area frame is on the original scale)");
    if (data.log_scale) fail(ErrorCode::InvalidParameter, "dataset is already log-transformed");
    Dataset out = data;
    for (int u = 0; u < data.n(); ++u) {
        if (!(data.y[u] > 0)) fail(ErrorCode::NonPositiveValue, "response " + std::to_string(data.y[u]) + " <= 0");
        out.y[u] = std::log(data.y[u]);
        for (int k = 0; k < data.q(); ++k) {
            if (data.intercept_column && *data.intercept_column == k) continue;
            if (!(data.X(u, k) > 0))
                fail(ErrorCode::NonPositiveValue, "covariate " + std::to_string(data.X(u, k)) + " <= 0");
            out.X(u, k) = std::log(data.X(u, k));
        }
    }
    out.log_scale = true;
    return {std::move(out), frame};
}

/// Population means of log covariates, for building a log-scale AreaFrame
/// from a unit-level population listing. Rows of `x` are units, `area` their area index.
inline Matrix log_covariate_means(const Matrix& x, const std::vector<int>& area, int m,
                                  std::optional<int> intercept_column) {
    Matrix sums = Matrix::Zero(m, x.cols());
    std::vector<long long> counts(m, 0);
    for (int u = 0; u < x.rows(); ++u) {
        const int i = area[u];
        ++counts[i];
        for (int k = 0; k < x.cols(); ++k) {
            if (intercept_column && *intercept_column == k) {
                sums(i, k) += 1.0;
                continue;
            }
            if (!(x(u, k) > 0)) fail(ErrorCode::NonPositiveValue, "population covariate <= 0");
            sums(i, k) += std::log(x(u, k));
        }
    }
    for (int i = 0; i < m; ++i) {
        if (counts[i] == 0) fail(ErrorCode::AreaMismatch, "population has an empty area");
        sums.row(i) /= static_cast<double>(counts[i]);
    }
    return sums;
}

} // namespace hbsae
