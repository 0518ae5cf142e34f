#pragma once

// Posterior summaries of a fitted chain: small-area predictors, credible
// intervals, parameter tables, membership probabilities and standardized
// residuals.
//
// Quantiles use linear interpolation between order statistics (type 7)
// everywhere: medians, IQRs and equal-tail intervals. Standard deviations
// are the plain moments of the sample (divisor K).

#include "hbsae/conditionals.hpp"
#include "hbsae/domain.hpp"
#include "hbsae/engine.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hbsae {

inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) fail(ErrorCode::EmptyData, "quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidParameter, "quantile level outside [0, 1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> x, double p) {
    std::sort(x.begin(), x.end());
    return quantile_sorted(x, p);
}

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

inline Moments moments(std::span<const double> x) {
    if (x.empty()) fail(ErrorCode::EmptyData, "moments of an empty sample");
    double mu = 0.0;
    for (double xi : x) mu += xi;
    mu /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double xi : x) ss += (xi - mu) * (xi - mu);
    return {mu, ss / static_cast<double>(x.size())};
}

struct Interval {
    double level = 0.0;
    double lower = 0.0;
    double upper = 0.0;

    double length() const { return upper - lower; }
    bool contains(double x) const { return x >= lower && x <= upper; }
};

/// Equal-tail interval from a sorted sample.
inline Interval equal_tail_interval(std::span<const double> sorted, double level) {
    if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::InvalidParameter, "interval level must lie in (0, 1)");
    const double tail = 0.5 * (1.0 - level);
    return {level, quantile_sorted(sorted, tail), quantile_sorted(sorted, 1.0 - tail)};
}

struct SampleSummary {
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double iqr = 0.0;
    std::vector<Interval> intervals;
};

inline SampleSummary summarize_sample(std::vector<double> x, std::span<const double> levels = {}) {
    const Moments mo = moments(x);
    std::sort(x.begin(), x.end());
    SampleSummary s;
    s.mean = mo.mean;
    s.sd = std::sqrt(mo.variance);
    s.median = quantile_sorted(x, 0.5);
    s.iqr = quantile_sorted(x, 0.75) - quantile_sorted(x, 0.25);
    for (double level : levels) s.intervals.push_back(equal_tail_interval(x, level));
    return s;
}

struct AreaSummary {
    std::string area_id;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double point_estimate = 0.0;  // mean, or median for log-scale fits
    std::vector<Interval> intervals;

    const Interval& interval(double level) const {
        for (const auto& iv : intervals)
            if (std::abs(iv.level - level) < 1e-12) return iv;
        fail(ErrorCode::InvalidParameter, "no interval at level " + std::to_string(level));
    }
};

inline std::vector<AreaSummary> summarize_theta(const ChainDraws& draws, std::span<const double> levels) {
    const Matrix& th = draws.theta_reported();
    if (th.rows() == 0) fail(ErrorCode::EmptyData, "no retained draws");
    std::vector<AreaSummary> out;
    std::vector<double> col(th.rows());
    for (Eigen::Index i = 0; i < th.cols(); ++i) {
        for (Eigen::Index r = 0; r < th.rows(); ++r) col[r] = th(r, i);
        SampleSummary s = summarize_sample(col, levels);
        AreaSummary a;
        a.area_id = draws.area_ids[i];
        a.mean = s.mean;
        a.sd = s.sd;
        a.median = s.median;
        a.point_estimate = draws.log_scale ? s.median : s.mean;
        a.intervals = std::move(s.intervals);
        out.push_back(std::move(a));
    }
    return out;
}

struct ParamSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double iqr = 0.0;
};

/// beta, p_e, sigma_v^2, sigma1^2 and sigma2^2 = eta sigma1^2 (per draw).
/// DG reports beta and the two variances only.
inline std::vector<ParamSummary> summarize_params(const ChainDraws& draws) {
    if (draws.rows() == 0) fail(ErrorCode::EmptyData, "no retained draws");
    const DrawLayout& L = draws.layout;
    const Eigen::Index K = draws.rows();
    std::vector<ParamSummary> out;
    auto add = [&](const std::string& name, auto&& value_of_row) {
        std::vector<double> x(K);
        for (Eigen::Index r = 0; r < K; ++r) x[r] = value_of_row(r);
        const SampleSummary s = summarize_sample(std::move(x));
        out.push_back({name, s.mean, s.sd, s.median, s.iqr});
    };
    for (int k = 0; k < L.q; ++k) add("beta_" + std::to_string(k), [&](Eigen::Index r) { return draws.params(r, L.beta(k)); });
    if (is_mixture(draws.variant)) add("p_e", [&](Eigen::Index r) { return draws.params(r, L.p_e()); });
    add("sigma_v_sq", [&](Eigen::Index r) { return draws.params(r, L.sigma_v_sq()); });
    add("sigma1_sq", [&](Eigen::Index r) { return draws.params(r, L.sigma1_sq()); });
    if (is_mixture(draws.variant)) {
        add("sigma2_sq", [&](Eigen::Index r) { return draws.params(r, L.eta()) * draws.params(r, L.sigma1_sq()); });
        add("eta", [&](Eigen::Index r) { return draws.params(r, L.eta()); });
    }
    return out;
}

struct Membership {
    std::vector<double> rao_blackwell;  // mean over draws of 1 - p*_ij
    std::vector<double> raw;            // fraction of draws with z_ij = 0
};

/// Posterior probability that each sampled unit comes from component two.
inline Membership membership_probabilities(const ChainDraws& draws, const Dataset& data) {
    if (!is_mixture(draws.variant)) fail(ErrorCode::VariantMismatch, "DG has no mixture components");
    if (static_cast<int>(draws.z_two_count.size()) != data.n() || static_cast<int>(draws.area_ids.size()) != data.m())
        fail(ErrorCode::AreaMismatch, "draws do not belong to this dataset");
    const DrawLayout& L = draws.layout;
    const Eigen::Index K = draws.rows();
    Membership out;
    out.rao_blackwell.assign(data.n(), 0.0);
    out.raw.resize(data.n());
    for (Eigen::Index r = 0; r < K; ++r) {
        const auto row = draws.params.row(r);
        const Vector beta = row.segment(0, L.q).transpose();
        const double s1 = row[L.sigma1_sq()], eta = row[L.eta()], pe = row[L.p_e()];
        for (int u = 0; u < data.n(); ++u) {
            const double res = data.y[u] - data.X.row(u).dot(beta) - row[L.v(data.area_of_unit[u])];
            out.rao_blackwell[u] += 1.0 - indicator_probability(res, s1, eta, pe);
        }
    }
    for (int u = 0; u < data.n(); ++u) {
        out.rao_blackwell[u] /= static_cast<double>(K);
        out.raw[u] = static_cast<double>(draws.z_two_count[u]) / static_cast<double>(K);
    }
    return out;
}

/// E(y_ij - theta_i | y) / sd(y_ij - theta_i | y), on the model scale.
inline std::vector<double> standardized_residuals(const ChainDraws& draws, const Dataset& data) {
    if (draws.theta.cols() != data.m()) fail(ErrorCode::AreaMismatch, "draws do not belong to this dataset");
    const Eigen::Index K = draws.rows();
    if (K == 0) fail(ErrorCode::EmptyData, "no retained draws");
    std::vector<double> out(data.n());
    std::vector<double> diff(K);
    for (int u = 0; u < data.n(); ++u) {
        const int i = data.area_of_unit[u];
        for (Eigen::Index r = 0; r < K; ++r) diff[r] = data.y[u] - draws.theta(r, i);
        const Moments mo = moments(diff);
        if (!(mo.variance > 0))
            fail(ErrorCode::ZeroPosteriorVariance, "posterior variance of y - theta is zero for unit " + std::to_string(u));
        out[u] = mo.mean / std::sqrt(mo.variance);
    }
    return out;
}

struct UnitSummary {
    std::string area_id;
    int unit_in_area = 0;
    int source_row = 0;
    double y = 0.0;
    std::optional<double> membership;      // Rao-Blackwellized
    std::optional<double> membership_raw;  // average of sampled indicators
    double standardized_residual = 0.0;
};

struct Provenance {
    Variant variant = Variant::GDM;
    ChainConfig config;
    std::uint64_t replicate = 0;
    bool log_scale = false;
};

struct PosteriorReport {
    Provenance provenance;
    std::vector<double> levels;
    std::vector<AreaSummary> areas;
    std::vector<ParamSummary> params;
    std::vector<UnitSummary> units;
    std::vector<ParameterDiagnostic> diagnostics;
    std::uint64_t clamps = 0;

    bool has_membership() const { return is_mixture(provenance.variant); }
};

inline PosteriorReport make_report(const FitResult& fit, const Dataset& data, std::vector<double> levels) {
    const ChainDraws& d = fit.draws;
    PosteriorReport rep;
    rep.provenance = {d.variant, d.config, d.replicate, d.log_scale};
    rep.levels = levels;
    rep.areas = summarize_theta(d, levels);
    rep.params = summarize_params(d);
    rep.diagnostics = fit.diagnostics;
    rep.clamps = fit.clamps;
    const std::vector<double> resid = standardized_residuals(d, data);
    std::optional<Membership> mem;
    if (is_mixture(d.variant)) mem = membership_probabilities(d, data);
    for (int u = 0; u < data.n(); ++u) {
        UnitSummary s;
        s.area_id = data.area_ids[data.area_of_unit[u]];
        s.unit_in_area = data.unit_in_area[u];
        s.source_row = data.source_row[u];
        s.y = d.log_scale ? std::exp(data.y[u]) : data.y[u];
        if (mem) {
            s.membership = mem->rao_blackwell[u];
            s.membership_raw = mem->raw[u];
        }
        s.standardized_residual = resid[u];
        rep.units.push_back(std::move(s));
    }
    return rep;
}

/// Per-area ratio of credible-interval lengths, a over b.
inline std::vector<double> credible_interval_ratios(const PosteriorReport& a, const PosteriorReport& b, double level) {
    if (a.areas.size() != b.areas.size()) fail(ErrorCode::AreaMismatch, "reports cover different area sets");
    std::vector<double> out;
    for (std::size_t i = 0; i < a.areas.size(); ++i) {
        if (a.areas[i].area_id != b.areas[i].area_id)
            fail(ErrorCode::AreaMismatch, "area '" + a.areas[i].area_id + "' does not match '" + b.areas[i].area_id + "'");
        out.push_back(a.areas[i].interval(level).length() / b.areas[i].interval(level).length());
    }
    return out;
}

} // namespace hbsae
