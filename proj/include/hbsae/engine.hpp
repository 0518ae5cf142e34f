#pragma once

// Gibbs sampler driver: initialization, systematic-scan updates,
// burn-in/thinning, multi-chain orchestration and diagnostics.

#include "hbsae/conditionals.hpp"
#include "hbsae/diagnostics.hpp"
#include "hbsae/domain.hpp"
#include "hbsae/random.hpp"

#include <chrono>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace hbsae {

/// Column layout of the retained parameter matrix.
struct DrawLayout {
    int q = 0;
    int m = 0;

    int beta(int k) const { return k; }
    int v(int i) const { return q + i; }
    int sigma1_sq() const { return q + m; }
    int eta() const { return q + m + 1; }
    int sigma_v_sq() const { return q + m + 2; }
    int p_e() const { return q + m + 3; }
    int columns() const { return q + m + 4; }
};

/// Retained posterior sample. Rows are draws ordered by (chain, draw).
struct ChainDraws {
    Variant variant = Variant::GDM;
    ChainConfig config;
    std::uint64_t replicate = 0;
    bool log_scale = false;
    std::vector<std::string> area_ids;
    DrawLayout layout;
    Matrix params;          // draws x layout.columns()
    Matrix theta;           // draws x m, model scale: xbar' beta + v
    Matrix theta_original;  // exp(theta) for log-scale fits, empty otherwise
    std::vector<long long> z_two_count;  // per unit: retained draws with z = 0
    std::vector<int> chain_rows;         // retained draws contributed by each chain

    Eigen::Index rows() const { return params.rows(); }

    /// theta on the reporting scale (original scale for log fits).
    const Matrix& theta_reported() const { return log_scale ? theta_original : theta; }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> names;
        for (int k = 0; k < layout.q; ++k) names.push_back("beta_" + std::to_string(k));
        for (const auto& id : area_ids) names.push_back("v_" + id);
        names.insert(names.end(), {"sigma1_sq", "eta", "sigma_v_sq", "p_e"});
        return names;
    }
};

struct ParameterDiagnostic {
    std::string name;
    double ess = 0.0;
    double rhat = 0.0;
};

struct FitResult {
    ChainDraws draws;
    std::vector<ParameterDiagnostic> diagnostics;
    double seconds = 0.0;
    std::uint64_t clamps = 0;
};

namespace detail {

inline void check_alignment(const Dataset& data, const AreaFrame& frame) {
    if (frame.ids != data.area_ids)
        fail(ErrorCode::AreaMismatch, "area frame is not aligned with the dataset's areas");
    if (frame.xbar.cols() != data.q())
        fail(ErrorCode::AreaMismatch, "area frame covariate dimension differs from the dataset");
    if (data.log_scale && frame.scale != CovariateScale::Log)
        fail(ErrorCode::AreaScaleMismatch, "log-scale dataset needs a log-scale area frame");
}

} // namespace detail

/// Starting state: OLS coefficients, halved area mean residuals, and fixed
/// starting values for the mixture parameters. Chains after the first get
/// N(0, 0.1^2) jitter on beta and on the log variances.
inline ChainState initialize(const Dataset& data, const ModelSpec& spec, RngStream& rng, int chain_index = 0) {
    const int n = data.n(), m = data.m(), q = data.q();
    ChainState s;
    s.beta = data.X.colPivHouseholderQr().solve(data.y);
    const Vector resid = data.y - data.X * s.beta;

    s.v = Vector::Zero(m);
    Vector area_means = Vector::Zero(m);
    int sampled = 0;
    for (int i = 0; i < m; ++i) {
        const int ni = data.n_per_area[i];
        if (ni == 0) continue;
        area_means[i] = resid.segment(data.area_start[i], ni).mean();
        s.v[i] = 0.5 * area_means[i];
        ++sampled;
    }
    const double resid_var = resid.squaredNorm() / std::max(1, n - q);
    const double y_scale = 1.0 + (data.y.array() - data.y.mean()).square().mean();
    s.sigma1_sq = std::max(resid_var, 1e-8 * y_scale);

    double mean_of_means = 0.0;
    for (int i = 0; i < m; ++i)
        if (data.n_per_area[i] > 0) mean_of_means += area_means[i];
    mean_of_means /= std::max(1, sampled);
    double var_of_means = 0.0;
    for (int i = 0; i < m; ++i)
        if (data.n_per_area[i] > 0) var_of_means += (area_means[i] - mean_of_means) * (area_means[i] - mean_of_means);
    var_of_means /= std::max(1, sampled - 1);
    s.sigma_v_sq = std::max(var_of_means, 0.1 * s.sigma1_sq);

    s.z.assign(n, 1);
    switch (spec.variant) {
    case Variant::DG:
        s.eta = 1.0;
        s.p_e = 1.0;
        break;
    case Variant::CDM:
        s.eta = 4.0;
        s.p_e = 0.9;
        break;
    case Variant::GDM:
        s.eta = 4.0;
        s.p_e = 0.75;
        break;
    }
    if (is_mixture(spec.variant) && spec.frozen.eta_value) s.eta = *spec.frozen.eta_value;

    if (chain_index > 0) {
        for (int k = 0; k < q; ++k) s.beta[k] += 0.1 * rng.normal();
        s.sigma1_sq *= std::exp(0.1 * rng.normal());
        s.sigma_v_sq *= std::exp(0.1 * rng.normal());
        if (is_mixture(spec.variant) && !spec.frozen.eta && !spec.frozen.eta_value) {
            s.eta *= std::exp(0.1 * rng.normal());
            if (spec.variant == Variant::CDM && s.eta <= 1.0) s.eta = 1.0 / s.eta;
        }
    }
    check_state(s, spec.variant, "initialization");
    return s;
}

/// One systematic scan: beta, v, z, p_e, sigma_v^2, sigma1^2, eta.
inline void gibbs_sweep(const Dataset& data, ChainState& s, const ModelSpec& spec, RngStream& rng,
                        SamplerCounters& counters) {
    const Variant variant = spec.variant;
    ConditionalContext ctx(data, s, variant, &counters);
    s.beta = draw_beta_coeff(ctx, rng);
    check_state(s, variant, "beta update");
    s.v = draw_area_effects(ctx, rng);
    check_state(s, variant, "area-effect update");
    if (is_mixture(variant)) {
        if (!spec.frozen.z) s.z = draw_indicators(ctx, rng);
        if (!spec.frozen.p_e) {
            s.p_e = draw_pe(ctx, rng, variant);
            check_state(s, variant, "p_e update");
        }
    }
    s.sigma_v_sq = draw_sigma_v(ctx, rng);
    check_state(s, variant, "sigma_v^2 update");
    s.sigma1_sq = draw_sigma1(ctx, rng, variant);
    check_state(s, variant, "sigma1^2 update");
    if (is_mixture(variant) && !spec.frozen.eta) {
        s.eta = draw_eta(ctx, rng, variant);
        check_state(s, variant, "eta update");
    }
}

inline ChainDraws run_chain(const Dataset& data, const AreaFrame& frame, const ModelSpec& spec, int chain_index,
                            std::uint64_t replicate = 0, SamplerCounters* counters = nullptr) {
    spec.chain.validate();
    detail::check_alignment(data, frame);

    const int m = data.m(), q = data.q(), n = data.n();
    RngStream rng(spec.chain.seed, static_cast<std::uint64_t>(chain_index), replicate);
    SamplerCounters local;
    SamplerCounters& ctr = counters ? *counters : local;

    ChainDraws out;
    out.variant = spec.variant;
    out.config = spec.chain;
    out.replicate = replicate;
    out.log_scale = data.log_scale;
    out.area_ids = data.area_ids;
    out.layout = {q, m};
    out.params.resize(spec.chain.n_draws, out.layout.columns());
    out.theta.resize(spec.chain.n_draws, m);
    if (data.log_scale) out.theta_original.resize(spec.chain.n_draws, m);
    out.z_two_count.assign(n, 0);
    out.chain_rows = {spec.chain.n_draws};

    ChainState s = initialize(data, spec, rng, chain_index);
    const long long total =
        static_cast<long long>(spec.chain.burn_in) + static_cast<long long>(spec.chain.n_draws) * spec.chain.thin;
    int row = 0;
    for (long long it = 0; it < total; ++it) {
        try {
            gibbs_sweep(data, s, spec, rng, ctr);
        } catch (const Error& e) {
            fail(e.code(), std::string(e.what()) + " (chain " + std::to_string(chain_index) + ", iteration " +
                               std::to_string(it) + ")");
        }
        if (it < spec.chain.burn_in || (it - spec.chain.burn_in + 1) % spec.chain.thin != 0) continue;

        const DrawLayout& L = out.layout;
        for (int k = 0; k < q; ++k) out.params(row, L.beta(k)) = s.beta[k];
        for (int i = 0; i < m; ++i) out.params(row, L.v(i)) = s.v[i];
        out.params(row, L.sigma1_sq()) = s.sigma1_sq;
        out.params(row, L.eta()) = s.eta;
        out.params(row, L.sigma_v_sq()) = s.sigma_v_sq;
        out.params(row, L.p_e()) = s.p_e;
        for (int i = 0; i < m; ++i) {
            const double th = frame.xbar.row(i).dot(s.beta) + s.v[i];
            out.theta(row, i) = th;
            if (data.log_scale) out.theta_original(row, i) = std::exp(th);
        }
        for (int u = 0; u < n; ++u) out.z_two_count[u] += s.z[u] == 0;
        ++row;
    }
    return out;
}

/// Names of the parameters tracked by diagnostics, with their draw columns.
inline std::vector<std::pair<std::string, int>> diagnostic_columns(const ChainDraws& d) {
    std::vector<std::pair<std::string, int>> cols;
    const auto names = d.parameter_names();
    const DrawLayout& L = d.layout;
    for (int c = 0; c < L.columns(); ++c) {
        if (!is_mixture(d.variant) && (c == L.eta() || c == L.p_e())) continue;
        cols.emplace_back(names[c], c);
    }
    return cols;
}

inline std::vector<ParameterDiagnostic> compute_diagnostics(const ChainDraws& d) {
    std::vector<ParameterDiagnostic> out;
    std::vector<double> column(d.rows());
    for (const auto& [name, c] : diagnostic_columns(d)) {
        for (Eigen::Index r = 0; r < d.rows(); ++r) column[r] = d.params(r, c);
        std::vector<std::span<const double>> chains;
        std::size_t offset = 0;
        for (int len : d.chain_rows) {
            chains.emplace_back(column.data() + offset, static_cast<std::size_t>(len));
            offset += len;
        }
        out.push_back({name, effective_sample_size(chains), split_rhat(chains)});
    }
    return out;
}

inline ChainDraws merge_chains(std::vector<ChainDraws>& parts) {
    ChainDraws out = parts.front();
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    out.params.resize(rows, out.layout.columns());
    out.theta.resize(rows, out.layout.m);
    if (out.log_scale) out.theta_original.resize(rows, out.layout.m);
    out.chain_rows.clear();
    std::fill(out.z_two_count.begin(), out.z_two_count.end(), 0);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.params.middleRows(at, p.rows()) = p.params;
        out.theta.middleRows(at, p.rows()) = p.theta;
        if (out.log_scale) out.theta_original.middleRows(at, p.rows()) = p.theta_original;
        for (std::size_t u = 0; u < out.z_two_count.size(); ++u) out.z_two_count[u] += p.z_two_count[u];
        out.chain_rows.push_back(static_cast<int>(p.rows()));
        at += p.rows();
    }
    return out;
}

/// Runs all chains concurrently and merges them in chain order, so the
/// result does not depend on scheduling.
inline FitResult fit(const Dataset& data, const AreaFrame& frame, const ModelSpec& spec, std::uint64_t replicate = 0,
                     bool parallel = true) {
    spec.chain.validate();
    detail::check_alignment(data, frame);
    const auto start = std::chrono::steady_clock::now();
    const int C = spec.chain.n_chains;
    std::vector<ChainDraws> parts(C);
    std::vector<SamplerCounters> counters(C);
    std::vector<std::exception_ptr> errors(C);

    auto work = [&](int c) {
        try {
            parts[c] = run_chain(data, frame, spec, c, replicate, &counters[c]);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    if (parallel && C > 1) {
        std::vector<std::thread> pool;
        for (int c = 0; c < C; ++c) pool.emplace_back(work, c);
        for (auto& t : pool) t.join();
    } else {
        for (int c = 0; c < C; ++c) work(c);
    }

    std::string message;
    int failures = 0;
    for (int c = 0; c < C; ++c) {
        if (!errors[c]) continue;
        try {
            std::rethrow_exception(errors[c]);
        } catch (const Error& e) {
            message += (failures ? "; " : "") + std::string("chain ") + std::to_string(c) + ": " + e.what();
        } catch (const std::exception& e) {
            message += (failures ? "; " : "") + std::string("chain ") + std::to_string(c) + ": " + e.what();
        }
        ++failures;
    }
    if (failures == 1)
        for (int c = 0; c < C; ++c)
            if (errors[c]) std::rethrow_exception(errors[c]);
    if (failures > 1) fail(ErrorCode::ChainFailure, message);

    FitResult result;
    result.draws = merge_chains(parts);
    result.diagnostics = compute_diagnostics(result.draws);
    for (const auto& ctr : counters) result.clamps += ctr.clamps;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

} // namespace hbsae
