#pragma once

// Monte Carlo study harness: finite populations under several unit-error
// regimes, simple random samples within areas, HB fits, and frequentist
// summaries of the area predictors against the realized area means.

#include "hbsae/domain.hpp"
#include "hbsae/engine.hpp"
#include "hbsae/inference.hpp"
#include "hbsae/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace hbsae {

struct ErrorGenerator {
    enum class Kind { Normal, Mixture, StudentT, Zero };

    Kind kind = Kind::Normal;
    double p_one = 1.0;     // probability of the N(0, sd_one^2) component
    double sd_one = 1.0;
    double mean_two = 0.0;
    double sd_two = 5.0;
    double df = 4.0;

    static ErrorGenerator normal(double sd = 1.0) { return {Kind::Normal, 1.0, sd}; }
    static ErrorGenerator mixture(double p_one, double mean_two, double sd_two) {
        return {Kind::Mixture, p_one, 1.0, mean_two, sd_two};
    }
    static ErrorGenerator student_t(double df) {
        ErrorGenerator g;
        g.kind = Kind::StudentT;
        g.df = df;
        return g;
    }
    static ErrorGenerator zero() {
        ErrorGenerator g;
        g.kind = Kind::Zero;
        return g;
    }

    void validate() const {
        if (kind == Kind::Mixture && !(p_one >= 0.0 && p_one <= 1.0))
            fail(ErrorCode::InvalidConfig, "mixture weight must lie in [0, 1]");
        if (!(sd_one >= 0.0) || !(sd_two >= 0.0)) fail(ErrorCode::InvalidConfig, "error SDs must be >= 0");
        if (!std::isfinite(mean_two)) fail(ErrorCode::InvalidConfig, "second-component mean must be finite");
        if (kind == Kind::StudentT && !(df > 0.0)) fail(ErrorCode::InvalidConfig, "t degrees of freedom must be > 0");
    }

    std::string_view kind_name() const {
        switch (kind) {
        case Kind::Normal: return "normal";
        case Kind::Mixture: return "mixture";
        case Kind::StudentT: return "t";
        case Kind::Zero: return "zero";
        }
        return "?";
    }

    /// Draws one error; sets `second` when it came from the second component.
    double draw(RngStream& rng, bool& second) const {
        second = false;
        switch (kind) {
        case Kind::Normal: return sd_one * rng.normal();
        case Kind::Zero: return 0.0;
        case Kind::StudentT: return draw_student_t(rng, df);
        case Kind::Mixture:
            if (rng.uniform() < p_one) return sd_one * rng.normal();
            second = true;
            return mean_two + sd_two * rng.normal();
        }
        return 0.0;
    }

    std::string label() const {
        auto num = [](double x) {
            std::string s = std::to_string(x);
            s.erase(s.find_last_not_of('0') + 1);
            if (!s.empty() && s.back() == '.') s.pop_back();
            return s;
        };
        switch (kind) {
        case Kind::Normal: return "N(0," + num(sd_one * sd_one) + ")";
        case Kind::Zero: return "zero";
        case Kind::StudentT: return "t(" + num(df) + ")";
        case Kind::Mixture:
            return num(std::round((1.0 - p_one) * 100.0)) + "% N(" + num(mean_two) + "," + num(sd_two) + "^2)";
        }
        return "?";
    }
};

struct ScenarioSpec {
    std::string name = "i";
    ErrorGenerator errors;
    int m = 20;
    int N = 100;  // units per area
    int n = 4;    // sampled units per area
    double beta0 = 1.0;
    double beta1 = 1.0;
    double area_sd = 1.0;
    int S = 50;
    std::uint64_t seed = 1;

    void validate() const {
        if (m < 3) fail(ErrorCode::InvalidConfig, "scenario needs m >= 3");
        if (N < 1 || n < 1) fail(ErrorCode::InvalidConfig, "scenario needs N, n >= 1");
        if (n > N) fail(ErrorCode::SampleTooLarge, "sample size exceeds area population size");
        if (S < 1) fail(ErrorCode::InvalidConfig, "scenario needs S >= 1");
        if (!(area_sd >= 0)) fail(ErrorCode::InvalidConfig, "area_sd must be >= 0");
        errors.validate();
    }
};

/// Scenarios (i)-(v). Desk scale is m=20, N=100, S=50; full scale is m=40, N=200, S=100.
inline ScenarioSpec named_scenario(const std::string& name, bool full_scale = false) {
    ScenarioSpec s;
    s.name = name;
    if (name == "i")
        s.errors = ErrorGenerator::normal(1.0);
    else if (name == "ii")
        s.errors = ErrorGenerator::mixture(0.90, 0.0, 5.0);
    else if (name == "iii")
        s.errors = ErrorGenerator::mixture(0.60, 0.0, 5.0);
    else if (name == "iv")
        s.errors = ErrorGenerator::student_t(4.0);
    else if (name == "v")
        s.errors = ErrorGenerator::mixture(0.97, 5.0, 5.0);
    else
        fail(ErrorCode::InvalidConfig, "unknown scenario '" + name + "' (expected i, ii, iii, iv or v)");
    if (full_scale) {
        s.m = 40;
        s.N = 200;
        s.S = 100;
    }
    return s;
}

// Stream lanes; fits use lanes 0..n_chains-1.
inline constexpr std::uint64_t kCovariateLane = 1'000'001;
inline constexpr std::uint64_t kSampleLane = 1'000'002;
inline constexpr std::uint64_t kPopulationLane = 1'000'003;

struct Population {
    std::vector<std::string> area_ids;
    std::vector<Vector> x;  // per area, N covariate values
    std::vector<Vector> y;
    std::vector<std::vector<std::uint8_t>> second_component;
    Vector v;
    Vector xbar;   // population covariate means
    Vector theta;  // beta0 + beta1 xbar + v
};

/// Covariates drawn once per scenario seed from N(1, 1) and shared by all replicates.
inline std::vector<Vector> scenario_covariates(const ScenarioSpec& s) {
    RngStream rng(s.seed, kCovariateLane, 0);
    std::vector<Vector> x(s.m, Vector(s.N));
    for (int i = 0; i < s.m; ++i)
        for (int j = 0; j < s.N; ++j) x[i][j] = 1.0 + rng.normal();
    return x;
}

inline Population generate_population(const ScenarioSpec& s, int replicate) {
    s.validate();
    Population p;
    p.x = scenario_covariates(s);
    RngStream rng(s.seed, kPopulationLane, static_cast<std::uint64_t>(replicate));
    p.v.resize(s.m);
    p.xbar.resize(s.m);
    p.theta.resize(s.m);
    for (int i = 0; i < s.m; ++i) {
        p.area_ids.push_back(std::to_string(i + 1));
        p.v[i] = s.area_sd * rng.normal();
    }
    for (int i = 0; i < s.m; ++i) {
        Vector y(s.N);
        std::vector<std::uint8_t> second(s.N);
        for (int j = 0; j < s.N; ++j) {
            bool two = false;
            const double e = s.errors.draw(rng, two);
            y[j] = s.beta0 + s.beta1 * p.x[i][j] + p.v[i] + e;
            second[j] = two;
        }
        p.xbar[i] = p.x[i].mean();
        p.theta[i] = s.beta0 + s.beta1 * p.xbar[i] + p.v[i];
        p.y.push_back(std::move(y));
        p.second_component.push_back(std::move(second));
    }
    return p;
}

struct SampledData {
    Dataset data;
    AreaFrame frame;
    std::vector<std::vector<int>> selected;  // per area, selected unit indices (sorted)
};

/// Simple random sample without replacement of n units per area. The model
/// has an intercept and the single covariate.
inline SampledData draw_sample(const Population& pop, int n, RngStream& rng) {
    const int m = static_cast<int>(pop.y.size());
    SampledData out;
    out.frame.ids = pop.area_ids;
    out.frame.N.resize(m);
    out.frame.xbar.resize(m, 2);
    std::vector<UnitRecord> records;
    for (int i = 0; i < m; ++i) {
        const int N = static_cast<int>(pop.y[i].size());
        if (n > N) fail(ErrorCode::SampleTooLarge, "sample size " + std::to_string(n) + " exceeds N=" + std::to_string(N));
        std::vector<int> idx(N);
        std::iota(idx.begin(), idx.end(), 0);
        for (int k = 0; k < n; ++k) {
            const int pick = k + static_cast<int>(std::floor(rng.uniform() * (N - k)));
            std::swap(idx[k], idx[std::min(pick, N - 1)]);
        }
        std::vector<int> chosen(idx.begin(), idx.begin() + n);
        std::sort(chosen.begin(), chosen.end());
        for (int j : chosen) {
            Vector x(2);
            x << 1.0, pop.x[i][j];
            records.push_back({pop.area_ids[i], pop.y[i][j], std::move(x)});
        }
        out.selected.push_back(std::move(chosen));
        out.frame.N[i] = N;
        out.frame.xbar(i, 0) = 1.0;
        out.frame.xbar(i, 1) = pop.xbar[i];
    }
    out.data = validate_dataset(records, out.frame);
    return out;
}

struct AreaMetrics {
    double bias = 0.0;            // eB
    double mse = 0.0;             // eM
    double posterior_var = 0.0;   // mean of V over replicates
    double relative_bias_var = 0.0;  // RE_V
    double noncoverage90 = 0.0;
    double noncoverage95 = 0.0;
    double length90 = 0.0;
    double length95 = 0.0;
};

struct MethodMetrics {
    Variant method = Variant::GDM;
    std::vector<AreaMetrics> areas;
    AreaMetrics mean;  // simple average across areas
};

struct MetricsTable {
    std::string scenario;
    std::string error_label;
    int S = 0;
    std::vector<std::string> area_ids;
    std::vector<MethodMetrics> methods;

    const MethodMetrics& method(Variant v) const {
        for (const auto& mm : methods)
            if (mm.method == v) return mm;
        fail(ErrorCode::InvalidParameter, "method " + std::string(to_string(v)) + " not in study");
    }
};

struct StudyOptions {
    ChainConfig chain{4000, 2000, 1, 1, 0};
    int workers = 0;  // 0: hardware concurrency
};

namespace detail {

struct ReplicateOutcome {
    Vector estimate, variance, length90, length95;
    std::vector<std::uint8_t> miss90, miss95;
};

} // namespace detail

/// Fits every method to every replicate and aggregates the per-area metrics.
/// The chain seed is replaced by the scenario seed; replicate r uses stream
/// (seed, chain, r) so any replicate can be rerun in isolation.
inline MetricsTable run_study(const ScenarioSpec& scenario, const std::vector<Variant>& methods,
                              const StudyOptions& options = {}) {
    scenario.validate();
    if (methods.empty()) fail(ErrorCode::InvalidConfig, "no methods requested");
    const int S = scenario.S, M = static_cast<int>(methods.size()), m = scenario.m;
    std::vector<Vector> truth(S);
    std::vector<std::vector<detail::ReplicateOutcome>> outcomes(S, std::vector<detail::ReplicateOutcome>(M));
    std::vector<std::string> errors(S);

    const double levels[] = {0.90, 0.95};
    auto run_replicate = [&](int r) {
        const Population pop = generate_population(scenario, r);
        RngStream sample_rng(scenario.seed, kSampleLane, static_cast<std::uint64_t>(r));
        const SampledData sample = draw_sample(pop, scenario.n, sample_rng);
        truth[r] = pop.theta;
        for (int k = 0; k < M; ++k) {
            ModelSpec spec;
            spec.variant = methods[k];
            spec.chain = options.chain;
            spec.chain.seed = scenario.seed;
            const FitResult f = fit(sample.data, sample.frame, spec, static_cast<std::uint64_t>(r), false);
            const auto areas = summarize_theta(f.draws, levels);
            detail::ReplicateOutcome& o = outcomes[r][k];
            o.estimate.resize(m);
            o.variance.resize(m);
            o.length90.resize(m);
            o.length95.resize(m);
            o.miss90.resize(m);
            o.miss95.resize(m);
            for (int i = 0; i < m; ++i) {
                const auto& a = areas[i];
                o.estimate[i] = a.mean;
                o.variance[i] = a.sd * a.sd;
                o.length90[i] = a.interval(0.90).length();
                o.length95[i] = a.interval(0.95).length();
                o.miss90[i] = !a.interval(0.90).contains(pop.theta[i]);
                o.miss95[i] = !a.interval(0.95).contains(pop.theta[i]);
            }
        }
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = std::max(1, std::min(S, options.workers > 0 ? options.workers : static_cast<int>(hw)));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int r = next++; r < S; r = next++) {
            try {
                run_replicate(r);
            } catch (const std::exception& e) {
                errors[r] = e.what();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (int r = 0; r < S; ++r)
        if (!errors[r].empty())
            fail(ErrorCode::StudyFailure, "replicate " + std::to_string(r) + " failed: " + errors[r]);

    MetricsTable table;
    table.scenario = scenario.name;
    table.error_label = scenario.errors.label();
    table.S = S;
    for (int i = 0; i < m; ++i) table.area_ids.push_back(std::to_string(i + 1));
    for (int k = 0; k < M; ++k) {
        MethodMetrics mm;
        mm.method = methods[k];
        mm.areas.resize(m);
        for (int i = 0; i < m; ++i) {
            AreaMetrics& a = mm.areas[i];
            for (int r = 0; r < S; ++r) {
                const auto& o = outcomes[r][k];
                const double dev = o.estimate[i] - truth[r][i];
                a.bias += dev;
                a.mse += dev * dev;
                a.posterior_var += o.variance[i];
                a.noncoverage90 += o.miss90[i];
                a.noncoverage95 += o.miss95[i];
                a.length90 += o.length90[i];
                a.length95 += o.length95[i];
            }
            a.bias /= S;
            a.mse /= S;
            a.posterior_var /= S;
            a.noncoverage90 /= S;
            a.noncoverage95 /= S;
            a.length90 /= S;
            a.length95 /= S;
            a.relative_bias_var = (a.posterior_var - a.mse) / a.mse;
        }
        auto avg = [&](double AreaMetrics::*field) {
            double s = 0.0;
            for (const auto& a : mm.areas) s += a.*field;
            return s / m;
        };
        mm.mean.bias = avg(&AreaMetrics::bias);
        mm.mean.mse = avg(&AreaMetrics::mse);
        mm.mean.posterior_var = avg(&AreaMetrics::posterior_var);
        mm.mean.relative_bias_var = avg(&AreaMetrics::relative_bias_var);
        mm.mean.noncoverage90 = avg(&AreaMetrics::noncoverage90);
        mm.mean.noncoverage95 = avg(&AreaMetrics::noncoverage95);
        mm.mean.length90 = avg(&AreaMetrics::length90);
        mm.mean.length95 = avg(&AreaMetrics::length95);
        table.methods.push_back(std::move(mm));
    }
    return table;
}

} // namespace hbsae
