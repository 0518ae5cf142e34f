#pragma once

// Independent oracles shared by the unit tests and the acceptance driver:
// the model's joint log density written from the likelihood and priors
// (not from the conditionals), KS statistics, quadrature CDFs and small
// synthetic datasets.

#include "hbsae/hbsae.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace hbsae::testing {

inline double log_normal_pdf(double x, double mean, double var) {
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - (x - mean) * (x - mean) / (2.0 * var);
}

/// Log joint density of (beta, v, z, p_e, sigma_v^2, sigma1^2, eta) given y,
/// up to a constant, in the (sigma1^2, eta) coordinates the sampler uses.
///   DG : prior 1/sigma_e^2, z = 1.
///   CDM: prior 1{s1 < s2} / s2^2 on (s1, s2); p_e ~ U(0, 1).
///   GDM: prior 1 / (s1 + s2)^2 on (s1, s2); p_e ~ U(1/2, 1).
/// The (s1, s2) -> (s1, eta) Jacobian is s1.
inline double log_joint(const Dataset& d, const ChainState& s, Variant variant) {
    const double ninf = -std::numeric_limits<double>::infinity();
    if (!(s.sigma1_sq > 0) || !(s.sigma_v_sq > 0)) return ninf;
    double lp = 0.0;
    for (int u = 0; u < d.n(); ++u) {
        const double mu = d.X.row(u).dot(s.beta) + s.v[d.area_of_unit[u]];
        if (variant == Variant::DG) {
            lp += log_normal_pdf(d.y[u], mu, s.sigma1_sq);
            continue;
        }
        const bool one = s.z[u] != 0;
        const double var = one ? s.sigma1_sq : s.eta * s.sigma1_sq;
        lp += log_normal_pdf(d.y[u], mu, var);
        lp += one ? std::log(s.p_e) : std::log1p(-s.p_e);
    }
    for (int i = 0; i < d.m(); ++i) lp += log_normal_pdf(s.v[i], 0.0, s.sigma_v_sq);

    const double s1 = s.sigma1_sq;
    switch (variant) {
    case Variant::DG:
        lp += -std::log(s1);
        break;
    case Variant::CDM: {
        if (!(s.eta > 1.0) || !(s.p_e > 0.0 && s.p_e < 1.0)) return ninf;
        const double s2 = s.eta * s1;
        lp += -2.0 * std::log(s2) + std::log(s1);
        break;
    }
    case Variant::GDM: {
        if (!(s.eta > 0.0) || !(s.p_e > 0.5 && s.p_e < 1.0)) return ninf;
        const double s2 = s.eta * s1;
        lp += -2.0 * std::log(s1 + s2) + std::log(s1);
        break;
    }
    }
    return lp;
}

/// Log density of X = 1/T when T ~ Gamma(shape, rate), up to a constant.
inline double log_inverse_gamma_kernel(double x, const GammaConditional& g) {
    const double t = 1.0 / x;
    return (g.shape - 1.0) * std::log(t) - g.rate * t - 2.0 * std::log(x);
}

inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double F = cdf(x[i]);
        d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
    }
    return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double t = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= t) ++i;
        while (j < b.size() && b[j] <= t) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

/// Asymptotic two-sample KS critical value at alpha = 0.01.
inline double ks_two_sample_critical(std::size_t na, std::size_t nb) {
    const double a = static_cast<double>(na), b = static_cast<double>(nb);
    return 1.628 * std::sqrt((a + b) / (a * b));
}

/// Normalized CDF of an unnormalized log density on [lo, hi], tabulated on a
/// grid with Gauss-Kronrod on every cell and refined inside a cell on demand.
class QuadratureCdf {
public:
    QuadratureCdf(std::function<double(double)> log_density, double lo, double hi, int cells = 4000)
        : f_(std::move(log_density)), lo_(lo), h_((hi - lo) / cells), cum_(cells + 1, 0.0) {
        for (int k = 0; k < cells; ++k) cum_[k + 1] = cum_[k] + integrate(lo_ + k * h_, lo_ + (k + 1) * h_);
    }

    double operator()(double x) const {
        if (x <= lo_) return 0.0;
        const int cells = static_cast<int>(cum_.size()) - 1;
        const int k = static_cast<int>(std::floor((x - lo_) / h_));
        if (k >= cells) return 1.0;
        return (cum_[k] + integrate(lo_ + k * h_, x)) / cum_.back();
    }

    double mean() const {
        double num = 0.0;
        const int cells = static_cast<int>(cum_.size()) - 1;
        for (int k = 0; k < cells; ++k)
            num += boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
                [&](double t) { return t * std::exp(f_(t)); }, lo_ + k * h_, lo_ + (k + 1) * h_, 0);
        return num / cum_.back();
    }

private:
    double integrate(double a, double b) const {
        if (b <= a) return 0.0;
        return boost::math::quadrature::gauss_kronrod<double, 21>::integrate([&](double t) { return std::exp(f_(t)); },
                                                                             a, b, 0);
    }

    std::function<double(double)> f_;
    double lo_, h_;
    std::vector<double> cum_;
};

// Dataset assembled directly, bypassing validation, for tiny hand cases.
inline Dataset raw_dataset(const std::vector<double>& y, const Matrix& X, const std::vector<int>& area, int m) {
    Dataset d;
    for (int i = 0; i < m; ++i) d.area_ids.push_back("a" + std::to_string(i));
    d.n_per_area.assign(m, 0);
    for (int a : area) ++d.n_per_area[a];
    d.area_start.assign(m + 1, 0);
    for (int i = 0; i < m; ++i) d.area_start[i + 1] = d.area_start[i] + d.n_per_area[i];
    d.y = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
    d.X = X;
    d.area_of_unit = area;
    for (std::size_t u = 0; u < area.size(); ++u) {
        d.unit_in_area.push_back(static_cast<int>(u) - d.area_start[area[u]]);
        d.source_row.push_back(static_cast<int>(u));
    }
    return d;
}

/// Balanced synthetic dataset: m areas, k units each, an intercept plus
/// q - 1 covariates, y from the NER model with the given variances.
inline std::pair<Dataset, AreaFrame> synthetic(int m, int k, int q, std::uint64_t seed, double sigma_e = 1.0,
                                               double sigma_v = 1.0) {
    RngStream rng(seed, 777, 0);
    AreaFrame f;
    f.xbar.resize(m, q);
    std::vector<UnitRecord> recs;
    for (int i = 0; i < m; ++i) {
        f.ids.push_back("a" + std::to_string(i));
        f.N.push_back(10 * k);
        const double v = sigma_v * rng.normal();
        f.xbar(i, 0) = 1.0;
        for (int c = 1; c < q; ++c) f.xbar(i, c) = 1.0 + rng.normal();
        for (int j = 0; j < k; ++j) {
            UnitRecord r;
            r.area_id = f.ids.back();
            r.x.resize(q);
            r.x[0] = 1.0;
            double mu = 1.0 + v;
            for (int c = 1; c < q; ++c) {
                r.x[c] = 1.0 + rng.normal();
                mu += 0.5 * c * r.x[c];
            }
            r.y = mu + sigma_e * rng.normal();
            recs.push_back(std::move(r));
        }
    }
    return {validate_dataset(recs, f), f};
}

/// Random state inside the support of `variant`.
inline ChainState random_state(const Dataset& d, Variant variant, RngStream& rng) {
    ChainState s;
    s.beta.resize(d.q());
    for (int k = 0; k < d.q(); ++k) s.beta[k] = 2.0 * rng.normal();
    s.v.resize(d.m());
    for (int i = 0; i < d.m(); ++i) s.v[i] = rng.normal();
    s.sigma1_sq = std::exp(rng.normal());
    s.sigma_v_sq = std::exp(rng.normal());
    s.z.assign(d.n(), 1);
    if (variant == Variant::DG) {
        s.eta = 1.0;
        s.p_e = 1.0;
        return s;
    }
    for (auto& zi : s.z) zi = rng.uniform() < 0.7;
    if (variant == Variant::CDM) {
        s.eta = 1.0 + std::exp(rng.normal());
        s.p_e = rng.uniform();
    } else {
        s.eta = std::exp(1.5 * rng.normal());
        s.p_e = 0.5 + 0.5 * rng.uniform();
    }
    return s;
}

struct DensityRatioResult {
    double max_error = 0.0;
    std::string worst_block;
    int comparisons = 0;
};

/// Compares every full conditional against log_joint: for two candidate
/// values a, b of one block with everything else fixed, the conditional's
/// log ratio must equal the joint's log ratio.
inline DensityRatioResult density_ratio_check(const Dataset& d, Variant variant, int n_states, std::uint64_t seed) {
    DensityRatioResult out;
    RngStream rng(seed, 4242, 0);
    auto record = [&](const char* block, double cond_diff, double joint_diff) {
        const double err = std::abs(cond_diff - joint_diff);
        ++out.comparisons;
        if (err > out.max_error || !std::isfinite(err)) {
            out.max_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
            out.worst_block = block;
        }
    };
    for (int t = 0; t < n_states; ++t) {
        const ChainState s = random_state(d, variant, rng);
        const ConditionalContext ctx(d, s, variant);
        const double base = log_joint(d, s, variant);

        {  // beta
            const GaussianConditional c = beta_conditional(ctx);
            ChainState a = s;
            for (int k = 0; k < d.q(); ++k) a.beta[k] += 0.3 * rng.normal();
            auto quad = [&](const Vector& b) { return -0.5 * (b - c.mean).dot(c.precision * (b - c.mean)); };
            record("beta", quad(a.beta) - quad(s.beta), log_joint(d, a, variant) - base);
        }
        {  // area effects
            const AreaEffectConditional c = area_effect_conditional(ctx);
            ChainState a = s;
            double cond = 0.0;
            for (int i = 0; i < d.m(); ++i) {
                a.v[i] += 0.5 * rng.normal();
                cond += log_normal_pdf(a.v[i], c.mean[i], c.variance[i]) - log_normal_pdf(s.v[i], c.mean[i], c.variance[i]);
            }
            record("v", cond, log_joint(d, a, variant) - base);
        }
        {  // sigma_v^2
            const GammaConditional c = sigma_v_conditional(ctx);
            ChainState a = s;
            a.sigma_v_sq = s.sigma_v_sq * std::exp(0.5 * rng.normal());
            record("sigma_v_sq", log_inverse_gamma_kernel(a.sigma_v_sq, c) - log_inverse_gamma_kernel(s.sigma_v_sq, c),
                   log_joint(d, a, variant) - base);
        }
        {  // sigma1^2
            const GammaConditional c = sigma1_conditional(ctx);
            ChainState a = s;
            a.sigma1_sq = s.sigma1_sq * std::exp(0.5 * rng.normal());
            record("sigma1_sq", log_inverse_gamma_kernel(a.sigma1_sq, c) - log_inverse_gamma_kernel(s.sigma1_sq, c),
                   log_joint(d, a, variant) - base);
        }
        if (variant == Variant::DG) continue;
        {  // indicators, one unit at a time
            for (int u = 0; u < d.n(); ++u) {
                const double t = indicator_log_odds(ctx.residual(u), s.sigma1_sq, s.eta, s.p_e);
                ChainState one = s, two = s;
                one.z[u] = 1;
                two.z[u] = 0;
                record("z", t, log_joint(d, one, variant) - log_joint(d, two, variant));
            }
        }
        {  // p_e
            const BetaConditional c = pe_conditional(s.z, variant);
            ChainState a = s;
            a.p_e = c.lower + (1.0 - c.lower) * rng.uniform();
            auto kern = [&](double x) { return (c.a - 1.0) * std::log(x) + (c.b - 1.0) * std::log1p(-x); };
            record("p_e", kern(a.p_e) - kern(s.p_e), log_joint(d, a, variant) - base);
        }
        {  // eta
            const EtaConditional c = eta_conditional(ctx, variant);
            ChainState a = s;
            a.eta = variant == Variant::CDM ? 1.0 + std::exp(rng.normal()) : std::exp(1.5 * rng.normal());
            record("eta", c.log_density(a.eta) - c.log_density(s.eta), log_joint(d, a, variant) - base);
        }
    }
    return out;
}

/// Grid posterior of (log sigma_v^2, log sigma1^2) for the normal-error
/// model with beta (flat) and v integrated out analytically. The prior is
/// flat in sigma_v^2 and proportional to 1/sigma1^2, which is also what the
/// mixtures reduce to when every unit sits in component one. The returned
/// marginal is over log sigma_v^2, normalized on [lo, hi].
struct GridMarginal {
    double lo = 0.0, hi = 0.0;
    std::vector<double> prob;

    double width() const { return (hi - lo) / static_cast<double>(prob.size()); }

    double cdf(double u) const {
        if (u <= lo) return 0.0;
        if (u >= hi) return 1.0;
        const double t = (u - lo) / width();
        const auto k = static_cast<std::size_t>(t);
        double c = 0.0;
        for (std::size_t j = 0; j < k; ++j) c += prob[j];
        return c + (t - static_cast<double>(k)) * prob[k];
    }

    /// Total variation between this marginal and the histogram of log draws
    /// on the same cells; draws outside [lo, hi] count in full.
    double total_variation(std::span<const double> log_draws) const {
        std::vector<double> hist(prob.size(), 0.0);
        double outside = 0.0;
        for (double u : log_draws) {
            if (u < lo || u >= hi) {
                outside += 1.0;
                continue;
            }
            hist[static_cast<std::size_t>((u - lo) / width())] += 1.0;
        }
        const double K = static_cast<double>(log_draws.size());
        double tv = outside / K;
        for (std::size_t j = 0; j < prob.size(); ++j) tv += std::abs(hist[j] / K - prob[j]);
        return 0.5 * tv;
    }
};

inline double log_marginal_variances(const Dataset& d, double sigma_v_sq, double sigma1_sq) {
    const int n = d.n();
    Matrix V = sigma1_sq * Matrix::Identity(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (d.area_of_unit[a] == d.area_of_unit[b]) V(a, b) += sigma_v_sq;
    const Eigen::LLT<Matrix> llt(V);
    const Matrix Vi_X = llt.solve(d.X);
    const Vector Vi_y = llt.solve(d.y);
    const Matrix XtViX = d.X.transpose() * Vi_X;
    const Eigen::LLT<Matrix> llt_x(XtViX);
    const Vector bhat = llt_x.solve(d.X.transpose() * Vi_y);
    const double quad = d.y.dot(Vi_y) - bhat.dot(XtViX * bhat);
    const double logdet_v = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    const double logdet_x = 2.0 * Matrix(llt_x.matrixL()).diagonal().array().log().sum();
    return -0.5 * logdet_v - 0.5 * logdet_x - 0.5 * quad - std::log(sigma1_sq);
}

inline GridMarginal sigma_v_grid_marginal(const Dataset& d, double lo, double hi, double s1_lo, double s1_hi,
                                          int cells = 120, int sub = 3) {
    GridMarginal g{lo, hi, std::vector<double>(cells, 0.0)};
    const int fine = cells * sub;
    const double hu = (hi - lo) / fine, hw = (s1_hi - s1_lo) / fine;
    std::vector<double> logp(static_cast<std::size_t>(fine) * fine);
    double top = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < fine; ++a)
        for (int b = 0; b < fine; ++b) {
            const double u = lo + (a + 0.5) * hu, w = s1_lo + (b + 0.5) * hw;
            // log-coordinate Jacobian: + u + w
            const double lp = log_marginal_variances(d, std::exp(u), std::exp(w)) + u + w;
            logp[static_cast<std::size_t>(a) * fine + b] = lp;
            top = std::max(top, lp);
        }
    double total = 0.0;
    for (int a = 0; a < fine; ++a)
        for (int b = 0; b < fine; ++b) {
            const double p = std::exp(logp[static_cast<std::size_t>(a) * fine + b] - top);
            g.prob[a / sub] += p;
            total += p;
        }
    for (auto& p : g.prob) p /= total;
    return g;
}

} // namespace hbsae::testing
