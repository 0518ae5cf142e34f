#pragma once

// Full conditional distributions of the nested-error mixture model, under
// the reparametrization sigma2^2 = eta * sigma1^2.
//
// Each block exposes its conditional as a parameter struct (so tests can
// evaluate densities) and a draw function that samples from it.
//
//   w_ij   = z_ij / sigma1^2 + (1 - z_ij) / (eta sigma1^2)
//   beta   ~ N(S sum w (y - v) x, S),           S = [sum w x x']^-1
//   v_i    ~ N(phi_i sum_j w (y - x'beta), phi_i), phi_i = (1/sigma_v^2 + sum_j w)^-1
//   z_ij   ~ Bernoulli(p*_ij)
//   p_e    ~ Beta(sum z + 1, sum (1 - z) + 1) on (1/2, 1) [GDM] or (0, 1) [CDM]
//   1/sigma_v^2 ~ Gamma(m/2 - 1, sum v^2 / 2)
//   1/sigma1^2  ~ Gamma(n/2, sum r^2 (z + (1 - z)/eta) / 2)
//   eta    ∝ exp(-A/eta) eta^-B (1 + eta)^-2         [GDM]
//   eta    ∝ exp(-A/eta) eta^-(B+2) 1{eta > 1}       [CDM]
// with A = sum (1 - z) r^2 / (2 sigma1^2), B = sum (1 - z) / 2.

#include "hbsae/domain.hpp"
#include "hbsae/random.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

namespace hbsae {

inline constexpr double kPrecisionFloor = 1e-300;

struct SamplerCounters {
    std::uint64_t clamps = 0;
};

/// Read-only view of the data and the current state, used by every draw.
class ConditionalContext {
public:
    ConditionalContext(const Dataset& data, const ChainState& state, Variant variant,
                       SamplerCounters* counters = nullptr)
        : data_(data), state_(state), variant_(variant), counters_(counters) {}

    const Dataset& data() const { return data_; }
    const ChainState& state() const { return state_; }
    Variant variant() const { return variant_; }

    double clamp_precision(double p) const {
        if (p < kPrecisionFloor) {
            if (counters_) ++counters_->clamps;
            return kPrecisionFloor;
        }
        return p;
    }

    bool component_one(int u) const {
        return variant_ == Variant::DG || state_.z.empty() || state_.z[u] != 0;
    }

    /// Error precision of unit u under its current component.
    double weight(int u) const {
        const double p1 = clamp_precision(1.0 / state_.sigma1_sq);
        if (component_one(u)) return p1;
        return clamp_precision(p1 / state_.eta);
    }

    double fitted(int u) const { return data_.X.row(u).dot(state_.beta); }

    double residual(int u) const { return data_.y[u] - fitted(u) - state_.v[data_.area_of_unit[u]]; }

private:
    const Dataset& data_;
    const ChainState& state_;
    Variant variant_;
    SamplerCounters* counters_;
};

struct GaussianConditional {
    Vector mean;
    Matrix precision;
};

struct AreaEffectConditional {
    Vector mean;
    Vector variance;
};

struct BetaConditional {
    double a = 1.0;
    double b = 1.0;
    double lower = 0.0;
};

struct GammaConditional {
    double shape = 1.0;
    double rate = 1.0;
};

struct EtaConditional {
    double A = 0.0;
    double B = 0.0;
    Variant variant = Variant::GDM;

    /// Unnormalized log density in eta.
    double log_density(double eta) const {
        if (!(eta > 0) || !std::isfinite(eta)) return -std::numeric_limits<double>::infinity();
        if (variant == Variant::CDM) {
            if (!(eta > 1.0)) return -std::numeric_limits<double>::infinity();
            return -A / eta - (B + 2.0) * std::log(eta);
        }
        return -A / eta - B * std::log(eta) - 2.0 * std::log1p(eta);
    }

    /// Unnormalized log density of u = log(eta), Jacobian included.
    double log_density_log_scale(double u) const {
        const double eta = std::exp(u);
        return log_density(eta) + u;
    }
};

// --- beta ------------------------------------------------------------------

inline GaussianConditional beta_conditional(const ConditionalContext& ctx) {
    const Dataset& d = ctx.data();
    const int q = d.q();
    Matrix precision = Matrix::Zero(q, q);
    Vector rhs = Vector::Zero(q);
    for (int u = 0; u < d.n(); ++u) {
        const double w = ctx.weight(u);
        const auto x = d.X.row(u).transpose();
        precision.selfadjointView<Eigen::Lower>().rankUpdate(x, w);
        rhs += w * (d.y[u] - ctx.state().v[d.area_of_unit[u]]) * x;
    }
    precision = precision.selfadjointView<Eigen::Lower>();
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) fail(ErrorCode::SingularPrecision, "beta precision is not positive definite");
    return {llt.solve(rhs), std::move(precision)};
}

inline Vector draw_beta_coeff(const ConditionalContext& ctx, RngStream& rng) {
    const GaussianConditional c = beta_conditional(ctx);
    Eigen::LLT<Matrix> llt(c.precision);
    if (llt.info() != Eigen::Success) fail(ErrorCode::SingularPrecision, "beta precision is not positive definite");
    Vector eps(c.mean.size());
    for (Eigen::Index k = 0; k < eps.size(); ++k) eps[k] = rng.normal();
    // precision = L L', so L'^-1 eps has covariance precision^-1
    return c.mean + llt.matrixU().solve(eps);
}

// --- area effects ----------------------------------------------------------

inline AreaEffectConditional area_effect_conditional(const ConditionalContext& ctx) {
    const Dataset& d = ctx.data();
    const ChainState& s = ctx.state();
    AreaEffectConditional c{Vector(d.m()), Vector(d.m())};
    const double prior_precision = ctx.clamp_precision(1.0 / s.sigma_v_sq);
    for (int i = 0; i < d.m(); ++i) {
        double wsum = 0.0, wres = 0.0;
        for (int u = d.area_start[i]; u < d.area_start[i + 1]; ++u) {
            const double w = ctx.weight(u);
            wsum += w;
            wres += w * (d.y[u] - ctx.fitted(u));
        }
        const double phi = 1.0 / (prior_precision + wsum);
        c.mean[i] = phi * wres;
        c.variance[i] = phi;
    }
    return c;
}

inline Vector draw_area_effects(const ConditionalContext& ctx, RngStream& rng) {
    const AreaEffectConditional c = area_effect_conditional(ctx);
    Vector v(c.mean.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = c.mean[i] + std::sqrt(c.variance[i]) * rng.normal();
    return v;
}

// --- indicators ------------------------------------------------------------

/// log P(z = 1 | ...) - log P(z = 0 | ...). The two exponents are combined
/// before subtraction so that eta = 1 returns the prior log odds exactly.
inline double indicator_log_odds(double r, double sigma1_sq, double eta, double p_e) {
    const double r2 = r * r;
    return std::log(p_e) - std::log1p(-p_e) + 0.5 * std::log(eta) - r2 / (2.0 * sigma1_sq) * (1.0 - 1.0 / eta);
}

/// P(z = 1 | residual r, sigma1^2, eta, p_e), evaluated in log space.
inline double indicator_probability(double r, double sigma1_sq, double eta, double p_e) {
    if (p_e >= 1.0) return 1.0;
    if (p_e <= 0.0) return 0.0;
    const double t = indicator_log_odds(r, sigma1_sq, eta, p_e);
    if (t < 0) {
        const double e = std::exp(t);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(-t));
}

inline std::vector<std::uint8_t> draw_indicators(const ConditionalContext& ctx, RngStream& rng) {
    const Dataset& d = ctx.data();
    const ChainState& s = ctx.state();
    std::vector<std::uint8_t> z(d.n());
    for (int u = 0; u < d.n(); ++u) {
        const double p = indicator_probability(ctx.residual(u), s.sigma1_sq, s.eta, s.p_e);
        z[u] = static_cast<std::uint8_t>(draw_bernoulli(rng, p));
    }
    return z;
}

// --- mixing proportion -----------------------------------------------------

inline BetaConditional pe_conditional(long long n_one, long long n_two, Variant variant) {
    if (variant == Variant::DG) fail(ErrorCode::VariantMismatch, "DG has no mixing proportion");
    return {static_cast<double>(n_one) + 1.0, static_cast<double>(n_two) + 1.0,
            variant == Variant::GDM ? 0.5 : 0.0};
}

inline BetaConditional pe_conditional(const std::vector<std::uint8_t>& z, Variant variant) {
    long long ones = 0;
    for (auto zi : z) ones += zi != 0;
    return pe_conditional(ones, static_cast<long long>(z.size()) - ones, variant);
}

inline double draw_pe(const ConditionalContext& ctx, RngStream& rng, Variant variant) {
    const BetaConditional c = pe_conditional(ctx.state().z, variant);
    return draw_truncated_beta(rng, c.a, c.b, c.lower);
}

// --- area-effect variance --------------------------------------------------

inline GammaConditional sigma_v_conditional(const ConditionalContext& ctx) {
    const Vector& v = ctx.state().v;
    const double ss = v.squaredNorm();
    const int m = static_cast<int>(v.size());
    if (m < 3) fail(ErrorCode::TooFewAreas, "sigma_v^2 conditional needs m >= 3");
    if (!(ss > 0)) fail(ErrorCode::DegenerateState, "all area effects are exactly zero");
    return {0.5 * m - 1.0, 0.5 * ss};
}

/// Returns sigma_v^2 (the precision is what is drawn).
inline double draw_sigma_v(const ConditionalContext& ctx, RngStream& rng) {
    const GammaConditional c = sigma_v_conditional(ctx);
    const double precision = ctx.clamp_precision(draw_gamma(rng, c.shape, c.rate));
    return 1.0 / precision;
}

// --- primary error variance ------------------------------------------------

inline GammaConditional sigma1_conditional(const ConditionalContext& ctx) {
    const Dataset& d = ctx.data();
    const double eta = ctx.state().eta;
    double rate = 0.0;
    for (int u = 0; u < d.n(); ++u) {
        const double r = ctx.residual(u);
        rate += r * r * (ctx.component_one(u) ? 1.0 : 1.0 / eta);
    }
    rate *= 0.5;
    if (!(rate > 0)) fail(ErrorCode::DegenerateState, "all residuals are exactly zero");
    return {0.5 * d.n(), rate};
}

inline double draw_sigma1(const ConditionalContext& ctx, RngStream& rng, Variant /*variant*/) {
    const GammaConditional c = sigma1_conditional(ctx);
    const double precision = ctx.clamp_precision(draw_gamma(rng, c.shape, c.rate));
    return 1.0 / precision;
}

// --- variance ratio --------------------------------------------------------

inline EtaConditional eta_conditional(const ConditionalContext& ctx, Variant variant) {
    if (variant == Variant::DG) fail(ErrorCode::VariantMismatch, "DG has no variance ratio");
    const Dataset& d = ctx.data();
    double A = 0.0, B = 0.0;
    for (int u = 0; u < d.n(); ++u) {
        if (ctx.component_one(u)) continue;
        const double r = ctx.residual(u);
        A += r * r;
        B += 0.5;
    }
    A /= 2.0 * ctx.state().sigma1_sq;
    return {A, B, variant};
}

struct SliceSettings {
    double width = 1.0;
    int max_expansions = 50;
    int max_shrinks = 200;
};

/// Univariate slice sampler with stepping out and shrinkage (Neal 2003).
/// `lower_bound` restricts the support to (lower_bound, inf).
template <typename LogDensity>
double slice_sample(double x0, LogDensity&& log_density, RngStream& rng, const SliceSettings& settings = {},
                    double lower_bound = -std::numeric_limits<double>::infinity()) {
    const double f0 = log_density(x0);
    if (!std::isfinite(f0)) fail(ErrorCode::SliceFailure, "current point has zero density");
    const double level = f0 + std::log(rng.uniform());

    double left = x0 - settings.width * rng.uniform();
    double right = left + settings.width;
    int steps_left = static_cast<int>(std::floor(settings.max_expansions * rng.uniform()));
    int steps_right = settings.max_expansions - 1 - steps_left;
    while (steps_left > 0 && left > lower_bound && log_density(left) > level) {
        left -= settings.width;
        --steps_left;
    }
    while (steps_right > 0 && log_density(right) > level) {
        right += settings.width;
        --steps_right;
    }
    if (left < lower_bound) left = lower_bound;

    for (int k = 0; k < settings.max_shrinks; ++k) {
        const double x1 = left + (right - left) * rng.uniform();
        if (x1 > lower_bound && log_density(x1) > level) return x1;
        if (x1 < x0)
            left = x1;
        else
            right = x1;
    }
    fail(ErrorCode::SliceFailure, "slice interval shrank without acceptance");
}

inline double draw_eta(const EtaConditional& c, double current, RngStream& rng, const SliceSettings& settings = {}) {
    const double lower = c.variant == Variant::CDM ? 0.0 : -std::numeric_limits<double>::infinity();
    const double u = slice_sample(
        std::log(current), [&](double t) { return c.log_density_log_scale(t); }, rng, settings, lower);
    return std::exp(u);
}

inline double draw_eta(const ConditionalContext& ctx, RngStream& rng, Variant variant) {
    return draw_eta(eta_conditional(ctx, variant), ctx.state().eta, rng);
}

} // namespace hbsae
