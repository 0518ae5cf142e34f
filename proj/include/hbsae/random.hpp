#pragma once

// Random streams and scalar variate generators.
// Gamma variates are parameterized by (shape, rate): mean = shape / rate.

#include "hbsae/error.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace hbsae {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Deterministic generator keyed by (seed, chain, replicate). Distinct keys
/// are mixed through splitmix64 before seeding, so neighbouring indices give
/// unrelated streams.
class RngStream {
public:
    using engine_type = std::mt19937_64;

    RngStream(std::uint64_t seed, std::uint64_t chain = 0, std::uint64_t replicate = 0) {
        std::uint64_t s = seed;
        std::uint64_t a = detail::splitmix64(s);
        s ^= chain * 0xD1B54A32D192ED03ULL;
        std::uint64_t b = detail::splitmix64(s);
        s ^= replicate * 0x8CB92BA72F3D8DD7ULL;
        std::uint64_t c = detail::splitmix64(s);
        std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                          static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
        engine_.seed(seq);
    }

    engine_type& engine() { return engine_; }

    /// Uniform on the open interval (0, 1).
    double uniform() {
        for (;;) {
            double u = std::generate_canonical<double, 53>(engine_);
            if (u > 0.0 && u < 1.0) return u;
        }
    }

    double normal() { return std_normal_(engine_); }

private:
    engine_type engine_;
    std::normal_distribution<double> std_normal_{0.0, 1.0};
};

inline double draw_uniform(RngStream& rng, double lo = 0.0, double hi = 1.0) {
    if (!(lo < hi)) fail(ErrorCode::InvalidParameter, "uniform needs lo < hi");
    return lo + (hi - lo) * rng.uniform();
}

inline double draw_normal(RngStream& rng, double mean = 0.0, double sd = 1.0) {
    if (!(sd >= 0) || !std::isfinite(mean)) fail(ErrorCode::InvalidParameter, "normal needs sd >= 0");
    return mean + sd * rng.normal();
}

inline double draw_gamma(RngStream& rng, double shape, double rate) {
    if (!(shape > 0) || !(rate > 0) || !std::isfinite(shape) || !std::isfinite(rate))
        fail(ErrorCode::InvalidParameter,
             "gamma needs shape > 0 and rate > 0 (got " + std::to_string(shape) + ", " + std::to_string(rate) + ")");
    std::gamma_distribution<double> g(shape, 1.0);
    double x;
    do {
        x = g(rng.engine());
    } while (!(x > 0));
    return x / rate;
}

inline double draw_beta(RngStream& rng, double a, double b) {
    if (!(a > 0) || !(b > 0)) fail(ErrorCode::InvalidParameter, "beta needs a, b > 0");
    for (;;) {
        const double x = draw_gamma(rng, a, 1.0);
        const double y = draw_gamma(rng, b, 1.0);
        const double r = x / (x + y);
        if (r > 0.0 && r < 1.0) return r;
    }
}

inline int draw_bernoulli(RngStream& rng, double p) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidParameter, "bernoulli needs p in [0, 1]");
    if (p == 1.0) return 1;
    if (p == 0.0) return 0;
    return rng.uniform() < p ? 1 : 0;
}

inline double draw_student_t(RngStream& rng, double df) {
    if (!(df > 0)) fail(ErrorCode::InvalidParameter, "student t needs df > 0");
    const double z = rng.normal();
    const double w = draw_gamma(rng, df / 2.0, df / 2.0);
    return z / std::sqrt(w);
}

/// Beta(a, b) restricted to (lower, 1) by inversion of the upper tail, so
/// the cost does not depend on how much mass lies below `lower`.
inline double draw_truncated_beta(RngStream& rng, double a, double b, double lower) {
    if (!(a > 0) || !(b > 0)) fail(ErrorCode::InvalidParameter, "truncated beta needs a, b > 0");
    if (!(lower >= 0.0 && lower < 1.0)) fail(ErrorCode::InvalidParameter, "truncation point must lie in [0, 1)");
    const double tail = lower == 0.0 ? 1.0 : boost::math::ibetac(a, b, lower);
    for (int attempt = 0; attempt < 64; ++attempt) {
        const double s = tail * rng.uniform();
        const double x = boost::math::ibetac_inv(a, b, s);
        if (x > lower && x < 1.0) return x;
    }
    fail(ErrorCode::InvalidParameter, "truncated beta inversion did not land inside (lower, 1)");
}

} // namespace hbsae
