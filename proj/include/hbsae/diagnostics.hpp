#pragma once

// Convergence diagnostics over equal-length chains: split-chain potential
// scale reduction and effective sample size (Geyer initial monotone sequence).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace hbsae {

namespace detail {

inline double mean_of(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double var_of(std::span<const double> x) {  // unbiased
    const double mu = mean_of(x);
    double s = 0.0;
    for (double xi : x) s += (xi - mu) * (xi - mu);
    return s / static_cast<double>(x.size() - 1);
}

} // namespace detail

inline double split_rhat(const std::vector<std::span<const double>>& chains) {
    std::vector<std::span<const double>> halves;
    for (auto c : chains) {
        const std::size_t h = c.size() / 2;
        if (h < 2) return std::numeric_limits<double>::quiet_NaN();
        halves.push_back(c.subspan(0, h));
        halves.push_back(c.subspan(c.size() - h, h));
    }
    const double n = static_cast<double>(halves.front().size());
    std::vector<double> means, vars;
    for (auto h : halves) {
        means.push_back(detail::mean_of(h));
        vars.push_back(detail::var_of(h));
    }
    const double W = detail::mean_of(vars);
    if (!(W > 0)) return std::numeric_limits<double>::quiet_NaN();
    const double B_over_n = detail::var_of(means);
    const double var_plus = (n - 1.0) / n * W + B_over_n;
    return std::sqrt(var_plus / W);
}

inline double effective_sample_size(const std::vector<std::span<const double>>& chains) {
    const std::size_t M = chains.size();
    std::size_t N = chains.front().size();
    for (auto c : chains) N = std::min(N, c.size());
    if (N < 4) return std::numeric_limits<double>::quiet_NaN();

    std::vector<double> means(M), vars(M);
    std::vector<std::vector<double>> centred(M);
    for (std::size_t c = 0; c < M; ++c) {
        auto x = chains[c].subspan(0, N);
        means[c] = detail::mean_of(x);
        vars[c] = detail::var_of(x);
        centred[c].resize(N);
        for (std::size_t t = 0; t < N; ++t) centred[c][t] = x[t] - means[c];
    }
    const double W = detail::mean_of(vars);
    if (!(W > 0)) return std::numeric_limits<double>::quiet_NaN();
    const double var_plus = (N - 1.0) / N * W + (M > 1 ? detail::var_of(means) : 0.0);

    auto rho = [&](std::size_t lag) {
        double acov = 0.0;
        for (std::size_t c = 0; c < M; ++c) {
            double s = 0.0;
            const auto& x = centred[c];
            for (std::size_t t = 0; t + lag < N; ++t) s += x[t] * x[t + lag];
            acov += s / static_cast<double>(N);
        }
        acov /= static_cast<double>(M);
        return 1.0 - (W * (N - 1.0) / N - acov) / var_plus;
    };

    double tau = -1.0;
    double previous_pair = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < N; t += 2) {
        double pair = rho(t) + rho(t + 1);
        if (pair < 0) break;
        pair = std::min(pair, previous_pair);
        previous_pair = pair;
        tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0 / std::log10(static_cast<double>(M * N)));
    return static_cast<double>(M * N) / tau;
}

} // namespace hbsae
