#include "support.hpp"

#include <gtest/gtest.h>

using namespace hbsae;
using hbsae::testing::ks_two_sample;
using hbsae::testing::synthetic;

namespace {

ModelSpec spec_for(Variant v, int draws, int burn, int chains = 2, std::uint64_t seed = 20240501) {
    ModelSpec s;
    s.variant = v;
    s.chain.n_draws = draws;
    s.chain.burn_in = burn;
    s.chain.n_chains = chains;
    s.chain.seed = seed;
    return s;
}

std::vector<double> column(const ChainDraws& d, int c) {
    std::vector<double> x(d.rows());
    for (Eigen::Index r = 0; r < d.rows(); ++r) x[r] = d.params(r, c);
    return x;
}

// Intercept-only data where a fraction of the errors has variance 25.
std::pair<Dataset, AreaFrame> contaminated(int m, int k, double fraction, std::uint64_t seed) {
    RngStream rng(seed);
    AreaFrame f;
    f.xbar = Matrix::Ones(m, 1);
    std::vector<UnitRecord> recs;
    for (int i = 0; i < m; ++i) {
        f.ids.push_back("a" + std::to_string(i));
        f.N.push_back(100);
        const double v = rng.normal();
        for (int j = 0; j < k; ++j) {
            const double sd = rng.uniform() < fraction ? 5.0 : 1.0;
            recs.push_back({f.ids.back(), 10.0 + v + sd * rng.normal(), Vector::Ones(1)});
        }
    }
    return {validate_dataset(recs, f), f};
}

} // namespace

TEST(Engine, SameSeedSameDraws) {
    const auto [d, f] = synthetic(6, 4, 2, 1);
    const ModelSpec s = spec_for(Variant::GDM, 300, 100);
    const FitResult a = fit(d, f, s), b = fit(d, f, s), c = fit(d, f, s, 0, false);
    EXPECT_EQ(a.draws.params, b.draws.params);
    EXPECT_EQ(a.draws.params, c.draws.params);
    EXPECT_EQ(a.draws.theta, c.draws.theta);
    EXPECT_EQ(a.draws.z_two_count, c.draws.z_two_count);
}

TEST(Engine, SeedAndReplicateChangeTheStream) {
    const auto [d, f] = synthetic(6, 4, 2, 1);
    const FitResult a = fit(d, f, spec_for(Variant::DG, 50, 10));
    const FitResult b = fit(d, f, spec_for(Variant::DG, 50, 10, 2, 7));
    const FitResult c = fit(d, f, spec_for(Variant::DG, 50, 10), 1);
    EXPECT_NE(a.draws.params, b.draws.params);
    EXPECT_NE(a.draws.params, c.draws.params);
}

TEST(Engine, ChainsAreStackedInOrder) {
    const auto [d, f] = synthetic(6, 4, 2, 1);
    const FitResult two = fit(d, f, spec_for(Variant::CDM, 80, 20, 2));
    const ChainDraws first = run_chain(d, f, spec_for(Variant::CDM, 80, 20, 2), 0);
    const ChainDraws second = run_chain(d, f, spec_for(Variant::CDM, 80, 20, 2), 1);
    EXPECT_EQ(two.draws.rows(), 160);
    EXPECT_EQ(two.draws.params.topRows(80), first.params);
    EXPECT_EQ(two.draws.params.bottomRows(80), second.params);
    EXPECT_EQ(two.draws.chain_rows, (std::vector<int>{80, 80}));
}

TEST(Engine, ThinningKeepsEveryKthSweep) {
    const auto [d, f] = synthetic(6, 4, 2, 2);
    ModelSpec thin = spec_for(Variant::DG, 40, 10, 1);
    thin.chain.thin = 3;
    ModelSpec full = spec_for(Variant::DG, 120, 10, 1);
    const ChainDraws a = run_chain(d, f, thin, 0), b = run_chain(d, f, full, 0);
    for (int r = 0; r < 40; ++r) EXPECT_EQ(a.params.row(r), b.params.row(3 * r + 2));
}

TEST(Engine, DiagnosticsCoverTrackedParameters) {
    const auto [d, f] = synthetic(5, 4, 3, 3);
    const FitResult g = fit(d, f, spec_for(Variant::GDM, 200, 50));
    EXPECT_EQ(g.diagnostics.size(), static_cast<std::size_t>(d.q() + d.m() + 4));
    const FitResult dg = fit(d, f, spec_for(Variant::DG, 200, 50));
    EXPECT_EQ(dg.diagnostics.size(), static_cast<std::size_t>(d.q() + d.m() + 2));
}

TEST(Engine, ToyDgFitConverges) {
    const auto [d, f] = synthetic(10, 5, 2, 4);
    const FitResult r = fit(d, f, spec_for(Variant::DG, 4000, 1000));
    for (const auto& p : r.diagnostics) {
        EXPECT_LT(p.rhat, 1.05) << p.name;
        EXPECT_GT(p.ess, 100.0) << p.name;
    }
}

TEST(Engine, GewekeMeansAgree) {
    const auto [d, f] = synthetic(10, 5, 2, 5);
    const FitResult r = fit(d, f, spec_for(Variant::GDM, 20000, 2000, 1));
    for (int c : {r.draws.layout.beta(0), r.draws.layout.beta(1), r.draws.layout.sigma1_sq()}) {
        const auto x = column(r.draws, c);
        const std::span<const double> head(x.data(), 2000), tail(x.data() + 10000, 10000);
        const double se_head = std::sqrt(detail::var_of(head) / effective_sample_size({head}));
        const double se_tail = std::sqrt(detail::var_of(tail) / effective_sample_size({tail}));
        const double z = (detail::mean_of(head) - detail::mean_of(tail)) / std::hypot(se_head, se_tail);
        EXPECT_LT(std::abs(z), 4.0) << "column " << c;
    }
}

TEST(Engine, InitialStateUsesLeastSquares) {
    // Noiseless linear data: OLS recovers beta exactly.
    AreaFrame f;
    f.xbar = Matrix::Ones(4, 2);
    std::vector<UnitRecord> recs;
    for (int i = 0; i < 4; ++i) {
        f.ids.push_back("a" + std::to_string(i));
        f.N.push_back(10);
        for (int j = 0; j < 3; ++j) {
            Vector x(2);
            x << 1.0, i + 0.25 * j;
            recs.push_back({f.ids.back(), 2.0 - 0.5 * x[1], x});
        }
    }
    const Dataset d = validate_dataset(recs, f);
    RngStream rng(1);
    const ChainState s = initialize(d, spec_for(Variant::GDM, 1, 0), rng);
    EXPECT_NEAR(s.beta[0], 2.0, 1e-10);
    EXPECT_NEAR(s.beta[1], -0.5, 1e-10);
    EXPECT_GT(s.sigma1_sq, 0.0);
    EXPECT_GT(s.sigma_v_sq, 0.0);
    EXPECT_EQ(s.p_e, 0.75);
    EXPECT_EQ(s.eta, 4.0);
}

TEST(Engine, LaterChainsStartJittered) {
    const auto [d, f] = synthetic(5, 4, 2, 6);
    const ModelSpec s = spec_for(Variant::CDM, 1, 0);
    RngStream r0(1), r1(1);
    const ChainState a = initialize(d, s, r0, 0), b = initialize(d, s, r1, 1);
    EXPECT_NE(a.beta, b.beta);
    EXPECT_NE(a.sigma1_sq, b.sigma1_sq);
    EXPECT_GT(b.eta, 1.0);
    EXPECT_EQ(a.p_e, 0.9);
}

TEST(Engine, RetainedStatesRespectSupport) {
    const auto [d, f] = synthetic(6, 4, 2, 7, 1.5);
    for (Variant v : {Variant::DG, Variant::CDM, Variant::GDM}) {
        const FitResult r = fit(d, f, spec_for(v, 2000, 200));
        const DrawLayout& L = r.draws.layout;
        for (Eigen::Index k = 0; k < r.draws.rows(); ++k) {
            const auto row = r.draws.params.row(k);
            ASSERT_TRUE(row.allFinite());
            ASSERT_GT(row[L.sigma1_sq()], 0.0);
            ASSERT_GT(row[L.sigma_v_sq()], 0.0);
            if (v == Variant::DG) {
                ASSERT_EQ(row[L.eta()], 1.0);
                ASSERT_EQ(row[L.p_e()], 1.0);
            }
            if (v == Variant::CDM) {
                ASSERT_GT(row[L.eta()], 1.0);
                ASSERT_GT(row[L.p_e()], 0.0);
                ASSERT_LT(row[L.p_e()], 1.0);
            }
            if (v == Variant::GDM) {
                ASSERT_GT(row[L.p_e()], 0.5);
                ASSERT_LT(row[L.p_e()], 1.0);
            }
        }
    }
}

TEST(Engine, FrozenComponentOneMatchesDg) {
    const auto [d, f] = synthetic(8, 5, 2, 8);
    ModelSpec g = spec_for(Variant::GDM, 40000, 2000, 1);
    g.frozen.z = true;
    g.chain.thin = 5;
    ModelSpec dg = spec_for(Variant::DG, 40000, 2000, 1, 99);
    dg.chain.thin = 5;
    const FitResult a = fit(d, f, g), b = fit(d, f, dg);
    for (int c : {a.draws.layout.beta(0), a.draws.layout.beta(1), a.draws.layout.sigma1_sq(), a.draws.layout.v(0)}) {
        const auto x = column(a.draws, c), y = column(b.draws, c);
        // Autocorrelation remains after thinning, so use a conservative level.
        EXPECT_LT(ks_two_sample(x, y), 2.0 * hbsae::testing::ks_two_sample_critical(x.size(), y.size()))
            << "column " << c;
    }
}

TEST(Engine, EtaRespondsToContamination) {
    const auto [clean, fc] = contaminated(20, 8, 0.0, 9);
    const auto [dirty, fd] = contaminated(20, 8, 0.4, 9);
    auto eta_median = [](const FitResult& r) { return quantile(column(r.draws, r.draws.layout.eta()), 0.5); };
    const double e_clean = eta_median(fit(clean, fc, spec_for(Variant::GDM, 5000, 2000)));
    const double e_dirty = eta_median(fit(dirty, fd, spec_for(Variant::GDM, 5000, 2000)));
    EXPECT_LT(e_clean, 4.0);
    EXPECT_GT(e_dirty, 8.0);
}

TEST(Engine, ProperSmallInstanceMatchesGridPosterior) {
    // m = 6, n_i = 2, q = 1, z frozen at component one. With m = 6 the
    // sigma_v^2 marginal decays like s^-5/2, light enough to mix well.
    AreaFrame f;
    f.xbar = Matrix::Ones(6, 1);
    std::vector<UnitRecord> recs;
    const double ys[6][2] = {{1.2, 0.4}, {-0.8, 0.1}, {2.3, 1.6}, {0.2, -0.5}, {3.1, 2.2}, {-1.7, -0.9}};
    for (int i = 0; i < 6; ++i) {
        f.ids.push_back("a" + std::to_string(i));
        f.N.push_back(10);
        for (double y : ys[i]) recs.push_back({f.ids.back(), y, Vector::Ones(1)});
    }
    const Dataset d = validate_dataset(recs, f);
    const auto grid = hbsae::testing::sigma_v_grid_marginal(d, -14.0, 14.0, -12.0, 6.0);
    EXPECT_LT(grid.prob.back(), 1e-6);

    ModelSpec s = spec_for(Variant::GDM, 100000, 5000, 1);
    s.frozen.z = true;
    s.chain.thin = 5;
    const FitResult r = fit(d, f, s);
    auto x = column(r.draws, r.draws.layout.sigma_v_sq());
    for (auto& e : x) e = std::log(e);
    EXPECT_LT(grid.total_variation(x), 0.03);
    EXPECT_LT(hbsae::testing::ks_statistic(x, [&](double u) { return grid.cdf(u); }), 0.02);
}

TEST(Engine, RejectsEmptyWindow) {
    const auto [d, f] = synthetic(4, 3, 1, 10);
    ModelSpec s = spec_for(Variant::DG, 0, 10);
    try {
        fit(d, f, s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
}

TEST(Engine, RejectsMisalignedFrame) {
    const auto [d, f] = synthetic(4, 3, 1, 11);
    AreaFrame g = f;
    std::swap(g.ids[0], g.ids[1]);
    EXPECT_THROW(fit(d, g, spec_for(Variant::DG, 10, 0)), Error);
}

TEST(Engine, ThetaUsesPopulationMeans) {
    const auto [d, f] = synthetic(5, 4, 2, 12);
    const FitResult r = fit(d, f, spec_for(Variant::DG, 50, 10, 1));
    const DrawLayout& L = r.draws.layout;
    for (Eigen::Index k = 0; k < r.draws.rows(); ++k)
        for (int i = 0; i < d.m(); ++i) {
            const double th = f.xbar(i, 0) * r.draws.params(k, L.beta(0)) + f.xbar(i, 1) * r.draws.params(k, L.beta(1)) +
                              r.draws.params(k, L.v(i));
            ASSERT_NEAR(r.draws.theta(k, i), th, 1e-12);
        }
}
