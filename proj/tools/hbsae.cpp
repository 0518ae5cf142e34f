// hbsae: fit, simulate and evaluate hierarchical-Bayes small-area models.
//
//   hbsae fit --model gdm --units units.csv --areas areas.csv --out run/
//   hbsae simulate --scenario iii --S 50 --seed 7 --methods dg,cdm,gdm
//   hbsae evaluate --report gdm=run/report.json --truth truth.csv
//
// Exit codes: 0 success, 2 input or validation error, 3 sampler failure.
// Errors are reported as one JSON line on stderr.

#include "hbsae/hbsae.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using hbsae::ErrorCode;
using hbsae::fail;
using hbsae::io::json;

namespace {

struct GlobalFlags {
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<int> chains;
    std::optional<int> draws;
    std::optional<int> burn_in;
    std::optional<int> thin;
    bool quiet = false;
};

struct FitFlags {
    std::string model = "gdm";
    std::string units;
    std::string areas;
    std::string population;
    bool intercept = true;
    bool log_transform = false;
    std::string areas_scale;  // empty: log when --log-transform, else original
    std::vector<double> levels{0.90, 0.95};
    bool dump_draws = false;
    bool allow_unsampled = false;
};

struct SimulateFlags {
    std::string scenario = "i";
    bool full_scale = false;
    std::optional<int> S, m, N, n;
    std::string methods = "dg,cdm,gdm";
    int workers = 0;
    std::string error_kind;
    std::optional<double> p_one, sd_one, mean_two, sd_two, df;
};

struct EvaluateFlags {
    std::vector<std::string> reports;
    std::string population;
    std::string truth;
};

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return hex.str();
}

class RunDirectory {
  public:
    explicit RunDirectory(std::string dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) fail(ErrorCode::IoError, "cannot create output directory '" + dir_ + "'");
    }

    std::string path(const std::string& file) const { return (fs::path(dir_) / file).string(); }

    template <typename Writer>
    void write(const std::string& file, Writer&& writer) {
        hbsae::io::write_with(path(file), std::forward<Writer>(writer));
        outputs_.push_back(file);
    }

    void write_json(const std::string& file, const json& j) {
        write(file, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    }

    void add_input(const std::string& role, const std::string& p) { inputs_.emplace_back(role, p); }

    void finish(const std::string& command, const json& resolved, std::uint64_t seed) {
        write_json("resolved_config.json", resolved);
        json manifest{{"tool", "hbsae"}, {"version", hbsae::kVersion}, {"command", command}, {"seed", seed}};
        json in = json::array();
        for (const auto& [role, p] : inputs_)
            in.push_back({{"role", role}, {"path", p}, {"sha256", sha256_file(p)}});
        manifest["inputs"] = in;
        json out = json::array();
        for (const auto& f : outputs_) out.push_back({{"file", f}, {"sha256", sha256_file(path(f))}});
        manifest["outputs"] = out;
        hbsae::io::write_with(path("manifest.json"), [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
    }

  private:
    std::string dir_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::string> outputs_;
};

void apply_chain_flags(const GlobalFlags& g, hbsae::ChainConfig& c) {
    if (g.seed) c.seed = *g.seed;
    if (g.chains) c.n_chains = *g.chains;
    if (g.draws) c.n_draws = *g.draws;
    if (g.burn_in) c.burn_in = *g.burn_in;
    if (g.thin) c.thin = *g.thin;
    c.validate();
}

hbsae::CovariateScale parse_scale(const std::string& s) {
    if (s == "original") return hbsae::CovariateScale::Original;
    if (s == "log") return hbsae::CovariateScale::Log;
    fail(ErrorCode::InvalidConfig, "--areas-scale must be 'original' or 'log'");
}

int cmd_fit(const GlobalFlags& g, const FitFlags& f) {
    if (f.units.empty()) fail(ErrorCode::InvalidConfig, "--units is required");
    if (f.areas.empty() == f.population.empty()) fail(ErrorCode::InvalidConfig, "give exactly one of --areas or --population");
    hbsae::ModelSpec spec;
    spec.variant = hbsae::parse_variant(f.model);
    apply_chain_flags(g, spec.chain);
    for (double level : f.levels)
        if (!(level > 0 && level < 1)) fail(ErrorCode::InvalidConfig, "--levels must lie in (0, 1)");

    const std::string scale_name = f.areas_scale.empty() ? (f.log_transform ? "log" : "original") : f.areas_scale;
    const hbsae::CovariateScale scale = parse_scale(scale_name);

    RunDirectory run(g.out);
    run.add_input("units", f.units);
    const auto records = hbsae::io::units_from_csv(hbsae::io::read_csv(f.units), f.intercept, f.units);
    hbsae::AreaFrame frame;
    if (!f.areas.empty()) {
        run.add_input("areas", f.areas);
        frame = hbsae::io::areas_from_csv(hbsae::io::read_csv(f.areas), f.intercept, scale, f.areas);
    } else {
        run.add_input("population", f.population);
        const auto pop = hbsae::io::population_from_csv(hbsae::io::read_csv(f.population), f.population);
        frame = hbsae::io::population_area_frame(pop, f.intercept, scale);
    }

    hbsae::ValidationOptions opts;
    opts.allow_unsampled_areas = f.allow_unsampled;
    hbsae::Dataset data = hbsae::validate_dataset(records, frame, opts);
    if (f.log_transform) std::tie(data, frame) = hbsae::log_transform_dataset(data, frame);

    const hbsae::FitResult fit = hbsae::fit(data, frame, spec);
    const hbsae::PosteriorReport rep = hbsae::make_report(fit, data, f.levels);

    run.write_json("report.json", hbsae::io::to_json(rep));
    run.write("areas.csv", [&](std::ostream& os) { hbsae::io::write_areas_csv(os, rep); });
    run.write("params.csv", [&](std::ostream& os) { hbsae::io::write_params_csv(os, rep); });
    run.write("units.csv", [&](std::ostream& os) { hbsae::io::write_units_csv(os, rep); });
    if (f.dump_draws) run.write("draws.csv", [&](std::ostream& os) { hbsae::io::write_draws_csv(os, fit.draws); });

    json resolved{{"command", "fit"},
                  {"model", hbsae::to_string(spec.variant)},
                  {"units", f.units},
                  {"areas", f.areas.empty() ? json(nullptr) : json(f.areas)},
                  {"population", f.population.empty() ? json(nullptr) : json(f.population)},
                  {"intercept", f.intercept},
                  {"log_transform", f.log_transform},
                  {"areas_scale", scale_name},
                  {"allow_unsampled", f.allow_unsampled},
                  {"levels", f.levels},
                  {"dump_draws", f.dump_draws},
                  {"chain", hbsae::io::to_json(spec.chain)},
                  {"out", g.out}};
    run.finish("fit", resolved, spec.chain.seed);

    if (!g.quiet) {
        std::cout << hbsae::to_string(spec.variant) << " fit: " << data.m() << " areas, " << data.n() << " units, "
                  << fit.draws.rows() << " retained draws\n";
        std::cout << std::fixed << std::setprecision(1);
        for (const auto& a : rep.areas) std::cout << "  " << a.area_id << "  " << a.point_estimate << "  (" << a.sd << ")\n";
        double worst = 1.0;
        for (const auto& d : fit.diagnostics)
            if (std::isfinite(d.rhat)) worst = std::max(worst, d.rhat);
        std::cout << std::setprecision(3) << "  max split-Rhat " << worst << "\n";
    }
    return 0;
}

std::vector<hbsae::Variant> parse_methods(const std::string& list) {
    std::vector<hbsae::Variant> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(hbsae::parse_variant(item));
    if (out.empty()) fail(ErrorCode::InvalidConfig, "--methods is empty");
    return out;
}

hbsae::ScenarioSpec resolve_scenario(const GlobalFlags& g, const SimulateFlags& f) {
    hbsae::ScenarioSpec s = hbsae::named_scenario(f.scenario, f.full_scale);
    if (f.S) s.S = *f.S;
    if (f.m) s.m = *f.m;
    if (f.N) s.N = *f.N;
    if (f.n) s.n = *f.n;
    if (g.seed) s.seed = *g.seed;

    using hbsae::ErrorGenerator;
    ErrorGenerator& e = s.errors;
    if (!f.error_kind.empty()) {
        if (f.error_kind == "normal")
            e = ErrorGenerator::normal(1.0);
        else if (f.error_kind == "mixture")
            e = ErrorGenerator::mixture(0.9, 0.0, 5.0);
        else if (f.error_kind == "t")
            e = ErrorGenerator::student_t(4.0);
        else if (f.error_kind == "zero")
            e = ErrorGenerator::zero();
        else
            fail(ErrorCode::InvalidConfig, "--errors must be normal, mixture, t or zero");
        s.name = "custom";
    }
    const bool custom = f.p_one || f.sd_one || f.mean_two || f.sd_two || f.df;
    if (custom) s.name = "custom";
    if (f.p_one) e.p_one = *f.p_one;
    if (f.sd_one) e.sd_one = *f.sd_one;
    if (f.mean_two) e.mean_two = *f.mean_two;
    if (f.sd_two) e.sd_two = *f.sd_two;
    if (f.df) e.df = *f.df;
    e.validate();
    s.validate();
    return s;
}

int cmd_simulate(const GlobalFlags& g, const SimulateFlags& f) {
    const hbsae::ScenarioSpec s = resolve_scenario(g, f);
    const auto methods = parse_methods(f.methods);
    hbsae::StudyOptions opts;
    opts.workers = f.workers;
    apply_chain_flags(g, opts.chain);
    if (f.workers < 0) fail(ErrorCode::InvalidConfig, "--workers must be >= 0");

    const hbsae::MetricsTable table = hbsae::run_study(s, methods, opts);

    RunDirectory run(g.out);
    run.write("metrics.csv", [&](std::ostream& os) { hbsae::io::write_metrics_csv(os, table); });
    run.write_json("metrics.json", hbsae::io::to_json(table));
    for (const auto& panel : hbsae::io::plot_panels())
        run.write(panel.file, [&](std::ostream& os) { hbsae::io::write_plot_panel(os, table, panel.metric); });

    json method_names = json::array();
    for (auto v : methods) method_names.push_back(hbsae::to_string(v));
    json resolved{{"command", "simulate"},
                  {"scenario", s.name},
                  {"errors", {{"kind", s.errors.kind_name()},
                              {"label", s.errors.label()},
                              {"p_one", s.errors.p_one},
                              {"sd_one", s.errors.sd_one},
                              {"mean_two", s.errors.mean_two},
                              {"sd_two", s.errors.sd_two},
                              {"df", s.errors.df}}},
                  {"m", s.m},
                  {"N", s.N},
                  {"n", s.n},
                  {"S", s.S},
                  {"beta", {s.beta0, s.beta1}},
                  {"area_sd", s.area_sd},
                  {"seed", s.seed},
                  {"methods", method_names},
                  {"chain", hbsae::io::to_json(opts.chain)},
                  {"out", g.out}};
    run.finish("simulate", resolved, s.seed);

    if (!g.quiet) {
        std::cout << "scenario " << s.name << " (" << table.error_label << "), S=" << s.S << ", m=" << s.m << "\n";
        for (const auto& mm : table.methods)
            std::cout << "  " << hbsae::to_string(mm.method) << "  eM " << mm.mean.mse << "  eC90 " << mm.mean.noncoverage90
                      << "  L90 " << mm.mean.length90 << "\n";
    }
    return 0;
}

// Area point estimates from a fit report (report.json) or an areas.csv.
std::pair<std::vector<std::string>, std::vector<double>> read_estimates(const std::string& path) {
    std::vector<std::string> ids;
    std::vector<double> est;
    if (fs::path(path).extension() == ".json") {
        std::ifstream in(path);
        if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
        json j;
        try {
            j = json::parse(in);
            for (const auto& a : j.at("areas")) {
                ids.push_back(a.at("area_id").get<std::string>());
                est.push_back(a.at("point_estimate").get<double>());
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, path + ": " + e.what());
        }
    } else {
        const auto t = hbsae::io::read_csv(path);
        const int id_col = t.column("area_id"), est_col = t.column("point_estimate");
        if (id_col < 0 || est_col < 0) fail(ErrorCode::ParseError, path + ": needs area_id and point_estimate columns");
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            ids.push_back(t.rows[r][id_col]);
            est.push_back(hbsae::io::parse_number(t.rows[r][est_col], path + " row " + std::to_string(r + 1)));
        }
    }
    return {ids, est};
}

int cmd_evaluate(const GlobalFlags& g, const EvaluateFlags& f) {
    if (f.reports.empty()) fail(ErrorCode::InvalidConfig, "at least one --report method=path is required");
    if (f.population.empty() == f.truth.empty()) fail(ErrorCode::InvalidConfig, "give exactly one of --population or --truth");

    RunDirectory run(g.out);
    hbsae::TruthFrame truth;
    if (!f.truth.empty()) {
        run.add_input("truth", f.truth);
        truth = hbsae::io::truth_from_csv(hbsae::io::read_csv(f.truth), f.truth);
    } else {
        run.add_input("population", f.population);
        const auto pop = hbsae::io::population_from_csv(hbsae::io::read_csv(f.population), f.population);
        truth = hbsae::geometric_means(hbsae::group_by_area(pop.area_ids, pop.y), f.population);
    }

    std::vector<hbsae::io::PerformanceRow> rows;
    json report_map = json::object();
    for (const auto& spec : f.reports) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            fail(ErrorCode::InvalidConfig, "--report expects method=path, got '" + spec + "'");
        const std::string method = spec.substr(0, eq), path = spec.substr(eq + 1);
        run.add_input("report:" + method, path);
        const auto [ids, est] = read_estimates(path);
        rows.push_back({method, hbsae::deviation_measures(ids, est, truth)});
        report_map[method] = path;
    }
    run.write("performance.csv", [&](std::ostream& os) { hbsae::io::write_performance_csv(os, rows); });

    json resolved{{"command", "evaluate"},
                  {"reports", report_map},
                  {"truth", f.truth.empty() ? json(nullptr) : json(f.truth)},
                  {"population", f.population.empty() ? json(nullptr) : json(f.population)},
                  {"out", g.out}};
    run.finish("evaluate", resolved, g.seed.value_or(0));

    if (!g.quiet) {
        std::cout << "method      AAD          ASD          AARD   ASRD\n";
        for (const auto& r : rows)
            std::cout << std::left << std::setw(8) << r.method << std::right << std::setw(10) << std::setprecision(6)
                      << r.measures.aad << "  " << std::setw(12) << r.measures.asd << "  " << std::fixed
                      << std::setprecision(2) << r.measures.aard << "   " << r.measures.asrd << std::defaultfloat << "\n";
    }
    return 0;
}

void report_error(std::string_view code, const std::string& message) {
    std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical-Bayes small-area estimation under the nested-error regression model"};
    app.set_version_flag("--version", std::string(hbsae::kVersion));
    app.set_config("--config", "", "TOML/INI file of option values; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--seed", g.seed, "Base seed");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--chains", g.chains, "Number of chains");
    app.add_option("--draws", g.draws, "Retained draws per chain");
    app.add_option("--burn-in", g.burn_in, "Burn-in iterations per chain");
    app.add_option("--thin", g.thin, "Keep every k-th iteration");
    app.add_flag("--quiet", g.quiet, "Suppress the console summary");

    FitFlags ff;
    auto* fit = app.add_subcommand("fit", "Fit one model to a unit-level sample");
    fit->add_option("--model", ff.model, "dg, cdm or gdm")->capture_default_str();
    fit->add_option("--units", ff.units, "Sample CSV: area_id,y,x1,...");
    fit->add_option("--areas", ff.areas, "Area CSV: area_id,N,xbar1,...");
    fit->add_option("--population", ff.population, "Population listing with the units schema, in place of --areas");
    fit->add_option("--intercept", ff.intercept, "Prepend an intercept column")->capture_default_str();
    fit->add_option("--log-transform", ff.log_transform, "Fit on log(y) and log(x)")->capture_default_str();
    fit->add_option("--areas-scale", ff.areas_scale, "Scale of the area means: original or log");
    fit->add_option("--levels", ff.levels, "Credible interval levels")->delimiter(',')->capture_default_str();
    fit->add_flag("--dump-draws", ff.dump_draws, "Also write draws.csv");
    fit->add_flag("--allow-unsampled", ff.allow_unsampled, "Accept areas with no sampled units");

    SimulateFlags sf;
    auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo design-based study");
    sim->add_option("--scenario", sf.scenario, "i, ii, iii, iv or v")->capture_default_str();
    sim->add_flag("--full-scale", sf.full_scale, "m=40, N=200, S=100 instead of the desk-scale defaults");
    sim->add_option("--S", sf.S, "Replicates");
    sim->add_option("--m", sf.m, "Areas");
    sim->add_option("--N", sf.N, "Population units per area");
    sim->add_option("--n", sf.n, "Sampled units per area");
    sim->add_option("--methods", sf.methods, "Comma-separated methods")->capture_default_str();
    sim->add_option("--workers", sf.workers, "Worker threads, 0 for all cores")->capture_default_str();
    sim->add_option("--errors", sf.error_kind, "Override the error family: normal, mixture, t or zero");
    sim->add_option("--p-one", sf.p_one, "Mixture weight of component one");
    sim->add_option("--sd-one", sf.sd_one, "SD of component one (or of the normal errors)");
    sim->add_option("--mean-two", sf.mean_two, "Mean of component two");
    sim->add_option("--sd-two", sf.sd_two, "SD of component two");
    sim->add_option("--df", sf.df, "Degrees of freedom of t errors");

    EvaluateFlags ef;
    auto* eval = app.add_subcommand("evaluate", "Score area estimates against known targets");
    eval->add_option("--report", ef.reports, "method=path to report.json or areas.csv (repeatable)");
    eval->add_option("--population", ef.population, "Population listing; targets are per-area geometric means");
    eval->add_option("--truth", ef.truth, "CSV of area_id,truth");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("InvalidConfig", e.what());
        return 2;
    }

    try {
        if (*fit) return cmd_fit(g, ff);
        if (*sim) return cmd_simulate(g, sf);
        return cmd_evaluate(g, ef);
    } catch (const hbsae::Error& e) {
        report_error(hbsae::to_string(e.code()), e.detail());
        return hbsae::is_sampler_failure(e.code()) ? 3 : 2;
    } catch (const std::exception& e) {
        report_error("InternalError", e.what());
        return 3;
    }
}
