#pragma once

// File formats: unit/area/population/truth CSV inputs, report and metrics
// outputs. All numbers are written with std::to_chars (17 significant digits,
// '.' separator, independent of the global locale); lines end with '\n'.

#include "hbsae/domain.hpp"
#include "hbsae/engine.hpp"
#include "hbsae/evaluation.hpp"
#include "hbsae/inference.hpp"
#include "hbsae/simulation.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace hbsae::io {

using json = nlohmann::ordered_json;

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s, const std::string& where) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double x = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::ParseError, "cannot parse number '" + std::string(s) + "' in " + where);
    return x;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        return -1;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline CsvTable parse_csv(std::istream& in, const std::string& name) {
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_csv_line(line);
        if (!have_header) {
            if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            fail(ErrorCode::ParseError, name + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                                            std::to_string(fields.size()) + " fields, header has " +
                                            std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    if (!have_header) fail(ErrorCode::EmptyData, name + ": no header row");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    return parse_csv(in, path);
}

// --- inputs ----------------------------------------------------------------

/// units.csv: area_id,y,x1,...,xq. With `intercept`, a leading 1 is prepended to x.
inline std::vector<UnitRecord> units_from_csv(const CsvTable& t, bool intercept, const std::string& name = "units") {
    if (t.header.size() < 2 || t.header[0] != "area_id" || t.header[1] != "y")
        fail(ErrorCode::ParseError, name + ": header must start with area_id,y");
    const std::size_t q_raw = t.header.size() - 2;
    std::vector<UnitRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = name + " row " + std::to_string(r + 1);
        UnitRecord rec;
        rec.area_id = row[0];
        rec.y = parse_number(row[1], where);
        rec.x.resize(static_cast<Eigen::Index>(q_raw + (intercept ? 1 : 0)));
        Eigen::Index k = 0;
        if (intercept) rec.x[k++] = 1.0;
        for (std::size_t c = 0; c < q_raw; ++c) rec.x[k++] = parse_number(row[2 + c], where);
        out.push_back(std::move(rec));
    }
    return out;
}

/// areas.csv: area_id,N,xbar1,...,xbarq (original-scale or log-scale means).
inline AreaFrame areas_from_csv(const CsvTable& t, bool intercept, CovariateScale scale,
                                const std::string& name = "areas") {
    if (t.header.size() < 2 || t.header[0] != "area_id" || t.header[1] != "N")
        fail(ErrorCode::ParseError, name + ": header must start with area_id,N");
    const std::size_t q_raw = t.header.size() - 2;
    AreaFrame f;
    f.scale = scale;
    f.xbar.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(q_raw + (intercept ? 1 : 0)));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = name + " row " + std::to_string(r + 1);
        f.ids.push_back(row[0]);
        const double N = parse_number(row[1], where);
        if (N != std::floor(N) || N < 1) fail(ErrorCode::ParseError, where + ": N must be a positive integer");
        f.N.push_back(static_cast<long long>(N));
        Eigen::Index k = 0;
        if (intercept) f.xbar(static_cast<Eigen::Index>(r), k++) = 1.0;
        for (std::size_t c = 0; c < q_raw; ++c) f.xbar(static_cast<Eigen::Index>(r), k++) = parse_number(row[2 + c], where);
    }
    return f;
}

/// Unit-level population listing with the units.csv schema.
struct PopulationListing {
    std::vector<std::string> area_ids;  // per unit
    std::vector<double> y;
    Matrix X;  // raw covariates, no intercept
};

inline PopulationListing population_from_csv(const CsvTable& t, const std::string& name = "population") {
    const auto recs = units_from_csv(t, false, name);
    PopulationListing p;
    p.X.resize(static_cast<Eigen::Index>(recs.size()), recs.empty() ? 0 : recs.front().x.size());
    for (std::size_t r = 0; r < recs.size(); ++r) {
        p.area_ids.push_back(recs[r].area_id);
        p.y.push_back(recs[r].y);
        p.X.row(static_cast<Eigen::Index>(r)) = recs[r].x.transpose();
    }
    return p;
}

/// Area frame of a population listing: N_i and covariate means, on the original
/// or the log scale. Areas are listed in first-appearance order.
inline AreaFrame population_area_frame(const PopulationListing& p, bool intercept, CovariateScale scale) {
    AreaFrame f;
    f.scale = scale;
    std::vector<int> area;
    for (const auto& id : p.area_ids) {
        auto idx = f.index_of(id);
        if (!idx) {
            f.ids.push_back(id);
            f.N.push_back(0);
            idx = f.size() - 1;
        }
        ++f.N[*idx];
        area.push_back(*idx);
    }
    const Eigen::Index off = intercept ? 1 : 0;
    Matrix X(p.X.rows(), p.X.cols() + off);
    if (intercept) X.col(0).setOnes();
    X.rightCols(p.X.cols()) = p.X;
    if (scale == CovariateScale::Log) {
        f.xbar = log_covariate_means(X, area, f.size(), intercept ? std::optional<int>(0) : std::nullopt);
    } else {
        f.xbar = Matrix::Zero(f.size(), X.cols());
        for (Eigen::Index u = 0; u < X.rows(); ++u) f.xbar.row(area[u]) += X.row(u);
        for (int i = 0; i < f.size(); ++i) f.xbar.row(i) /= static_cast<double>(f.N[i]);
    }
    return f;
}

/// truth.csv: area_id,truth
inline TruthFrame truth_from_csv(const CsvTable& t, const std::string& name = "truth") {
    if (t.header.size() < 2 || t.header[0] != "area_id")
        fail(ErrorCode::ParseError, name + ": header must start with area_id");
    const int col = t.column("truth") >= 0 ? t.column("truth") : 1;
    TruthFrame f;
    f.source = name;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        f.ids.push_back(t.rows[r][0]);
        f.values.push_back(parse_number(t.rows[r][col], name + " row " + std::to_string(r + 1)));
    }
    return f;
}

// --- report outputs --------------------------------------------------------

inline json to_json(const ChainConfig& c) {
    return json{{"n_draws", c.n_draws}, {"burn_in", c.burn_in}, {"thin", c.thin}, {"n_chains", c.n_chains},
                {"seed", c.seed}};
}

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json to_json(const PosteriorReport& rep) {
    json j;
    j["provenance"] = {{"variant", to_string(rep.provenance.variant)},
                       {"config", to_json(rep.provenance.config)},
                       {"replicate", rep.provenance.replicate},
                       {"log_scale", rep.provenance.log_scale},
                       {"point_estimate", rep.provenance.log_scale ? "median" : "mean"}};
    j["levels"] = rep.levels;
    json areas = json::array();
    for (const auto& a : rep.areas) {
        json ja{{"area_id", a.area_id}, {"mean", a.mean}, {"sd", a.sd}, {"median", a.median},
                {"point_estimate", a.point_estimate}};
        json ivs = json::array();
        for (const auto& iv : a.intervals) ivs.push_back({{"level", iv.level}, {"lower", iv.lower}, {"upper", iv.upper}});
        ja["intervals"] = ivs;
        areas.push_back(ja);
    }
    j["areas"] = areas;
    json params = json::array();
    for (const auto& p : rep.params)
        params.push_back({{"name", p.name}, {"mean", p.mean}, {"sd", p.sd}, {"median", p.median}, {"iqr", p.iqr}});
    j["params"] = params;
    json units = json::array();
    for (const auto& u : rep.units) {
        json ju{{"area_id", u.area_id}, {"unit", u.unit_in_area}, {"source_row", u.source_row}, {"y", u.y}};
        if (u.membership) {
            ju["membership"] = *u.membership;
            ju["membership_raw"] = *u.membership_raw;
        }
        ju["standardized_residual"] = u.standardized_residual;
        units.push_back(ju);
    }
    j["units"] = units;
    json diag = json::array();
    for (const auto& d : rep.diagnostics)
        diag.push_back({{"name", d.name}, {"ess", number_or_null(d.ess)}, {"rhat", number_or_null(d.rhat)}});
    j["diagnostics"] = diag;
    j["clamp_count"] = rep.clamps;
    return j;
}

inline std::string level_tag(double level) {
    const double pct = std::round(level * 1000.0) / 10.0;
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, pct);
    return std::string(buf, res.ptr);
}

inline void write_areas_csv(std::ostream& os, const PosteriorReport& rep) {
    os << "area_id,point_estimate,mean,sd,median";
    for (double level : rep.levels) os << ",lower_" << level_tag(level) << ",upper_" << level_tag(level);
    os << '\n';
    for (const auto& a : rep.areas) {
        os << csv_escape(a.area_id) << ',' << format_number(a.point_estimate) << ',' << format_number(a.mean) << ','
           << format_number(a.sd) << ',' << format_number(a.median);
        for (const auto& iv : a.intervals) os << ',' << format_number(iv.lower) << ',' << format_number(iv.upper);
        os << '\n';
    }
}

inline void write_params_csv(std::ostream& os, const PosteriorReport& rep) {
    os << "name,mean,sd,median,iqr\n";
    for (const auto& p : rep.params)
        os << p.name << ',' << format_number(p.mean) << ',' << format_number(p.sd) << ',' << format_number(p.median)
           << ',' << format_number(p.iqr) << '\n';
}

inline void write_units_csv(std::ostream& os, const PosteriorReport& rep) {
    os << "area_id,unit,source_row,y";
    if (rep.has_membership()) os << ",membership,membership_raw";
    os << ",standardized_residual\n";
    for (const auto& u : rep.units) {
        os << csv_escape(u.area_id) << ',' << u.unit_in_area << ',' << u.source_row << ',' << format_number(u.y);
        if (rep.has_membership()) os << ',' << format_number(*u.membership) << ',' << format_number(*u.membership_raw);
        os << ',' << format_number(u.standardized_residual) << '\n';
    }
}

/// One row per retained draw: parameters, theta on the model scale, and
/// exp(theta) for log-scale fits.
inline void write_draws_csv(std::ostream& os, const ChainDraws& d) {
    auto names = d.parameter_names();
    os << "chain";
    for (const auto& n : names) os << ',' << csv_escape(n);
    for (const auto& id : d.area_ids) os << ',' << csv_escape("theta_" + id);
    if (d.log_scale)
        for (const auto& id : d.area_ids) os << ',' << csv_escape("exp_theta_" + id);
    os << '\n';
    Eigen::Index r = 0;
    for (std::size_t c = 0; c < d.chain_rows.size(); ++c) {
        for (int k = 0; k < d.chain_rows[c]; ++k, ++r) {
            os << c;
            for (Eigen::Index j = 0; j < d.params.cols(); ++j) os << ',' << format_number(d.params(r, j));
            for (Eigen::Index j = 0; j < d.theta.cols(); ++j) os << ',' << format_number(d.theta(r, j));
            if (d.log_scale)
                for (Eigen::Index j = 0; j < d.theta_original.cols(); ++j) os << ',' << format_number(d.theta_original(r, j));
            os << '\n';
        }
    }
}

// --- simulation outputs ----------------------------------------------------

inline const std::vector<std::pair<std::string, double AreaMetrics::*>>& metric_fields() {
    static const std::vector<std::pair<std::string, double AreaMetrics::*>> fields = {
        {"eB", &AreaMetrics::bias},
        {"eM", &AreaMetrics::mse},
        {"mean_posterior_var", &AreaMetrics::posterior_var},
        {"RE_V", &AreaMetrics::relative_bias_var},
        {"eC_90", &AreaMetrics::noncoverage90},
        {"eC_95", &AreaMetrics::noncoverage95},
        {"L_90", &AreaMetrics::length90},
        {"L_95", &AreaMetrics::length95},
    };
    return fields;
}

/// Long format: scenario,method,area,metric,value. Area "mean" carries the
/// across-area averages.
inline void write_metrics_csv(std::ostream& os, const MetricsTable& t) {
    os << "scenario,method,area,metric,value\n";
    for (const auto& mm : t.methods) {
        for (std::size_t i = 0; i < t.area_ids.size(); ++i)
            for (const auto& [name, field] : metric_fields())
                os << t.scenario << ',' << to_string(mm.method) << ',' << t.area_ids[i] << ',' << name << ','
                   << format_number(mm.areas[i].*field) << '\n';
        for (const auto& [name, field] : metric_fields())
            os << t.scenario << ',' << to_string(mm.method) << ",mean," << name << ',' << format_number(mm.mean.*field)
               << '\n';
    }
}

inline json to_json(const MetricsTable& t) {
    json j{{"scenario", t.scenario}, {"errors", t.error_label}, {"S", t.S}, {"areas", t.area_ids}};
    json methods = json::array();
    for (const auto& mm : t.methods) {
        json jm{{"method", to_string(mm.method)}};
        json per_area = json::object();
        json means = json::object();
        for (const auto& [name, field] : metric_fields()) {
            json col = json::array();
            for (const auto& a : mm.areas) col.push_back(number_or_null(a.*field));
            per_area[name] = col;
            means[name] = number_or_null(mm.mean.*field);
        }
        jm["per_area"] = per_area;
        jm["mean"] = means;
        methods.push_back(jm);
    }
    j["methods"] = methods;
    return j;
}

/// Panel data for plotting: one table per (figure, metric), columns are methods.
struct PlotPanel {
    std::string file;
    std::string metric;
};

inline const std::vector<PlotPanel>& plot_panels() {
    static const std::vector<PlotPanel> panels = {
        {"fig_bias.csv", "eB"},           {"fig_mse.csv", "eM"},
        {"fig_posterior_var.csv", "mean_posterior_var"}, {"fig_relative_bias_var.csv", "RE_V"},
        {"fig_noncoverage_90.csv", "eC_90"}, {"fig_noncoverage_95.csv", "eC_95"},
        {"fig_length_90.csv", "L_90"},     {"fig_length_95.csv", "L_95"},
    };
    return panels;
}

inline void write_plot_panel(std::ostream& os, const MetricsTable& t, const std::string& metric) {
    double AreaMetrics::*field = nullptr;
    for (const auto& [name, f] : metric_fields())
        if (name == metric) field = f;
    if (!field) fail(ErrorCode::InvalidParameter, "unknown metric '" + metric + "'");
    os << "# " << t.scenario << ": " << t.error_label << '\n';
    os << "area";
    for (const auto& mm : t.methods) os << ',' << to_string(mm.method);
    os << '\n';
    for (std::size_t i = 0; i < t.area_ids.size(); ++i) {
        os << t.area_ids[i];
        for (const auto& mm : t.methods) os << ',' << format_number(mm.areas[i].*field);
        os << '\n';
    }
    os << "mean";
    for (const auto& mm : t.methods) os << ',' << format_number(mm.mean.*field);
    os << '\n';
}

// --- evaluation outputs ----------------------------------------------------

struct PerformanceRow {
    std::string method;
    DeviationMeasures measures;
};

inline void write_performance_csv(std::ostream& os, const std::vector<PerformanceRow>& rows) {
    os << "method,AAD,ASD,AARD,ASRD\n";
    for (const auto& r : rows)
        os << csv_escape(r.method) << ',' << format_number(r.measures.aad) << ',' << format_number(r.measures.asd) << ','
           << format_number(r.measures.aard) << ',' << format_number(r.measures.asrd) << '\n';
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    out << contents;
    if (!out) fail(ErrorCode::IoError, "write to '" + path + "' failed");
}

template <typename Writer>
void write_with(const std::string& path, Writer&& writer) {
    std::ostringstream os;
    writer(os);
    write_file(path, os.str());
}

} // namespace hbsae::io
