#pragma once

// Deviation of area-level estimates from known area-level targets.

#include "hbsae/error.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace hbsae {

struct TruthFrame {
    std::vector<std::string> ids;
    std::vector<double> values;
    std::string source;

    int size() const { return static_cast<int>(ids.size()); }
};

struct AreaResponses {
    std::string area_id;
    std::vector<double> y;
};

/// Geometric mean of each area's responses, via the mean of logs.
inline TruthFrame geometric_means(const std::vector<AreaResponses>& population, std::string source = "geometric_mean") {
    TruthFrame t;
    t.source = std::move(source);
    for (const auto& area : population) {
        if (area.y.empty()) fail(ErrorCode::EmptyData, "area '" + area.area_id + "' has no responses");
        double s = 0.0;
        for (double y : area.y) {
            if (!(y > 0)) fail(ErrorCode::NonPositiveValue, "area '" + area.area_id + "' has a response <= 0");
            s += std::log(y);
        }
        t.ids.push_back(area.area_id);
        t.values.push_back(std::exp(s / static_cast<double>(area.y.size())));
    }
    return t;
}

/// Groups a long (area_id, y) listing by area, keeping first-appearance order.
inline std::vector<AreaResponses> group_by_area(const std::vector<std::string>& ids, const std::vector<double>& y) {
    std::vector<AreaResponses> out;
    std::map<std::string, std::size_t> where;
    for (std::size_t r = 0; r < ids.size(); ++r) {
        auto [it, inserted] = where.emplace(ids[r], out.size());
        if (inserted) out.push_back({ids[r], {}});
        out[it->second].y.push_back(y[r]);
    }
    return out;
}

struct DeviationMeasures {
    double aad = 0.0;
    double asd = 0.0;
    double aard = 0.0;
    double asrd = 0.0;
};

/// Average absolute / squared / absolute-relative / squared-relative deviation
/// over the areas of `truth`. `estimates` must cover exactly the same areas.
inline DeviationMeasures deviation_measures(const std::vector<std::string>& ids, const std::vector<double>& estimates,
                                            const TruthFrame& truth) {
    if (ids.size() != estimates.size()) fail(ErrorCode::InvalidParameter, "ids and estimates differ in length");
    std::map<std::string, double> est;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (!est.emplace(ids[i], estimates[i]).second) fail(ErrorCode::AreaMismatch, "duplicate area '" + ids[i] + "'");
    if (est.size() != truth.ids.size()) fail(ErrorCode::AreaMismatch, "estimates and truth cover different area sets");
    if (truth.ids.empty()) fail(ErrorCode::EmptyData, "no areas to evaluate");

    DeviationMeasures d;
    for (int i = 0; i < truth.size(); ++i) {
        auto it = est.find(truth.ids[i]);
        if (it == est.end()) fail(ErrorCode::AreaMismatch, "no estimate for area '" + truth.ids[i] + "'");
        const double t = truth.values[i];
        if (!(t > 0)) fail(ErrorCode::NonPositiveTruth, "truth for area '" + truth.ids[i] + "' is not positive");
        const double dev = it->second - t;
        d.aad += std::abs(dev);
        d.asd += dev * dev;
        d.aard += std::abs(dev) / t;
        d.asrd += dev * dev / (t * t);
    }
    const double m = static_cast<double>(truth.size());
    d.aad /= m;
    d.asd /= m;
    d.aard /= m;
    d.asrd /= m;
    return d;
}

} // namespace hbsae
