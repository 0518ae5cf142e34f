// Fits the three models to the bundled corn data and prints county estimates.

#include "hbsae/hbsae.hpp"

#include <cstdio>

using namespace hbsae;

int main(int argc, char** argv) {
    const std::string units = argc > 1 ? argv[1] : std::string(HBSAE_DATA_DIR) + "/corn_units.csv";
    const std::string areas = std::string(HBSAE_DATA_DIR) + "/corn_areas.csv";
    try {
        const AreaFrame frame = io::areas_from_csv(io::read_csv(areas), true, CovariateScale::Original);
        const Dataset data = validate_dataset(io::units_from_csv(io::read_csv(units), true), frame);

        std::vector<PosteriorReport> reports;
        for (Variant v : {Variant::DG, Variant::CDM, Variant::GDM}) {
            ModelSpec spec;
            spec.variant = v;
            reports.push_back(make_report(fit(data, frame, spec), data, {0.9}));
        }

        std::printf("%-12s %3s   %13s %13s %13s\n", "county", "n", "DG", "CDM", "GDM");
        for (int i = 0; i < data.m(); ++i) {
            std::printf("%-12s %3d", data.area_ids[i].c_str(), data.n_per_area[i]);
            for (const auto& r : reports) std::printf("   %6.1f (%4.1f)", r.areas[i].mean, r.areas[i].sd);
            std::printf("\n");
        }
        for (const auto& p : reports.back().params)
            std::printf("GDM %-10s mean %9.3f  median %9.3f\n", p.name.c_str(), p.mean, p.median);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
    return 0;
}
