// Runs one desk-scale simulation scenario and prints the across-area means.

#include "hbsae/hbsae.hpp"

#include <cstdio>
#include <cstdlib>

using namespace hbsae;

int main(int argc, char** argv) {
    const std::string name = argc > 1 ? argv[1] : "iii";
    try {
        ScenarioSpec scenario = named_scenario(name);
        if (argc > 2) scenario.S = std::atoi(argv[2]);
        scenario.seed = 7;
        const MetricsTable t = run_study(scenario, {Variant::DG, Variant::CDM, Variant::GDM});
        std::printf("scenario %s, errors %s, S = %d\n", t.scenario.c_str(), t.error_label.c_str(), t.S);
        std::printf("%-6s %9s %9s %9s %9s %9s\n", "method", "eB", "eM", "RE_V", "eC_90", "L_90");
        for (const auto& mm : t.methods)
            std::printf("%-6s %9.4f %9.4f %9.4f %9.4f %9.4f\n", std::string(to_string(mm.method)).c_str(),
                        mm.mean.bias, mm.mean.mse, mm.mean.relative_bias_var, mm.mean.noncoverage90, mm.mean.length90);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
    return 0;
}
