// Generates Gaussian-blob phantom state volumes (MRC) for demos and
// end-to-end runs: a rigid body plus an arm that moves between states.

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "cryoquery/mrc.hpp"
#include "cryoquery/phantom.hpp"

int main(int argc, char** argv) {
    CLI::App app{"make_phantom: write synthetic multi-state density volumes"};
    int d = 32;
    double pixel = 1.6;
    int states = 2;
    std::string prefix = "phantom";
    app.add_option("--size", d, "volume side in voxels");
    app.add_option("--pixel", pixel, "pixel size in Angstrom");
    app.add_option("--states", states, "number of conformational states");
    app.add_option("--prefix", prefix, "output path prefix");
    CLI11_PARSE(app, argc, argv);

    const auto vols = cq::phantom::make_states(d, pixel, states);
    for (size_t s = 0; s < vols.size(); ++s) {
        const std::string path = prefix + "_state" + std::to_string(s) + ".mrc";
        cq::mrc::write_volume(vols[s], path);
        std::printf("%s\n", path.c_str());
    }
    return 0;
}
