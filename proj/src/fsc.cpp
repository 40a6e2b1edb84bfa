#include "cryoquery/fsc.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "cryoquery/errors.hpp"
#include "cryoquery/fft.hpp"

namespace cq::eval {

FscCurve fsc(const DensityVolume& a, const DensityVolume& b) {
    if (a.d != b.d) throw DimensionError("fsc: volume sizes differ");
    if (std::abs(a.pixel_size - b.pixel_size) > 1e-9 * a.pixel_size)
        throw DimensionError("fsc: pixel sizes differ");
    const int d = a.d;
    const size_t n = static_cast<size_t>(d) * d * d;

    std::vector<std::complex<double>> buf(n), fa(n), fb(n);
    for (size_t i = 0; i < n; ++i) buf[i] = a.values[i];
    fft::dft3(d, buf.data(), fa.data(), false);
    for (size_t i = 0; i < n; ++i) buf[i] = b.values[i];
    fft::dft3(d, buf.data(), fb.data(), false);

    const int n_shells = d / 2;  // shells 1..D/2
    std::vector<double> num(static_cast<size_t>(n_shells) + 1, 0.0);
    std::vector<double> pa(static_cast<size_t>(n_shells) + 1, 0.0);
    std::vector<double> pb(static_cast<size_t>(n_shells) + 1, 0.0);
    std::vector<long> count(static_cast<size_t>(n_shells) + 1, 0);

    size_t at = 0;
    for (int kz = 0; kz < d; ++kz) {
        const int fz = kz <= d / 2 ? kz : kz - d;
        for (int ky = 0; ky < d; ++ky) {
            const int fy = ky <= d / 2 ? ky : ky - d;
            for (int kx = 0; kx < d; ++kx, ++at) {
                const int fx = kx <= d / 2 ? kx : kx - d;
                const double r = std::sqrt(static_cast<double>(fx) * fx +
                                           static_cast<double>(fy) * fy +
                                           static_cast<double>(fz) * fz);
                const int shell = static_cast<int>(std::lround(r));
                if (shell < 1 || shell > n_shells) continue;
                num[static_cast<size_t>(shell)] +=
                    (fa[at] * std::conj(fb[at])).real();
                pa[static_cast<size_t>(shell)] += std::norm(fa[at]);
                pb[static_cast<size_t>(shell)] += std::norm(fb[at]);
                count[static_cast<size_t>(shell)] += 1;
            }
        }
    }

    FscCurve curve;
    curve.pixel_size = a.pixel_size;
    for (int s = 1; s <= n_shells; ++s) {
        curve.frequency.push_back(static_cast<double>(s) / (d * a.pixel_size));
        const double denom = std::sqrt(pa[static_cast<size_t>(s)] * pb[static_cast<size_t>(s)]);
        double c = denom > 0.0 ? num[static_cast<size_t>(s)] / denom : 0.0;
        c = std::max(-1.0, std::min(1.0, c));
        curve.correlation.push_back(c);
        curve.shell_count.push_back(count[static_cast<size_t>(s)]);
    }
    return curve;
}

ResolutionResult resolution(const FscCurve& curve, double threshold) {
    if (curve.frequency.empty()) throw ValidationError("resolution: empty curve");
    ResolutionResult out;
    bool any_above = false;
    for (double c : curve.correlation) any_above = any_above || c >= threshold;
    if (!any_above) {
        out.unresolved = true;
        out.angstrom = 0.0;
        return out;
    }
    // walk up from DC (implicit shell at f=0 with correlation 1)
    double prev_f = 0.0, prev_c = 1.0;
    for (size_t i = 0; i < curve.correlation.size(); ++i) {
        const double c = curve.correlation[i];
        const double f = curve.frequency[i];
        if (c < threshold) {
            const double t = (prev_c - threshold) / (prev_c - c);
            const double fx = prev_f + t * (f - prev_f);
            out.angstrom = 1.0 / fx;
            return out;
        }
        prev_f = f;
        prev_c = c;
    }
    out.at_nyquist = true;
    out.angstrom = 2.0 * curve.pixel_size;
    return out;
}

void write_fsc_csv(const FscCurve& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "frequency_invA,correlation,shell_count\n";
    char buf[96];
    for (size_t i = 0; i < curve.frequency.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%ld\n", curve.frequency[i],
                      curve.correlation[i], curve.shell_count[i]);
        f << buf;
    }
}

FscCurve read_fsc_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");
    FscCurve curve;
    std::string line;
    if (!std::getline(f, line)) throw ParseError("fsc csv: empty file", 1);
    long lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        double freq = 0.0, corr = 0.0;
        long cnt = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%ld", &freq, &corr, &cnt) != 3)
            throw ParseError("fsc csv: malformed row", lineno);
        curve.frequency.push_back(freq);
        curve.correlation.push_back(corr);
        curve.shell_count.push_back(cnt);
    }
    if (!curve.frequency.empty())
        curve.pixel_size = 0.5 / curve.frequency.back();  // last shell sits at Nyquist
    return curve;
}

}  // namespace cq::eval
