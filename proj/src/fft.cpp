#include "cryoquery/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace cq::fft {

namespace {

std::mutex g_plan_mutex;

struct PlanKey {
    int rank;
    int d;
    bool inverse;
    bool operator<(const PlanKey& o) const {
        if (rank != o.rank) return rank < o.rank;
        if (d != o.d) return d < o.d;
        return inverse < o.inverse;
    }
};

// FFTW_UNALIGNED lets one cached plan execute on any caller buffer.
fftw_plan get_plan(int rank, int d, bool inverse) {
    static std::map<PlanKey, fftw_plan> cache;
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    const PlanKey key{rank, d, inverse};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    const size_t n = rank == 2 ? static_cast<size_t>(d) * d : static_cast<size_t>(d) * d * d;
    std::vector<std::complex<double>> a(n), b(n);
    auto* in = reinterpret_cast<fftw_complex*>(a.data());
    auto* out = reinterpret_cast<fftw_complex*>(b.data());
    const int sign = inverse ? FFTW_BACKWARD : FFTW_FORWARD;
    fftw_plan p = rank == 2 ? fftw_plan_dft_2d(d, d, in, out, sign, FFTW_ESTIMATE | FFTW_UNALIGNED)
                            : fftw_plan_dft_3d(d, d, d, in, out, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    cache[key] = p;
    return p;
}

}  // namespace

void dft2(int d, const std::complex<double>* in, std::complex<double>* out, bool inverse) {
    fftw_plan p = get_plan(2, d, inverse);
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
}

void dft3(int d, const std::complex<double>* in, std::complex<double>* out, bool inverse) {
    fftw_plan p = get_plan(3, d, inverse);
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
}

std::vector<std::complex<double>> fft2_real(const float* img, int d) {
    const size_t n = static_cast<size_t>(d) * d;
    std::vector<std::complex<double>> in(n), out(n);
    for (size_t i = 0; i < n; ++i) in[i] = img[i];
    dft2(d, in.data(), out.data(), false);
    return out;
}

}  // namespace cq::fft
