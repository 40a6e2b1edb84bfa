#include "cryoquery/mrc.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "cryoquery/errors.hpp"

namespace cq::mrc {

namespace {

constexpr size_t kHeaderBytes = 1024;
constexpr std::int32_t kModeFloat32 = 2;

struct Header {
    std::int32_t nx = 0, ny = 0, nz = 0;
    std::int32_t mode = kModeFloat32;
    std::int32_t nxstart = 0, nystart = 0, nzstart = 0;
    std::int32_t mx = 0, my = 0, mz = 0;
    float cella[3] = {0, 0, 0};
    float cellb[3] = {90, 90, 90};
    std::int32_t mapc = 1, mapr = 2, maps = 3;
    float dmin = 0, dmax = 0, dmean = 0;
    std::int32_t ispg = 0;
    std::int32_t nsymbt = 0;
    char extra[100] = {};
    float origin[3] = {0, 0, 0};
    char map[4] = {'M', 'A', 'P', ' '};
    unsigned char machst[4] = {0x44, 0x44, 0x00, 0x00};
    float rms = 0;
    std::int32_t nlabl = 0;
    char labels[800] = {};
};
static_assert(sizeof(Header) == kHeaderBytes, "MRC header must be exactly 1024 bytes");

void swap4(void* p) {
    auto* b = static_cast<unsigned char*>(p);
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
}

void swap_header(Header& h) {
    swap4(&h.nx); swap4(&h.ny); swap4(&h.nz); swap4(&h.mode);
    swap4(&h.nxstart); swap4(&h.nystart); swap4(&h.nzstart);
    swap4(&h.mx); swap4(&h.my); swap4(&h.mz);
    for (float& f : h.cella) swap4(&f);
    for (float& f : h.cellb) swap4(&f);
    swap4(&h.mapc); swap4(&h.mapr); swap4(&h.maps);
    swap4(&h.dmin); swap4(&h.dmax); swap4(&h.dmean);
    swap4(&h.ispg); swap4(&h.nsymbt);
    for (float& f : h.origin) swap4(&f);
    swap4(&h.rms); swap4(&h.nlabl);
}

void fill_stats(Header& h, const std::vector<float>& v) {
    if (v.empty()) return;
    double mn = v[0], mx = v[0], sum = 0.0;
    for (float x : v) {
        mn = std::min<double>(mn, x);
        mx = std::max<double>(mx, x);
        sum += x;
    }
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (float x : v) ss += (x - mean) * (x - mean);
    h.dmin = static_cast<float>(mn);
    h.dmax = static_cast<float>(mx);
    h.dmean = static_cast<float>(mean);
    h.rms = static_cast<float>(std::sqrt(ss / static_cast<double>(v.size())));
}

void write_raw(const std::string& path, const Header& h, const std::vector<float>& values) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(&h), sizeof(h));
    f.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace

MrcData read_mrc(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    Header h;
    f.read(reinterpret_cast<char*>(&h), sizeof(h));
    if (f.gcount() != static_cast<std::streamsize>(kHeaderBytes))
        throw CorruptFileError("'" + path + "': file shorter than the 1024-byte MRC header");

    bool swapped = false;
    const bool little = h.machst[0] == 0x44;
    const bool big = h.machst[0] == 0x11;
    if (big) {
        swapped = true;
    } else if (!little) {
        // no usable stamp: fall back to a sanity check on the dimensions
        if (h.nx <= 0 || h.nx > (1 << 20)) swapped = true;
    }
    if (swapped) swap_header(h);

    if (h.nx <= 0 || h.ny <= 0 || h.nz <= 0)
        throw CorruptFileError("'" + path + "': non-positive dimensions in header");
    if (h.mode != kModeFloat32)
        throw UnsupportedFormatError("'" + path + "': MRC mode " + std::to_string(h.mode) +
                                     " not supported (only mode 2, float32)");

    const std::uint64_t n = static_cast<std::uint64_t>(h.nx) * h.ny * h.nz;
    MrcData out;
    out.nx = h.nx;
    out.ny = h.ny;
    out.nz = h.nz;
    const std::int32_t mx = h.mx > 0 ? h.mx : h.nx;
    out.pixel_size = h.cella[0] > 0.0f ? static_cast<double>(h.cella[0]) / mx : 1.0;
    out.values.resize(n);

    if (h.nsymbt > 0) f.seekg(h.nsymbt, std::ios::cur);  // skip extended header
    f.read(reinterpret_cast<char*>(out.values.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::uint64_t>(f.gcount()) != n * sizeof(float))
        throw CorruptFileError("'" + path + "': truncated data section");
    if (swapped)
        for (float& v : out.values) swap4(&v);
    return out;
}

DensityVolume read_volume(const std::string& path) {
    MrcData m = read_mrc(path);
    if (m.nx != m.ny || m.ny != m.nz)
        throw UnsupportedFormatError("'" + path + "': expected a cubic volume, got " +
                                     std::to_string(m.nx) + "x" + std::to_string(m.ny) + "x" +
                                     std::to_string(m.nz));
    DensityVolume v(m.nx, m.pixel_size);
    v.values = std::move(m.values);
    return v;
}

ImageStack read_stack(const std::string& path) {
    MrcData m = read_mrc(path);
    if (m.nx != m.ny)
        throw UnsupportedFormatError("'" + path + "': expected square images");
    ImageStack s(m.nx, m.nz, m.pixel_size);
    s.pixels = std::move(m.values);
    return s;
}

void write_volume(const DensityVolume& v, const std::string& path) {
    for (float x : v.values)
        if (!std::isfinite(x)) throw ValidationError("write_volume: non-finite values");
    Header h;
    h.nx = h.ny = h.nz = v.d;
    h.mx = h.my = h.mz = v.d;
    h.ispg = 1;  // volume
    for (float& c : h.cella) c = static_cast<float>(v.d * v.pixel_size);
    fill_stats(h, v.values);
    write_raw(path, h, v.values);
}

void write_stack(const ImageStack& s, const std::string& path) {
    for (float x : s.pixels)
        if (!std::isfinite(x)) throw ValidationError("write_stack: non-finite values");
    Header h;
    h.nx = s.d;
    h.ny = s.d;
    h.nz = s.count;
    h.mx = s.d;
    h.my = s.d;
    h.mz = s.count;
    h.ispg = 0;  // image stack
    h.cella[0] = static_cast<float>(s.d * s.pixel_size);
    h.cella[1] = static_cast<float>(s.d * s.pixel_size);
    h.cella[2] = static_cast<float>(s.count * s.pixel_size);
    fill_stats(h, s.pixels);
    write_raw(path, h, s.pixels);
}

}  // namespace cq::mrc
