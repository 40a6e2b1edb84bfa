#include "cryoquery/metadata.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "cryoquery/errors.hpp"
#include "cryoquery/mrc.hpp"

namespace cq::meta {

namespace {

const char* kRotCols[9] = {"r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t");
        s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }
    return out;
}

double parse_num(const std::string& s, long line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ParseError("metadata: cannot parse number '" + s + "'", line);
    return v;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

MetadataFile read_metadata(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(f, line)) throw ParseError("metadata: empty file", 1);
    const auto header = split_csv(line);
    std::unordered_map<std::string, int> col;
    for (size_t i = 0; i < header.size(); ++i) col[header[i]] = static_cast<int>(i);
    if (!col.count("idx")) throw ParseError("metadata: missing 'idx' column", 1);

    bool has_rot = true;
    for (const char* c : kRotCols) has_rot = has_rot && col.count(c);
    const bool has_trans = col.count("tx_px") && col.count("ty_px");

    MetadataFile out;
    long lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw ParseError("metadata: expected " + std::to_string(header.size()) +
                                 " columns, got " + std::to_string(cells.size()),
                             lineno);
        auto cell = [&](const char* name) -> const std::string& {
            return cells[static_cast<size_t>(col.at(name))];
        };

        ParticleRecord r;
        r.idx = static_cast<long>(parse_num(cell("idx"), lineno));
        if (has_rot) {
            Eigen::Matrix3d m;
            for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = parse_num(cell(kRotCols[i]), lineno);
            r.rotation = m;
            const double defect = geo::orthogonality_defect(m);
            if (defect > 1e-3)
                out.warnings.push_back("row idx " + std::to_string(r.idx) +
                                       ": rotation fails SO(3) validation, defect " + fmt(defect));
        }
        if (has_trans)
            r.translation = Eigen::Vector2d(parse_num(cell("tx_px"), lineno),
                                            parse_num(cell("ty_px"), lineno));
        if (col.count("defocus_A")) r.defocus_A = parse_num(cell("defocus_A"), lineno);
        if (col.count("cs_mm")) r.cs_mm = parse_num(cell("cs_mm"), lineno);
        if (col.count("kv")) r.kv = parse_num(cell("kv"), lineno);
        if (col.count("amp_contrast")) r.amp_contrast = parse_num(cell("amp_contrast"), lineno);
        if (col.count("bfactor_A2")) r.bfactor_A2 = parse_num(cell("bfactor_A2"), lineno);
        if (col.count("state_id")) r.state_id = static_cast<int>(parse_num(cell("state_id"), lineno));
        if (col.count("snr")) r.snr = parse_num(cell("snr"), lineno);
        out.records.push_back(std::move(r));
    }
    return out;
}

void write_metadata(const std::vector<ParticleRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    if (records.empty()) {
        f << "idx\n";
        return;
    }
    const ParticleRecord& first = records.front();
    std::ostringstream head;
    head << "idx";
    if (first.rotation)
        for (const char* c : kRotCols) head << "," << c;
    if (first.translation) head << ",tx_px,ty_px";
    if (first.defocus_A) head << ",defocus_A";
    if (first.cs_mm) head << ",cs_mm";
    if (first.kv) head << ",kv";
    if (first.amp_contrast) head << ",amp_contrast";
    if (first.bfactor_A2) head << ",bfactor_A2";
    if (first.state_id) head << ",state_id";
    if (first.snr) head << ",snr";
    f << head.str() << "\n";

    for (const auto& r : records) {
        if (static_cast<bool>(r.rotation) != static_cast<bool>(first.rotation) ||
            static_cast<bool>(r.translation) != static_cast<bool>(first.translation))
            throw ValidationError("write_metadata: inconsistent optional fields across records");
        f << r.idx;
        if (r.rotation)
            for (int i = 0; i < 9; ++i) f << "," << fmt((*r.rotation)(i / 3, i % 3));
        if (r.translation) f << "," << fmt(r.translation->x()) << "," << fmt(r.translation->y());
        if (r.defocus_A) f << "," << fmt(*r.defocus_A);
        if (r.cs_mm) f << "," << fmt(*r.cs_mm);
        if (r.kv) f << "," << fmt(*r.kv);
        if (r.amp_contrast) f << "," << fmt(*r.amp_contrast);
        if (r.bfactor_A2) f << "," << fmt(*r.bfactor_A2);
        if (r.state_id) f << "," << *r.state_id;
        if (r.snr) f << "," << fmt(*r.snr);
        f << "\n";
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

bool ParticleDataset::has_poses() const {
    return !records.empty() && records.front().rotation && records.front().translation;
}

bool ParticleDataset::has_ctf() const {
    return !records.empty() && records.front().defocus_A && records.front().kv;
}

bool ParticleDataset::has_states() const {
    return !records.empty() && records.front().state_id.has_value();
}

ParticleDataset load_dataset(const std::string& stack_path, const std::string& metadata_path) {
    ParticleDataset ds;
    ds.stack = mrc::read_stack(stack_path);
    MetadataFile mf = read_metadata(metadata_path);
    ds.records = std::move(mf.records);
    if (static_cast<int>(ds.records.size()) != ds.stack.count)
        throw ValidationError("dataset: stack has " + std::to_string(ds.stack.count) +
                              " images but metadata has " + std::to_string(ds.records.size()) +
                              " rows");
    return ds;
}

}  // namespace cq::meta
