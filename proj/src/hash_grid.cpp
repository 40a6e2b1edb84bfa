#include "cryoquery/hash_grid.hpp"

#include <cmath>

#include "cryoquery/errors.hpp"
#include "cryoquery/nn_init.hpp"

namespace cq::field {

std::vector<int> level_resolutions(const HashGridConfig& cfg) {
    if (cfg.base_resolution < 1 || cfg.levels < 1)
        throw ValidationError("hash grid: base resolution and level count must be positive");
    const int n_max = cfg.max_resolution > 0 ? cfg.max_resolution : cfg.base_resolution;
    std::vector<int> res(static_cast<size_t>(cfg.levels));
    const double b = cfg.levels > 1
                         ? std::pow(static_cast<double>(n_max) / cfg.base_resolution,
                                    1.0 / (cfg.levels - 1))
                         : 1.0;
    int prev = cfg.base_resolution;
    for (int l = 0; l < cfg.levels; ++l) {
        int n = static_cast<int>(std::floor(cfg.base_resolution * std::pow(b, l)));
        n = std::max(n, prev);  // keep non-decreasing under floor jitter
        res[static_cast<size_t>(l)] = n;
        prev = n;
    }
    return res;
}

std::uint32_t spatial_hash(std::uint32_t x, std::uint32_t y, std::uint32_t z, int log2_size) {
    const std::uint32_t h = x * 1u ^ y * 2654435761u ^ z * 805459861u;
    return h & ((1u << log2_size) - 1u);
}

namespace {

struct LevelGeom {
    int res;
    int stride;   // res + 1 (vertices per axis) for dense levels
    bool dense;
    int entries;
};

inline std::uint32_t corner_index(const LevelGeom& g, int cx, int cy, int cz, int log2_size) {
    if (g.dense)
        return static_cast<std::uint32_t>((cz * g.stride + cy) * g.stride + cx);
    return spatial_hash(static_cast<std::uint32_t>(cx), static_cast<std::uint32_t>(cy),
                        static_cast<std::uint32_t>(cz), log2_size);
}

}  // namespace

int SpatialField::lookup(ad::Tape& tape, int coords) const {
    const Tensor& tc = tape.val(coords);
    if (tc.rank() != 2 || tc.dim(1) != 3)
        throw DimensionError("hash lookup: coords must be [B,3]");
    const int B = tc.dim(0);
    const int L = cfg.levels;
    const int F = cfg.features_per_level;
    const int log2_size = cfg.log2_table_size;

    std::vector<LevelGeom> geom(static_cast<size_t>(L));
    std::vector<int> table_nodes(static_cast<size_t>(L));
    std::vector<int> parents;
    parents.reserve(static_cast<size_t>(L) + 1);
    parents.push_back(coords);
    for (int l = 0; l < L; ++l) {
        geom[static_cast<size_t>(l)] = {resolutions[static_cast<size_t>(l)],
                                        resolutions[static_cast<size_t>(l)] + 1,
                                        static_cast<bool>(dense[static_cast<size_t>(l)]),
                                        tables[static_cast<size_t>(l)]->value.dim(0)};
        table_nodes[static_cast<size_t>(l)] = tape.param(*tables[static_cast<size_t>(l)]);
        parents.push_back(table_nodes[static_cast<size_t>(l)]);
    }

    Tensor out({B, L * F});
    const float* cp = tc.values.data();
    for (int b = 0; b < B; ++b) {
        float xyz[3];
        for (int a = 0; a < 3; ++a) {
            float v = cp[static_cast<size_t>(b) * 3 + a];
            xyz[a] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
        float* orow = out.values.data() + static_cast<size_t>(b) * L * F;
        for (int l = 0; l < L; ++l) {
            const LevelGeom& g = geom[static_cast<size_t>(l)];
            const float* tab = tables[static_cast<size_t>(l)]->value.values.data();
            int i0[3];
            float fr[3];
            for (int a = 0; a < 3; ++a) {
                const float p = xyz[a] * g.res;
                int i = static_cast<int>(p);
                if (i > g.res - 1) i = g.res - 1;
                i0[a] = i;
                fr[a] = p - i;
            }
            float f0 = 0.0f, f1 = 0.0f;
            for (int dz2 = 0; dz2 < 2; ++dz2) {
                const float wz = dz2 ? fr[2] : 1.0f - fr[2];
                for (int dy = 0; dy < 2; ++dy) {
                    const float wy = dy ? fr[1] : 1.0f - fr[1];
                    const float wzy = wz * wy;
                    for (int dx = 0; dx < 2; ++dx) {
                        const float w = wzy * (dx ? fr[0] : 1.0f - fr[0]);
                        const std::uint32_t idx =
                            corner_index(g, i0[0] + dx, i0[1] + dy, i0[2] + dz2, log2_size);
                        f0 += w * tab[static_cast<size_t>(idx) * F];
                        f1 += w * tab[static_cast<size_t>(idx) * F + 1];
                    }
                }
            }
            orow[static_cast<size_t>(l) * F] = f0;
            orow[static_cast<size_t>(l) * F + 1] = f1;
        }
    }

    auto geom_copy = std::make_shared<std::vector<LevelGeom>>(std::move(geom));
    auto tnodes = std::make_shared<std::vector<int>>(std::move(table_nodes));
    return tape.make_node(
        std::move(out), std::move(parents),
        [coords, geom_copy, tnodes, B, L, F, log2_size](ad::Tape& t, int id) {
            const auto& g = t.grad_of(id);
            const float* cp = t.val(coords).values.data();
            const bool want_coord_grad = t.requires_grad(coords);
            float* cgrad = want_coord_grad ? t.grad_of(coords).data() : nullptr;
            for (int l = 0; l < L; ++l) {
                const int tnode = (*tnodes)[static_cast<size_t>(l)];
                const bool want_tab = t.requires_grad(tnode);
                if (!want_tab && !want_coord_grad) continue;
                const LevelGeom& lg = (*geom_copy)[static_cast<size_t>(l)];
                const float* tab = t.val(tnode).values.data();
                float* tgrad = want_tab ? t.grad_of(tnode).data() : nullptr;
                for (int b = 0; b < B; ++b) {
                    const float g0 = g[static_cast<size_t>(b) * L * F + static_cast<size_t>(l) * F];
                    const float g1 = g[static_cast<size_t>(b) * L * F + static_cast<size_t>(l) * F + 1];
                    if (g0 == 0.0f && g1 == 0.0f) continue;
                    float xyz[3];
                    bool clamped[3];
                    for (int a = 0; a < 3; ++a) {
                        const float v = cp[static_cast<size_t>(b) * 3 + a];
                        clamped[a] = v < 0.0f || v > 1.0f;
                        xyz[a] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                    }
                    int i0[3];
                    float fr[3];
                    for (int a = 0; a < 3; ++a) {
                        const float p = xyz[a] * lg.res;
                        int i = static_cast<int>(p);
                        if (i > lg.res - 1) i = lg.res - 1;
                        i0[a] = i;
                        fr[a] = p - i;
                    }
                    float dfdx[3] = {0.0f, 0.0f, 0.0f};
                    for (int dz2 = 0; dz2 < 2; ++dz2) {
                        const float wz = dz2 ? fr[2] : 1.0f - fr[2];
                        const float sz = dz2 ? 1.0f : -1.0f;
                        for (int dy = 0; dy < 2; ++dy) {
                            const float wy = dy ? fr[1] : 1.0f - fr[1];
                            const float sy = dy ? 1.0f : -1.0f;
                            for (int dx = 0; dx < 2; ++dx) {
                                const float wx = dx ? fr[0] : 1.0f - fr[0];
                                const float sx = dx ? 1.0f : -1.0f;
                                const std::uint32_t idx = corner_index(
                                    lg, i0[0] + dx, i0[1] + dy, i0[2] + dz2, log2_size);
                                const float w = wx * wy * wz;
                                if (want_tab) {
                                    tgrad[static_cast<size_t>(idx) * F] += w * g0;
                                    tgrad[static_cast<size_t>(idx) * F + 1] += w * g1;
                                }
                                if (want_coord_grad) {
                                    const float tv =
                                        g0 * tab[static_cast<size_t>(idx) * F] +
                                        g1 * tab[static_cast<size_t>(idx) * F + 1];
                                    dfdx[0] += sx * wy * wz * tv;
                                    dfdx[1] += sy * wx * wz * tv;
                                    dfdx[2] += sz * wx * wy * tv;
                                }
                            }
                        }
                    }
                    if (want_coord_grad) {
                        for (int a = 0; a < 3; ++a)
                            if (!clamped[a])
                                cgrad[static_cast<size_t>(b) * 3 + a] += dfdx[a] * lg.res;
                    }
                }
            }
        });
}

int SpatialField::head(ad::Tape& tape, int feats) const {
    const int w1 = tape.param(*head_w1);
    const int b1 = tape.param(*head_b1);
    const int w2 = tape.param(*head_w2);
    const int b2 = tape.param(*head_b2);
    return tape.linear(tape.relu(tape.linear(feats, w1, b1)), w2, b2);
}

int SpatialField::tokens(ad::Tape& tape, int head_out) const {
    const int w = tape.param(*expand_w);
    const int b = tape.param(*expand_b);
    return tape.linear(head_out, w, b);
}

int SpatialField::spatial_feature(ad::Tape& tape, int coords) const {
    return tokens(tape, head(tape, lookup(tape, coords)));
}

SpatialField build_spatial_field(ad::ParamStore& store, HashGridConfig cfg, int n_tokens,
                                 int token_dim, Rng& rng) {
    SpatialField f;
    f.cfg = cfg;
    f.n_tokens = n_tokens;
    f.token_dim = token_dim;
    f.resolutions = level_resolutions(cfg);
    const int max_entries = 1 << cfg.log2_table_size;
    const int F = cfg.features_per_level;
    char name[64];
    for (int l = 0; l < cfg.levels; ++l) {
        const long long dense_entries =
            static_cast<long long>(f.resolutions[static_cast<size_t>(l)] + 1) *
            (f.resolutions[static_cast<size_t>(l)] + 1) * (f.resolutions[static_cast<size_t>(l)] + 1);
        const bool dense = dense_entries <= max_entries;
        const int entries = dense ? static_cast<int>(dense_entries) : max_entries;
        f.dense.push_back(dense);
        std::snprintf(name, sizeof(name), "field.table.%02d", l);
        f.tables.push_back(
            &store.add(name, "tables", ad::uniform_range({entries, F}, -1e-4, 1e-4, rng)));
    }
    const int lf = cfg.levels * F;
    f.head_w1 = &store.add("field.head.w1", "model", ad::uniform_fan_in(cfg.head_hidden, lf, rng));
    f.head_b1 = &store.add("field.head.b1", "model", Tensor({cfg.head_hidden}));
    f.head_w2 = &store.add("field.head.w2", "model",
                           ad::uniform_fan_in(cfg.head_out, cfg.head_hidden, rng));
    f.head_b2 = &store.add("field.head.b2", "model", Tensor({cfg.head_out}));
    f.expand_w = &store.add("field.expand.w", "model",
                            ad::uniform_fan_in(n_tokens * token_dim, cfg.head_out, rng));
    f.expand_b = &store.add("field.expand.b", "model", Tensor({n_tokens * token_dim}));
    return f;
}

}  // namespace cq::field
