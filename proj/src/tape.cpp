#include "cryoquery/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>

#include "cryoquery/errors.hpp"

namespace cq::ad {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap map2(const Tensor& t, int r, int c) { return CMap(t.values.data(), r, c); }
CMap map2v(const std::vector<float>& v, int r, int c) { return CMap(v.data(), r, c); }
MMap map2m(std::vector<float>& v, int r, int c) { return MMap(v.data(), r, c); }

void require(bool cond, const char* msg) {
    if (!cond) throw DimensionError(msg);
}

// rows/cols of a tensor treated as 2-D (1-D [n] counts as [1,n])
std::pair<int, int> as2d(const Tensor& t) {
    if (t.rank() == 1) return {1, t.dim(0)};
    require(t.rank() == 2, "expected 2-D tensor");
    return {t.dim(0), t.dim(1)};
}

}  // namespace

int Tape::push(Node n) {
    if (check_finite_) {
        const Tensor& v = n.ext ? *n.ext : n.own;
        if (!v.all_finite()) throw NumericError("non-finite value produced by op");
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

bool Tape::any_parent_grad(const std::vector<int>& parents) const {
    for (int p : parents)
        if (nodes_[static_cast<size_t>(p)].requires_grad) return true;
    return false;
}

int Tape::constant(Tensor t) {
    Node n;
    n.own = std::move(t);
    n.requires_grad = false;
    return push(std::move(n));
}

int Tape::leaf(Tensor t) {
    Node n;
    n.requires_grad = grad_enabled_ && t.requires_grad;
    n.own = std::move(t);
    return push(std::move(n));
}

int Tape::param(Param& p, bool trainable) {
    for (const auto& g : frozen_groups_)
        if (g == p.group) trainable = false;
    Node n;
    n.ext = &p.value;
    n.requires_grad = grad_enabled_ && trainable;
    int id = push(std::move(n));
    if (nodes_[static_cast<size_t>(id)].requires_grad) bindings_.emplace_back(id, &p);
    return id;
}

int Tape::make_node(Tensor value, std::vector<int> parents,
                    std::function<void(Tape&, int)> backward) {
    Node n;
    n.own = std::move(value);
    n.parents = std::move(parents);
    n.requires_grad = grad_enabled_ && any_parent_grad(n.parents);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

std::vector<float>& Tape::grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad.assign(val(id).values.size(), 0.0f);
    return n.grad;
}

Tensor Tape::grad_tensor(int id) const {
    Tensor t;
    t.shape = val(id).shape;
    const Node& n = nodes_[static_cast<size_t>(id)];
    t.values = n.grad.empty() ? std::vector<float>(val(id).values.size(), 0.0f) : n.grad;
    return t;
}

void Tape::backward(int root) {
    require(val(root).numel() == 1, "backward root must be scalar");
    if (!nodes_[static_cast<size_t>(root)].requires_grad) return;
    grad_of(root)[0] = 1.0f;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, id);
    }
}

void Tape::export_grads(GradSet& gs) const {
    for (const auto& [id, p] : bindings_) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad.empty()) gs.add(*p, n.grad);
    }
}

// --- elementwise ------------------------------------------------------------

int Tape::add(int a, int b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    out.requires_grad = false;
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += tb.values[i];
    return make_node(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        if (t.requires_grad(a)) {
            auto& ga = t.grad_of(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_of(b);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

int Tape::sub(int a, int b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "sub: shape mismatch");
    Tensor out = ta;
    out.requires_grad = false;
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] -= tb.values[i];
    return make_node(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        if (t.requires_grad(a)) {
            auto& ga = t.grad_of(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_of(b);
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

int Tape::mul(int a, int b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    out.requires_grad = false;
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= tb.values[i];
    return make_node(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& va = t.val(a).values;
        const auto& vb = t.val(b).values;
        if (t.requires_grad(a)) {
            auto& ga = t.grad_of(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_of(b);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

int Tape::scale(int a, float c) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) v *= c;
    return make_node(std::move(out), {a}, [a, c](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

int Tape::add_const(int a, float c) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) v += c;
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

int Tape::relu(int a) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) v = v > 0.0f ? v : 0.0f;
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& va = t.val(a).values;
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i)
            if (va[i] > 0.0f) ga[i] += g[i];
    });
}

int Tape::tanh_(int a) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) v = std::tanh(v);
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& y = t.val(id).values;
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0f - y[i] * y[i]);
    });
}

int Tape::softplus(int a) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) {
        if (v > 20.0f) continue;  // softplus(x) ~ x
        v = v < -20.0f ? std::exp(v) : std::log1p(std::exp(v));
    }
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& x = t.val(a).values;
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-x[i]));
            ga[i] += g[i] * s;
        }
    });
}

int Tape::abs_(int a) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) v = std::fabs(v);
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& x = t.val(a).values;
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) {
            const float s = x[i] > 0.0f ? 1.0f : (x[i] < 0.0f ? -1.0f : 0.0f);
            ga[i] += g[i] * s;
        }
    });
}

int Tape::square(int a) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) v *= v;
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& x = t.val(a).values;
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += 2.0f * x[i] * g[i];
    });
}

int Tape::sqrt_(int a, float eps) {
    Tensor out = val(a);
    out.requires_grad = false;
    for (float& v : out.values) {
        float u = v + eps;
        v = std::sqrt(u > 1e-30f ? u : 1e-30f);
    }
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& y = t.val(id).values;
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5f / y[i];
    });
}

int Tape::reshape(int a, std::vector<int> shape) {
    const Tensor& ta = val(a);
    require(Tensor::numel_of(shape) == ta.numel(), "reshape: element count mismatch");
    Tensor out;
    out.shape = std::move(shape);
    out.values = ta.values;
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

int Tape::slice_cols(int a, int c0, int c1) {
    const Tensor& ta = val(a);
    auto [r, k] = as2d(ta);
    require(0 <= c0 && c0 < c1 && c1 <= k, "slice_cols: bad range");
    Tensor out({r, c1 - c0});
    for (int i = 0; i < r; ++i)
        for (int j = c0; j < c1; ++j)
            out.values[static_cast<size_t>(i) * (c1 - c0) + (j - c0)] =
                ta.values[static_cast<size_t>(i) * k + j];
    return make_node(std::move(out), {a}, [a, c0, c1, r = r, k = k](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        const int w = c1 - c0;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
                ga[static_cast<size_t>(i) * k + c0 + j] += g[static_cast<size_t>(i) * w + j];
    });
}

int Tape::slice_rows(int a, int r0, int r1) {
    const Tensor& ta = val(a);
    auto [r, k] = as2d(ta);
    require(0 <= r0 && r0 < r1 && r1 <= r, "slice_rows: bad range");
    Tensor out({r1 - r0, k});
    std::memcpy(out.values.data(), ta.values.data() + static_cast<size_t>(r0) * k,
                static_cast<size_t>(r1 - r0) * k * sizeof(float));
    return make_node(std::move(out), {a}, [a, r0, k = k](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        const size_t off = static_cast<size_t>(r0) * k;
        for (size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
    });
}

int Tape::broadcast_scalar(int s, std::vector<int> shape) {
    require(val(s).numel() == 1, "broadcast_scalar: source must be [1]");
    Tensor out(shape, val(s).values[0]);
    return make_node(std::move(out), {s}, [s](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        double acc = 0.0;
        for (float v : g) acc += v;
        t.grad_of(s)[0] += static_cast<float>(acc);
    });
}

int Tape::mul_scalar_node(int x, int s) {
    require(val(s).numel() == 1, "mul_scalar_node: s must be [1]");
    const float sv = val(s).values[0];
    Tensor out = val(x);
    out.requires_grad = false;
    for (float& v : out.values) v *= sv;
    return make_node(std::move(out), {x, s}, [x, s, sv](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& vx = t.val(x).values;
        if (t.requires_grad(x)) {
            auto& gx = t.grad_of(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
        }
        if (t.requires_grad(s)) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * vx[i];
            t.grad_of(s)[0] += static_cast<float>(acc);
        }
    });
}

int Tape::div_scalar_node(int x, int s) {
    require(val(s).numel() == 1, "div_scalar_node: s must be [1]");
    const float sv = val(s).values[0];
    Tensor out = val(x);
    out.requires_grad = false;
    for (float& v : out.values) v /= sv;
    return make_node(std::move(out), {x, s}, [x, s, sv](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& vx = t.val(x).values;
        if (t.requires_grad(x)) {
            auto& gx = t.grad_of(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / sv;
        }
        if (t.requires_grad(s)) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * vx[i];
            t.grad_of(s)[0] += static_cast<float>(-acc / (static_cast<double>(sv) * sv));
        }
    });
}

// --- linear algebra ----------------------------------------------------------

int Tape::matmul(int a, int b, bool trans_a, bool trans_b) {
    const Tensor &ta = val(a), &tb = val(b);
    auto [ar, ac] = as2d(ta);
    auto [br, bc] = as2d(tb);
    const int m = trans_a ? ac : ar;
    const int k = trans_a ? ar : ac;
    const int kb = trans_b ? bc : br;
    const int n = trans_b ? br : bc;
    require(k == kb, "matmul: inner dimensions disagree");

    Tensor out({m, n});
    {
        auto A = map2(ta, ar, ac);
        auto B = map2(tb, br, bc);
        auto C = map2m(out.values, m, n);
        if (!trans_a && !trans_b)
            C.noalias() = A * B;
        else if (trans_a && !trans_b)
            C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A.transpose() * B.transpose();
    }

    return make_node(std::move(out), {a, b},
                     [a, b, trans_a, trans_b, ar = ar, ac = ac, br = br, bc = bc, m, n](Tape& t, int id) {
        auto G = map2v(t.grad_of(id), m, n);
        auto A = map2(t.val(a), ar, ac);
        auto B = map2(t.val(b), br, bc);
        if (t.requires_grad(a)) {
            auto GA = map2m(t.grad_of(a), ar, ac);
            if (!trans_a && !trans_b)
                GA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b)
                GA.noalias() += G * B;
            else if (trans_a && !trans_b)
                GA.noalias() += B * G.transpose();
            else
                GA.noalias() += B.transpose() * G.transpose();
        }
        if (t.requires_grad(b)) {
            auto GB = map2m(t.grad_of(b), br, bc);
            if (!trans_a && !trans_b)
                GB.noalias() += A.transpose() * G;
            else if (!trans_a && trans_b)
                GB.noalias() += G.transpose() * A;
            else if (trans_a && !trans_b)
                GB.noalias() += A * G;
            else
                GB.noalias() += G.transpose() * A.transpose();
        }
    });
}

int Tape::add_rowvec(int x, int r) {
    const Tensor &tx = val(x), &tr = val(r);
    auto [rows, cols] = as2d(tx);
    require(tr.numel() == cols, "add_rowvec: vector length mismatch");
    Tensor out = tx;
    out.requires_grad = false;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out.values[static_cast<size_t>(i) * cols + j] += tr.values[static_cast<size_t>(j)];
    return make_node(std::move(out), {x, r}, [x, r, rows = rows, cols = cols](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        if (t.requires_grad(x)) {
            auto& gx = t.grad_of(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(r)) {
            auto& gr = t.grad_of(r);
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int i = 0; i < rows; ++i) acc += g[static_cast<size_t>(i) * cols + j];
                gr[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
    });
}

int Tape::linear(int x, int w, int b) { return add_rowvec(matmul(x, w, false, true), b); }

int Tape::layer_norm(int x, int gamma, int beta, float eps) {
    const Tensor& tx = val(x);
    auto [rows, cols] = as2d(tx);
    require(val(gamma).numel() == cols && val(beta).numel() == cols,
            "layer_norm: affine parameter length mismatch");

    Tensor out({rows, cols});
    auto xhat = std::make_shared<std::vector<float>>(tx.values.size());
    auto inv = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    const auto& gm = val(gamma).values;
    const auto& bt = val(beta).values;
    for (int i = 0; i < rows; ++i) {
        const float* row = tx.values.data() + static_cast<size_t>(i) * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += row[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= cols;
        const float iv = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv)[static_cast<size_t>(i)] = iv;
        for (int j = 0; j < cols; ++j) {
            const float xh = (row[j] - static_cast<float>(mu)) * iv;
            (*xhat)[static_cast<size_t>(i) * cols + j] = xh;
            out.values[static_cast<size_t>(i) * cols + j] = xh * gm[static_cast<size_t>(j)] + bt[static_cast<size_t>(j)];
        }
    }

    return make_node(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, rows = rows, cols = cols, xhat, inv](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& gm = t.val(gamma).values;
        if (t.requires_grad(gamma)) {
            auto& gg = t.grad_of(gamma);
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int i = 0; i < rows; ++i)
                    acc += static_cast<double>(g[static_cast<size_t>(i) * cols + j]) *
                           (*xhat)[static_cast<size_t>(i) * cols + j];
                gg[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
        if (t.requires_grad(beta)) {
            auto& gb = t.grad_of(beta);
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int i = 0; i < rows; ++i) acc += g[static_cast<size_t>(i) * cols + j];
                gb[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
        if (t.requires_grad(x)) {
            auto& gx = t.grad_of(x);
            for (int i = 0; i < rows; ++i) {
                const size_t off = static_cast<size_t>(i) * cols;
                double s1 = 0.0, s2 = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double dxh = static_cast<double>(g[off + j]) * gm[static_cast<size_t>(j)];
                    s1 += dxh;
                    s2 += dxh * (*xhat)[off + j];
                }
                s1 /= cols;
                s2 /= cols;
                const float iv = (*inv)[static_cast<size_t>(i)];
                for (int j = 0; j < cols; ++j) {
                    const double dxh = static_cast<double>(g[off + j]) * gm[static_cast<size_t>(j)];
                    gx[off + j] += static_cast<float>(iv * (dxh - s1 - (*xhat)[off + j] * s2));
                }
            }
        }
    });
}

int Tape::softmax_rows(int x) {
    const Tensor& tx = val(x);
    auto [rows, cols] = as2d(tx);
    Tensor out({rows, cols});
    for (int i = 0; i < rows; ++i) {
        const float* row = tx.values.data() + static_cast<size_t>(i) * cols;
        float* orow = out.values.data() + static_cast<size_t>(i) * cols;
        float m = row[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            const float e = std::exp(row[j] - m);
            orow[j] = e;
            denom += e;
        }
        const float invd = static_cast<float>(1.0 / denom);
        for (int j = 0; j < cols; ++j) orow[j] *= invd;
    }
    return make_node(std::move(out), {x}, [x, rows = rows, cols = cols](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& y = t.val(id).values;
        auto& gx = t.grad_of(x);
        for (int i = 0; i < rows; ++i) {
            const size_t off = static_cast<size_t>(i) * cols;
            double dotgy = 0.0;
            for (int j = 0; j < cols; ++j) dotgy += static_cast<double>(g[off + j]) * y[off + j];
            for (int j = 0; j < cols; ++j)
                gx[off + j] += y[off + j] * (g[off + j] - static_cast<float>(dotgy));
        }
    });
}

int Tape::sum_all(int a) {
    const Tensor& ta = val(a);
    double acc = 0.0;
    for (float v : ta.values) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    return make_node(std::move(out), {a}, [a](Tape& t, int id) {
        const float g = t.grad_of(id)[0];
        auto& ga = t.grad_of(a);
        for (float& v : ga) v += g;
    });
}

int Tape::sum_axis1(int a) {
    const Tensor& ta = val(a);
    auto [rows, cols] = as2d(ta);
    Tensor out({rows, 1});
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        const float* row = ta.values.data() + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) acc += row[j];
        out.values[static_cast<size_t>(i)] = static_cast<float>(acc);
    }
    return make_node(std::move(out), {a}, [a, rows = rows, cols = cols](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        for (int i = 0; i < rows; ++i) {
            const float gi = g[static_cast<size_t>(i)];
            float* row = ga.data() + static_cast<size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) row[j] += gi;
        }
    });
}

int Tape::mean_axis0(int a) {
    const Tensor& ta = val(a);
    auto [rows, cols] = as2d(ta);
    Tensor out({1, cols});
    for (int j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int i = 0; i < rows; ++i) acc += ta.values[static_cast<size_t>(i) * cols + j];
        out.values[static_cast<size_t>(j)] = static_cast<float>(acc / rows);
    }
    return make_node(std::move(out), {a}, [a, rows = rows, cols = cols](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        const float inv = 1.0f / static_cast<float>(rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                ga[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(j)] * inv;
    });
}

int Tape::mean_group_rows(int a, int group) {
    const Tensor& ta = val(a);
    auto [rows, cols] = as2d(ta);
    require(group > 0 && rows % group == 0, "mean_group_rows: rows not divisible by group");
    const int out_rows = rows / group;
    Tensor out({out_rows, cols});
    for (int b = 0; b < out_rows; ++b)
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < group; ++i)
                acc += ta.values[(static_cast<size_t>(b) * group + i) * cols + j];
            out.values[static_cast<size_t>(b) * cols + j] = static_cast<float>(acc / group);
        }
    return make_node(std::move(out), {a}, [a, group, out_rows, cols = cols](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& ga = t.grad_of(a);
        const float inv = 1.0f / static_cast<float>(group);
        for (int b = 0; b < out_rows; ++b)
            for (int i = 0; i < group; ++i)
                for (int j = 0; j < cols; ++j)
                    ga[(static_cast<size_t>(b) * group + i) * cols + j] +=
                        g[static_cast<size_t>(b) * cols + j] * inv;
    });
}

int Tape::cross3(int a, int b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.numel() == 3 && tb.numel() == 3, "cross3: expects 3-vectors");
    const float* u = ta.values.data();
    const float* v = tb.values.data();
    Tensor out = ta;
    out.requires_grad = false;
    out.values = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    return make_node(std::move(out), {a, b}, [a, b](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& u = t.val(a).values;
        const auto& v = t.val(b).values;
        // d<g, a x b> : da = b x g, db = g x a
        if (t.requires_grad(a)) {
            auto& ga = t.grad_of(a);
            ga[0] += v[1] * g[2] - v[2] * g[1];
            ga[1] += v[2] * g[0] - v[0] * g[2];
            ga[2] += v[0] * g[1] - v[1] * g[0];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_of(b);
            gb[0] += g[1] * u[2] - g[2] * u[1];
            gb[1] += g[2] * u[0] - g[0] * u[2];
            gb[2] += g[0] * u[1] - g[1] * u[0];
        }
    });
}

int Tape::columns3(int c0, int c1, int c2) {
    const int ids[3] = {c0, c1, c2};
    for (int id : ids) require(val(id).numel() == 3, "columns3: expects 3-vectors");
    Tensor out({3, 3});
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) out.values[static_cast<size_t>(i) * 3 + j] = val(ids[j]).values[static_cast<size_t>(i)];
    return make_node(std::move(out), {c0, c1, c2}, [c0, c1, c2](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const int ids[3] = {c0, c1, c2};
        for (int j = 0; j < 3; ++j) {
            if (!t.requires_grad(ids[j])) continue;
            auto& gc = t.grad_of(ids[j]);
            for (int i = 0; i < 3; ++i) gc[static_cast<size_t>(i)] += g[static_cast<size_t>(i) * 3 + j];
        }
    });
}

int Tape::rowmix(int w, int f, int n_tokens, int token_dim) {
    const Tensor &tw = val(w), &tf = val(f);
    auto [bw, nw] = as2d(tw);
    auto [bf, nc] = as2d(tf);
    require(bw == bf && nw == n_tokens && nc == n_tokens * token_dim, "rowmix: shape mismatch");
    const int B = bw, N = n_tokens, C = token_dim;
    Tensor out({B, C});
    for (int b = 0; b < B; ++b) {
        const float* wrow = tw.values.data() + static_cast<size_t>(b) * N;
        const float* frow = tf.values.data() + static_cast<size_t>(b) * N * C;
        float* orow = out.values.data() + static_cast<size_t>(b) * C;
        for (int j = 0; j < N; ++j) {
            const float wj = wrow[j];
            const float* fj = frow + static_cast<size_t>(j) * C;
            for (int c = 0; c < C; ++c) orow[c] += wj * fj[c];
        }
    }
    return make_node(std::move(out), {w, f}, [w, f, B, N, C](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        const auto& vw = t.val(w).values;
        const auto& vf = t.val(f).values;
        const bool gw = t.requires_grad(w), gf = t.requires_grad(f);
        auto* pgw = gw ? &t.grad_of(w) : nullptr;
        auto* pgf = gf ? &t.grad_of(f) : nullptr;
        for (int b = 0; b < B; ++b) {
            const float* grow = g.data() + static_cast<size_t>(b) * C;
            for (int j = 0; j < N; ++j) {
                const size_t foff = (static_cast<size_t>(b) * N + j) * C;
                if (gw) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c) acc += static_cast<double>(grow[c]) * vf[foff + c];
                    (*pgw)[static_cast<size_t>(b) * N + j] += static_cast<float>(acc);
                }
                if (gf) {
                    const float wj = vw[static_cast<size_t>(b) * N + j];
                    for (int c = 0; c < C; ++c) (*pgf)[foff + c] += wj * grow[c];
                }
            }
        }
    });
}

int Tape::expand_perm(int w, int n_tokens, int token_dim) {
    const Tensor& tw = val(w);
    auto [rows, f] = as2d(tw);
    require(rows == n_tokens * token_dim, "expand_perm: row count must be N*C");
    const int N = n_tokens, C = token_dim, F = f;
    Tensor out({C, N * F});
    for (int j = 0; j < N; ++j)
        for (int c = 0; c < C; ++c)
            for (int k = 0; k < F; ++k)
                out.values[static_cast<size_t>(c) * N * F + static_cast<size_t>(j) * F + k] =
                    tw.values[(static_cast<size_t>(j) * C + c) * F + k];
    return make_node(std::move(out), {w}, [w, N, C, F](Tape& t, int id) {
        const auto& g = t.grad_of(id);
        auto& gw = t.grad_of(w);
        for (int j = 0; j < N; ++j)
            for (int c = 0; c < C; ++c)
                for (int k = 0; k < F; ++k)
                    gw[(static_cast<size_t>(j) * C + c) * F + k] +=
                        g[static_cast<size_t>(c) * N * F + static_cast<size_t>(j) * F + k];
    });
}

int Tape::add_tile_rows(int x, int t) {
    const Tensor &tx = val(x), &tt = val(t);
    auto [rows, cols] = as2d(tx);
    auto [trows, tcols] = as2d(tt);
    require(tcols == cols && trows > 0 && rows % trows == 0, "add_tile_rows: shape mismatch");
    Tensor out = tx;
    out.requires_grad = false;
    const int groups = rows / trows;
    for (int b = 0; b < groups; ++b)
        for (int i = 0; i < trows; ++i)
            for (int j = 0; j < cols; ++j)
                out.values[(static_cast<size_t>(b) * trows + i) * cols + j] +=
                    tt.values[static_cast<size_t>(i) * cols + j];
    return make_node(std::move(out), {x, t}, [x, t, groups, trows = trows, cols = cols](Tape& tp, int id) {
        const auto& g = tp.grad_of(id);
        if (tp.requires_grad(x)) {
            auto& gx = tp.grad_of(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(t)) {
            auto& gt = tp.grad_of(t);
            for (int i = 0; i < trows; ++i)
                for (int j = 0; j < cols; ++j) {
                    double acc = 0.0;
                    for (int b = 0; b < groups; ++b)
                        acc += g[(static_cast<size_t>(b) * trows + i) * cols + j];
                    gt[static_cast<size_t>(i) * cols + j] += static_cast<float>(acc);
                }
        }
    });
}

std::pair<int, int> Tape::attention(int q, int k, int v) {
    const Tensor &tq = val(q), &tk = val(k), &tv = val(v);
    auto [nq, cq] = as2d(tq);
    auto [nk, ck] = as2d(tk);
    auto [nv, cv] = as2d(tv);
    require(cq == ck, "attention: q/k feature dims differ");
    require(nk == nv, "attention: k/v token counts differ");
    (void)nq;
    (void)cv;
    int scores = matmul(q, k, false, true);
    scores = scale(scores, 1.0f / std::sqrt(static_cast<float>(cq)));
    int weights = softmax_rows(scores);
    int out = matmul(weights, v);
    return {out, weights};
}

}  // namespace cq::ad
