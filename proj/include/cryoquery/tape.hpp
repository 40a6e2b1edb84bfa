#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cryoquery/params.hpp"
#include "cryoquery/tensor.hpp"

// Reverse-mode automatic differentiation on a dynamic tape. Values are
// computed eagerly at node creation; backward() walks the tape in reverse
// creation order, which is a valid reverse topological order by
// construction. Gradient accumulation order is therefore fixed and
// deterministic for a given program.

namespace cq::ad {

class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(64); }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- node creation ---------------------------------------------------

    // Owned value with no gradient.
    int constant(Tensor t);

    // Owned value; participates in backward if t.requires_grad.
    int leaf(Tensor t);

    // Non-owning view of a parameter; gradient is exported via export_grads.
    int param(Param& p, bool trainable = true);

    // Parameters whose group is frozen join the graph without gradients.
    void freeze_group(const std::string& group) { frozen_groups_.push_back(group); }

    // Extension point for domain ops (hash-grid lookup, CTF, fused kernels).
    // `backward` receives the tape and the node id; it must add into parent
    // gradients via grad_of(). Pass an empty function for non-differentiable
    // outputs.
    int make_node(Tensor value, std::vector<int> parents,
                  std::function<void(Tape&, int)> backward);

    // --- elementwise / shape ----------------------------------------------

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);                    // Hadamard
    int scale(int a, float c);
    int add_const(int a, float c);
    int neg(int a) { return scale(a, -1.0f); }
    int relu(int a);
    int tanh_(int a);
    int softplus(int a);
    int abs_(int a);
    int square(int a);
    int sqrt_(int a, float eps = 0.0f);       // sqrt(max(x + eps, 0))
    int reshape(int a, std::vector<int> shape);
    int slice_cols(int a, int c0, int c1);    // on 2-D tensors
    int slice_rows(int a, int r0, int r1);
    int broadcast_scalar(int s, std::vector<int> shape);
    int mul_scalar_node(int x, int s);        // x * s, s is a [1] node
    int div_scalar_node(int x, int s);        // x / s, s is a [1] node

    // --- linear algebra ----------------------------------------------------

    int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
    int add_rowvec(int x, int r);             // x[R,K] + r broadcast over rows
    int linear(int x, int w, int b);          // x[B,in] * w[out,in]^T + b[out]
    int layer_norm(int x, int gamma, int beta, float eps = 1e-5f);
    int softmax_rows(int x);
    int sum_all(int a);                       // -> [1], double accumulation
    int sum_axis1(int a);                     // [R,K] -> [R,1]
    int mean_axis0(int a);                    // [R,K] -> [1,K]
    int mean_group_rows(int a, int group);    // [(B*G),K] -> [B,K]
    int cross3(int a, int b);                 // 3-vectors
    int columns3(int c0, int c1, int c2);     // -> [3,3] with given columns
    int dot(int a, int b) { return sum_all(mul(a, b)); }
    // y[b,c] = sum_j w[b,j] * f[b, j*C + c]
    int rowmix(int w, int f, int n_tokens, int token_dim);
    // [(N*C), F] -> [C, (N*F)]: out[c, j*F + f] = in[j*C + c, f]
    int expand_perm(int w, int n_tokens, int token_dim);
    // x[(B*N), M] += t[N, M] tiled over the leading groups
    int add_tile_rows(int x, int t);

    // Scaled dot-product attention composed from the primitives above.
    // Returns (output, row-stochastic weight matrix).
    std::pair<int, int> attention(int q, int k, int v);

    // --- backward -----------------------------------------------------------

    // Root must be a [1] tensor. Seeds d(root)/d(root) = 1 and sweeps the
    // tape once in reverse order.
    void backward(int root);

    // Adds every bound parameter's gradient into `gs`.
    void export_grads(GradSet& gs) const;

    // --- access ---------------------------------------------------------------

    const Tensor& val(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.ext ? *n.ext : n.own;
    }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    // Allocates (zeroed) on first use.
    std::vector<float>& grad_of(int id);
    bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }
    Tensor grad_tensor(int id) const;
    size_t size() const { return nodes_.size(); }
    bool grad_enabled() const { return grad_enabled_; }

    // When on, every created node is checked for NaN/Inf (used in tests).
    void set_check_finite(bool on) { check_finite_ = on; }

private:
    struct Node {
        Tensor own;
        const Tensor* ext = nullptr;
        std::vector<float> grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backward;
        bool requires_grad = false;
    };

    int push(Node n);
    bool any_parent_grad(const std::vector<int>& parents) const;

    std::vector<Node> nodes_;
    std::vector<std::pair<int, Param*>> bindings_;
    std::vector<std::string> frozen_groups_;
    bool grad_enabled_ = true;
    bool check_finite_ = false;
};

}  // namespace cq::ad
