#pragma once

#include <memory>
#include <vector>

#include "cryoquery/model.hpp"
#include "cryoquery/tape.hpp"

// Differentiable image formation for the learned field: depth-sampled
// density along rotated rays, then CTF application in the Fourier domain.

namespace cq::render {

// IFFT2(FFT2(x) * transfer).real as a tape node. Real transfers make the
// operator self-adjoint, so backward applies the same transfer to the
// upstream gradient.
int apply_ctf_node(ad::Tape& tape, int image, std::shared_ptr<const std::vector<double>> transfer,
                   int d);

struct RenderInputs {
    int rotation;      // [3,3] node
    int translation;   // [1,2] node, pixels
    int fd;            // [N,C] deformation-token node
    std::shared_ptr<const std::vector<double>> ctf;  // null -> no CTF
};

// Predicted image node [D,D]. Rays carry gradients back to rotation and
// translation; samples leaving the unit cube contribute zero.
int render_image_node(ad::Tape& tape, const Model& model, const RenderInputs& in, int d,
                      int depth_steps);

// sum((obs - pred)^2) as a [1] node.
int image_loss_node(ad::Tape& tape, int pred, const Tensor& observed);

}  // namespace cq::render
