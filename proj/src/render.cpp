#include "cryoquery/render.hpp"

#include "cryoquery/errors.hpp"
#include "cryoquery/imaging.hpp"

namespace cq::render {

int apply_ctf_node(ad::Tape& tape, int image, std::shared_ptr<const std::vector<double>> transfer,
                   int d) {
    const Tensor& ti = tape.val(image);
    if (ti.numel() != static_cast<std::int64_t>(d) * d)
        throw DimensionError("apply_ctf_node: image size mismatch");
    Tensor out = ti;
    out.requires_grad = false;
    img::apply_ctf(out.values.data(), d, *transfer);
    return tape.make_node(std::move(out), {image}, [image, transfer, d](ad::Tape& t, int id) {
        std::vector<float> g = t.grad_of(id);
        img::apply_ctf(g.data(), d, *transfer);
        auto& gi = t.grad_of(image);
        for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
}

int render_image_node(ad::Tape& tape, const Model& model, const RenderInputs& in, int d,
                      int depth_steps) {
    const int nz = depth_steps;
    const int B = d * d * nz;
    // depth span covers rotated cube corners (see imaging.cpp)
    constexpr float kDepthSpan = 1.7320508f;

    // base sample grid, pixel-major / depth-minor so the depth reduction is a
    // row sum of a [D*D, nz] view
    Tensor grid({B, 3});
    {
        size_t at = 0;
        for (int py = 0; py < d; ++py)
            for (int px = 0; px < d; ++px)
                for (int s = 0; s < nz; ++s) {
                    grid.values[at++] = (px + 0.5f) / d - 0.5f;
                    grid.values[at++] = (py + 0.5f) / d - 0.5f;
                    grid.values[at++] = ((s + 0.5f) / nz - 0.5f) * kDepthSpan;
                }
    }
    const int base = tape.constant(std::move(grid));

    // coords = (p - (tx/D, ty/D, 0)) * R + 0.5  (row form of R^T p + c)
    Tensor pad({2, 3});
    pad.values = {1, 0, 0, 0, 1, 0};
    const int t3 = tape.matmul(tape.scale(in.translation, 1.0f / static_cast<float>(d)),
                               tape.constant(std::move(pad)));
    const int shifted = tape.add_rowvec(base, tape.neg(t3));
    const int coords = tape.add_const(tape.matmul(shifted, in.rotation), 0.5f);

    // vacuum outside the unit cube
    Tensor mask({B, 1});
    {
        const auto& cv = tape.val(coords).values;
        for (int b = 0; b < B; ++b) {
            const float x = cv[static_cast<size_t>(b) * 3];
            const float y = cv[static_cast<size_t>(b) * 3 + 1];
            const float z = cv[static_cast<size_t>(b) * 3 + 2];
            mask.values[static_cast<size_t>(b)] =
                (x >= 0.0f && x <= 1.0f && y >= 0.0f && y <= 1.0f && z >= 0.0f && z <= 1.0f)
                    ? 1.0f
                    : 0.0f;
        }
    }

    const int tokens = dec::conditioned_tokens(tape, model.decoder, in.fd);
    const auto eval = dec::density_batch(tape, model.decoder, model.field, tokens, coords);
    const int masked = tape.mul(eval.density, tape.constant(std::move(mask)));

    int img = tape.sum_axis1(tape.reshape(masked, {d * d, nz}));
    img = tape.scale(img, kDepthSpan / static_cast<float>(nz));
    img = tape.reshape(img, {d, d});
    if (in.ctf) img = apply_ctf_node(tape, img, in.ctf, d);
    return img;
}

int image_loss_node(ad::Tape& tape, int pred, const Tensor& observed) {
    if (!tape.val(pred).same_shape(observed))
        throw DimensionError("image_loss: prediction/observation shape mismatch");
    const int diff = tape.sub(pred, tape.constant(observed));
    return tape.sum_all(tape.square(diff));
}

}  // namespace cq::render
