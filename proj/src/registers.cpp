#include "dagr/registers.hpp"

#include <cmath>

#include "dagr/ops.hpp"

namespace dagr {

RegisterTokens init_tokens(std::size_t n, std::size_t d, RngState& rng) {
    if (n < 1 || d < 1) throw Error("init_tokens: token count and dimension must be >= 1");
    RegisterTokens tokens;
    tokens.R = Tensor::randn({1, n, d, 1, 1}, rng, true);
    Tensor w = Tensor::randn({n, d}, rng, true);
    std::vector<double> scaled = w.data();
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : scaled) v *= s;
    w.assign(scaled);
    tokens.proj_w = w;
    tokens.proj_b = Tensor::zeros({n}, true);
    return tokens;
}

Tensor project_tokens(const RegisterTokens& tokens, std::size_t t, std::size_t h, std::size_t w) {
    if (t < 1 || h < 1 || w < 1) throw Error("project_tokens: target extents must be >= 1");
    const std::size_t n = tokens.count();
    const std::size_t d = tokens.dim();
    Tensor embeddings = reshape(tokens.R, {n, d});
    Tensor per_token = add(sum_axis(mul(embeddings, tokens.proj_w), 1), tokens.proj_b);  // [N]
    // Broadcast each token scalar across the spatio-temporal volume.
    Tensor field = reshape(per_token, {n, 1, 1, 1});
    return add(field, Tensor::zeros({1, t, h, w}));
}

Tensor augment_input(const Tensor& video, const Tensor& projected) {
    if (!video.defined()) throw Error("augment_input: undefined video tensor");
    if (video.rank() != 4) throw Error("augment_input: video must be [C,T,H,W]");
    if (!projected.defined() || projected.extent(0) == 0) return video;
    if (projected.rank() != 4) throw Error("augment_input: projected tokens must be [N,T,H,W]");
    for (std::size_t axis = 1; axis < 4; ++axis)
        if (video.extent(axis) != projected.extent(axis))
            throw Error("augment_input: spatio-temporal extents differ, video " +
                        shape_str(video.shape()) + " vs tokens " + shape_str(projected.shape()));
    return concat({video, projected}, 0);
}

}  // namespace dagr
