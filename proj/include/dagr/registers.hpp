#pragma once

#include <utility>
#include <vector>

#include "dagr/tensor.hpp"

namespace dagr {

/// Learnable global-prior tokens concatenated onto the video input as extra
/// channels. R holds the token embeddings; proj_w/proj_b collapse the
/// embedding axis to one scalar bias field per token.
struct RegisterTokens {
    Tensor R;       // [1, N, d, 1, 1]
    Tensor proj_w;  // [N, d]
    Tensor proj_b;  // [N]

    std::size_t count() const { return R.extent(1); }
    std::size_t dim() const { return R.extent(2); }

    std::vector<Tensor> parameters() const { return {R, proj_w, proj_b}; }
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        return {{"reg.R", R}, {"reg.proj_w", proj_w}, {"reg.proj_b", proj_b}};
    }
};

RegisterTokens init_tokens(std::size_t n, std::size_t d, RngState& rng);

/// Token embeddings -> per-token constant field over [N,T,H,W]. Each token is
/// a 1x1x1 grouped conv over its d embedding entries, broadcast as a learned
/// bias field.
Tensor project_tokens(const RegisterTokens& tokens, std::size_t t, std::size_t h, std::size_t w);

/// Concat(video, projected) along channels; video stays in channels [0, C).
Tensor augment_input(const Tensor& video, const Tensor& projected);

}  // namespace dagr
