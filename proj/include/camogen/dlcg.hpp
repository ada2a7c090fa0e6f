#pragma once

#include <string>
#include <vector>

#include "camogen/core/graph.hpp"
#include "camogen/core/rng.hpp"

namespace camogen::dlcg {

inline constexpr double kCosineEps = 1e-8;

// Patch embedding of the depth condition: p-stride conv to C channels, SiLU,
// then a per-token pointwise mix. Token k sees only its own p x p patch.
struct VisualEncParams {
    ad::Param patch_w;  // [C, 1, p, p]
    ad::Param patch_b;  // [C]
    ad::Param mix_w;    // [C, C]
    ad::Param mix_b;    // [1, C]
    int patch = 4;
    static VisualEncParams init(int patch, int width, Rng& rng);
};

// depth: [H,W] in [0,1] -> tokens [N, C] with N = (H/p)*(W/p)
ad::Var encode_depth(ad::Tape& t, const Tensor& depth, VisualEncParams& p);

// F_Q = F_D + broadcast(mean row of F_lay) * W_L
ad::Var fuse_depth_layout(ad::Tape& t, ad::Var f_d, ad::Var f_lay, ad::Var w_l);

struct PrototypeParams {
    ad::Param t_tok;   // [M, C] learnable query tokens
    ad::Param out_w;   // [C, C]
    ad::Param out_b;   // [1, C]
    static PrototypeParams init(int prototypes, int width, Rng& rng);
};

// P = OutProj(softmax(T F_Q^T / sqrt(C)) F_Q)
ad::Var summarize_prototypes(ad::Tape& t, PrototypeParams& p, ad::Var f_q);

// L_DLC = mean_i min_m (1 - cos_eps(F_Q(i), p_m)), in [0, 2]
ad::Var dlc_loss(ad::Tape& t, ad::Var f_q, ad::Var prototypes, double eps = kCosineEps);

// One residual per denoiser decoder stage; stage s runs at grid*2^s.
struct ControlStage {
    int channels = 0;
    int height = 0;
    int width = 0;
};

struct ControlParams {
    std::vector<ad::Param> conv_w, conv_b;  // 3x3 feature convs, width C
    std::vector<ad::Param> zero_w, zero_b;  // zero-initialized 1x1 projections
    static ControlParams init(int width, const std::vector<ControlStage>& stages, Rng& rng);
};

// F_Q tokens [N, C] reshaped onto the (grid_h, grid_w) patch grid, then an
// upsampling trunk mirroring the denoiser, with zero-initialized output
// projections so a fresh branch contributes exactly nothing.
std::vector<ad::Var> control_residuals(ad::Tape& t, ad::Var f_q, int grid_h, int grid_w,
                                       ControlParams& p, const std::vector<ControlStage>& stages);

struct DlcgParams {
    VisualEncParams enc;
    ad::Param w_l;  // [C, C]
    PrototypeParams proto;
    ControlParams ctrl;
    static DlcgParams init(int patch, int width, int prototypes,
                           const std::vector<ControlStage>& stages, Rng& rng);
};

}  // namespace camogen::dlcg
