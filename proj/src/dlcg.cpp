#include "camogen/dlcg.hpp"

#include <cmath>
#include <stdexcept>

namespace camogen::dlcg {

namespace {
ad::Param gaussian_mat(const std::string& name, int rows, int cols, double scale, Rng& rng) {
    Tensor t({rows, cols});
    for (auto& v : t.data) v = scale * rng.normal();
    return ad::Param(name, std::move(t));
}
}  // namespace

VisualEncParams VisualEncParams::init(int patch, int width, Rng& rng) {
    VisualEncParams p;
    p.patch = patch;
    Tensor pw({width, 1, patch, patch});
    const double s = 1.0 / std::sqrt(static_cast<double>(patch * patch));
    for (auto& v : pw.data) v = s * rng.normal();
    p.patch_w = ad::Param("dlcg.enc.patch_w", std::move(pw));
    p.patch_b = ad::Param("dlcg.enc.patch_b", Tensor({width}));
    p.mix_w = gaussian_mat("dlcg.enc.mix_w", width, width, 1.0 / std::sqrt(width), rng);
    p.mix_b = ad::Param("dlcg.enc.mix_b", Tensor({1, width}));
    return p;
}

ad::Var encode_depth(ad::Tape& t, const Tensor& depth, VisualEncParams& p) {
    if (depth.rank() != 2) throw std::invalid_argument("encode_depth: depth must be [H,W]");
    const int h = depth.dim(0), w = depth.dim(1);
    if (h % p.patch != 0 || w % p.patch != 0)
        throw std::invalid_argument("encode_depth: H and W must be divisible by the patch stride");
    for (double v : depth.data)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw std::invalid_argument("encode_depth: depth values must be finite in [0,1]");

    const int c = p.patch_w.value.dim(0);
    const int gh = h / p.patch, gw = w / p.patch;
    Tensor x(std::vector<int>{1, 1, h, w}, depth.data);
    ad::Var grid = t.conv2d(t.constant(std::move(x)), t.param(p.patch_w), t.param(p.patch_b),
                            p.patch, 0);                       // [1, C, gh, gw]
    ad::Var tokens = t.transpose(t.reshape(grid, {c, gh * gw}));  // [N, C]
    tokens = t.silu(tokens);
    return t.add_rowvec(t.matmul(tokens, t.param(p.mix_w)), t.param(p.mix_b));
}

ad::Var fuse_depth_layout(ad::Tape& t, ad::Var f_d, ad::Var f_lay, ad::Var w_l) {
    const int c = t.val(f_d).cols();
    if (t.val(f_lay).cols() != c || t.val(w_l).rows() != c || t.val(w_l).cols() != c)
        throw std::invalid_argument("fuse_depth_layout: width mismatch");
    ad::Var mean_lay = t.mean_rows(f_lay);                       // [1, C]
    ad::Var shift = t.matmul(mean_lay, w_l);                     // [1, C]
    return t.add(f_d, t.broadcast_row(shift, t.val(f_d).rows()));
}

PrototypeParams PrototypeParams::init(int prototypes, int width, Rng& rng) {
    PrototypeParams p;
    p.t_tok = gaussian_mat("dlcg.proto.t_tok", prototypes, width, 0.5, rng);
    p.out_w = gaussian_mat("dlcg.proto.out_w", width, width, 1.0 / std::sqrt(width), rng);
    p.out_b = ad::Param("dlcg.proto.out_b", Tensor({1, width}));
    return p;
}

ad::Var summarize_prototypes(ad::Tape& t, PrototypeParams& p, ad::Var f_q) {
    const int c = t.val(f_q).cols();
    ad::Var logits = t.scale(t.matmul_nt(t.param(p.t_tok), f_q), 1.0 / std::sqrt(c));
    ad::Var attn = t.softmax_rows(logits);      // rows sum to 1
    ad::Var summary = t.matmul(attn, f_q);      // [M, C]
    return t.add_rowvec(t.matmul(summary, t.param(p.out_w)), t.param(p.out_b));
}

ad::Var dlc_loss(ad::Tape& t, ad::Var f_q, ad::Var prototypes, double eps) {
    return t.dlc_loss(f_q, prototypes, eps);
}

ControlParams ControlParams::init(int width, const std::vector<ControlStage>& stages, Rng& rng) {
    ControlParams p;
    for (size_t s = 0; s < stages.size(); ++s) {
        const std::string base = "dlcg.ctrl.stage" + std::to_string(s);
        Tensor cw({width, width, 3, 3});
        const double sc = 1.0 / std::sqrt(9.0 * width);
        for (auto& v : cw.data) v = sc * rng.normal();
        p.conv_w.emplace_back(base + ".conv_w", std::move(cw));
        p.conv_b.emplace_back(base + ".conv_b", Tensor({width}));
        // zero-initialized projections: fresh control branches are inert
        p.zero_w.emplace_back(base + ".zero_w",
                              Tensor({stages[s].channels, width, 1, 1}));
        p.zero_b.emplace_back(base + ".zero_b", Tensor({stages[s].channels}));
    }
    return p;
}

std::vector<ad::Var> control_residuals(ad::Tape& t, ad::Var f_q, int grid_h, int grid_w,
                                       ControlParams& p, const std::vector<ControlStage>& stages) {
    const int n = t.val(f_q).rows();
    const int c = t.val(f_q).cols();
    if (n != grid_h * grid_w)
        throw std::invalid_argument("control_residuals: token count does not match grid");
    if (p.conv_w.size() != stages.size())
        throw std::invalid_argument("control_residuals: stage count mismatch");

    // tokens [N, C] -> feature map [1, C, gh, gw]
    ad::Var x = t.reshape(t.transpose(f_q), {1, c, grid_h, grid_w});
    std::vector<ad::Var> residuals;
    int h = grid_h, w = grid_w;
    for (size_t s = 0; s < stages.size(); ++s) {
        if (s > 0) {
            x = t.upsample2x(x);
            h *= 2;
            w *= 2;
        }
        if (stages[s].height != h || stages[s].width != w)
            throw std::invalid_argument("control_residuals: stage spatial shape mismatch");
        x = t.silu(t.conv2d(x, t.param(p.conv_w[s]), t.param(p.conv_b[s]), 1, 1));
        residuals.push_back(t.conv2d(x, t.param(p.zero_w[s]), t.param(p.zero_b[s]), 1, 0));
    }
    return residuals;
}

DlcgParams DlcgParams::init(int patch, int width, int prototypes,
                            const std::vector<ControlStage>& stages, Rng& rng) {
    DlcgParams p;
    p.enc = VisualEncParams::init(patch, width, rng);
    p.w_l = gaussian_mat("dlcg.w_l", width, width, 1.0 / std::sqrt(width), rng);
    p.proto = PrototypeParams::init(prototypes, width, rng);
    p.ctrl = ControlParams::init(width, stages, rng);
    return p;
}

}  // namespace camogen::dlcg
