#pragma once

#include <string>
#include <utility>
#include <vector>

#include "camogen/core/graph.hpp"
#include "camogen/core/rng.hpp"
#include "camogen/scene_graph.hpp"

namespace camogen::ama {

inline constexpr double kBlocked = -1e9;  // finite stand-in for -inf, underflows to 0 weight
inline constexpr int kPaddingEntity = -1;

// Entity id per position over the concatenated sequence [V ⊕ Ĉ ⊕ Ẽᵃ].
struct EntityTokenMap {
    std::vector<int> entity;
    int n_v = 0;
    int n_max = 0;
    int length() const { return static_cast<int>(entity.size()); }  // N_v + 2*N_max
};

// token_to_object[i] in [-1, N_o): object id per visual token, -1 meaning
// unassigned (shared background entity N_o). Ĉ/Ẽᵃ slots i get entity i while
// i < N_o and the padding entity afterwards.
EntityTokenMap assign_entities(const sg::SceneGraph& g, int n_v, int n_max,
                               const std::vector<int>& token_to_object);

// Additive pre-softmax bias: 0 where attention is allowed (same non-padding
// entity, or the diagonal), kBlocked elsewhere.
Tensor build_attention_mask(const EntityTokenMap& m);

// softmax(Q K^T / sqrt(C) + mask) V with a multi-head split.
ad::Var masked_attention(ad::Tape& t, ad::Var q, ad::Var k, ad::Var v, const Tensor& mask,
                         int heads);

// One residual attention sublayer; the output projection starts at zero so a
// fresh block is the identity.
struct SelfAttnParams {
    ad::Param wq, wk, wv, wo;
    static SelfAttnParams init(const std::string& prefix, int width, Rng& rng);
};

ad::Var self_attention_block(ad::Tape& t, ad::Var x, SelfAttnParams& p, int heads);

struct AmaParams {
    SelfAttnParams text_sa, image_sa, attr_sa;
    SelfAttnParams attn;                    // the masked AMA layer itself
    ad::Param ff_w1, ff_b1, ff_w2, ff_b2;   // ff_w2 zero-initialized
    int heads = 4;
    static AmaParams init(int width, int heads, Rng& rng);
};

// Per-stream self-attention; text and image streams concatenate into the
// visual token set, the attribute stream yields Ẽᵃ padded to N_max rows.
struct StreamOutputs {
    ad::Var v_tokens;    // [N_v, C]
    ad::Var attr_tilde;  // [N_max, C]
};
StreamOutputs self_attend_streams(ad::Tape& t, ad::Var text_emb, ad::Var image_feat,
                                  ad::Var attr_emb, int n_max, AmaParams& p);

// V̂ = AMA([V ⊕ Ĉ ⊕ Ẽᵃ], M)[:N_v] — one masked attention layer with residual
// and feed-forward sublayer.
ad::Var ama_forward(ad::Tape& t, ad::Var v_tokens, ad::Var c_hat, ad::Var attr_tilde,
                    const EntityTokenMap& m, AmaParams& p);

}  // namespace camogen::ama
