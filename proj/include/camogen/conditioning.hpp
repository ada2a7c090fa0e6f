#pragma once

#include <utility>
#include <vector>

#include "camogen/core/graph.hpp"
#include "camogen/core/rng.hpp"

namespace camogen::cond {

// Linear(C->C) -> SiLU -> Linear(C->C); the smallest decoder that still learns.
struct DecoderParams {
    ad::Param w1, b1, w2, b2;
    static DecoderParams init(const std::string& prefix, int width, Rng& rng);
};

ad::Var decode(ad::Tape& t, ad::Var x, DecoderParams& p);

struct ConditioningParams {
    DecoderParams layout_dec;
    DecoderParams semantics_dec;
    ad::Param c_null;  // [1, C] learnable null embedding
    static ConditioningParams init(int width, Rng& rng);
};

// Per-node layout feature: node embedding Hadamard the mean of incident edge
// embeddings (isolated nodes use the all-ones surrogate), then decoded.
ad::Var layout_decode(ad::Tape& t, ad::Var node_emb, ad::Var edge_emb,
                      const std::vector<std::pair<int, int>>& incidence, DecoderParams& p);

// F_sem = SemanticsDec(node_emb ⊙ attr_emb)
ad::Var semantics_decode(ad::Tape& t, ad::Var node_emb, ad::Var attr_emb, DecoderParams& p);

// Rows i < N_o: F_lay(i) ⊙ F_sem(i); rows N_o..N_max-1: copies of c_null.
ad::Var fuse_objects(ad::Tape& t, ad::Var f_lay, ad::Var f_sem, ad::Var c_null, int n_max);

}  // namespace camogen::cond
