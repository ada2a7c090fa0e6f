#include "camogen/ama.hpp"

#include <cmath>
#include <stdexcept>

namespace camogen::ama {

EntityTokenMap assign_entities(const sg::SceneGraph& g, int n_v, int n_max,
                               const std::vector<int>& token_to_object) {
    const int n_o = g.node_count();
    if (n_o > n_max) throw std::invalid_argument("assign_entities: N_o exceeds N_max");
    if (static_cast<int>(token_to_object.size()) != n_v)
        throw std::invalid_argument("assign_entities: assignment must cover all visual tokens");

    EntityTokenMap m;
    m.n_v = n_v;
    m.n_max = n_max;
    m.entity.reserve(static_cast<size_t>(n_v + 2 * n_max));
    for (int i = 0; i < n_v; ++i) {
        const int obj = token_to_object[static_cast<size_t>(i)];
        if (obj >= n_o)
            throw std::invalid_argument("assign_entities: assignment references object >= N_o");
        m.entity.push_back(obj < 0 ? n_o : obj);  // background entity id = N_o
    }
    for (int pass = 0; pass < 2; ++pass)  // Ĉ slots, then Ẽᵃ slots
        for (int i = 0; i < n_max; ++i) m.entity.push_back(i < n_o ? i : kPaddingEntity);
    return m;
}

Tensor build_attention_mask(const EntityTokenMap& m) {
    const int l = m.length();
    Tensor mask({l, l});
    for (int i = 0; i < l; ++i) {
        const int ei = m.entity[static_cast<size_t>(i)];
        for (int j = 0; j < l; ++j) {
            const int ej = m.entity[static_cast<size_t>(j)];
            const bool allowed = (i == j) || (ei == ej && ei != kPaddingEntity);
            mask.at(i, j) = allowed ? 0.0 : kBlocked;
        }
    }
    return mask;
}

ad::Var masked_attention(ad::Tape& t, ad::Var q, ad::Var k, ad::Var v, const Tensor& mask,
                         int heads) {
    const int c = t.val(q).cols();
    if (t.val(k).cols() != c || t.val(v).cols() != c)
        throw std::invalid_argument("masked_attention: width mismatch");
    if (mask.rows() != t.val(q).rows() || mask.cols() != t.val(k).rows())
        throw std::invalid_argument("masked_attention: mask shape mismatch");
    return t.attention(q, k, v, heads, 1.0 / std::sqrt(static_cast<double>(c)), &mask);
}

SelfAttnParams SelfAttnParams::init(const std::string& prefix, int width, Rng& rng) {
    auto mat = [&](const std::string& name, bool zero) {
        Tensor t({width, width});
        if (!zero) {
            const double s = 1.0 / std::sqrt(static_cast<double>(width));
            for (auto& v : t.data) v = s * rng.normal();
        }
        return ad::Param(name, std::move(t));
    };
    SelfAttnParams p;
    p.wq = mat(prefix + ".wq", false);
    p.wk = mat(prefix + ".wk", false);
    p.wv = mat(prefix + ".wv", false);
    p.wo = mat(prefix + ".wo", true);  // zero: fresh block is the identity
    return p;
}

ad::Var self_attention_block(ad::Tape& t, ad::Var x, SelfAttnParams& p, int heads) {
    const int c = t.val(x).cols();
    ad::Var q = t.matmul(x, t.param(p.wq));
    ad::Var k = t.matmul(x, t.param(p.wk));
    ad::Var v = t.matmul(x, t.param(p.wv));
    ad::Var att = t.attention(q, k, v, heads, 1.0 / std::sqrt(static_cast<double>(c)));
    return t.add(x, t.matmul(att, t.param(p.wo)));
}

AmaParams AmaParams::init(int width, int heads, Rng& rng) {
    AmaParams p;
    p.heads = heads;
    p.text_sa = SelfAttnParams::init("ama.text_sa", width, rng);
    p.image_sa = SelfAttnParams::init("ama.image_sa", width, rng);
    p.attr_sa = SelfAttnParams::init("ama.attr_sa", width, rng);
    p.attn = SelfAttnParams::init("ama.attn", width, rng);
    Tensor w1({width, width});
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    for (auto& v : w1.data) v = s * rng.normal();
    p.ff_w1 = ad::Param("ama.ff_w1", std::move(w1));
    p.ff_b1 = ad::Param("ama.ff_b1", Tensor({1, width}));
    p.ff_w2 = ad::Param("ama.ff_w2", Tensor({width, width}));  // zero-initialized
    p.ff_b2 = ad::Param("ama.ff_b2", Tensor({1, width}));
    return p;
}

StreamOutputs self_attend_streams(ad::Tape& t, ad::Var text_emb, ad::Var image_feat,
                                  ad::Var attr_emb, int n_max, AmaParams& p) {
    const int c = t.val(text_emb).cols();
    if (t.val(image_feat).cols() != c || t.val(attr_emb).cols() != c)
        throw std::invalid_argument("self_attend_streams: stream width mismatch");

    ad::Var text = self_attention_block(t, text_emb, p.text_sa, p.heads);
    ad::Var image = self_attention_block(t, image_feat, p.image_sa, p.heads);
    ad::Var attr = self_attention_block(t, attr_emb, p.attr_sa, p.heads);

    StreamOutputs out;
    out.v_tokens = t.concat_rows({text, image});
    const int n_o = t.val(attr_emb).rows();
    if (n_o > n_max) throw std::invalid_argument("self_attend_streams: N_o exceeds N_max");
    if (n_o == n_max) {
        out.attr_tilde = attr;
    } else {
        // padding slots carry zeros; the mask keeps them isolated anyway
        out.attr_tilde = t.concat_rows({attr, t.constant(Tensor({n_max - n_o, c}))});
    }
    return out;
}

ad::Var ama_forward(ad::Tape& t, ad::Var v_tokens, ad::Var c_hat, ad::Var attr_tilde,
                    const EntityTokenMap& m, AmaParams& p) {
    const int c = t.val(v_tokens).cols();
    if (t.val(c_hat).cols() != c || t.val(attr_tilde).cols() != c)
        throw std::invalid_argument("ama_forward: width mismatch");
    const int n_v = t.val(v_tokens).rows();
    if (m.n_v != n_v || t.val(c_hat).rows() != m.n_max || t.val(attr_tilde).rows() != m.n_max)
        throw std::invalid_argument("ama_forward: entity map does not match token counts");

    ad::Var seq = t.concat_rows({v_tokens, c_hat, attr_tilde});
    const Tensor mask = build_attention_mask(m);

    ad::Var q = t.matmul(seq, t.param(p.attn.wq));
    ad::Var k = t.matmul(seq, t.param(p.attn.wk));
    ad::Var v = t.matmul(seq, t.param(p.attn.wv));
    ad::Var att = masked_attention(t, q, k, v, mask, p.heads);
    ad::Var h = t.add(seq, t.matmul(att, t.param(p.attn.wo)));

    ad::Var ff = t.silu(t.add_rowvec(t.matmul(h, t.param(p.ff_w1)), t.param(p.ff_b1)));
    ff = t.add_rowvec(t.matmul(ff, t.param(p.ff_w2)), t.param(p.ff_b2));
    ad::Var out = t.add(h, ff);
    return t.slice_rows(out, 0, n_v);
}

}  // namespace camogen::ama
