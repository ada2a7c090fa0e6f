#include "camogen/conditioning.hpp"

#include <cmath>
#include <stdexcept>

namespace camogen::cond {

DecoderParams DecoderParams::init(const std::string& prefix, int width, Rng& rng) {
    auto mat = [&](const std::string& name) {
        Tensor t({width, width});
        const double s = 1.0 / std::sqrt(static_cast<double>(width));
        for (auto& v : t.data) v = s * rng.normal();
        return ad::Param(name, std::move(t));
    };
    DecoderParams p;
    p.w1 = mat(prefix + ".w1");
    p.b1 = ad::Param(prefix + ".b1", Tensor({1, width}));
    p.w2 = mat(prefix + ".w2");
    p.b2 = ad::Param(prefix + ".b2", Tensor({1, width}));
    return p;
}

ad::Var decode(ad::Tape& t, ad::Var x, DecoderParams& p) {
    ad::Var h = t.silu(t.add_rowvec(t.matmul(x, t.param(p.w1)), t.param(p.b1)));
    return t.add_rowvec(t.matmul(h, t.param(p.w2)), t.param(p.b2));
}

ConditioningParams ConditioningParams::init(int width, Rng& rng) {
    ConditioningParams p;
    p.layout_dec = DecoderParams::init("conditioning.layout_dec", width, rng);
    p.semantics_dec = DecoderParams::init("conditioning.semantics_dec", width, rng);
    Tensor null_emb({1, width});
    for (auto& v : null_emb.data) v = 0.1 * rng.normal();
    p.c_null = ad::Param("conditioning.c_null", std::move(null_emb));
    return p;
}

ad::Var layout_decode(ad::Tape& t, ad::Var node_emb, ad::Var edge_emb,
                      const std::vector<std::pair<int, int>>& incidence, DecoderParams& p) {
    const int n = t.val(node_emb).rows();
    const int c = t.val(node_emb).cols();
    const int e = static_cast<int>(incidence.size());
    if (e > 0 && t.val(edge_emb).cols() != c)
        throw std::invalid_argument("layout_decode: node/edge width mismatch");
    if (e != (t.val(edge_emb).rows()))
        throw std::invalid_argument("layout_decode: incidence/edge count mismatch");

    std::vector<int> degree(static_cast<size_t>(n), 0);
    for (const auto& [i, j] : incidence) {
        degree[static_cast<size_t>(i)]++;
        degree[static_cast<size_t>(j)]++;
    }

    ad::Var agg;
    if (e > 0) {
        Tensor mean_mat({n, e});
        for (int k = 0; k < e; ++k) {
            const auto& [i, j] = incidence[static_cast<size_t>(k)];
            mean_mat.at(i, k) = 1.0 / degree[static_cast<size_t>(i)];
            mean_mat.at(j, k) = 1.0 / degree[static_cast<size_t>(j)];
        }
        agg = t.matmul(t.constant(mean_mat), edge_emb);
        // isolated rows are zero after the matmul; lift them to the Hadamard
        // identity so such nodes degrade to pure node features
        Tensor ones_fix({n, c});
        for (int i = 0; i < n; ++i)
            if (degree[static_cast<size_t>(i)] == 0)
                for (int k = 0; k < c; ++k) ones_fix.at(i, k) = 1.0;
        bool any_isolated = false;
        for (int d : degree) any_isolated = any_isolated || (d == 0);
        if (any_isolated) agg = t.add(agg, t.constant(ones_fix));
    } else {
        agg = t.constant(Tensor::full({n, c}, 1.0));
    }

    return decode(t, t.mul(node_emb, agg), p);
}

ad::Var semantics_decode(ad::Tape& t, ad::Var node_emb, ad::Var attr_emb, DecoderParams& p) {
    if (!(t.val(node_emb).same_shape(t.val(attr_emb))))
        throw std::invalid_argument("semantics_decode: shape mismatch");
    return decode(t, t.mul(node_emb, attr_emb), p);
}

ad::Var fuse_objects(ad::Tape& t, ad::Var f_lay, ad::Var f_sem, ad::Var c_null, int n_max) {
    const int n_o = t.val(f_lay).rows();
    if (!(t.val(f_lay).same_shape(t.val(f_sem))))
        throw std::invalid_argument("fuse_objects: F_lay/F_sem shape mismatch");
    if (n_o > n_max) throw std::invalid_argument("fuse_objects: N_o exceeds N_max");
    ad::Var body = t.mul(f_lay, f_sem);
    if (n_o == n_max) return body;
    return t.concat_rows({body, t.broadcast_row(c_null, n_max - n_o)});
}

}  // namespace camogen::cond
