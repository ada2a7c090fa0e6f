#include <doctest.h>

#include <cmath>

#include "camogen/ama.hpp"
#include "test_util.hpp"

using namespace camogen;
using namespace camogen::ama;
using testutil::random_tensor;

namespace {

sg::SceneGraph two_node_graph() {
    return sg::build_graph({{0, "chameleon", "green-scaled"}, {1, "branch", "brown-rough"}},
                           {{0, 1, "lies behind"}}, "");
}

int allowed_count(const Tensor& mask) {
    int n = 0;
    for (double v : mask.data) n += (v == 0.0) ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("assign_entities: single entity, padding rule, hand-built mapping") {
    sg::SceneGraph g1 = sg::build_graph({{0, "moth", "gray-dappled"}}, {}, "");
    EntityTokenMap m1 = assign_entities(g1, 3, 4, {0, 0, 0});
    CHECK(m1.length() == 3 + 8);
    for (int i = 0; i < 3; ++i) CHECK(m1.entity[static_cast<size_t>(i)] == 0);
    CHECK(m1.entity[3] == 0);   // Ĉ slot 0 = entity 0
    CHECK(m1.entity[4] == -1);  // Ĉ padding
    CHECK(m1.entity[7] == 0);   // Ẽᵃ slot 0
    CHECK(m1.entity[8] == -1);

    sg::SceneGraph g2 = two_node_graph();
    EntityTokenMap m2 = assign_entities(g2, 6, 4, {0, 0, 1, -1, 1, -1});
    // visual: unassigned -> background entity N_o = 2
    const std::vector<int> want = {0, 0, 1, 2, 1, 2, /*Ĉ*/ 0, 1, -1, -1, /*Ẽᵃ*/ 0, 1, -1, -1};
    CHECK(m2.entity == want);

    CHECK_THROWS(assign_entities(g2, 2, 4, {0, 5}));   // object >= N_o
    CHECK_THROWS(assign_entities(g2, 3, 4, {0, 0}));   // assignment must cover N_v
    CHECK_THROWS(assign_entities(g2, 1, 1, {0}));      // N_o > N_max
}

TEST_CASE("build_attention_mask: combinatorics, symmetry, padding isolation") {
    // all tokens one entity -> fully allowed
    EntityTokenMap all_one;
    all_one.n_v = 3;
    all_one.n_max = 0;
    all_one.entity = {0, 0, 0};
    const Tensor m = build_attention_mask(all_one);
    CHECK(allowed_count(m) == 9);

    // entities of sizes 2 and 3 -> 2^2 + 3^2 = 13 allowed entries
    EntityTokenMap two;
    two.n_v = 5;
    two.n_max = 0;
    two.entity = {0, 0, 1, 1, 1};
    CHECK(allowed_count(build_attention_mask(two)) == 13);

    // one padding token among 5: row/column allow only the diagonal
    EntityTokenMap pad;
    pad.n_v = 5;
    pad.n_max = 0;
    pad.entity = {0, 0, -1, 0, 0};
    const Tensor mp = build_attention_mask(pad);
    for (int j = 0; j < 5; ++j) {
        CHECK(mp.at(2, j) == (j == 2 ? 0.0 : kBlocked));
        CHECK(mp.at(j, 2) == (j == 2 ? 0.0 : kBlocked));
    }

    // symmetry + exact count formula on random partitions
    Rng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        EntityTokenMap em;
        const int l = 2 + rng.uniform_int(12);
        em.n_v = l;
        em.n_max = 0;
        int padding = 0;
        std::vector<int> sizes(4, 0);
        for (int i = 0; i < l; ++i) {
            const int e = rng.uniform_int(5) - 1;  // -1..3
            em.entity.push_back(e);
            if (e < 0)
                padding++;
            else
                sizes[static_cast<size_t>(e)]++;
        }
        const Tensor mm = build_attention_mask(em);
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < l; ++j) CHECK(mm.at(i, j) == mm.at(j, i));
        int want = padding;
        for (int s : sizes) want += s * s;
        CHECK(allowed_count(mm) == want);
    }
}

TEST_CASE("masked_attention: all-zero mask equals unmasked attention") {
    Rng rng(52);
    const int l = 6, c = 8;
    const Tensor q0 = random_tensor({l, c}, rng);
    const Tensor k0 = random_tensor({l, c}, rng);
    const Tensor v0 = random_tensor({l, c}, rng);
    const Tensor zero_mask({l, l});

    ad::Tape t;
    ad::Var masked =
        masked_attention(t, t.constant(q0), t.constant(k0), t.constant(v0), zero_mask, 1);
    ad::Var open = t.attention(t.constant(q0), t.constant(k0), t.constant(v0), 1,
                               1.0 / std::sqrt(static_cast<double>(c)));
    for (size_t i = 0; i < t.val(masked).data.size(); ++i)
        CHECK(t.val(masked).data[i] == doctest::Approx(t.val(open).data[i]).epsilon(1e-14));
}

TEST_CASE("masked_attention: block-diagonal mask equals independent per-block attention") {
    Rng rng(53);
    const int c = 8;
    const int sizes[2] = {3, 4};
    const int l = sizes[0] + sizes[1];
    const Tensor q0 = random_tensor({l, c}, rng);
    const Tensor k0 = random_tensor({l, c}, rng);
    const Tensor v0 = random_tensor({l, c}, rng);

    Tensor mask({l, l});
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j) {
            const bool same = (i < sizes[0]) == (j < sizes[0]);
            mask.at(i, j) = same ? 0.0 : kBlocked;
        }

    for (int heads : {1, 2, 4}) {
        ad::Tape t;
        ad::Var whole =
            masked_attention(t, t.constant(q0), t.constant(k0), t.constant(v0), mask, heads);
        int at = 0;
        for (int blk = 0; blk < 2; ++blk) {
            const int bl = sizes[blk];
            Tensor qb({bl, c}), kb({bl, c}), vb({bl, c});
            for (int i = 0; i < bl; ++i)
                for (int j = 0; j < c; ++j) {
                    qb.at(i, j) = q0.at(at + i, j);
                    kb.at(i, j) = k0.at(at + i, j);
                    vb.at(i, j) = v0.at(at + i, j);
                }
            ad::Tape tb;
            ad::Var part = tb.attention(tb.constant(qb), tb.constant(kb), tb.constant(vb), heads,
                                        1.0 / std::sqrt(static_cast<double>(c)));
            for (int i = 0; i < bl; ++i)
                for (int j = 0; j < c; ++j)
                    CHECK(std::abs(t.val(whole).at(at + i, j) - tb.val(part).at(i, j)) < 1e-10);
            at += bl;
        }
    }
}

TEST_CASE("masked_attention: padding token returns exactly its own value row") {
    Rng rng(54);
    const int l = 5, c = 4;
    const Tensor q0 = random_tensor({l, c}, rng);
    const Tensor k0 = random_tensor({l, c}, rng);
    const Tensor v0 = random_tensor({l, c}, rng);
    EntityTokenMap m;
    m.n_v = l;
    m.n_max = 0;
    m.entity = {0, 0, -1, 0, 0};
    const Tensor mask = build_attention_mask(m);

    ad::Tape t;
    ad::Var out = masked_attention(t, t.constant(q0), t.constant(k0), t.constant(v0), mask, 2);
    for (int j = 0; j < c; ++j) CHECK(t.val(out).at(2, j) == v0.at(2, j));  // bitwise
}

TEST_CASE("masked_attention: gradients with mask match finite differences") {
    Rng rng(55);
    const int l = 6, c = 8;
    const Tensor q0 = random_tensor({l, c}, rng);
    const Tensor k0 = random_tensor({l, c}, rng);
    const Tensor v0 = random_tensor({l, c}, rng);
    EntityTokenMap m;
    m.n_v = l;
    m.n_max = 0;
    m.entity = {0, 1, 0, -1, 1, 0};
    const Tensor mask = build_attention_mask(m);
    const Tensor tgt = random_tensor({l, c}, rng);

    testutil::check_grad_wrt_leaf(q0, [&](ad::Tape& t, ad::Var x) {
        return t.mse(masked_attention(t, x, t.constant(k0), t.constant(v0), mask, 2),
                     t.constant(tgt));
    }, 1e-4);
    testutil::check_grad_wrt_leaf(k0, [&](ad::Tape& t, ad::Var x) {
        return t.mse(masked_attention(t, t.constant(q0), x, t.constant(v0), mask, 2),
                     t.constant(tgt));
    }, 1e-4);
    testutil::check_grad_wrt_leaf(v0, [&](ad::Tape& t, ad::Var x) {
        return t.mse(masked_attention(t, t.constant(q0), t.constant(k0), x, mask, 2),
                     t.constant(tgt));
    }, 1e-4);
}

TEST_CASE("ama_forward: slice contract and entity isolation") {
    Rng rng(56);
    const int c = 8, n_v = 6;
    AmaParams params = AmaParams::init(c, 4, rng);
    // make the layer non-trivial (zero-init wo/ff_w2 would hide leaks)
    for (auto* p : {&params.attn.wo, &params.ff_w2})
        for (auto& v : p->value.data) v = 0.3 * rng.normal();

    sg::SceneGraph g = two_node_graph();
    const std::vector<int> assign = {0, 0, 1, 1, -1, -1};

    for (int n_max : {4, 8, 16}) {
        EntityTokenMap m = assign_entities(g, n_v, n_max, assign);
        ad::Tape t;
        ad::Var v_tokens = t.constant(random_tensor({n_v, c}, rng));
        ad::Var c_hat = t.constant(random_tensor({n_max, c}, rng));
        ad::Var attr = t.constant(random_tensor({n_max, c}, rng));
        ad::Var out = ama_forward(t, v_tokens, c_hat, attr, m, params);
        CHECK(t.val(out).shape == std::vector<int>({n_v, c}));  // output length = N_v
    }

    // perturb everything belonging to entity 1; entity-0 rows must not move
    const int n_max = 4;
    EntityTokenMap m = assign_entities(g, n_v, n_max, assign);
    const Tensor v0 = random_tensor({n_v, c}, rng);
    Tensor chat0 = random_tensor({n_max, c}, rng);
    Tensor attr0 = random_tensor({n_max, c}, rng);

    ad::Tape t1;
    const Tensor base =
        t1.val(ama_forward(t1, t1.constant(v0), t1.constant(chat0), t1.constant(attr0), m, params));

    Tensor v1 = v0;
    for (int j = 0; j < c; ++j) {
        v1.at(2, j) += rng.normal();  // visual tokens of entity 1
        v1.at(3, j) += rng.normal();
        chat0.at(1, j) += rng.normal();  // Ĉ row of entity 1
        attr0.at(1, j) += rng.normal();  // Ẽᵃ row of entity 1
    }
    ad::Tape t2;
    const Tensor pert =
        t2.val(ama_forward(t2, t2.constant(v1), t2.constant(chat0), t2.constant(attr0), m, params));
    for (int i : {0, 1, 4, 5}) {  // entity-0 visual rows and background rows
        for (int j = 0; j < c; ++j) CHECK(std::abs(pert.at(i, j) - base.at(i, j)) < 1e-12);
    }
    bool moved = false;
    for (int j = 0; j < c; ++j) moved = moved || pert.at(2, j) != base.at(2, j);
    CHECK(moved);
}

TEST_CASE("ama_forward: all-padding map isolates visual tokens from object slots") {
    Rng rng(57);
    const int c = 8, n_v = 4, n_max = 3;
    AmaParams params = AmaParams::init(c, 2, rng);
    for (auto& v : params.attn.wo.value.data) v = 0.3 * rng.normal();

    // N_o = 0 equivalent: all visual tokens background, every slot padding
    EntityTokenMap m;
    m.n_v = n_v;
    m.n_max = n_max;
    for (int i = 0; i < n_v; ++i) m.entity.push_back(0);
    for (int i = 0; i < 2 * n_max; ++i) m.entity.push_back(kPaddingEntity);

    const Tensor v0 = random_tensor({n_v, c}, rng);
    ad::Tape t1, t2;
    const Tensor out1 = t1.val(ama_forward(t1, t1.constant(v0), t1.constant(random_tensor({n_max, c}, rng)),
                                           t1.constant(random_tensor({n_max, c}, rng)), m, params));
    const Tensor out2 = t2.val(ama_forward(t2, t2.constant(v0), t2.constant(random_tensor({n_max, c}, rng)),
                                           t2.constant(random_tensor({n_max, c}, rng)), m, params));
    for (size_t i = 0; i < out1.data.size(); ++i) CHECK(out1.data[i] == out2.data[i]);
}

TEST_CASE("self_attend_streams: lengths, zero-init pass-through") {
    Rng rng(58);
    const int c = 8;
    AmaParams params = AmaParams::init(c, 4, rng);  // wo zero-initialized

    const Tensor text0 = random_tensor({3, c}, rng);
    const Tensor img0 = random_tensor({4, c}, rng);
    const Tensor attr0 = random_tensor({2, c}, rng);

    ad::Tape t;
    StreamOutputs so = self_attend_streams(t, t.constant(text0), t.constant(img0),
                                           t.constant(attr0), 5, params);
    CHECK(t.val(so.v_tokens).shape == std::vector<int>({7, c}));  // 3 + 4
    CHECK(t.val(so.attr_tilde).shape == std::vector<int>({5, c}));

    // zero-init output projections: streams pass through unchanged
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < c; ++j) CHECK(t.val(so.v_tokens).at(i, j) == text0.at(i, j));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < c; ++j) CHECK(t.val(so.v_tokens).at(3 + i, j) == img0.at(i, j));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < c; ++j) CHECK(t.val(so.attr_tilde).at(i, j) == attr0.at(i, j));
    for (int j = 0; j < c; ++j) CHECK(t.val(so.attr_tilde).at(2, j) == 0.0);  // padding rows

    // single-token streams: one self-attention step is a learned transform
    AmaParams p2 = AmaParams::init(c, 2, rng);
    for (auto& v : p2.text_sa.wo.value.data) v = 0.5 * rng.normal();
    const Tensor one0 = random_tensor({1, c}, rng);
    ad::Tape t2;
    StreamOutputs s2 = self_attend_streams(t2, t2.constant(one0), t2.constant(img0),
                                           t2.constant(attr0), 4, p2);
    // softmax over a single key is 1: out = x + (x Wv) Wo
    for (int j = 0; j < c; ++j) {
        double av = 0;
        std::vector<double> xv(static_cast<size_t>(c), 0.0);
        for (int k = 0; k < c; ++k)
            for (int q = 0; q < c; ++q)
                xv[static_cast<size_t>(k)] += one0.at(0, q) * p2.text_sa.wv.value.at(q, k);
        for (int k = 0; k < c; ++k) av += xv[static_cast<size_t>(k)] * p2.text_sa.wo.value.at(k, j);
        CHECK(t2.val(s2.v_tokens).at(0, j) == doctest::Approx(one0.at(0, j) + av).epsilon(1e-10));
    }
}
