#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "camogen/core/tensor.hpp"

namespace camogen::ad {

// Trainable tensor living outside any tape. Gradients accumulate across
// per-sample tapes; the optimizer owns zeroing and the Adam state.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape);
        }
};

struct Var {
    int i = -1;
    bool ok() const { return i >= 0; }
};

// Reverse-mode tape. Nodes are created in topological order; backward walks
// them in reverse. One tape per sample per step; cheap to build and drop.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ----
    Var constant(Tensor t);           // no gradient tracked
    Var leaf(Tensor t);               // differentiable non-param leaf
    Var param(Param& p);              // gradient lands in p.grad after backward()

    const Tensor& val(Var v) const;
    const Tensor& grad(Var v) const;  // valid after backward for tracked nodes

    // ---- elementwise ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_weighted(Var a, double wa, Var b, double wb);
    Var silu(Var a);
    Var sigmoid(Var a);
    Var clamp01(Var a);

    // ---- linear algebra ----
    Var matmul(Var a, Var b);     // [m,k]x[k,n]
    Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T -> [m,n]
    Var linear(Var x, Var w, Var b = {});  // x*w + b(row broadcast)

    // ---- shape ----
    Var reshape(Var a, std::vector<int> shape);
    Var transpose(Var a);  // [m,n] -> [n,m]
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_rows(Var a, int start, int len);
    Var mean_rows(Var a);              // [m,n] -> [1,n]
    Var broadcast_row(Var a, int m);   // [1,n] -> [m,n]
    Var add_rowvec(Var a, Var row);    // [m,n] + [1,n]

    // ---- reductions ----
    Var sum_all(Var a);   // -> [1]
    Var mean_all(Var a);  // -> [1]
    Var mse(Var a, Var b);

    // ---- nonlinear blocks ----
    Var softmax_rows(Var a, const Tensor* bias = nullptr);
    // fused multi-head attention; bias ([Lq,Lk], additive pre-softmax) is a
    // constant; per-head width = C/heads
    Var attention(Var q, Var k, Var v, int heads, double scl, const Tensor* bias = nullptr);
    Var rows_gather(Var table, std::vector<int> indices);

    // ---- spatial ----
    // x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] or invalid
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var upsample2x(Var x);
    Var add_channel_bias(Var x, Var s);  // x: [B,C,H,W], s: [B,C]

    // ---- project-specific fused losses ----
    // mean_i min_m (1 - cos_eps(fq_i, p_m)); ties resolved to smallest m
    Var dlc_loss(Var fq, Var p, double eps);

    void backward(Var root);  // root must have numel 1
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        Param* bound = nullptr;
        std::function<void(Tape&)> back;
    };

    int push(Tensor val, bool needs_grad, std::function<void(Tape&)> back = nullptr);
    Tensor& g(int i);  // lazily allocated gradient buffer
    bool tracked(Var v) const { return nodes_[static_cast<size_t>(v.i)].needs_grad; }

    std::vector<Node> nodes_;
};

}  // namespace camogen::ad
