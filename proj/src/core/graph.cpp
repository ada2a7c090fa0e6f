#include "camogen/core/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "camogen/simd/simd.hpp"

namespace camogen::ad {

using simd::active;

namespace {
void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}
inline double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

int Tape::push(Tensor val, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::g(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.data.empty()) n.grad = Tensor(n.val.shape);
    return n.grad;
}

Var Tape::constant(Tensor t) { return {push(std::move(t), false)}; }
Var Tape::leaf(Tensor t) { return {push(std::move(t), true)}; }

Var Tape::param(Param& p) {
    const int idx = push(p.value, true);
    nodes_[static_cast<size_t>(idx)].bound = &p;
    return {idx};
}

const Tensor& Tape::val(Var v) const { return nodes_[static_cast<size_t>(v.i)].val; }
const Tensor& Tape::grad(Var v) const { return nodes_[static_cast<size_t>(v.i)].grad; }

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.same_shape(tb), "add: shape mismatch");
    Tensor out(ta.shape);
    active().add(ta.ptr(), tb.ptr(), out.ptr(), out.data.size());
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)
                active().axpy(1.0, go.ptr(), t.g(ai).ptr(), go.data.size());
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad)
                active().axpy(1.0, go.ptr(), t.g(bi).ptr(), go.data.size());
        };
    }
    return {self};
}

Var Tape::sub(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.same_shape(tb), "sub: shape mismatch");
    Tensor out(ta.shape);
    active().sub(ta.ptr(), tb.ptr(), out.ptr(), out.data.size());
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)
                active().axpy(1.0, go.ptr(), t.g(ai).ptr(), go.data.size());
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad)
                active().axpy(-1.0, go.ptr(), t.g(bi).ptr(), go.data.size());
        };
    }
    return {self};
}

Var Tape::mul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out(ta.shape);
    active().mul(ta.ptr(), tb.ptr(), out.ptr(), out.data.size());
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)
                active().fma_acc(go.ptr(), t.val({bi}).ptr(), t.g(ai).ptr(), go.data.size());
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad)
                active().fma_acc(go.ptr(), t.val({ai}).ptr(), t.g(bi).ptr(), go.data.size());
        };
    }
    return {self};
}

Var Tape::scale(Var a, double s) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    active().scale(ta.ptr(), s, out.ptr(), out.data.size());
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, s](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            active().axpy(s, go.ptr(), t.g(ai).ptr(), go.data.size());
        };
    }
    return {self};
}

Var Tape::add_weighted(Var a, double wa, Var b, double wb) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.same_shape(tb), "add_weighted: shape mismatch");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = wa * ta.data[i] + wb * tb.data[i];
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi, wa, wb](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)
                active().axpy(wa, go.ptr(), t.g(ai).ptr(), go.data.size());
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad)
                active().axpy(wb, go.ptr(), t.g(bi).ptr(), go.data.size());
        };
    }
    return {self};
}

Var Tape::silu(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double x = ta.data[i];
        out.data[i] = x * sigmoid_d(x);
    }
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            const Tensor& x = t.val({ai});
            Tensor& ga = t.g(ai);
            for (size_t i = 0; i < go.data.size(); ++i) {
                const double s = sigmoid_d(x.data[i]);
                ga.data[i] += go.data[i] * (s + x.data[i] * s * (1.0 - s));
            }
        };
    }
    return {self};
}

Var Tape::sigmoid(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = sigmoid_d(ta.data[i]);
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            const Tensor& y = t.nodes_[static_cast<size_t>(self)].val;
            Tensor& ga = t.g(ai);
            for (size_t i = 0; i < go.data.size(); ++i)
                ga.data[i] += go.data[i] * y.data[i] * (1.0 - y.data[i]);
        };
    }
    return {self};
}

Var Tape::clamp01(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = ta.data[i] < 0.0 ? 0.0 : (ta.data[i] > 1.0 ? 1.0 : ta.data[i]);
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            const Tensor& x = t.val({ai});
            Tensor& ga = t.g(ai);
            for (size_t i = 0; i < go.data.size(); ++i)
                if (x.data[i] > 0.0 && x.data[i] < 1.0) ga.data[i] += go.data[i];
        };
    }
    return {self};
}

// ------------------------------------------------------------- linear algebra

Var Tape::matmul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(), "matmul: shape mismatch");
    const int m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor out({m, n});
    linalg::gemm_nn(m, n, k, ta.ptr(), k, tb.ptr(), n, out.ptr(), n, false);
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi, m, n, k](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)  // dA = dY * B^T
                linalg::gemm_nt(m, k, n, go.ptr(), n, t.val({bi}).ptr(), n, t.g(ai).ptr(), k, true);
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad)  // dB = A^T * dY
                linalg::gemm_tn(k, n, m, t.val({ai}).ptr(), k, go.ptr(), n, t.g(bi).ptr(), n, true);
        };
    }
    return {self};
}

Var Tape::matmul_nt(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(), "matmul_nt: shape mismatch");
    const int m = ta.rows(), k = ta.cols(), n = tb.rows();
    Tensor out({m, n});
    linalg::gemm_nt(m, n, k, ta.ptr(), k, tb.ptr(), k, out.ptr(), n, false);
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi, m, n, k](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)  // dA = dY * B
                linalg::gemm_nn(m, k, n, go.ptr(), n, t.val({bi}).ptr(), k, t.g(ai).ptr(), k, true);
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad)  // dB = dY^T * A
                linalg::gemm_tn(n, k, m, go.ptr(), n, t.val({ai}).ptr(), k, t.g(bi).ptr(), k, true);
        };
    }
    return {self};
}

Var Tape::add_rowvec(Var a, Var row) {
    const Tensor &ta = val(a), &tr = val(row);
    check(ta.rank() == 2 && tr.numel() == ta.cols(), "add_rowvec: shape mismatch");
    Tensor out(ta.shape);
    const int m = ta.rows(), n = ta.cols();
    for (int i = 0; i < m; ++i) active().add(ta.row(i), tr.ptr(), out.row(i), static_cast<size_t>(n));
    const bool ng = tracked(a) || tracked(row);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, ri = row.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, ri, m, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad)
                active().axpy(1.0, go.ptr(), t.g(ai).ptr(), go.data.size());
            if (t.nodes_[static_cast<size_t>(ri)].needs_grad) {
                Tensor& gr = t.g(ri);
                for (int i = 0; i < m; ++i)
                    active().axpy(1.0, go.row(i), gr.ptr(), static_cast<size_t>(n));
            }
        };
    }
    return {self};
}

Var Tape::linear(Var x, Var w, Var b) {
    Var y = matmul(x, w);
    if (!b.ok()) return y;
    return add_rowvec(y, b);
}

// -------------------------------------------------------------------- shape

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& ta = val(a);
    check(Tensor::numel_of(shape) == ta.numel(), "reshape: numel mismatch");
    Tensor out(std::move(shape), ta.data);
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            active().axpy(1.0, go.ptr(), t.g(ai).ptr(), go.data.size());
        };
    }
    return {self};
}

Var Tape::transpose(Var a) {
    const Tensor& ta = val(a);
    check(ta.rank() == 2, "transpose: need rank-2");
    const int m = ta.rows(), n = ta.cols();
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, m, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            Tensor& ga = t.g(ai);
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) ga.at(i, j) += go.at(j, i);
        };
    }
    return {self};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    const int n = val(parts[0]).cols();
    int m = 0;
    bool ng = false;
    for (Var p : parts) {
        check(val(p).rank() == 2 && val(p).cols() == n, "concat_rows: col mismatch");
        m += val(p).rows();
        ng = ng || tracked(p);
    }
    Tensor out({m, n});
    int at = 0;
    for (Var p : parts) {
        const Tensor& tp = val(p);
        std::copy(tp.data.begin(), tp.data.end(), out.data.begin() + static_cast<size_t>(at) * n);
        at += tp.rows();
    }
    std::vector<int> idx;
    for (Var p : parts) idx.push_back(p.i);
    const int self = push(std::move(out), ng);
    if (ng) {
        nodes_[static_cast<size_t>(self)].back = [self, idx, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            int at = 0;
            for (int pi : idx) {
                const int rows = t.val({pi}).rows();
                if (t.nodes_[static_cast<size_t>(pi)].needs_grad)
                    active().axpy(1.0, go.ptr() + static_cast<size_t>(at) * n, t.g(pi).ptr(),
                                  static_cast<size_t>(rows) * n);
                at += rows;
            }
        };
    }
    return {self};
}

Var Tape::slice_rows(Var a, int start, int len) {
    const Tensor& ta = val(a);
    check(ta.rank() == 2 && start >= 0 && len >= 0 && start + len <= ta.rows(),
          "slice_rows: out of range");
    const int n = ta.cols();
    Tensor out({len, n});
    std::copy(ta.data.begin() + static_cast<size_t>(start) * n,
              ta.data.begin() + static_cast<size_t>(start + len) * n, out.data.begin());
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, start, len, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            active().axpy(1.0, go.ptr(), t.g(ai).ptr() + static_cast<size_t>(start) * n,
                          static_cast<size_t>(len) * n);
        };
    }
    return {self};
}

Var Tape::mean_rows(Var a) {
    const Tensor& ta = val(a);
    check(ta.rank() == 2 && ta.rows() >= 1, "mean_rows: need rank-2");
    const int m = ta.rows(), n = ta.cols();
    Tensor out({1, n});
    for (int i = 0; i < m; ++i) active().axpy(1.0, ta.row(i), out.ptr(), static_cast<size_t>(n));
    active().scale(out.ptr(), 1.0 / m, out.ptr(), static_cast<size_t>(n));
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, m, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            Tensor& ga = t.g(ai);
            for (int i = 0; i < m; ++i)
                active().axpy(1.0 / m, go.ptr(), ga.row(i), static_cast<size_t>(n));
        };
    }
    return {self};
}

Var Tape::broadcast_row(Var a, int m) {
    const Tensor& ta = val(a);
    check(ta.rank() == 2 && ta.rows() == 1, "broadcast_row: need [1,n]");
    const int n = ta.cols();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) std::copy(ta.data.begin(), ta.data.end(), out.row(i));
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, m, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            Tensor& ga = t.g(ai);
            for (int i = 0; i < m; ++i)
                active().axpy(1.0, go.row(i), ga.ptr(), static_cast<size_t>(n));
        };
    }
    return {self};
}

// ---------------------------------------------------------------- reductions

Var Tape::sum_all(Var a) {
    const Tensor& ta = val(a);
    Tensor out({1});
    out.data[0] = active().sum(ta.ptr(), ta.data.size());
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai](Tape& t) {
            const double go = t.nodes_[static_cast<size_t>(self)].grad.data[0];
            Tensor& ga = t.g(ai);
            for (auto& v : ga.data) v += go;
        };
    }
    return {self};
}

Var Tape::mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(val(a).numel())); }

Var Tape::mse(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check(ta.same_shape(tb), "mse: shape mismatch");
    const double n = static_cast<double>(ta.numel());
    Tensor out({1});
    out.data[0] = active().sq_diff_sum(ta.ptr(), tb.ptr(), ta.data.size()) / n;
    const bool ng = tracked(a) || tracked(b);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i, bi = b.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai, bi, n](Tape& t) {
            const double go = t.nodes_[static_cast<size_t>(self)].grad.data[0];
            const Tensor &x = t.val({ai}), &y = t.val({bi});
            const double c = 2.0 * go / n;
            if (t.nodes_[static_cast<size_t>(ai)].needs_grad) {
                Tensor& ga = t.g(ai);
                for (size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] += c * (x.data[i] - y.data[i]);
            }
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad) {
                Tensor& gb = t.g(bi);
                for (size_t i = 0; i < gb.data.size(); ++i)
                    gb.data[i] += c * (y.data[i] - x.data[i]);
            }
        };
    }
    return {self};
}

// ------------------------------------------------------------------- softmax

namespace {
// rows of dst = softmax(rows of src + optional bias rows)
void softmax_rows_forward(const Tensor& src, const Tensor* bias, Tensor& dst) {
    const int m = src.rows(), n = src.cols();
    std::vector<double> buf(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        const double* s = src.row(i);
        if (bias) {
            active().add(s, bias->row(i), buf.data(), static_cast<size_t>(n));
            s = buf.data();
        }
        const double mx = active().max(s, static_cast<size_t>(n));
        double* d = dst.row(i);
        double tot = 0.0;
        for (int j = 0; j < n; ++j) {
            d[j] = std::exp(s[j] - mx);
            tot += d[j];
        }
        active().scale(d, 1.0 / tot, d, static_cast<size_t>(n));
    }
}

// dS = A ⊙ (dA − rowdot(dA,A)); writes into dsrc (+=)
void softmax_rows_backward(const Tensor& soft, const Tensor& gout, Tensor& gsrc) {
    const int m = soft.rows(), n = soft.cols();
    for (int i = 0; i < m; ++i) {
        const double* a = soft.row(i);
        const double* da = gout.row(i);
        double* ds = gsrc.row(i);
        const double r = active().dot(da, a, static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) ds[j] += a[j] * (da[j] - r);
    }
}
}  // namespace

Var Tape::softmax_rows(Var a, const Tensor* bias) {
    const Tensor& ta = val(a);
    check(ta.rank() == 2, "softmax_rows: need rank-2");
    if (bias) check(bias->same_shape(ta), "softmax_rows: bias shape mismatch");
    Tensor out(ta.shape);
    softmax_rows_forward(ta, bias, out);
    const bool ng = tracked(a);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ai = a.i;
        nodes_[static_cast<size_t>(self)].back = [self, ai](Tape& t) {
            softmax_rows_backward(t.nodes_[static_cast<size_t>(self)].val,
                                  t.nodes_[static_cast<size_t>(self)].grad, t.g(ai));
        };
    }
    return {self};
}

Var Tape::attention(Var q, Var k, Var v, int heads, double scl, const Tensor* bias) {
    const Tensor &tq = val(q), &tk = val(k), &tv = val(v);
    check(tq.rank() == 2 && tk.rank() == 2 && tv.rank() == 2, "attention: rank-2 inputs");
    check(tq.cols() == tk.cols() && tk.cols() == tv.cols(), "attention: width mismatch");
    check(tk.rows() == tv.rows(), "attention: K/V length mismatch");
    const int c = tq.cols();
    check(heads >= 1 && c % heads == 0, "attention: width not divisible by heads");
    const int lq = tq.rows(), lk = tk.rows(), d = c / heads;
    if (bias) check(bias->rows() == lq && bias->cols() == lk, "attention: bias shape mismatch");

    // per-head softmax matrices saved for backward
    auto soft = std::make_shared<std::vector<Tensor>>();
    soft->reserve(static_cast<size_t>(heads));
    Tensor out({lq, c});
    Tensor logits({lq, lk});
    for (int h = 0; h < heads; ++h) {
        const double* qh = tq.ptr() + h * d;
        const double* kh = tk.ptr() + h * d;
        const double* vh = tv.ptr() + h * d;
        linalg::gemm_nt(lq, lk, d, qh, c, kh, c, logits.ptr(), lk, false);
        active().scale(logits.ptr(), scl, logits.ptr(), logits.data.size());
        Tensor a({lq, lk});
        softmax_rows_forward(logits, bias, a);
        linalg::gemm_nn(lq, d, lk, a.ptr(), lk, vh, c, out.ptr() + h * d, c, false);
        soft->push_back(std::move(a));
    }

    const bool ng = tracked(q) || tracked(k) || tracked(v);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int qi = q.i, ki = k.i, vi = v.i;
        nodes_[static_cast<size_t>(self)].back = [self, qi, ki, vi, heads, scl, d, c, lq, lk,
                                                  soft](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            const Tensor &tq = t.val({qi}), &tk = t.val({ki}), &tv = t.val({vi});
            const bool nq = t.nodes_[static_cast<size_t>(qi)].needs_grad;
            const bool nk = t.nodes_[static_cast<size_t>(ki)].needs_grad;
            const bool nv = t.nodes_[static_cast<size_t>(vi)].needs_grad;
            Tensor da({lq, lk}), ds({lq, lk});
            for (int h = 0; h < heads; ++h) {
                const Tensor& a = (*soft)[static_cast<size_t>(h)];
                const double* dout_h = go.ptr() + h * d;
                if (nv)  // dV_h += A^T * dOut_h
                    linalg::gemm_tn(lk, d, lq, a.ptr(), lk, dout_h, c,
                                    t.g(vi).ptr() + h * d, c, true);
                if (!nq && !nk) continue;
                // dA = dOut_h * V_h^T
                linalg::gemm_nt(lq, lk, d, dout_h, c, tv.ptr() + h * d, c, da.ptr(), lk, false);
                ds.zero();
                softmax_rows_backward(a, da, ds);
                active().scale(ds.ptr(), scl, ds.ptr(), ds.data.size());
                if (nq)  // dQ_h += dS * K_h
                    linalg::gemm_nn(lq, d, lk, ds.ptr(), lk, tk.ptr() + h * d, c,
                                    t.g(qi).ptr() + h * d, c, true);
                if (nk)  // dK_h += dS^T * Q_h
                    linalg::gemm_tn(lk, d, lq, ds.ptr(), lk, tq.ptr() + h * d, c,
                                    t.g(ki).ptr() + h * d, c, true);
            }
        };
    }
    return {self};
}

Var Tape::rows_gather(Var table, std::vector<int> indices) {
    const Tensor& tt = val(table);
    check(tt.rank() == 2, "rows_gather: need rank-2 table");
    const int n = tt.cols();
    Tensor out({static_cast<int>(indices.size()), n});
    for (size_t i = 0; i < indices.size(); ++i) {
        check(indices[i] >= 0 && indices[i] < tt.rows(), "rows_gather: index out of range");
        std::copy(tt.row(indices[i]), tt.row(indices[i]) + n, out.row(static_cast<int>(i)));
    }
    const bool ng = tracked(table);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int ti = table.i;
        nodes_[static_cast<size_t>(self)].back = [self, ti, indices, n](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            Tensor& gt = t.g(ti);
            for (size_t i = 0; i < indices.size(); ++i)
                active().axpy(1.0, go.row(static_cast<int>(i)), gt.row(indices[i]),
                              static_cast<size_t>(n));
        };
    }
    return {self};
}

// ------------------------------------------------------------------- spatial

namespace {
struct ConvDims {
    int b, cin, hin, win, cout, kh, kw, stride, pad, hout, wout;
    int ckk() const { return cin * kh * kw; }
    int hw() const { return hout * wout; }
};

void im2col(const double* img, const ConvDims& d, double* col) {
    // col: [cin*kh*kw, hout*wout]
    for (int c = 0; c < d.cin; ++c) {
        const double* plane = img + static_cast<size_t>(c) * d.hin * d.win;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                double* crow = col + (static_cast<size_t>(c) * d.kh * d.kw +
                                      static_cast<size_t>(ky) * d.kw + kx) * d.hw();
                for (int oy = 0; oy < d.hout; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    double* dst = crow + static_cast<size_t>(oy) * d.wout;
                    if (iy < 0 || iy >= d.hin) {
                        active().fill(dst, 0.0, static_cast<size_t>(d.wout));
                        continue;
                    }
                    const double* srow = plane + static_cast<size_t>(iy) * d.win;
                    for (int ox = 0; ox < d.wout; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        dst[ox] = (ix >= 0 && ix < d.win) ? srow[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, const ConvDims& d, double* img) {
    for (int c = 0; c < d.cin; ++c) {
        double* plane = img + static_cast<size_t>(c) * d.hin * d.win;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const double* crow = col + (static_cast<size_t>(c) * d.kh * d.kw +
                                            static_cast<size_t>(ky) * d.kw + kx) * d.hw();
                for (int oy = 0; oy < d.hout; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.hin) continue;
                    double* drow = plane + static_cast<size_t>(iy) * d.win;
                    const double* srow = crow + static_cast<size_t>(oy) * d.wout;
                    for (int ox = 0; ox < d.wout; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        if (ix >= 0 && ix < d.win) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}
}  // namespace

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor &tx = val(x), &tw = val(w);
    check(tx.rank() == 4 && tw.rank() == 4, "conv2d: need [B,C,H,W] and [Cout,Cin,kh,kw]");
    check(tx.dim(1) == tw.dim(1), "conv2d: channel mismatch");
    ConvDims d;
    d.b = tx.dim(0);
    d.cin = tx.dim(1);
    d.hin = tx.dim(2);
    d.win = tx.dim(3);
    d.cout = tw.dim(0);
    d.kh = tw.dim(2);
    d.kw = tw.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.hout = (d.hin + 2 * pad - d.kh) / stride + 1;
    d.wout = (d.win + 2 * pad - d.kw) / stride + 1;
    check(d.hout > 0 && d.wout > 0, "conv2d: empty output");
    if (b.ok()) check(val(b).numel() == d.cout, "conv2d: bias size mismatch");

    Tensor out({d.b, d.cout, d.hout, d.wout});
    Tensor col({d.ckk(), d.hw()});
    const size_t in_img = static_cast<size_t>(d.cin) * d.hin * d.win;
    const size_t out_img = static_cast<size_t>(d.cout) * d.hw();
    for (int bi = 0; bi < d.b; ++bi) {
        im2col(tx.ptr() + bi * in_img, d, col.ptr());
        linalg::gemm_nn(d.cout, d.hw(), d.ckk(), tw.ptr(), d.ckk(), col.ptr(), d.hw(),
                        out.ptr() + bi * out_img, d.hw(), false);
        if (b.ok()) {
            const Tensor& tb = val(b);
            for (int co = 0; co < d.cout; ++co) {
                double* orow = out.ptr() + bi * out_img + static_cast<size_t>(co) * d.hw();
                const double bv = tb.data[static_cast<size_t>(co)];
                for (int i = 0; i < d.hw(); ++i) orow[i] += bv;
            }
        }
    }

    const bool ng = tracked(x) || tracked(w) || (b.ok() && tracked(b));
    const int self = push(std::move(out), ng);
    if (ng) {
        const int xi = x.i, wi = w.i, bi_ = b.ok() ? b.i : -1;
        nodes_[static_cast<size_t>(self)].back = [self, xi, wi, bi_, d, in_img, out_img](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            const Tensor &tx = t.val({xi}), &tw = t.val({wi});
            const bool nx = t.nodes_[static_cast<size_t>(xi)].needs_grad;
            const bool nw = t.nodes_[static_cast<size_t>(wi)].needs_grad;
            const bool nb = bi_ >= 0 && t.nodes_[static_cast<size_t>(bi_)].needs_grad;
            Tensor col({d.ckk(), d.hw()});
            Tensor dcol({d.ckk(), d.hw()});
            for (int b2 = 0; b2 < d.b; ++b2) {
                const double* dout = go.ptr() + b2 * out_img;
                if (nw) {  // dW += dOut * col^T  (col rebuilt: cheaper than caching)
                    im2col(tx.ptr() + b2 * in_img, d, col.ptr());
                    linalg::gemm_nt(d.cout, d.ckk(), d.hw(), dout, d.hw(), col.ptr(), d.hw(),
                                    t.g(wi).ptr(), d.ckk(), true);
                }
                if (nb) {
                    Tensor& gb = t.g(bi_);
                    for (int co = 0; co < d.cout; ++co)
                        gb.data[static_cast<size_t>(co)] +=
                            active().sum(dout + static_cast<size_t>(co) * d.hw(),
                                         static_cast<size_t>(d.hw()));
                }
                if (nx) {  // dcol = W^T * dOut ; scatter back
                    linalg::gemm_tn(d.ckk(), d.hw(), d.cout, tw.ptr(), d.ckk(), dout, d.hw(),
                                    dcol.ptr(), d.hw(), false);
                    col2im_acc(dcol.ptr(), d, t.g(xi).ptr() + b2 * in_img);
                }
            }
        };
    }
    return {self};
}

Var Tape::upsample2x(Var x) {
    const Tensor& tx = val(x);
    check(tx.rank() == 4, "upsample2x: need [B,C,H,W]");
    const int b = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    Tensor out({b, c, h * 2, w * 2});
    for (int bc = 0; bc < b * c; ++bc) {
        const double* src = tx.ptr() + static_cast<size_t>(bc) * h * w;
        double* dst = out.ptr() + static_cast<size_t>(bc) * h * w * 4;
        for (int y = 0; y < h; ++y) {
            for (int x2 = 0; x2 < w; ++x2) {
                const double v = src[static_cast<size_t>(y) * w + x2];
                double* p = dst + (static_cast<size_t>(2 * y) * 2 * w + 2 * x2);
                p[0] = v;
                p[1] = v;
                p[2 * w] = v;
                p[2 * w + 1] = v;
            }
        }
    }
    const bool ng = tracked(x);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int xi = x.i;
        nodes_[static_cast<size_t>(self)].back = [self, xi, b, c, h, w](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            Tensor& gx = t.g(xi);
            for (int bc = 0; bc < b * c; ++bc) {
                double* dst = gx.ptr() + static_cast<size_t>(bc) * h * w;
                const double* src = go.ptr() + static_cast<size_t>(bc) * h * w * 4;
                for (int y = 0; y < h; ++y)
                    for (int x2 = 0; x2 < w; ++x2) {
                        const double* p = src + (static_cast<size_t>(2 * y) * 2 * w + 2 * x2);
                        dst[static_cast<size_t>(y) * w + x2] +=
                            p[0] + p[1] + p[2 * w] + p[2 * w + 1];
                    }
            }
        };
    }
    return {self};
}

Var Tape::add_channel_bias(Var x, Var s) {
    const Tensor &tx = val(x), &ts = val(s);
    check(tx.rank() == 4 && ts.rank() == 2, "add_channel_bias: shapes");
    check(tx.dim(0) == ts.dim(0) && tx.dim(1) == ts.dim(1), "add_channel_bias: B/C mismatch");
    const int b = tx.dim(0), c = tx.dim(1), hw = tx.dim(2) * tx.dim(3);
    Tensor out(tx.shape);
    for (int i = 0; i < b * c; ++i) {
        const double bias = ts.data[static_cast<size_t>(i)];
        const double* src = tx.ptr() + static_cast<size_t>(i) * hw;
        double* dst = out.ptr() + static_cast<size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) dst[j] = src[j] + bias;
    }
    const bool ng = tracked(x) || tracked(s);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int xi = x.i, si = s.i;
        nodes_[static_cast<size_t>(self)].back = [self, xi, si, b, c, hw](Tape& t) {
            const Tensor& go = t.nodes_[static_cast<size_t>(self)].grad;
            if (t.nodes_[static_cast<size_t>(xi)].needs_grad)
                active().axpy(1.0, go.ptr(), t.g(xi).ptr(), go.data.size());
            if (t.nodes_[static_cast<size_t>(si)].needs_grad) {
                Tensor& gs = t.g(si);
                for (int i = 0; i < b * c; ++i)
                    gs.data[static_cast<size_t>(i)] +=
                        active().sum(go.ptr() + static_cast<size_t>(i) * hw,
                                     static_cast<size_t>(hw));
            }
        };
    }
    return {self};
}

// ------------------------------------------------------- depth-layout losses

Var Tape::dlc_loss(Var fq, Var p, double eps) {
    const Tensor &tf = val(fq), &tp = val(p);
    check(tf.rank() == 2 && tp.rank() == 2 && tf.cols() == tp.cols(), "dlc_loss: shapes");
    const int n = tf.rows(), m = tp.rows(), c = tf.cols();
    check(m >= 1 && n >= 1, "dlc_loss: empty inputs");

    std::vector<double> fnorm(static_cast<size_t>(n)), pnorm(static_cast<size_t>(m));
    for (int i = 0; i < n; ++i)
        fnorm[static_cast<size_t>(i)] =
            std::sqrt(active().dot(tf.row(i), tf.row(i), static_cast<size_t>(c)) + eps * eps);
    for (int j = 0; j < m; ++j)
        pnorm[static_cast<size_t>(j)] =
            std::sqrt(active().dot(tp.row(j), tp.row(j), static_cast<size_t>(c)) + eps * eps);

    auto best = std::make_shared<std::vector<int>>(static_cast<size_t>(n));
    auto best_cos = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double bc = -2.0;
        int bm = 0;
        for (int j = 0; j < m; ++j) {
            const double cs = active().dot(tf.row(i), tp.row(j), static_cast<size_t>(c)) /
                              (fnorm[static_cast<size_t>(i)] * pnorm[static_cast<size_t>(j)]);
            if (cs > bc) {  // strict: ties keep the smallest prototype index
                bc = cs;
                bm = j;
            }
        }
        (*best)[static_cast<size_t>(i)] = bm;
        (*best_cos)[static_cast<size_t>(i)] = bc;
        total += 1.0 - bc;
    }
    Tensor out({1});
    out.data[0] = total / n;

    const bool ng = tracked(fq) || tracked(p);
    const int self = push(std::move(out), ng);
    if (ng) {
        const int fi = fq.i, pi = p.i;
        nodes_[static_cast<size_t>(self)].back = [self, fi, pi, n, m, c, eps, best,
                                                  best_cos](Tape& t) {
            (void)m;
            const double go = t.nodes_[static_cast<size_t>(self)].grad.data[0];
            const Tensor &tf = t.val({fi}), &tp = t.val({pi});
            const bool nf = t.nodes_[static_cast<size_t>(fi)].needs_grad;
            const bool np = t.nodes_[static_cast<size_t>(pi)].needs_grad;
            for (int i = 0; i < n; ++i) {
                const int j = (*best)[static_cast<size_t>(i)];
                const double cs = (*best_cos)[static_cast<size_t>(i)];
                const double fn = std::sqrt(
                    active().dot(tf.row(i), tf.row(i), static_cast<size_t>(c)) + eps * eps);
                const double pn = std::sqrt(
                    active().dot(tp.row(j), tp.row(j), static_cast<size_t>(c)) + eps * eps);
                const double s = -go / n;  // d(1-cos)/dcos = -1, mean over n
                if (nf) {
                    // dcos/dfq_i = p_j/(fn*pn) - cos * fq_i / fn^2
                    double* gf = t.g(fi).row(i);
                    active().axpy(s / (fn * pn), tp.row(j), gf, static_cast<size_t>(c));
                    active().axpy(-s * cs / (fn * fn), tf.row(i), gf, static_cast<size_t>(c));
                }
                if (np) {
                    double* gp = t.g(pi).row(j);
                    active().axpy(s / (fn * pn), tf.row(i), gp, static_cast<size_t>(c));
                    active().axpy(-s * cs / (pn * pn), tp.row(j), gp, static_cast<size_t>(c));
                }
            }
        };
    }
    return {self};
}

// ------------------------------------------------------------------ backward

void Tape::backward(Var root) {
    check(root.ok() && val(root).numel() == 1, "backward: root must be scalar");
    g(root.i).data[0] = 1.0;
    for (int i = root.i; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.needs_grad || n.grad.data.empty()) continue;
        if (n.back) n.back(*this);
        if (n.bound)
            active().axpy(1.0, n.grad.ptr(), n.bound->grad.ptr(), n.grad.data.size());
    }
}

}  // namespace camogen::ad
