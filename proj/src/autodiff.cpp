#include "lsic/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace lsic::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

namespace {

MapM as_mat(Tensor& t, long rows, long cols) { return MapM(t.data.data(), rows, cols); }
CMapM as_mat(const Tensor& t, long rows, long cols) {
    return CMapM(t.data.data(), rows, cols);
}

Tape* same_tape(const Var& a, const Var& b) {
    if (a.tape() != b.tape()) throw std::logic_error("vars from different tapes");
    return a.tape();
}

} // namespace

const Tensor& Var::val() const { return tape_->value(id_); }

Var Tape::emit(Tensor value, std::vector<int> parents, BackwardFn bw) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents)
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor t) { return leaf(std::move(t), false); }

Var Tape::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
    Var v = leaf(p.value, true);
    bound_.emplace_back(v.id(), &p);
    return v;
}

Tensor& Tape::grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw std::logic_error("backward: var from another tape");
    if (value(loss.id()).size() != 1) throw std::logic_error("backward: loss must be scalar");

    std::vector<char> needed(nodes_.size(), 0);
    std::vector<int> stack{loss.id()};
    needed[static_cast<std::size_t>(loss.id())] = 1;
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        for (int p : nodes_[static_cast<std::size_t>(id)].parents) {
            auto& pn = nodes_[static_cast<std::size_t>(p)];
            if (pn.requires_grad && !needed[static_cast<std::size_t>(p)]) {
                needed[static_cast<std::size_t>(p)] = 1;
                stack.push_back(p);
            }
        }
    }

    grad(loss.id()).data[0] = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (!needed[static_cast<std::size_t>(id)] || !n.backward) continue;
        if (n.grad.size() == 0) continue; // no gradient reached this node
        n.backward(*this, id);
    }

    for (auto& [id, p] : bound_) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) continue;
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) p->grad.data[i] += n.grad.data[i];
    }
}

// ---------------------------------------------------------------------------
// elementwise / scalar
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_shape(a.val().same_shape(b.val()),
                "add " + a.val().shape_str() + " vs " + b.val().shape_str());
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a.val().data[i] + b.val().data[i];
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) {
            Tensor& ga = tp.grad(aid);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_shape(a.val().same_shape(b.val()),
                "sub " + a.val().shape_str() + " vs " + b.val().shape_str());
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a.val().data[i] - b.val().data[i];
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) {
            Tensor& ga = tp.grad(aid);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_shape(a.val().same_shape(b.val()),
                "mul " + a.val().shape_str() + " vs " + b.val().shape_str());
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a.val().data[i] * b.val().data[i];
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.value(aid);
        const Tensor& bv = tp.value(bid);
        if (tp.requires_grad(aid)) {
            Tensor& ga = tp.grad(aid);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.val().data[i] + s;
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
}

Var mul_scalar(const Var& a, double s) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.val().data[i] * s;
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid, s](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += s * g.data[i];
    });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var leaky_relu(const Var& a, double slope) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double x = a.val().data[i];
        out.data[i] = x > 0.0 ? x : slope * x;
    }
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid, slope](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(aid);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : slope);
    });
}

Var sigmoid(const Var& a) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double x = a.val().data[i];
        out.data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    });
}

Var tanh_op(const Var& a) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::tanh(a.val().data[i]);
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
}

Var abs_op(const Var& a) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::fabs(a.val().data[i]);
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(aid);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            double s = x.data[i] > 0.0 ? 1.0 : (x.data[i] < 0.0 ? -1.0 : 0.0);
            ga.data[i] += g.data[i] * s;
        }
    });
}

Var log_clamped(const Var& a, double eps) {
    Tensor out(a.val().shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::log(std::max(a.val().data[i], eps));
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid, eps](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(aid);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (x.data[i] > eps) ga.data[i] += g.data[i] / x.data[i];
    });
}

Var stop_gradient(const Var& a) { return a.tape()->constant(a.val()); }

Var reshape(const Var& a, std::vector<int> shape) {
    check_shape(Tensor::count(shape) == a.val().size(), "reshape element count");
    Tensor out(std::move(shape), a.val().data);
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a.val().data) s += v;
    int aid = a.id();
    return a.tape()->emit(Tensor::scalar(s), {aid}, [aid](Tape& tp, int self) {
        double g = tp.grad(self).data[0];
        Tensor& ga = tp.grad(aid);
        for (auto& v : ga.data) v += g;
    });
}

Var mean_all(const Var& a) {
    long n = a.val().size();
    double s = 0.0;
    for (double v : a.val().data) s += v;
    int aid = a.id();
    double inv = 1.0 / static_cast<double>(n);
    return a.tape()->emit(Tensor::scalar(s * inv), {aid}, [aid, inv](Tape& tp, int self) {
        double g = tp.grad(self).data[0] * inv;
        Tensor& ga = tp.grad(aid);
        for (auto& v : ga.data) v += g;
    });
}

Var mean_rows(const Var& a) {
    check_shape(a.val().rank() == 2, "mean_rows expects (n,d)");
    int n = a.val().dim(0), d = a.val().dim(1);
    Tensor out({d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(j)] += a.val().at2(i, j);
    double inv = 1.0 / n;
    for (auto& v : out.data) v *= inv;
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid, n, d, inv](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(aid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                ga.at2(i, j) += g.data[static_cast<std::size_t>(j)] * inv;
    });
}

Var row_broadcast(const Var& v, int n) {
    const Tensor& t = v.val();
    check_shape(t.rank() == 1 || (t.rank() == 2 && t.dim(0) == 1), "row_broadcast expects (d) or (1,d)");
    int d = t.rank() == 1 ? t.dim(0) : t.dim(1);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at2(i, j) = t.data[static_cast<std::size_t>(j)];
    int vid = v.id();
    return v.tape()->emit(std::move(out), {vid}, [vid, n, d](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gv = tp.grad(vid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gv.data[static_cast<std::size_t>(j)] += g.at2(i, j);
    });
}

Var mul_colvec(const Var& x, const Var& s) {
    Tape* t = same_tape(x, s);
    check_shape(x.val().rank() == 2 && s.val().rank() == 2 && s.val().dim(1) == 1 &&
                    s.val().dim(0) == x.val().dim(0),
                "mul_colvec (n,d)*(n,1)");
    int n = x.val().dim(0), d = x.val().dim(1);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) {
        double si = s.val().data[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j) out.at2(i, j) = x.val().at2(i, j) * si;
    }
    int xid = x.id(), sid = s.id();
    return t->emit(std::move(out), {xid, sid}, [xid, sid, n, d](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(xid);
        const Tensor& sv = tp.value(sid);
        if (tp.requires_grad(xid)) {
            Tensor& gx = tp.grad(xid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    gx.at2(i, j) += g.at2(i, j) * sv.data[static_cast<std::size_t>(i)];
        }
        if (tp.requires_grad(sid)) {
            Tensor& gs = tp.grad(sid);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j) acc += g.at2(i, j) * xv.at2(i, j);
                gs.data[static_cast<std::size_t>(i)] += acc;
            }
        }
    });
}

Var weighted_sum(const Var& a, Tensor w) {
    check_shape(a.val().same_shape(w), "weighted_sum shape");
    double s = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) s += a.val().data[i] * w.data[i];
    int aid = a.id();
    auto wp = std::make_shared<Tensor>(std::move(w));
    return a.tape()->emit(Tensor::scalar(s), {aid}, [aid, wp](Tape& tp, int self) {
        double g = tp.grad(self).data[0];
        Tensor& ga = tp.grad(aid);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g * wp->data[i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_shape(a.val().rank() == 2 && b.val().rank() == 2 && a.val().dim(1) == b.val().dim(0),
                "matmul " + a.val().shape_str() + " x " + b.val().shape_str());
    int n = a.val().dim(0), k = a.val().dim(1), m = b.val().dim(1);
    Tensor out({n, m});
    as_mat(out, n, m) = as_mat(a.val(), n, k) * as_mat(b.val(), k, m);
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid, n, k, m](Tape& tp, int self) {
        Tensor gcopy = tp.grad(self); // copy: grad map must not alias accumulation targets
        CMapM g(gcopy.data.data(), n, m);
        if (tp.requires_grad(aid)) {
            MapM ga = as_mat(tp.grad(aid), n, k);
            ga.noalias() += g * as_mat(tp.value(bid), k, m).transpose();
        }
        if (tp.requires_grad(bid)) {
            MapM gb = as_mat(tp.grad(bid), k, m);
            gb.noalias() += as_mat(tp.value(aid), n, k).transpose() * g;
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_shape(a.val().rank() == 2 && b.val().rank() == 2 && a.val().dim(1) == b.val().dim(1),
                "matmul_nt " + a.val().shape_str() + " x " + b.val().shape_str() + "^T");
    int n = a.val().dim(0), k = a.val().dim(1), m = b.val().dim(0);
    Tensor out({n, m});
    as_mat(out, n, m) = as_mat(a.val(), n, k) * as_mat(b.val(), m, k).transpose();
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid, n, k, m](Tape& tp, int self) {
        Tensor gcopy = tp.grad(self);
        CMapM g(gcopy.data.data(), n, m);
        if (tp.requires_grad(aid)) {
            MapM ga = as_mat(tp.grad(aid), n, k);
            ga.noalias() += g * as_mat(tp.value(bid), m, k);
        }
        if (tp.requires_grad(bid)) {
            MapM gb = as_mat(tp.grad(bid), m, k);
            gb.noalias() += g.transpose() * as_mat(tp.value(aid), n, k);
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    Tape* t = same_tape(x, w);
    same_tape(x, b);
    check_shape(x.val().rank() == 2 && w.val().rank() == 2 && x.val().dim(1) == w.val().dim(1),
                "linear x" + x.val().shape_str() + " w" + w.val().shape_str());
    check_shape(b.val().rank() == 1 && b.val().dim(0) == w.val().dim(0), "linear bias");
    int n = x.val().dim(0), din = x.val().dim(1), dout = w.val().dim(0);
    Tensor out({n, dout});
    as_mat(out, n, dout) =
        as_mat(x.val(), n, din) * as_mat(w.val(), dout, din).transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dout; ++j) out.at2(i, j) += b.val().data[static_cast<std::size_t>(j)];
    int xid = x.id(), wid = w.id(), bid = b.id();
    return t->emit(std::move(out), {xid, wid, bid}, [xid, wid, bid, n, din, dout](Tape& tp, int self) {
        Tensor gcopy = tp.grad(self);
        CMapM g(gcopy.data.data(), n, dout);
        if (tp.requires_grad(xid)) {
            MapM gx = as_mat(tp.grad(xid), n, din);
            gx.noalias() += g * as_mat(tp.value(wid), dout, din);
        }
        if (tp.requires_grad(wid)) {
            MapM gw = as_mat(tp.grad(wid), dout, din);
            gw.noalias() += g.transpose() * as_mat(tp.value(xid), n, din);
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dout; ++j) gb.data[static_cast<std::size_t>(j)] += g(i, j);
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    check_shape(a.val().rank() == 2 && b.val().rank() == 2 && a.val().dim(0) == b.val().dim(0),
                "concat_cols row counts");
    int n = a.val().dim(0), p = a.val().dim(1), q = b.val().dim(1);
    Tensor out({n, p + q});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) out.at2(i, j) = a.val().at2(i, j);
        for (int j = 0; j < q; ++j) out.at2(i, p + j) = b.val().at2(i, j);
    }
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid, n, p, q](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) {
            Tensor& ga = tp.grad(aid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < p; ++j) ga.at2(i, j) += g.at2(i, j);
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < q; ++j) gb.at2(i, j) += g.at2(i, p + j);
        }
    });
}

Var softmax_rows(const Var& a) {
    check_shape(a.val().rank() == 2, "softmax_rows expects (n,m)");
    int n = a.val().dim(0), m = a.val().dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < m; ++j) mx = std::max(mx, a.val().at2(i, j));
        double z = 0.0;
        for (int j = 0; j < m; ++j) {
            double e = std::exp(a.val().at2(i, j) - mx);
            out.at2(i, j) = e;
            z += e;
        }
        for (int j = 0; j < m; ++j) out.at2(i, j) /= z;
    }
    int aid = a.id();
    return a.tape()->emit(std::move(out), {aid}, [aid, n, m](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(aid);
        for (int i = 0; i < n; ++i) {
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += g.at2(i, j) * y.at2(i, j);
            for (int j = 0; j < m; ++j) ga.at2(i, j) += y.at2(i, j) * (g.at2(i, j) - dot);
        }
    });
}

Var gather_rows(const Var& table, std::vector<int> ids) {
    check_shape(table.val().rank() == 2, "gather_rows table (V,d)");
    int v = table.val().dim(0), d = table.val().dim(1);
    int n = static_cast<int>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= v) throw std::out_of_range("gather_rows: id out of range");
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at2(i, j) = table.val().at2(ids[static_cast<std::size_t>(i)], j);
    int tid = table.id();
    auto idp = std::make_shared<std::vector<int>>(std::move(ids));
    return table.tape()->emit(std::move(out), {tid}, [tid, idp, n, d](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gt = tp.grad(tid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gt.at2((*idp)[static_cast<std::size_t>(i)], j) += g.at2(i, j);
    });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
    check_shape(logits.val().rank() == 2, "cross_entropy_rows logits (n,V)");
    int n = logits.val().dim(0), v = logits.val().dim(1);
    check_shape(static_cast<int>(targets.size()) == n, "cross_entropy_rows target count");
    for (int tgt : targets)
        if (tgt < 0 || tgt >= v) throw std::out_of_range("cross_entropy_rows: target out of range");
    // cache probabilities for the backward pass
    auto probs = std::make_shared<Tensor>(std::vector<int>{n, v});
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < v; ++j) mx = std::max(mx, logits.val().at2(i, j));
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(logits.val().at2(i, j) - mx);
        double logz = std::log(z) + mx;
        loss += logz - logits.val().at2(i, targets[static_cast<std::size_t>(i)]);
        for (int j = 0; j < v; ++j)
            probs->at2(i, j) = std::exp(logits.val().at2(i, j) - logz);
    }
    loss /= n;
    int lid = logits.id();
    auto tg = std::make_shared<std::vector<int>>(targets);
    return logits.tape()->emit(Tensor::scalar(loss), {lid}, [lid, probs, tg, n, v](Tape& tp, int self) {
        double g = tp.grad(self).data[0] / n;
        Tensor& gl = tp.grad(lid);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < v; ++j) gl.at2(i, j) += g * probs->at2(i, j);
            gl.at2(i, (*tg)[static_cast<std::size_t>(i)]) -= g;
        }
    });
}

Var spectral_scale(const Var& w, const Tensor& u, const Tensor& v) {
    const Tensor& wv = w.val();
    check_shape(wv.rank() >= 2, "spectral_scale weight rank");
    long rows = wv.dim(0);
    long cols = wv.size() / rows;
    check_shape(u.size() == rows && v.size() == cols, "spectral_scale u/v sizes");
    double sigma = 0.0;
    for (long i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (long j = 0; j < cols; ++j)
            dot += wv.data[static_cast<std::size_t>(i * cols + j)] * v.data[static_cast<std::size_t>(j)];
        sigma += u.data[static_cast<std::size_t>(i)] * dot;
    }
    if (std::fabs(sigma) < 1e-12) sigma = sigma >= 0.0 ? 1e-12 : -1e-12;
    Tensor out(wv.shape);
    double inv = 1.0 / sigma;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = wv.data[i] * inv;
    int wid = w.id();
    auto up = std::make_shared<Tensor>(u);
    auto vp = std::make_shared<Tensor>(v);
    return w.tape()->emit(std::move(out), {wid}, [wid, up, vp, rows, cols, inv](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& wval = tp.value(wid);
        Tensor& gw = tp.grad(wid);
        double gdotw = 0.0;
        for (std::size_t i = 0; i < g.data.size(); ++i) gdotw += g.data[i] * wval.data[i];
        double coeff = gdotw * inv * inv;
        for (long i = 0; i < rows; ++i)
            for (long j = 0; j < cols; ++j) {
                std::size_t k = static_cast<std::size_t>(i * cols + j);
                gw.data[k] += g.data[k] * inv -
                              coeff * up->data[static_cast<std::size_t>(i)] * vp->data[static_cast<std::size_t>(j)];
            }
    });
}

// ---------------------------------------------------------------------------
// conv / spatial
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int n, c, h, w;      // input
    int o, kh, kw;       // kernel
    int stride, pad;
    int ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
    check_shape(x.rank() == 4 && wt.rank() == 4, "conv2d expects NCHW input and OIKK weight");
    ConvDims d;
    d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
    d.o = wt.dim(0); d.kh = wt.dim(2); d.kw = wt.dim(3);
    check_shape(wt.dim(1) == d.c, "conv2d channel mismatch");
    d.stride = stride; d.pad = pad;
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    check_shape(d.ho >= 1 && d.wo >= 1, "conv2d output size");
    return d;
}

// col: (n*ho*wo, c*kh*kw)
void im2col(const Tensor& x, const ConvDims& d, RowMat& col) {
    col.resize(static_cast<long>(d.n) * d.ho * d.wo, static_cast<long>(d.c) * d.kh * d.kw);
    for (int n = 0; n < d.n; ++n) {
        const double* xn = x.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w;
        for (int oh = 0; oh < d.ho; ++oh) {
            for (int ow = 0; ow < d.wo; ++ow) {
                long r = (static_cast<long>(n) * d.ho + oh) * d.wo + ow;
                double* dst = col.data() + r * col.cols();
                for (int c = 0; c < d.c; ++c) {
                    for (int i = 0; i < d.kh; ++i) {
                        int ih = oh * d.stride - d.pad + i;
                        for (int j = 0; j < d.kw; ++j) {
                            int iw = ow * d.stride - d.pad + j;
                            *dst++ = (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                                         ? xn[(static_cast<std::size_t>(c) * d.h + ih) * d.w + iw]
                                         : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const RowMat& col, const ConvDims& d, Tensor& gx) {
    for (int n = 0; n < d.n; ++n) {
        double* xn = gx.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w;
        for (int oh = 0; oh < d.ho; ++oh) {
            for (int ow = 0; ow < d.wo; ++ow) {
                long r = (static_cast<long>(n) * d.ho + oh) * d.wo + ow;
                const double* src = col.data() + r * col.cols();
                for (int c = 0; c < d.c; ++c) {
                    for (int i = 0; i < d.kh; ++i) {
                        int ih = oh * d.stride - d.pad + i;
                        for (int j = 0; j < d.kw; ++j) {
                            int iw = ow * d.stride - d.pad + j;
                            double v = *src++;
                            if (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                                xn[(static_cast<std::size_t>(c) * d.h + ih) * d.w + iw] += v;
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    Tape* t = same_tape(x, w);
    same_tape(x, b);
    ConvDims d = conv_dims(x.val(), w.val(), stride, pad);
    check_shape(b.val().rank() == 1 && b.val().dim(0) == d.o, "conv2d bias");

    RowMat col;
    im2col(x.val(), d, col);
    // (n*ho*wo, ckk) x (ckk, o)
    RowMat outm = col * as_mat(w.val(), d.o, static_cast<long>(d.c) * d.kh * d.kw).transpose();

    Tensor out({d.n, d.o, d.ho, d.wo});
    for (int n = 0; n < d.n; ++n)
        for (int oh = 0; oh < d.ho; ++oh)
            for (int ow = 0; ow < d.wo; ++ow) {
                long r = (static_cast<long>(n) * d.ho + oh) * d.wo + ow;
                for (int o = 0; o < d.o; ++o)
                    out.data[((static_cast<std::size_t>(n) * d.o + o) * d.ho + oh) * d.wo + ow] =
                        outm(r, o) + b.val().data[static_cast<std::size_t>(o)];
            }

    int xid = x.id(), wid = w.id(), bid = b.id();
    // col is recomputed in backward to keep the tape's memory footprint at
    // activations only (convs dominate peak memory otherwise)
    return t->emit(std::move(out), {xid, wid, bid}, [xid, wid, bid, d](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        // rearrange to (n*ho*wo, o)
        RowMat gm(static_cast<long>(d.n) * d.ho * d.wo, d.o);
        for (int n = 0; n < d.n; ++n)
            for (int oh = 0; oh < d.ho; ++oh)
                for (int ow = 0; ow < d.wo; ++ow) {
                    long r = (static_cast<long>(n) * d.ho + oh) * d.wo + ow;
                    for (int o = 0; o < d.o; ++o)
                        gm(r, o) = g.data[((static_cast<std::size_t>(n) * d.o + o) * d.ho + oh) * d.wo + ow];
                }

        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (long r = 0; r < gm.rows(); ++r)
                for (int o = 0; o < d.o; ++o) gb.data[static_cast<std::size_t>(o)] += gm(r, o);
        }
        long ckk = static_cast<long>(d.c) * d.kh * d.kw;
        if (tp.requires_grad(wid)) {
            RowMat col;
            im2col(tp.value(xid), d, col);
            MapM gw = as_mat(tp.grad(wid), d.o, ckk);
            gw.noalias() += gm.transpose() * col;
        }
        if (tp.requires_grad(xid)) {
            RowMat gcol = gm * as_mat(tp.value(wid), d.o, ckk);
            col2im_add(gcol, d, tp.grad(xid));
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    check_shape(x.val().rank() == 4, "upsample expects NCHW");
    int n = x.val().dim(0), c = x.val().dim(1), h = x.val().dim(2), w = x.val().dim(3);
    Tensor out({n, c, 2 * h, 2 * w});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double v = x.val().data[((static_cast<std::size_t>(b) * c + ch) * h + i) * w + j];
                    std::size_t base = ((static_cast<std::size_t>(b) * c + ch) * 2 * h + 2 * i) * 2 * w + 2 * j;
                    out.data[base] = v;
                    out.data[base + 1] = v;
                    out.data[base + 2 * w] = v;
                    out.data[base + 2 * w + 1] = v;
                }
    int xid = x.id();
    return x.tape()->emit(std::move(out), {xid}, [xid, n, c, h, w](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(xid);
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        std::size_t base = ((static_cast<std::size_t>(b) * c + ch) * 2 * h + 2 * i) * 2 * w + 2 * j;
                        gx.data[((static_cast<std::size_t>(b) * c + ch) * h + i) * w + j] +=
                            g.data[base] + g.data[base + 1] + g.data[base + 2 * w] + g.data[base + 2 * w + 1];
                    }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    Tape* t = same_tape(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    check_shape(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) &&
                    av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
                "concat_channels spatial dims");
    int n = av.dim(0), c1 = av.dim(1), c2 = bv.dim(1), h = av.dim(2), w = av.dim(3);
    Tensor out({n, c1 + c2, h, w});
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int bb = 0; bb < n; ++bb) {
        std::copy_n(av.data.data() + static_cast<std::size_t>(bb) * c1 * plane, c1 * plane,
                    out.data.data() + static_cast<std::size_t>(bb) * (c1 + c2) * plane);
        std::copy_n(bv.data.data() + static_cast<std::size_t>(bb) * c2 * plane, c2 * plane,
                    out.data.data() + static_cast<std::size_t>(bb) * (c1 + c2) * plane + c1 * plane);
    }
    int aid = a.id(), bid = b.id();
    return t->emit(std::move(out), {aid, bid}, [aid, bid, n, c1, c2, plane](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(aid)) {
            Tensor& ga = tp.grad(aid);
            for (int bb = 0; bb < n; ++bb)
                for (std::size_t i = 0; i < static_cast<std::size_t>(c1) * plane; ++i)
                    ga.data[static_cast<std::size_t>(bb) * c1 * plane + i] +=
                        g.data[static_cast<std::size_t>(bb) * (c1 + c2) * plane + i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (int bb = 0; bb < n; ++bb)
                for (std::size_t i = 0; i < static_cast<std::size_t>(c2) * plane; ++i)
                    gb.data[static_cast<std::size_t>(bb) * c2 * plane + i] +=
                        g.data[static_cast<std::size_t>(bb) * (c1 + c2) * plane + c1 * plane + i];
        }
    });
}

Var broadcast_add_channels(const Var& x, const Var& v) {
    Tape* t = same_tape(x, v);
    const Tensor& xv = x.val();
    const Tensor& vv = v.val();
    check_shape(xv.rank() == 4 && vv.rank() == 2 && vv.dim(0) == xv.dim(0) && vv.dim(1) == xv.dim(1),
                "broadcast_add_channels (N,C,H,W)+(N,C)");
    int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out = xv;
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            double add = vv.at2(b, ch);
            double* dst = out.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += add;
        }
    int xid = x.id(), vid = v.id();
    return t->emit(std::move(out), {xid, vid}, [xid, vid, n, c, plane](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(xid)) {
            Tensor& gx = tp.grad(xid);
            for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
        }
        if (tp.requires_grad(vid)) {
            Tensor& gv = tp.grad(vid);
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const double* src = g.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                    gv.at2(b, ch) += acc;
                }
        }
    });
}

Var add_bias_channels(const Var& x, const Var& b) {
    Tape* t = same_tape(x, b);
    const Tensor& xv = x.val();
    check_shape(xv.rank() == 4 && b.val().rank() == 1 && b.val().dim(0) == xv.dim(1),
                "add_bias_channels");
    int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out = xv;
    for (int bb = 0; bb < n; ++bb)
        for (int ch = 0; ch < c; ++ch) {
            double add = b.val().data[static_cast<std::size_t>(ch)];
            double* dst = out.data.data() + (static_cast<std::size_t>(bb) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += add;
        }
    int xid = x.id(), bid = b.id();
    return t->emit(std::move(out), {xid, bid}, [xid, bid, n, c, plane](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(xid)) {
            Tensor& gx = tp.grad(xid);
            for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
        }
        if (tp.requires_grad(bid)) {
            Tensor& gb = tp.grad(bid);
            for (int bb = 0; bb < n; ++bb)
                for (int ch = 0; ch < c; ++ch) {
                    const double* src = g.data.data() + (static_cast<std::size_t>(bb) * c + ch) * plane;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                    gb.data[static_cast<std::size_t>(ch)] += acc;
                }
        }
    });
}

Var spatial_to_rows(const Var& x, int sample) {
    const Tensor& xv = x.val();
    check_shape(xv.rank() == 4 && sample >= 0 && sample < xv.dim(0), "spatial_to_rows sample index");
    int c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    int hw = h * w;
    Tensor out({hw, c});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i)
            out.at2(i, ch) = xv.data[((static_cast<std::size_t>(sample) * c + ch) * hw) + i];
    int xid = x.id();
    return x.tape()->emit(std::move(out), {xid}, [xid, sample, c, hw](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(xid);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i)
                gx.data[((static_cast<std::size_t>(sample) * c + ch) * hw) + i] += g.at2(i, ch);
    });
}

Var rows_to_spatial(const std::vector<Var>& rows, int c, int h, int w) {
    if (rows.empty()) throw std::invalid_argument("rows_to_spatial: empty batch");
    Tape* t = rows.front().tape();
    int n = static_cast<int>(rows.size());
    int hw = h * w;
    std::vector<int> parents;
    for (const Var& r : rows) {
        same_tape(rows.front(), r);
        check_shape(r.val().rank() == 2 && r.val().dim(0) == hw && r.val().dim(1) == c,
                    "rows_to_spatial row shape");
        parents.push_back(r.id());
    }
    Tensor out({n, c, h, w});
    for (int b = 0; b < n; ++b) {
        const Tensor& rv = t->value(parents[static_cast<std::size_t>(b)]);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i)
                out.data[(static_cast<std::size_t>(b) * c + ch) * hw + i] = rv.at2(i, ch);
    }
    auto ids = std::make_shared<std::vector<int>>(parents);
    return t->emit(std::move(out), std::move(parents), [ids, n, c, hw](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        for (int b = 0; b < n; ++b) {
            int pid = (*ids)[static_cast<std::size_t>(b)];
            if (!tp.requires_grad(pid)) continue;
            Tensor& gr = tp.grad(pid);
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < hw; ++i)
                    gr.at2(i, ch) += g.data[(static_cast<std::size_t>(b) * c + ch) * hw + i];
        }
    });
}

Var slice_batch(const Var& x, int sample) {
    const Tensor& xv = x.val();
    check_shape(xv.rank() == 4 && sample >= 0 && sample < xv.dim(0), "slice_batch index");
    int c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    std::size_t sz = static_cast<std::size_t>(c) * h * w;
    Tensor out({1, c, h, w});
    std::copy_n(xv.data.data() + static_cast<std::size_t>(sample) * sz, sz, out.data.data());
    int xid = x.id();
    return x.tape()->emit(std::move(out), {xid}, [xid, sample, sz](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(xid);
        for (std::size_t i = 0; i < sz; ++i) gx.data[static_cast<std::size_t>(sample) * sz + i] += g.data[i];
    });
}

Var mean_spatial(const Var& x) {
    const Tensor& xv = x.val();
    check_shape(xv.rank() == 4, "mean_spatial expects NCHW");
    int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    double inv = 1.0 / static_cast<double>(plane);
    Tensor out({n, c});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double* src = xv.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            out.at2(b, ch) = acc * inv;
        }
    int xid = x.id();
    return x.tape()->emit(std::move(out), {xid}, [xid, n, c, plane, inv](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(xid);
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                double gv = g.at2(b, ch) * inv;
                double* dst = gx.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += gv;
            }
    });
}

Var spatial_broadcast(const Var& v, int h, int w) {
    const Tensor& vv = v.val();
    check_shape(vv.rank() == 2, "spatial_broadcast expects (N,C)");
    int n = vv.dim(0), c = vv.dim(1);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({n, c, h, w});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            double val = vv.at2(b, ch);
            double* dst = out.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = val;
        }
    int vid = v.id();
    return v.tape()->emit(std::move(out), {vid}, [vid, n, c, plane](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gv = tp.grad(vid);
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const double* src = g.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                gv.at2(b, ch) += acc;
            }
    });
}

Var mul_mask(const Var& x, Tensor mask) {
    const Tensor& xv = x.val();
    check_shape(xv.rank() == 4 && mask.rank() == 4 && mask.dim(0) == xv.dim(0) &&
                    mask.dim(1) == 1 && mask.dim(2) == xv.dim(2) && mask.dim(3) == xv.dim(3),
                "mul_mask (N,C,H,W)*(N,1,H,W)");
    int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out(xv.shape);
    for (int b = 0; b < n; ++b) {
        const double* m = mask.data.data() + static_cast<std::size_t>(b) * plane;
        for (int ch = 0; ch < c; ++ch) {
            const double* src = xv.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            double* dst = out.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * m[i];
        }
    }
    int xid = x.id();
    auto mp = std::make_shared<Tensor>(std::move(mask));
    return x.tape()->emit(std::move(out), {xid}, [xid, mp, n, c, plane](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(xid);
        for (int b = 0; b < n; ++b) {
            const double* m = mp->data.data() + static_cast<std::size_t>(b) * plane;
            for (int ch = 0; ch < c; ++ch) {
                const double* src = g.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                double* dst = gx.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * m[i];
            }
        }
    });
}

Var crop_resize_nearest(const Var& x, const std::vector<CropBox>& boxes, int out_h, int out_w) {
    const Tensor& xv = x.val();
    check_shape(xv.rank() == 4, "crop_resize expects NCHW");
    int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    check_shape(static_cast<int>(boxes.size()) == n, "crop_resize box count");
    for (const CropBox& b : boxes) {
        if (b.top < 0 || b.left < 0 || b.height <= 0 || b.width <= 0 || b.top + b.height > h ||
            b.left + b.width > w)
            throw std::invalid_argument("crop_resize: box out of bounds");
    }
    Tensor out({n, c, out_h, out_w});
    for (int b = 0; b < n; ++b) {
        const CropBox& bx = boxes[static_cast<std::size_t>(b)];
        for (int ch = 0; ch < c; ++ch)
            for (int oh = 0; oh < out_h; ++oh) {
                int ih = bx.top + static_cast<int>((static_cast<long>(oh) * bx.height) / out_h);
                for (int ow = 0; ow < out_w; ++ow) {
                    int iw = bx.left + static_cast<int>((static_cast<long>(ow) * bx.width) / out_w);
                    out.data[((static_cast<std::size_t>(b) * c + ch) * out_h + oh) * out_w + ow] =
                        xv.data[((static_cast<std::size_t>(b) * c + ch) * h + ih) * w + iw];
                }
            }
    }
    int xid = x.id();
    auto bp = std::make_shared<std::vector<CropBox>>(boxes);
    return x.tape()->emit(std::move(out), {xid}, [xid, bp, n, c, h, w, out_h, out_w](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(xid);
        for (int b = 0; b < n; ++b) {
            const CropBox& bx = (*bp)[static_cast<std::size_t>(b)];
            for (int ch = 0; ch < c; ++ch)
                for (int oh = 0; oh < out_h; ++oh) {
                    int ih = bx.top + static_cast<int>((static_cast<long>(oh) * bx.height) / out_h);
                    for (int ow = 0; ow < out_w; ++ow) {
                        int iw = bx.left + static_cast<int>((static_cast<long>(ow) * bx.width) / out_w);
                        gx.data[((static_cast<std::size_t>(b) * c + ch) * h + ih) * w + iw] +=
                            g.data[((static_cast<std::size_t>(b) * c + ch) * out_h + oh) * out_w + ow];
                    }
                }
        }
    });
}

} // namespace lsic::ad
