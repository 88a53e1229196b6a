#include "pfdet/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace pfdet::ag {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using StrideT = Eigen::OuterStride<>;

namespace {
thread_local bool g_grad_enabled = true;
thread_local uint64_t g_order_counter = 0;

Value new_node(Tensor val) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->order = ++g_order_counter;
    return n;
}

bool track(const std::initializer_list<Value>& parents) {
    if (!g_grad_enabled) return false;
    for (const auto& p : parents)
        if (p && (p->requires_grad || p->backprop)) return true;
    return false;
}

void attach(const Value& node, std::vector<Value> parents, std::function<void(Node&)> fn) {
    node->parents = std::move(parents);
    node->backprop = std::move(fn);
    node->requires_grad = true;
}
}  // namespace

bool& grad_enabled() { return g_grad_enabled; }

void Node::add_grad(const Tensor& g) {
    ensure_grad();
    for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
}

Value make_leaf(Tensor t, bool requires_grad) {
    auto n = new_node(std::move(t));
    n->requires_grad = requires_grad;
    return n;
}

Value make_const(Tensor t) { return make_leaf(std::move(t), false); }

void backward(const Value& root) {
    if (root->val.numel() != 1)
        throw std::logic_error("backward: root must be scalar");
    // Collect the reachable graph, then run closures in reverse creation order.
    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        nodes.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const Node* a, const Node* b) { return a->order > b->order; });
    root->ensure_grad();
    root->grad.data[0] += 1.0;
    for (Node* n : nodes) {
        if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
    }
}

// ---- conv2d ---------------------------------------------------------------

namespace {

struct ConvDims {
    int cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, const char* who) {
    if (x.rank() != 3 || w.rank() != 4)
        throw DimensionError(std::string(who) + ": expected rank-3 input and rank-4 weight");
    ConvDims d{};
    d.cin = x.shape[0];
    d.h = x.shape[1];
    d.w = x.shape[2];
    d.cout = w.shape[0];
    d.kh = w.shape[2];
    d.kw = w.shape[3];
    d.stride = stride;
    d.pad = pad;
    if (w.shape[1] != d.cin)
        throw DimensionError(std::string(who) + ": channel mismatch, expected " +
                             std::to_string(w.shape[1]) + " input channels, got " +
                             std::to_string(d.cin));
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0)
        throw DimensionError(std::string(who) + ": kernel larger than padded input");
    return d;
}

// Fills col[k][pos] for output rows [r0,r1). col is row-major K x n,
// n = (r1-r0)*wo. Column order matches the weight's [cin][kh][kw] layout.
void im2col_tile(const Tensor& x, const ConvDims& d, int r0, int r1, double* col) {
    const int n = (r1 - r0) * d.wo;
    const double* xd = x.data.data();
    for (int ci = 0; ci < d.cin; ++ci) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const int k = (ci * d.kh + ki) * d.kw + kj;
                double* row = col + static_cast<size_t>(k) * n;
                for (int r = r0; r < r1; ++r) {
                    double* dst = row + static_cast<size_t>(r - r0) * d.wo;
                    const int in_r = r * d.stride - d.pad + ki;
                    if (in_r < 0 || in_r >= d.h) {
                        std::memset(dst, 0, sizeof(double) * d.wo);
                        continue;
                    }
                    const double* src = xd + (static_cast<size_t>(ci) * d.h + in_r) * d.w;
                    if (d.stride == 1) {
                        const int off = kj - d.pad;  // in_c for c = 0
                        int c_lo = std::max(0, -off);
                        int c_hi = std::min(d.wo, d.w - off);
                        if (c_lo > 0) std::memset(dst, 0, sizeof(double) * c_lo);
                        if (c_hi < c_lo) c_hi = c_lo;
                        if (c_hi > c_lo)
                            std::memcpy(dst + c_lo, src + c_lo + off,
                                        sizeof(double) * (c_hi - c_lo));
                        if (c_hi < d.wo) std::memset(dst + c_hi, 0, sizeof(double) * (d.wo - c_hi));
                    } else {
                        for (int c = 0; c < d.wo; ++c) {
                            const int in_c = c * d.stride - d.pad + kj;
                            dst[c] = (in_c >= 0 && in_c < d.w) ? src[in_c] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of dcol (K x n, rows [r0,r1)) back into dx.
void col2im_tile(Tensor& dx, const ConvDims& d, int r0, int r1, const double* col) {
    const int n = (r1 - r0) * d.wo;
    double* xd = dx.data.data();
    for (int ci = 0; ci < d.cin; ++ci) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const int k = (ci * d.kh + ki) * d.kw + kj;
                const double* row = col + static_cast<size_t>(k) * n;
                for (int r = r0; r < r1; ++r) {
                    const int in_r = r * d.stride - d.pad + ki;
                    if (in_r < 0 || in_r >= d.h) continue;
                    const double* src = row + static_cast<size_t>(r - r0) * d.wo;
                    double* dst = xd + (static_cast<size_t>(ci) * d.h + in_r) * d.w;
                    for (int c = 0; c < d.wo; ++c) {
                        const int in_c = c * d.stride - d.pad + kj;
                        if (in_c >= 0 && in_c < d.w) dst[in_c] += src[c];
                    }
                }
            }
        }
    }
}

// Output rows per im2col tile, bounded so the col buffer stays ~32 MB.
int tile_rows(const ConvDims& d) {
    const int64_t budget = 4 * 1000 * 1000;
    const int64_t k = static_cast<int64_t>(d.cin) * d.kh * d.kw;
    int rows = static_cast<int>(std::max<int64_t>(1, budget / std::max<int64_t>(1, k * d.wo)));
    return std::min(rows, d.ho);
}

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, const ConvDims& d,
                    Tensor& out, std::vector<double>& colbuf) {
    const int k = d.cin * d.kh * d.kw;
    const int rows = tile_rows(d);
    colbuf.resize(static_cast<size_t>(k) * rows * d.wo);
    MapCM wm(w.data.data(), d.cout, k);
    for (int r0 = 0; r0 < d.ho; r0 += rows) {
        const int r1 = std::min(d.ho, r0 + rows);
        const int n = (r1 - r0) * d.wo;
        im2col_tile(x, d, r0, r1, colbuf.data());
        MapCM col(colbuf.data(), k, n);
        Eigen::Map<MatRM, 0, StrideT> om(out.data.data() + static_cast<size_t>(r0) * d.wo, d.cout,
                                         n, StrideT(static_cast<int64_t>(d.ho) * d.wo));
        om.noalias() = wm * col;
    }
    if (b) {
        const int64_t hw = static_cast<int64_t>(d.ho) * d.wo;
        for (int c = 0; c < d.cout; ++c) {
            double* o = out.data.data() + c * hw;
            const double bv = b->data[c];
            for (int64_t i = 0; i < hw; ++i) o[i] += bv;
        }
    }
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvDims& d, const Tensor& dy,
                     Tensor* dx, Tensor* dw, Tensor* db) {
    const int k = d.cin * d.kh * d.kw;
    const int rows = tile_rows(d);
    std::vector<double> colbuf(static_cast<size_t>(k) * rows * d.wo);
    std::vector<double> dcolbuf;
    if (dx) dcolbuf.resize(colbuf.size());
    MapCM wm(w.data.data(), d.cout, k);
    for (int r0 = 0; r0 < d.ho; r0 += rows) {
        const int r1 = std::min(d.ho, r0 + rows);
        const int n = (r1 - r0) * d.wo;
        Eigen::Map<const MatRM, 0, StrideT> dym(dy.data.data() + static_cast<size_t>(r0) * d.wo,
                                                d.cout, n,
                                                StrideT(static_cast<int64_t>(d.ho) * d.wo));
        if (dw) {
            im2col_tile(x, d, r0, r1, colbuf.data());
            MapCM col(colbuf.data(), k, n);
            MapM dwm(dw->data.data(), d.cout, k);
            dwm.noalias() += dym * col.transpose();
        }
        if (dx) {
            MapM dcol(dcolbuf.data(), k, n);
            dcol.noalias() = wm.transpose() * dym;
            col2im_tile(*dx, d, r0, r1, dcolbuf.data());
        }
    }
    if (db) {
        const int64_t hw = static_cast<int64_t>(d.ho) * d.wo;
        for (int c = 0; c < d.cout; ++c) {
            const double* g = dy.data.data() + c * hw;
            double s = 0.0;
            for (int64_t i = 0; i < hw; ++i) s += g[i];
            db->data[c] += s;
        }
    }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    const ConvDims d = conv_dims(x->val, w->val, stride, pad, "conv2d");
    if (b && b->val.numel() != d.cout)
        throw DimensionError("conv2d: bias size does not match output channels");
    Tensor out({d.cout, d.ho, d.wo});
    std::vector<double> colbuf;
    conv2d_forward(x->val, w->val, b ? &b->val : nullptr, d, out, colbuf);
    auto node = new_node(std::move(out));
    if (track({x, w, b})) {
        std::vector<Value> parents = b ? std::vector<Value>{x, w, b} : std::vector<Value>{x, w};
        attach(node, parents, [x, w, b, d](Node& n) {
            Tensor* dx = nullptr;
            Tensor* dw = nullptr;
            Tensor* db = nullptr;
            if (x->requires_grad || x->backprop) {
                x->ensure_grad();
                dx = &x->grad;
            }
            if (w->requires_grad || w->backprop) {
                w->ensure_grad();
                dw = &w->grad;
            }
            if (b && (b->requires_grad || b->backprop)) {
                b->ensure_grad();
                db = &b->grad;
            }
            conv2d_backward(x->val, w->val, d, n.grad, dx, dw, db);
        });
    }
    return node;
}

// ---- conv_transpose2d ------------------------------------------------------

namespace {

// Inserts (stride-1) zeros between elements, plus extra zero rows/cols at the
// bottom/right for output_padding.
Value dilate2d(const Value& x, int stride, int extra) {
    const auto& s = x->val.shape;
    const int c = s[0], h = s[1], w = s[2];
    const int oh = (h - 1) * stride + 1 + extra;
    const int ow = (w - 1) * stride + 1 + extra;
    Tensor out({c, oh, ow});
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col)
                out.at(ci, r * stride, col * stride) = x->val.at(ci, r, col);
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x, stride, c, h, w](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            for (int ci = 0; ci < c; ++ci)
                for (int r = 0; r < h; ++r)
                    for (int col = 0; col < w; ++col)
                        x->grad.at(ci, r, col) += n.grad.at(ci, r * stride, col * stride);
        });
    }
    return node;
}

// [Cin,Cout,kh,kw] -> [Cout,Cin,kh,kw] with both kernel axes reversed. Its
// gradient transform is the same operation (involution).
Value flip_swap01(const Value& w) {
    const auto& s = w->val.shape;
    const int a = s[0], b = s[1], kh = s[2], kw = s[3];
    auto remap = [=](const Tensor& src, Tensor& dst) {
        for (int i = 0; i < a; ++i)
            for (int j = 0; j < b; ++j)
                for (int r = 0; r < kh; ++r)
                    for (int c = 0; c < kw; ++c) {
                        const size_t si = ((static_cast<size_t>(i) * b + j) * kh + r) * kw + c;
                        const size_t di =
                            ((static_cast<size_t>(j) * a + i) * kh + (kh - 1 - r)) * kw +
                            (kw - 1 - c);
                        dst.data[di] = src.data[si];
                    }
    };
    Tensor out({b, a, kh, kw});
    remap(w->val, out);
    auto node = new_node(std::move(out));
    if (track({w})) {
        attach(node, {w}, [w, a, b, kh, kw](Node& n) {
            if (!(w->requires_grad || w->backprop)) return;
            w->ensure_grad();
            for (int i = 0; i < a; ++i)
                for (int j = 0; j < b; ++j)
                    for (int r = 0; r < kh; ++r)
                        for (int c = 0; c < kw; ++c) {
                            const size_t si =
                                ((static_cast<size_t>(i) * b + j) * kh + r) * kw + c;
                            const size_t di =
                                ((static_cast<size_t>(j) * a + i) * kh + (kh - 1 - r)) * kw +
                                (kw - 1 - c);
                            w->grad.data[si] += n.grad.data[di];
                        }
        });
    }
    return node;
}

}  // namespace

Value conv_transpose2d(const Value& x, const Value& w, const Value& b, int stride, int pad,
                       int out_pad) {
    if (w->val.rank() != 4)
        throw DimensionError("conv_transpose2d: expected rank-4 weight");
    if (w->val.shape[0] != x->val.shape[0])
        throw DimensionError("conv_transpose2d: channel mismatch, expected " +
                             std::to_string(w->val.shape[0]) + " input channels, got " +
                             std::to_string(x->val.shape[0]));
    const int kh = w->val.shape[2];
    auto dil = dilate2d(x, stride, out_pad);
    auto wk = flip_swap01(w);
    return conv2d(dil, wk, b, 1, kh - 1 - pad);
}

// ---- dense / pointwise -----------------------------------------------------

Value linear(const Value& v, const Value& W, const Value& b) {
    if (v->val.rank() != 1 || W->val.rank() != 2)
        throw DimensionError("linear: expected vector input and matrix weight");
    const int in = v->val.shape[0];
    const int out = W->val.shape[0];
    if (W->val.shape[1] != in)
        throw DimensionError("linear: weight expects " + std::to_string(W->val.shape[1]) +
                             " inputs, got " + std::to_string(in));
    Tensor y({out});
    MapCM wm(W->val.data.data(), out, in);
    Eigen::Map<const Eigen::VectorXd> vm(v->val.data.data(), in);
    Eigen::Map<Eigen::VectorXd> ym(y.data.data(), out);
    ym.noalias() = wm * vm;
    if (b) {
        for (int i = 0; i < out; ++i) y.data[i] += b->val.data[i];
    }
    auto node = new_node(std::move(y));
    if (track({v, W, b})) {
        std::vector<Value> parents = b ? std::vector<Value>{v, W, b} : std::vector<Value>{v, W};
        attach(node, parents, [v, W, b, in, out](Node& n) {
            Eigen::Map<const Eigen::VectorXd> dy(n.grad.data.data(), out);
            if (W->requires_grad || W->backprop) {
                W->ensure_grad();
                MapM dwm(W->grad.data.data(), out, in);
                Eigen::Map<const Eigen::VectorXd> vm(v->val.data.data(), in);
                dwm.noalias() += dy * vm.transpose();
            }
            if (v->requires_grad || v->backprop) {
                v->ensure_grad();
                Eigen::Map<Eigen::VectorXd> dv(v->grad.data.data(), in);
                MapCM wm(W->val.data.data(), out, in);
                dv.noalias() += wm.transpose() * dy;
            }
            if (b && (b->requires_grad || b->backprop)) {
                b->ensure_grad();
                for (int i = 0; i < out; ++i) b->grad.data[i] += n.grad.data[i];
            }
        });
    }
    return node;
}

Value relu(const Value& x) {
    Tensor out = x->val;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i)
                if (x->val.data[i] > 0.0) x->grad.data[i] += n.grad.data[i];
        });
    }
    return node;
}

Value sigmoid(const Value& x) {
    Tensor out = x->val;
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                const double s = n.val.data[i];
                x->grad.data[i] += n.grad.data[i] * s * (1.0 - s);
            }
        });
    }
    return node;
}

Value add(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val))
        throw DimensionError("add: shape mismatch " + a->val.shape_str() + " vs " +
                             b->val.shape_str());
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
    auto node = new_node(std::move(out));
    if (track({a, b})) {
        attach(node, {a, b}, [a, b](Node& n) {
            if (a->requires_grad || a->backprop) a->add_grad(n.grad);
            if (b->requires_grad || b->backprop) b->add_grad(n.grad);
        });
    }
    return node;
}

Value scale(const Value& x, double s) {
    Tensor out = x->val;
    for (auto& v : out.data) v *= s;
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x, s](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i)
                x->grad.data[i] += s * n.grad.data[i];
        });
    }
    return node;
}

Value concat_channels(const std::vector<Value>& xs) {
    if (xs.empty()) throw DimensionError("concat_channels: empty input list");
    const int h = xs[0]->val.shape[1], w = xs[0]->val.shape[2];
    int ctot = 0;
    for (const auto& x : xs) {
        if (x->val.rank() != 3 || x->val.shape[1] != h || x->val.shape[2] != w)
            throw DimensionError("concat_channels: spatial mismatch, expected " +
                                 std::to_string(h) + "x" + std::to_string(w) + ", got " +
                                 x->val.shape_str());
        ctot += x->val.shape[0];
    }
    Tensor out({ctot, h, w});
    size_t off = 0;
    for (const auto& x : xs) {
        std::memcpy(out.data.data() + off, x->val.data.data(),
                    sizeof(double) * x->val.data.size());
        off += x->val.data.size();
    }
    auto node = new_node(std::move(out));
    bool need = false;
    for (const auto& x : xs)
        if (g_grad_enabled && (x->requires_grad || x->backprop)) need = true;
    if (need) {
        attach(node, xs, [xs](Node& n) {
            size_t off = 0;
            for (const auto& x : xs) {
                const size_t sz = x->val.data.size();
                if (x->requires_grad || x->backprop) {
                    x->ensure_grad();
                    for (size_t i = 0; i < sz; ++i) x->grad.data[i] += n.grad.data[off + i];
                }
                off += sz;
            }
        });
    }
    return node;
}

Value slice_channels(const Value& x, int c0, int c1) {
    if (x->val.rank() != 3 || c0 < 0 || c1 > x->val.shape[0] || c0 >= c1)
        throw DimensionError("slice_channels: bad range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") for " + x->val.shape_str());
    const int h = x->val.shape[1], w = x->val.shape[2];
    const size_t hw = static_cast<size_t>(h) * w;
    Tensor out({c1 - c0, h, w});
    std::memcpy(out.data.data(), x->val.data.data() + c0 * hw, sizeof(double) * out.data.size());
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x, c0, hw](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            const size_t off = c0 * hw;
            for (size_t i = 0; i < n.grad.data.size(); ++i) x->grad.data[off + i] += n.grad.data[i];
        });
    }
    return node;
}

Value broadcast_hw(const Value& v, int h, int w) {
    if (v->val.rank() != 1) throw DimensionError("broadcast_hw: expected a vector");
    const int d = v->val.shape[0];
    Tensor out({d, h, w});
    const size_t hw = static_cast<size_t>(h) * w;
    for (int c = 0; c < d; ++c) {
        double* o = out.data.data() + c * hw;
        const double val = v->val.data[c];
        for (size_t i = 0; i < hw; ++i) o[i] = val;
    }
    auto node = new_node(std::move(out));
    if (track({v})) {
        attach(node, {v}, [v, d, hw](Node& n) {
            if (!(v->requires_grad || v->backprop)) return;
            v->ensure_grad();
            for (int c = 0; c < d; ++c) {
                const double* g = n.grad.data.data() + c * hw;
                double s = 0.0;
                for (size_t i = 0; i < hw; ++i) s += g[i];
                v->grad.data[c] += s;
            }
        });
    }
    return node;
}

Value nearest_up2(const Value& x) {
    if (x->val.rank() != 3) throw DimensionError("nearest_up2: expected rank-3 input");
    const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
    Tensor out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < 2 * h; ++r)
            for (int col = 0; col < 2 * w; ++col)
                out.at(ci, r, col) = x->val.at(ci, r / 2, col / 2);
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x, c, h, w](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            for (int ci = 0; ci < c; ++ci)
                for (int r = 0; r < 2 * h; ++r)
                    for (int col = 0; col < 2 * w; ++col)
                        x->grad.at(ci, r / 2, col / 2) += n.grad.at(ci, r, col);
        });
    }
    return node;
}

namespace {
struct LerpIdx {
    int i0, i1;
    double w0, w1;
};

LerpIdx lerp_idx(int o, int out_n, int in_n) {
    const double scale = static_cast<double>(in_n) / out_n;
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in_n - 1.0) src = in_n - 1.0;
    LerpIdx li{};
    li.i0 = static_cast<int>(src);
    li.i1 = std::min(li.i0 + 1, in_n - 1);
    li.w1 = src - li.i0;
    li.w0 = 1.0 - li.w1;
    return li;
}
}  // namespace

Value bilinear_resize(const Value& x, int oh, int ow) {
    if (x->val.rank() != 3) throw DimensionError("bilinear_resize: expected rank-3 input");
    const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
    std::vector<LerpIdx> ri(oh), ci(ow);
    for (int r = 0; r < oh; ++r) ri[r] = lerp_idx(r, oh, h);
    for (int col = 0; col < ow; ++col) ci[col] = lerp_idx(col, ow, w);
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < oh; ++r)
            for (int col = 0; col < ow; ++col) {
                const auto& a = ri[r];
                const auto& b = ci[col];
                out.at(ch, r, col) = a.w0 * (b.w0 * x->val.at(ch, a.i0, b.i0) +
                                             b.w1 * x->val.at(ch, a.i0, b.i1)) +
                                     a.w1 * (b.w0 * x->val.at(ch, a.i1, b.i0) +
                                             b.w1 * x->val.at(ch, a.i1, b.i1));
            }
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x, c, oh, ow, ri, ci](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int r = 0; r < oh; ++r)
                    for (int col = 0; col < ow; ++col) {
                        const auto& a = ri[r];
                        const auto& b = ci[col];
                        const double g = n.grad.at(ch, r, col);
                        x->grad.at(ch, a.i0, b.i0) += g * a.w0 * b.w0;
                        x->grad.at(ch, a.i0, b.i1) += g * a.w0 * b.w1;
                        x->grad.at(ch, a.i1, b.i0) += g * a.w1 * b.w0;
                        x->grad.at(ch, a.i1, b.i1) += g * a.w1 * b.w1;
                    }
        });
    }
    return node;
}

Value mean_hw(const Value& x) {
    if (x->val.rank() != 3) throw DimensionError("mean_hw: expected rank-3 input");
    const int c = x->val.shape[0];
    const size_t hw = static_cast<size_t>(x->val.shape[1]) * x->val.shape[2];
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* p = x->val.data.data() + ch * hw;
        double s = 0.0;
        for (size_t i = 0; i < hw; ++i) s += p[i];
        out.data[ch] = s / static_cast<double>(hw);
    }
    auto node = new_node(std::move(out));
    if (track({x})) {
        attach(node, {x}, [x, c, hw](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            const double inv = 1.0 / static_cast<double>(hw);
            for (int ch = 0; ch < c; ++ch) {
                const double g = n.grad.data[ch] * inv;
                double* p = x->grad.data.data() + ch * hw;
                for (size_t i = 0; i < hw; ++i) p[i] += g;
            }
        });
    }
    return node;
}

Value sum_all(const Value& x) {
    double s = 0.0;
    for (double v : x->val.data) s += v;
    auto node = new_node(Tensor::scalar(s));
    if (track({x})) {
        attach(node, {x}, [x](Node& n) {
            if (!(x->requires_grad || x->backprop)) return;
            x->ensure_grad();
            const double g = n.grad.data[0];
            for (auto& v : x->grad.data) v += g;
        });
    }
    return node;
}

// ---- detection loss --------------------------------------------------------

namespace {
inline double log_sigmoid(double z) {
    // log(sigma(z)), stable for large |z|
    return z < 0.0 ? z - std::log1p(std::exp(z)) : -std::log1p(std::exp(-z));
}
}  // namespace

Value detection_loss(const Value& heat_logits, const Value& reg, const Tensor& heat_target,
                     const Tensor& pos_mask, const Tensor& reg_target, double alpha, double gamma,
                     double reg_weight) {
    if (!heat_logits->val.same_shape(heat_target))
        throw DimensionError("detection_loss: heatmap/target shape mismatch");
    if (!reg->val.same_shape(reg_target))
        throw DimensionError("detection_loss: regression/target shape mismatch");
    const int hh = heat_logits->val.shape[1], ww = heat_logits->val.shape[2];
    if (pos_mask.shape != std::vector<int>{hh, ww})
        throw DimensionError("detection_loss: pos_mask shape mismatch");

    double npos = 0.0;
    for (double v : heat_target.data)
        if (v > 0.5) npos += 1.0;
    double nmask = 0.0;
    for (double v : pos_mask.data) nmask += v;
    const double norm = 1.0 / std::max(1.0, npos);
    const double reg_norm = 1.0 / std::max(1.0, nmask);

    double focal = 0.0;
    for (size_t i = 0; i < heat_logits->val.data.size(); ++i) {
        const double y = heat_target.data[i];
        if (y < -0.5) continue;  // ignore band
        const double z = heat_logits->val.data[i];
        const double p = 1.0 / (1.0 + std::exp(-z));
        if (y > 0.5) {
            focal += -alpha * std::pow(1.0 - p, gamma) * log_sigmoid(z);
        } else {
            focal += -(1.0 - alpha) * std::pow(p, gamma) * log_sigmoid(-z);
        }
    }

    const int rch = reg->val.shape[0];
    const size_t hw = static_cast<size_t>(hh) * ww;
    double l1 = 0.0;
    for (size_t cell = 0; cell < hw; ++cell) {
        if (pos_mask.data[cell] <= 0.5) continue;
        for (int r = 0; r < rch; ++r) {
            const size_t i = r * hw + cell;
            l1 += std::abs(reg->val.data[i] - reg_target.data[i]);
        }
    }

    const double loss = focal * norm + reg_weight * l1 * reg_norm;
    auto node = new_node(Tensor::scalar(loss));
    if (track({heat_logits, reg})) {
        Tensor ht = heat_target;
        Tensor pm = pos_mask;
        Tensor rt = reg_target;
        attach(node, {heat_logits, reg},
               [heat_logits, reg, ht, pm, rt, alpha, gamma, norm, reg_norm, reg_weight, rch,
                hw](Node& n) {
                   const double g = n.grad.data[0];
                   if (heat_logits->requires_grad || heat_logits->backprop) {
                       heat_logits->ensure_grad();
                       for (size_t i = 0; i < heat_logits->val.data.size(); ++i) {
                           const double y = ht.data[i];
                           if (y < -0.5) continue;
                           const double z = heat_logits->val.data[i];
                           const double p = 1.0 / (1.0 + std::exp(-z));
                           double dz;
                           if (y > 0.5) {
                               dz = alpha * gamma * p * std::pow(1.0 - p, gamma) * log_sigmoid(z) -
                                    alpha * std::pow(1.0 - p, gamma + 1.0);
                           } else {
                               dz = (1.0 - alpha) * std::pow(p, gamma + 1.0) -
                                    (1.0 - alpha) * gamma * (1.0 - p) * std::pow(p, gamma) *
                                        log_sigmoid(-z);
                           }
                           heat_logits->grad.data[i] += g * norm * dz;
                       }
                   }
                   if (reg->requires_grad || reg->backprop) {
                       reg->ensure_grad();
                       for (size_t cell = 0; cell < hw; ++cell) {
                           if (pm.data[cell] <= 0.5) continue;
                           for (int r = 0; r < rch; ++r) {
                               const size_t i = r * hw + cell;
                               const double diff = reg->val.data[i] - rt.data[i];
                               const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                               reg->grad.data[i] += g * reg_weight * reg_norm * s;
                           }
                       }
                   }
               });
    }
    return node;
}

// ---- parameters ------------------------------------------------------------

Value ParamStore::create(const std::string& name, std::vector<int> shape, const InitSpec& init,
                         uint64_t seed) {
    if (params_.count(name))
        throw ConfigError("parameter registered twice: " + name);
    Tensor t(shape);
    auto rng = rng_for(seed, name);
    switch (init.kind) {
        case Init::FanInUniform: {
            // uniform with var 2/fan_in, which preserves activation scale
            // through rectified layers
            const double bound = std::sqrt(6.0 / std::max(1, init.fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : t.data) v = dist(rng);
            break;
        }
        case Init::Uniform: {
            std::uniform_real_distribution<double> dist(init.lo, init.hi);
            for (auto& v : t.data) v = dist(rng);
            break;
        }
        case Init::Zeros:
            break;
        case Init::IdentityMatrix: {
            if (shape.size() == 2) {
                const int n = std::min(shape[0], shape[1]);
                for (int i = 0; i < n; ++i) t.data[static_cast<size_t>(i) * shape[1] + i] = 1.0;
            } else if (shape.size() == 4 && shape[2] == 1 && shape[3] == 1) {
                const int n = std::min(shape[0], shape[1]);
                for (int i = 0; i < n; ++i) t.data[static_cast<size_t>(i) * shape[1] + i] = 1.0;
            } else {
                throw ConfigError("identity init needs a matrix or 1x1 conv weight: " + name);
            }
            break;
        }
    }
    auto v = make_leaf(std::move(t), true);
    params_[name] = v;
    return v;
}

Value ParamStore::adopt(const std::string& name, Tensor t) {
    if (params_.count(name))
        throw ConfigError("parameter registered twice: " + name);
    auto v = make_leaf(std::move(t), true);
    params_[name] = v;
    return v;
}

Value ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

int64_t ParamStore::total_scalars() const {
    int64_t n = 0;
    for (const auto& [_, v] : params_) n += v->val.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [_, v] : params_) {
        if (!v->grad.data.empty()) std::fill(v->grad.data.begin(), v->grad.data.end(), 0.0);
    }
}

}  // namespace pfdet::ag
