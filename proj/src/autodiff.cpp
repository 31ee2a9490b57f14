#include "deepsense/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deepsense {

namespace {

void check_same_graph(Node* a, Node* b) {
    if (a->graph != b->graph) throw std::invalid_argument("operands belong to different graphs");
}

bool any_requires_grad(const std::vector<Node*>& parents) {
    for (Node* p : parents)
        if (p->requires_grad) return true;
    return false;
}

}  // namespace

Node* Graph::leaf(Tensor value, bool requires_grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.graph = this;
    return &n;
}

Node* Graph::make(Tensor value, std::vector<Node*> parents, std::function<void(Node&)> back) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.graph = this;
    n.requires_grad = any_requires_grad(parents);
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(back);
    return &n;
}

void Graph::backward(Node* loss) {
    if (loss == nullptr || loss->graph != this)
        throw std::invalid_argument("backward: loss node does not belong to this graph");
    if (!loss->value.is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got shape " + loss->value.shape_str());
    if (backward_done_)
        throw std::logic_error("backward: already run on this graph; build a fresh graph");
    backward_done_ = true;

    loss->grad = Tensor::ones(loss->value.shape());
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = *it;
        if (!n.grad.empty() && n.backward) n.backward(n);
    }
}

Tensor& grad_buf(Node* n) {
    if (n->grad.empty()) n->grad = Tensor::zeros(n->value.shape());
    return n->grad;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <typename F, typename DF>
Node* unary_op(Node* x, F fwd, DF bwd) {
    Tensor out(x->value.shape());
    const int64_t n = x->value.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(x->value[i]);
    return x->graph->make(std::move(out), {x}, [bwd](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) g[i] += bwd(p->value[i], self.value[i]) * self.grad[i];
    });
}

enum class Bin { Add, Sub, Mul, Div };

double bin_eval(Bin op, double a, double b) {
    switch (op) {
        case Bin::Add: return a + b;
        case Bin::Sub: return a - b;
        case Bin::Mul: return a * b;
        case Bin::Div: return a / b;
    }
    return 0;
}

Node* binary_op(Bin op, Node* a, Node* b, const char* name) {
    check_same_graph(a, b);
    const bool a_scalar = a->value.is_scalar();
    const bool b_scalar = b->value.is_scalar();
    if (!a_scalar && !b_scalar && !a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());

    const Tensor& big = a_scalar ? b->value : a->value;
    Tensor out(big.shape());
    const int64_t n = big.numel();
    for (int64_t i = 0; i < n; ++i)
        out[i] = bin_eval(op, a->value[a_scalar ? 0 : i], b->value[b_scalar ? 0 : i]);

    return a->graph->make(std::move(out), {a, b}, [op, a_scalar, b_scalar](Node& self) {
        Node* a = self.parents[0];
        Node* b = self.parents[1];
        const int64_t n = self.value.numel();
        if (a->requires_grad) {
            Tensor& ga = grad_buf(a);
            for (int64_t i = 0; i < n; ++i) {
                const double bv = b->value[b_scalar ? 0 : i];
                double d = 0;
                switch (op) {
                    case Bin::Add: d = 1; break;
                    case Bin::Sub: d = 1; break;
                    case Bin::Mul: d = bv; break;
                    case Bin::Div: d = 1.0 / bv; break;
                }
                ga[a_scalar ? 0 : i] += d * self.grad[i];
            }
        }
        if (b->requires_grad) {
            Tensor& gb = grad_buf(b);
            for (int64_t i = 0; i < n; ++i) {
                const double av = a->value[a_scalar ? 0 : i];
                const double bv = b->value[b_scalar ? 0 : i];
                double d = 0;
                switch (op) {
                    case Bin::Add: d = 1; break;
                    case Bin::Sub: d = -1; break;
                    case Bin::Mul: d = av; break;
                    case Bin::Div: d = -av / (bv * bv); break;
                }
                gb[b_scalar ? 0 : i] += d * self.grad[i];
            }
        }
    });
}

}  // namespace

Node* relu(Node* x) {
    return unary_op(
        x, [](double v) { return v > 0 ? v : 0.0; },
        [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Node* sigmoid(Node* x) {
    return unary_op(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Node* tanh_op(Node* x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Node* exp_op(Node* x) {
    return unary_op(
        x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Node* log_op(Node* x) {
    return unary_op(
        x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Node* sqrt_op(Node* x) {
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

Node* add(Node* a, Node* b) { return binary_op(Bin::Add, a, b, "add"); }
Node* sub(Node* a, Node* b) { return binary_op(Bin::Sub, a, b, "sub"); }
Node* mul(Node* a, Node* b) { return binary_op(Bin::Mul, a, b, "mul"); }
Node* div(Node* a, Node* b) { return binary_op(Bin::Div, a, b, "div"); }

Node* add_scalar(Node* x, double c) {
    return unary_op(
        x, [c](double v) { return v + c; },
        [](double, double) { return 1.0; });
}

Node* mul_scalar(Node* x, double c) {
    return unary_op(
        x, [c](double v) { return v * c; },
        [c](double, double) { return c; });
}

Node* neg(Node* x) { return mul_scalar(x, -1.0); }

// ---------------------------------------------------------------------------
// matmul / linear

namespace {

// C[m,n] += A[m,k] * B[k,n], optionally transposing either operand view.
void gemm_acc(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n,
              bool trans_a, bool trans_b) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t l = 0; l < k; ++l) {
            const double av = trans_a ? A[l * m + i] : A[i * k + l];
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : B + l * n;
            double* crow = C + i * n;
            if (trans_b) {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * B[j * k + l];
            } else {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

Node* matmul(Node* a, Node* b) {
    check_same_graph(a, b);
    if (a->value.rank() != 2 || b->value.rank() != 2)
        throw std::invalid_argument("matmul: expects rank-2 operands, got " + a->value.shape_str() +
                                    " and " + b->value.shape_str());
    const int64_t m = a->value.dim(0), k = a->value.dim(1);
    const int64_t k2 = b->value.dim(0), n = b->value.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
    Tensor out({m, n});
    gemm_acc(a->value.data(), b->value.data(), out.data(), m, k, n, false, false);
    return a->graph->make(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node* a = self.parents[0];
        Node* b = self.parents[1];
        if (a->requires_grad)  // dA = dC * B^T
            gemm_acc(self.grad.data(), b->value.data(), grad_buf(a).data(), m, n, k, false, true);
        if (b->requires_grad)  // dB = A^T * dC
            gemm_acc(a->value.data(), self.grad.data(), grad_buf(b).data(), k, m, n, true, false);
    });
}

Node* linear(Node* x, Node* w, Node* b) {
    check_same_graph(x, w);
    check_same_graph(x, b);
    if (x->value.rank() != 2 || w->value.rank() != 2 || b->value.rank() != 1)
        throw std::invalid_argument("linear: expects x[B,in], w[in,out], b[out]");
    const int64_t rows = x->value.dim(0), in = x->value.dim(1);
    const int64_t in2 = w->value.dim(0), out_dim = w->value.dim(1);
    if (in != in2 || b->value.dim(0) != out_dim)
        throw std::invalid_argument("linear: dimension mismatch x" + x->value.shape_str() + " w" +
                                    w->value.shape_str() + " b" + b->value.shape_str());
    Tensor out({rows, out_dim});
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < out_dim; ++j) out[i * out_dim + j] = b->value[j];
    gemm_acc(x->value.data(), w->value.data(), out.data(), rows, in, out_dim, false, false);
    return x->graph->make(std::move(out), {x, w, b}, [rows, in, out_dim](Node& self) {
        Node* x = self.parents[0];
        Node* w = self.parents[1];
        Node* b = self.parents[2];
        if (x->requires_grad)
            gemm_acc(self.grad.data(), w->value.data(), grad_buf(x).data(), rows, out_dim, in, false, true);
        if (w->requires_grad)
            gemm_acc(x->value.data(), self.grad.data(), grad_buf(w).data(), in, rows, out_dim, true, false);
        if (b->requires_grad) {
            Tensor& gb = grad_buf(b);
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < out_dim; ++j) gb[j] += self.grad[i * out_dim + j];
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d, valid padding, stride 1, cross-correlation semantics

Node* conv2d_valid(Node* input, Node* filters, Node* bias) {
    check_same_graph(input, filters);
    check_same_graph(input, bias);
    const Tensor& in = input->value;
    const Tensor& w = filters->value;
    if (w.rank() != 4) throw std::invalid_argument("conv2d_valid: filters must be rank-4 (c_out,c_in,fh,fw)");
    const bool batched = in.rank() == 4;
    if (!batched && in.rank() != 3)
        throw std::invalid_argument("conv2d_valid: input must be rank-3 (c_in,h,w) or rank-4 (B,c_in,h,w), got " +
                                    in.shape_str());
    const int64_t B = batched ? in.dim(0) : 1;
    const int64_t ci = in.dim(batched ? 1 : 0), h = in.dim(batched ? 2 : 1), wd = in.dim(batched ? 3 : 2);
    const int64_t co = w.dim(0), fh = w.dim(2), fw = w.dim(3);
    if (w.dim(1) != ci)
        throw std::invalid_argument("conv2d_valid: filter input channels " + std::to_string(w.dim(1)) +
                                    " != input channels " + std::to_string(ci));
    if (bias->value.rank() != 1 || bias->value.dim(0) != co)
        throw std::invalid_argument("conv2d_valid: bias must have shape [c_out]");
    if (fh > h || fw > wd)
        throw std::invalid_argument("conv2d_valid: filter " + w.shape_str() + " larger than input " + in.shape_str());
    const int64_t oh = h - fh + 1, ow = wd - fw + 1;

    std::vector<int64_t> out_shape = batched ? std::vector<int64_t>{B, co, oh, ow}
                                             : std::vector<int64_t>{co, oh, ow};
    Tensor out(out_shape);
    const double* ip = in.data();
    const double* wp = w.data();
    double* op = out.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t o = 0; o < co; ++o) {
            double* obase = op + ((b * co + o) * oh) * ow;
            const double bv = bias->value[o];
            for (int64_t i = 0; i < oh * ow; ++i) obase[i] = bv;
            for (int64_t c = 0; c < ci; ++c) {
                const double* ibase = ip + ((b * ci + c) * h) * wd;
                const double* wbase = wp + ((o * ci + c) * fh) * fw;
                for (int64_t fy = 0; fy < fh; ++fy) {
                    for (int64_t fx = 0; fx < fw; ++fx) {
                        const double wv = wbase[fy * fw + fx];
                        if (wv == 0.0) continue;
                        for (int64_t oy = 0; oy < oh; ++oy) {
                            const double* irow = ibase + (oy + fy) * wd + fx;
                            double* orow = obase + oy * ow;
                            for (int64_t ox = 0; ox < ow; ++ox) orow[ox] += wv * irow[ox];
                        }
                    }
                }
            }
        }
    }

    return input->graph->make(std::move(out), {input, filters, bias},
                              [B, ci, h, wd, co, fh, fw, oh, ow](Node& self) {
        Node* input = self.parents[0];
        Node* filters = self.parents[1];
        Node* bias = self.parents[2];
        const double* gp = self.grad.data();
        if (bias->requires_grad) {
            Tensor& gb = grad_buf(bias);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t o = 0; o < co; ++o) {
                    const double* grow = gp + ((b * co + o) * oh) * ow;
                    double s = 0;
                    for (int64_t i = 0; i < oh * ow; ++i) s += grow[i];
                    gb[o] += s;
                }
        }
        if (filters->requires_grad) {
            Tensor& gw = grad_buf(filters);
            const double* ip = input->value.data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t o = 0; o < co; ++o) {
                    const double* gbase = gp + ((b * co + o) * oh) * ow;
                    for (int64_t c = 0; c < ci; ++c) {
                        const double* ibase = ip + ((b * ci + c) * h) * wd;
                        double* wbase = gw.data() + ((o * ci + c) * fh) * fw;
                        for (int64_t fy = 0; fy < fh; ++fy)
                            for (int64_t fx = 0; fx < fw; ++fx) {
                                double s = 0;
                                for (int64_t oy = 0; oy < oh; ++oy) {
                                    const double* irow = ibase + (oy + fy) * wd + fx;
                                    const double* grow = gbase + oy * ow;
                                    for (int64_t ox = 0; ox < ow; ++ox) s += irow[ox] * grow[ox];
                                }
                                wbase[fy * fw + fx] += s;
                            }
                    }
                }
        }
        if (input->requires_grad) {
            Tensor& gi = grad_buf(input);
            const double* wp = filters->value.data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t o = 0; o < co; ++o) {
                    const double* gbase = gp + ((b * co + o) * oh) * ow;
                    for (int64_t c = 0; c < ci; ++c) {
                        double* ibase = gi.data() + ((b * ci + c) * h) * wd;
                        const double* wbase = wp + ((o * ci + c) * fh) * fw;
                        for (int64_t fy = 0; fy < fh; ++fy)
                            for (int64_t fx = 0; fx < fw; ++fx) {
                                const double wv = wbase[fy * fw + fx];
                                if (wv == 0.0) continue;
                                for (int64_t oy = 0; oy < oh; ++oy) {
                                    double* irow = ibase + (oy + fy) * wd + fx;
                                    const double* grow = gbase + oy * ow;
                                    for (int64_t ox = 0; ox < ow; ++ox) irow[ox] += wv * grow[ox];
                                }
                            }
                    }
                }
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops

Node* reshape(Node* x, std::vector<int64_t> shape) {
    if (shape_numel(shape) != x->value.numel())
        throw std::invalid_argument("reshape: element count mismatch " + x->value.shape_str() + " -> " +
                                    Tensor::shape_str(shape));
    Tensor out(std::move(shape), x->value.vec());
    return x->graph->make(std::move(out), {x}, [](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
    });
}

Node* concat(const std::vector<Node*>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const int rank = xs[0]->value.rank();
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
    std::vector<int64_t> shape = xs[0]->value.shape();
    int64_t cat_dim = 0;
    for (Node* x : xs) {
        check_same_graph(xs[0], x);
        if (x->value.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
        for (int a = 0; a < rank; ++a)
            if (a != axis && x->value.dim(a) != shape[static_cast<size_t>(a)])
                throw std::invalid_argument("concat: shape mismatch " + x->value.shape_str() + " vs " +
                                            Tensor::shape_str(shape) + " outside axis " + std::to_string(axis));
        cat_dim += x->value.dim(axis);
    }
    shape[static_cast<size_t>(axis)] = cat_dim;

    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= shape[static_cast<size_t>(a)];
    for (int a = axis + 1; a < rank; ++a) inner *= shape[static_cast<size_t>(a)];

    Tensor out(shape);
    int64_t off = 0;
    for (Node* x : xs) {
        const int64_t len = x->value.dim(axis) * inner;
        for (int64_t oi = 0; oi < outer; ++oi) {
            const double* src = x->value.data() + oi * len;
            double* dst = out.data() + oi * cat_dim * inner + off;
            std::copy(src, src + len, dst);
        }
        off += len;
    }

    return xs[0]->graph->make(std::move(out), xs, [outer, inner, cat_dim](Node& self) {
        int64_t off = 0;
        for (Node* p : self.parents) {
            const int64_t len = (p->value.numel() / (outer * inner)) * inner;
            if (p->requires_grad) {
                Tensor& g = grad_buf(p);
                for (int64_t oi = 0; oi < outer; ++oi) {
                    const double* src = self.grad.data() + oi * cat_dim * inner + off;
                    double* dst = g.data() + oi * len;
                    for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
                }
            }
            off += len;
        }
    });
}

Node* slice(Node* x, int axis, int64_t start, int64_t count) {
    if (x->value.rank() != 2) throw std::invalid_argument("slice: expects a rank-2 tensor");
    if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
    const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    const int64_t limit = axis == 0 ? rows : cols;
    if (start < 0 || count <= 0 || start + count > limit)
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") out of bounds for axis size " +
                                    std::to_string(limit));
    Tensor out(axis == 0 ? std::vector<int64_t>{count, cols} : std::vector<int64_t>{rows, count});
    if (axis == 0) {
        std::copy(x->value.data() + start * cols, x->value.data() + (start + count) * cols, out.data());
    } else {
        for (int64_t i = 0; i < rows; ++i)
            std::copy(x->value.data() + i * cols + start, x->value.data() + i * cols + start + count,
                      out.data() + i * count);
    }
    return x->graph->make(std::move(out), {x}, [axis, start, count, rows, cols](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        if (axis == 0) {
            for (int64_t i = 0; i < count * cols; ++i) g[start * cols + i] += self.grad[i];
        } else {
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < count; ++j) g[i * cols + start + j] += self.grad[i * count + j];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

namespace {

struct AxisSplit {
    int64_t outer, len, inner;
};

AxisSplit axis_split(const Tensor& t, int axis) {
    if (axis < 0 || axis >= t.rank())
        throw std::invalid_argument("reduce: axis " + std::to_string(axis) + " out of range for rank " +
                                    std::to_string(t.rank()));
    AxisSplit s{1, t.dim(axis), 1};
    for (int a = 0; a < axis; ++a) s.outer *= t.dim(a);
    for (int a = axis + 1; a < t.rank(); ++a) s.inner *= t.dim(a);
    return s;
}

std::vector<int64_t> reduced_shape(const Tensor& t, int axis) {
    std::vector<int64_t> shape;
    for (int a = 0; a < t.rank(); ++a)
        if (a != axis) shape.push_back(t.dim(a));
    if (shape.empty()) shape.push_back(1);
    return shape;
}

}  // namespace

Tensor argmax_tensor(const Tensor& x, int axis) {
    const AxisSplit s = axis_split(x, axis);
    Tensor out(reduced_shape(x, axis));
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
            int64_t best = 0;
            double bv = x[o * s.len * s.inner + i];
            for (int64_t l = 1; l < s.len; ++l) {
                const double v = x[(o * s.len + l) * s.inner + i];
                if (v > bv) {
                    bv = v;
                    best = l;
                }
            }
            out[o * s.inner + i] = static_cast<double>(best);
        }
    return out;
}

Node* reduce(Node* x, Reduce op, int axis) {
    const AxisSplit s = axis_split(x->value, axis);
    if (op == Reduce::Argmax) return x->graph->constant(argmax_tensor(x->value, axis));

    Tensor out(reduced_shape(x->value, axis));
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
            double acc = op == Reduce::Max ? x->value[o * s.len * s.inner + i] : 0.0;
            for (int64_t l = 0; l < s.len; ++l) {
                const double v = x->value[(o * s.len + l) * s.inner + i];
                if (op == Reduce::Max)
                    acc = std::max(acc, v);
                else
                    acc += v;
            }
            if (op == Reduce::Mean) acc /= static_cast<double>(s.len);
            out[o * s.inner + i] = acc;
        }

    return x->graph->make(std::move(out), {x}, [op, s](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        for (int64_t o = 0; o < s.outer; ++o)
            for (int64_t i = 0; i < s.inner; ++i) {
                const double up = self.grad[o * s.inner + i];
                if (op == Reduce::Max) {
                    // subgradient routed to the lowest max index
                    int64_t best = 0;
                    double bv = p->value[o * s.len * s.inner + i];
                    for (int64_t l = 1; l < s.len; ++l) {
                        const double v = p->value[(o * s.len + l) * s.inner + i];
                        if (v > bv) {
                            bv = v;
                            best = l;
                        }
                    }
                    g[(o * s.len + best) * s.inner + i] += up;
                } else {
                    const double d = op == Reduce::Mean ? up / static_cast<double>(s.len) : up;
                    for (int64_t l = 0; l < s.len; ++l) g[(o * s.len + l) * s.inner + i] += d;
                }
            }
    });
}

Node* sum_all(Node* x) {
    double s = 0;
    const int64_t n = x->value.numel();
    for (int64_t i = 0; i < n; ++i) s += x->value[i];
    return x->graph->make(Tensor::scalar(s), {x}, [](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        const double up = self.grad[0];
        const int64_t n = p->value.numel();
        for (int64_t i = 0; i < n; ++i) g[i] += up;
    });
}

Node* mean_all(Node* x) { return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x->value.numel())); }

// ---------------------------------------------------------------------------
// softmax family

namespace {

void check_rows(Node* x, const char* name) {
    if (x->value.rank() != 2) throw std::invalid_argument(std::string(name) + ": expects a rank-2 tensor");
}

}  // namespace

Node* log_softmax_rows(Node* x) {
    check_rows(x, "log_softmax_rows");
    const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor out({rows, cols});
    for (int64_t i = 0; i < rows; ++i) {
        const double* row = x->value.data() + i * cols;
        double mx = row[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double lse = 0;
        for (int64_t j = 0; j < cols; ++j) lse += std::exp(row[j] - mx);
        lse = std::log(lse) + mx;
        for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = row[j] - lse;
    }
    return x->graph->make(std::move(out), {x}, [rows, cols](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        for (int64_t i = 0; i < rows; ++i) {
            double gsum = 0;
            for (int64_t j = 0; j < cols; ++j) gsum += self.grad[i * cols + j];
            for (int64_t j = 0; j < cols; ++j)
                g[i * cols + j] += self.grad[i * cols + j] - std::exp(self.value[i * cols + j]) * gsum;
        }
    });
}

Node* softmax_rows(Node* x) {
    check_rows(x, "softmax_rows");
    const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor out({rows, cols});
    for (int64_t i = 0; i < rows; ++i) {
        const double* row = x->value.data() + i * cols;
        double mx = row[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (int64_t j = 0; j < cols; ++j) {
            const double e = std::exp(row[j] - mx);
            out[i * cols + j] = e;
            sum += e;
        }
        for (int64_t j = 0; j < cols; ++j) out[i * cols + j] /= sum;
    }
    return x->graph->make(std::move(out), {x}, [rows, cols](Node& self) {
        Node* p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = grad_buf(p);
        for (int64_t i = 0; i < rows; ++i) {
            double dot = 0;
            for (int64_t j = 0; j < cols; ++j) dot += self.grad[i * cols + j] * self.value[i * cols + j];
            for (int64_t j = 0; j < cols; ++j)
                g[i * cols + j] += self.value[i * cols + j] * (self.grad[i * cols + j] - dot);
        }
    });
}

}  // namespace deepsense
