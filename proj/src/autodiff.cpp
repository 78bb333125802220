// SPDX-License-Identifier: Apache-2.0

#include "wxlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace wxlab::ad {

void Node::accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (!g.same_shape(value)) throw std::invalid_argument("gradient shape mismatch");
    if (grad.empty()) grad = Tensor(value.shape());
    grad += g;
}

Tensor Node::grad_or_zeros() const { return grad.empty() ? Tensor(value.shape()) : grad; }

static thread_local bool t_grad_enabled = true;

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

Var constant(Tensor v) { return std::make_shared<Node>(std::move(v), false); }
Var leaf(Tensor v) { return std::make_shared<Node>(std::move(v), true); }

// Wires up a new op node; when recording is off or no parent needs
// gradients, the node is detached and the closure is dropped.
static Var make_op(Tensor value, std::vector<Var> parents, std::function<void()> fn) {
    bool rg = false;
    if (t_grad_enabled) {
        for (const auto& p : parents) rg = rg || p->requires_grad;
    }
    auto node = std::make_shared<Node>(std::move(value), rg);
    if (rg) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return node;
}

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward on null node");
    if (root->value.numel() != 1) throw std::invalid_argument("backward needs a scalar root");
    if (!root->requires_grad) return;

    // Iterative post-order DFS; the post-order list ends with the root, so
    // walking it backwards visits every node after all of its consumers.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->accumulate(Tensor({1}, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn();
    }
}

static void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
    }
}

Var add(const Var& a, const Var& b) { return add_scaled(a, b, 1.0, 1.0); }
Var sub(const Var& a, const Var& b) { return add_scaled(a, b, 1.0, -1.0); }

Var add_scaled(const Var& a, const Var& b, double alpha, double beta) {
    check_same_shape(a, b, "add");
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = alpha * a->value[i] + beta * b->value[i];
    auto node = make_op(std::move(v), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, a, b, alpha, beta]() {
            if (a->requires_grad) {
                Tensor g = raw->grad;
                g *= alpha;
                a->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor g = raw->grad;
                g *= beta;
                b->accumulate(g);
            }
        };
    }
    return node;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * b->value[i];
    auto node = make_op(std::move(v), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, a, b]() {
            if (a->requires_grad) {
                Tensor g(raw->grad.shape());
                for (int64_t i = 0; i < g.numel(); ++i) g[i] = raw->grad[i] * b->value[i];
                a->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor g(raw->grad.shape());
                for (int64_t i = 0; i < g.numel(); ++i) g[i] = raw->grad[i] * a->value[i];
                b->accumulate(g);
            }
        };
    }
    return node;
}

Var scale(const Var& a, double s) {
    Tensor v = a->value;
    v *= s;
    auto node = make_op(std::move(v), {a}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, a, s]() {
            Tensor g = raw->grad;
            g *= s;
            a->accumulate(g);
        };
    }
    return node;
}

Var relu(const Var& a) {
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    auto node = make_op(std::move(v), {a}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, a]() {
            Tensor g(raw->grad.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                g[i] = a->value[i] > 0.0 ? raw->grad[i] : 0.0;
            }
            a->accumulate(g);
        };
    }
    return node;
}

namespace {

void check_4d(const Var& x, const char* op) {
    if (x->value.ndim() != 4) {
        throw std::invalid_argument(std::string(op) + " expects a [N,C,H,W] tensor, got " +
                                    x->value.shape_str());
    }
}

// Maps a padded row index back to a source row, or -1 for a zero cell.
int64_t map_row(int64_t i, int64_t h, PadY mode) {
    if (i >= 0 && i < h) return i;
    if (mode == PadY::zero) return -1;
    return i < 0 ? -i : 2 * (h - 1) - i;
}

int64_t map_col(int64_t j, int64_t w, PadX mode) {
    if (j >= 0 && j < w) return j;
    if (mode == PadX::zero) return -1;
    return ((j % w) + w) % w;
}

}  // namespace

Var pad2d(const Var& x, int64_t py, int64_t px, PadX x_mode, PadY y_mode) {
    check_4d(x, "pad2d");
    const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                  w = x->value.dim(3);
    if (py < 0 || px < 0) throw std::invalid_argument("pad sizes must be nonnegative");
    if (py >= h || px >= w) {
        throw std::invalid_argument("pad (" + std::to_string(py) + "," + std::to_string(px) +
                                    ") must be smaller than the field (" + std::to_string(h) +
                                    "," + std::to_string(w) + ")");
    }

    const int64_t oh = h + 2 * py, ow = w + 2 * px;
    Tensor v({n, c, oh, ow});
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t cc = 0; cc < c; ++cc) {
            for (int64_t i = 0; i < oh; ++i) {
                const int64_t si = map_row(i - py, h, y_mode);
                for (int64_t j = 0; j < ow; ++j) {
                    const int64_t sj = map_col(j - px, w, x_mode);
                    v.at(nn, cc, i, j) =
                        (si < 0 || sj < 0) ? 0.0 : x->value.at(nn, cc, si, sj);
                }
            }
        }
    }
    auto node = make_op(std::move(v), {x}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, py, px, x_mode, y_mode, n, c, h, w, oh, ow]() {
            Tensor g({n, c, h, w});
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t cc = 0; cc < c; ++cc) {
                    for (int64_t i = 0; i < oh; ++i) {
                        const int64_t si = map_row(i - py, h, y_mode);
                        if (si < 0) continue;
                        for (int64_t j = 0; j < ow; ++j) {
                            const int64_t sj = map_col(j - px, w, x_mode);
                            if (sj < 0) continue;
                            g.at(nn, cc, si, sj) += raw->grad.at(nn, cc, i, j);
                        }
                    }
                }
            }
            x->accumulate(g);
        };
    }
    return node;
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride) {
    check_4d(x, "conv2d");
    if (w->value.ndim() != 4) throw std::invalid_argument("conv2d weight must be [O,C,kh,kw]");
    if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
    const int64_t n = x->value.dim(0), ci = x->value.dim(1), h = x->value.dim(2),
                  wd = x->value.dim(3);
    const int64_t co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != ci) {
        throw std::invalid_argument("conv2d input channels " + std::to_string(ci) +
                                    " do not match weight channels " +
                                    std::to_string(w->value.dim(1)));
    }
    if (bias && bias->value.numel() != co) throw std::invalid_argument("conv2d bias size mismatch");
    if (h < kh || wd < kw) throw std::invalid_argument("conv2d input smaller than kernel");
    const int64_t oh = (h - kh) / stride + 1, ow = (wd - kw) / stride + 1;

    Tensor v({n, co, oh, ow});
    if (bias) {
        for (int64_t nn = 0; nn < n; ++nn) {
            for (int64_t o = 0; o < co; ++o) {
                const double b = bias->value[o];
                double* out = v.data() + ((nn * co + o) * oh) * ow;
                for (int64_t i = 0; i < oh * ow; ++i) out[i] = b;
            }
        }
    }
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t o = 0; o < co; ++o) {
            double* out = v.data() + ((nn * co + o) * oh) * ow;
            for (int64_t cc = 0; cc < ci; ++cc) {
                const double* xin = x->value.data() + ((nn * ci + cc) * h) * wd;
                const double* wk = w->value.data() + ((o * ci + cc) * kh) * kw;
                for (int64_t ki = 0; ki < kh; ++ki) {
                    for (int64_t kj = 0; kj < kw; ++kj) {
                        const double wv = wk[ki * kw + kj];
                        if (wv == 0.0) continue;
                        for (int64_t i = 0; i < oh; ++i) {
                            const double* xrow = xin + (i * stride + ki) * wd + kj;
                            double* orow = out + i * ow;
                            for (int64_t j = 0; j < ow; ++j) {
                                orow[j] += wv * xrow[j * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(bias);
    auto node = make_op(std::move(v), std::move(parents), nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, w, bias, stride, n, ci, h, wd, co, kh, kw, oh, ow]() {
            const Tensor& gout = raw->grad;
            Tensor gx({n, ci, h, wd});
            Tensor gw(w->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t o = 0; o < co; ++o) {
                    const double* gorow0 = gout.data() + ((nn * co + o) * oh) * ow;
                    for (int64_t cc = 0; cc < ci; ++cc) {
                        const double* xin = x->value.data() + ((nn * ci + cc) * h) * wd;
                        double* gxin = gx.data() + ((nn * ci + cc) * h) * wd;
                        const double* wk = w->value.data() + ((o * ci + cc) * kh) * kw;
                        double* gwk = gw.data() + ((o * ci + cc) * kh) * kw;
                        for (int64_t ki = 0; ki < kh; ++ki) {
                            for (int64_t kj = 0; kj < kw; ++kj) {
                                const double wv = wk[ki * kw + kj];
                                double gacc = 0.0;
                                for (int64_t i = 0; i < oh; ++i) {
                                    const double* go = gorow0 + i * ow;
                                    const double* xrow = xin + (i * stride + ki) * wd + kj;
                                    double* gxrow = gxin + (i * stride + ki) * wd + kj;
                                    for (int64_t j = 0; j < ow; ++j) {
                                        gacc += go[j] * xrow[j * stride];
                                        gxrow[j * stride] += go[j] * wv;
                                    }
                                }
                                gwk[ki * kw + kj] += gacc;
                            }
                        }
                    }
                }
            }
            if (x->requires_grad) x->accumulate(gx);
            if (w->requires_grad) w->accumulate(gw);
            if (bias && bias->requires_grad) {
                Tensor gb(bias->value.shape());
                for (int64_t nn = 0; nn < n; ++nn) {
                    for (int64_t o = 0; o < co; ++o) {
                        const double* go = gout.data() + ((nn * co + o) * oh) * ow;
                        double acc = 0.0;
                        for (int64_t i = 0; i < oh * ow; ++i) acc += go[i];
                        gb[o] += acc;
                    }
                }
                bias->accumulate(gb);
            }
        };
    }
    return node;
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& bias) {
    check_4d(x, "conv_transpose2d");
    if (w->value.ndim() != 4 || w->value.dim(2) != 2 || w->value.dim(3) != 2) {
        throw std::invalid_argument("conv_transpose2d weight must be [I,O,2,2]");
    }
    const int64_t n = x->value.dim(0), ci = x->value.dim(1), h = x->value.dim(2),
                  wd = x->value.dim(3);
    const int64_t co = w->value.dim(1);
    if (w->value.dim(0) != ci) {
        throw std::invalid_argument("conv_transpose2d input channel mismatch");
    }
    if (bias && bias->value.numel() != co) {
        throw std::invalid_argument("conv_transpose2d bias size mismatch");
    }
    const int64_t oh = 2 * h, ow = 2 * wd;

    Tensor v({n, co, oh, ow});
    if (bias) {
        for (int64_t nn = 0; nn < n; ++nn) {
            for (int64_t o = 0; o < co; ++o) {
                double* out = v.data() + ((nn * co + o) * oh) * ow;
                const double b = bias->value[o];
                for (int64_t i = 0; i < oh * ow; ++i) out[i] = b;
            }
        }
    }
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t cc = 0; cc < ci; ++cc) {
            const double* xin = x->value.data() + ((nn * ci + cc) * h) * wd;
            for (int64_t o = 0; o < co; ++o) {
                double* out = v.data() + ((nn * co + o) * oh) * ow;
                const double* wk = w->value.data() + ((cc * co + o) * 2) * 2;
                for (int64_t i = 0; i < h; ++i) {
                    for (int64_t j = 0; j < wd; ++j) {
                        const double xv = xin[i * wd + j];
                        double* o00 = out + (2 * i) * ow + 2 * j;
                        o00[0] += xv * wk[0];
                        o00[1] += xv * wk[1];
                        o00[ow] += xv * wk[2];
                        o00[ow + 1] += xv * wk[3];
                    }
                }
            }
        }
    }

    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(bias);
    auto node = make_op(std::move(v), std::move(parents), nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, w, bias, n, ci, h, wd, co, oh, ow]() {
            const Tensor& gout = raw->grad;
            Tensor gx(x->value.shape());
            Tensor gw(w->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t cc = 0; cc < ci; ++cc) {
                    const double* xin = x->value.data() + ((nn * ci + cc) * h) * wd;
                    double* gxin = gx.data() + ((nn * ci + cc) * h) * wd;
                    for (int64_t o = 0; o < co; ++o) {
                        const double* go = gout.data() + ((nn * co + o) * oh) * ow;
                        const double* wk = w->value.data() + ((cc * co + o) * 2) * 2;
                        double* gwk = gw.data() + ((cc * co + o) * 2) * 2;
                        for (int64_t i = 0; i < h; ++i) {
                            for (int64_t j = 0; j < wd; ++j) {
                                const double xv = xin[i * wd + j];
                                const double* g00 = go + (2 * i) * ow + 2 * j;
                                gxin[i * wd + j] += g00[0] * wk[0] + g00[1] * wk[1] +
                                                    g00[ow] * wk[2] + g00[ow + 1] * wk[3];
                                gwk[0] += g00[0] * xv;
                                gwk[1] += g00[1] * xv;
                                gwk[2] += g00[ow] * xv;
                                gwk[3] += g00[ow + 1] * xv;
                            }
                        }
                    }
                }
            }
            if (x->requires_grad) x->accumulate(gx);
            if (w->requires_grad) w->accumulate(gw);
            if (bias && bias->requires_grad) {
                Tensor gb(bias->value.shape());
                for (int64_t nn = 0; nn < n; ++nn) {
                    for (int64_t o = 0; o < co; ++o) {
                        const double* go = gout.data() + ((nn * co + o) * oh) * ow;
                        double acc = 0.0;
                        for (int64_t i = 0; i < oh * ow; ++i) acc += go[i];
                        gb[o] += acc;
                    }
                }
                bias->accumulate(gb);
            }
        };
    }
    return node;
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int64_t groups, double eps) {
    check_4d(x, "group_norm");
    const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                  w = x->value.dim(3);
    if (groups < 1 || c % groups != 0) {
        throw std::invalid_argument("group_norm groups must divide the channel count");
    }
    if (gamma->value.numel() != c || beta->value.numel() != c) {
        throw std::invalid_argument("group_norm affine parameters must have length C");
    }
    const int64_t cg = c / groups;      // channels per group
    const int64_t m = cg * h * w;       // elements per group
    const int64_t hw = h * w;

    // Save normalized values and inverse stds for the backward pass.
    auto xhat = std::make_shared<Tensor>(x->value.shape());
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(n * groups));

    Tensor v(x->value.shape());
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t g = 0; g < groups; ++g) {
            const double* xin = x->value.data() + (nn * c + g * cg) * hw;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += xin[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                const double d = xin[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double is = 1.0 / std::sqrt(var + eps);
            (*invstd)[static_cast<size_t>(nn * groups + g)] = is;

            double* xh = xhat->data() + (nn * c + g * cg) * hw;
            double* out = v.data() + (nn * c + g * cg) * hw;
            for (int64_t cc = 0; cc < cg; ++cc) {
                const double ga = gamma->value[g * cg + cc];
                const double be = beta->value[g * cg + cc];
                for (int64_t i = 0; i < hw; ++i) {
                    const double xn = (xin[cc * hw + i] - mean) * is;
                    xh[cc * hw + i] = xn;
                    out[cc * hw + i] = ga * xn + be;
                }
            }
        }
    }

    auto node = make_op(std::move(v), {x, gamma, beta}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, gamma, beta, xhat, invstd, n, c, groups, cg, m, hw]() {
            const Tensor& gout = raw->grad;
            Tensor gx(x->value.shape());
            Tensor gg(gamma->value.shape());
            Tensor gb(beta->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t g = 0; g < groups; ++g) {
                    const double* go = gout.data() + (nn * c + g * cg) * hw;
                    const double* xh = xhat->data() + (nn * c + g * cg) * hw;
                    const double is = (*invstd)[static_cast<size_t>(nn * groups + g)];

                    // Per-group means of dxhat and dxhat*xhat drive the
                    // standard normalization backward formula.
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t cc = 0; cc < cg; ++cc) {
                        const double ga = gamma->value[g * cg + cc];
                        for (int64_t i = 0; i < hw; ++i) {
                            const double dxh = go[cc * hw + i] * ga;
                            s1 += dxh;
                            s2 += dxh * xh[cc * hw + i];
                        }
                    }
                    s1 /= static_cast<double>(m);
                    s2 /= static_cast<double>(m);

                    double* gxp = gx.data() + (nn * c + g * cg) * hw;
                    for (int64_t cc = 0; cc < cg; ++cc) {
                        const double ga = gamma->value[g * cg + cc];
                        double dgamma = 0.0, dbeta = 0.0;
                        for (int64_t i = 0; i < hw; ++i) {
                            const double xv = xh[cc * hw + i];
                            const double gov = go[cc * hw + i];
                            const double dxh = gov * ga;
                            gxp[cc * hw + i] = is * (dxh - s1 - xv * s2);
                            dgamma += gov * xv;
                            dbeta += gov;
                        }
                        gg[g * cg + cc] += dgamma;
                        gb[g * cg + cc] += dbeta;
                    }
                }
            }
            if (x->requires_grad) x->accumulate(gx);
            if (gamma->requires_grad) gamma->accumulate(gg);
            if (beta->requires_grad) beta->accumulate(gb);
        };
    }
    return node;
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels needs at least one part");
    const auto& first = parts[0]->value;
    if (first.ndim() != 4) throw std::invalid_argument("concat_channels expects [N,C,H,W] parts");
    const int64_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
    int64_t c_total = 0;
    for (const auto& p : parts) {
        if (p->value.ndim() != 4 || p->value.dim(0) != n || p->value.dim(2) != h ||
            p->value.dim(3) != w) {
            throw std::invalid_argument("concat_channels parts disagree in shape");
        }
        c_total += p->value.dim(1);
    }

    Tensor v({n, c_total, h, w});
    const int64_t hw = h * w;
    for (int64_t nn = 0; nn < n; ++nn) {
        int64_t co = 0;
        for (const auto& p : parts) {
            const int64_t pc = p->value.dim(1);
            const double* src = p->value.data() + nn * pc * hw;
            double* dst = v.data() + (nn * c_total + co) * hw;
            for (int64_t i = 0; i < pc * hw; ++i) dst[i] = src[i];
            co += pc;
        }
    }

    auto node = make_op(std::move(v), parts, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        std::vector<Var> held = parts;
        node->backward_fn = [raw, held, n, c_total, hw]() {
            int64_t co = 0;
            for (const auto& p : held) {
                const int64_t pc = p->value.dim(1);
                if (p->requires_grad) {
                    Tensor g(p->value.shape());
                    for (int64_t nn = 0; nn < n; ++nn) {
                        const double* src = raw->grad.data() + (nn * c_total + co) * hw;
                        double* dst = g.data() + nn * pc * hw;
                        for (int64_t i = 0; i < pc * hw; ++i) dst[i] = src[i];
                    }
                    p->accumulate(g);
                }
                co += pc;
            }
        };
    }
    return node;
}

Var slice_channels(const Var& x, int64_t c_begin, int64_t c_end) {
    check_4d(x, "slice_channels");
    const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                  w = x->value.dim(3);
    if (c_begin < 0 || c_end > c || c_begin >= c_end) {
        throw std::invalid_argument("slice_channels range out of bounds");
    }
    const int64_t cs = c_end - c_begin, hw = h * w;
    Tensor v({n, cs, h, w});
    for (int64_t nn = 0; nn < n; ++nn) {
        const double* src = x->value.data() + (nn * c + c_begin) * hw;
        double* dst = v.data() + nn * cs * hw;
        for (int64_t i = 0; i < cs * hw; ++i) dst[i] = src[i];
    }
    auto node = make_op(std::move(v), {x}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, c_begin, cs, n, c, hw]() {
            Tensor g(x->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                const double* src = raw->grad.data() + nn * cs * hw;
                double* dst = g.data() + (nn * c + c_begin) * hw;
                for (int64_t i = 0; i < cs * hw; ++i) dst[i] = src[i];
            }
            x->accumulate(g);
        };
    }
    return node;
}

Var linear(const Var& x, const Var& w, const Var& bias) {
    if (w->value.ndim() != 2) throw std::invalid_argument("linear weight must be [F,O]");
    const int64_t f = w->value.dim(0), o = w->value.dim(1);
    if (x->value.ndim() < 1 || x->value.dim(x->value.ndim() - 1) != f) {
        throw std::invalid_argument("linear input feature dim does not match weight");
    }
    if (bias && bias->value.numel() != o) throw std::invalid_argument("linear bias size mismatch");
    const int64_t rows = x->value.numel() / f;

    std::vector<int64_t> out_shape = x->value.shape();
    out_shape.back() = o;
    Tensor v(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x->value.data() + r * f;
        double* vr = v.data() + r * o;
        if (bias) {
            for (int64_t j = 0; j < o; ++j) vr[j] = bias->value[j];
        }
        for (int64_t i = 0; i < f; ++i) {
            const double xv = xr[i];
            if (xv == 0.0) continue;
            const double* wr = w->value.data() + i * o;
            for (int64_t j = 0; j < o; ++j) vr[j] += xv * wr[j];
        }
    }

    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(bias);
    auto node = make_op(std::move(v), std::move(parents), nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, w, bias, rows, f, o]() {
            const Tensor& gout = raw->grad;
            if (x->requires_grad) {
                Tensor gx(x->value.shape());
                for (int64_t r = 0; r < rows; ++r) {
                    const double* go = gout.data() + r * o;
                    double* gxr = gx.data() + r * f;
                    for (int64_t i = 0; i < f; ++i) {
                        const double* wr = w->value.data() + i * o;
                        double acc = 0.0;
                        for (int64_t j = 0; j < o; ++j) acc += go[j] * wr[j];
                        gxr[i] = acc;
                    }
                }
                x->accumulate(gx);
            }
            if (w->requires_grad) {
                Tensor gw(w->value.shape());
                for (int64_t r = 0; r < rows; ++r) {
                    const double* go = gout.data() + r * o;
                    const double* xr = x->value.data() + r * f;
                    for (int64_t i = 0; i < f; ++i) {
                        const double xv = xr[i];
                        if (xv == 0.0) continue;
                        double* gwr = gw.data() + i * o;
                        for (int64_t j = 0; j < o; ++j) gwr[j] += xv * go[j];
                    }
                }
                w->accumulate(gw);
            }
            if (bias && bias->requires_grad) {
                Tensor gb(bias->value.shape());
                for (int64_t r = 0; r < rows; ++r) {
                    const double* go = gout.data() + r * o;
                    for (int64_t j = 0; j < o; ++j) gb[j] += go[j];
                }
                bias->accumulate(gb);
            }
        };
    }
    return node;
}

Var add_feature_bias(const Var& x, const Var& bias) {
    if (bias->value.ndim() != 1) throw std::invalid_argument("feature bias must be 1D");
    const int64_t f = bias->value.numel();
    if (x->value.ndim() < 1 || x->value.dim(x->value.ndim() - 1) != f) {
        throw std::invalid_argument("feature bias length does not match the trailing dim");
    }
    const int64_t rows = x->value.numel() / f;
    Tensor v = x->value;
    for (int64_t r = 0; r < rows; ++r) {
        double* vr = v.data() + r * f;
        for (int64_t j = 0; j < f; ++j) vr[j] += bias->value[j];
    }
    auto node = make_op(std::move(v), {x, bias}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, bias, rows, f]() {
            if (x->requires_grad) x->accumulate(raw->grad);
            if (bias->requires_grad) {
                Tensor gb(bias->value.shape());
                for (int64_t r = 0; r < rows; ++r) {
                    const double* go = raw->grad.data() + r * f;
                    for (int64_t j = 0; j < f; ++j) gb[j] += go[j];
                }
                bias->accumulate(gb);
            }
        };
    }
    return node;
}

Var channels_last(const Var& x) {
    check_4d(x, "channels_last");
    const int64_t n = x->value.dim(0), c = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
    Tensor v({n, hw, c});
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t cc = 0; cc < c; ++cc) {
            const double* src = x->value.data() + (nn * c + cc) * hw;
            double* dst = v.data() + nn * hw * c + cc;
            for (int64_t i = 0; i < hw; ++i) dst[i * c] = src[i];
        }
    }
    auto node = make_op(std::move(v), {x}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, n, c, hw]() {
            Tensor g(x->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t cc = 0; cc < c; ++cc) {
                    const double* src = raw->grad.data() + nn * hw * c + cc;
                    double* dst = g.data() + (nn * c + cc) * hw;
                    for (int64_t i = 0; i < hw; ++i) dst[i] = src[i * c];
                }
            }
            x->accumulate(g);
        };
    }
    return node;
}

Var channels_first(const Var& x, int64_t h, int64_t w) {
    if (x->value.ndim() != 3) throw std::invalid_argument("channels_first expects [N,P,C]");
    const int64_t n = x->value.dim(0), hw = x->value.dim(1), c = x->value.dim(2);
    if (hw != h * w) throw std::invalid_argument("channels_first point count must equal h*w");
    Tensor v({n, c, h, w});
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t cc = 0; cc < c; ++cc) {
            const double* src = x->value.data() + nn * hw * c + cc;
            double* dst = v.data() + (nn * c + cc) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i * c];
        }
    }
    auto node = make_op(std::move(v), {x}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        node->backward_fn = [raw, x, n, c, hw]() {
            Tensor g(x->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t cc = 0; cc < c; ++cc) {
                    const double* src = raw->grad.data() + (nn * c + cc) * hw;
                    double* dst = g.data() + nn * hw * c + cc;
                    for (int64_t i = 0; i < hw; ++i) dst[i * c] = src[i];
                }
            }
            x->accumulate(g);
        };
    }
    return node;
}

Var edge_matvec(const Var& kernels, const Var& u, const std::vector<int64_t>& src_index,
                int64_t d_out) {
    if (kernels->value.ndim() != 2) throw std::invalid_argument("edge kernels must be [E,d*d]");
    if (u->value.ndim() != 3) throw std::invalid_argument("edge features must be [N,P,F]");
    const int64_t e = kernels->value.dim(0);
    const int64_t n = u->value.dim(0), p = u->value.dim(1), d_in = u->value.dim(2);
    if (kernels->value.dim(1) != d_out * d_in) {
        throw std::invalid_argument("edge kernel width must equal d_out*d_in");
    }
    if (static_cast<int64_t>(src_index.size()) != e) {
        throw std::invalid_argument("src_index length must match edge count");
    }
    for (int64_t i : src_index) {
        if (i < 0 || i >= p) throw std::invalid_argument("edge source index out of range");
    }

    Tensor v({n, e, d_out});
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t ee = 0; ee < e; ++ee) {
            const double* k = kernels->value.data() + ee * d_out * d_in;
            const double* uf = u->value.data() + (nn * p + src_index[static_cast<size_t>(ee)]) * d_in;
            double* out = v.data() + (nn * e + ee) * d_out;
            for (int64_t oo = 0; oo < d_out; ++oo) {
                const double* kr = k + oo * d_in;
                double acc = 0.0;
                for (int64_t c = 0; c < d_in; ++c) acc += kr[c] * uf[c];
                out[oo] = acc;
            }
        }
    }

    auto node = make_op(std::move(v), {kernels, u}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        auto src = src_index;
        node->backward_fn = [raw, kernels, u, src, n, p, e, d_in, d_out]() {
            const Tensor& gout = raw->grad;
            Tensor gk(kernels->value.shape());
            Tensor gu(u->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t ee = 0; ee < e; ++ee) {
                    const double* go = gout.data() + (nn * e + ee) * d_out;
                    const double* k = kernels->value.data() + ee * d_out * d_in;
                    double* gkr = gk.data() + ee * d_out * d_in;
                    const int64_t si = src[static_cast<size_t>(ee)];
                    const double* uf = u->value.data() + (nn * p + si) * d_in;
                    double* guf = gu.data() + (nn * p + si) * d_in;
                    for (int64_t oo = 0; oo < d_out; ++oo) {
                        const double g = go[oo];
                        if (g == 0.0) continue;
                        const double* kr = k + oo * d_in;
                        double* gkrr = gkr + oo * d_in;
                        for (int64_t c = 0; c < d_in; ++c) {
                            gkrr[c] += g * uf[c];
                            guf[c] += g * kr[c];
                        }
                    }
                }
            }
            if (kernels->requires_grad) kernels->accumulate(gk);
            if (u->requires_grad) u->accumulate(gu);
        };
    }
    return node;
}

Var scatter_mean(const Var& edges, const std::vector<int64_t>& dst_offsets) {
    if (edges->value.ndim() != 3) throw std::invalid_argument("scatter_mean expects [N,E,F]");
    const int64_t n = edges->value.dim(0), e = edges->value.dim(1), f = edges->value.dim(2);
    const int64_t p = static_cast<int64_t>(dst_offsets.size()) - 1;
    if (p < 1 || dst_offsets.front() != 0 || dst_offsets.back() != e) {
        throw std::invalid_argument("scatter_mean offsets must start at 0 and end at E");
    }
    for (int64_t j = 0; j < p; ++j) {
        if (dst_offsets[static_cast<size_t>(j + 1)] <= dst_offsets[static_cast<size_t>(j)]) {
            throw std::invalid_argument("scatter_mean: destination " + std::to_string(j) +
                                        " has no edges");
        }
    }

    Tensor v({n, p, f});
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t j = 0; j < p; ++j) {
            const int64_t b = dst_offsets[static_cast<size_t>(j)],
                          t = dst_offsets[static_cast<size_t>(j + 1)];
            double* out = v.data() + (nn * p + j) * f;
            for (int64_t ee = b; ee < t; ++ee) {
                const double* in = edges->value.data() + (nn * e + ee) * f;
                for (int64_t c = 0; c < f; ++c) out[c] += in[c];
            }
            const double inv = 1.0 / static_cast<double>(t - b);
            for (int64_t c = 0; c < f; ++c) out[c] *= inv;
        }
    }

    auto node = make_op(std::move(v), {edges}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        auto offs = dst_offsets;
        node->backward_fn = [raw, edges, offs, n, e, f, p]() {
            Tensor g(edges->value.shape());
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t j = 0; j < p; ++j) {
                    const int64_t b = offs[static_cast<size_t>(j)],
                                  t = offs[static_cast<size_t>(j + 1)];
                    const double inv = 1.0 / static_cast<double>(t - b);
                    const double* go = raw->grad.data() + (nn * p + j) * f;
                    for (int64_t ee = b; ee < t; ++ee) {
                        double* ge = g.data() + (nn * e + ee) * f;
                        for (int64_t c = 0; c < f; ++c) ge[c] = go[c] * inv;
                    }
                }
            }
            edges->accumulate(g);
        };
    }
    return node;
}

Var loss_op(const Var& pred, const Tensor& target, const LossConfig& cfg,
            const std::vector<double>& row_weights) {
    Tensor v({1}, loss_value(pred->value, target, cfg, row_weights));
    auto node = make_op(std::move(v), {pred}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        auto tgt = std::make_shared<Tensor>(target);
        auto rw = row_weights;
        node->backward_fn = [raw, pred, tgt, cfg, rw]() {
            Tensor g = loss_grad(pred->value, *tgt, cfg, rw);
            g *= raw->grad[0];
            pred->accumulate(g);
        };
    }
    return node;
}

Var masked_channel_loss(const Var& pred, const Tensor& target, const LossConfig& cfg,
                        const Tensor& channel_mask) {
    cfg.validate();
    const Tensor& pv = pred->value;
    if (!pv.same_shape(target)) throw std::invalid_argument("masked loss shape mismatch");
    if (pv.ndim() != 4) throw std::invalid_argument("masked loss expects [N,C,H,W]");
    const int64_t n = pv.dim(0), c = pv.dim(1), hw = pv.dim(2) * pv.dim(3);
    if (channel_mask.ndim() != 2 || channel_mask.dim(0) != n || channel_mask.dim(1) != c) {
        throw std::invalid_argument("channel mask must be [N,C]");
    }

    int64_t n_masked = 0;
    for (int64_t i = 0; i < channel_mask.numel(); ++i) {
        if (channel_mask[i] != 0.0) ++n_masked;
    }
    if (n_masked == 0) throw std::invalid_argument("channel mask selects no channels");
    const double denom = static_cast<double>(n_masked * hw);

    double acc = 0.0;
    for (int64_t nn = 0; nn < n; ++nn) {
        for (int64_t cc = 0; cc < c; ++cc) {
            if (channel_mask.at(nn, cc) == 0.0) continue;
            const double* pp = pv.data() + (nn * c + cc) * hw;
            const double* tt = target.data() + (nn * c + cc) * hw;
            for (int64_t i = 0; i < hw; ++i) acc += loss_term_value(cfg, pp[i] - tt[i]);
        }
    }

    Tensor v({1}, acc / denom);
    auto node = make_op(std::move(v), {pred}, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        auto tgt = std::make_shared<Tensor>(target);
        auto mask = std::make_shared<Tensor>(channel_mask);
        node->backward_fn = [raw, pred, tgt, mask, cfg, n, c, hw, denom]() {
            Tensor g(pred->value.shape());
            const double s = raw->grad[0] / denom;
            for (int64_t nn = 0; nn < n; ++nn) {
                for (int64_t cc = 0; cc < c; ++cc) {
                    if (mask->at(nn, cc) == 0.0) continue;
                    const double* pp = pred->value.data() + (nn * c + cc) * hw;
                    const double* tt = tgt->data() + (nn * c + cc) * hw;
                    double* gg = g.data() + (nn * c + cc) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        gg[i] = s * loss_term_grad(cfg, pp[i] - tt[i]);
                    }
                }
            }
            pred->accumulate(g);
        };
    }
    return node;
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
    if (terms.empty() || terms.size() != weights.size()) {
        throw std::invalid_argument("weighted_sum needs matching nonempty terms and weights");
    }
    double acc = 0.0;
    for (size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->value.numel() != 1) {
            throw std::invalid_argument("weighted_sum terms must be scalars");
        }
        acc += weights[i] * terms[i]->value[0];
    }
    Tensor v({1}, acc);
    auto node = make_op(std::move(v), terms, nullptr);
    if (node->requires_grad) {
        Node* raw = node.get();
        auto held = terms;
        auto ws = weights;
        node->backward_fn = [raw, held, ws]() {
            for (size_t i = 0; i < held.size(); ++i) {
                held[i]->accumulate(Tensor({1}, ws[i] * raw->grad[0]));
            }
        };
    }
    return node;
}

}  // namespace wxlab::ad
