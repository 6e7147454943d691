#include "uie/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <unordered_set>

namespace uie::ad {

namespace {

thread_local bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatCM = Eigen::MatrixXd;

ValuePtr make_node(Tensor value, std::vector<ValuePtr> parents,
                   std::function<void(Value&)> backward_fn) {
    auto node = std::make_shared<Value>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p && p->requires_grad) { needs = true; break; }
    }
    if (needs) {
        node->requires_grad = true;
        node->prev = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

ValuePtr unary_map(const ValuePtr& a, const std::function<double(double)>& f,
                   std::function<void(Value&)> backward_fn) {
    Tensor out(a->value.shape());
    const auto& in = a->value.vec();
    auto& o = out.vec();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
    return make_node(std::move(out), {a}, std::move(backward_fn));
}

} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

ValuePtr constant(Tensor t) {
    auto node = std::make_shared<Value>();
    node->value = std::move(t);
    return node;
}

ValuePtr leaf(Tensor t, bool requires_grad) {
    auto node = std::make_shared<Value>();
    node->value = std::move(t);
    node->requires_grad = requires_grad && g_grad_enabled;
    return node;
}

void backward(const ValuePtr& root) {
    if (root->value.size() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    // Iterative post-order DFS for a topological ordering.
    std::vector<Value*> order;
    std::unordered_set<Value*> seen;
    std::vector<std::pair<Value*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->prev.size()) {
            Value* p = node->prev[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Value* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// elementwise

ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    require_shape_match(a->value, b->value, "add");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Value& self) {
        const auto& g = self.grad.vec();
        if (a->requires_grad) {
            auto& ga = a->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            auto& gb = b->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

ValuePtr sub(const ValuePtr& a, const ValuePtr& b) {
    require_shape_match(a->value, b->value, "sub");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Value& self) {
        const auto& g = self.grad.vec();
        if (a->requires_grad) {
            auto& ga = a->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            auto& gb = b->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

ValuePtr mul(const ValuePtr& a, const ValuePtr& b) {
    require_shape_match(a->value, b->value, "mul");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Value& self) {
        const auto& g = self.grad.vec();
        if (a->requires_grad) {
            auto& ga = a->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->value[i];
        }
        if (b->requires_grad) {
            auto& gb = b->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->value[i];
        }
    });
}

ValuePtr div(const ValuePtr& a, const ValuePtr& b) {
    require_shape_match(a->value, b->value, "div");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] / b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Value& self) {
        const auto& g = self.grad.vec();
        if (a->requires_grad) {
            auto& ga = a->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b->value[i];
        }
        if (b->requires_grad) {
            auto& gb = b->ensure_grad().vec();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double bv = b->value[i];
                gb[i] -= g[i] * a->value[i] / (bv * bv);
            }
        }
    });
}

ValuePtr add_scalar(const ValuePtr& a, double s) {
    return unary_map(a, [s](double x) { return x + s; }, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

ValuePtr mul_scalar(const ValuePtr& a, double s) {
    return unary_map(a, [s](double x) { return x * s; }, [a, s](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

ValuePtr square(const ValuePtr& a) {
    return unary_map(a, [](double x) { return x * x; }, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * a->value[i] * g[i];
    });
}

ValuePtr sqrt(const ValuePtr& a) {
    return unary_map(a, [](double x) { return std::sqrt(x); }, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 0.5 / self.value[i] * g[i];
    });
}

ValuePtr log(const ValuePtr& a) {
    return unary_map(a, [](double x) { return std::log(x); }, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a->value[i];
    });
}

ValuePtr sigmoid(const ValuePtr& a) {
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a->value[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_node(std::move(out), {a}, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            ga[i] += g[i] * y * (1.0 - y);
        }
    });
}

ValuePtr softplus(const ValuePtr& a) {
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a->value[i];
        out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    return make_node(std::move(out), {a}, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a->value[i];
            const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            ga[i] += g[i] * s;
        }
    });
}

ValuePtr leaky_relu(const ValuePtr& a, double slope) {
    return unary_map(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                     [a, slope](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (a->value[i] > 0.0 ? 1.0 : slope);
    });
}

ValuePtr clamp01(const ValuePtr& a) {
    return unary_map(a, [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
                     [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const auto& g = self.grad.vec();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a->value[i];
            if (x > 0.0 && x < 1.0) ga[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions / broadcasts

ValuePtr sum_all(const ValuePtr& a) {
    double s = 0.0;
    for (double v : a->value.vec()) s += v;
    return make_node(Tensor::scalar(s), {a}, [a](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const double g = self.grad[0];
        for (auto& v : ga) v += g;
    });
}

ValuePtr mean_all(const ValuePtr& a) {
    const double n = static_cast<double>(a->value.size());
    double s = 0.0;
    for (double v : a->value.vec()) s += v;
    return make_node(Tensor::scalar(s / n), {a}, [a, n](Value& self) {
        if (!a->requires_grad) return;
        auto& ga = a->ensure_grad().vec();
        const double g = self.grad[0] / n;
        for (auto& v : ga) v += g;
    });
}

ValuePtr spatial_mean(const ValuePtr& a) {
    const auto& sh = a->value.shape();
    if (sh.size() != 4) throw std::invalid_argument("spatial_mean: expected (B,C,H,W)");
    const long B = sh[0], C = sh[1], H = sh[2], W = sh[3];
    const double inv = 1.0 / static_cast<double>(H * W);
    Tensor out({B, C});
    const double* src = a->value.data();
    for (long bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        const double* p = src + bc * H * W;
        for (long i = 0; i < H * W; ++i) s += p[i];
        out[bc] = s * inv;
    }
    return make_node(std::move(out), {a}, [a, B, C, H, W, inv](Value& self) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = self.grad.data();
        for (long bc = 0; bc < B * C; ++bc) {
            const double gv = g[bc] * inv;
            double* p = ga + bc * H * W;
            for (long i = 0; i < H * W; ++i) p[i] += gv;
        }
    });
}

ValuePtr expand_spatial(const ValuePtr& a, long h, long w) {
    const auto& sh = a->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("expand_spatial: expected (B,C)");
    const long B = sh[0], C = sh[1];
    Tensor out({B, C, h, w});
    double* dst = out.data();
    for (long bc = 0; bc < B * C; ++bc) {
        const double v = a->value[bc];
        double* p = dst + bc * h * w;
        for (long i = 0; i < h * w; ++i) p[i] = v;
    }
    return make_node(std::move(out), {a}, [a, B, C, h, w](Value& self) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = self.grad.data();
        for (long bc = 0; bc < B * C; ++bc) {
            double s = 0.0;
            const double* p = g + bc * h * w;
            for (long i = 0; i < h * w; ++i) s += p[i];
            ga[bc] += s;
        }
    });
}

// ---------------------------------------------------------------------------
// layers

ValuePtr linear(const ValuePtr& x, const ValuePtr& weight, const ValuePtr& bias) {
    const auto& xs = x->value.shape();
    const auto& ws = weight->value.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
        throw std::invalid_argument("linear: bad shapes " + x->value.shape_str() + " x " +
                                    weight->value.shape_str());
    const long B = xs[0], I = xs[1], O = ws[1];
    if (bias->value.size() != static_cast<std::size_t>(O))
        throw std::invalid_argument("linear: bias size mismatch");
    Tensor out({B, O});
    Eigen::Map<const MatRM> X(x->value.data(), B, I);
    Eigen::Map<const MatRM> W(weight->value.data(), I, O);
    Eigen::Map<MatRM> Y(out.data(), B, O);
    Y.noalias() = X * W;
    for (long b = 0; b < B; ++b)
        for (long o = 0; o < O; ++o) out.at(b, o) += bias->value[o];
    return make_node(std::move(out), {x, weight, bias}, [x, weight, bias, B, I, O](Value& self) {
        Eigen::Map<const MatRM> G(self.grad.data(), B, O);
        if (x->requires_grad) {
            Eigen::Map<const MatRM> W(weight->value.data(), I, O);
            Eigen::Map<MatRM> GX(x->ensure_grad().data(), B, I);
            GX.noalias() += G * W.transpose();
        }
        if (weight->requires_grad) {
            Eigen::Map<const MatRM> X(x->value.data(), B, I);
            Eigen::Map<MatRM> GW(weight->ensure_grad().data(), I, O);
            GW.noalias() += X.transpose() * G;
        }
        if (bias->requires_grad) {
            auto& gb = bias->ensure_grad().vec();
            for (long b = 0; b < B; ++b)
                for (long o = 0; o < O; ++o) gb[o] += self.grad.at(b, o);
        }
    });
}

namespace {

struct ConvDims {
    long B, Cin, H, W, Cout, K, stride, pad, Hout, Wout;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, long stride, long pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw std::invalid_argument("conv2d: expected 4-d input and weight");
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv2d: input channels " + std::to_string(xs[1]) +
                                    " != weight channels " + std::to_string(ws[1]));
    if (ws[2] != ws[3]) throw std::invalid_argument("conv2d: kernel must be square");
    ConvDims d;
    d.B = xs[0]; d.Cin = xs[1]; d.H = xs[2]; d.W = xs[3];
    d.Cout = ws[0]; d.K = ws[2]; d.stride = stride; d.pad = pad;
    d.Hout = (d.H + 2 * pad - d.K) / stride + 1;
    d.Wout = (d.W + 2 * pad - d.K) / stride + 1;
    if (d.Hout <= 0 || d.Wout <= 0) throw std::invalid_argument("conv2d: output would be empty");
    return d;
}

// col matrix: (Cin*K*K) x (Hout*Wout), column-major.
void im2col(const double* x, const ConvDims& d, MatCM& col) {
    col.resize(d.Cin * d.K * d.K, d.Hout * d.Wout);
    for (long c = 0; c < d.Cin; ++c) {
        const double* xc = x + c * d.H * d.W;
        for (long ki = 0; ki < d.K; ++ki) {
            for (long kj = 0; kj < d.K; ++kj) {
                const long row = (c * d.K + ki) * d.K + kj;
                for (long oh = 0; oh < d.Hout; ++oh) {
                    const long ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.H) {
                        for (long ow = 0; ow < d.Wout; ++ow)
                            col(row, oh * d.Wout + ow) = 0.0;
                        continue;
                    }
                    const double* xrow = xc + ih * d.W;
                    for (long ow = 0; ow < d.Wout; ++ow) {
                        const long iw = ow * d.stride - d.pad + kj;
                        col(row, oh * d.Wout + ow) =
                            (iw < 0 || iw >= d.W) ? 0.0 : xrow[iw];
                    }
                }
            }
        }
    }
}

void col2im_accum(const MatCM& col, const ConvDims& d, double* gx) {
    for (long c = 0; c < d.Cin; ++c) {
        double* gc = gx + c * d.H * d.W;
        for (long ki = 0; ki < d.K; ++ki) {
            for (long kj = 0; kj < d.K; ++kj) {
                const long row = (c * d.K + ki) * d.K + kj;
                for (long oh = 0; oh < d.Hout; ++oh) {
                    const long ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.H) continue;
                    double* grow = gc + ih * d.W;
                    for (long ow = 0; ow < d.Wout; ++ow) {
                        const long iw = ow * d.stride - d.pad + kj;
                        if (iw < 0 || iw >= d.W) continue;
                        grow[iw] += col(row, oh * d.Wout + ow);
                    }
                }
            }
        }
    }
}

} // namespace

ValuePtr conv2d(const ValuePtr& x, const ValuePtr& weight, const ValuePtr& bias,
                long stride, long pad) {
    const ConvDims d = conv_dims(x->value, weight->value, stride, pad);
    if (bias->value.size() != static_cast<std::size_t>(d.Cout))
        throw std::invalid_argument("conv2d: bias size mismatch");
    Tensor out({d.B, d.Cout, d.Hout, d.Wout});
    Eigen::Map<const MatRM> W(weight->value.data(), d.Cout, d.Cin * d.K * d.K);
    MatCM col;
    const long plane = d.Hout * d.Wout;
    for (long b = 0; b < d.B; ++b) {
        im2col(x->value.data() + b * d.Cin * d.H * d.W, d, col);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            Y(out.data() + b * d.Cout * plane, d.Cout, plane);
        Y.noalias() = W * col;
        for (long co = 0; co < d.Cout; ++co)
            Y.row(co).array() += bias->value[co];
    }
    return make_node(std::move(out), {x, weight, bias}, [x, weight, bias, d](Value& self) {
        const long plane = d.Hout * d.Wout;
        MatCM col;
        for (long b = 0; b < d.B; ++b) {
            Eigen::Map<const MatRM> G(self.grad.data() + b * d.Cout * plane, d.Cout, plane);
            if (weight->requires_grad || bias->requires_grad || x->requires_grad) {
                if (weight->requires_grad) {
                    im2col(x->value.data() + b * d.Cin * d.H * d.W, d, col);
                    Eigen::Map<MatRM> GW(weight->ensure_grad().data(), d.Cout, d.Cin * d.K * d.K);
                    GW.noalias() += G * col.transpose();
                }
                if (x->requires_grad) {
                    Eigen::Map<const MatRM> W(weight->value.data(), d.Cout, d.Cin * d.K * d.K);
                    MatCM gcol = W.transpose() * G;
                    col2im_accum(gcol, d, x->ensure_grad().data() + b * d.Cin * d.H * d.W);
                }
                if (bias->requires_grad) {
                    auto& gb = bias->ensure_grad().vec();
                    for (long co = 0; co < d.Cout; ++co) gb[co] += G.row(co).sum();
                }
            }
        }
    });
}

ValuePtr maxpool2(const ValuePtr& x) {
    const auto& sh = x->value.shape();
    if (sh.size() != 4 || sh[2] % 2 != 0 || sh[3] % 2 != 0)
        throw std::invalid_argument("maxpool2: expected even (B,C,H,W), got " + x->value.shape_str());
    const long B = sh[0], C = sh[1], H = sh[2], W = sh[3];
    const long Ho = H / 2, Wo = W / 2;
    Tensor out({B, C, Ho, Wo});
    auto idx = std::make_shared<std::vector<unsigned char>>(out.size());
    for (long bc = 0; bc < B * C; ++bc) {
        const double* src = x->value.data() + bc * H * W;
        double* dst = out.data() + bc * Ho * Wo;
        unsigned char* id = idx->data() + bc * Ho * Wo;
        for (long oh = 0; oh < Ho; ++oh) {
            for (long ow = 0; ow < Wo; ++ow) {
                const long base = (2 * oh) * W + 2 * ow;
                double best = src[base];
                unsigned char which = 0;
                const double cand1 = src[base + 1];
                if (cand1 > best) { best = cand1; which = 1; }
                const double cand2 = src[base + W];
                if (cand2 > best) { best = cand2; which = 2; }
                const double cand3 = src[base + W + 1];
                if (cand3 > best) { best = cand3; which = 3; }
                dst[oh * Wo + ow] = best;
                id[oh * Wo + ow] = which;
            }
        }
    }
    return make_node(std::move(out), {x}, [x, idx, B, C, H, W, Ho, Wo](Value& self) {
        if (!x->requires_grad) return;
        double* gx = x->ensure_grad().data();
        const double* g = self.grad.data();
        for (long bc = 0; bc < B * C; ++bc) {
            double* gsrc = gx + bc * H * W;
            const double* gdst = g + bc * Ho * Wo;
            const unsigned char* id = idx->data() + bc * Ho * Wo;
            for (long oh = 0; oh < Ho; ++oh) {
                for (long ow = 0; ow < Wo; ++ow) {
                    const long base = (2 * oh) * W + 2 * ow;
                    const unsigned char which = id[oh * Wo + ow];
                    const long off = (which & 2 ? W : 0) + (which & 1 ? 1 : 0);
                    gsrc[base + off] += gdst[oh * Wo + ow];
                }
            }
        }
    });
}

ValuePtr upsample_nearest2(const ValuePtr& x) {
    const auto& sh = x->value.shape();
    if (sh.size() != 4) throw std::invalid_argument("upsample_nearest2: expected (B,C,H,W)");
    const long B = sh[0], C = sh[1], H = sh[2], W = sh[3];
    Tensor out({B, C, 2 * H, 2 * W});
    for (long bc = 0; bc < B * C; ++bc) {
        const double* src = x->value.data() + bc * H * W;
        double* dst = out.data() + bc * 4 * H * W;
        for (long h = 0; h < H; ++h) {
            for (long w = 0; w < W; ++w) {
                const double v = src[h * W + w];
                const long base = (2 * h) * (2 * W) + 2 * w;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * W] = v;
                dst[base + 2 * W + 1] = v;
            }
        }
    }
    return make_node(std::move(out), {x}, [x, B, C, H, W](Value& self) {
        if (!x->requires_grad) return;
        double* gx = x->ensure_grad().data();
        const double* g = self.grad.data();
        for (long bc = 0; bc < B * C; ++bc) {
            double* gsrc = gx + bc * H * W;
            const double* gdst = g + bc * 4 * H * W;
            for (long h = 0; h < H; ++h) {
                for (long w = 0; w < W; ++w) {
                    const long base = (2 * h) * (2 * W) + 2 * w;
                    gsrc[h * W + w] += gdst[base] + gdst[base + 1] +
                                       gdst[base + 2 * W] + gdst[base + 2 * W + 1];
                }
            }
        }
    });
}

ValuePtr concat_channels(const ValuePtr& a, const ValuePtr& b) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
        throw std::invalid_argument("concat_channels: incompatible shapes " +
                                    a->value.shape_str() + " vs " + b->value.shape_str());
    const long B = as[0], Ca = as[1], Cb = bs[1], H = as[2], W = as[3];
    const long plane = H * W;
    Tensor out({B, Ca + Cb, H, W});
    for (long bi = 0; bi < B; ++bi) {
        std::memcpy(out.data() + bi * (Ca + Cb) * plane,
                    a->value.data() + bi * Ca * plane, sizeof(double) * Ca * plane);
        std::memcpy(out.data() + (bi * (Ca + Cb) + Ca) * plane,
                    b->value.data() + bi * Cb * plane, sizeof(double) * Cb * plane);
    }
    return make_node(std::move(out), {a, b}, [a, b, B, Ca, Cb, plane](Value& self) {
        const double* g = self.grad.data();
        if (a->requires_grad) {
            double* ga = a->ensure_grad().data();
            for (long bi = 0; bi < B; ++bi) {
                const double* gsrc = g + bi * (Ca + Cb) * plane;
                double* gdst = ga + bi * Ca * plane;
                for (long i = 0; i < Ca * plane; ++i) gdst[i] += gsrc[i];
            }
        }
        if (b->requires_grad) {
            double* gb = b->ensure_grad().data();
            for (long bi = 0; bi < B; ++bi) {
                const double* gsrc = g + (bi * (Ca + Cb) + Ca) * plane;
                double* gdst = gb + bi * Cb * plane;
                for (long i = 0; i < Cb * plane; ++i) gdst[i] += gsrc[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// composites

ValuePtr gaussian_sample(const ValuePtr& mean, const ValuePtr& scale, const ValuePtr& noise) {
    require_shape_match(mean->value, scale->value, "gaussian_sample");
    require_shape_match(mean->value, noise->value, "gaussian_sample");
    return add(mean, mul(scale, noise));
}

ValuePtr gaussian_kl_sum(const ValuePtr& p_mean, const ValuePtr& p_scale,
                         const ValuePtr& q_mean, const ValuePtr& q_scale) {
    require_shape_match(p_mean->value, q_mean->value, "gaussian_kl");
    require_shape_match(p_mean->value, p_scale->value, "gaussian_kl");
    require_shape_match(q_mean->value, q_scale->value, "gaussian_kl");
    auto log_ratio = log(div(q_scale, p_scale));
    auto num = add(square(p_scale), square(sub(p_mean, q_mean)));
    auto quad = mul_scalar(div(num, square(q_scale)), 0.5);
    auto per_dim = add_scalar(add(log_ratio, quad), -0.5);
    return sum_all(per_dim);
}

ValuePtr mse(const ValuePtr& a, const ValuePtr& b) {
    require_shape_match(a->value, b->value, "mse");
    return mean_all(square(sub(a, b)));
}

} // namespace uie::ad
