#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "changeforge/errors.hpp"
#include "changeforge/tensor.hpp"

namespace changeforge {

enum class PadMode { zeros, reflect };

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
    const int span = in + 2 * pad - k;
    if (span < 0) return 0;
    return span / stride + 1;
}

inline int reflect_index(int i, int extent) {
    if (i < 0) i = -i;
    if (i >= extent) i = 2 * extent - 2 - i;
    return i;
}

/// Mirror-pad one sample plane set (C, H, W) by `pad` on all sides, no edge repeat.
template <typename T>
void reflect_pad_plane(const T* src, int c_count, int h, int w, int pad, T* dst) {
    const int hp = h + 2 * pad;
    const int wp = w + 2 * pad;
    for (int c = 0; c < c_count; ++c) {
        const T* sp = src + static_cast<std::size_t>(c) * h * w;
        T* dp = dst + static_cast<std::size_t>(c) * hp * wp;
        for (int i = 0; i < hp; ++i) {
            const int si = reflect_index(i - pad, h);
            for (int j = 0; j < wp; ++j)
                dp[static_cast<std::size_t>(i) * wp + j] =
                    sp[static_cast<std::size_t>(si) * w + reflect_index(j - pad, w)];
        }
    }
}

/// Adjoint of reflect_pad_plane: fold padded-gradient contributions back to
/// their mirrored source positions.
template <typename T>
void reflect_pad_adjoint(const T* dpadded, int c_count, int h, int w, int pad, T* dsrc) {
    const int hp = h + 2 * pad;
    const int wp = w + 2 * pad;
    for (int c = 0; c < c_count; ++c) {
        const T* dp = dpadded + static_cast<std::size_t>(c) * hp * wp;
        T* sp = dsrc + static_cast<std::size_t>(c) * h * w;
        for (int i = 0; i < hp; ++i) {
            const int si = reflect_index(i - pad, h);
            for (int j = 0; j < wp; ++j)
                sp[static_cast<std::size_t>(si) * w + reflect_index(j - pad, w)] +=
                    dp[static_cast<std::size_t>(i) * wp + j];
        }
    }
}

// im2col / col2im over the correspondence
//   cols[(oh*OW + ow) * K + (c*KH + kh)*KW + kw]  <->  img(c, oh*s + kh - pad, ow*s + kw - pad)
// restricted to output pixels [row_begin, row_end). Out-of-bounds positions
// read as zero / are skipped.

template <typename T>
void im2col(const T* img, int c_count, int ih, int iw, int kh, int kw, int stride, int pad,
            int ow, int row_begin, int row_end, T* cols) {
    const int k_total = c_count * kh * kw;
    std::size_t col_row = 0;
    for (int pix = row_begin; pix < row_end; ++pix, ++col_row) {
        const int oh_i = pix / ow;
        const int ow_i = pix % ow;
        T* dst = cols + col_row * k_total;
        for (int c = 0; c < c_count; ++c) {
            const T* plane = img + static_cast<std::size_t>(c) * ih * iw;
            for (int ki = 0; ki < kh; ++ki) {
                const int si = oh_i * stride + ki - pad;
                if (si < 0 || si >= ih) {
                    for (int kj = 0; kj < kw; ++kj) *dst++ = T(0);
                    continue;
                }
                const T* row = plane + static_cast<std::size_t>(si) * iw;
                const int sj0 = ow_i * stride - pad;
                for (int kj = 0; kj < kw; ++kj) {
                    const int sj = sj0 + kj;
                    *dst++ = (sj < 0 || sj >= iw) ? T(0) : row[sj];
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int c_count, int ih, int iw, int kh, int kw, int stride, int pad,
                int ow, int row_begin, int row_end, T* img) {
    const int k_total = c_count * kh * kw;
    std::size_t col_row = 0;
    for (int pix = row_begin; pix < row_end; ++pix, ++col_row) {
        const int oh_i = pix / ow;
        const int ow_i = pix % ow;
        const T* src = cols + col_row * k_total;
        for (int c = 0; c < c_count; ++c) {
            T* plane = img + static_cast<std::size_t>(c) * ih * iw;
            for (int ki = 0; ki < kh; ++ki) {
                const int si = oh_i * stride + ki - pad;
                if (si < 0 || si >= ih) {
                    src += kw;
                    continue;
                }
                T* row = plane + static_cast<std::size_t>(si) * iw;
                const int sj0 = ow_i * stride - pad;
                for (int kj = 0; kj < kw; ++kj) {
                    const int sj = sj0 + kj;
                    if (sj >= 0 && sj < iw) row[sj] += src[kj];
                }
                src += kw;
            }
        }
    }
}

// Output pixels handled per GEMM call; bounds the cols scratch buffer.
constexpr int kConvBlockPixels = 16384;

} // namespace detail

enum class Op {
    leaf,
    conv2d,
    tconv2d,
    channel_bias,
    instance_norm,
    relu,
    leaky_relu,
    tanh_fn,
    sigmoid,
    log_fn,
    add,
    scalar_mul,
    mean_reduce,
    l1_distance,
    square_distance,
};

/// Define-by-run tape with reverse-mode differentiation. One graph instance is
/// single-threaded; build it, run backward once, read gradients, drop it.
template <typename T>
class Graph {
public:
    using Id = int;

    struct Node {
        Op op = Op::leaf;
        Id a = -1, b = -1;
        int stride = 1, pad = 0, out_pad = 0;
        PadMode pad_mode = PadMode::zeros;
        T alpha = T(0);   // leaky slope / scalar factor / epsilon
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<T> stats; // instance_norm inverse stddev per (n, c)
        bool needs_grad = false;
    };

    Id leaf(Tensor<T> v, bool requires_grad) {
        Node n;
        n.op = Op::leaf;
        n.value = std::move(v);
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }
    Id input(Tensor<T> v) { return leaf(std::move(v), false); }
    Id param(Tensor<T> v) { return leaf(std::move(v), true); }

    /// Cross-correlation with kernel (Cout, Cin, KH, KW); `pad` on all sides.
    Id conv2d(Id x, Id w, int stride, PadMode mode, int pad) {
        if (stride <= 0) throw data_error("conv2d stride must be positive");
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        if (wv.shape.c != xv.shape.c)
            throw data_error("conv2d kernel expects " + std::to_string(wv.shape.c) +
                             " channels, input has " + std::to_string(xv.shape.c));
        if (mode == PadMode::reflect && pad > 0 &&
            (xv.shape.h <= pad || xv.shape.w <= pad))
            throw data_error("reflect pad " + std::to_string(pad) + " too large for input " +
                             xv.shape.str());
        Node n;
        n.op = Op::conv2d;
        n.a = x;
        n.b = w;
        n.stride = stride;
        n.pad = pad;
        n.pad_mode = mode;
        const int oh = detail::conv_out_extent(xv.shape.h, wv.shape.h, stride, pad);
        const int ow = detail::conv_out_extent(xv.shape.w, wv.shape.w, stride, pad);
        if (oh <= 0 || ow <= 0)
            throw data_error("conv2d output collapses for input " + xv.shape.str());
        n.value = Tensor<T>(Shape{xv.shape.n, wv.shape.n, oh, ow});
        conv_forward(xv, wv, n);
        return push_op(std::move(n));
    }

    /// Transposed convolution, kernel (Cin, Cout, KH, KW);
    /// out = stride*(in-1) + k - 2*pad + out_pad.
    Id tconv2d(Id x, Id w, int stride, int pad, int out_pad) {
        if (stride <= 0) throw data_error("tconv2d stride must be positive");
        if (out_pad < 0 || out_pad >= stride)
            throw data_error("tconv2d out_pad must be in [0, stride)");
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        if (wv.shape.n != xv.shape.c)
            throw data_error("tconv2d kernel expects " + std::to_string(wv.shape.n) +
                             " channels, input has " + std::to_string(xv.shape.c));
        Node n;
        n.op = Op::tconv2d;
        n.a = x;
        n.b = w;
        n.stride = stride;
        n.pad = pad;
        n.out_pad = out_pad;
        const int oh = stride * (xv.shape.h - 1) + wv.shape.h - 2 * pad + out_pad;
        const int ow = stride * (xv.shape.w - 1) + wv.shape.w - 2 * pad + out_pad;
        if (oh <= 0 || ow <= 0)
            throw data_error("tconv2d output collapses for input " + xv.shape.str());
        n.value = Tensor<T>(Shape{xv.shape.n, wv.shape.c, oh, ow});
        tconv_forward(xv, wv, n);
        return push_op(std::move(n));
    }

    /// Broadcast a per-channel bias (1, C, 1, 1) over (N, C, H, W).
    Id channel_bias(Id x, Id bias) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& bv = value(bias);
        if (bv.shape.n != 1 || bv.shape.h != 1 || bv.shape.w != 1 || bv.shape.c != xv.shape.c)
            throw data_error("channel_bias expects shape (1, C, 1, 1) matching input channels");
        Node n;
        n.op = Op::channel_bias;
        n.a = x;
        n.b = bias;
        n.value = xv;
        const std::size_t plane = xv.shape.plane();
        for (int s = 0; s < xv.shape.n; ++s)
            for (int c = 0; c < xv.shape.c; ++c) {
                T* p = n.value.data.data() + (static_cast<std::size_t>(s) * xv.shape.c + c) * plane;
                const T b = bv.data[c];
                for (std::size_t i = 0; i < plane; ++i) p[i] += b;
            }
        return push_op(std::move(n));
    }

    /// Normalize each (sample, channel) plane to zero mean / unit variance,
    /// eps inside the square root denominator.
    Id instance_norm(Id x, T eps) {
        const Tensor<T>& xv = value(x);
        Node n;
        n.op = Op::instance_norm;
        n.a = x;
        n.alpha = eps;
        n.value = Tensor<T>(xv.shape);
        const std::size_t plane = xv.shape.plane();
        n.stats.resize(static_cast<std::size_t>(xv.shape.n) * xv.shape.c);
        for (int s = 0; s < xv.shape.n; ++s)
            for (int c = 0; c < xv.shape.c; ++c) {
                const std::size_t off = (static_cast<std::size_t>(s) * xv.shape.c + c) * plane;
                const T* p = xv.data.data() + off;
                T mean = T(0);
                for (std::size_t i = 0; i < plane; ++i) mean += p[i];
                mean /= static_cast<T>(plane);
                T var = T(0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = p[i] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(plane);
                const T invstd = T(1) / std::sqrt(var + eps);
                n.stats[static_cast<std::size_t>(s) * xv.shape.c + c] = invstd;
                T* q = n.value.data.data() + off;
                for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean) * invstd;
            }
        return push_op(std::move(n));
    }

    Id relu(Id x) { return pointwise(Op::relu, x, T(0)); }
    Id leaky_relu(Id x, T alpha) { return pointwise(Op::leaky_relu, x, alpha); }
    Id tanh(Id x) { return pointwise(Op::tanh_fn, x, T(0)); }
    Id sigmoid(Id x) { return pointwise(Op::sigmoid, x, T(0)); }
    Id log(Id x) { return pointwise(Op::log_fn, x, T(0)); }

    Id add(Id a, Id b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (av.shape != bv.shape)
            throw data_error("add shape mismatch " + av.shape.str() + " vs " + bv.shape.str());
        Node n;
        n.op = Op::add;
        n.a = a;
        n.b = b;
        n.value = av;
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += bv.data[i];
        return push_op(std::move(n));
    }

    Id scalar_mul(Id a, T s) {
        Node n;
        n.op = Op::scalar_mul;
        n.a = a;
        n.alpha = s;
        n.value = value(a);
        for (T& v : n.value.data) v *= s;
        return push_op(std::move(n));
    }

    Id mean_reduce(Id a) {
        const Tensor<T>& av = value(a);
        T acc = T(0);
        for (T v : av.data) acc += v;
        Node n;
        n.op = Op::mean_reduce;
        n.a = a;
        n.value = Tensor<T>::scalar(acc / static_cast<T>(av.data.size()));
        return push_op(std::move(n));
    }

    /// Mean absolute difference (scalar).
    Id l1_distance(Id a, Id b) { return distance(Op::l1_distance, a, b); }
    /// Mean squared difference (scalar).
    Id square_distance(Id a, Id b) { return distance(Op::square_distance, a, b); }

    const Tensor<T>& value(Id id) const { return nodes_.at(id).value; }
    const Tensor<T>& grad(Id id) const {
        const Node& n = nodes_.at(id);
        if (n.grad.data.empty())
            throw data_error("gradient not populated for node " + std::to_string(id));
        return n.grad;
    }
    bool has_grad(Id id) const { return !nodes_.at(id).grad.data.empty(); }
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar loss; every parameter reachable from
    /// it receives a gradient, unreachable parameters keep zeros.
    void backward(Id loss) {
        Node& ln = nodes_.at(loss);
        if (!ln.value.is_scalar())
            throw data_error("backward requires scalar loss, got " + ln.value.shape.str());
        for (Node& n : nodes_)
            if (n.needs_grad) n.grad = Tensor<T>(n.value.shape);
        if (!ln.needs_grad) return; // loss touches no parameters; all grads stay zero
        ln.grad.data[0] = T(1);
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || n.op == Op::leaf || n.grad.data.empty()) continue;
            backward_node(n);
        }
    }

private:
    std::vector<Node> nodes_;

    Id push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id push_op(Node&& n) {
        n.needs_grad = (n.a >= 0 && nodes_[n.a].needs_grad) ||
                       (n.b >= 0 && nodes_[n.b].needs_grad);
        return push(std::move(n));
    }

    Id pointwise(Op op, Id x, T alpha) {
        Node n;
        n.op = op;
        n.a = x;
        n.alpha = alpha;
        n.value = value(x);
        for (T& v : n.value.data) {
            switch (op) {
                case Op::relu: v = v > T(0) ? v : T(0); break;
                case Op::leaky_relu: v = v > T(0) ? v : alpha * v; break;
                case Op::tanh_fn: v = std::tanh(v); break;
                case Op::sigmoid: v = T(1) / (T(1) + std::exp(-v)); break;
                case Op::log_fn:
                    if (!(v > T(0))) throw numeric_error("log of non-positive value");
                    v = std::log(v);
                    break;
                default: break;
            }
        }
        return push_op(std::move(n));
    }

    Id distance(Op op, Id a, Id b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (av.shape != bv.shape)
            throw data_error("distance shape mismatch " + av.shape.str() + " vs " +
                             bv.shape.str());
        T acc = T(0);
        for (std::size_t i = 0; i < av.data.size(); ++i) {
            const T d = av.data[i] - bv.data[i];
            acc += op == Op::l1_distance ? std::abs(d) : d * d;
        }
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = Tensor<T>::scalar(acc / static_cast<T>(av.data.size()));
        return push_op(std::move(n));
    }

    Tensor<T>* grad_ptr(Id id) {
        if (id < 0) return nullptr;
        Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.needs_grad ? &n.grad : nullptr;
    }

    // --- convolution kernels -------------------------------------------------

    void conv_forward(const Tensor<T>& x, const Tensor<T>& w, Node& n) {
        const int kh = w.shape.h, kw = w.shape.w;
        const int cin = x.shape.c;
        const int cout = w.shape.n;
        const int oh = n.value.shape.h, ow = n.value.shape.w;
        const int n_pix = oh * ow;
        const int k_total = cin * kh * kw;
        std::vector<T> padded;
        std::vector<T> cols;
        detail::CMapRM<T> wm(w.data.data(), cout, k_total);
        for (int s = 0; s < x.shape.n; ++s) {
            const T* src = x.data.data() + static_cast<std::size_t>(s) * cin * x.shape.plane();
            int ih = x.shape.h, iw = x.shape.w, pad = n.pad;
            if (n.pad_mode == PadMode::reflect && n.pad > 0) {
                ih += 2 * n.pad;
                iw += 2 * n.pad;
                padded.assign(static_cast<std::size_t>(cin) * ih * iw, T(0));
                detail::reflect_pad_plane(src, cin, x.shape.h, x.shape.w, n.pad, padded.data());
                src = padded.data();
                pad = 0;
            }
            T* out = n.value.data.data() + static_cast<std::size_t>(s) * cout * n_pix;
            for (int row = 0; row < n_pix; row += detail::kConvBlockPixels) {
                const int row_end = std::min(row + detail::kConvBlockPixels, n_pix);
                const int nb = row_end - row;
                cols.resize(static_cast<std::size_t>(nb) * k_total);
                detail::im2col(src, cin, ih, iw, kh, kw, n.stride, pad, ow, row, row_end,
                               cols.data());
                detail::CMapRM<T> cm(cols.data(), nb, k_total);
                // out columns [row, row_end): (Cout, nb) = W (Cout, K) * cols^T (K, nb)
                detail::MapRM<T> om(out, cout, n_pix);
                om.middleCols(row, nb).noalias() = wm * cm.transpose();
            }
        }
    }

    void conv_backward(Node& n) {
        const Tensor<T>& x = nodes_[n.a].value;
        const Tensor<T>& w = nodes_[n.b].value;
        Tensor<T>* dx = grad_ptr(n.a);
        Tensor<T>* dw = grad_ptr(n.b);
        const int kh = w.shape.h, kw = w.shape.w;
        const int cin = x.shape.c;
        const int cout = w.shape.n;
        const int oh = n.value.shape.h, ow = n.value.shape.w;
        const int n_pix = oh * ow;
        const int k_total = cin * kh * kw;
        const bool reflect = n.pad_mode == PadMode::reflect && n.pad > 0;
        detail::CMapRM<T> wm(w.data.data(), cout, k_total);
        std::vector<T> padded, dpadded, cols, dcols;
        for (int s = 0; s < x.shape.n; ++s) {
            const T* src = x.data.data() + static_cast<std::size_t>(s) * cin * x.shape.plane();
            int ih = x.shape.h, iw = x.shape.w, pad = n.pad;
            if (reflect) {
                ih += 2 * n.pad;
                iw += 2 * n.pad;
                padded.assign(static_cast<std::size_t>(cin) * ih * iw, T(0));
                detail::reflect_pad_plane(src, cin, x.shape.h, x.shape.w, n.pad, padded.data());
                src = padded.data();
                pad = 0;
                if (dx) dpadded.assign(static_cast<std::size_t>(cin) * ih * iw, T(0));
            }
            const T* gout =
                n.grad.data.data() + static_cast<std::size_t>(s) * cout * n_pix;
            detail::CMapRM<T> gm(gout, cout, n_pix);
            for (int row = 0; row < n_pix; row += detail::kConvBlockPixels) {
                const int row_end = std::min(row + detail::kConvBlockPixels, n_pix);
                const int nb = row_end - row;
                if (dw) {
                    cols.resize(static_cast<std::size_t>(nb) * k_total);
                    detail::im2col(src, cin, ih, iw, kh, kw, n.stride, pad, ow, row, row_end,
                                   cols.data());
                    detail::CMapRM<T> cm(cols.data(), nb, k_total);
                    detail::MapRM<T> dwm(dw->data.data(), cout, k_total);
                    dwm.noalias() += gm.middleCols(row, nb) * cm;
                }
                if (dx) {
                    dcols.resize(static_cast<std::size_t>(nb) * k_total);
                    detail::MapRM<T> dcm(dcols.data(), nb, k_total);
                    dcm.noalias() = gm.middleCols(row, nb).transpose() * wm;
                    T* target = reflect
                                    ? dpadded.data()
                                    : dx->data.data() +
                                          static_cast<std::size_t>(s) * cin * x.shape.plane();
                    detail::col2im_add(dcols.data(), cin, ih, iw, kh, kw, n.stride, pad, ow, row,
                                       row_end, target);
                }
            }
            if (dx && reflect)
                detail::reflect_pad_adjoint(dpadded.data(), cin, x.shape.h, x.shape.w, n.pad,
                                            dx->data.data() +
                                                static_cast<std::size_t>(s) * cin *
                                                    x.shape.plane());
        }
    }

    void tconv_forward(const Tensor<T>& x, const Tensor<T>& w, Node& n) {
        const int kh = w.shape.h, kw = w.shape.w;
        const int cin = x.shape.c;
        const int cout = w.shape.c;
        const int ihn = x.shape.h, iwn = x.shape.w;
        const int oh = n.value.shape.h, ow_out = n.value.shape.w;
        const int n_pix = ihn * iwn; // one cols row per *input* pixel
        const int k_total = cout * kh * kw;
        detail::CMapRM<T> wm(w.data.data(), cin, k_total);
        std::vector<T> cols;
        for (int s = 0; s < x.shape.n; ++s) {
            const T* src = x.data.data() + static_cast<std::size_t>(s) * cin * x.shape.plane();
            detail::CMapRM<T> xm(src, cin, n_pix);
            T* out = n.value.data.data() +
                     static_cast<std::size_t>(s) * cout * n.value.shape.plane();
            for (int row = 0; row < n_pix; row += detail::kConvBlockPixels) {
                const int row_end = std::min(row + detail::kConvBlockPixels, n_pix);
                const int nb = row_end - row;
                cols.resize(static_cast<std::size_t>(nb) * k_total);
                detail::MapRM<T> cm(cols.data(), nb, k_total);
                cm.noalias() = xm.middleCols(row, nb).transpose() * wm;
                detail::col2im_add(cols.data(), cout, oh, ow_out, kh, kw, n.stride, n.pad, iwn,
                                   row, row_end, out);
            }
        }
    }

    void tconv_backward(Node& n) {
        const Tensor<T>& x = nodes_[n.a].value;
        const Tensor<T>& w = nodes_[n.b].value;
        Tensor<T>* dx = grad_ptr(n.a);
        Tensor<T>* dw = grad_ptr(n.b);
        const int kh = w.shape.h, kw = w.shape.w;
        const int cin = x.shape.c;
        const int cout = w.shape.c;
        const int ihn = x.shape.h, iwn = x.shape.w;
        const int oh = n.value.shape.h, ow_out = n.value.shape.w;
        const int n_pix = ihn * iwn;
        const int k_total = cout * kh * kw;
        detail::CMapRM<T> wm(w.data.data(), cin, k_total);
        std::vector<T> dcols;
        for (int s = 0; s < x.shape.n; ++s) {
            const T* gout = n.grad.data.data() +
                            static_cast<std::size_t>(s) * cout * n.value.shape.plane();
            const T* src = x.data.data() + static_cast<std::size_t>(s) * cin * x.shape.plane();
            detail::CMapRM<T> xm(src, cin, n_pix);
            for (int row = 0; row < n_pix; row += detail::kConvBlockPixels) {
                const int row_end = std::min(row + detail::kConvBlockPixels, n_pix);
                const int nb = row_end - row;
                dcols.resize(static_cast<std::size_t>(nb) * k_total);
                // gather the output gradient through the same correspondence
                detail::im2col(gout, cout, oh, ow_out, kh, kw, n.stride, n.pad, iwn, row,
                               row_end, dcols.data());
                detail::CMapRM<T> dcm(dcols.data(), nb, k_total);
                if (dx) {
                    detail::MapRM<T> dxm(dx->data.data() +
                                             static_cast<std::size_t>(s) * cin * x.shape.plane(),
                                         cin, n_pix);
                    dxm.middleCols(row, nb).noalias() += wm * dcm.transpose();
                }
                if (dw) {
                    detail::MapRM<T> dwm(dw->data.data(), cin, k_total);
                    dwm.noalias() += xm.middleCols(row, nb) * dcm;
                }
            }
        }
    }

    // --- backward dispatch ----------------------------------------------------

    void backward_node(Node& n) {
        const Tensor<T>& g = n.grad;
        switch (n.op) {
            case Op::conv2d:
                conv_backward(n);
                break;
            case Op::tconv2d:
                tconv_backward(n);
                break;
            case Op::channel_bias: {
                if (Tensor<T>* dx = grad_ptr(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i) dx->data[i] += g.data[i];
                if (Tensor<T>* db = grad_ptr(n.b)) {
                    const Shape s = n.value.shape;
                    const std::size_t plane = s.plane();
                    for (int smp = 0; smp < s.n; ++smp)
                        for (int c = 0; c < s.c; ++c) {
                            const T* gp = g.data.data() +
                                          (static_cast<std::size_t>(smp) * s.c + c) * plane;
                            T acc = T(0);
                            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
                            db->data[c] += acc;
                        }
                }
                break;
            }
            case Op::instance_norm: {
                Tensor<T>* dx = grad_ptr(n.a);
                if (!dx) break;
                const Shape s = n.value.shape;
                const std::size_t plane = s.plane();
                for (int smp = 0; smp < s.n; ++smp)
                    for (int c = 0; c < s.c; ++c) {
                        const std::size_t off =
                            (static_cast<std::size_t>(smp) * s.c + c) * plane;
                        const T invstd = n.stats[static_cast<std::size_t>(smp) * s.c + c];
                        const T* gp = g.data.data() + off;
                        const T* y = n.value.data.data() + off;
                        T mean_g = T(0), mean_gy = T(0);
                        for (std::size_t i = 0; i < plane; ++i) {
                            mean_g += gp[i];
                            mean_gy += gp[i] * y[i];
                        }
                        mean_g /= static_cast<T>(plane);
                        mean_gy /= static_cast<T>(plane);
                        T* dxp = dx->data.data() + off;
                        for (std::size_t i = 0; i < plane; ++i)
                            dxp[i] += invstd * (gp[i] - mean_g - y[i] * mean_gy);
                    }
                break;
            }
            case Op::relu: {
                if (Tensor<T>* dx = grad_ptr(n.a)) {
                    const Tensor<T>& x = nodes_[n.a].value;
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        if (x.data[i] > T(0)) dx->data[i] += g.data[i];
                }
                break;
            }
            case Op::leaky_relu: {
                if (Tensor<T>* dx = grad_ptr(n.a)) {
                    const Tensor<T>& x = nodes_[n.a].value;
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        dx->data[i] += g.data[i] * (x.data[i] > T(0) ? T(1) : n.alpha);
                }
                break;
            }
            case Op::tanh_fn: {
                if (Tensor<T>* dx = grad_ptr(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        dx->data[i] += g.data[i] * (T(1) - n.value.data[i] * n.value.data[i]);
                break;
            }
            case Op::sigmoid: {
                if (Tensor<T>* dx = grad_ptr(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        dx->data[i] += g.data[i] * n.value.data[i] * (T(1) - n.value.data[i]);
                break;
            }
            case Op::log_fn: {
                if (Tensor<T>* dx = grad_ptr(n.a)) {
                    const Tensor<T>& x = nodes_[n.a].value;
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        dx->data[i] += g.data[i] / x.data[i];
                }
                break;
            }
            case Op::add: {
                if (Tensor<T>* da = grad_ptr(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i) da->data[i] += g.data[i];
                if (Tensor<T>* db = grad_ptr(n.b))
                    for (std::size_t i = 0; i < g.data.size(); ++i) db->data[i] += g.data[i];
                break;
            }
            case Op::scalar_mul: {
                if (Tensor<T>* da = grad_ptr(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        da->data[i] += g.data[i] * n.alpha;
                break;
            }
            case Op::mean_reduce: {
                if (Tensor<T>* da = grad_ptr(n.a)) {
                    const T gs = g.data[0] / static_cast<T>(da->data.size());
                    for (T& v : da->data) v += gs;
                }
                break;
            }
            case Op::l1_distance: {
                const Tensor<T>& a = nodes_[n.a].value;
                const Tensor<T>& b = nodes_[n.b].value;
                const T gs = g.data[0] / static_cast<T>(a.data.size());
                Tensor<T>* da = grad_ptr(n.a);
                Tensor<T>* db = grad_ptr(n.b);
                for (std::size_t i = 0; i < a.data.size(); ++i) {
                    const T d = a.data[i] - b.data[i];
                    const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                    if (da) da->data[i] += gs * sgn;
                    if (db) db->data[i] -= gs * sgn;
                }
                break;
            }
            case Op::square_distance: {
                const Tensor<T>& a = nodes_[n.a].value;
                const Tensor<T>& b = nodes_[n.b].value;
                const T gs = g.data[0] * T(2) / static_cast<T>(a.data.size());
                Tensor<T>* da = grad_ptr(n.a);
                Tensor<T>* db = grad_ptr(n.b);
                for (std::size_t i = 0; i < a.data.size(); ++i) {
                    const T d = a.data[i] - b.data[i];
                    if (da) da->data[i] += gs * d;
                    if (db) db->data[i] -= gs * d;
                }
                break;
            }
            case Op::leaf:
                break;
        }
    }
};

} // namespace changeforge
