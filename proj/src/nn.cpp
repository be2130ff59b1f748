#include "svp/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace svp {

using autodiff::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check(x.rank() == 2 && weight.rank() == 2, "linear: rank-2 inputs required");
    int64_t B = x.dim(0), I = x.dim(1), O = weight.dim(0);
    check(weight.dim(1) == I, "linear: inner extents differ, x " + shape_str(x.shape()) +
                                  " W " + shape_str(weight.shape()));
    bool has_bias = bias.defined();
    if (has_bias)
        check(bias.rank() == 1 && bias.dim(0) == O, "linear: bias extent mismatch");

    std::vector<double> out(B * O);
    MutMap y(out.data(), B, O);
    y.noalias() = ConstMap(x.data(), B, I) * ConstMap(weight.data(), O, I).transpose();
    if (has_bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), O);

    auto backward = [B, I, O, has_bias](Node& self) {
        Node* X = self.parents[0].get();
        Node* W = self.parents[1].get();
        ConstMap g(self.grad.data(), B, O);
        if (X->requires_grad) {
            MutMap gx(X->ensure_grad(), B, I);
            gx.noalias() += g * ConstMap(W->value.data(), O, I);
        }
        if (W->requires_grad) {
            MutMap gw(W->ensure_grad(), O, I);
            gw.noalias() += g.transpose() * ConstMap(X->value.data(), B, I);
        }
        if (has_bias) {
            Node* Bn = self.parents[2].get();
            if (Bn->requires_grad) {
                Eigen::Map<Eigen::RowVectorXd> gb(Bn->ensure_grad(), O);
                gb += g.colwise().sum();
            }
        }
    };
    std::vector<Tensor> parents = {x, weight};
    if (has_bias) parents.push_back(bias);
    return make_op({B, O}, std::move(out), std::move(parents), backward, "linear");
}

namespace {

struct ConvGeom {
    int64_t B, C, H, W, F, kh, kw, Ho, Wo;
    int stride, pad;
    bool rank3;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& k, int stride, int pad) {
    check(x.rank() == 3 || x.rank() == 4, "conv2d: input must be [C,H,W] or [B,C,H,W]");
    check(k.rank() == 4, "conv2d: kernel must be [F,C,kh,kw]");
    check(stride >= 1 && pad >= 0, "conv2d: invalid stride/padding");
    ConvGeom g;
    g.rank3 = (x.rank() == 3);
    g.B = g.rank3 ? 1 : x.dim(0);
    g.C = x.dim(g.rank3 ? 0 : 1);
    g.H = x.dim(g.rank3 ? 1 : 2);
    g.W = x.dim(g.rank3 ? 2 : 3);
    g.F = k.dim(0);
    g.kh = k.dim(2);
    g.kw = k.dim(3);
    g.stride = stride;
    g.pad = pad;
    check(k.dim(1) == g.C, "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                               " kernel " + shape_str(k.shape()));
    check(g.kh <= g.H + 2 * pad && g.kw <= g.W + 2 * pad,
          "conv2d: kernel larger than padded input");
    g.Ho = (g.H + 2 * pad - g.kh) / stride + 1;
    g.Wo = (g.W + 2 * pad - g.kw) / stride + 1;
    check(g.Ho >= 1 && g.Wo >= 1, "conv2d: empty output");
    return g;
}

// cols is [C*kh*kw, Ho*Wo]
void im2col(const double* x, const ConvGeom& g, double* cols) {
    int64_t hw = g.Ho * g.Wo;
    for (int64_t c = 0; c < g.C; ++c) {
        const double* xc = x + c * g.H * g.W;
        for (int64_t ki = 0; ki < g.kh; ++ki) {
            for (int64_t kj = 0; kj < g.kw; ++kj) {
                double* row = cols + ((c * g.kh + ki) * g.kw + kj) * hw;
                for (int64_t oy = 0; oy < g.Ho; ++oy) {
                    int64_t iy = oy * g.stride - g.pad + ki;
                    double* dst = row + oy * g.Wo;
                    if (iy < 0 || iy >= g.H) {
                        std::fill(dst, dst + g.Wo, 0.0);
                        continue;
                    }
                    const double* src = xc + iy * g.W;
                    for (int64_t ox = 0; ox < g.Wo; ++ox) {
                        int64_t ix = ox * g.stride - g.pad + kj;
                        dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, double* gx) {
    int64_t hw = g.Ho * g.Wo;
    for (int64_t c = 0; c < g.C; ++c) {
        double* xc = gx + c * g.H * g.W;
        for (int64_t ki = 0; ki < g.kh; ++ki) {
            for (int64_t kj = 0; kj < g.kw; ++kj) {
                const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * hw;
                for (int64_t oy = 0; oy < g.Ho; ++oy) {
                    int64_t iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.H) continue;
                    double* dst = xc + iy * g.W;
                    const double* src = row + oy * g.Wo;
                    for (int64_t ox = 0; ox < g.Wo; ++ox) {
                        int64_t ix = ox * g.stride - g.pad + kj;
                        if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
    ConvGeom g = conv_geometry(x, kernel, stride, padding);
    int64_t ckk = g.C * g.kh * g.kw;
    int64_t hw = g.Ho * g.Wo;

    std::vector<double> out(g.B * g.F * hw);
    std::vector<double> cols(ckk * hw);
    for (int64_t b = 0; b < g.B; ++b) {
        im2col(x.data() + b * g.C * g.H * g.W, g, cols.data());
        MutMap y(out.data() + b * g.F * hw, g.F, hw);
        y.noalias() = ConstMap(kernel.data(), g.F, ckk) * ConstMap(cols.data(), ckk, hw);
    }

    auto backward = [g, ckk, hw](Node& self) {
        Node* X = self.parents[0].get();
        Node* K = self.parents[1].get();
        // im2col is recomputed here rather than saved; the input is cheap to
        // re-expand and the cols buffer dominates memory otherwise
        std::vector<double> cols(ckk * hw);
        std::vector<double> dcols(ckk * hw);
        for (int64_t b = 0; b < g.B; ++b) {
            ConstMap gy(self.grad.data() + b * g.F * hw, g.F, hw);
            if (K->requires_grad) {
                im2col(X->value.data() + b * g.C * g.H * g.W, g, cols.data());
                MutMap gk(K->ensure_grad(), g.F, ckk);
                gk.noalias() += gy * ConstMap(cols.data(), ckk, hw).transpose();
            }
            if (X->requires_grad) {
                MutMap dc(dcols.data(), ckk, hw);
                dc.noalias() = ConstMap(K->value.data(), g.F, ckk).transpose() * gy;
                col2im_add(dcols.data(), g, X->ensure_grad() + b * g.C * g.H * g.W);
            }
        }
    };
    Shape rshape = g.rank3 ? Shape{g.F, g.Ho, g.Wo} : Shape{g.B, g.F, g.Ho, g.Wo};
    return make_op(std::move(rshape), std::move(out), {x, kernel}, backward, "conv2d");
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    check(x.rank() == 3 || x.rank() == 4, "add_channel_bias: rank-3/4 input required");
    bool rank3 = x.rank() == 3;
    int64_t B = rank3 ? 1 : x.dim(0);
    int64_t C = x.dim(rank3 ? 0 : 1);
    int64_t hw = x.dim(rank3 ? 1 : 2) * x.dim(rank3 ? 2 : 3);
    check(bias.rank() == 1 && bias.dim(0) == C, "add_channel_bias: extent mismatch");

    std::vector<double> out(x.size());
    const double* px = x.data();
    const double* pb = bias.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* src = px + (b * C + c) * hw;
            double* dst = out.data() + (b * C + c) * hw;
            double bv = pb[c];
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
        }

    auto backward = [B, C, hw](Node& self) {
        Node* X = self.parents[0].get();
        Node* Bi = self.parents[1].get();
        const double* g = self.grad.data();
        if (X->requires_grad) {
            double* gx = X->ensure_grad();
            for (int64_t i = 0; i < static_cast<int64_t>(self.value.size()); ++i)
                gx[i] += g[i];
        }
        if (Bi->requires_grad) {
            double* gb = Bi->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* src = g + (b * C + c) * hw;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += src[i];
                    gb[c] += acc;
                }
        }
    };
    return make_op(x.shape(), std::move(out), {x, bias}, backward, "add_channel_bias");
}

Tensor upsample2x(const Tensor& x) {
    check(x.rank() >= 2, "upsample2x: needs spatial axes");
    Shape s = x.shape();
    int64_t W = s.back();
    int64_t H = s[s.size() - 2];
    int64_t planes = x.size() / (H * W);
    Shape rshape = s;
    rshape[s.size() - 2] = 2 * H;
    rshape[s.size() - 1] = 2 * W;

    std::vector<double> out(planes * 4 * H * W);
    const double* px = x.data();
    for (int64_t p = 0; p < planes; ++p) {
        const double* src = px + p * H * W;
        double* dst = out.data() + p * 4 * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
                double v = src[y * W + xx];
                double* d = dst + (2 * y) * (2 * W) + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * W] = v;
                d[2 * W + 1] = v;
            }
    }

    auto backward = [planes, H, W](Node& self) {
        Node* X = self.parents[0].get();
        if (!X->requires_grad) return;
        double* gx = X->ensure_grad();
        const double* g = self.grad.data();
        for (int64_t p = 0; p < planes; ++p) {
            const double* src = g + p * 4 * H * W;
            double* dst = gx + p * H * W;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t xx = 0; xx < W; ++xx) {
                    const double* s4 = src + (2 * y) * (2 * W) + 2 * xx;
                    dst[y * W + xx] += s4[0] + s4[1] + s4[2 * W] + s4[2 * W + 1];
                }
        }
    };
    return make_op(std::move(rshape), std::move(out), {x}, backward, "upsample2x");
}

Tensor uniform_init(Shape shape, int64_t fan_in, RngStream& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// recurrent cells
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const Tensor& w_ih, const Tensor& w_hh,
                                    const Tensor& bias) {
    int64_t H = h.dim(1);
    check(w_ih.dim(0) == 4 * H && w_hh.dim(0) == 4 * H && w_hh.dim(1) == H,
          "lstm_cell: packed weight extents inconsistent with hidden size");
    check(c.shape() == h.shape(), "lstm_cell: h/c shape mismatch");
    Tensor gates = linear(x, w_ih, bias) + linear(h, w_hh);
    Tensor i = sigmoid(slice(gates, 1, 0, H));
    Tensor f = sigmoid(slice(gates, 1, H, H));
    Tensor g = tanh(slice(gates, 1, 2 * H, H));
    Tensor o = sigmoid(slice(gates, 1, 3 * H, H));
    Tensor c_next = f * c + i * g;
    Tensor h_next = o * tanh(c_next);
    return {h_next, c_next};
}

std::pair<Tensor, Tensor> convlstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                        const Tensor& w_ih, const Tensor& w_hh,
                                        const Tensor& bias, int padding) {
    check(x.rank() == 3 && h.rank() == 3, "convlstm_cell: [C,H,W] inputs required");
    check(x.dim(1) == h.dim(1) && x.dim(2) == h.dim(2),
          "convlstm_cell: spatial extents of x and h differ");
    int64_t F = h.dim(0);
    check(w_ih.dim(0) == 4 * F && w_hh.dim(0) == 4 * F,
          "convlstm_cell: packed weight extents inconsistent");
    Tensor gates = add_channel_bias(
        conv2d(x, w_ih, 1, padding) + conv2d(h, w_hh, 1, padding), bias);
    Tensor i = sigmoid(slice(gates, 0, 0, F));
    Tensor f = sigmoid(slice(gates, 0, F, F));
    Tensor g = tanh(slice(gates, 0, 2 * F, F));
    Tensor o = sigmoid(slice(gates, 0, 3 * F, F));
    Tensor c_next = f * c + i * g;
    Tensor h_next = o * tanh(c_next);
    return {h_next, c_next};
}

Tensor convgru_cell(const Tensor& x, const Tensor& h, const Tensor& w_ih,
                    const Tensor& w_hh, const Tensor& bias, int padding) {
    check(x.rank() == 3 && h.rank() == 3, "convgru_cell: [C,H,W] inputs required");
    check(x.dim(1) == h.dim(1) && x.dim(2) == h.dim(2),
          "convgru_cell: spatial extents of x and h differ");
    int64_t F = h.dim(0);
    check(w_ih.dim(0) == 3 * F && w_hh.dim(0) == 3 * F,
          "convgru_cell: packed weight extents inconsistent");
    Tensor gi = add_channel_bias(conv2d(x, w_ih, 1, padding), bias);
    Tensor z = sigmoid(slice(gi, 0, 0, F) +
                       conv2d(h, slice(w_hh, 0, 0, F), 1, padding));
    Tensor r = sigmoid(slice(gi, 0, F, F) +
                       conv2d(h, slice(w_hh, 0, F, F), 1, padding));
    Tensor cand = tanh(slice(gi, 0, 2 * F, F) +
                       conv2d(r * h, slice(w_hh, 0, 2 * F, F), 1, padding));
    return (1.0 - z) * h + z * cand;
}

// ---------------------------------------------------------------------------
// layer modules
// ---------------------------------------------------------------------------

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, RngStream& rng,
               bool bias) {
    W = ps.add(name + ".weight", uniform_init({out, in}, in, rng));
    if (bias) b = ps.add(name + ".bias", Tensor({out}));
}

Conv::Conv(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int ksize,
           int stride_, int pad_, RngStream& rng, bool bias)
    : stride(stride_), pad(pad_) {
    K = ps.add(name + ".weight",
               uniform_init({out_ch, in_ch, ksize, ksize},
                            static_cast<int64_t>(in_ch) * ksize * ksize, rng));
    if (bias) b = ps.add(name + ".bias", Tensor({out_ch}));
}

Tensor Conv::operator()(const Tensor& x) const {
    Tensor y = conv2d(x, K, stride, pad);
    if (b.defined()) y = add_channel_bias(y, b);
    return y;
}

LstmCell::LstmCell(ParamStore& ps, const std::string& name, int in, int hidden_,
                   RngStream& rng)
    : hidden(hidden_) {
    w_ih = ps.add(name + ".w_ih", uniform_init({4 * hidden, in}, in, rng));
    w_hh = ps.add(name + ".w_hh", uniform_init({4 * hidden, hidden}, hidden, rng));
    bias = ps.add(name + ".bias", Tensor({4 * hidden}));
}

ConvLstmCell::ConvLstmCell(ParamStore& ps, const std::string& name, int in_ch,
                           int channels_, int ksize_, RngStream& rng)
    : channels(channels_), ksize(ksize_) {
    int64_t fan_in = static_cast<int64_t>(in_ch) * ksize * ksize;
    w_ih = ps.add(name + ".w_ih", uniform_init({4 * channels, in_ch, ksize, ksize}, fan_in, rng));
    w_hh = ps.add(name + ".w_hh",
                  uniform_init({4 * channels, channels, ksize, ksize},
                               static_cast<int64_t>(channels) * ksize * ksize, rng));
    bias = ps.add(name + ".bias", Tensor({4 * channels}));
}

ConvGruCell::ConvGruCell(ParamStore& ps, const std::string& name, int in_ch,
                         int channels_, int ksize_, RngStream& rng)
    : channels(channels_), ksize(ksize_) {
    int64_t fan_in = static_cast<int64_t>(in_ch) * ksize * ksize;
    w_ih = ps.add(name + ".w_ih", uniform_init({3 * channels, in_ch, ksize, ksize}, fan_in, rng));
    w_hh = ps.add(name + ".w_hh",
                  uniform_init({3 * channels, channels, ksize, ksize},
                               static_cast<int64_t>(channels) * ksize * ksize, rng));
    bias = ps.add(name + ".bias", Tensor({3 * channels}));
}

}  // namespace svp
