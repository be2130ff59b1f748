#pragma once

#include "svp/params.hpp"
#include "svp/rng.hpp"
#include "svp/tensor.hpp"

namespace svp {

// y = x W^T + b for x[B,I], W[O,I], b[O]; b may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

// Cross-correlation. x is [B,C,H,W] or [C,H,W] (implicit B=1, result keeps
// the rank of x); kernel [F,C,kh,kw]; symmetric stride and zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride = 1, int padding = 0);

// Adds bias[C] across the channel axis of [C,H,W] or [B,C,H,W].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Nearest-neighbour 2x upsampling on the trailing two axes.
Tensor upsample2x(const Tensor& x);

// Weights drawn from U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
Tensor uniform_init(Shape shape, int64_t fan_in, RngStream& rng);

// Packed gate order for LSTM weights: (input, forget, candidate, output).
// The checkpoint layout depends on this order.
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const Tensor& w_ih, const Tensor& w_hh,
                                    const Tensor& bias);

// Convolutional LSTM, same gating algebra with 3x3 (or kxk) convolutions.
std::pair<Tensor, Tensor> convlstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                        const Tensor& w_ih, const Tensor& w_hh,
                                        const Tensor& bias, int padding);

// ConvGRU with gate order (update z, reset r, candidate):
// h' = (1 - z) .* h + z .* tanh(conv(x) + conv(r .* h)).
Tensor convgru_cell(const Tensor& x, const Tensor& h, const Tensor& w_ih,
                    const Tensor& w_hh, const Tensor& bias, int padding);

// ---- layer modules: own their parameters, register them in a ParamStore ----

struct Linear {
    Tensor W, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, RngStream& rng,
           bool bias = true);
    Tensor operator()(const Tensor& x) const { return linear(x, W, b); }
};

struct Conv {
    Tensor K, b;
    int stride = 1, pad = 1;
    Conv() = default;
    Conv(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int ksize,
         int stride, int pad, RngStream& rng, bool bias = true);
    Tensor operator()(const Tensor& x) const;
};

struct LstmCell {
    Tensor w_ih, w_hh, bias;
    int hidden = 0;
    LstmCell() = default;
    LstmCell(ParamStore& ps, const std::string& name, int in, int hidden, RngStream& rng);
    std::pair<Tensor, Tensor> operator()(const Tensor& x, const Tensor& h,
                                         const Tensor& c) const {
        return lstm_cell(x, h, c, w_ih, w_hh, bias);
    }
    Tensor zero_state(int batch = 1) const { return Tensor({batch, hidden}); }
};

struct ConvLstmCell {
    Tensor w_ih, w_hh, bias;
    int channels = 0, ksize = 3;
    ConvLstmCell() = default;
    ConvLstmCell(ParamStore& ps, const std::string& name, int in_ch, int channels,
                 int ksize, RngStream& rng);
    std::pair<Tensor, Tensor> operator()(const Tensor& x, const Tensor& h,
                                         const Tensor& c) const {
        return convlstm_cell(x, h, c, w_ih, w_hh, bias, ksize / 2);
    }
    Tensor zero_state(int64_t hh, int64_t ww) const { return Tensor({channels, hh, ww}); }
};

struct ConvGruCell {
    Tensor w_ih, w_hh, bias;
    int channels = 0, ksize = 3;
    ConvGruCell() = default;
    ConvGruCell(ParamStore& ps, const std::string& name, int in_ch, int channels,
                int ksize, RngStream& rng);
    Tensor operator()(const Tensor& x, const Tensor& h) const {
        return convgru_cell(x, h, w_ih, w_hh, bias, ksize / 2);
    }
    Tensor zero_state(int64_t hh, int64_t ww) const { return Tensor({channels, hh, ww}); }
};

}  // namespace svp
