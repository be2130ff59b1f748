#include "svp/models_common.hpp"

namespace svp {

std::vector<int> stage_widths(int base, int stages) {
    std::vector<int> w;
    for (int i = 1; i <= stages; ++i) w.push_back(base * i);
    return w;
}

VecEncoder::VecEncoder(ParamStore& ps, const std::string& name, int in_ch, int base,
                       int stages_n, int feat_, int64_t h, int64_t w, RngStream& rng) {
    auto widths = stage_widths(base, stages_n);
    int ch = in_ch;
    for (int i = 0; i < stages_n; ++i) {
        stages.emplace_back(ps, name + ".conv" + std::to_string(i), ch, widths[i], 3,
                            2, 1, rng);
        ch = widths[i];
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    h_out = h;
    w_out = w;
    ch_out = ch;
    feat = feat_;
    head = Linear(ps, name + ".head", static_cast<int>(ch * h * w), feat, rng);
}

VecEncoder::Out VecEncoder::operator()(const Tensor& frame) const {
    Out out;
    Tensor x = frame;
    for (const auto& c : stages) {
        x = leaky_relu(c(x), 0.2);
        out.skips.push_back(x);
    }
    out.vec = tanh(head(reshape(x, {1, x.size()})));
    return out;
}

VecDecoder::VecDecoder(ParamStore& ps, const std::string& name, int vec_dim, int base,
                       int stages_n, int out_ch, int64_t h, int64_t w, RngStream& rng) {
    auto widths = stage_widths(base, stages_n);
    for (int i = 0; i < stages_n; ++i) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    h_in = h;
    w_in = w;
    ch_in = widths.back();
    head = Linear(ps, name + ".head", vec_dim, static_cast<int>(ch_in * h * w), rng);
    // coarse-to-fine; the encoder skip at the matching resolution is
    // concatenated at every stage except the full-resolution one
    int ch = ch_in;
    for (int j = 0; j < stages_n - 1; ++j) {
        int skip_ch = widths[stages_n - 2 - j];
        stages.emplace_back(ps, name + ".up" + std::to_string(j), ch + skip_ch,
                            skip_ch, 3, 1, 1, rng);
        ch = skip_ch;
    }
    stages.emplace_back(ps, name + ".up" + std::to_string(stages_n - 1), ch, base, 3,
                        1, 1, rng);
    out = Conv(ps, name + ".out", base, out_ch, 3, 1, 1, rng);
}

Tensor VecDecoder::operator()(const Tensor& vec, const std::vector<Tensor>& skips) const {
    check(skips.size() == stages.size(), "VecDecoder: skip count mismatch");
    size_t n = stages.size();
    Tensor x = leaky_relu(reshape(head(vec), {ch_in, h_in, w_in}), 0.2);
    for (size_t j = 0; j + 1 < n; ++j) {
        const Tensor& skip = skips[n - 2 - j];
        Tensor up = upsample2x(x);
        // crop when the encoder rounded odd sizes up
        if (up.dim(1) != skip.dim(1)) up = slice(up, 1, 0, skip.dim(1));
        if (up.dim(2) != skip.dim(2)) up = slice(up, 2, 0, skip.dim(2));
        x = leaky_relu(stages[j](concat({up, skip}, 0)), 0.2);
    }
    x = leaky_relu(stages[n - 1](upsample2x(x)), 0.2);
    return out(x);
}

GridEncoder::GridEncoder(ParamStore& ps, const std::string& name, int in_ch, int base,
                         int stages_n, int64_t h, int64_t w, RngStream& rng) {
    auto widths = stage_widths(base, stages_n);
    int ch = in_ch;
    for (int i = 0; i < stages_n; ++i) {
        stages.emplace_back(ps, name + ".conv" + std::to_string(i), ch, widths[i], 3,
                            2, 1, rng);
        ch = widths[i];
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    h_out = h;
    w_out = w;
    ch_out = ch;
}

GridEncoder::Out GridEncoder::operator()(const Tensor& frame) const {
    Out out;
    Tensor x = frame;
    for (const auto& c : stages) {
        x = leaky_relu(c(x), 0.2);
        out.skips.push_back(x);
    }
    out.map = x;
    return out;
}

GridDecoder::GridDecoder(ParamStore& ps, const std::string& name, int in_ch,
                         const std::vector<int>& widths,
                         const std::vector<int>& skip_chs, int out_ch,
                         RngStream& rng) {
    check(widths.size() == skip_chs.size(), "GridDecoder: stage spec mismatch");
    int ch = in_ch;
    for (size_t i = 0; i < widths.size(); ++i) {
        stages.emplace_back(ps, name + ".up" + std::to_string(i), ch + skip_chs[i],
                            widths[i], 3, 1, 1, rng);
        ch = widths[i];
    }
    out = Conv(ps, name + ".out", ch, out_ch, 3, 1, 1, rng);
}

Tensor GridDecoder::operator()(const Tensor& map, const std::vector<Tensor>& skips) const {
    Tensor x = map;
    for (size_t i = 0; i < stages.size(); ++i) {
        Tensor up = upsample2x(x);
        if (i < skips.size() && skips[i].defined()) {
            const Tensor& skip = skips[i];
            if (up.dim(1) != skip.dim(1)) up = slice(up, 1, 0, skip.dim(1));
            if (up.dim(2) != skip.dim(2)) up = slice(up, 2, 0, skip.dim(2));
            x = leaky_relu(stages[i](concat({up, skip}, 0)), 0.2);
        } else {
            x = leaky_relu(stages[i](up), 0.2);
        }
    }
    return out(x);
}

GaussHeadVec::GaussHeadVec(ParamStore& ps, const std::string& name, int in, int dim_,
                           RngStream& rng)
    : lin(ps, name, in, 2 * dim_, rng), dim(dim_) {}

DiagGaussian GaussHeadVec::operator()(const Tensor& feat) const {
    Tensor both = lin(feat);
    return DiagGaussian(slice(both, 1, 0, dim),
                        clamp(slice(both, 1, dim, dim), -kLogVarClamp, kLogVarClamp));
}

GaussHeadConv::GaussHeadConv(ParamStore& ps, const std::string& name, int in_ch,
                             int ch_, RngStream& rng)
    : conv(ps, name, in_ch, 2 * ch_, 3, 1, 1, rng), ch(ch_) {}

DiagGaussian GaussHeadConv::operator()(const Tensor& map) const {
    Tensor both = conv(map);
    return DiagGaussian(slice(both, 0, 0, ch),
                        clamp(slice(both, 0, ch, ch), -kLogVarClamp, kLogVarClamp));
}

Mlp::Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out,
         RngStream& rng)
    : a(ps, name + ".a", in, hidden, rng), b(ps, name + ".b", hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return b(leaky_relu(a(x), 0.2)); }

ConvBlock::ConvBlock(ParamStore& ps, const std::string& name, int in_ch, int hidden,
                     int out_ch, RngStream& rng)
    : a(ps, name + ".a", in_ch, hidden, 3, 1, 1, rng),
      b(ps, name + ".b", hidden, out_ch, 3, 1, 1, rng) {}

Tensor ConvBlock::operator()(const Tensor& x) const { return b(leaky_relu(a(x), 0.2)); }

Tensor global_avg_pool(const Tensor& x) {
    check(x.rank() == 3, "global_avg_pool: [C,H,W] input required");
    int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor ones({hw, 1}, 1.0 / static_cast<double>(hw));
    return reshape(matmul(reshape(x, {c, hw}), ones), {1, c});
}

Tensor flow_activation(const Tensor& raw, int64_t h, int64_t w) {
    return tanh(raw) * (static_cast<double>(std::max(h, w)) / 2.0);
}

Tensor depth_activation(const Tensor& raw, double d_min, double d_max) {
    return sigmoid(raw) * (d_max - d_min) + d_min;
}

Tensor l2_loss(const Tensor& pred, const Tensor& target) {
    return sum(square(pred - target));
}

double breakdown_total(const std::map<std::string, double>& terms) {
    double s = 0;
    for (const auto& [k, v] : terms) s += v;
    return s;
}

}  // namespace svp
