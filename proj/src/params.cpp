#include "svp/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace svp {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    check(!contains(name), "ParamStore: duplicate name " + name);
    t.set_requires_grad(true);
    auto [it, ok] = entries_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    check(it != entries_.end(), "ParamStore: unknown name " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "ParamStore: unknown name " + name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const {
    return entries_.count(name) > 0;
}

int64_t ParamStore::total_size() const {
    int64_t n = 0;
    for (const auto& [k, v] : entries_) n += v.size();
    return n;
}

std::vector<double> ParamStore::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    for (const auto& [k, v] : entries_)
        flat.insert(flat.end(), v.data(), v.data() + v.size());
    return flat;
}

void ParamStore::unflatten(const std::vector<double>& flat) {
    check(static_cast<int64_t>(flat.size()) == total_size(),
          "unflatten: size mismatch");
    size_t off = 0;
    for (auto& [k, v] : entries_) {
        std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.data());
        off += v.size();
    }
}

void ParamStore::zero_grads() {
    for (auto& [k, v] : entries_) v.zero_grad();
}

std::map<std::string, Tensor> ParamStore::gradients() const {
    std::map<std::string, Tensor> out;
    for (const auto& [k, v] : entries_) out.emplace(k, v.grad());
    return out;
}

std::map<std::string, Tensor> gradients(const Tensor& loss, ParamStore& params) {
    params.zero_grads();
    loss.backward();
    return params.gradients();
}

AdamState::AdamState(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& [name, p] : params.entries()) {
        m_.emplace(name, Tensor(p.shape()));
        v_.emplace(name, Tensor(p.shape()));
    }
}

void AdamState::set_lr_override(const std::string& name_prefix, double lr) {
    lr_overrides_[name_prefix] = lr;
}

void AdamState::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    ++step_;
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params.entries()) {
        auto git = grads.find(name);
        check(git != grads.end(), "adam_step: missing gradient for " + name);
        const Tensor& g = git->second;
        check(g.shape() == p.shape(), "adam_step: gradient shape mismatch for " + name);
        ensure_finite(g.data(), g.size(), "adam_step gradient");
        double lr = cfg_.lr;
        for (const auto& [prefix, olr] : lr_overrides_)
            if (name.rfind(prefix, 0) == 0) lr = olr;
        double* m = m_.at(name).data();
        double* v = v_.at(name).data();
        double* w = p.data();
        const double* gd = g.data();
        for (int64_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gd[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
            double mh = m[i] / c1;
            double vh = v[i] / c2;
            w[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'D', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr char kKindTag[8] = {'K', 'I', 'N', 'D', 'S', 'E', 'C', '1'};
constexpr char kAdamTag[8] = {'A', 'D', 'A', 'M', 'S', 'E', 'C', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

void write_entry(std::ostream& os, const std::string& name, const Tensor& t) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, 0);  // dtype: f64
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod<uint64_t>(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

std::pair<std::string, Tensor> read_entry(std::istream& is) {
    uint32_t len = read_pod<uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    uint8_t dtype = read_pod<uint8_t>(is);
    if (dtype != 0) throw IoError("checkpoint: unsupported dtype tag");
    uint8_t rank = read_pod<uint8_t>(is);
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint: truncated payload for " + name);
    return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& model_kind, const AdamState* adam) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 8);
    write_pod<uint64_t>(os, params.count());
    for (const auto& [name, t] : params.entries()) write_entry(os, name, t);
    if (!model_kind.empty()) {
        os.write(kKindTag, 8);
        write_pod<uint32_t>(os, static_cast<uint32_t>(model_kind.size()));
        os.write(model_kind.data(), static_cast<std::streamsize>(model_kind.size()));
    }
    if (adam) {
        os.write(kAdamTag, 8);
        write_pod<double>(os, adam->cfg_.lr);
        write_pod<double>(os, adam->cfg_.beta1);
        write_pod<double>(os, adam->cfg_.beta2);
        write_pod<double>(os, adam->cfg_.eps);
        write_pod<uint64_t>(os, static_cast<uint64_t>(adam->step_));
        write_pod<uint64_t>(os, adam->m_.size());
        for (const auto& [name, t] : adam->m_) write_entry(os, "m." + name, t);
        for (const auto& [name, t] : adam->v_) write_entry(os, "v." + name, t);
    }
    if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    Checkpoint ckpt;
    uint64_t count = read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < count; ++i) ckpt.params.insert(read_entry(is));
    char tag[8];
    while (is.read(tag, 8)) {
        if (std::memcmp(tag, kKindTag, 8) == 0) {
            uint32_t len = read_pod<uint32_t>(is);
            ckpt.model_kind.assign(len, '\0');
            is.read(ckpt.model_kind.data(), len);
        } else if (std::memcmp(tag, kAdamTag, 8) == 0) {
            AdamConfig cfg;
            cfg.lr = read_pod<double>(is);
            cfg.beta1 = read_pod<double>(is);
            cfg.beta2 = read_pod<double>(is);
            cfg.eps = read_pod<double>(is);
            ckpt.adam_config = cfg;
            ckpt.adam_step = static_cast<int64_t>(read_pod<uint64_t>(is));
            uint64_t n = read_pod<uint64_t>(is);
            for (uint64_t i = 0; i < n; ++i) {
                auto [name, t] = read_entry(is);
                ckpt.adam_m.emplace(name.substr(2), std::move(t));
            }
            for (uint64_t i = 0; i < n; ++i) {
                auto [name, t] = read_entry(is);
                ckpt.adam_v.emplace(name.substr(2), std::move(t));
            }
        } else {
            throw IoError("checkpoint: unknown section tag");
        }
    }
    return ckpt;
}

void load_into(ParamStore& params, const Checkpoint& ckpt) {
    check(params.count() == ckpt.params.size(),
          "checkpoint: parameter count mismatch");
    for (auto& [name, p] : params.entries()) {
        auto it = ckpt.params.find(name);
        check(it != ckpt.params.end(), "checkpoint: missing parameter " + name);
        check(it->second.shape() == p.shape(),
              "checkpoint: shape mismatch for " + name);
        std::copy(it->second.data(), it->second.data() + p.size(), p.data());
    }
}

AdamState adam_from_checkpoint(const Checkpoint& ckpt, const ParamStore& params) {
    check(ckpt.adam_config.has_value(), "checkpoint has no optimizer section");
    AdamState st(params, *ckpt.adam_config);
    st.step_ = ckpt.adam_step;
    for (auto& [name, t] : ckpt.adam_m) {
        auto it = st.m_.find(name);
        check(it != st.m_.end(), "optimizer state: unknown parameter " + name);
        std::copy(t.data(), t.data() + t.size(), it->second.data());
    }
    for (auto& [name, t] : ckpt.adam_v) {
        auto it = st.v_.find(name);
        check(it != st.v_.end(), "optimizer state: unknown parameter " + name);
        std::copy(t.data(), t.data() + t.size(), it->second.data());
    }
    return st;
}

}  // namespace svp
