#pragma once

#include <map>
#include <optional>
#include <string>

#include "svp/tensor.hpp"

namespace svp {

// Named parameter collection. Iteration is lexicographic by name (std::map),
// which every consumer relies on for determinism.
class ParamStore {
public:
    // Registers a leaf tensor; the stored handle aliases the caller's tensor.
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    size_t count() const { return entries_.size(); }
    int64_t total_size() const;

    std::map<std::string, Tensor>& entries() { return entries_; }
    const std::map<std::string, Tensor>& entries() const { return entries_; }

    // Concatenation of all values in name order; round-trips bit-exactly.
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);

    void zero_grads();
    // Copies of accumulated gradients; parameters never reached by backward
    // report zeros.
    std::map<std::string, Tensor> gradients() const;

private:
    std::map<std::string, Tensor> entries_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Checkpoint;

class AdamState {
public:
    AdamState() = default;
    AdamState(const ParamStore& params, AdamConfig cfg);

    // Bias-corrected Adam update, in place. Throws NumericError on NaN grads.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

    // Per-group learning rate by name prefix (e.g. fine-tuning the dynamics
    // at a smaller rate while fresh heads keep the base rate).
    void set_lr_override(const std::string& name_prefix, double lr);
    void clear_lr_overrides() { lr_overrides_.clear(); }

    int64_t step_count() const { return step_; }
    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    const std::map<std::string, Tensor>& first_moments() const { return m_; }
    const std::map<std::string, Tensor>& second_moments() const { return v_; }

    friend void save_checkpoint(const std::string&, const ParamStore&,
                                const std::string&, const AdamState*);
    friend AdamState adam_from_checkpoint(const Checkpoint&, const ParamStore&);

private:
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::map<std::string, Tensor> m_, v_;
    std::map<std::string, double> lr_overrides_;
};

// Spec-level alias for the optimizer update.
inline void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                      AdamState& state) {
    state.step(params, grads);
}

// Convenience: backward + gradient collection in one call.
std::map<std::string, Tensor> gradients(const Tensor& loss, ParamStore& params);

struct Checkpoint {
    std::string model_kind;
    std::map<std::string, Tensor> params;
    std::optional<AdamConfig> adam_config;
    int64_t adam_step = 0;
    std::map<std::string, Tensor> adam_m, adam_v;
};

// Binary format: magic "SDLCKPT1", u64 count, then per entry
// (u32 name length, UTF-8 name, u8 dtype tag, u8 rank, u64 extents,
// little-endian payload), then optional tagged sections:
// "KINDSEC1" (model kind string) and "ADAMSEC1" (optimizer state).
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& model_kind = "",
                     const AdamState* adam = nullptr);
Checkpoint load_checkpoint(const std::string& path);
// Copies values into an existing store; names and shapes must match.
void load_into(ParamStore& params, const Checkpoint& ckpt);
AdamState adam_from_checkpoint(const Checkpoint& ckpt, const ParamStore& params);

}  // namespace svp
