#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "svp/common.hpp"

namespace svp {

// Counter-based random stream keyed by (seed, label). Draws are a pure
// function of (key, counter), so independent streams never interact and the
// same (seed, label) always replays the same sequence regardless of what
// other streams did in between.
class RngStream {
public:
    RngStream() : RngStream(0, "default") {}
    RngStream(uint64_t seed, std::string_view label);

    uint64_t next_u64();
    // [0, 1)
    double uniform();
    double uniform(double lo, double hi);
    // inclusive of both bounds
    int64_t uniform_int(int64_t lo, int64_t hi);
    // standard normal via Box-Muller (second value of each pair is cached)
    double normal();

    // child stream with a derived label, e.g. per-sequence workers
    RngStream fork(std::string_view sublabel) const;

    uint64_t key() const { return key_; }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    uint64_t seed_ = 0;
    std::string label_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace svp
