#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace svp {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or geometry violations on operation inputs.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf detected in a forward or backward pass; aborts the step.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace svp
