#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "svp/tensor.hpp"

namespace svp {

// Binary planar tensor record: 16-byte header (magic "SDLIMG1\0",
// u32 dtype tag, u32 rank), then u64 extents and the little-endian payload.
// dtype 0 = f64, 1 = u8.
void write_tensor_record(std::ostream& os, const Tensor& t);
Tensor read_tensor_record(std::istream& is);
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

// 8-bit binary PGM; values are clamped to [lo, hi] then scaled to 0..255.
void write_pgm(const std::string& path, const Tensor& plane, double lo = 0.0,
               double hi = 1.0);

// Instance-id map rendered through a fixed palette (binary PPM); id 0 is
// background (black).
void write_instance_ppm(const std::string& path, const Tensor& ids);

// Tiles [C,H,W] frames left-to-right into one plane for quick inspection.
Tensor tile_frames(const std::vector<Tensor>& frames, int64_t channel = 0);

}  // namespace svp
