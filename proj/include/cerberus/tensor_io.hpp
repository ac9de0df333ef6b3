#pragma once

#include <iosfwd>
#include <string>

#include "cerberus/tensor.hpp"

namespace cerberus {

// Self-describing binary tensor block: magic "CERB", format version u32,
// rank u32, extents u32[rank], then the row-major f64 payload. All integers
// and doubles are little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is, const std::string& path_for_errors);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace cerberus
