#pragma once

#include <filesystem>
#include <iosfwd>

#include "dpdl/tensor.hpp"

namespace dpdl {

// TNSR file: "TNSR", u32 rank, rank x u32 extents, then f32 values in row-major
// order. All integers and floats little-endian.
void write_tnsr(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tnsr(std::istream& is);

void save_tnsr(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tnsr(const std::filesystem::path& path);

// Binary PPM (P6, maxval 255) for 3 x H x W images in [0, 1]. Values are
// clamped and rounded to 8 bits on write and scaled by 1/255 on read.
void write_ppm(std::ostream& os, const Tensor<float>& rgb);
Tensor<float> read_ppm(std::istream& is);

void save_ppm(const std::filesystem::path& path, const Tensor<float>& rgb);
Tensor<float> load_ppm(const std::filesystem::path& path);

}  // namespace dpdl
