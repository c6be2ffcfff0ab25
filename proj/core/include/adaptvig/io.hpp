#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "adaptvig/tensor.hpp"

namespace adaptvig {

// AVGT tensor container: magic "AVGT", u32 little-endian rank (always 4),
// four u32 dims (N,C,H,W), then N*C*H*W f32 little-endian values in row-major
// NCHW order. Values are narrowed to f32 on write.
void write_avgt(const std::filesystem::path& file, const Tensor4& t);
Tensor4 read_avgt(const std::filesystem::path& file);

/// 8-bit binary PGM (P5). Values are clamped to [0,1] and scaled linearly so
/// that 1.0 maps to 255.
void write_pgm(const std::filesystem::path& file, const std::vector<double>& values, int h, int w);

/// Deterministic '.'-decimal formatting for CSV output (%.12g).
std::string fmt_double(double v);

void write_text_file(const std::filesystem::path& file, const std::string& contents);

}  // namespace adaptvig
