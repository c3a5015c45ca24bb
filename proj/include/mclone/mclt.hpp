#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mclone/tensor.hpp"

// MCLT binary tensor container:
//   "MCLT" | u8 version (1) | u8 dtype (0 = f32) | u8 ndim | ndim x u32 LE dims | f32 LE payload
// Several containers may be concatenated in one file.
namespace mclone::mclt {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

void write(std::ostream& os, const Tensor& t);
/// Reads one container; throws FormatError on bad magic, version, dtype or truncation.
Tensor read(std::istream& is);

void save(const std::filesystem::path& path, const Tensor& t);
Tensor load(const std::filesystem::path& path);

void save_all(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
/// Reads every container in the file; nothing is returned unless all parse.
std::vector<Tensor> load_all(const std::filesystem::path& path);

/// Size in bytes of the encoded container for `dims`.
std::size_t encoded_size(const Shape& dims);

}  // namespace mclone::mclt
