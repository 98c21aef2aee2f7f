#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dagr/tensor.hpp"

namespace dagr {

inline constexpr int kCheckpointFormatVersion = 1;

std::uint64_t fnv1a64(const void* data, std::size_t size);

/// One tensor per .bin file: a JSON header line {dtype,name,shape} followed by
/// raw little-endian 64-bit floats.
void write_tensor_blob(const std::string& path, const std::string& name, const Tensor& tensor);
std::pair<std::string, Tensor> read_tensor_blob(const std::string& path);

/// Checkpoint container: a directory holding manifest.json (names, shapes,
/// format version, per-blob content hash) plus one blob per tensor.
void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, Tensor>>& named_tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& dir);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace dagr
