#pragma once

// Named-tensor container shared by model (SADM) and predictor (SADC)
// checkpoints: magic, u32 version 1, u64 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, rank x u64 dims, float32 payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sadvae {

struct TensorRecord {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<float> data;
};

std::string encode_tensor_file(std::string_view magic, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> decode_tensor_file(std::string_view magic, std::string_view bytes, const std::string& what);

void write_tensor_file(const std::filesystem::path& path, std::string_view magic,
                       const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> read_tensor_file(const std::filesystem::path& path, std::string_view magic);

/// Lookup by name; throws FormatError when absent.
const TensorRecord& find_tensor(const std::vector<TensorRecord>& tensors, std::string_view name);

} // namespace sadvae
