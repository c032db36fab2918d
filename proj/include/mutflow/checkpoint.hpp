#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mutflow/graph.hpp"

// Binary parameter container:
//   "MFK1"                      4-byte magic (format version 1)
//   u64 blob_count
//   per blob:
//     u64 name_length, name bytes (UTF-8, no terminator)
//     u64 rank, rank x u64 dims
//     prod(dims) x f64 values
// All integers and floats are little-endian.

namespace mutflow {

using TensorMap = std::map<std::string, Tensor>;

std::string encode_checkpoint(const TensorMap& blobs);
TensorMap decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const TensorMap& blobs);
TensorMap read_checkpoint(const std::filesystem::path& path);

// Values of every parameter whose name starts with prefix.
TensorMap collect_parameters(const ParameterStore& store, std::string_view prefix = "");

// Copies blobs with the prefix into existing parameters of the same name.
// Returns the number loaded; a missing parameter or shape mismatch throws.
std::size_t load_parameters(ParameterStore& store, const TensorMap& blobs, std::string_view prefix);

}  // namespace mutflow
