#pragma once

#include "petbench/models/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace petbench {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// FNV-1a over every parameter's name and shape, in order.
std::uint64_t shape_fingerprint(const std::vector<std::pair<std::string, Shape>>& entries);
template <typename S>
std::uint64_t shape_fingerprint(const Parameters<S>& params);

/// Binary layout, little-endian: "PETBCKPT", u32 version, u32 scalar bytes,
/// u16-length model name, u64 fingerprint, u32 parameter count, then per
/// parameter: u16-length name, u32 rank, u64 extents, raw values.
template <typename S>
void save_checkpoint(const Model<S>& model, const std::filesystem::path& path);

/// Loads values into `model`. Throws CheckpointError for a missing file, a
/// bad header, another model family, or any parameter whose name or shape
/// differs from the model's; nothing is written into the model unless every
/// check passes.
template <typename S>
void load_checkpoint(Model<S>& model, const std::filesystem::path& path);

}  // namespace petbench
