#pragma once

#include "petbench/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace petbench {

enum class Split { train, val, test };
std::string_view name(Split split);

/// Raw 8-bit images and integer labels, immutable once loaded.
struct Dataset {
  Index rows = 28;
  Index cols = 28;
  std::vector<std::uint8_t> images;  // size() * rows * cols, row-major per image
  std::vector<std::uint8_t> labels;  // values in [0, 10)
  Split split = Split::train;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index pixels() const { return rows * cols; }
  std::span<const std::uint8_t> image(Index i) const;
  /// Images per class, indexed by label.
  std::vector<Index> class_counts(int classes = 10) const;
};

/// Base of every IDX parse failure. `offset` is the byte position in the
/// (decompressed) file where the problem was detected.
class IdxError : public std::runtime_error {
 public:
  IdxError(const std::string& file, std::uint64_t offset, const std::string& what);
  std::uint64_t offset() const { return offset_; }
  const std::string& file() const { return file_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

#define PETBENCH_IDX_ERROR(Name)    \
  class Name : public IdxError {    \
   public:                          \
    using IdxError::IdxError;       \
  };
PETBENCH_IDX_ERROR(IdxMagicError)
PETBENCH_IDX_ERROR(IdxTruncatedError)
PETBENCH_IDX_ERROR(IdxDimensionError)
PETBENCH_IDX_ERROR(IdxCountMismatchError)
PETBENCH_IDX_ERROR(IdxLabelError)
PETBENCH_IDX_ERROR(IdxTrailingDataError)
#undef PETBENCH_IDX_ERROR

/// File could not be opened or decompressed.
class DataIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses an image file (magic 0x00000803, N x rows x cols) and a label file
/// (magic 0x00000801, N) held in memory. Labels must be below 10.
Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  Split split = Split::train, const std::string& image_name = "images",
                  const std::string& label_name = "labels", Index expected_rows = 28, Index expected_cols = 28);
std::vector<std::uint8_t> encode_idx_images(const Dataset& data);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& data);

/// Reads a whole file, transparently gunzipping gzip content.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes bytes, gzip-compressed when the path ends in ".gz".
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::train);
void save_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

struct IdxPaths {
  std::filesystem::path images;
  std::filesystem::path labels;
};

/// MNIST file names under `root` ("train-images-idx3-ubyte" / "t10k-..."),
/// with or without ".gz". Throws DataIoError listing the names tried.
IdxPaths locate_idx(const std::filesystem::path& root, Split split);

/// [n,1,rows,cols] with pixels mapped to [0,1] by /255. `indices` selects
/// images; empty means all, in order.
template <typename S>
Tensor<S> normalize(const Dataset& data, std::span<const Index> indices = {});
std::vector<int> labels_of(const Dataset& data, std::span<const Index> indices = {});

/// [n,k] with a single 1 per row; throws std::out_of_range for a label
/// outside [0,k).
template <typename S>
Tensor<S> one_hot(std::span<const int> labels, int k = 10);
/// Row-wise argmax, first index on ties.
template <typename S>
std::vector<int> decode_one_hot(const Tensor<S>& rows);

struct BatchPlan {
  Index batch_size = 128;
  std::uint64_t seed = 42;
  bool shuffle = true;
};

/// Permutation of [0,n) drawn from (seed, stream); stable across platforms.
std::vector<Index> seeded_permutation(Index n, std::uint64_t seed, std::uint64_t stream);

/// Index batches for one epoch: a permutation seeded by (plan.seed, epoch)
/// cut into batch_size pieces, the final short batch kept.
std::vector<std::vector<Index>> shuffled_batches(Index n, const BatchPlan& plan, int epoch);

/// Images at `indices`, in that order.
Dataset take(const Dataset& data, std::span<const Index> indices);

/// Stratified sample of n images: class quotas differ by at most one and
/// the result keeps the original relative order. n == size() returns the
/// data unchanged. Throws std::invalid_argument when a class cannot fill
/// its quota.
Dataset subset(const Dataset& data, Index n, std::uint64_t seed);

struct TrainValSplit {
  Dataset train;
  Dataset val;
};

/// Shuffles with `seed` and holds out the last `n_val` images as validation.
/// Both parts keep the original relative order.
TrainValSplit split_validation(const Dataset& data, Index n_val, std::uint64_t seed);

}  // namespace petbench
