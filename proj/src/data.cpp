#include "petbench/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

namespace petbench {

std::string_view name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::span<const std::uint8_t> Dataset::image(Index i) const {
  return std::span<const std::uint8_t>(images).subspan(static_cast<std::size_t>(i * pixels()),
                                                       static_cast<std::size_t>(pixels()));
}

std::vector<Index> Dataset::class_counts(int classes) const {
  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (auto l : labels) {
    if (l < classes) ++counts[l];
  }
  return counts;
}

IdxError::IdxError(const std::string& file, std::uint64_t offset, const std::string& what)
    : std::runtime_error(file + ": " + what + " at offset " + std::to_string(offset)), file_(file), offset_(offset) {}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 24) | (std::uint32_t{bytes_[pos_ + 1]} << 16) |
                      (std::uint32_t{bytes_[pos_ + 2]} << 8) | std::uint32_t{bytes_[pos_ + 3]};
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::uint64_t n, const char* field) {
    need(n, field);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void finish() const {
    if (pos_ != bytes_.size()) {
      throw IdxTrailingDataError(file_, pos_, std::to_string(bytes_.size() - pos_) + " unexpected trailing bytes");
    }
  }

  std::size_t pos() const { return pos_; }
  const std::string& file() const { return file_; }

 private:
  void need(std::uint64_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw IdxTruncatedError(file_, bytes_.size(),
                              std::string("truncated while reading ") + field + " (needed " + std::to_string(n) +
                                  " bytes from offset " + std::to_string(pos_) + ")");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes, Split split,
                  const std::string& image_name, const std::string& label_name, Index expected_rows,
                  Index expected_cols) {
  Reader img(image_bytes, image_name);
  std::uint32_t magic = img.u32("magic");
  if (magic != kImageMagic) {
    throw IdxMagicError(image_name, 0, "bad image magic " + hex(magic) + " (expected " + hex(kImageMagic) + ")");
  }
  const std::uint32_t n = img.u32("image count");
  const std::uint32_t rows = img.u32("row count");
  if (rows != expected_rows) {
    throw IdxDimensionError(image_name, 8, "rows = " + std::to_string(rows) + ", expected " +
                                               std::to_string(expected_rows));
  }
  const std::uint32_t cols = img.u32("column count");
  if (cols != expected_cols) {
    throw IdxDimensionError(image_name, 12, "cols = " + std::to_string(cols) + ", expected " +
                                                std::to_string(expected_cols));
  }
  auto pixels = img.take(std::uint64_t{n} * rows * cols, "pixel data");
  img.finish();

  Reader lab(label_bytes, label_name);
  magic = lab.u32("magic");
  if (magic != kLabelMagic) {
    throw IdxMagicError(label_name, 0, "bad label magic " + hex(magic) + " (expected " + hex(kLabelMagic) + ")");
  }
  const std::uint32_t m = lab.u32("label count");
  if (m != n) {
    throw IdxCountMismatchError(label_name, 4, std::to_string(m) + " labels for " + std::to_string(n) + " images");
  }
  auto labels = lab.take(m, "label data");
  lab.finish();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 9) {
      throw IdxLabelError(label_name, 8 + i, "label " + std::to_string(labels[i]) + " outside [0, 10)");
    }
  }

  Dataset d;
  d.rows = rows;
  d.cols = cols;
  d.images.assign(pixels.begin(), pixels.end());
  d.labels.assign(labels.begin(), labels.end());
  d.split = split;
  return d;
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& data) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + data.images.size());
  put_u32(out, kImageMagic);
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  put_u32(out, static_cast<std::uint32_t>(data.rows));
  put_u32(out, static_cast<std::uint32_t>(data.cols));
  out.insert(out.end(), data.images.begin(), data.images.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& data) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + data.labels.size());
  put_u32(out, kLabelMagic);
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), data.labels.begin(), data.labels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");  // passes plain files through unchanged
  if (!f) throw DataIoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    int got = gzread(f, buf, sizeof buf);
    if (got < 0) {
      int code = 0;
      std::string msg = gzerror(f, &code);
      gzclose(f);
      throw DataIoError("cannot decompress " + path.string() + ": " + msg);
    }
    if (got == 0) break;
    out.insert(out.end(), buf, buf + got);
  }
  gzclose(f);
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.c_str(), "wb9");
    if (!f) throw DataIoError("cannot write " + path.string());
    std::size_t done = 0;
    while (done < bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 20));
      if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw DataIoError("short write to " + path.string());
      }
      done += chunk;
    }
    if (gzclose(f) != Z_OK) throw DataIoError("cannot finish " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataIoError("short write to " + path.string());
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
  auto ib = read_file(images);
  auto lb = read_file(labels);
  return parse_idx(ib, lb, split, images.string(), labels.string());
}

void save_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  write_file(images, encode_idx_images(data));
  write_file(labels, encode_idx_labels(data));
}

IdxPaths locate_idx(const std::filesystem::path& root, Split split) {
  const std::string prefix = split == Split::test ? "t10k" : "train";
  std::vector<std::string> tried;
  auto find = [&](const std::string& base) {
    for (const char* ext : {"", ".gz"}) {
      auto p = root / (base + ext);
      tried.push_back(p.string());
      if (std::filesystem::exists(p)) return p;
    }
    std::string list;
    for (const auto& t : tried) list += "\n  " + t;
    throw DataIoError("no IDX file found; tried:" + list);
  };
  IdxPaths paths;
  paths.images = find(prefix + "-images-idx3-ubyte");
  paths.labels = find(prefix + "-labels-idx1-ubyte");
  return paths;
}

template <typename S>
Tensor<S> normalize(const Dataset& data, std::span<const Index> indices) {
  const Index n = indices.empty() ? data.size() : static_cast<Index>(indices.size());
  const Index px = data.pixels();
  Array<S> values(n * px);
  for (Index i = 0; i < n; ++i) {
    const Index src = indices.empty() ? i : indices[static_cast<std::size_t>(i)];
    if (src < 0 || src >= data.size()) throw std::out_of_range("image index " + std::to_string(src));
    auto img = data.image(src);
    for (Index j = 0; j < px; ++j) values[i * px + j] = static_cast<S>(img[static_cast<std::size_t>(j)]) / S(255);
  }
  return Tensor<S>::from({n, 1, data.rows, data.cols}, std::move(values));
}

std::vector<int> labels_of(const Dataset& data, std::span<const Index> indices) {
  std::vector<int> out;
  if (indices.empty()) {
    out.assign(data.labels.begin(), data.labels.end());
    return out;
  }
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(data.labels.at(static_cast<std::size_t>(i)));
  return out;
}

template <typename S>
Tensor<S> one_hot(std::span<const int> labels, int k) {
  const Index n = static_cast<Index>(labels.size());
  Array<S> values = Array<S>::Zero(n * k);
  for (Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l < 0 || l >= k) throw std::out_of_range("label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
    values[i * k + l] = S(1);
  }
  return Tensor<S>::from({n, k}, std::move(values));
}

template <typename S>
std::vector<int> decode_one_hot(const Tensor<S>& rows) {
  if (rows.ndim() != 2) throw ShapeError("decode_one_hot expects [n,k], got " + to_string(rows.shape()));
  auto m = rows.matrix();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<Index> seeded_permutation(Index n, std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  // Fisher-Yates with a plain modulo draw: std::shuffle and the standard
  // distributions are free to differ between library implementations.
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

std::vector<std::vector<Index>> shuffled_batches(Index n, const BatchPlan& plan, int epoch) {
  if (plan.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  std::vector<Index> order;
  if (plan.shuffle) {
    order = seeded_permutation(n, plan.seed, static_cast<std::uint64_t>(epoch));
  } else {
    order.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  }
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += plan.batch_size) {
    const Index end = std::min(n, start + plan.batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Dataset take(const Dataset& data, std::span<const Index> indices) {
  Dataset out;
  out.rows = data.rows;
  out.cols = data.cols;
  out.split = data.split;
  out.images.reserve(indices.size() * static_cast<std::size_t>(data.pixels()));
  out.labels.reserve(indices.size());
  for (Index i : indices) {
    if (i < 0 || i >= data.size()) throw std::out_of_range("image index " + std::to_string(i));
    auto img = data.image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

namespace {

// Distinct streams so a subset and a validation split drawn with the same
// seed are independent of each other and of the epoch shuffles.
constexpr std::uint64_t kSubsetStream = 0x5ab5e7ULL << 32;
constexpr std::uint64_t kValStream = 0x7a11dULL << 32;

}  // namespace

Dataset subset(const Dataset& data, Index n, std::uint64_t seed) {
  const Index N = data.size();
  if (n < 0 || n > N) throw std::invalid_argument("subset of " + std::to_string(n) + " from " + std::to_string(N));
  if (n == N) return data;
  constexpr int K = 10;
  std::vector<std::vector<Index>> by_class(K);
  for (Index i = 0; i < N; ++i) by_class[data.labels[static_cast<std::size_t>(i)]].push_back(i);

  std::vector<Index> quota(K, n / K);
  // The n % K extra slots go to classes in a seeded order.
  auto class_order = seeded_permutation(K, seed, kSubsetStream);
  for (Index r = 0; r < n % K; ++r) ++quota[static_cast<std::size_t>(class_order[static_cast<std::size_t>(r)])];

  std::vector<Index> chosen;
  chosen.reserve(static_cast<std::size_t>(n));
  for (int c = 0; c < K; ++c) {
    const auto& pool = by_class[static_cast<std::size_t>(c)];
    const Index want = quota[static_cast<std::size_t>(c)];
    if (static_cast<Index>(pool.size()) < want) {
      throw std::invalid_argument("cannot stratify: class " + std::to_string(c) + " has " +
                                  std::to_string(pool.size()) + " images, needs " + std::to_string(want));
    }
    auto perm = seeded_permutation(static_cast<Index>(pool.size()), seed, kSubsetStream + 1 + c);
    for (Index j = 0; j < want; ++j) chosen.push_back(pool[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]);
  }
  std::sort(chosen.begin(), chosen.end());
  return take(data, chosen);
}

TrainValSplit split_validation(const Dataset& data, Index n_val, std::uint64_t seed) {
  const Index N = data.size();
  if (n_val < 0 || n_val >= N) {
    throw std::invalid_argument("validation split of " + std::to_string(n_val) + " from " + std::to_string(N));
  }
  auto perm = seeded_permutation(N, seed, kValStream);
  std::vector<Index> train(perm.begin(), perm.end() - n_val);
  std::vector<Index> val(perm.end() - n_val, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  TrainValSplit out{take(data, train), take(data, val)};
  out.val.split = Split::val;
  return out;
}

#define PETBENCH_INSTANTIATE(S)                                                  \
  template Tensor<S> normalize(const Dataset&, std::span<const Index>);         \
  template Tensor<S> one_hot(std::span<const int>, int);                        \
  template std::vector<int> decode_one_hot(const Tensor<S>&);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench
