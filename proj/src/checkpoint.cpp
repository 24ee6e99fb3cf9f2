#include "petbench/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace petbench {

static_assert(std::endian::native == std::endian::little, "checkpoints are written in host byte order");

namespace {

constexpr char kMagic[8] = {'P', 'E', 'T', 'B', 'C', 'K', 'P', 'T'};

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    if (s.size() > 0xffff) throw CheckpointError("name too long: " + s.substr(0, 40));
    put(static_cast<std::uint16_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  std::vector<char> buf;
};

class Reader {
 public:
  Reader(const std::vector<char>& b, std::string file) : buf_(b), file_(std::move(file)) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint16_t>();
    const char* p = take(n);
    return std::string(p, n);
  }
  const char* take(std::size_t n) {
    if (buf_.size() - pos_ < n) throw CheckpointError(file_ + ": truncated at byte " + std::to_string(pos_));
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<char>& buf_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t shape_fingerprint(const std::vector<std::pair<std::string, Shape>>& entries) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [n, shape] : entries) {
    fnv(h, n.data(), n.size());
    fnv(h, "", 1);
    for (Index d : shape) {
      const auto v = static_cast<std::int64_t>(d);
      fnv(h, &v, sizeof v);
    }
    fnv(h, "|", 1);
  }
  return h;
}

template <typename S>
std::uint64_t shape_fingerprint(const Parameters<S>& params) {
  std::vector<std::pair<std::string, Shape>> entries;
  for (const auto& p : params) entries.emplace_back(p.name, p.tensor.shape());
  return shape_fingerprint(entries);
}

template <typename S>
void save_checkpoint(const Model<S>& model, const std::filesystem::path& path) {
  const auto& params = model.parameters();
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(sizeof(S)));
  w.put_string(std::string(name(model.kind())));
  w.put(shape_fingerprint(params));
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put(static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (Index d : p.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_bytes(p.tensor.value().data(), static_cast<std::size_t>(p.tensor.size()) * sizeof(S));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

template <typename S>
void load_checkpoint(Model<S>& model, const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint not found or unreadable: " + file);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, file);
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) throw CheckpointError(file + ": not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(file + ": unsupported version " + std::to_string(version));
  }
  const auto scalar = r.get<std::uint32_t>();
  if (scalar != sizeof(S)) {
    throw CheckpointError(file + ": stored with " + std::to_string(scalar) + "-byte scalars, model uses " +
                          std::to_string(sizeof(S)));
  }
  const std::string kind = r.get_string();
  if (kind != name(model.kind())) {
    throw CheckpointError(file + ": holds a " + kind + " model, expected " + std::string(name(model.kind())));
  }
  const auto fingerprint = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  const auto& params = model.parameters();
  if (count != params.size()) {
    throw CheckpointError(file + ": " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  std::vector<Array<S>> values;
  for (const auto& p : params) {
    const std::string pname = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    if (pname != p.name || shape != p.tensor.shape()) {
      throw CheckpointError(file + ": parameter " + pname + " " + to_string(shape) + " does not match model " +
                            p.name + " " + to_string(p.tensor.shape()));
    }
    Array<S> v(p.tensor.size());
    std::memcpy(v.data(), r.take(static_cast<std::size_t>(v.size()) * sizeof(S)),
                static_cast<std::size_t>(v.size()) * sizeof(S));
    values.push_back(std::move(v));
  }
  if (!r.done()) throw CheckpointError(file + ": trailing bytes after the last parameter");
  if (fingerprint != shape_fingerprint(params)) throw CheckpointError(file + ": shape fingerprint mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S> t = params[i].tensor;
    t.mutable_value() = std::move(values[i]);
  }
}

#define PETBENCH_INSTANTIATE(S)                                                     \
  template std::uint64_t shape_fingerprint(const Parameters<S>&);                   \
  template void save_checkpoint(const Model<S>&, const std::filesystem::path&);     \
  template void load_checkpoint(Model<S>&, const std::filesystem::path&);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench
