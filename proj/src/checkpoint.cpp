#include "mutflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

constexpr std::string_view kMagic = "MFK1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::string& out, T value) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    static_assert(sizeof(T) == 8);
    need(8);
    std::uint64_t bits;
    std::memcpy(&bits, bytes_.data() + pos_, 8);
    pos_ += 8;
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const TensorMap& blobs) {
  std::string out(kMagic);
  put<std::uint64_t>(out, blobs.size());
  for (const auto& [name, t] : blobs) {
    put<std::uint64_t>(out, name.size());
    out.append(name);
    put<std::uint64_t>(out, t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

TensorMap decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw DataError("not a checkpoint: bad magic");
  const auto count = r.get<std::uint64_t>();
  TensorMap out;
  for (std::uint64_t b = 0; b < count; ++b) {
    const auto len = r.get<std::uint64_t>();
    std::string name(r.take(len));
    const auto rank = r.get<std::uint64_t>();
    if (rank > 16) throw DataError("checkpoint blob " + name + ": implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.get<double>();
    out.insert_or_assign(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const TensorMap& blobs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(blobs);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing checkpoint " + path.string());
}

TensorMap read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

TensorMap collect_parameters(const ParameterStore& store, std::string_view prefix) {
  TensorMap out;
  for (const auto& [name, p] : store.items()) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name, p->value);
  }
  return out;
}

std::size_t load_parameters(ParameterStore& store, const TensorMap& blobs, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& [name, t] : blobs) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    Parameter* p = store.find(name);
    if (!p) throw DataError("checkpoint parameter " + name + " has no counterpart in the model");
    if (p->value.shape() != t.shape()) {
      throw DataError("checkpoint parameter " + name + " has shape " + shape_string(t.shape()) +
                      ", model expects " + shape_string(p->value.shape()));
    }
    p->value = t;
    ++n;
  }
  return n;
}

}  // namespace mutflow
