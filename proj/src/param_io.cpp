#include "rcl/param_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rcl/error.hpp"

namespace rcl {

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated parameter container");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_params(const TensorMap& params) {
  std::vector<std::uint8_t> out{'R', 'C', 'L', 'P'};
  put<std::uint32_t>(out, kParamVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    put<std::uint64_t>(out, offset);
    offset += 8 * t.size();
  }
  for (const auto& [name, t] : params)
    for (double v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

TensorMap decode_params(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "RCLP", 4) != 0) {
    throw FormatError("bad magic: not a parameter container");
  }
  Reader r(bytes);
  r.str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kParamVersion) {
    throw FormatError("version mismatch: container is v" + std::to_string(version) +
                      ", reader supports v" + std::to_string(kParamVersion));
  }
  const auto count = r.get<std::uint32_t>();

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    e.name = r.str(r.get<std::uint32_t>());
    const auto tag = r.get<std::uint8_t>();
    if (tag != kDtypeF64) throw FormatError("unknown dtype tag " + std::to_string(tag) + " for '" + e.name + "'");
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 16) throw FormatError("invalid rank for '" + e.name + "'");
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto ext = r.get<std::uint64_t>();
      if (ext == 0) throw FormatError("zero extent for '" + e.name + "'");
      e.shape.push_back(static_cast<std::size_t>(ext));
    }
    e.offset = r.get<std::uint64_t>();
    entries.push_back(std::move(e));
  }

  const std::size_t payload = r.pos();
  const std::size_t avail = bytes.size() - payload;
  TensorMap out;
  // [start, end) of each entry must lie in the payload and not overlap the previous one.
  std::uint64_t prev_end = 0;
  for (const auto& e : entries) {
    const std::uint64_t len = 8ULL * numel(e.shape);
    if (e.offset < prev_end) throw FormatError("overlapping entry '" + e.name + "'");
    if (e.offset > avail || len > avail - e.offset) throw FormatError("truncated payload for '" + e.name + "'");
    std::vector<double> data(numel(e.shape));
    const std::uint8_t* p = bytes.data() + payload + e.offset;
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint64_t v = 0;
      for (std::size_t b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[8 * i + b]) << (8 * b);
      data[i] = std::bit_cast<double>(v);
    }
    if (!out.emplace(e.name, Tensor(e.shape, std::move(data))).second) {
      throw FormatError("duplicate entry '" + e.name + "'");
    }
    prev_end = e.offset + len;
  }
  return out;
}

void save_params(const TensorMap& params, const std::filesystem::path& path) {
  const auto bytes = encode_params(params);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

TensorMap load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace rcl
