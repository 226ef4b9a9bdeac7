#include "aot/archive.hpp"

#include <bit>
#include <cstring>

#include "aot/error.hpp"
#include "aot/image_io.hpp"

namespace aot {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'O', 'T', 'A', 'R', 'C', 'H', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  const std::uint8_t* take(std::size_t n) {
    need(n);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DecodeError("archive truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t ArchiveTensor::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const ArchiveTensor* Archive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const ArchiveTensor& Archive::get(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw Error(ErrorCode::kIncompatibleCheckpoint, "archive has no tensor '" + name + "'");
  return *t;
}

std::vector<std::uint8_t> serialize_archive(const Archive& archive) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::string meta = archive.metadata.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    if (t.numel() != t.values.size()) {
      throw Error(ErrorCode::kInternal, "tensor '" + t.name + "' dims do not match its data");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint64_t>(out, d);
    for (double v : t.values) {
      if (t.dtype == DType::kFloat32) {
        put<float>(out, static_cast<float>(v));
      } else {
        put<double>(out, v);
      }
    }
  }
  return out;
}

Archive parse_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(8) != std::string(kMagic, 8)) throw DecodeError("not a tensor archive");
  Archive archive;
  const auto meta_len = r.get<std::uint32_t>();
  try {
    archive.metadata = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("archive metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveTensor t;
    t.name = r.str(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw DecodeError("unknown dtype for '" + t.name + "'");
    t.dtype = static_cast<DType>(dtype);
    const auto ndim = r.get<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) t.dims.push_back(r.get<std::uint64_t>());
    const std::uint64_t n = t.numel();
    const std::size_t width = t.dtype == DType::kFloat32 ? 4 : 8;
    if (n > bytes.size() / width) throw DecodeError("archive truncated");
    const std::uint8_t* raw = r.take(n * width);
    t.values.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (t.dtype == DType::kFloat32) {
        float f;
        std::memcpy(&f, raw + k * 4, 4);
        t.values[k] = f;
      } else {
        std::memcpy(&t.values[k], raw + k * 8, 8);
      }
    }
    archive.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DecodeError("trailing bytes after archive");
  return archive;
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  write_file_atomic(path, serialize_archive(archive));
}

Archive load_archive(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_archive(bytes);
  } catch (const DecodeError& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path.string() + ": " + e.what());
  }
}

}  // namespace aot
