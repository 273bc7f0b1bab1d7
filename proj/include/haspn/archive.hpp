#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/tensor.hpp"

// Little-endian parameter archive:
//   "HSPN" | u32 version | u32 header length | JSON header |
//   repeated { u32 name length | name | u32 rank | u32 dims[rank] | f32 data }
namespace haspn {

inline constexpr char kArchiveMagic[4] = {'H', 'S', 'P', 'N'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct Archive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<ArchiveArray> arrays;

  const ArchiveArray* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  void read(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CheckpointError("archive truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    read(&v, 4);
    return v;
  }

  std::string str(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CheckpointError("archive truncated");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Trailing unit dimensions are dropped for biases: (1,C,1,1) is stored as [C].
inline std::vector<std::uint32_t> archive_dims(const Shape4& s) {
  if (s.n == 1 && s.h == 1 && s.w == 1) return {static_cast<std::uint32_t>(s.c)};
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

// Rank-1 arrays become (1,C,1,1); lower ranks are left-padded with ones.
inline Shape4 archive_shape(const std::vector<std::uint32_t>& dims) {
  if (dims.empty() || dims.size() > 4) throw CheckpointError("archive array rank must be 1..4");
  if (dims.size() == 1) return Shape4{1, static_cast<int>(dims[0]), 1, 1};
  int d[4] = {1, 1, 1, 1};
  const std::size_t off = 4 - dims.size();
  for (std::size_t i = 0; i < dims.size(); ++i) d[off + i] = static_cast<int>(dims[i]);
  return Shape4{d[0], d[1], d[2], d[3]};
}

template <class T>
ArchiveArray to_archive_array(std::string name, const Tensor4<T>& t) {
  ArchiveArray a;
  a.name = std::move(name);
  a.dims = archive_dims(t.shape());
  a.data.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) a.data[i] = static_cast<float>(t[i]);
  return a;
}

template <class T>
Tensor4<T> from_archive_array(const ArchiveArray& a) {
  auto t = Tensor4<T>::uninitialized(archive_shape(a.dims));
  if (t.size() != a.data.size()) throw CheckpointError("archive array " + a.name + " has inconsistent size");
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(a.data[i]);
  return t;
}

inline std::string serialize_archive(const Archive& archive) {
  std::string out(kArchiveMagic, 4);
  detail::put_u32(out, kArchiveVersion);
  const std::string header = archive.header.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& a : archive.arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put_u32(out, static_cast<std::uint32_t>(a.dims.size()));
    std::size_t count = 1;
    for (auto d : a.dims) {
      detail::put_u32(out, d);
      count *= d;
    }
    if (count != a.data.size()) throw CheckpointError("archive array " + a.name + " has inconsistent size");
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  return out;
}

inline Archive parse_archive(const std::string& bytes) {
  detail::ByteReader in(bytes);
  if (in.str(4) != std::string(kArchiveMagic, 4)) throw CheckpointError("not a parameter archive (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kArchiveVersion) throw CheckpointError("unsupported archive version " + std::to_string(version));
  Archive archive;
  const std::uint32_t header_len = in.u32();
  try {
    archive.header = nlohmann::json::parse(in.str(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("archive header is not valid JSON: ") + e.what());
  }
  while (!in.done()) {
    ArchiveArray a;
    a.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank < 1 || rank > 4) throw CheckpointError("archive array " + a.name + " has rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      a.dims.push_back(in.u32());
      count *= a.dims.back();
    }
    a.data.resize(count);
    in.read(a.data.data(), count * sizeof(float));
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

inline void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const std::string bytes = serialize_archive(archive);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Archive read_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_archive(bytes);
}

}  // namespace haspn
