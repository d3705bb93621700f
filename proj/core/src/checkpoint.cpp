#include "declab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "declab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace declab {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

class Reader {
 public:
  Reader(std::FILE* f, std::string path) : f_(f), path_(std::move(path)) {}

  void read(void* dst, size_t n) {
    if (std::fread(dst, 1, n, f_) != n)
      throw FormatError(path_ + ": truncated at byte " + std::to_string(offset_));
    offset_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v;
    read(&v, 4);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v;
    read(&v, 8);
    return v;
  }

  std::uint16_t u16() {
    std::uint16_t v;
    read(&v, 2);
    return v;
  }

  long offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::FILE* f_;
  std::string path_;
  long offset_ = 0;
};

void write_all(std::FILE* f, const void* src, size_t n, const std::string& path) {
  if (std::fwrite(src, 1, n, f) != n) throw FormatError(path + ": short write");
}

}  // namespace

void save_checkpoint(const ArrayMap& arrays, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError(path + ": cannot open for writing");
  write_all(f.get(), "LITD", 4, path);
  std::uint32_t version = kCheckpointVersion;
  write_all(f.get(), &version, 4, path);
  std::uint32_t count = static_cast<std::uint32_t>(arrays.size());
  write_all(f.get(), &count, 4, path);
  for (const auto& [name, arr] : arrays) {
    std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
    write_all(f.get(), &name_len, 4, path);
    write_all(f.get(), name.data(), name.size(), path);
    std::uint32_t rank = static_cast<std::uint32_t>(arr.shape.size());
    write_all(f.get(), &rank, 4, path);
    std::uint64_t numel = 1;
    for (int e : arr.shape) {
      std::uint32_t ext = static_cast<std::uint32_t>(e);
      write_all(f.get(), &ext, 4, path);
      numel *= static_cast<std::uint64_t>(e);
    }
    if (numel != arr.data.size())
      throw ContractError(path + ": array '" + name + "' shape/data mismatch");
    write_all(f.get(), arr.data.data(), arr.data.size() * 4, path);
  }
}

ArrayMap load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError(path + ": cannot open");
  Reader r(f.get(), path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "LITD", 4) != 0)
    throw FormatError(path + ": bad magic at byte 0");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version) +
                      " at byte 4");
  std::uint32_t count = r.u32();
  ArrayMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    if (name_len > (1u << 20))
      throw FormatError(path + ": implausible name length at byte " +
                        std::to_string(r.offset() - 4));
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    std::uint32_t rank = r.u32();
    if (rank > 8)
      throw FormatError(path + ": implausible rank at byte " + std::to_string(r.offset() - 4));
    NamedArray arr;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint32_t ext = r.u32();
      if (ext == 0)
        throw FormatError(path + ": zero extent at byte " + std::to_string(r.offset() - 4));
      arr.shape.push_back(static_cast<int>(ext));
      numel *= ext;
    }
    arr.data.resize(numel);
    r.read(arr.data.data(), numel * 4);
    out.emplace(std::move(name), std::move(arr));
  }
  return out;
}

}  // namespace declab
