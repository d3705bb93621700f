#include "declab/encoder.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "declab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "store I/O assumes a little-endian host");

namespace declab {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_all(std::FILE* f, const void* src, size_t n, const std::string& path) {
  if (std::fwrite(src, 1, n, f) != n) throw FormatError(path + ": short write");
}

}  // namespace

void save_store(const EmbeddingStore& store, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError(path + ": cannot open for writing");
  write_all(f.get(), "LITE", 4, path);
  std::uint32_t version = kStoreVersion;
  write_all(f.get(), &version, 4, path);
  std::uint64_t count = store.size();
  write_all(f.get(), &count, 8, path);
  for (const auto& [id, img] : store) {
    if (id.size() > 0xffff) throw ContractError(path + ": image id too long");
    std::uint16_t id_len = static_cast<std::uint16_t>(id.size());
    write_all(f.get(), &id_len, 2, path);
    write_all(f.get(), id.data(), id.size(), path);
    std::uint32_t n = static_cast<std::uint32_t>(img.n);
    std::uint32_t d = static_cast<std::uint32_t>(img.d);
    write_all(f.get(), &n, 4, path);
    write_all(f.get(), &d, 4, path);
    if (img.tokens.size() != static_cast<size_t>(img.n) * static_cast<size_t>(img.d))
      throw ContractError(path + ": image '" + id + "' token count mismatch");
    write_all(f.get(), img.tokens.data(), img.tokens.size() * 4, path);
  }
}

EmbeddingStore load_store(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError(path + ": cannot open");
  long offset = 0;
  auto read = [&](void* dst, size_t n) {
    if (std::fread(dst, 1, n, f.get()) != n)
      throw FormatError(path + ": truncated at byte " + std::to_string(offset));
    offset += static_cast<long>(n);
  };
  char magic[4];
  read(magic, 4);
  if (std::memcmp(magic, "LITE", 4) != 0) throw FormatError(path + ": bad magic at byte 0");
  std::uint32_t version;
  read(&version, 4);
  if (version != kStoreVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
  std::uint64_t count;
  read(&count, 8);
  EmbeddingStore out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint16_t id_len;
    read(&id_len, 2);
    std::string id(id_len, '\0');
    read(id.data(), id_len);
    std::uint32_t n, d;
    read(&n, 4);
    read(&d, 4);
    if (n == 0 || d == 0)
      throw FormatError(path + ": zero dims at byte " + std::to_string(offset - 8));
    EncodedImage img;
    img.n = static_cast<int>(n);
    img.d = static_cast<int>(d);
    img.tokens.resize(static_cast<size_t>(n) * d);
    read(img.tokens.data(), img.tokens.size() * 4);
    out.emplace(std::move(id), std::move(img));
  }
  return out;
}

std::uint64_t store_payload_bytes(const EmbeddingStore& store) {
  std::uint64_t bytes = 0;
  for (const auto& [id, img] : store)
    bytes += 4ull * static_cast<std::uint64_t>(img.n) * static_cast<std::uint64_t>(img.d);
  return bytes;
}

EmbeddingStore compress_store(const EmbeddingStore& store, CompressionParamsT<float>& params,
                              int heads) {
  EmbeddingStore out;
  for (const auto& [id, img] : store) {
    TensorT<float> tokens = to_tensor<float>(img);
    switch (params.spec.mode) {
      case CompressionSpec::Mode::kNone:
        out.emplace(id, img);
        break;
      case CompressionSpec::Mode::kMapPool:
        out.emplace(id, from_tensor(map_pool<float>(nullptr, tokens, params.pool, heads)));
        break;
      case CompressionSpec::Mode::kBottleneck:
        out.emplace(id,
                    from_tensor(matmul<float>(nullptr, tokens, params.bottleneck.down)));
        break;
    }
  }
  return out;
}

EncodedImage decompress_image(const EncodedImage& img, CompressionParamsT<float>& params) {
  if (params.spec.mode != CompressionSpec::Mode::kBottleneck) return img;
  TensorT<float> stored = to_tensor<float>(img);
  return from_tensor(matmul<float>(nullptr, stored, params.bottleneck.up));
}

}  // namespace declab
