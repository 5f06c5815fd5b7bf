#include "revnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace revnet::ckpt {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_file(const std::string& path, std::uint8_t precision,
                const std::vector<Blob>& blobs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for write");
  out.write(kMagic, 8);
  put_u32(out, 1);
  out.put(static_cast<char>(precision));
  put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const Blob& b : blobs) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    for (std::uint64_t d : b.dims) put_u64(out, d);
    out.write(reinterpret_cast<const char*>(b.bytes.data()),
              static_cast<std::streamsize>(b.bytes.size()));
  }
  if (!out) throw IoError("checkpoint: short write to '" + path + "'");
}

std::vector<Blob> read_file(const std::string& path,
                            std::uint8_t& precision_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in '" + path + "'");
  const std::uint32_t version = get_u32(in);
  if (version != 1)
    throw IoError("checkpoint: unsupported version " +
                  std::to_string(version));
  precision_out = static_cast<std::uint8_t>(in.get());
  if (precision_out != 4 && precision_out != 8)
    throw IoError("checkpoint: bad precision byte " +
                  std::to_string(precision_out));
  const std::uint32_t count = get_u32(in);
  std::vector<Blob> blobs(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob& b = blobs[i];
    const std::uint32_t name_len = get_u32(in);
    b.name.resize(name_len);
    in.read(b.name.data(), name_len);
    std::uint64_t numel = 1;
    for (auto& d : b.dims) {
      d = get_u64(in);
      numel *= d;
    }
    b.bytes.resize(numel * precision_out);
    in.read(reinterpret_cast<char*>(b.bytes.data()),
            static_cast<std::streamsize>(b.bytes.size()));
    if (!in)
      throw IoError("checkpoint: truncated record " + std::to_string(i) +
                    " ('" + b.name + "') in '" + path + "'");
  }
  return blobs;
}

}  // namespace revnet::ckpt
