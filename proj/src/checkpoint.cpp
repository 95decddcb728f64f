#include "relprobe/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "relprobe/binio.hpp"
#include "relprobe/error.hpp"

namespace relprobe {

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  binio::write_magic(out, "RPCK");
  binio::write_uint<std::uint32_t>(out, kCheckpointVersion);
  binio::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::uint64_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) throw Error("checkpoint tensor " + t.name + ": data length does not match dims");
    binio::write_string(out, t.name);
    binio::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) binio::write_uint<std::uint64_t>(out, d);
    for (float x : t.data) binio::write_f32(out, x);
  }
  out.write(ckpt.blob.data(), static_cast<std::streamsize>(ckpt.blob.size()));
  if (!out) throw Error("failed to write checkpoint");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(ckpt, out);
}

Checkpoint read_checkpoint(std::istream& in) {
  binio::expect_magic(in, "RPCK", "checkpoint");
  auto version = binio::read_uint<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  auto count = binio::read_uint<std::uint32_t>(in, "tensor count");
  Checkpoint ckpt;
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = binio::read_string(in, "tensor name");
    auto rank = binio::read_uint<std::uint32_t>(in, "tensor rank");
    if (rank > 8) throw Error("checkpoint tensor " + t.name + ": implausible rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(binio::read_uint<std::uint64_t>(in, "tensor dims"));
      n *= t.dims.back();
    }
    t.data.resize(n);
    for (auto& x : t.data) x = binio::read_f32(in, "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return binio::fnv1a(buf.str());
}

}  // namespace relprobe
