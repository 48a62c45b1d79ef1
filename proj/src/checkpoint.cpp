#include "sinogan/checkpoint.hpp"

#include <sstream>

#include "sinogan/errors.hpp"

namespace sinogan {

void ModelCheckpoint::set(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw ContractError("checkpoint metadata key/value contains a reserved character: " + key);
  }
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = value;
      return;
    }
  }
  metadata.emplace_back(key, value);
}

std::optional<std::string> ModelCheckpoint::get(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& ModelCheckpoint::require(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  throw FormatError("checkpoint metadata is missing '" + key + "'");
}

const Tensor* ModelCheckpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

io::Bytes encode_checkpoint(const ModelCheckpoint& ckpt) {
  io::Bytes out;
  out.insert(out.end(), {'C', 'K', 'P', 'T'});
  io::put_u32(out, ckpt.version);
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) meta += k + "=" + v + "\n";
  io::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    io::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    io::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.value.values()) io::put_f64(out, v);
  }
  return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> data, const std::string& what) {
  io::Reader r(data, what);
  r.expect_magic("CKPT");
  ModelCheckpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  std::istringstream meta(r.bytes(r.u32()));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(what + ": malformed metadata line '" + line + "'");
    ckpt.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (r.remaining() / 8 < n) throw FormatError(what + ": truncated tensor '" + t.name + "'");
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    t.value = Tensor(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }
  r.expect_end();
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint) {
  io::write_file(path, encode_checkpoint(checkpoint));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace sinogan
