#include "rxnpt/checkpoint.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

namespace rxnpt {
namespace {

constexpr char kMagic[4] = {'R', 'P', 'T', '1'};

constexpr const char *dtype_name() { return sizeof(Real) == 8 ? "f64" : "f32"; }

template <typename T>
T byteswap_value(T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

template <typename T>
void append_le(std::string &out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  const char *p = reinterpret_cast<const char *>(&v);
  out.append(p, sizeof(T));
}

template <typename T>
T read_le(const std::string &in, std::size_t &offset) {
  if (offset + sizeof(T) > in.size()) throw CheckpointError("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  offset += sizeof(T);
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  return v;
}

}  // namespace

const Tensor *Checkpoint::find(const std::string &name) const {
  for (const auto &[n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint &ckpt) {
  nlohmann::json header;
  header["dtype"] = dtype_name();
  header["config_hash"] = ckpt.config_hash;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto &[name, t] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  append_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto &entry : ckpt.tensors) {
    for (Real v : entry.second.values()) append_le(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string &bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint: missing RPT1 magic");
  }
  std::size_t offset = 4;
  const auto header_len = read_le<std::uint64_t>(bytes, offset);
  if (offset + header_len > bytes.size()) throw CheckpointError("checkpoint header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(offset, header_len));
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  offset += header_len;
  if (header.value("dtype", "") != dtype_name()) {
    throw CheckpointError(fmt::format("checkpoint dtype '{}' does not match this build ({})",
                                      header.value("dtype", ""), dtype_name()));
  }
  Checkpoint ckpt;
  ckpt.config_hash = header.value("config_hash", "");
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto &entry : header.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor t(shape);
    for (Real &v : t.values()) v = read_le<Real>(bytes, offset);
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (offset != bytes.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(fmt::format("cannot open '{}' for writing", path.string()));
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(fmt::format("failed writing '{}'", path.string()));
}

Checkpoint read_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void store_parameters(const ParameterSet &params, Checkpoint &ckpt, bool with_optimizer) {
  nlohmann::json steps = nlohmann::json::object();
  for (const Parameter &p : params) {
    ckpt.tensors.emplace_back(p.name, p.value);
    if (with_optimizer) {
      ckpt.tensors.emplace_back("adamw.m/" + p.name, p.first_moment);
      ckpt.tensors.emplace_back("adamw.v/" + p.name, p.second_moment);
      steps[p.name] = p.step;
    }
  }
  if (with_optimizer) ckpt.meta["adamw_steps"] = steps;
}

void load_parameters(const Checkpoint &ckpt, ParameterSet &params, bool with_optimizer,
                     const std::string &prefix) {
  auto fetch = [&](const std::string &name, const Tensor &like) -> const Tensor & {
    const Tensor *t = ckpt.find(name);
    if (!t) throw CheckpointError(fmt::format("checkpoint has no tensor '{}'", name));
    if (t->shape() != like.shape()) {
      throw CheckpointError(fmt::format("tensor '{}' has shape {} in checkpoint, expected {}",
                                        name, shape_string(t->shape()),
                                        shape_string(like.shape())));
    }
    return *t;
  };
  for (Parameter &p : params) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    p.value = fetch(p.name, p.value);
    if (with_optimizer) {
      p.first_moment = fetch("adamw.m/" + p.name, p.value);
      p.second_moment = fetch("adamw.v/" + p.name, p.value);
      p.step = ckpt.meta.at("adamw_steps").at(p.name).get<std::int64_t>();
    }
  }
}

}  // namespace rxnpt
