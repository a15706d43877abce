#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "wenlex/nn.hpp"
#include "wenlex/optim.hpp"

namespace wenlex {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
  Shape shape;
  std::vector<double> data;
};

/// Ordered name -> array table. Serialized as "WNLX", u16 version, u32 entry
/// count, then per entry: u32 name length, utf-8 name, u32 rank, u64 extents,
/// f64 values. All integers and floats little-endian.
using Checkpoint = std::map<std::string, CheckpointEntry>;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint is truncated");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<T>(u);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out = "WNLX";
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.size()));
  for (const auto& [name, e] : ck) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : e.data) detail::put_le<double>(out, v);
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& in) {
  if (in.size() < 10 || in.compare(0, 4, "WNLX") != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint16_t>(in, pos);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(in, pos);
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = detail::get_le<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw CheckpointError("checkpoint is truncated");
    std::string name = in.substr(pos, len);
    pos += len;
    CheckpointEntry e;
    const auto rank = detail::get_le<std::uint32_t>(in, pos);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(detail::get_le<std::uint64_t>(in, pos));
    const std::size_t n = numel_of(e.shape);
    e.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.data[i] = detail::get_le<double>(in, pos);
    ck.emplace(std::move(name), std::move(e));
  }
  if (pos != in.size()) throw CheckpointError("trailing bytes after checkpoint table");
  return ck;
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const std::filesystem::path& p, const Checkpoint& ck) { write_file(p, serialize_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::filesystem::path& p) { return parse_checkpoint(read_file(p)); }

inline void put_tensors(Checkpoint& ck, const ParamList& ps) {
  for (const auto& p : ps) ck[p.name] = {p.value.shape(), p.value.vec()};
}

/// Copies checkpoint values into existing tensors of matching name and shape.
inline void get_tensors(const Checkpoint& ck, const ParamList& ps) {
  for (auto p : ps) {
    auto it = ck.find(p.name);
    if (it == ck.end()) throw CheckpointError("checkpoint has no entry '" + p.name + "'");
    if (it->second.shape != p.value.shape()) {
      throw CheckpointError("shape mismatch for '" + p.name + "': " + shape_str(it->second.shape) + " vs " +
                            shape_str(p.value.shape()));
    }
    std::copy(it->second.data.begin(), it->second.data.end(), p.value.mutable_data().begin());
  }
}

inline void put_optimizer(Checkpoint& ck, const std::string& prefix, const AdamWState& st) {
  ck[prefix + ".step"] = {{1}, {static_cast<double>(st.step)}};
  for (std::size_t i = 0; i < st.moments.size(); ++i) {
    const auto n = st.moments[i].m.size();
    if (n == 0) continue;
    ck[prefix + ".m." + std::to_string(i)] = {{n}, st.moments[i].m};
    ck[prefix + ".v." + std::to_string(i)] = {{n}, st.moments[i].v};
  }
}

inline void get_optimizer(const Checkpoint& ck, const std::string& prefix, AdamWState& st, const std::vector<Tensor>& params) {
  auto it = ck.find(prefix + ".step");
  if (it == ck.end()) throw CheckpointError("checkpoint has no optimizer state '" + prefix + "'");
  st.step = static_cast<long>(it->second.data.at(0));
  st.moments.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = ck.find(prefix + ".m." + std::to_string(i));
    auto v = ck.find(prefix + ".v." + std::to_string(i));
    if (m == ck.end() || v == ck.end()) throw CheckpointError("optimizer moments missing for parameter " + std::to_string(i));
    st.moments.push_back({m->second.data, v->second.data});
  }
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

/// Hash of the names, shapes and values of a parameter list.
inline std::string params_hash(const ParamList& ps) {
  Checkpoint ck;
  put_tensors(ck, ps);
  return sha256_hex(serialize_checkpoint(ck));
}

}  // namespace wenlex
