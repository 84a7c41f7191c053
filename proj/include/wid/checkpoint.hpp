// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "wid/models.hpp"

namespace wid {

// Checkpoint container: magic, a small key=value manifest, then every named
// parameter AND BatchNorm running buffer as a raw little-endian array. Values
// are stored at the network's native precision, so save -> load round-trips
// bit-identically.
//
//   bytes 0..7   "WIDCKPT\x01"
//   u32          manifest length, then that many bytes of "key=value\n" lines
//   u32          array count
//   per array:   u32 name length, name bytes, u8 element size (4|8),
//                u32 rank, u64 dims[rank], raw element payload

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

inline constexpr char kCkptMagic[8] = {'W', 'I', 'D', 'C', 'K', 'P', 'T', '\x01'};

namespace detail {

template <typename U>
void put_raw(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get_raw(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U)))
    throw ParseError(path + ": truncated checkpoint");
  return v;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_state(Network<T>& net) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  net.visit_params([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
  net.visit_buffers([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
  return out;
}

inline std::map<std::string, std::string> read_manifest_block(std::istream& f,
                                                              const std::string& path) {
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw ParseError(path + ": not a checkpoint file (bad magic)");
  const auto mlen = get_raw<std::uint32_t>(f, path);
  std::string mtext(mlen, '\0');
  if (!f.read(mtext.data(), mlen)) throw ParseError(path + ": truncated manifest");
  std::map<std::string, std::string> manifest;
  std::size_t pos = 0;
  while (pos < mtext.size()) {
    const std::size_t nl = mtext.find('\n', pos);
    const std::string line = mtext.substr(pos, nl - pos);
    pos = (nl == std::string::npos) ? mtext.size() : nl + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path + ": manifest line without '='");
    manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return manifest;
}

}  // namespace detail

// Manifest only — lets a caller discover the stored architecture before
// constructing the network the arrays will be loaded into.
inline std::map<std::string, std::string> read_checkpoint_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  return detail::read_manifest_block(f, path);
}

template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net,
                     const std::map<std::string, std::string>& manifest = {}) {
  std::string mtext;
  for (const auto& [k, v] : manifest) {
    if (k.empty() || k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw ValueError("checkpoint manifest entries must be single-line and '='-free keys: '" +
                       k + "'");
    mtext += k + "=" + v + "\n";
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(kCkptMagic, 8);
  detail::put_raw<std::uint32_t>(f, static_cast<std::uint32_t>(mtext.size()));
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

  auto state = detail::named_state(net);
  detail::put_raw<std::uint32_t>(f, static_cast<std::uint32_t>(state.size()));
  for (auto& [name, t] : state) {
    detail::put_raw<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_raw<std::uint8_t>(f, static_cast<std::uint8_t>(sizeof(T)));
    detail::put_raw<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d = 0; d < t.rank(); ++d)
      detail::put_raw<std::uint64_t>(f, static_cast<std::uint64_t>(t.dim(d)));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(t.numel())));
  }
  f.flush();
  if (!f) throw IoError("short write: " + path);
}

// Loads into an already-constructed network; the stored array set must match
// the network's named state exactly (names, shapes, element width).
template <typename T>
std::map<std::string, std::string> load_checkpoint(const std::string& path, Network<T>& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  const std::map<std::string, std::string> manifest = detail::read_manifest_block(f, path);

  auto state = detail::named_state(net);
  std::map<std::string, Tensor<T>*> by_name;
  for (auto& [name, t] : state) by_name[name] = &t;

  const auto count = detail::get_raw<std::uint32_t>(f, path);
  if (count != state.size())
    throw ParseError(path + ": checkpoint holds " + std::to_string(count) +
                     " arrays, network has " + std::to_string(state.size()));
  for (std::uint32_t a = 0; a < count; ++a) {
    const auto nlen = detail::get_raw<std::uint32_t>(f, path);
    std::string name(nlen, '\0');
    if (!f.read(name.data(), nlen)) throw ParseError(path + ": truncated array name");
    const auto esize = detail::get_raw<std::uint8_t>(f, path);
    if (esize != sizeof(T))
      throw ConfigError(path + ": array '" + name + "' stores " + std::to_string(int(esize)) +
                        "-byte elements, network uses " + std::to_string(sizeof(T)));
    const auto rank = detail::get_raw<std::uint32_t>(f, path);
    Shape dims;
    for (std::uint32_t d = 0; d < rank; ++d)
      dims.push_back(static_cast<std::int64_t>(detail::get_raw<std::uint64_t>(f, path)));

    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path + ": unknown array '" + name + "'");
    Tensor<T>& dst = *it->second;
    if (dims != dst.shape())
      throw DimensionError(path + ": array '" + name + "' has shape " + shape_str(dims) +
                           ", network expects " + shape_str(dst.shape()));
    if (!f.read(reinterpret_cast<char*>(dst.data()),
                static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(dst.numel()))))
      throw ParseError(path + ": truncated payload for '" + name + "'");
    by_name.erase(it);
  }
  return manifest;
}

}  // namespace wid
