#include "ctxfuse/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ctxfuse {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'F', 'U', 'S', 'E', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("archive: truncated file");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_params(const NamedParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params) {
    h = fnv1a64(name.data(), name.size(), h);
    for (std::size_t e : t.shape()) h = fnv1a64(&e, sizeof(e), h);
    h = fnv1a64(t.data(), t.size() * sizeof(double), h);
  }
  return h;
}

std::vector<std::uint8_t> encode_archive(const Archive& a) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u64(out, 1);  // format version

  put_u64(out, a.scalars.size());
  for (const auto& [name, v] : a.scalars) {
    put_str(out, name);
    put_u64(out, v);
  }
  put_u64(out, a.texts.size());
  for (const auto& [name, v] : a.texts) {
    put_str(out, name);
    put_str(out, v);
  }
  put_u64(out, a.sections.size());
  for (const auto& [name, v] : a.sections) {
    put_str(out, name);
    put_u64(out, v.size());
    for (double x : v) put_f64(out, x);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  return out;
}

Archive decode_archive(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("archive: bad magic");
  const std::uint64_t stored_sum = [&] {
    Cursor tail{bytes, bytes.size() - 8};
    return tail.u64();
  }();
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored_sum)
    throw std::runtime_error("archive: checksum mismatch");

  Cursor c{bytes, 8};
  const std::uint64_t version = c.u64();
  if (version != 1)
    throw std::runtime_error("archive: unsupported format version " + std::to_string(version));

  Archive a;
  for (std::uint64_t i = 0, n = c.u64(); i < n; ++i) {
    std::string name = c.str();
    a.scalars[name] = c.u64();
  }
  for (std::uint64_t i = 0, n = c.u64(); i < n; ++i) {
    std::string name = c.str();
    a.texts[name] = c.str();
  }
  for (std::uint64_t i = 0, n = c.u64(); i < n; ++i) {
    std::string name = c.str();
    const std::uint64_t count = c.u64();
    std::vector<double> v(count);
    for (auto& x : v) x = c.f64();
    a.sections[name] = std::move(v);
  }
  if (c.pos != bytes.size() - 8) throw std::runtime_error("archive: trailing bytes");
  return a;
}

void write_archive(const std::string& path, const Archive& a) {
  const auto bytes = encode_archive(a);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("archive: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("archive: write to '" + path + "' failed");
}

Archive read_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("archive: cannot open '" + path + "'");
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw std::runtime_error("archive: read from '" + path + "' failed");
  return decode_archive(bytes);
}

void pack_params(const NamedParams& params, Archive& a, const std::string& prefix) {
  for (const auto& [name, t] : params) {
    const std::string key = prefix + name;
    if (a.sections.count(key)) throw std::runtime_error("archive: duplicate section '" + key + "'");
    a.sections[key] = t.values();
  }
}

void unpack_params(const Archive& a, NamedParams& params, const std::string& prefix) {
  for (auto& [name, t] : params) {
    const std::string key = prefix + name;
    auto it = a.sections.find(key);
    if (it == a.sections.end()) throw std::runtime_error("archive: missing section '" + key + "'");
    if (it->second.size() != t.size())
      throw std::runtime_error("archive: section '" + key + "' holds " +
                               std::to_string(it->second.size()) + " values, tensor needs " +
                               std::to_string(t.size()));
    std::memcpy(t.data(), it->second.data(), t.size() * sizeof(double));
  }
}

}  // namespace ctxfuse
