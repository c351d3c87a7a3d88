#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctxfuse/nn.hpp"

namespace ctxfuse {

// FNV-1a over raw bytes; also the parameter/content hash used when two runs
// must prove their tensors are identical (or deliberately different).
std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

// hash of a named parameter list: names, shapes, and exact value bits
std::uint64_t hash_params(const NamedParams& params);

// A flat little-endian container: named f64 sections (tensors, moment
// buffers), named u64 scalars (step counters, seeds), and named text blobs
// (config fingerprints). Keys are kept sorted, so writing a read-back
// archive reproduces the file byte for byte. A checksum trails the payload;
// loading verifies it and rejects truncated or edited files.
struct Archive {
  std::map<std::string, std::vector<double>> sections;
  std::map<std::string, std::uint64_t> scalars;
  std::map<std::string, std::string> texts;

  bool operator==(const Archive&) const = default;
};

std::vector<std::uint8_t> encode_archive(const Archive& a);
Archive decode_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const std::string& path, const Archive& a);
Archive read_archive(const std::string& path);

// tensor <-> section helpers; loading requires exact name and size agreement
void pack_params(const NamedParams& params, Archive& a, const std::string& prefix = "");
void unpack_params(const Archive& a, NamedParams& params, const std::string& prefix = "");

}  // namespace ctxfuse
