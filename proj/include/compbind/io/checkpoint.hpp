#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "compbind/errors.hpp"
#include "compbind/numkit/tensor.hpp"

namespace compbind::io {

// Named tensors in the repo-wide "CKPT" layout (little-endian):
//   magic "CKPT", u32 version, u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 payload
// Entries are written in name order so equal contents give equal bytes.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, Tensor t);
  void put_scalar(const std::string& name, double value);
  void put_matrix(const std::string& name, const MatF& m);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  MatF get_matrix(const std::string& name) const;

  const std::map<std::string, Tensor>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint&) const = default;

 private:
  std::map<std::string, Tensor> entries_;
};

// Stores every parameter of `params` (float) under prefix + visit name.
template <typename P>
void put_params(Checkpoint& ck, const std::string& prefix, P params) {
  params.visit([&](const std::string& name, MatF& m) { ck.put_matrix(prefix + name, m); }, "");
}

// Overwrites every parameter of `params` from the checkpoint; shapes must match.
template <typename P>
void get_params(const Checkpoint& ck, const std::string& prefix, P& params);

// FNV-1a 64-bit, rendered as 16 hex digits.
std::string fnv1a_hex(const void* data, std::size_t size);
std::string file_hash(const std::filesystem::path& path);

template <typename P>
void get_params(const Checkpoint& ck, const std::string& prefix, P& params) {
  params.visit(
      [&](const std::string& name, MatF& m) {
        MatF loaded = ck.get_matrix(prefix + name);
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
          throw ValidationError("checkpoint entry " + prefix + name + " has the wrong shape");
        }
        m = std::move(loaded);
      },
      "");
}

}  // namespace compbind::io
