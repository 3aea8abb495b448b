#pragma once

// Parameter checkpoint container.
//
// Byte layout (all integers little-endian):
//   magic      8 bytes  "LCSCKPT\0"
//   version    u32      (currently 1)
//   meta_len   u32, then meta_len bytes of UTF-8 JSON metadata
//   count      u32
//   count x {
//     name_len u32, name bytes
//     dtype    u8       (0 = f64, 1 = f32 tag; values are always stored as f64)
//     rank     u32, then rank x u64 dims
//     values   product(dims) x f64
//   }
// Entries are written in lexicographic name order, so identical contents
// always produce identical bytes.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "lcsurv/tensor.hpp"

namespace lcsurv {

inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
    std::string metadata = "{}";
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lcsurv
