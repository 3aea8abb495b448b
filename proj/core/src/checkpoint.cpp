#include "lcsurv/checkpoint.hpp"

#include "lcsurv/error.hpp"
#include "lcsurv/io.hpp"

namespace lcsurv {

namespace {
constexpr std::string_view magic{"LCSCKPT\0", 8};
}

const Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint has no tensor named '" + name + "'");
    return it->second;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(magic);
    put_u32(out, checkpoint_version);
    put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
    out += ckpt.metadata;
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u8(out, static_cast<std::uint8_t>(t.dtype()));
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_u64(out, d);
        for (double v : t.values()) put_f64(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    ByteReader in(bytes);
    if (in.remaining() < magic.size() || in.take(magic.size()) != magic) {
        throw DataError("not a checkpoint file (bad magic)");
    }
    const auto version = in.u32();
    if (version != checkpoint_version) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.metadata = std::string(in.take(in.u32()));
    const auto count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(in.take(in.u32()));
        const auto dtype = in.u8();
        if (dtype > 1) throw DataError("checkpoint tensor '" + name + "' has unknown dtype");
        Shape shape(in.u32());
        for (auto& d : shape) d = in.u64();
        std::vector<double> values(shape_size(shape));
        for (auto& v : values) v = in.f64();
        // Values are stored exactly; the dtype tag is restored without re-rounding.
        Tensor t(std::move(shape), std::move(values));
        if (dtype == 1) t.set_dtype(Dtype::f32);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    if (!in.done()) throw DataError("trailing bytes after checkpoint payload");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw StateError("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path));
}

}  // namespace lcsurv
