#include "sadvae/tensor_file.hpp"

#include "sadvae/binary.hpp"

namespace sadvae {

std::string encode_tensor_file(std::string_view magic, const std::vector<TensorRecord>& tensors)
{
    binary::Writer out;
    out.bytes(magic);
    out.u32(1);
    out.u64(tensors.size());
    for (const auto& t : tensors) {
        std::uint64_t count = 1;
        for (const auto d : t.shape) {
            count *= d;
        }
        if (count != t.data.size()) {
            throw ShapeError("tensor '" + t.name + "' shape does not match its payload");
        }
        out.u32(static_cast<std::uint32_t>(t.name.size()));
        out.bytes(t.name);
        out.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (const auto d : t.shape) {
            out.u64(d);
        }
        for (const float v : t.data) {
            out.f32(v);
        }
    }
    return out.data();
}

std::vector<TensorRecord> decode_tensor_file(std::string_view magic, std::string_view bytes, const std::string& what)
{
    binary::Reader in(bytes, what);
    binary::expect_header(in, magic, what);
    const std::uint64_t n = in.u64();
    std::vector<TensorRecord> tensors;
    for (std::uint64_t i = 0; i < n; ++i) {
        TensorRecord t;
        const auto name_len = in.u32();
        t.name = std::string(in.bytes(name_len));
        const auto rank = in.u32();
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = in.u64();
            if (dim != 0 && count > (UINT64_MAX / 4) / dim) {
                throw FormatError(what + ": tensor '" + t.name + "' shape overflow");
            }
            t.shape.push_back(dim);
            count *= dim;
        }
        in.need(count * 4);
        t.data.resize(count);
        for (auto& v : t.data) {
            v = in.f32();
        }
        tensors.push_back(std::move(t));
    }
    if (in.remaining() != 0) {
        throw FormatError(what + ": trailing bytes after last tensor");
    }
    return tensors;
}

void write_tensor_file(const std::filesystem::path& path, std::string_view magic,
                       const std::vector<TensorRecord>& tensors)
{
    binary::write_file(path, encode_tensor_file(magic, tensors));
}

std::vector<TensorRecord> read_tensor_file(const std::filesystem::path& path, std::string_view magic)
{
    return decode_tensor_file(magic, binary::read_file(path), "checkpoint " + path.string());
}

const TensorRecord& find_tensor(const std::vector<TensorRecord>& tensors, std::string_view name)
{
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t;
        }
    }
    throw FormatError("checkpoint is missing tensor '" + std::string(name) + "'");
}

} // namespace sadvae
