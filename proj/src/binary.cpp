#include "sadvae/binary.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

namespace sadvae::binary {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

void expect_header(Reader& in, std::string_view magic, const std::string& what)
{
    // A short file whose bytes agree with the magic so far is a cut-off copy
    // of the right format; anything else is the wrong format.
    const std::size_t have = std::min(in.remaining(), magic.size());
    const std::string_view head = in.peek(have);
    if (head != magic.substr(0, have)) {
        throw FormatError(what + ": bad magic, expected " + std::string(magic));
    }
    if (in.remaining() < magic.size() + 4) {
        throw LengthError(what + ": truncated header");
    }
    if (in.bytes(magic.size()) != magic) {
        throw FormatError(what + ": bad magic, expected " + std::string(magic));
    }
    const auto version = in.u32();
    if (version != 1) {
        throw FormatError(what + ": unsupported version " + std::to_string(version));
    }
}

} // namespace sadvae::binary
