#include "anncache/qkv_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "anncache/errors.hpp"

namespace anncache {

namespace {

constexpr std::array<char, 4> kMagic = {'Q', 'K', 'V', '1'};

std::uint32_t read_u32_le(std::istream& in, const std::string& name, const char* what) {
    std::array<unsigned char, 4> buf{};
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!in) {
        throw IoError(name + ": truncated header while reading " + what);
    }
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const std::array<unsigned char, 4> buf = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff),
    };
    out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

static_assert(std::endian::native == std::endian::little,
              "QKV1 payload reads assume a little-endian host");

}  // namespace

Matrix read_qkv1(std::istream& in, const std::string& name) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw IoError(name + ": bad magic, not a QKV1 file");
    }
    const std::uint32_t rank = read_u32_le(in, name, "rank");
    if (rank != 2) {
        throw IoError(name + ": unsupported rank " + std::to_string(rank) + " (expected 2)");
    }
    const std::uint32_t rows = read_u32_le(in, name, "rows");
    const std::uint32_t cols = read_u32_le(in, name, "cols");
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count > std::numeric_limits<std::uint32_t>::max()) {
        throw IoError(name + ": dimensions overflow");
    }

    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(float)) {
        throw IoError(name + ": truncated payload (expected " + std::to_string(count) +
                      " values)");
    }
    in.peek();
    if (!in.eof()) {
        throw IoError(name + ": trailing bytes after payload");
    }

    Matrix m(rows, cols, std::move(data));
    if (!m.all_finite()) {
        throw IoError(name + ": payload contains non-finite values");
    }
    return m;
}

Matrix read_qkv1_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(path.string() + ": cannot open for reading");
    }
    return read_qkv1(in, path.string());
}

void write_qkv1(std::ostream& out, const Matrix& m) {
    out.write(kMagic.data(), kMagic.size());
    write_u32_le(out, 2);
    write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(float)));
}

void write_qkv1_file(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(path.string() + ": cannot open for writing");
    }
    write_qkv1(out, m);
    if (!out) {
        throw IoError(path.string() + ": write failed");
    }
}

}  // namespace anncache
