#include "fastvar/fvtm.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace fastvar {

namespace {

static_assert(std::endian::native == std::endian::little, "FVTM I/O assumes a little-endian host");
static_assert(sizeof(Real) == 4);

constexpr char kMagic[4] = {'F', 'V', 'T', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::size_t value) {
    if (value > 0xFFFFFFFFULL) throw ArgumentError("dimension does not fit in 32 bits");
    const auto v = static_cast<std::uint32_t>(value);
    for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[offset + static_cast<std::size_t>(i)];
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_fvtm(const TokenMap& map) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, map.h());
    put_u32(out, map.w());
    put_u32(out, map.d());
    const std::size_t header = out.size();
    out.resize(header + map.data().size() * sizeof(Real));
    std::memcpy(out.data() + header, map.data().data(), map.data().size() * sizeof(Real));
    return out;
}

TokenMap decode_fvtm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError(0, "bad magic, expected FVTM");
    std::size_t dims[3];
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t offset = 4 + 4 * i;
        if (bytes.size() < offset + 4) throw ParseError(offset, "header truncated");
        dims[i] = get_u32(bytes, offset);
        if (dims[i] == 0) throw ParseError(offset, "dimension must be >= 1");
    }
    const std::size_t plane = dims[0] * dims[1];
    if (plane > (bytes.size() / sizeof(Real)) / dims[2]) {
        throw ParseError(bytes.size(), "payload truncated: header declares more values than the file holds");
    }
    const std::size_t count = plane * dims[2];
    const std::size_t expected = kFvtmHeaderBytes + count * sizeof(Real);
    if (bytes.size() < expected) {
        throw ParseError(bytes.size(), "payload truncated: expected " + std::to_string(expected) + " bytes");
    }
    if (bytes.size() > expected) throw ParseError(expected, "trailing bytes after payload");
    std::vector<Real> data(count);
    std::memcpy(data.data(), bytes.data() + kFvtmHeaderBytes, count * sizeof(Real));
    try {
        return TokenMap(dims[0], dims[1], dims[2], std::move(data));
    } catch (const ArgumentError& e) {
        throw ParseError(kFvtmHeaderBytes, e.what());
    }
}

void write_fvtm(const TokenMap& map, const std::filesystem::path& path) {
    const auto bytes = encode_fvtm(map);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

TokenMap read_fvtm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_fvtm(bytes);
}

}  // namespace fastvar
