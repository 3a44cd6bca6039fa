#include "maunet/png_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "maunet/error.hpp"

namespace maunet {

namespace {

const std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char* type,
                  const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + crc_start,
                            static_cast<uInt>(out.size() - crc_start));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png_gray8(const std::string& path, const GrayImage& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) *
                                   static_cast<std::size_t>(image.height)) {
        throw UsageError("write_png_gray8: pixel buffer does not match " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
    }

    // raw scanlines, each prefixed with filter type 0
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(image.height) *
                (static_cast<std::size_t>(image.width) + 1));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row =
            image.pixels.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width);
        raw.insert(raw.end(), row, row + image.width);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
        Z_OK) {
        throw IoError("write_png_gray8: deflate failed for " + path);
    }
    compressed.resize(bound);

    std::vector<std::uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace

    std::vector<std::uint8_t> file(kSignature, kSignature + 8);
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", compressed);
    append_chunk(file, "IEND", {});

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("write_png_gray8: cannot open " + path + " for writing");
    if (std::fwrite(file.data(), 1, file.size(), f.get()) != file.size()) {
        throw IoError("write_png_gray8: short write to " + path);
    }
}

GrayImage read_png_gray8(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("read_png_gray8: cannot open " + path);
    std::fseek(f.get(), 0, SEEK_END);
    const long fsize = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    if (fsize < 8) throw DataError("read_png_gray8: " + path + " is not a PNG (too short)");
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(fsize));
    if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size()) {
        throw IoError("read_png_gray8: short read from " + path);
    }
    if (std::memcmp(buf.data(), kSignature, 8) != 0) {
        throw DataError("read_png_gray8: " + path + " is not a PNG (bad signature)");
    }

    GrayImage image;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    std::size_t pos = 8;
    while (pos + 12 <= buf.size() && !saw_iend) {
        const std::uint32_t len = get_u32_be(buf.data() + pos);
        if (pos + 12 + len > buf.size()) {
            throw DataError("read_png_gray8: " + path + " is truncated");
        }
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const std::uint8_t* data = buf.data() + pos + 8;
        const std::uint32_t stored_crc = get_u32_be(buf.data() + pos + 8 + len);
        const uLong crc =
            crc32(crc32(0L, nullptr, 0), buf.data() + pos + 4, static_cast<uInt>(len + 4));
        if (static_cast<std::uint32_t>(crc) != stored_crc) {
            throw DataError("read_png_gray8: " + path + " has a corrupt chunk (CRC mismatch)");
        }

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("read_png_gray8: " + path + " has a malformed IHDR");
            image.width = static_cast<int>(get_u32_be(data));
            image.height = static_cast<int>(get_u32_be(data + 4));
            const int bit_depth = data[8], color_type = data[9], interlace = data[12];
            if (bit_depth != 8 || color_type != 0) {
                throw DataError("read_png_gray8: " + path + " is not 8-bit grayscale (depth " +
                                std::to_string(bit_depth) + ", color type " +
                                std::to_string(color_type) + ")");
            }
            if (interlace != 0) {
                throw DataError("read_png_gray8: " + path + " is interlaced (unsupported)");
            }
            if (image.width <= 0 || image.height <= 0) {
                throw DataError("read_png_gray8: " + path + " has invalid dimensions");
            }
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty()) {
        throw DataError("read_png_gray8: " + path + " is missing required chunks");
    }

    const std::size_t stride = static_cast<std::size_t>(image.width) + 1;
    const std::size_t raw_size = stride * static_cast<std::size_t>(image.height);
    std::vector<std::uint8_t> raw(raw_size);
    uLongf dest_len = static_cast<uLongf>(raw_size);
    const int rc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || dest_len != raw_size) {
        throw DataError("read_png_gray8: " + path + " has a corrupt image stream");
    }

    image.pixels.assign(static_cast<std::size_t>(image.width) *
                            static_cast<std::size_t>(image.height),
                        0);
    std::vector<std::uint8_t> prior(static_cast<std::size_t>(image.width), 0);
    for (int y = 0; y < image.height; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y) * stride];
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * stride + 1;
        std::uint8_t* dst =
            image.pixels.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width);
        for (int x = 0; x < image.width; ++x) {
            const int left = x > 0 ? dst[x - 1] : 0;
            const int up = prior[static_cast<std::size_t>(x)];
            const int up_left = x > 0 ? prior[static_cast<std::size_t>(x - 1)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, up_left); break;
                default:
                    throw DataError("read_png_gray8: " + path + " uses unknown filter " +
                                    std::to_string(filter));
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::memcpy(prior.data(), dst, static_cast<std::size_t>(image.width));
    }
    return image;
}

}  // namespace maunet
