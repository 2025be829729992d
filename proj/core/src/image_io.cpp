#include "priormoe/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace priormoe {

namespace {

[[noreturn]] void io_fail(const std::string& path, const std::string& msg) {
    throw std::runtime_error("image io: " + path + ": " + msg);
}

bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// ---- PNM (binary P5/P6) ----

int pnm_token(std::istream& in, std::string* comment) {
    // Skips whitespace and '#' comments, returns the next integer.
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            if (comment && comment->empty() && line.size() > 1) *comment = line.substr(1);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    int value = 0;
    in >> value;
    return value;
}

ImageU8 read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open for reading");
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        io_fail(path, "not a binary PGM/PPM file");
    }
    ImageU8 img;
    img.channels = magic[1] == '5' ? 1 : 3;
    img.width = pnm_token(in, &img.comment);
    img.height = pnm_token(in, &img.comment);
    const int maxval = pnm_token(in, &img.comment);
    if (img.width <= 0 || img.height <= 0 || maxval != 255) io_fail(path, "unsupported PNM header");
    in.get();  // single whitespace after maxval
    img.pixels.resize(static_cast<size_t>(img.width * img.height * img.channels));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) io_fail(path, "truncated pixel data");
    return img;
}

void write_pnm(const std::string& path, const ImageU8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) io_fail(path, "cannot open for writing");
    out << (img.channels == 1 ? "P5" : "P6") << "\n";
    if (!img.comment.empty()) out << "# " << img.comment << "\n";
    out << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) io_fail(path, "write failed");
}

// ---- PNG (8-bit gray / RGB / RGBA read; gray / RGB write; no interlace) ----

uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

void png_chunk(std::vector<uint8_t>& out, const char* type, const uint8_t* data, size_t n) {
    put_be32(out, static_cast<uint32_t>(n));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + n);
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_be32(out, crc);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

ImageU8 read_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open for reading");
    std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0) io_fail(path, "not a PNG file");

    ImageU8 img;
    int bit_depth = 0, color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= file.size()) {
        uint32_t len = be32(&file[pos]);
        std::string type(reinterpret_cast<char*>(&file[pos + 4]), 4);
        if (pos + 12 + len > file.size()) io_fail(path, "truncated chunk");
        const uint8_t* data = &file[pos + 8];
        if (type == "IHDR") {
            img.width = be32(data);
            img.height = be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) io_fail(path, "interlaced PNG not supported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8) io_fail(path, "only 8-bit PNG supported");
    int src_ch;
    switch (color_type) {
        case 0: src_ch = 1; break;
        case 2: src_ch = 3; break;
        case 4: src_ch = 2; break;
        case 6: src_ch = 4; break;
        default: io_fail(path, "palette PNG not supported");
    }
    const int64_t W = img.width, H = img.height;
    const size_t stride = static_cast<size_t>(W) * static_cast<size_t>(src_ch);
    std::vector<uint8_t> raw(static_cast<size_t>(H) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        io_fail(path, "IDAT inflate failed");
    }

    std::vector<uint8_t> scan(static_cast<size_t>(H) * stride);
    const int bpp = src_ch;
    for (int64_t y = 0; y < H; ++y) {
        const uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
        uint8_t* cur = &scan[static_cast<size_t>(y) * stride];
        const uint8_t* up = y > 0 ? &scan[static_cast<size_t>(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<size_t>(bpp) ? cur[x - bpp] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: io_fail(path, "bad PNG filter byte");
            }
            cur[x] = static_cast<uint8_t>(v & 0xff);
        }
    }

    // Drop alpha, keep gray/RGB.
    img.channels = (src_ch == 1 || src_ch == 2) ? 1 : 3;
    img.pixels.resize(static_cast<size_t>(W * H * img.channels));
    for (int64_t i = 0; i < W * H; ++i) {
        for (int c = 0; c < img.channels; ++c) {
            img.pixels[static_cast<size_t>(i * img.channels + c)] =
                scan[static_cast<size_t>(i) * static_cast<size_t>(src_ch) + static_cast<size_t>(c)];
        }
    }
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    const int64_t W = img.width, H = img.height;
    const int ch = img.channels;
    const size_t stride = static_cast<size_t>(W) * static_cast<size_t>(ch);
    std::vector<uint8_t> raw(static_cast<size_t>(H) * (stride + 1));
    for (int64_t y = 0; y < H; ++y) {
        raw[static_cast<size_t>(y) * (stride + 1)] = 0;  // filter: none
        std::memcpy(&raw[static_cast<size_t>(y) * (stride + 1) + 1],
                    &img.pixels[static_cast<size_t>(y) * stride], stride);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        io_fail(path, "deflate failed");
    }
    compressed.resize(bound);

    std::vector<uint8_t> out;
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    uint8_t ihdr[13];
    ihdr[0] = uint8_t(W >> 24); ihdr[1] = uint8_t(W >> 16); ihdr[2] = uint8_t(W >> 8); ihdr[3] = uint8_t(W);
    ihdr[4] = uint8_t(H >> 24); ihdr[5] = uint8_t(H >> 16); ihdr[6] = uint8_t(H >> 8); ihdr[7] = uint8_t(H);
    ihdr[8] = 8;
    ihdr[9] = ch == 1 ? 0 : 2;
    ihdr[10] = 0; ihdr[11] = 0; ihdr[12] = 0;
    png_chunk(out, "IHDR", ihdr, 13);
    if (!img.comment.empty()) {
        std::vector<uint8_t> text;
        const std::string key = "Comment";
        text.insert(text.end(), key.begin(), key.end());
        text.push_back(0);
        text.insert(text.end(), img.comment.begin(), img.comment.end());
        png_chunk(out, "tEXt", text.data(), text.size());
    }
    png_chunk(out, "IDAT", compressed.data(), compressed.size());
    png_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary);
    if (!f) io_fail(path, "cannot open for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) io_fail(path, "write failed");
}

}  // namespace

ImageU8 read_image(const std::string& path) {
    if (has_suffix(path, ".png")) return read_png(path);
    if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) return read_pnm(path);
    io_fail(path, "unsupported extension (want .ppm/.pgm/.png)");
}

void write_image(const std::string& path, const ImageU8& img) {
    if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3)) {
        io_fail(path, "invalid image dimensions");
    }
    if (img.pixels.size() != static_cast<size_t>(img.width * img.height * img.channels)) {
        io_fail(path, "pixel buffer does not match dimensions");
    }
    if (has_suffix(path, ".png")) {
        write_png(path, img);
    } else if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) {
        write_pnm(path, img);
    } else {
        io_fail(path, "unsupported extension (want .ppm/.pgm/.png)");
    }
}

Tensor image_to_tensor(const ImageU8& img) {
    const int64_t C = img.channels, H = img.height, W = img.width;
    Tensor t({C, H, W});
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t p = 0; p < H * W; ++p) {
            t[c * H * W + p] = static_cast<double>(img.pixels[static_cast<size_t>(p * C + c)]) / 255.0;
        }
    }
    return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3) throw std::invalid_argument("tensor_to_image: expected [C,H,W]");
    ImageU8 img;
    img.channels = static_cast<int>(t.dim(0));
    img.height = t.dim(1);
    img.width = t.dim(2);
    const int64_t HW = img.height * img.width;
    img.pixels.resize(static_cast<size_t>(HW * img.channels));
    for (int64_t c = 0; c < img.channels; ++c) {
        for (int64_t p = 0; p < HW; ++p) {
            double v = std::clamp(t[c * HW + p], 0.0, 1.0);
            img.pixels[static_cast<size_t>(p * img.channels + c)] =
                static_cast<uint8_t>(std::lround(v * 255.0));
        }
    }
    return img;
}

Tensor gray_to_tensor(const ImageU8& img) {
    const int64_t H = img.height, W = img.width;
    Tensor t({H, W});
    if (img.channels == 1) {
        for (int64_t p = 0; p < H * W; ++p) t[p] = static_cast<double>(img.pixels[static_cast<size_t>(p)]) / 255.0;
    } else {
        for (int64_t p = 0; p < H * W; ++p) {
            const uint8_t* px = &img.pixels[static_cast<size_t>(p * img.channels)];
            t[p] = (static_cast<double>(px[0]) + px[1] + px[2]) / (3.0 * 255.0);
        }
    }
    return t;
}

ImageU8 tensor_to_gray(const Tensor& t) {
    if (t.ndim() != 2) throw std::invalid_argument("tensor_to_gray: expected [H,W]");
    ImageU8 img;
    img.channels = 1;
    img.height = t.dim(0);
    img.width = t.dim(1);
    img.pixels.resize(static_cast<size_t>(t.numel()));
    for (int64_t p = 0; p < t.numel(); ++p) {
        double v = std::clamp(t[p], 0.0, 1.0);
        img.pixels[static_cast<size_t>(p)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return img;
}

}  // namespace priormoe
