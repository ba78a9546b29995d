#include "sparseconv/depth_map.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>

namespace sparseconv {

namespace {

struct RawImage {
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;    // as stored in the file
    int color_type = 0;   // as stored in the file
    int channels = 0;     // after transforms
    int sample_bytes = 1; // after transforms
    std::vector<unsigned char> pixels;
};

struct PngFile {
    std::FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    bool writing = false;
    char message[256] = {};

    ~PngFile() {
        if (writing) {
            if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        } else if (png) {
            png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        }
        if (fp) std::fclose(fp);
    }
};

void on_error(png_structp png, png_const_charp msg) {
    auto* file = static_cast<PngFile*>(png_get_error_ptr(png));
    std::snprintf(file->message, sizeof file->message, "%s", msg);
    png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

// Reads a PNG; 16-bit samples are kept (host byte order) only when `keep_16` is set, otherwise
// reduced to 8 bits. Palette and sub-byte gray are expanded to 8 bits; alpha is dropped.
// The work happens in this frame so that longjmp only unwinds libpng.
void read_png(const std::filesystem::path& path, bool keep_16, PngFile& f, RawImage& out,
              std::vector<png_bytep>& rows) {
    f.fp = std::fopen(path.c_str(), "rb");
    if (!f.fp) throw std::runtime_error("cannot open '" + path.string() + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw std::runtime_error("'" + path.string() + "' is not a PNG file");
    }
    f.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &f, on_error, on_warning);
    if (!f.png) throw std::runtime_error("libpng initialisation failed");
    f.info = png_create_info_struct(f.png);
    if (!f.info) throw std::runtime_error("libpng initialisation failed");
    if (setjmp(png_jmpbuf(f.png))) {
        throw std::runtime_error("failed to read '" + path.string() + "': " + f.message);
    }
    png_init_io(f.png, f.fp);
    png_set_sig_bytes(f.png, 8);
    png_read_info(f.png, f.info);
    out.width = png_get_image_width(f.png, f.info);
    out.height = png_get_image_height(f.png, f.info);
    out.bit_depth = png_get_bit_depth(f.png, f.info);
    out.color_type = png_get_color_type(f.png, f.info);

    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(f.png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(f.png);
    if (out.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(f.png);
    if (png_get_valid(f.png, f.info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(f.png);
        png_set_strip_alpha(f.png);
    }
    if (out.bit_depth == 16) {
        if (keep_16) {
            png_set_swap(f.png);
        } else {
            png_set_strip_16(f.png);
        }
    }
    png_read_update_info(f.png, f.info);
    out.channels = png_get_channels(f.png, f.info);
    out.sample_bytes = png_get_bit_depth(f.png, f.info) == 16 ? 2 : 1;
    const std::size_t stride = png_get_rowbytes(f.png, f.info);
    out.pixels.resize(stride * out.height);
    rows.resize(out.height);
    for (png_uint_32 y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * stride;
    png_read_image(f.png, rows.data());
    png_read_end(f.png, nullptr);
}

RawImage read_raw(const std::filesystem::path& path, bool keep_16) {
    PngFile f;
    RawImage out;
    std::vector<png_bytep> rows;
    read_png(path, keep_16, f, out, rows);
    return out;
}

// `pixels` holds rows of width * channels samples of the given bit depth (16-bit in host order).
void write_png(const std::filesystem::path& path, png_uint_32 width, png_uint_32 height, int bit_depth,
               int color_type, const std::vector<unsigned char>& pixels, PngFile& f,
               std::vector<png_bytep>& rows) {
    f.writing = true;
    f.fp = std::fopen(path.c_str(), "wb");
    if (!f.fp) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &f, on_error, on_warning);
    if (!f.png) throw std::runtime_error("libpng initialisation failed");
    f.info = png_create_info_struct(f.png);
    if (!f.info) throw std::runtime_error("libpng initialisation failed");
    if (setjmp(png_jmpbuf(f.png))) {
        throw std::runtime_error("failed to write '" + path.string() + "': " + f.message);
    }
    png_init_io(f.png, f.fp);
    png_set_IHDR(f.png, f.info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(f.png, f.info);
    if (bit_depth == 16) png_set_swap(f.png);
    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t stride = std::size_t(width) * channels * (bit_depth / 8);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        rows[y] = const_cast<png_bytep>(pixels.data() + y * stride);
    }
    png_write_image(f.png, rows.data());
    png_write_end(f.png, nullptr);
}

void write_raw(const std::filesystem::path& path, std::int64_t width, std::int64_t height, int bit_depth,
               int color_type, const std::vector<unsigned char>& pixels) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("cannot write an empty image");
    PngFile f;
    std::vector<png_bytep> rows;
    write_png(path, png_uint_32(width), png_uint_32(height), bit_depth, color_type, pixels, f, rows);
    if (std::fflush(f.fp) != 0) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ValidityMask DepthMap::mask() const {
    ValidityMask m(1, height, width);
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) m.set(0, y, x, at(y, x) > 0.0);
    return m;
}

double DepthMap::density() const { return mask_density(mask()); }

Tensor DepthMap::to_tensor(DType dtype) const {
    return Tensor::from_values({1, 1, height, width}, depth, dtype);
}

DepthMap DepthMap::from_tensor(const Tensor& t, std::int64_t n) {
    if (t.shape().c != 1) throw std::invalid_argument("depth tensor needs one channel");
    if (n < 0 || n >= t.shape().n) throw std::out_of_range("depth tensor batch index");
    DepthMap m(t.shape().h, t.shape().w);
    for (std::int64_t y = 0; y < m.height; ++y)
        for (std::int64_t x = 0; x < m.width; ++x) m.at(y, x) = t.at(n, 0, y, x);
    return m;
}

DepthMap quantize(const DepthMap& map) {
    DepthMap out = map;
    for (double& d : out.depth) {
        d = std::round(d * DepthMap::kUnitsPerMetre) / DepthMap::kUnitsPerMetre;
    }
    return out;
}

DepthMap depth_from_prediction(const Tensor& pred, std::int64_t n) {
    DepthMap out = quantize(DepthMap::from_tensor(pred, n));
    for (double& d : out.depth) {
        if (std::isnan(d)) throw std::domain_error("prediction contains NaN");
        d = std::clamp(d, 1.0 / DepthMap::kUnitsPerMetre, DepthMap::kMaxDepth);
    }
    return out;
}

DepthMap read_depth_png(const std::filesystem::path& path) {
    RawImage raw = read_raw(path, true);
    if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY) {
        throw std::runtime_error("'" + path.string() + "' is not a 16-bit single-channel PNG (bit depth " +
                                 std::to_string(raw.bit_depth) + ", color type " +
                                 std::to_string(raw.color_type) + ")");
    }
    DepthMap m(raw.height, raw.width);
    for (std::size_t i = 0; i < m.depth.size(); ++i) {
        std::uint16_t v;
        std::memcpy(&v, raw.pixels.data() + 2 * i, 2);
        m.depth[i] = v / DepthMap::kUnitsPerMetre;
    }
    return m;
}

void write_depth_png(const DepthMap& map, const std::filesystem::path& path) {
    if (map.depth.size() != std::size_t(map.height * map.width)) {
        throw std::invalid_argument("depth map storage does not match its extent");
    }
    std::vector<unsigned char> pixels(map.depth.size() * 2);
    for (std::size_t i = 0; i < map.depth.size(); ++i) {
        const double d = map.depth[i];
        if (!std::isfinite(d) || d < 0.0 || d > DepthMap::kMaxDepth) {
            throw std::invalid_argument("depth " + std::to_string(d) + " m at pixel " + std::to_string(i) +
                                        " is outside the storable range [0, " +
                                        std::to_string(DepthMap::kMaxDepth) + "]");
        }
        const auto v = static_cast<std::uint16_t>(std::lround(d * DepthMap::kUnitsPerMetre));
        std::memcpy(pixels.data() + 2 * i, &v, 2);
    }
    write_raw(path, map.width, map.height, 16, PNG_COLOR_TYPE_GRAY, pixels);
}

Tensor read_image_png(const std::filesystem::path& path, DType dtype) {
    RawImage raw = read_raw(path, false);
    if (raw.channels != 1 && raw.channels != 3) {
        throw std::runtime_error("'" + path.string() + "' has an unsupported channel layout");
    }
    const std::int64_t h = raw.height, w = raw.width;
    Tensor t({1, 3, h, w}, dtype);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = raw.channels == 1 ? 0 : c;
                t.set(0, c, y, x, raw.pixels[std::size_t((y * w + x) * raw.channels + src)] / 255.0);
            }
    return t;
}

void write_image_png(const Tensor& image, const std::filesystem::path& path) {
    const Shape s = image.shape();
    if (s.c != 1 && s.c != 3) throw std::invalid_argument("image must have 1 or 3 channels");
    std::vector<unsigned char> pixels(std::size_t(s.h * s.w * s.c));
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x)
            for (std::int64_t c = 0; c < s.c; ++c)
                pixels[std::size_t((y * s.w + x) * s.c + c)] = to_byte(image.at(0, c, y, x));
    write_raw(path, s.w, s.h, 8, s.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, pixels);
}

void write_mask_png(const ValidityMask& mask, const std::filesystem::path& path, std::int64_t n) {
    std::vector<unsigned char> pixels(std::size_t(mask.height() * mask.width()));
    for (std::int64_t y = 0; y < mask.height(); ++y)
        for (std::int64_t x = 0; x < mask.width(); ++x)
            pixels[std::size_t(y * mask.width() + x)] = mask.at(n, y, x) ? 255 : 0;
    write_raw(path, mask.width(), mask.height(), 8, PNG_COLOR_TYPE_GRAY, pixels);
}

ValidityMask read_mask_png(const std::filesystem::path& path) {
    RawImage raw = read_raw(path, false);
    if (raw.channels != 1) throw std::runtime_error("'" + path.string() + "' is not a gray mask image");
    ValidityMask m(1, raw.height, raw.width);
    for (std::int64_t y = 0; y < m.height(); ++y)
        for (std::int64_t x = 0; x < m.width(); ++x) {
            const unsigned char v = raw.pixels[std::size_t(y * m.width() + x)];
            if (v != 0 && v != 255) throw std::runtime_error("'" + path.string() + "' holds non-binary values");
            m.set(0, y, x, v == 255);
        }
    return m;
}

}  // namespace sparseconv
