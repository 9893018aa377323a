#include "mstl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

#include "mstl/error.hpp"

namespace mstl {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

RawImage decode_png(const std::string& path, FILE* f) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: allocation failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: allocation failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png: corrupt or unreadable image " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png: unsupported channel count " + std::to_string(channels) + " in " + path);
    }

    RawImage img;
    img.channels = channels;
    img.height = static_cast<int>(height);
    img.width = static_cast<int>(width);
    img.pixels.resize(static_cast<size_t>(channels) * height * width);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 r = 0; r < height; ++r)
        rows[r] = img.pixels.data() + static_cast<size_t>(r) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(mgr->jump, 1);
}

RawImage decode_jpeg(const std::string& path, FILE* f) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("jpeg: corrupt or unreadable image " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    RawImage img;
    img.channels = cinfo.output_components;
    img.height = static_cast<int>(cinfo.output_height);
    img.width = static_cast<int>(cinfo.output_width);
    if (img.channels != 1 && img.channels != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("jpeg: unsupported channel count " + std::to_string(img.channels) + " in " + path);
    }
    img.pixels.resize(static_cast<size_t>(img.channels) * img.height * img.width);
    const size_t row_stride = static_cast<size_t>(img.width) * img.channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.pixels.data() + static_cast<size_t>(cinfo.output_scanline) * row_stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

} // namespace

RawImage decode_image(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("image: cannot open " + path);
    unsigned char magic[4] = {0, 0, 0, 0};
    const size_t got = std::fread(magic, 1, 4, f.get());
    std::rewind(f.get());
    if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
        return decode_png(path, f.get());
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return decode_jpeg(path, f.get());
    throw DataError("image: unsupported format (not PNG/JPEG): " + path);
}

void write_png(const std::string& path, const RawImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw InputError("write_png: channels must be 1 or 3");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("png: cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: allocation failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: allocation failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: write failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < img.height; ++r) {
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                                 static_cast<size_t>(r) * img.width * img.channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<float> resize_bilinear_chw(const std::vector<float>& src, int channels, int height,
                                       int width, int out_height, int out_width) {
    if (height == out_height && width == out_width) return src;
    std::vector<float> dst(static_cast<size_t>(channels) * out_height * out_width);
    const double sy = static_cast<double>(height) / out_height;
    const double sx = static_cast<double>(width) / out_width;
    for (int c = 0; c < channels; ++c) {
        const float* sp = src.data() + static_cast<size_t>(c) * height * width;
        float* dp = dst.data() + static_cast<size_t>(c) * out_height * out_width;
        for (int oy = 0; oy < out_height; ++oy) {
            const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
            const int y0 = static_cast<int>(std::floor(fy));
            const int y1 = std::min(y0 + 1, height - 1);
            const double wy = fy - y0;
            for (int ox = 0; ox < out_width; ++ox) {
                const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
                const int x0 = static_cast<int>(std::floor(fx));
                const int x1 = std::min(x0 + 1, width - 1);
                const double wx = fx - x0;
                const double top = sp[y0 * width + x0] * (1.0 - wx) + sp[y0 * width + x1] * wx;
                const double bottom = sp[y1 * width + x0] * (1.0 - wx) + sp[y1 * width + x1] * wx;
                dp[oy * out_width + ox] = static_cast<float>(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    return dst;
}

std::vector<float> adapt_image(std::vector<float> chw_data, int channels, int height, int width,
                               const Shape& target_chw) {
    const int tc = target_chw[0], th = target_chw[1], tw = target_chw[2];
    if (channels != tc) {
        std::vector<float> adapted(static_cast<size_t>(tc) * height * width);
        const size_t plane = static_cast<size_t>(height) * width;
        if (channels == 1) {
            for (int c = 0; c < tc; ++c)
                std::copy_n(chw_data.data(), plane, adapted.data() + static_cast<size_t>(c) * plane);
        } else if (tc == 1) {
            for (size_t i = 0; i < plane; ++i) {
                float acc = 0.0f;
                for (int c = 0; c < channels; ++c) acc += chw_data[static_cast<size_t>(c) * plane + i];
                adapted[i] = acc / static_cast<float>(channels);
            }
        } else {
            throw DataError("image: cannot adapt " + std::to_string(channels) + " channels to " +
                            std::to_string(tc));
        }
        chw_data = std::move(adapted);
        channels = tc;
    }
    return resize_bilinear_chw(chw_data, channels, height, width, th, tw);
}

TensorPtr load_image(const std::string& ref, const Shape& chw) {
    if (chw.size() != 3) throw InputError("load_image: target shape must be C,H,W");
    RawImage raw = decode_image(ref);
    // HWC bytes -> CHW floats in [0,1].
    std::vector<float> data(static_cast<size_t>(raw.channels) * raw.height * raw.width);
    const size_t plane = static_cast<size_t>(raw.height) * raw.width;
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int c = 0; c < raw.channels; ++c)
                data[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * raw.width + x] =
                    static_cast<float>(raw.pixels[(static_cast<size_t>(y) * raw.width + x) * raw.channels + c]) /
                    255.0f;
    auto adapted = adapt_image(std::move(data), raw.channels, raw.height, raw.width, chw);
    return make_tensor({1, chw[0], chw[1], chw[2]}, std::move(adapted));
}

} // namespace mstl
