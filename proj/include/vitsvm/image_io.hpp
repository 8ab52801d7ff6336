#pragma once

#include <array>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "vitsvm/errors.hpp"

namespace vitsvm {

// 8-bit interleaved pixels, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const
    {
        return pixels[(y * width + x) * channels + c];
    }
};

namespace detail {

inline Image8 decode_png(const std::filesystem::path& path)
{
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image8 out{img.width, img.height, color ? 3u : 1u, {}};
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    std::array<char, JMSG_LENGTH_MAX> message;
};

extern "C" inline void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message.data());
    std::longjmp(err->jump, 1);
}

// Decodes into a caller-owned buffer; returns false with `message` set on failure.
// No objects with destructors are live across the setjmp boundary.
inline bool decode_jpeg_raw(std::FILE* file, Image8& out, JpegErrorManager& err)
{
    jpeg_decompress_struct cinfo;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.width = cinfo.output_width;
    out.height = cinfo.output_height;
    out.channels = static_cast<std::size_t>(cinfo.output_components);
    out.pixels.resize(out.width * out.height * out.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * out.channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

inline Image8 decode_jpeg(const std::filesystem::path& path)
{
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file) throw IoError("cannot open image '" + path.string() + "'");
    Image8 out;
    JpegErrorManager err{};
    if (!decode_jpeg_raw(file.get(), out, err)) {
        throw IoError("cannot decode JPEG '" + path.string() + "': " + err.message.data());
    }
    return out;
}

}  // namespace detail

/// Reads an 8-bit PNG or JPEG, chosen by file signature.
inline Image8 decode_image(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image '" + path.string() + "'");
    std::array<unsigned char, 8> sig{};
    in.read(reinterpret_cast<char*>(sig.data()), sig.size());
    const auto got = in.gcount();
    in.close();
    if (got >= 8 && png_sig_cmp(sig.data(), 0, 8) == 0) return detail::decode_png(path);
    if (got >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return detail::decode_jpeg(path);
    throw IoError("unsupported image format '" + path.string() + "' (expected PNG or JPEG)");
}

inline void write_png(const std::filesystem::path& path, const Image8& image)
{
    if (image.channels != 1 && image.channels != 3) throw IoError("write_png: only 1 or 3 channels supported");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

}  // namespace vitsvm
