#pragma once

#include "idesplat/error.hpp"
#include "idesplat/tensor.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace idesplat {

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::Io, "short write to " + path.string());
}

template <class UInt>
void put_le(std::vector<std::uint8_t>& out, UInt value) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

template <class UInt>
UInt get_le(const std::uint8_t* p) {
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        value |= static_cast<UInt>(p[i]) << (8 * i);
    }
    return value;
}

template <class UInt>
UInt get_be(const std::uint8_t* p) {
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        value = static_cast<UInt>(value << 8) | p[i];
    }
    return value;
}

} // namespace detail

// ---------------------------------------------------------------------------
// TNSR: "TNSR" | u32 version (1) | u32 ndim | u64 shape[ndim] | f32 payload.
// All fields little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::size_t kTensorMaxDims = 8;

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    require(t.ndim() <= kTensorMaxDims, ErrorCode::TooManyDims, "TNSR supports at most 8 dimensions");
    std::vector<std::uint8_t> out{'T', 'N', 'S', 'R'};
    out.reserve(16 + 8 * t.ndim() + 4 * t.size());
    detail::put_le<std::uint32_t>(out, kTensorFormatVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) {
        detail::put_le<std::uint64_t>(out, d);
    }
    for (float v : t.data()) {
        detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
    require(bytes.size() >= 12, ErrorCode::Truncated, "TNSR header is incomplete");
    require(std::memcmp(bytes.data(), "TNSR", 4) == 0, ErrorCode::BadMagic, "missing TNSR magic");
    const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
    require(version == kTensorFormatVersion, ErrorCode::UnsupportedVersion, "TNSR version " + std::to_string(version));
    const auto ndim = detail::get_le<std::uint32_t>(bytes.data() + 8);
    require(ndim <= kTensorMaxDims, ErrorCode::TooManyDims, "ndim " + std::to_string(ndim) + " exceeds 8");
    std::size_t pos = 12;
    require(bytes.size() >= pos + 8 * std::size_t{ndim}, ErrorCode::Truncated, "TNSR shape is incomplete");
    Shape shape(ndim);
    std::size_t count = 1;
    for (auto& d : shape) {
        d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(bytes.data() + pos));
        pos += 8;
        require(d == 0 || count <= (bytes.size() / 4) / d, ErrorCode::Truncated, "TNSR payload is truncated");
        count *= d;
    }
    require(bytes.size() - pos >= 4 * count, ErrorCode::Truncated,
            "TNSR payload holds " + std::to_string((bytes.size() - pos) / 4) + " of " + std::to_string(count) + " floats");
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < count; ++i, pos += 4) {
        t[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes.data() + pos));
    }
    return t;
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) { detail::write_bytes(path, encode_tensor(t)); }

inline Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(detail::read_bytes(path)); }

// ---------------------------------------------------------------------------
// PFM, grayscale only. Written little-endian (scale -1.0) with rows bottom-up.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_pfm(const Tensor& map) {
    require_rank(map, 2, "PFM depth map");
    const std::size_t h = map.dim(0);
    const std::size_t w = map.dim(1);
    const std::string header = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + 4 * map.size());
    for (std::size_t row = h; row-- > 0;) {
        for (std::size_t x = 0; x < w; ++x) {
            detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(map.at(row, x)));
        }
    }
    return out;
}

inline Tensor decode_pfm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size() && std::isspace(bytes[pos])) {
            ++pos;
        }
    };
    auto token = [&] {
        skip_space();
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) {
            tok.push_back(static_cast<char>(bytes[pos++]));
        }
        require(!tok.empty(), ErrorCode::MalformedHeader, "PFM header ended early");
        return tok;
    };

    const std::string magic = token();
    if (magic == "PF") {
        fail(ErrorCode::UnsupportedChannels, "color PFM is not supported");
    }
    require(magic == "Pf", ErrorCode::MalformedHeader, "unknown PFM magic '" + magic + "'");

    std::size_t w = 0;
    std::size_t h = 0;
    double scale = 0.0;
    try {
        std::size_t used = 0;
        const std::string ws = token();
        w = std::stoul(ws, &used);
        require(used == ws.size(), ErrorCode::MalformedHeader, "bad PFM width");
        const std::string hs = token();
        h = std::stoul(hs, &used);
        require(used == hs.size(), ErrorCode::MalformedHeader, "bad PFM height");
        const std::string ss = token();
        scale = std::stod(ss, &used);
        require(used == ss.size(), ErrorCode::MalformedHeader, "bad PFM scale");
    } catch (const std::logic_error&) {
        fail(ErrorCode::MalformedHeader, "PFM header fields are not numeric");
    }
    require(w > 0 && h > 0 && scale != 0.0, ErrorCode::MalformedHeader, "PFM dimensions and scale must be non-zero");
    require(pos < bytes.size() && std::isspace(bytes[pos]), ErrorCode::MalformedHeader, "PFM header not terminated");
    ++pos;
    require(bytes.size() - pos >= 4 * w * h, ErrorCode::Truncated, "PFM payload is truncated");

    const bool little = scale < 0.0;
    Tensor map({h, w});
    for (std::size_t row = h; row-- > 0;) {
        for (std::size_t x = 0; x < w; ++x, pos += 4) {
            const auto bits = little ? detail::get_le<std::uint32_t>(bytes.data() + pos)
                                     : detail::get_be<std::uint32_t>(bytes.data() + pos);
            map.at(row, x) = std::bit_cast<float>(bits);
        }
    }
    return map;
}

inline void write_pfm(const Tensor& map, const std::filesystem::path& path) { detail::write_bytes(path, encode_pfm(map)); }

inline Tensor read_pfm(const std::filesystem::path& path) { return decode_pfm(detail::read_bytes(path)); }

// ---------------------------------------------------------------------------
// PNG, 8-bit. Decoded to [H,W,3] floats in [0,1]; alpha is dropped.
// ---------------------------------------------------------------------------

inline Tensor read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&image, path.string().c_str()) != 0, ErrorCode::Io,
            "cannot decode PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGBA;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
        const std::string message = image.message;
        png_image_free(&image);
        fail(ErrorCode::Io, "cannot decode PNG " + path.string() + ": " + message);
    }
    const std::size_t h = image.height;
    const std::size_t w = image.width;
    Tensor out({h, w, 3});
    for (std::size_t i = 0; i < h * w; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[3 * i + c] = static_cast<float>(buffer[4 * i + c]) / 255.0f;
        }
    }
    return out;
}

inline std::uint8_t to_byte(float v) {
    const float clamped = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

inline void write_png(const Tensor& rgb, const std::filesystem::path& path) {
    require(rgb.ndim() == 3 && rgb.dim(2) == 3, ErrorCode::ShapeMismatch, "PNG writer expects [H,W,3]");
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(rgb.dim(1));
    image.height = static_cast<png_uint_32>(rgb.dim(0));
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(rgb.size());
    std::transform(rgb.data().begin(), rgb.data().end(), buffer.begin(), to_byte);
    require(png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr) != 0, ErrorCode::Io,
            "cannot write PNG " + path.string() + ": " + image.message);
}

} // namespace idesplat
