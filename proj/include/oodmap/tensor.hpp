#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodmap {

/// Filesystem-level failure (missing file, short write, ...).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Violation of a data contract (bad shapes, out-of-range values, ...).
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TensorFault {
    BadMagic,
    BadHeader,
    Truncated,
    NonFinite,
};

/// Malformed tensor file. Carries which part of the format was violated.
class FormatError : public std::runtime_error {
public:
    FormatError(TensorFault fault, const std::string& what)
        : std::runtime_error(what), fault_(fault) {}
    TensorFault fault() const { return fault_; }

private:
    TensorFault fault_;
};

enum class Dtype : std::uint8_t {
    F32 = 0,
    U8 = 1,
    U16 = 2,
    U64 = 3,
};

inline std::size_t dtype_size(Dtype d) {
    switch (d) {
    case Dtype::F32: return 4;
    case Dtype::U8: return 1;
    case Dtype::U16: return 2;
    case Dtype::U64: return 8;
    }
    throw ContractError("unknown dtype code");
}

inline const char* dtype_name(Dtype d) {
    switch (d) {
    case Dtype::F32: return "f32";
    case Dtype::U8: return "u8";
    case Dtype::U16: return "u16";
    case Dtype::U64: return "u64";
    }
    return "?";
}

/// Dense n-dimensional row-major array. Owns its buffer; cheap to move.
class Tensor {
public:
    Tensor() : dtype_(Dtype::F32) {}

    Tensor(Dtype dtype, std::vector<std::uint64_t> shape)
        : shape_(std::move(shape)), dtype_(dtype) {
        bytes_.resize(numel() * dtype_size(dtype_));
    }

    static Tensor f32(std::vector<std::uint64_t> shape) { return Tensor(Dtype::F32, std::move(shape)); }
    static Tensor u16(std::vector<std::uint64_t> shape) { return Tensor(Dtype::U16, std::move(shape)); }

    Dtype dtype() const { return dtype_; }
    const std::vector<std::uint64_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::uint64_t d : shape_) {
            if (d == 0) throw ContractError("tensor shape has a zero-length dimension");
            if (n > std::numeric_limits<std::size_t>::max() / d)
                throw ContractError("tensor shape overflows element count");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::span<const std::byte> bytes() const { return bytes_; }
    std::span<std::byte> bytes() { return bytes_; }

    std::span<float> f32() { return typed<float>(Dtype::F32); }
    std::span<const float> f32() const { return typed<const float, float>(Dtype::F32); }
    std::span<std::uint8_t> u8() { return typed<std::uint8_t>(Dtype::U8); }
    std::span<const std::uint8_t> u8() const { return typed<const std::uint8_t, std::uint8_t>(Dtype::U8); }
    std::span<std::uint16_t> u16() { return typed<std::uint16_t>(Dtype::U16); }
    std::span<const std::uint16_t> u16() const { return typed<const std::uint16_t, std::uint16_t>(Dtype::U16); }
    std::span<std::uint64_t> u64() { return typed<std::uint64_t>(Dtype::U64); }
    std::span<const std::uint64_t> u64() const { return typed<const std::uint64_t, std::uint64_t>(Dtype::U64); }

    bool operator==(const Tensor& o) const {
        return dtype_ == o.dtype_ && shape_ == o.shape_ &&
               bytes_.size() == o.bytes_.size() &&
               std::memcmp(bytes_.data(), o.bytes_.data(), bytes_.size()) == 0;
    }

private:
    template <typename T, typename Raw = T>
    std::span<T> typed(Dtype want) const {
        if (dtype_ != want)
            throw ContractError(std::string("tensor is ") + dtype_name(dtype_) +
                                ", not " + dtype_name(want));
        return {reinterpret_cast<T*>(const_cast<std::byte*>(bytes_.data())),
                bytes_.size() / sizeof(Raw)};
    }

    std::vector<std::uint64_t> shape_;
    Dtype dtype_;
    std::vector<std::byte> bytes_;
};

namespace detail {

inline void put_u64_le(std::uint64_t v, std::ostream& out) {
    std::array<unsigned char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t get_u64_le(std::istream& in) {
    std::array<unsigned char, 8> b;
    in.read(reinterpret_cast<char*>(b.data()), 8);
    if (!in) throw FormatError(TensorFault::Truncated, "tensor header cut short");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

static_assert(std::numeric_limits<float>::is_iec559, "requires IEEE-754 floats");

} // namespace detail

inline void check_finite(const Tensor& t, const char* when) {
    if (t.dtype() != Dtype::F32) return;
    for (float v : t.f32())
        if (!std::isfinite(v))
            throw FormatError(TensorFault::NonFinite,
                              std::string("non-finite f32 value ") + when);
}

// TNSR layout, little-endian:
//   "TNSR" | dtype u8 | ndim u8 | ndim x u64 dims | row-major payload
inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    if (t.rank() > 255) throw ContractError("tensor rank exceeds format limit (255)");
    const std::size_t n = t.numel();  // throws on zero-length dimensions
    check_finite(t, "before save");
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp.string());
        out.write("TNSR", 4);
        const unsigned char dtype = static_cast<unsigned char>(t.dtype());
        const unsigned char ndim = static_cast<unsigned char>(t.rank());
        out.put(static_cast<char>(dtype));
        out.put(static_cast<char>(ndim));
        for (std::uint64_t d : t.shape()) detail::put_u64_le(d, out);
        out.write(reinterpret_cast<const char*>(t.bytes().data()),
                  static_cast<std::streamsize>(n * dtype_size(t.dtype())));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TNSR", 4) != 0)
        throw FormatError(TensorFault::BadMagic, "not a TNSR file: " + path.string());
    const int dtype_code = in.get();
    const int ndim = in.get();
    if (dtype_code < 0 || ndim < 0)
        throw FormatError(TensorFault::Truncated, "tensor header cut short: " + path.string());
    if (dtype_code > 3)
        throw FormatError(TensorFault::BadHeader,
                          "unknown dtype code " + std::to_string(dtype_code));
    std::vector<std::uint64_t> shape(static_cast<std::size_t>(ndim));
    for (auto& d : shape) {
        d = detail::get_u64_le(in);
        if (d == 0)
            throw FormatError(TensorFault::BadHeader, "zero-length dimension in header");
    }
    Tensor t(static_cast<Dtype>(dtype_code), std::move(shape));
    std::size_t want = t.numel() * dtype_size(t.dtype());
    in.read(reinterpret_cast<char*>(t.bytes().data()), static_cast<std::streamsize>(want));
    if (static_cast<std::size_t>(in.gcount()) != want)
        throw FormatError(TensorFault::Truncated, "payload cut short: " + path.string());
    in.get();
    if (!in.eof())
        throw FormatError(TensorFault::BadHeader, "trailing bytes after payload: " + path.string());
    check_finite(t, "on load");
    return t;
}

inline constexpr std::uint16_t kOodId = 254;
inline constexpr std::uint16_t kIgnoreId = 255;

/// 2-D map of class ids. kOodId marks out-of-distribution ground truth,
/// kIgnoreId pixels carry zero evaluation weight.
struct LabelMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint16_t> labels;

    LabelMap() = default;
    LabelMap(std::uint32_t h, std::uint32_t w, std::uint16_t fill = 0)
        : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint16_t& at(std::uint32_t y, std::uint32_t x) { return labels[std::size_t(y) * width + x]; }
    std::uint16_t at(std::uint32_t y, std::uint32_t x) const { return labels[std::size_t(y) * width + x]; }
    std::size_t size() const { return labels.size(); }

    static LabelMap from_tensor(const Tensor& t) {
        if (t.rank() != 2 || t.dtype() != Dtype::U16)
            throw ContractError("label map tensor must be u16 of shape [H,W]");
        LabelMap m(static_cast<std::uint32_t>(t.shape()[0]),
                   static_cast<std::uint32_t>(t.shape()[1]));
        auto src = t.u16();
        std::copy(src.begin(), src.end(), m.labels.begin());
        return m;
    }

    Tensor to_tensor() const {
        Tensor t = Tensor::u16({height, width});
        std::copy(labels.begin(), labels.end(), t.u16().begin());
        return t;
    }
};

/// 2-D map of per-pixel OOD scores in [0,1]; larger means more likely OOD.
struct ScoreMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> scores;

    ScoreMap() = default;
    ScoreMap(std::uint32_t h, std::uint32_t w, float fill = 0.0f)
        : height(h), width(w), scores(static_cast<std::size_t>(h) * w, fill) {}

    float& at(std::uint32_t y, std::uint32_t x) { return scores[std::size_t(y) * width + x]; }
    float at(std::uint32_t y, std::uint32_t x) const { return scores[std::size_t(y) * width + x]; }
    std::size_t size() const { return scores.size(); }

    void validate() const {
        for (float v : scores)
            if (!(v >= 0.0f && v <= 1.0f))
                throw ContractError("score outside [0,1]");
    }

    static ScoreMap from_tensor(const Tensor& t) {
        if (t.rank() != 2 || t.dtype() != Dtype::F32)
            throw ContractError("score map tensor must be f32 of shape [H,W]");
        ScoreMap m(static_cast<std::uint32_t>(t.shape()[0]),
                   static_cast<std::uint32_t>(t.shape()[1]));
        auto src = t.f32();
        std::copy(src.begin(), src.end(), m.scores.begin());
        m.validate();
        return m;
    }

    Tensor to_tensor() const {
        Tensor t = Tensor::f32({height, width});
        std::copy(scores.begin(), scores.end(), t.f32().begin());
        return t;
    }
};

// Both resizes use the half-pixel-center convention: output pixel (y,x) samples
// source coordinate ((y+0.5)*sh-0.5, (x+0.5)*sw-0.5). Constants are preserved
// exactly and same-size resizes are the identity.

inline LabelMap resize_nearest(const LabelMap& src, std::uint32_t out_h, std::uint32_t out_w) {
    if (out_h == 0 || out_w == 0) throw ContractError("resize target must be at least 1x1");
    LabelMap dst(out_h, out_w);
    const double sh = double(src.height) / out_h;
    const double sw = double(src.width) / out_w;
    for (std::uint32_t y = 0; y < out_h; ++y) {
        const auto sy = static_cast<std::int64_t>(std::floor((y + 0.5) * sh));
        const auto cy = static_cast<std::uint32_t>(std::clamp<std::int64_t>(sy, 0, src.height - 1));
        for (std::uint32_t x = 0; x < out_w; ++x) {
            const auto sx = static_cast<std::int64_t>(std::floor((x + 0.5) * sw));
            const auto cx = static_cast<std::uint32_t>(std::clamp<std::int64_t>(sx, 0, src.width - 1));
            dst.at(y, x) = src.at(cy, cx);
        }
    }
    return dst;
}

inline ScoreMap resize_bilinear(const ScoreMap& src, std::uint32_t out_h, std::uint32_t out_w) {
    if (out_h == 0 || out_w == 0) throw ContractError("resize target must be at least 1x1");
    if (out_h == src.height && out_w == src.width) return src;
    ScoreMap dst(out_h, out_w);
    const double sh = double(src.height) / out_h;
    const double sw = double(src.width) / out_w;
    for (std::uint32_t y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sh - 0.5;
        const auto y0 = static_cast<std::int64_t>(std::floor(fy));
        const double wy = fy - double(y0);
        const auto ya = static_cast<std::uint32_t>(std::clamp<std::int64_t>(y0, 0, src.height - 1));
        const auto yb = static_cast<std::uint32_t>(std::clamp<std::int64_t>(y0 + 1, 0, src.height - 1));
        for (std::uint32_t x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sw - 0.5;
            const auto x0 = static_cast<std::int64_t>(std::floor(fx));
            const double wx = fx - double(x0);
            const auto xa = static_cast<std::uint32_t>(std::clamp<std::int64_t>(x0, 0, src.width - 1));
            const auto xb = static_cast<std::uint32_t>(std::clamp<std::int64_t>(x0 + 1, 0, src.width - 1));
            const double top = (1.0 - wx) * src.at(ya, xa) + wx * src.at(ya, xb);
            const double bot = (1.0 - wx) * src.at(yb, xa) + wx * src.at(yb, xb);
            dst.at(y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return dst;
}

} // namespace oodmap
