#pragma once
#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "volume.hpp"

namespace hnpipe {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

enum class VolumeFormat { nifti1, raw_json };

inline VolumeFormat format_from_path(const std::string& path)
{
    auto ends_with = [&](std::string_view suf) {
        return path.size() >= suf.size() && path.compare(path.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".nii") || ends_with(".nii.gz")) return VolumeFormat::nifti1;
    if (ends_with(".json")) return VolumeFormat::raw_json;
    throw InvalidArgument("cannot infer volume format from '" + path + "' (expected .nii, .nii.gz or .json)");
}

namespace detail {

struct GzFile {
    gzFile f = nullptr;
    GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
    ~GzFile()
    {
        if (f) gzclose(f);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;
};

inline std::vector<unsigned char> read_all_gz(const std::string& path)
{
    if (!std::filesystem::exists(path)) throw IoError("file not found: " + path);
    GzFile gz(path, "rb");
    if (!gz.f) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes;
    unsigned char buf[1 << 16];
    for (;;) {
        const int got = gzread(gz.f, buf, sizeof buf);
        if (got < 0) throw IoError("read error (corrupt gzip stream?) in " + path);
        if (got == 0) break;
        bytes.insert(bytes.end(), buf, buf + got);
    }
    return bytes;
}

template <class T>
T load_le(const unsigned char* p)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <class T>
void store_le(unsigned char* p, T v)
{
    std::memcpy(p, &v, sizeof(T));
}

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataOffset = 352;

enum NiftiType : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

} // namespace detail

/// NIfTI-1 single file, optionally gzip-compressed. The grid is assumed axis
/// aligned; qoffset (voxel-0 center) is converted to the corner origin.
inline Volume load_nifti(const std::string& path)
{
    using namespace detail;
    const auto bytes = read_all_gz(path);
    if (bytes.size() < kNiftiHeaderSize) throw IoError(path + ": truncated NIfTI header");
    const unsigned char* h = bytes.data();
    const auto sizeof_hdr = load_le<std::int32_t>(h);
    if (sizeof_hdr != 348) {
        if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == 348u) throw IoError(path + ": big-endian NIfTI is not supported");
        throw IoError(path + ": not a NIfTI-1 file");
    }
    if (std::memcmp(h + 344, "n+1", 3) != 0) throw IoError(path + ": only single-file NIfTI-1 (n+1) is supported");

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = load_le<std::int16_t>(h + 40 + 2 * i);
    if (dim[0] < 1 || dim[0] > 7) throw IoError(path + ": invalid dim[0]");
    for (int i = 4; i <= dim[0]; ++i)
        if (dim[i] > 1) throw IoError(path + ": only 3D volumes are supported");

    Geometry g;
    for (int a = 0; a < 3; ++a) {
        const int d = (a + 1 <= dim[0]) ? dim[a + 1] : 1;
        if (d < 1) throw IoError(path + ": non-positive dimension");
        g.dims[a] = static_cast<std::size_t>(d);
        const float px = load_le<float>(h + 76 + 4 * (a + 1));
        g.spacing[a] = px > 0.0f ? static_cast<double>(px) : 1.0;
    }
    const auto qform = load_le<std::int16_t>(h + 252);
    const auto sform = load_le<std::int16_t>(h + 254);
    for (int a = 0; a < 3; ++a) {
        double center0 = 0.0;
        if (qform > 0)
            center0 = load_le<float>(h + 268 + 4 * a);
        else if (sform > 0)
            center0 = load_le<float>(h + 280 + 16 * a + 12);
        g.origin[a] = center0 - 0.5 * g.spacing[a];
    }

    const auto datatype = load_le<std::int16_t>(h + 70);
    const float vox_offset_f = load_le<float>(h + 108);
    const std::size_t offset = std::max<std::size_t>(kNiftiHeaderSize, static_cast<std::size_t>(vox_offset_f));
    float slope = load_le<float>(h + 112);
    const float inter = load_le<float>(h + 116);
    const bool scaled = slope != 0.0f && !(slope == 1.0f && inter == 0.0f);

    std::size_t width = 0;
    switch (datatype) {
    case kUint8: width = 1; break;
    case kInt16: width = 2; break;
    case kInt32: width = 4; break;
    case kFloat32: width = 4; break;
    case kFloat64: width = 8; break;
    default: throw IoError(path + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }
    if (bytes.size() < offset) throw IoError(path + ": dims/data-length mismatch (no payload)");
    const std::size_t payload = bytes.size() - offset;
    if (payload != g.size() * width)
        throw IoError(path + ": dims/data-length mismatch: dims product " + std::to_string(g.size()) + " x " +
                      std::to_string(width) + " bytes != payload " + std::to_string(payload) + " bytes");

    Volume vol(g);
    const unsigned char* p = bytes.data() + offset;
    for (std::size_t n = 0; n < g.size(); ++n, p += width) {
        double v = 0.0;
        switch (datatype) {
        case kUint8: v = *p; break;
        case kInt16: v = load_le<std::int16_t>(p); break;
        case kInt32: v = load_le<std::int32_t>(p); break;
        case kFloat32: v = load_le<float>(p); break;
        case kFloat64: v = load_le<double>(p); break;
        default: break;
        }
        if (scaled) v = static_cast<double>(slope) * v + static_cast<double>(inter);
        if (!std::isfinite(v)) throw IoError(path + ": non-finite voxel value");
        vol.data[n] = v;
    }
    return vol;
}

/// Writes float32 NIfTI-1; gzip-compressed when the path ends in ".gz".
inline void save_nifti(const Volume& vol, const std::string& path)
{
    using namespace detail;
    std::vector<unsigned char> out(kNiftiDataOffset + vol.size() * 4, 0);
    unsigned char* h = out.data();
    store_le<std::int32_t>(h, 348);
    store_le<char>(h + 38, 'r');
    store_le<std::int16_t>(h + 40, 3);
    for (int a = 0; a < 3; ++a) {
        if (vol.geom.dims[a] > 32767) throw IoError(path + ": dimension too large for NIfTI-1");
        store_le<std::int16_t>(h + 42 + 2 * a, static_cast<std::int16_t>(vol.geom.dims[a]));
    }
    for (int i = 4; i < 8; ++i) store_le<std::int16_t>(h + 40 + 2 * i, 1);
    store_le<std::int16_t>(h + 70, kFloat32);
    store_le<std::int16_t>(h + 72, 32);
    store_le<float>(h + 76, 1.0f);
    for (int a = 0; a < 3; ++a) store_le<float>(h + 80 + 4 * a, static_cast<float>(vol.geom.spacing[a]));
    store_le<float>(h + 108, static_cast<float>(kNiftiDataOffset));
    store_le<float>(h + 112, 1.0f);
    store_le<char>(h + 123, 2); // mm
    store_le<std::int16_t>(h + 252, 1);
    for (int a = 0; a < 3; ++a)
        store_le<float>(h + 268 + 4 * a, static_cast<float>(vol.geom.origin[a] + 0.5 * vol.geom.spacing[a]));
    std::memcpy(h + 344, "n+1\0", 4);

    unsigned char* p = out.data() + kNiftiDataOffset;
    for (double v : vol.data) {
        store_le<float>(p, static_cast<float>(v));
        p += 4;
    }

    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    GzFile f(path, gz ? "wb6" : "wbT");
    if (!f.f) throw IoError("cannot write " + path);
    std::size_t written = 0;
    while (written < out.size()) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(out.size() - written, 1u << 30));
        const int w = gzwrite(f.f, out.data() + written, chunk);
        if (w <= 0) throw IoError("write failed: " + path);
        written += static_cast<std::size_t>(w);
    }
}

inline std::string raw_payload_path(const std::string& sidecar)
{
    std::filesystem::path p(sidecar);
    p.replace_extension(".bin");
    return p.string();
}

/// JSON sidecar {dims, spacing, origin, dtype:"f32"} beside a little-endian
/// float32 payload (x-fastest) with the same stem and a .bin extension.
inline Volume load_raw_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("file not found: " + path);
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": invalid JSON: " + e.what());
    }
    Geometry g;
    std::string dtype;
    try {
        for (int a = 0; a < 3; ++a) {
            const auto d = meta.at("dims").at(a).get<long long>();
            if (d <= 0) throw IoError(path + ": dims must be positive");
            g.dims[a] = static_cast<std::size_t>(d);
            g.spacing[a] = meta.at("spacing").at(a).get<double>();
            g.origin[a] = meta.at("origin").at(a).get<double>();
        }
        dtype = meta.at("dtype").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": malformed raw_json header: " + e.what());
    }
    std::size_t width = 0;
    if (dtype == "f32")
        width = 4;
    else if (dtype == "f64")
        width = 8;
    else
        throw IoError(path + ": unsupported dtype '" + dtype + "'");

    const auto payload_path = raw_payload_path(path);
    std::ifstream bin(payload_path, std::ios::binary);
    if (!bin) throw IoError("payload not found: " + payload_path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (bytes.size() != g.size() * width)
        throw IoError(path + ": dims/data-length mismatch: expected " + std::to_string(g.size() * width) +
                      " bytes, found " + std::to_string(bytes.size()));
    Volume vol(g);
    for (std::size_t n = 0; n < g.size(); ++n) {
        const double v = width == 4 ? static_cast<double>(detail::load_le<float>(bytes.data() + 4 * n))
                                    : detail::load_le<double>(bytes.data() + 8 * n);
        if (!std::isfinite(v)) throw IoError(path + ": non-finite voxel value");
        vol.data[n] = v;
    }
    return vol;
}

inline void save_raw_json(const Volume& vol, const std::string& path)
{
    nlohmann::json meta;
    meta["dims"] = {vol.geom.dims[0], vol.geom.dims[1], vol.geom.dims[2]};
    meta["spacing"] = {vol.geom.spacing[0], vol.geom.spacing[1], vol.geom.spacing[2]};
    meta["origin"] = {vol.geom.origin[0], vol.geom.origin[1], vol.geom.origin[2]};
    meta["dtype"] = "f32";
    {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path);
        out << meta.dump(2) << '\n';
    }
    std::vector<unsigned char> bytes(vol.size() * 4);
    for (std::size_t n = 0; n < vol.size(); ++n)
        detail::store_le<float>(bytes.data() + 4 * n, static_cast<float>(vol.data[n]));
    std::ofstream bin(raw_payload_path(path), std::ios::binary);
    if (!bin) throw IoError("cannot write " + raw_payload_path(path));
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!bin) throw IoError("write failed: " + raw_payload_path(path));
}

inline Volume load_volume(const std::string& path, VolumeFormat format)
{
    return format == VolumeFormat::nifti1 ? load_nifti(path) : load_raw_json(path);
}

inline Volume load_volume(const std::string& path) { return load_volume(path, format_from_path(path)); }

inline void save_volume(const Volume& vol, const std::string& path, VolumeFormat format)
{
    if (format == VolumeFormat::nifti1)
        save_nifti(vol, path);
    else
        save_raw_json(vol, path);
}

inline void save_volume(const Volume& vol, const std::string& path) { save_volume(vol, path, format_from_path(path)); }

/// Bounding boxes keyed by patient id, from CSV columns patient_id,x0,y0,z0,sx,sy,sz.
inline std::map<std::string, BoundingBox> load_bounding_boxes(const std::string& path)
{
    const auto t = csv::read_file(path);
    const std::array<const char*, 6> names{"x0", "y0", "z0", "sx", "sy", "sz"};
    const auto id_col = t.require_column("patient_id", path);
    std::array<std::size_t, 6> cols{};
    for (std::size_t i = 0; i < 6; ++i) cols[i] = t.require_column(names[i], path);

    std::map<std::string, BoundingBox> boxes;
    for (const auto& row : t.rows) {
        BoundingBox b;
        for (std::size_t i = 0; i < 6; ++i) {
            const auto v = csv::parse_double(row[cols[i]]);
            if (!v || *v < 0 || *v != std::floor(*v))
                throw IoError(path + ": bounding box field " + names[i] + " must be a non-negative integer");
            (i < 3 ? b.start[i] : b.size[i - 3]) = static_cast<std::size_t>(*v);
        }
        if (!boxes.emplace(row[id_col], b).second) throw IoError(path + ": duplicate patient id " + row[id_col]);
    }
    return boxes;
}

} // namespace hnpipe
