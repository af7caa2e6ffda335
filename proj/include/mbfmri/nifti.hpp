#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace mbfmri {

// NIfTI-1 header, 348 bytes. Only the fields this library uses are filled
// on write; everything else stays zero.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;    //   0: must be 348
    char data_type[10];         //   4: unused
    char db_name[18];           //  14: unused
    std::int32_t extents;       //  32: unused
    std::int16_t session_error; //  36: unused
    char regular;               //  38: unused
    char dim_info;              //  39
    std::int16_t dim[8];        //  40: dim[0] = rank, dim[1..] extents
    float intent_p1;            //  56
    float intent_p2;            //  60
    float intent_p3;            //  64
    std::int16_t intent_code;   //  68
    std::int16_t datatype;      //  70: 4 = int16, 16 = float32, 512 = uint16
    std::int16_t bitpix;        //  72
    std::int16_t slice_start;   //  74
    float pixdim[8];            //  76: pixdim[1..3] mm, pixdim[4] TR seconds
    float vox_offset;           // 108: data start (352 for single-file .nii)
    float scl_slope;            // 112
    float scl_inter;            // 116
    std::int16_t slice_end;     // 120
    char slice_code;            // 122
    char xyzt_units;            // 123
    float cal_max;              // 124
    float cal_min;              // 128
    float slice_duration;       // 132
    float toffset;              // 136
    std::int32_t glmax;         // 140
    std::int32_t glmin;         // 144
    char descrip[80];           // 148
    char aux_file[24];          // 228
    std::int16_t qform_code;    // 252
    std::int16_t sform_code;    // 254
    float quatern_b;            // 256
    float quatern_c;            // 260
    float quatern_d;            // 264
    float qoffset_x;            // 268
    float qoffset_y;            // 272
    float qoffset_z;            // 276
    float srow_x[4];            // 280
    float srow_y[4];            // 296
    float srow_z[4];            // 312
    char intent_name[16];       // 328
    char magic[4];              // 344: "n+1\0"
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

enum : std::int16_t {
    kNiftiInt16 = 4,
    kNiftiFloat32 = 16,
    kNiftiUint16 = 512,
};

// A volume held as doubles (already scl-scaled on read), plus the header
// facts the library needs.
struct NiftiVolume {
    std::array<int, 4> dim{1, 1, 1, 1};     // nx, ny, nz, nt
    std::array<double, 4> pixdim{1, 1, 1, 0};  // dx, dy, dz, TR
    std::array<double, 3> offset{0, 0, 0};  // qoffset, mm
    std::int16_t datatype = kNiftiFloat32;
    std::vector<double> data;               // x fastest, then y, z, t

    std::size_t size() const {
        return static_cast<std::size_t>(dim[0]) * dim[1] * dim[2] * dim[3];
    }
};

namespace detail {
inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    unsigned char byte;
    std::memcpy(&byte, &probe, 1);
    return byte == 1;
}
}  // namespace detail

// Single-file little-endian .nii with datatype int16, uint16 or float32;
// anything else is a MalformedHeader naming the offending field. Values
// are scaled by scl_slope/scl_inter when scl_slope != 0.
inline NiftiVolume read_nifti(const std::string& path) {
    if (!detail::host_is_little_endian())
        throw MalformedHeader("byte_order", "reader requires a little-endian host");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MalformedHeader("file", "cannot open '" + path + "'");

    Nifti1Header hdr{};
    in.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
    if (!in) throw MalformedHeader("file", "short read: '" + path + "' has no full header");
    if (hdr.sizeof_hdr != 348)
        throw MalformedHeader("sizeof_hdr", "expected 348, got " +
                                                std::to_string(hdr.sizeof_hdr) +
                                                " (wrong endianness or not NIfTI-1)");
    if (!(hdr.magic[0] == 'n' && hdr.magic[1] == '+' && hdr.magic[2] == '1' &&
          hdr.magic[3] == '\0'))
        throw MalformedHeader("magic", "expected 'n+1' single-file magic");
    if (hdr.dim[0] < 3 || hdr.dim[0] > 4)
        throw MalformedHeader("dim", "rank " + std::to_string(hdr.dim[0]) +
                                         " unsupported (need 3 or 4)");
    if (hdr.datatype != kNiftiInt16 && hdr.datatype != kNiftiUint16 &&
        hdr.datatype != kNiftiFloat32)
        throw MalformedHeader("datatype", "datatype " + std::to_string(hdr.datatype) +
                                              " unsupported (int16/uint16/float32 only)");
    const int expect_bitpix = hdr.datatype == kNiftiFloat32 ? 32 : 16;
    if (hdr.bitpix != expect_bitpix)
        throw MalformedHeader("bitpix", "bitpix " + std::to_string(hdr.bitpix) +
                                            " inconsistent with datatype");

    NiftiVolume vol;
    vol.datatype = hdr.datatype;
    for (int i = 0; i < 4; ++i) {
        if (i < hdr.dim[0]) {
            if (hdr.dim[i + 1] <= 0)
                throw MalformedHeader("dim", "dim[" + std::to_string(i + 1) +
                                                 "] = " + std::to_string(hdr.dim[i + 1]));
            vol.dim[i] = hdr.dim[i + 1];
        }
        vol.pixdim[i] = hdr.pixdim[i + 1];
    }
    vol.offset = {hdr.qoffset_x, hdr.qoffset_y, hdr.qoffset_z};
    if (hdr.vox_offset < 348.0f)
        throw MalformedHeader("vox_offset",
                              "vox_offset " + std::to_string(hdr.vox_offset) + " < 348");

    in.seekg(static_cast<std::streamoff>(hdr.vox_offset), std::ios::beg);
    const std::size_t n = vol.size();
    vol.data.resize(n);
    const double slope = hdr.scl_slope == 0.0f ? 1.0 : static_cast<double>(hdr.scl_slope);
    const double inter = hdr.scl_slope == 0.0f ? 0.0 : static_cast<double>(hdr.scl_inter);

    if (hdr.datatype == kNiftiFloat32) {
        std::vector<float> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
        if (!in) throw MalformedHeader("data", "short read of image data");
        for (std::size_t i = 0; i < n; ++i) vol.data[i] = slope * raw[i] + inter;
    } else if (hdr.datatype == kNiftiInt16) {
        std::vector<std::int16_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
        if (!in) throw MalformedHeader("data", "short read of image data");
        for (std::size_t i = 0; i < n; ++i) vol.data[i] = slope * raw[i] + inter;
    } else {
        std::vector<std::uint16_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
        if (!in) throw MalformedHeader("data", "short read of image data");
        for (std::size_t i = 0; i < n; ++i) vol.data[i] = slope * raw[i] + inter;
    }
    return vol;
}

// Writes vol.data in the requested datatype with no scl scaling (slope 1,
// inter 0); integer datatypes round to nearest. Raw integer payloads plus
// an explicit slope/inter can be written via the `slope`/`inter` overload
// arguments, which store data unchanged and record the scaling for readers.
inline void write_nifti(const std::string& path, const NiftiVolume& vol, float slope = 0.0f,
                        float inter = 0.0f) {
    if (!detail::host_is_little_endian())
        throw MalformedHeader("byte_order", "writer requires a little-endian host");
    if (vol.data.size() != vol.size())
        throw InvalidArgument("write_nifti: data size does not match dims");

    Nifti1Header hdr{};
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    const bool four_d = vol.dim[3] > 1;
    hdr.dim[0] = four_d ? 4 : 3;
    hdr.dim[1] = static_cast<std::int16_t>(vol.dim[0]);
    hdr.dim[2] = static_cast<std::int16_t>(vol.dim[1]);
    hdr.dim[3] = static_cast<std::int16_t>(vol.dim[2]);
    hdr.dim[4] = static_cast<std::int16_t>(four_d ? vol.dim[3] : 1);
    for (int i = 5; i < 8; ++i) hdr.dim[i] = 1;
    hdr.datatype = vol.datatype;
    hdr.bitpix = vol.datatype == kNiftiFloat32 ? 32 : 16;
    hdr.pixdim[0] = 1.0f;
    for (int i = 0; i < 4; ++i) hdr.pixdim[i + 1] = static_cast<float>(vol.pixdim[i]);
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = slope;
    hdr.scl_inter = inter;
    hdr.xyzt_units = 10;  // mm + seconds
    hdr.qform_code = 1;
    hdr.quatern_b = hdr.quatern_c = hdr.quatern_d = 0.0f;  // identity orientation
    hdr.qoffset_x = static_cast<float>(vol.offset[0]);
    hdr.qoffset_y = static_cast<float>(vol.offset[1]);
    hdr.qoffset_z = static_cast<float>(vol.offset[2]);
    hdr.srow_x[0] = static_cast<float>(vol.pixdim[0]);
    hdr.srow_y[1] = static_cast<float>(vol.pixdim[1]);
    hdr.srow_z[2] = static_cast<float>(vol.pixdim[2]);
    hdr.srow_x[3] = static_cast<float>(vol.offset[0]);
    hdr.srow_y[3] = static_cast<float>(vol.offset[1]);
    hdr.srow_z[3] = static_cast<float>(vol.offset[2]);
    hdr.sform_code = 1;
    hdr.magic[0] = 'n';
    hdr.magic[1] = '+';
    hdr.magic[2] = '1';
    hdr.magic[3] = '\0';

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("write_nifti: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    const char ext[4] = {0, 0, 0, 0};  // no header extensions
    out.write(ext, 4);

    const std::size_t n = vol.data.size();
    if (vol.datatype == kNiftiFloat32) {
        std::vector<float> raw(n);
        for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<float>(vol.data[i]);
        out.write(reinterpret_cast<const char*>(raw.data()),
                  static_cast<std::streamsize>(n * 4));
    } else if (vol.datatype == kNiftiInt16) {
        std::vector<std::int16_t> raw(n);
        for (std::size_t i = 0; i < n; ++i)
            raw[i] = static_cast<std::int16_t>(std::lround(vol.data[i]));
        out.write(reinterpret_cast<const char*>(raw.data()),
                  static_cast<std::streamsize>(n * 2));
    } else if (vol.datatype == kNiftiUint16) {
        std::vector<std::uint16_t> raw(n);
        for (std::size_t i = 0; i < n; ++i)
            raw[i] = static_cast<std::uint16_t>(std::lround(vol.data[i]));
        out.write(reinterpret_cast<const char*>(raw.data()),
                  static_cast<std::streamsize>(n * 2));
    } else {
        throw InvalidArgument("write_nifti: unsupported datatype " +
                              std::to_string(vol.datatype));
    }
    if (!out) throw InvalidArgument("write_nifti: write to '" + path + "' failed");
}

}  // namespace mbfmri
