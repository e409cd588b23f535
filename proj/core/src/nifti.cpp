#include "jacreg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include "jacreg/errors.hpp"

namespace jacreg::nifti {

namespace {

struct Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int32_t kHeaderSize = 348;
constexpr float kDataOffset = 352.0f;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  if (bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw FormatError("cannot open gzip stream " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n = 0;
    while ((n = gzread(gz, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    int err = 0;
    const char* msg = gzerror(gz, &err);
    const bool failed = n < 0 || (err != Z_OK && err != Z_BUF_ERROR);
    const std::string detail = msg ? msg : "";
    gzclose(gz);
    if (failed) throw FormatError("corrupt gzip stream in " + path + ": " + detail);
    return out;
  }
  return bytes;
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  const bool gzip = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gzip) {
    gzFile gz = gzopen(path.c_str(), "wb6");
    if (!gz) throw DataError("cannot write " + path);
    const auto n = gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(gz);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK) throw DataError("failed writing " + path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path);
}

struct Decoded {
  Header hdr;
  Grid3 grid;
  int components = 1;  // dim[4]
  std::vector<double> values;  // scaled, x-fastest, component-major
  std::string description;
};

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case static_cast<std::int16_t>(DataType::uint8): return 1;
    case static_cast<std::int16_t>(DataType::int16): return 2;
    case static_cast<std::int16_t>(DataType::float32): return 4;
    default: return 0;
  }
}

Decoded decode(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize))
    throw FormatError(path + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
  Decoded d;
  std::memcpy(&d.hdr, bytes.data(), sizeof(Header));
  const Header& h = d.hdr;
  if (h.sizeof_hdr != kHeaderSize) {
    std::int32_t swapped = 0;
    const auto* p = reinterpret_cast<const unsigned char*>(&h.sizeof_hdr);
    swapped = (p[0] << 24) | (p[1] << 16) | (p[2] << 8) | p[3];
    if (swapped == kHeaderSize) throw FormatError(path + ": big-endian NIfTI files are not supported");
    throw FormatError(path + ": not a NIfTI-1 file (sizeof_hdr = " + std::to_string(h.sizeof_hdr) + ")");
  }
  if (std::memcmp(h.magic, "n+1\0", 4) != 0) {
    if (std::memcmp(h.magic, "ni1\0", 4) == 0)
      throw FormatError(path + ": bad magic string: header/image pairs (ni1) are not supported");
    throw FormatError(path + ": bad magic string, expected \"n+1\"");
  }
  const int bpv = bytes_per_voxel(h.datatype);
  if (bpv == 0)
    throw FormatError(path + ": unsupported datatype " + std::to_string(h.datatype) +
                      " (expected uint8, int16 or float32)");
  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw FormatError(path + ": invalid dim[0] = " + std::to_string(ndim));
  std::int64_t extra = 1;
  for (int a = 4; a <= ndim; ++a) extra *= std::max<std::int16_t>(h.dim[a], 1);
  d.description.assign(h.descrip, strnlen(h.descrip, sizeof(h.descrip)));
  if (extra != 1) {
    const bool is_field = ndim >= 4 && h.dim[4] == 3 && extra == 3;
    if (!is_field)
      throw FormatError(path + ": " + std::to_string(ndim) +
                        "-dimensional image with non-singleton extra dimensions");
    d.components = 3;
  }
  for (int a = 0; a < 3; ++a) {
    d.grid.dims[a] = a < ndim ? h.dim[a + 1] : 1;
    d.grid.spacing[a] = h.pixdim[a + 1];
  }
  if (h.qform_code > 0) {
    if (h.quatern_b != 0.0f || h.quatern_c != 0.0f || h.quatern_d != 0.0f || h.pixdim[0] < 0.0f)
      throw FormatError(path + ": oblique or flipped qform affines are not supported");
    d.grid.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
  } else if (h.sform_code > 0) {
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (r != c && rows[r][c] != 0.0f)
          throw FormatError(path + ": oblique sform affines are not supported");
      }
      if (!(rows[r][r] > 0.0f)) throw FormatError(path + ": flipped sform affines are not supported");
      d.grid.spacing[r] = rows[r][r];
      d.grid.origin[r] = rows[r][3];
    }
  }
  try {
    d.grid.validate();
  } catch (const DataError& e) {
    throw FormatError(path + ": " + e.what());
  }

  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t count = static_cast<std::size_t>(d.grid.size()) * d.components;
  const std::size_t need = offset + count * static_cast<std::size_t>(bpv);
  if (h.vox_offset < kHeaderSize || bytes.size() < need)
    throw FormatError(path + ": truncated payload (" + std::to_string(bytes.size()) + " of " +
                      std::to_string(need) + " bytes)");
  double slope = h.scl_slope;
  double inter = h.scl_inter;
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;
  d.values.resize(count);
  const unsigned char* src = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i) {
    double raw = 0.0;
    switch (h.datatype) {
      case 2: raw = src[i]; break;
      case 4: {
        std::int16_t v;
        std::memcpy(&v, src + 2 * i, 2);
        raw = v;
        break;
      }
      default: {
        float v;
        std::memcpy(&v, src + 4 * i, 4);
        raw = v;
        break;
      }
    }
    d.values[i] = slope == 1.0 && inter == 0.0 ? raw : raw * slope + inter;
  }
  return d;
}

Header make_header(const Grid3& g, DataType type, int components, const std::string& descrip) {
  Header h{};
  h.sizeof_hdr = kHeaderSize;
  h.regular = 'r';
  h.dim[0] = components > 1 ? 4 : 3;
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] > std::numeric_limits<std::int16_t>::max())
      throw DataError("grid too large for NIfTI-1: " + describe(g));
    h.dim[a + 1] = static_cast<std::int16_t>(g.dims[a]);
  }
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  h.dim[4] = static_cast<std::int16_t>(components);
  h.datatype = static_cast<std::int16_t>(type);
  h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(h.datatype));
  h.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(g.spacing[a]);
  for (int a = 4; a < 8; ++a) h.pixdim[a] = 1.0f;
  h.vox_offset = kDataOffset;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // mm
  std::strncpy(h.descrip, descrip.c_str(), sizeof(h.descrip) - 1);
  h.qform_code = 1;
  h.sform_code = 1;
  h.qoffset_x = static_cast<float>(g.origin[0]);
  h.qoffset_y = static_cast<float>(g.origin[1]);
  h.qoffset_z = static_cast<float>(g.origin[2]);
  h.srow_x[0] = static_cast<float>(g.spacing[0]);
  h.srow_y[1] = static_cast<float>(g.spacing[1]);
  h.srow_z[2] = static_cast<float>(g.spacing[2]);
  h.srow_x[3] = h.qoffset_x;
  h.srow_y[3] = h.qoffset_y;
  h.srow_z[3] = h.qoffset_z;
  std::memcpy(h.magic, "n+1\0", 4);
  return h;
}

void encode(const Header& h, const std::vector<double>& values, const std::string& path) {
  const int bpv = bytes_per_voxel(h.datatype);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(kDataOffset) + values.size() * bpv, 0);
  std::memcpy(bytes.data(), &h, sizeof(Header));
  unsigned char* dst = bytes.data() + static_cast<std::size_t>(kDataOffset);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    switch (h.datatype) {
      case 2: dst[i] = static_cast<unsigned char>(std::clamp(std::nearbyint(v), 0.0, 255.0)); break;
      case 4: {
        const auto s = static_cast<std::int16_t>(std::clamp(std::nearbyint(v), -32768.0, 32767.0));
        std::memcpy(dst + 2 * i, &s, 2);
        break;
      }
      default: {
        const auto f = static_cast<float>(v);
        std::memcpy(dst + 4 * i, &f, 4);
        break;
      }
    }
  }
  write_file(path, bytes);
}

}  // namespace

Volume3 load_volume(const std::string& path, IntensityUnits units) {
  Decoded d = decode(path);
  if (d.components != 1) {
    if (d.description.rfind("disp:", 0) == 0)
      throw FormatError(path + ": vector field, expected scalar");
    throw FormatError(path + ": multi-component image, expected scalar");
  }
  if (units == IntensityUnits::hounsfield) {
    for (auto& v : d.values) v = std::clamp(v, -1024.0, 3071.0);
  }
  return Volume3(d.grid, std::move(d.values), units);
}

LabelMask load_mask(const std::string& path) {
  Decoded d = decode(path);
  if (d.components != 1) throw FormatError(path + ": vector field, expected label mask");
  std::vector<std::int32_t> labels(d.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = d.values[i];
    if (!(v >= 0.0) || v != std::floor(v) || v >= 2147483648.0)
      throw FormatError(path + ": label mask contains a non-integer or negative value at index " +
                        std::to_string(i));
    labels[i] = static_cast<std::int32_t>(v);
  }
  return LabelMask(d.grid, std::move(labels));
}

DisplacementField load_field(const std::string& path) {
  Decoded d = decode(path);
  if (d.components != 3) throw FormatError(path + ": scalar image, expected displacement field");
  bool mm = false;
  if (d.description.rfind("disp:mm", 0) == 0) {
    mm = true;
  } else if (d.description.rfind("disp:voxel", 0) != 0) {
    throw FormatError(path + ": displacement units missing (description must be disp:voxel or disp:mm)");
  }
  DisplacementField f(d.grid);
  const auto n = static_cast<std::size_t>(d.grid.size());
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = d.values[c * n + i];
      f.u[c][i] = mm ? v / d.grid.spacing[c] : v;
    }
  }
  f.check_finite();
  return f;
}

void save(const Volume3& vol, const std::string& path, DataType type) {
  encode(make_header(vol.grid(), type, 1, ""), vol.data(), path);
}

void save(const LabelMask& mask, const std::string& path) {
  const auto mx = mask.max_label();
  const DataType type = mx <= 255 ? DataType::uint8
                        : mx <= 32767 ? DataType::int16
                                      : DataType::float32;
  if (type == DataType::float32 && mx > (1 << 24))
    throw DataError("label " + std::to_string(mx) + " cannot be stored exactly");
  std::vector<double> values(mask.labels().begin(), mask.labels().end());
  encode(make_header(mask.grid(), type, 1, ""), values, path);
}

void save(const DisplacementField& field, const std::string& path) {
  const auto n = static_cast<std::size_t>(field.size());
  std::vector<double> values(3 * n);
  for (int c = 0; c < 3; ++c) std::copy(field.u[c].begin(), field.u[c].end(), values.begin() + c * n);
  encode(make_header(field.grid, DataType::float32, 3, "disp:voxel"), values, path);
}

}  // namespace jacreg::nifti
