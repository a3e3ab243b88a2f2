#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "cseg/binio.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// Physical geometry carried alongside every volume: voxel spacing in mm and
/// the temporal frame interval in seconds (0 when unknown).
struct Geometry {
  float dx = 1.0f, dy = 1.0f, dz = 1.0f;
  float frame_interval = 0.0f;

  bool operator==(const Geometry&) const = default;
};

namespace detail {

// [T,Z,H,W] with missing leading axes treated as 1. Works for rank 2..4.
template <typename T>
struct VolumeDims {
  int64_t t, z, h, w;
  explicit VolumeDims(const TensorT<T>& d) {
    const int64_t r = d.rank();
    w = d.dim(r - 1);
    h = d.dim(r - 2);
    z = r >= 3 ? d.dim(r - 3) : 1;
    t = r >= 4 ? d.dim(r - 4) : 1;
  }
};

}  // namespace detail

/// A grey-value image stack. data is row-major with axes [T?,Z?,H,W],
/// slowest-varying first; rank 2 to 4.
struct Volume {
  Tensor data;
  Geometry geom;

  int64_t frames() const { return detail::VolumeDims<float>(data).t; }
  int64_t slices() const { return detail::VolumeDims<float>(data).z; }
  int64_t height() const { return detail::VolumeDims<float>(data).h; }
  int64_t width() const { return detail::VolumeDims<float>(data).w; }
  const float* slice_ptr(int64_t t, int64_t z) const {
    detail::VolumeDims<float> d(data);
    return data.ptr() + (t * d.z + z) * d.h * d.w;
  }
  float* slice_ptr(int64_t t, int64_t z) {
    detail::VolumeDims<float> d(data);
    return data.ptr() + (t * d.z + z) * d.h * d.w;
  }
};

/// Integer class labels over the same grid as a paired Volume.
struct LabelVolume {
  TensorT<int32_t> data;
  Geometry geom;

  int64_t frames() const { return detail::VolumeDims<int32_t>(data).t; }
  int64_t slices() const { return detail::VolumeDims<int32_t>(data).z; }
  int64_t height() const { return detail::VolumeDims<int32_t>(data).h; }
  int64_t width() const { return detail::VolumeDims<int32_t>(data).w; }
  const int32_t* slice_ptr(int64_t t, int64_t z) const {
    detail::VolumeDims<int32_t> d(data);
    return data.ptr() + (t * d.z + z) * d.h * d.w;
  }
  int32_t* slice_ptr(int64_t t, int64_t z) {
    detail::VolumeDims<int32_t> d(data);
    return data.ptr() + (t * d.z + z) * d.h * d.w;
  }
};

constexpr char kContainerMagic[4] = {'C', 'S', 'G', '1'};
constexpr uint8_t kDtypeFloat32 = 0;
constexpr uint8_t kDtypeInt16 = 1;

namespace detail {

inline void check_container_rank(int64_t rank) {
  if (rank < 2 || rank > 4)
    throw ValidationError("container: rank must be 2..4, got " + std::to_string(rank));
}

template <typename T>
void write_container_header(ByteWriter& w, const TensorT<T>& t, const Geometry& g, uint8_t dtype) {
  check_container_rank(t.rank());
  w.raw(kContainerMagic, 4);
  w.u8(dtype);
  w.u8(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape) w.u64(static_cast<uint64_t>(d));
  w.f32(g.dx);
  w.f32(g.dy);
  w.f32(g.dz);
  w.f32(g.frame_interval);
}

struct ContainerHeader {
  uint8_t dtype;
  std::vector<int64_t> dims;
  Geometry geom;
  uint64_t count;
};

inline ContainerHeader read_container_header(ByteReader& r, const std::string& path) {
  ContainerHeader h;
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kContainerMagic, 4) != 0)
    throw FormatError("container '" + path + "': bad magic");
  h.dtype = r.u8();
  if (h.dtype != kDtypeFloat32 && h.dtype != kDtypeInt16)
    throw FormatError("container '" + path + "': unknown dtype code " + std::to_string(h.dtype));
  const uint8_t rank = r.u8();
  if (rank < 2 || rank > 4)
    throw FormatError("container '" + path + "': rank must be 2..4, got " + std::to_string(rank));
  h.count = 1;
  for (int i = 0; i < rank; ++i) {
    const uint64_t d = r.u64();
    if (d == 0 || d > (1ull << 32))
      throw FormatError("container '" + path + "': implausible dimension");
    h.dims.push_back(static_cast<int64_t>(d));
    h.count *= d;
  }
  if (h.count > (1ull << 31)) throw FormatError("container '" + path + "': implausible size");
  h.geom.dx = r.f32();
  h.geom.dy = r.f32();
  h.geom.dz = r.f32();
  h.geom.frame_interval = r.f32();
  return h;
}

}  // namespace detail

inline void write_container(const std::string& path, const Volume& v) {
  detail::ByteWriter w;
  detail::write_container_header(w, v.data, v.geom, kDtypeFloat32);
  w.raw(v.data.ptr(), v.data.data.size() * sizeof(float));
  detail::write_file(path, w.buf);
}

inline void write_container(const std::string& path, const LabelVolume& v) {
  detail::ByteWriter w;
  detail::write_container_header(w, v.data, v.geom, kDtypeInt16);
  for (int32_t x : v.data.data) {
    if (x < -32768 || x > 32767)
      throw ValidationError("container: label " + std::to_string(x) + " does not fit int16");
    w.u16(static_cast<uint16_t>(static_cast<int16_t>(x)));
  }
  detail::write_file(path, w.buf);
}

/// Reads either kind of container; the alternative is decided by the dtype
/// byte. The payload length must match the header dims exactly.
inline std::variant<Volume, LabelVolume> read_container(const std::string& path) {
  const std::string buf = detail::read_file(path);
  detail::ByteReader r{buf, 0, "container '" + path + "'"};
  detail::ContainerHeader h = detail::read_container_header(r, path);
  const size_t elem = h.dtype == kDtypeFloat32 ? 4 : 2;
  if (buf.size() - r.pos != h.count * elem)
    throw FormatError("container '" + path + "': payload length mismatch (" +
                      std::to_string(buf.size() - r.pos) + " bytes for " +
                      std::to_string(h.count) + " elements)");
  if (h.dtype == kDtypeFloat32) {
    Volume v;
    v.geom = h.geom;
    v.data = Tensor(h.dims);
    r.raw(v.data.ptr(), h.count * 4);
    return v;
  }
  LabelVolume v;
  v.geom = h.geom;
  v.data = TensorT<int32_t>(h.dims);
  for (uint64_t i = 0; i < h.count; ++i)
    v.data.data[i] = static_cast<int16_t>(r.u16());
  return v;
}

inline Volume read_volume(const std::string& path) {
  auto v = read_container(path);
  if (!std::holds_alternative<Volume>(v))
    throw FormatError("container '" + path + "': expected a float32 image container");
  return std::get<Volume>(std::move(v));
}

inline LabelVolume read_labels(const std::string& path) {
  auto v = read_container(path);
  if (!std::holds_alternative<LabelVolume>(v))
    throw FormatError("container '" + path + "': expected an int16 label container");
  return std::get<LabelVolume>(std::move(v));
}

}  // namespace cseg
