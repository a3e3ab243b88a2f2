#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cseg/binio.hpp"
#include "cseg/network.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

namespace detail {

inline void write_record(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u16(static_cast<uint16_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u8(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape) w.u64(static_cast<uint64_t>(d));
  w.raw(t.ptr(), t.data.size() * sizeof(float));
}

struct Record {
  std::string name;
  std::vector<int64_t> dims;
  std::vector<float> data;
};

inline Record read_record(ByteReader& r) {
  Record rec;
  const uint16_t nl = r.u16();
  rec.name = r.bytes(nl);
  const uint8_t rank = r.u8();
  if (rank == 0 || rank > 8) throw FormatError("checkpoint: implausible tensor rank");
  uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const uint64_t d = r.u64();
    if (d == 0 || d > (1ull << 32)) throw FormatError("checkpoint: implausible dimension");
    rec.dims.push_back(static_cast<int64_t>(d));
    count *= d;
  }
  if (count > (1ull << 31)) throw FormatError("checkpoint: implausible tensor size");
  rec.data.resize(count);
  r.raw(rec.data.data(), count * sizeof(float));
  return rec;
}

}  // namespace detail

constexpr char kCheckpointMagic[4] = {'F', 'C', 'N', 'C'};
constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Fcn& net, const std::string& path) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(net.K));
  w.u64(net.params.size());
  for (const auto& p : net.params) detail::write_record(w, p.name, p.value);
  for (size_t i = 0; i < net.stats.size(); ++i) {
    detail::write_record(w, net.stat_names[i] + ".bn.mean", net.stats[i].mean);
    detail::write_record(w, net.stat_names[i] + ".bn.var", net.stats[i].var);
  }
  w.u64(net.trained_iterations);
  detail::write_file(path, w.buf);
}

/// Loads a checkpoint into a freshly built network of the stored K. When
/// expected_K >= 0 a mismatch is rejected before any state is constructed.
/// Nothing is returned partially: any malformed content throws.
inline Fcn load_checkpoint(const std::string& path, int expected_K = -1) {
  const std::string buf = detail::read_file(path);
  detail::ByteReader r{buf, 0, "checkpoint '" + path + "'"};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint '" + path + "': bad magic");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  const uint32_t K = r.u32();
  if (K < 2 || K > 64) throw FormatError("checkpoint '" + path + "': implausible K");
  if (expected_K >= 0 && static_cast<int>(K) != expected_K)
    throw CheckpointError("checkpoint '" + path + "' was trained with K=" + std::to_string(K) +
                          " but K=" + std::to_string(expected_K) + " is configured");

  NetworkConfig cfg;
  cfg.K = static_cast<int>(K);
  Fcn net = build_network<float>(cfg, 0);

  const uint64_t pcount = r.u64();
  if (pcount != net.params.size())
    throw CheckpointError("checkpoint '" + path + "': expected " +
                          std::to_string(net.params.size()) + " parameters, found " +
                          std::to_string(pcount));
  for (uint64_t i = 0; i < pcount; ++i) {
    detail::Record rec = detail::read_record(r);
    Param* p = net.find(rec.name);
    if (!p) throw CheckpointError("checkpoint '" + path + "': unknown parameter '" + rec.name + "'");
    if (rec.dims != p->value.shape)
      throw CheckpointError("checkpoint '" + path + "': parameter '" + rec.name +
                            "' has shape " + Tensor::shape_str(rec.dims) + ", expected " +
                            p->value.shape_str());
    p->value.data = std::move(rec.data);
  }

  // running-stat records fill the gap up to the trailing iteration counter
  size_t filled = 0;
  while (r.pos + 8 < buf.size()) {
    detail::Record rec = detail::read_record(r);
    bool matched = false;
    for (size_t i = 0; i < net.stat_names.size(); ++i) {
      Tensor* dst = nullptr;
      if (rec.name == net.stat_names[i] + ".bn.mean")
        dst = &net.stats[i].mean;
      else if (rec.name == net.stat_names[i] + ".bn.var")
        dst = &net.stats[i].var;
      if (dst) {
        if (rec.dims != dst->shape)
          throw CheckpointError("checkpoint '" + path + "': running stat '" + rec.name +
                                "' has wrong shape");
        dst->data = std::move(rec.data);
        matched = true;
        ++filled;
        break;
      }
    }
    if (!matched)
      throw CheckpointError("checkpoint '" + path + "': unknown running stat '" + rec.name + "'");
  }
  if (filled != 2 * net.stats.size())
    throw CheckpointError("checkpoint '" + path + "': incomplete running statistics");
  net.trained_iterations = r.u64();
  net.mark_stats_initialised(net.trained_iterations > 0);
  return net;
}

}  // namespace cseg
