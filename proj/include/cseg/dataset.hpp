#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cseg/container.hpp"
#include "cseg/loss.hpp"
#include "cseg/preprocess.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// One manifest row: which slice of which container belongs to which split.
struct ManifestRow {
  std::string path;
  int64_t frame_index = 0;
  int64_t slice_index = 0;
  std::string split;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open manifest for writing: " + path);
  out << "path,frame_index,slice_index,split\n";
  for (const auto& r : rows)
    out << r.path << ',' << r.frame_index << ',' << r.slice_index << ',' << r.split << '\n';
  if (!out) throw IoError("error writing manifest: " + path);
}

inline std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  bool first = true;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line == "path,frame_index,slice_index,split") continue;
    }
    std::istringstream ss(line);
    ManifestRow r;
    std::string frame, slice;
    if (!std::getline(ss, r.path, ',') || !std::getline(ss, frame, ',') ||
        !std::getline(ss, slice, ','))
      throw FormatError("manifest " + path + " line " + std::to_string(lineno) +
                        ": want path,frame_index,slice_index,split");
    std::getline(ss, r.split, ',');
    try {
      r.frame_index = std::stoll(frame);
      r.slice_index = std::stoll(slice);
    } catch (const std::exception&) {
      throw FormatError("manifest " + path + " line " + std::to_string(lineno) +
                        ": non-numeric frame or slice index");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Label container convention: the labels for foo.csg live in foo_label.csg.
inline std::string label_path_for(const std::string& image_path) {
  std::filesystem::path p(image_path);
  std::filesystem::path q = p.parent_path() / (p.stem().string() + "_label" + p.extension().string());
  return q.string();
}

/// One training slice, already cropped to the network size and normalised.
/// Labels are stored as uint8 to keep large cohorts in memory.
struct SliceSample {
  std::vector<float> image;
  std::vector<uint8_t> labels;
  std::string subject;
  int64_t frame = 0;
  int64_t slice = 0;
  std::string split;
};

struct SliceDataset {
  int64_t side = 0;
  std::vector<SliceSample> samples;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

/// Appends every (frame, slice) plane of one subject's stack, preprocessed.
inline void add_volume(SliceDataset& ds, const Volume& vol, const LabelVolume& lab,
                       const std::string& subject, const std::string& split,
                       int64_t side = 192) {
  if (ds.side == 0) ds.side = side;
  if (ds.side != side) throw ConfigError("dataset: mixed slice sizes");
  if (vol.frames() != lab.frames() || vol.slices() != lab.slices() ||
      vol.height() != lab.height() || vol.width() != lab.width())
    throw ValidationError("dataset: image and label grids differ for subject " + subject);

  Volume v = normalize_intensity(crop_or_pad(vol, side));
  LabelVolume l = crop_or_pad(lab, side);

  const int64_t HW = side * side;
  for (int64_t t = 0; t < v.frames(); ++t) {
    for (int64_t z = 0; z < v.slices(); ++z) {
      SliceSample s;
      s.subject = subject;
      s.frame = t;
      s.slice = z;
      s.split = split;
      const float* ip = v.slice_ptr(t, z);
      const int32_t* lp = l.slice_ptr(t, z);
      s.image.assign(ip, ip + HW);
      s.labels.resize(static_cast<size_t>(HW));
      for (int64_t i = 0; i < HW; ++i) {
        if (lp[i] < 0 || lp[i] > 255)
          throw ValidationError("dataset: label value " + std::to_string(lp[i]) +
                                " out of range for subject " + subject);
        s.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(lp[i]);
      }
      ds.samples.push_back(std::move(s));
    }
  }
}

/// Loads the slices listed in a manifest. split_filter "" keeps every row.
/// Each container is read once; the subject id is the file stem.
inline SliceDataset load_dataset(const std::string& manifest_path,
                                 const std::string& split_filter = "", int64_t side = 192) {
  const auto rows = read_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  SliceDataset ds;
  ds.side = side;
  const int64_t HW = side * side;

  std::string cur_path;
  Volume vol;
  LabelVolume lab;
  CropInfo unused;
  for (const auto& r : rows) {
    if (!r.split.empty() && !split_filter.empty() && r.split != split_filter) continue;
    if (r.path != cur_path) {
      std::filesystem::path p(r.path);
      if (p.is_relative()) p = base / p;
      vol = read_volume(p.string());
      lab = read_labels(label_path_for(p.string()));
      if (vol.frames() != lab.frames() || vol.slices() != lab.slices() ||
          vol.height() != lab.height() || vol.width() != lab.width())
        throw ValidationError("dataset: image and label grids differ in " + r.path);
      vol = normalize_intensity(crop_or_pad(vol, side, &unused));
      lab = crop_or_pad(lab, side);
      cur_path = r.path;
    }
    if (r.frame_index < 0 || r.frame_index >= vol.frames() || r.slice_index < 0 ||
        r.slice_index >= vol.slices())
      throw ValidationError("dataset: manifest indexes frame " + std::to_string(r.frame_index) +
                            " slice " + std::to_string(r.slice_index) + " outside " + r.path);

    SliceSample s;
    s.subject = std::filesystem::path(r.path).stem().string();
    s.frame = r.frame_index;
    s.slice = r.slice_index;
    s.split = r.split;
    const float* ip = vol.slice_ptr(r.frame_index, r.slice_index);
    const int32_t* lp = lab.slice_ptr(r.frame_index, r.slice_index);
    s.image.assign(ip, ip + HW);
    s.labels.resize(static_cast<size_t>(HW));
    for (int64_t i = 0; i < HW; ++i) {
      if (lp[i] < 0 || lp[i] > 255)
        throw ValidationError("dataset: label value out of range in " + r.path);
      s.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(lp[i]);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// A ready network batch: images [N,1,S,S], labels [N,S,S].
struct Batch {
  Tensor images;
  LabelMap labels;
};

/// Uniform-with-replacement index draws; split out from batch assembly so the
/// sampling sequence is testable on its own.
inline std::vector<int64_t> sample_indices(const SliceDataset& ds, int64_t count, Rng& rng) {
  if (ds.samples.empty()) throw ConfigError("sample_minibatch: empty dataset");
  std::vector<int64_t> idx(static_cast<size_t>(count));
  for (auto& i : idx) i = rng.below(ds.size());
  return idx;
}

inline Batch gather_batch(const SliceDataset& ds, const std::vector<int64_t>& idx) {
  const int64_t N = static_cast<int64_t>(idx.size());
  const int64_t S = ds.side;
  Batch b{Tensor({N, 1, S, S}), LabelMap({N, S, S})};
  for (int64_t n = 0; n < N; ++n) {
    const SliceSample& s = ds.samples[static_cast<size_t>(idx[static_cast<size_t>(n)])];
    std::copy(s.image.begin(), s.image.end(), b.images.ptr() + n * S * S);
    int32_t* lp = b.labels.ptr() + n * S * S;
    for (int64_t i = 0; i < S * S; ++i) lp[i] = s.labels[static_cast<size_t>(i)];
  }
  return b;
}

inline Batch sample_minibatch(const SliceDataset& ds, int64_t size, Rng& rng) {
  return gather_batch(ds, sample_indices(ds, size, rng));
}

}  // namespace cseg
