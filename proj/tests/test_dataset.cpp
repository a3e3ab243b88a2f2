#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cseg/container.hpp"
#include "cseg/dataset.hpp"
#include "cseg/phantom.hpp"

using cseg::Batch;
using cseg::ConfigError;
using cseg::FormatError;
using cseg::IoError;
using cseg::LabelVolume;
using cseg::ManifestRow;
using cseg::PhantomSpec;
using cseg::Rng;
using cseg::SliceDataset;
using cseg::SliceSample;
using cseg::ValidationError;
using cseg::Volume;

namespace {

namespace fs = std::filesystem;

PhantomSpec small_spec(uint64_t seed) {
  PhantomSpec s;
  s.size = 64;
  s.frames = 2;
  s.slices = 2;
  s.r_ed = 12;
  s.r_es = 6;
  s.myo_thickness = 4;
  s.rv_radius = 8;
  s.rv_offset = 11;
  s.seed = seed;
  return s;
}

// Builds a two-subject cohort on disk and returns the manifest path.
fs::path make_cohort(const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<ManifestRow> rows;
  for (int subj = 1; subj <= 2; ++subj) {
    auto [vol, lab] = cseg::generate_phantom(small_spec(static_cast<uint64_t>(subj)));
    const std::string name = "s" + std::to_string(subj) + ".csg";
    cseg::write_container((dir / name).string(), vol);
    cseg::write_container((dir / ("s" + std::to_string(subj) + "_label.csg")).string(), lab);
    const std::string split = subj == 1 ? "train" : "val";
    for (int64_t t = 0; t < 2; ++t)
      for (int64_t z = 0; z < 2; ++z) rows.push_back({name, t, z, split});
  }
  const fs::path manifest = dir / "manifest.csv";
  cseg::write_manifest(manifest.string(), rows);
  return manifest;
}

fs::path unique_dir(const char* tag) {
  return fs::temp_directory_path() / (std::string("cseg_dataset_") + tag);
}

SliceDataset tiny_dataset(int64_t n_samples, int64_t side) {
  SliceDataset ds;
  ds.side = side;
  for (int64_t k = 0; k < n_samples; ++k) {
    SliceSample s;
    s.subject = "t" + std::to_string(k);
    s.image.assign(static_cast<size_t>(side * side), static_cast<float>(k) * 0.1f);
    s.labels.assign(static_cast<size_t>(side * side), static_cast<uint8_t>(k));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("manifest round-trips through CSV") {
  const fs::path dir = unique_dir("manifest");
  fs::create_directories(dir);
  std::vector<ManifestRow> rows = {
      {"a.csg", 0, 0, "train"}, {"a.csg", 0, 1, "train"}, {"b.csg", 3, 2, "val"}};
  const fs::path p = dir / "m.csv";
  cseg::write_manifest(p.string(), rows);

  auto back = cseg::read_manifest(p.string());
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(back[i].path == rows[i].path);
    REQUIRE(back[i].frame_index == rows[i].frame_index);
    REQUIRE(back[i].slice_index == rows[i].slice_index);
    REQUIRE(back[i].split == rows[i].split);
  }
}

TEST_CASE("malformed manifests are rejected") {
  const fs::path dir = unique_dir("badmanifest");
  fs::create_directories(dir);
  const fs::path p = dir / "bad.csv";

  SECTION("too few columns") {
    std::ofstream(p) << "path,frame_index,slice_index,split\nfoo.csg,1\n";
    REQUIRE_THROWS_AS(cseg::read_manifest(p.string()), FormatError);
  }
  SECTION("non-numeric index") {
    std::ofstream(p) << "path,frame_index,slice_index,split\nfoo.csg,x,0,train\n";
    REQUIRE_THROWS_AS(cseg::read_manifest(p.string()), FormatError);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(cseg::read_manifest((dir / "absent.csv").string()), IoError);
  }
}

TEST_CASE("label path convention") {
  REQUIRE(cseg::label_path_for("foo.csg") == "foo_label.csg");
  REQUIRE(cseg::label_path_for("/data/x/subj01.csg") ==
          (fs::path("/data/x") / "subj01_label.csg").string());
}

TEST_CASE("load_dataset reads, filters, crops and normalises") {
  const fs::path dir = unique_dir("cohort");
  const fs::path manifest = make_cohort(dir);

  SliceDataset train = cseg::load_dataset(manifest.string(), "train", 64);
  REQUIRE(train.size() == 4);
  REQUIRE(train.side == 64);
  for (const auto& s : train.samples) REQUIRE(s.subject == "s1");
  REQUIRE(train.samples[0].frame == 0);
  REQUIRE(train.samples[0].slice == 0);
  REQUIRE(train.samples[3].frame == 1);
  REQUIRE(train.samples[3].slice == 1);

  // per-slice normalisation attains 0 and 1
  for (const auto& s : train.samples) {
    float lo = 1e9f, hi = -1e9f;
    for (float v : s.image) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    REQUIRE(lo == 0.0f);
    REQUIRE(hi == 1.0f);
  }

  // labels survive untouched at native size
  auto [vol, lab] = cseg::generate_phantom(small_spec(1));
  const int32_t* want = lab.slice_ptr(1, 0);
  const auto& got = train.samples[2];  // frame 1, slice 0
  REQUIRE(got.frame == 1);
  int64_t mismatches = 0;
  for (int64_t i = 0; i < 64 * 64; ++i) mismatches += got.labels[static_cast<size_t>(i)] != want[i];
  REQUIRE(mismatches == 0);

  SliceDataset all = cseg::load_dataset(manifest.string(), "", 64);
  REQUIRE(all.size() == 8);
  std::set<std::string> subjects;
  for (const auto& s : all.samples) subjects.insert(s.subject);
  REQUIRE(subjects == std::set<std::string>{"s1", "s2"});
}

TEST_CASE("load_dataset crops to the requested side") {
  const fs::path dir = unique_dir("crop");
  const fs::path manifest = make_cohort(dir);

  SliceDataset ds = cseg::load_dataset(manifest.string(), "train", 48);
  REQUIRE(ds.side == 48);
  auto [vol, lab] = cseg::generate_phantom(small_spec(1));
  const int32_t* want = lab.slice_ptr(0, 0);
  int64_t mismatches = 0;
  for (int64_t y = 0; y < 48; ++y)
    for (int64_t x = 0; x < 48; ++x)
      mismatches += ds.samples[0].labels[static_cast<size_t>(y * 48 + x)] !=
                    want[(y + 8) * 64 + (x + 8)];
  REQUIRE(mismatches == 0);
}

TEST_CASE("load_dataset validates indices and label files") {
  const fs::path dir = unique_dir("validate");
  const fs::path manifest = make_cohort(dir);

  SECTION("frame out of range") {
    std::vector<ManifestRow> rows = {{"s1.csg", 5, 0, "train"}};
    const fs::path bad = dir / "bad.csv";
    cseg::write_manifest(bad.string(), rows);
    REQUIRE_THROWS_AS(cseg::load_dataset(bad.string(), "", 64), ValidationError);
  }
  SECTION("missing label container") {
    auto [vol, lab] = cseg::generate_phantom(small_spec(3));
    cseg::write_container((dir / "s3.csg").string(), vol);  // no s3_label.csg
    std::vector<ManifestRow> rows = {{"s3.csg", 0, 0, "train"}};
    const fs::path bad = dir / "bad2.csv";
    cseg::write_manifest(bad.string(), rows);
    REQUIRE_THROWS_AS(cseg::load_dataset(bad.string(), "", 64), IoError);
  }
}

TEST_CASE("add_volume guards shape and label range") {
  auto [vol, lab] = cseg::generate_phantom(small_spec(1));

  SECTION("grid mismatch") {
    SliceDataset ds;
    LabelVolume wrong = lab;
    wrong.data = cseg::TensorT<int32_t>({2, 2, 32, 32});
    REQUIRE_THROWS_AS(cseg::add_volume(ds, vol, wrong, "s", "train", 64), ValidationError);
  }
  SECTION("mixed sides") {
    SliceDataset ds;
    cseg::add_volume(ds, vol, lab, "s", "train", 64);
    REQUIRE_THROWS_AS(cseg::add_volume(ds, vol, lab, "s", "train", 48), ConfigError);
  }
  SECTION("label out of uint8 range") {
    SliceDataset ds;
    LabelVolume big = lab;
    big.data.data[0] = 300;
    REQUIRE_THROWS_AS(cseg::add_volume(ds, vol, big, "s", "train", 64), ValidationError);
  }
  SECTION("happy path records subject, split and planes") {
    SliceDataset ds;
    cseg::add_volume(ds, vol, lab, "subj", "val", 64);
    REQUIRE(ds.size() == 4);
    REQUIRE(ds.samples[1].subject == "subj");
    REQUIRE(ds.samples[1].split == "val");
    REQUIRE(ds.samples[1].frame == 0);
    REQUIRE(ds.samples[1].slice == 1);
  }
}

TEST_CASE("minibatch sampling is uniform-with-replacement and deterministic") {
  SECTION("size 1 from a 1-slice dataset returns that slice") {
    SliceDataset ds = tiny_dataset(1, 4);
    Rng rng(1);
    Batch b = cseg::sample_minibatch(ds, 1, rng);
    REQUIRE(b.images.shape == std::vector<int64_t>{1, 1, 4, 4});
    REQUIRE(b.labels.shape == std::vector<int64_t>{1, 4, 4});
    for (float v : b.images.data) REQUIRE(v == 0.0f);
    for (int32_t v : b.labels.data) REQUIRE(v == 0);
  }
  SECTION("empty dataset is a configuration error") {
    SliceDataset ds;
    Rng rng(1);
    REQUIRE_THROWS_AS(cseg::sample_minibatch(ds, 20, rng), ConfigError);
  }
  SECTION("fixed seed gives identical index sequences") {
    SliceDataset ds = tiny_dataset(7, 4);
    Rng a(99), b(99), c(100);
    auto ia = cseg::sample_indices(ds, 50, a);
    auto ib = cseg::sample_indices(ds, 50, b);
    auto ic = cseg::sample_indices(ds, 50, c);
    REQUIRE(ia == ib);
    REQUIRE(ia != ic);
  }
  SECTION("frequencies over 10000 draws are within 3 sigma of uniform") {
    SliceDataset ds = tiny_dataset(5, 4);
    Rng rng(7);
    auto idx = cseg::sample_indices(ds, 10000, rng);
    std::vector<int64_t> counts(5, 0);
    for (int64_t i : idx) {
      REQUIRE(i >= 0);
      REQUIRE(i < 5);
      ++counts[static_cast<size_t>(i)];
    }
    // binomial n=10000 p=0.2: mean 2000, sigma 40
    for (int64_t c : counts) {
      REQUIRE(c > 2000 - 120);
      REQUIRE(c < 2000 + 120);
    }
  }
  SECTION("batch gathers the sampled slices") {
    SliceDataset ds = tiny_dataset(3, 4);
    Batch b = cseg::gather_batch(ds, {2, 0, 2});
    REQUIRE(b.images.shape == std::vector<int64_t>{3, 1, 4, 4});
    REQUIRE(b.images.data[0] == Catch::Approx(0.2f));
    REQUIRE(b.images.data[16] == 0.0f);
    REQUIRE(b.labels.data[0] == 2);
    REQUIRE(b.labels.data[16] == 0);
    REQUIRE(b.labels.data[32] == 2);
  }
}
