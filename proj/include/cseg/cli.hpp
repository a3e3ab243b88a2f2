#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "cseg/check_suite.hpp"
#include "cseg/clinical.hpp"
#include "cseg/container.hpp"
#include "cseg/csv.hpp"
#include "cseg/dataset.hpp"
#include "cseg/metrics.hpp"
#include "cseg/network.hpp"
#include "cseg/phantom.hpp"
#include "cseg/preprocess.hpp"
#include "cseg/stats.hpp"
#include "cseg/tensor.hpp"
#include "cseg/train.hpp"

namespace cseg::cli {

namespace fs = std::filesystem;

/// Everything a run needs, assembled from defaults, the config file and the
/// command line (flags win). Paths are checked before any heavy compute.
struct RunConfig {
  std::string task = "short-axis";
  uint64_t seed = 0;
  int64_t threads = 1;
  bool allow_missing = false;
  std::string out = "cardseg_out";
  int64_t size = 192;
  TrainConfig train;

  int num_classes() const {
    if (task == "short-axis") return 4;
    if (task == "2ch") return 2;
    if (task == "4ch") return 3;
    throw ConfigError("unknown task '" + task + "' (expected short-axis, 2ch or 4ch)");
  }
};

namespace detail {

inline std::string zero_pad(int64_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*lld", width, static_cast<long long>(v));
  return buf;
}

/// Creates the output directory and proves it is writable before any
/// compute starts.
inline void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  const fs::path probe = fs::path(out) / ".cardseg_probe";
  {
    std::ofstream p(probe, std::ios::binary);
    if (!p) throw IoError("output directory is not writable: " + out);
  }
  fs::remove(probe, ec);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Label containers in a directory, keyed by subject id. Prefers the
/// *_seg.csg convention (segmentation outputs), then *_label.csg (reference
/// datasets), then any other .csg file that actually holds labels.
inline std::map<std::string, std::string> discover_labels(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::map<std::string, std::string> seg, label, other;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csg") continue;
    const std::string stem = entry.path().stem().string();
    if (ends_with(stem, "_seg"))
      seg[stem.substr(0, stem.size() - 4)] = entry.path().string();
    else if (ends_with(stem, "_label"))
      label[stem.substr(0, stem.size() - 6)] = entry.path().string();
    else
      other[stem] = entry.path().string();
  }
  if (!seg.empty()) return seg;
  if (!label.empty()) return label;
  std::map<std::string, std::string> out;
  for (const auto& [id, path] : other)
    if (std::holds_alternative<LabelVolume>(read_container(path))) out[id] = path;
  return out;
}

/// Subject ids present on both sides, sorted. Unpaired ids are listed on
/// stderr; without allow_missing any unpaired id is fatal.
inline std::vector<std::string> pair_ids(const std::map<std::string, std::string>& side_a,
                                         const std::map<std::string, std::string>& side_b,
                                         bool allow_missing, const std::string& cmd,
                                         const std::string& name_a, const std::string& name_b) {
  std::vector<std::string> ids, missing;
  for (const auto& [id, path] : side_a) {
    if (side_b.count(id))
      ids.push_back(id);
    else
      missing.push_back(id + " (missing from " + name_b + ")");
  }
  for (const auto& [id, path] : side_b)
    if (!side_a.count(id)) missing.push_back(id + " (missing from " + name_a + ")");
  if (!missing.empty()) {
    for (const auto& m : missing) std::cerr << cmd << ": unpaired subject " << m << "\n";
    if (!allow_missing)
      throw ValidationError(cmd + ": " + std::to_string(missing.size()) +
                            " unpaired subject(s); pass --allow-missing to continue");
    std::cerr << cmd << ": continuing with " << ids.size() << " paired subject(s)\n";
  }
  if (ids.empty()) throw ValidationError(cmd + ": no paired subjects found");
  return ids;
}

inline LabelVolume label_frame(const LabelVolume& v, int64_t t) {
  LabelVolume out;
  out.geom = v.geom;
  out.data = TensorT<int32_t>({v.slices(), v.height(), v.width()});
  const int64_t n = out.data.numel();
  std::copy(v.data.ptr() + t * n, v.data.ptr() + (t + 1) * n, out.data.ptr());
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to disjoint slots by the callers; the first exception rethrows.
inline void parallel_for(int64_t n, int64_t threads, const std::function<void(int64_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int64_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int64_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int64_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::map<std::string, std::string> read_groups_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open groups file: " + path);
  std::map<std::string, std::string> groups;
  std::string line;
  size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line == "subject_id,group") continue;
    }
    const size_t comma = line.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size())
      throw FormatError("groups file " + path + " line " + std::to_string(lineno) +
                        ": want subject_id,group");
    const std::string id = line.substr(0, comma);
    if (groups.count(id))
      throw FormatError("groups file " + path + ": duplicate subject id " + id);
    groups[id] = line.substr(comma + 1);
  }
  return groups;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  int64_t subjects = 10;
  int64_t frames = 8;
  int64_t slices = 10;
  int64_t size = 192;
};

inline int cmd_synth(const RunConfig& rc, const SynthArgs& a) {
  if (a.subjects <= 0) throw ValidationError("synth: --subjects must be positive");
  if (a.frames < 2) throw ValidationError("synth: --frames must be at least 2");
  if (a.slices < 1) throw ValidationError("synth: --slices must be at least 1");
  detail::ensure_out_dir(rc.out);

  const int64_t n_train = std::llround(0.7 * static_cast<double>(a.subjects));
  const int64_t n_val = std::llround(0.1 * static_cast<double>(a.subjects));
  const double scale = static_cast<double>(a.size) / 192.0;

  std::vector<ManifestRow> rows;
  for (int64_t s = 0; s < a.subjects; ++s) {
    Rng jitter(Rng::derive(rc.seed, 1000 + static_cast<uint64_t>(s)));
    PhantomSpec ps;
    ps.size = a.size;
    ps.frames = a.frames;
    ps.slices = a.slices;
    ps.r_ed = 30.0 * scale * jitter.uniform(0.9, 1.1);
    ps.r_es = ps.r_ed * jitter.uniform(0.45, 0.6);
    ps.myo_thickness = 9.0 * scale * jitter.uniform(0.9, 1.1);
    ps.rv_radius = 26.0 * scale * jitter.uniform(0.9, 1.1);
    ps.rv_offset = 30.0 * scale;
    ps.cx_off = jitter.uniform(-0.02, 0.02) * static_cast<double>(a.size);
    ps.cy_off = jitter.uniform(-0.02, 0.02) * static_cast<double>(a.size);
    ps.seed = Rng::derive(rc.seed, static_cast<uint64_t>(s));
    const auto [vol, lab] = generate_phantom(ps);

    const std::string id = "sub" + detail::zero_pad(s, 3);
    const std::string img_name = id + ".csg";
    write_container((fs::path(rc.out) / img_name).string(), vol);
    write_container((fs::path(rc.out) / (id + "_label.csg")).string(), lab);

    const std::string split = s < n_train ? "train" : (s < n_train + n_val ? "val" : "test");
    for (int64_t t = 0; t < a.frames; ++t)
      for (int64_t z = 0; z < a.slices; ++z) rows.push_back({img_name, t, z, split});
  }
  write_manifest((fs::path(rc.out) / "manifest.csv").string(), rows);
  std::cout << "synth: wrote " << a.subjects << " subjects (" << n_train << " train / " << n_val
            << " val / " << a.subjects - n_train - n_val << " test) under " << rc.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / finetune

struct TrainArgs {
  std::string manifest;
  std::string resume;
  std::string loss_csv;
  bool validate = false;
  std::vector<int64_t> ignore_classes;
};

inline int cmd_train(RunConfig& rc, TrainArgs& a, bool is_finetune) {
  const char* cmd = is_finetune ? "finetune" : "train";
  const int K = rc.num_classes();
  if (a.manifest.empty()) throw ConfigError(std::string(cmd) + ": --manifest is required");
  if (is_finetune && a.resume.empty())
    throw ConfigError("finetune: --resume is required (a base checkpoint to start from)");
  if (rc.size < 16 || rc.size % 16 != 0)
    throw ConfigError(std::string(cmd) + ": --size must be a positive multiple of 16");
  detail::ensure_out_dir(rc.out);
  if (rc.train.checkpoint_path.empty())
    rc.train.checkpoint_path = (fs::path(rc.out) / "model.fcnc").string();
  if (a.loss_csv.empty()) a.loss_csv = (fs::path(rc.out) / "loss_trace.csv").string();
  rc.train.seed = rc.seed;

  Fcn net;
  if (!a.resume.empty()) {
    net = load_checkpoint(a.resume, K);
    std::cout << cmd << ": resumed " << a.resume << " at iteration " << net.trained_iterations
              << "\n";
  } else {
    NetworkConfig nc;
    nc.K = K;
    net = build_network<float>(nc, rc.seed);
  }
  const int64_t start_iteration = net.trained_iterations;

  SliceDataset ds = load_dataset(a.manifest, "train", rc.size);
  SliceDataset val;
  const SliceDataset* valp = nullptr;
  if (a.validate) {
    val = load_dataset(a.manifest, "val", rc.size);
    if (val.samples.empty())
      std::cerr << cmd << ": manifest has no val split, skipping validation\n";
    else
      valp = &val;
  }

  std::vector<int32_t> ignored(a.ignore_classes.begin(), a.ignore_classes.end());
  TrainHooks hooks;
  hooks.on_loss = [&](int64_t it, double loss) {
    std::cout << cmd << ": iteration " << start_iteration + it << " loss " << loss << "\n";
  };
  hooks.on_validation = [&](int64_t it, double loss) {
    std::cout << cmd << ": iteration " << start_iteration + it << " validation loss " << loss
              << "\n";
  };

  const TrainResult res = is_finetune ? fine_tune(net, ds, rc.train, ignored, valp, hooks)
                                      : train(net, ds, rc.train, valp, hooks);

  {
    std::ofstream out(a.loss_csv, std::ios::binary);
    if (!out) throw IoError("cannot open loss csv for writing: " + a.loss_csv);
    out << "iteration,loss\n";
    for (size_t i = 0; i < res.loss_trace.size(); ++i)
      out << start_iteration + static_cast<int64_t>(i) + 1 << ','
          << csv_number(res.loss_trace[i]) << '\n';
    out.flush();
    if (!out) throw IoError("error writing loss csv: " + a.loss_csv);
  }
  if (!res.validation_trace.empty()) {
    const std::string vpath = (fs::path(rc.out) / "validation_trace.csv").string();
    std::ofstream out(vpath, std::ios::binary);
    if (!out) throw IoError("cannot open validation csv for writing: " + vpath);
    out << "iteration,validation_loss\n";
    for (const auto& [it, loss] : res.validation_trace)
      out << start_iteration + it << ',' << csv_number(loss) << '\n';
  }
  std::cout << cmd << ": " << rc.train.iterations << " iterations done, checkpoint "
            << rc.train.checkpoint_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// segment

struct SegmentArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
};

inline int cmd_segment(const RunConfig& rc, const SegmentArgs& a) {
  const int K = rc.num_classes();
  if (a.checkpoint.empty()) throw ConfigError("segment: --checkpoint is required");
  if (a.inputs.empty()) throw ConfigError("segment: at least one input container is required");
  if (rc.size < 16 || rc.size % 16 != 0)
    throw ConfigError("segment: --size must be a positive multiple of 16");
  detail::ensure_out_dir(rc.out);

  std::map<std::string, std::string> stems;
  for (const std::string& in : a.inputs) {
    const std::string stem = fs::path(in).stem().string();
    if (!stems.emplace(stem, in).second)
      throw ValidationError("segment: duplicate input stem " + stem);
  }

  Fcn net = load_checkpoint(a.checkpoint, K);

  const std::string timing_path = (fs::path(rc.out) / "timing.csv").string();
  std::ofstream timing(timing_path, std::ios::binary);
  if (!timing) throw IoError("cannot open timing log for writing: " + timing_path);
  timing << "subject,frame,seconds\n";

  double total_seconds = 0.0;
  int64_t total_frames = 0;
  for (const std::string& in : a.inputs) {
    const Volume orig = read_volume(in);
    CropInfo info;
    Volume work = normalize_intensity(crop_or_pad(orig, rc.size, &info));
    const int64_t T = work.frames(), Z = work.slices(), S = rc.size;
    const std::string stem = fs::path(in).stem().string();

    LabelVolume all;
    all.geom = orig.geom;
    all.data = TensorT<int32_t>({T, orig.slices(), orig.height(), orig.width()});

    Tensor x({Z, 1, S, S});
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t z = 0; z < Z; ++z)
        std::copy(work.slice_ptr(t, z), work.slice_ptr(t, z) + S * S, x.ptr() + z * S * S);

      // Timed region: network inference only, no file I/O.
      const auto clock0 = std::chrono::steady_clock::now();
      const Tensor probs = forward(net, x, BnMode::infer);
      const LabelMap seg = predict_segmentation(probs);
      const auto clock1 = std::chrono::steady_clock::now();
      const double seconds = std::chrono::duration<double>(clock1 - clock0).count();
      timing << stem << ',' << t << ',' << csv_number(seconds) << '\n';
      total_seconds += seconds;
      total_frames += 1;

      LabelVolume frame;
      frame.geom = orig.geom;
      frame.data = TensorT<int32_t>({Z, S, S});
      std::copy(seg.ptr(), seg.ptr() + Z * S * S, frame.data.ptr());
      const LabelVolume restored = restore_geometry(frame, info);
      write_container(
          (fs::path(rc.out) / (stem + "_seg_f" + detail::zero_pad(t, 3) + ".csg")).string(),
          restored);
      std::copy(restored.data.ptr(), restored.data.ptr() + restored.data.numel(),
                all.data.ptr() + t * restored.data.numel());
    }
    write_container((fs::path(rc.out) / (stem + "_seg.csg")).string(), all);
    std::cout << "segment: " << stem << " done (" << T << " frames)\n";
  }
  timing.flush();
  if (!timing) throw IoError("error writing timing log: " + timing_path);
  std::cout << "segment: inference took " << total_seconds << " s over " << total_frames
            << " frames (" << (total_frames ? total_seconds / total_frames : 0.0)
            << " s/frame), timing log " << timing_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string auto_dir;
  std::string manual_dir;
};

inline int cmd_evaluate(const RunConfig& rc, const EvaluateArgs& a) {
  const int K = rc.num_classes();
  if (a.auto_dir.empty() || a.manual_dir.empty())
    throw ConfigError("evaluate: --auto and --manual directories are required");
  detail::ensure_out_dir(rc.out);
  const auto amap = detail::discover_labels(a.auto_dir);
  const auto mmap = detail::discover_labels(a.manual_dir);
  const auto ids = detail::pair_ids(amap, mmap, rc.allow_missing, "evaluate",
                                    "automated labels", "manual labels");

  std::vector<int32_t> classes;
  for (int32_t c = 1; c < K; ++c) classes.push_back(c);

  std::vector<std::vector<SubjectMetrics>> per_subject(ids.size());
  detail::parallel_for(static_cast<int64_t>(ids.size()), rc.threads, [&](int64_t i) {
    const std::string& id = ids[static_cast<size_t>(i)];
    const LabelVolume la = read_labels(amap.at(id));
    const LabelVolume lm = read_labels(mmap.at(id));
    if (la.data.shape != lm.data.shape)
      throw ValidationError("evaluate: grid mismatch for subject " + id);
    for (int64_t t = 0; t < la.frames(); ++t) {
      SubjectMetrics sm;
      sm.subject_id = id + "_f" + detail::zero_pad(t, 3);
      sm.report = evaluate_pair(detail::label_frame(la, t), detail::label_frame(lm, t), classes);
      per_subject[static_cast<size_t>(i)].push_back(std::move(sm));
    }
  });

  std::vector<SubjectMetrics> subjects;
  for (auto& v : per_subject)
    for (auto& sm : v) subjects.push_back(std::move(sm));

  const std::string csv_path = (fs::path(rc.out) / "metrics.csv").string();
  write_metrics_csv(csv_path, subjects);

  for (int32_t c : classes) {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& sm : subjects)
      for (const auto& cm : sm.report.classes)
        if (cm.class_id == c) {
          sum += cm.dice;
          ++n;
        }
    std::cout << "evaluate: class " << c << " mean Dice "
              << (n ? sum / static_cast<double>(n) : 0.0) << " over " << n << " frames\n";
  }
  std::cout << "evaluate: wrote " << csv_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// measures

struct MeasuresArgs {
  std::string labels_dir;
  double heart_rate = 0.0;  // 0: take it from the container's frame interval
};

inline std::vector<SubjectMeasures> collect_measures(const std::map<std::string, std::string>& files,
                                                     const std::vector<std::string>& ids,
                                                     double heart_rate) {
  std::vector<SubjectMeasures> out;
  const std::optional<double> hr =
      heart_rate > 0.0 ? std::optional<double>(heart_rate) : std::nullopt;
  for (const std::string& id : ids)
    out.push_back(subject_measures(id, read_labels(files.at(id)), short_axis_classes(), hr));
  return out;
}

inline int cmd_measures(const RunConfig& rc, const MeasuresArgs& a) {
  if (rc.task != "short-axis")
    throw ConfigError("measures: ventricular measures need the short-axis task");
  if (a.labels_dir.empty()) throw ConfigError("measures: --labels directory is required");
  if (a.heart_rate < 0.0) throw ValidationError("measures: --hr must be positive");
  detail::ensure_out_dir(rc.out);

  const auto files = detail::discover_labels(a.labels_dir);
  if (files.empty()) throw ValidationError("measures: no label containers in " + a.labels_dir);
  std::vector<std::string> ids;
  for (const auto& [id, path] : files) ids.push_back(id);

  const auto measures = collect_measures(files, ids, a.heart_rate);
  const std::string csv_path = (fs::path(rc.out) / "measures.csv").string();
  write_measures_csv(csv_path, measures);
  std::cout << "measures: wrote " << csv_path << " (" << measures.size() << " subjects)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// blandaltman

struct BlandAltmanArgs {
  std::string auto_dir;
  std::string manual_dir;
  double heart_rate = 0.0;
};

inline int cmd_blandaltman(const RunConfig& rc, const BlandAltmanArgs& a) {
  if (rc.task != "short-axis")
    throw ConfigError("blandaltman: ventricular measures need the short-axis task");
  if (a.auto_dir.empty() || a.manual_dir.empty())
    throw ConfigError("blandaltman: --auto and --manual directories are required");
  detail::ensure_out_dir(rc.out);
  const auto amap = detail::discover_labels(a.auto_dir);
  const auto mmap = detail::discover_labels(a.manual_dir);
  const auto ids = detail::pair_ids(amap, mmap, rc.allow_missing, "blandaltman",
                                    "automated labels", "manual labels");

  const auto auto_measures = collect_measures(amap, ids, a.heart_rate);
  const auto manual_measures = collect_measures(mmap, ids, a.heart_rate);

  struct MeasureField {
    const char* name;
    const char* units;
    double SubjectMeasures::* field;
  };
  const MeasureField fields[] = {
      {"LVEDV_ml", "mL", &SubjectMeasures::lvedv_ml}, {"LVESV_ml", "mL", &SubjectMeasures::lvesv_ml},
      {"LVM_g", "g", &SubjectMeasures::lvm_g},        {"RVEDV_ml", "mL", &SubjectMeasures::rvedv_ml},
      {"RVESV_ml", "mL", &SubjectMeasures::rvesv_ml},
  };

  std::vector<PairedSample> samples;
  for (const MeasureField& f : fields) {
    PairedSample s;
    s.measure = f.name;
    s.units = f.units;
    for (size_t i = 0; i < ids.size(); ++i) {
      s.x.push_back(manual_measures[i].*(f.field));
      s.y.push_back(auto_measures[i].*(f.field));
    }
    samples.push_back(std::move(s));
  }

  const std::string diff_path = (fs::path(rc.out) / "paired_diff.csv").string();
  write_paired_diff_csv(diff_path, samples);

  const std::string ba_path = (fs::path(rc.out) / "bland_altman.csv").string();
  {
    std::ofstream out(ba_path, std::ios::binary);
    if (!out) throw IoError("cannot open bland-altman csv for writing: " + ba_path);
    out << "measure,bias,sd,lower,upper,n\n";
    for (const PairedSample& s : samples) {
      const BlandAltmanResult r = bland_altman(s);
      out << s.measure << ',' << csv_number(r.bias) << ',' << csv_number(r.sd) << ','
          << csv_number(r.lower) << ',' << csv_number(r.upper) << ',' << r.n << '\n';
    }
    out.flush();
    if (!out) throw IoError("error writing bland-altman csv: " + ba_path);
  }
  for (const PairedSample& s : samples)
    write_bland_altman_svg((fs::path(rc.out) / ("ba_" + s.measure + ".svg")).string(), s);

  std::cout << "blandaltman: wrote " << diff_path << ", " << ba_path << " and "
            << samples.size() << " SVG plots over " << ids.size() << " subjects\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cohort

struct CohortArgs {
  std::string labels_dir;
  std::string groups_csv;
  double heart_rate = 0.0;
};

inline int cmd_cohort(const RunConfig& rc, const CohortArgs& a) {
  if (rc.task != "short-axis")
    throw ConfigError("cohort: ventricular measures need the short-axis task");
  if (a.labels_dir.empty() || a.groups_csv.empty())
    throw ConfigError("cohort: --labels directory and --groups file are required");
  detail::ensure_out_dir(rc.out);

  const auto files = detail::discover_labels(a.labels_dir);
  const auto groups = detail::read_groups_csv(a.groups_csv);

  std::map<std::string, std::string> grouped;
  for (const auto& [id, group] : groups) grouped[id] = id;  // shape for pair_ids
  const auto ids = detail::pair_ids(files, grouped, rc.allow_missing, "cohort",
                                    "label directory", "groups file");

  const auto measures = collect_measures(files, ids, a.heart_rate);
  std::vector<std::string> group_of;
  for (const std::string& id : ids) group_of.push_back(groups.at(id));

  const CohortTable table = cohort_table(measures, group_of);
  const std::string csv_path = (fs::path(rc.out) / "cohort.csv").string();
  write_cohort_csv(csv_path, table);
  int64_t n_a = 0, n_b = 0;
  for (const std::string& g : group_of) (g == table.group_a ? n_a : n_b) += 1;
  std::cout << "cohort: group_a=" << table.group_a << " (n=" << n_a
            << "), group_b=" << table.group_b << " (n=" << n_b << "), wrote " << csv_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::vector<std::string> layers;
};

inline int cmd_gradcheck(const RunConfig& rc, const GradcheckArgs& a) {
  const auto results = run_layer_checks(a.layers, rc.seed);
  bool all_pass = true;
  for (const LayerCheckResult& r : results) {
    std::cout << "gradcheck: " << r.layer << ": " << r.report.summary() << "\n";
    all_pass = all_pass && r.report.pass;
  }
  std::cout << "gradcheck: " << (all_pass ? "all checks passed" : "FAILURES detected") << "\n";
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// driver

inline int run(std::vector<std::string> args) {
  CLI::App app{"cardiac MR segmentation pipeline"};
  app.name("cardseg");
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "key = value config file with [subcommand] sections; flags win");

  RunConfig rc;
  app.add_option("--task", rc.task, "segmentation task: short-axis, 2ch or 4ch")
      ->capture_default_str();
  app.add_option("--seed", rc.seed, "seed for every random decision")->capture_default_str();
  app.add_option("--out", rc.out, "output directory")->capture_default_str();
  app.add_option("--threads", rc.threads, "worker threads for per-subject evaluation")
      ->capture_default_str();
  app.add_flag("--allow-missing", rc.allow_missing,
               "tolerate unpaired subjects in evaluation commands");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
  synth->fallthrough();
  synth->add_option("--subjects", synth_args.subjects, "number of subjects")
      ->capture_default_str();
  synth->add_option("--frames", synth_args.frames, "cardiac phases per subject")
      ->capture_default_str();
  synth->add_option("--slices", synth_args.slices, "short-axis slices per subject")
      ->capture_default_str();
  synth->add_option("--size", synth_args.size, "image side in pixels")->capture_default_str();

  TrainArgs train_args, finetune_args;
  const auto add_train_options = [&rc](CLI::App* sub, TrainArgs& ta) {
    sub->fallthrough();
    sub->add_option("--manifest", ta.manifest, "dataset manifest CSV");
    sub->add_option("--iterations", rc.train.iterations, "training iterations")
        ->capture_default_str();
    sub->add_option("--learning-rate", rc.train.learning_rate, "Adam learning rate")
        ->capture_default_str();
    sub->add_option("--batch-size", rc.train.batch_size, "minibatch size")
        ->capture_default_str();
    sub->add_option("--size", rc.size, "network input side (crop/pad target)")
        ->capture_default_str();
    sub->add_option("--checkpoint", rc.train.checkpoint_path,
                    "checkpoint output path (default <out>/model.fcnc)");
    sub->add_option("--resume", ta.resume, "checkpoint to continue from");
    sub->add_option("--loss-csv", ta.loss_csv, "loss trace path (default <out>/loss_trace.csv)");
    sub->add_flag("--validate", ta.validate, "record validation loss on the manifest val split");
    sub->add_option("--loss-interval", rc.train.loss_interval, "loss print cadence")
        ->capture_default_str();
    sub->add_option("--validation-interval", rc.train.validation_interval,
                    "validation cadence")
        ->capture_default_str();
    sub->add_option("--checkpoint-interval", rc.train.checkpoint_interval,
                    "extra checkpoint cadence (0 = only at the end)")
        ->capture_default_str();
    sub->add_option("--max-translation", rc.train.augment.max_translation_px,
                    "augmentation: max |shift| in px")
        ->capture_default_str();
    sub->add_option("--max-rotation", rc.train.augment.max_rotation_deg,
                    "augmentation: max |rotation| in degrees")
        ->capture_default_str();
    sub->add_option("--scale-lo", rc.train.augment.scale_lo, "augmentation: min scale factor")
        ->capture_default_str();
    sub->add_option("--scale-hi", rc.train.augment.scale_hi, "augmentation: max scale factor")
        ->capture_default_str();
    sub->add_option("--intensity-lo", rc.train.augment.intensity_lo,
                    "augmentation: min intensity factor")
        ->capture_default_str();
    sub->add_option("--intensity-hi", rc.train.augment.intensity_hi,
                    "augmentation: max intensity factor")
        ->capture_default_str();
  };
  CLI::App* train_cmd = app.add_subcommand("train", "train a network from scratch");
  add_train_options(train_cmd, train_args);
  CLI::App* finetune_cmd =
      app.add_subcommand("finetune", "continue training from a checkpoint");
  add_train_options(finetune_cmd, finetune_args);
  finetune_cmd
      ->add_option("--ignore-classes", finetune_args.ignore_classes,
                   "labels excluded from the fine-tuning loss")
      ->delimiter(',');

  SegmentArgs segment_args;
  CLI::App* segment = app.add_subcommand("segment", "segment image containers");
  segment->fallthrough();
  segment->add_option("--checkpoint", segment_args.checkpoint, "trained checkpoint");
  segment->add_option("--size", rc.size, "network input side (crop/pad target)")
      ->capture_default_str();
  segment->add_option("inputs", segment_args.inputs, "image containers to segment");

  EvaluateArgs evaluate_args;
  CLI::App* evaluate = app.add_subcommand("evaluate", "compare automated labels to manual ones");
  evaluate->fallthrough();
  evaluate->add_option("--auto", evaluate_args.auto_dir, "directory of automated labels");
  evaluate->add_option("--manual", evaluate_args.manual_dir, "directory of manual labels");

  MeasuresArgs measures_args;
  CLI::App* measures = app.add_subcommand("measures", "ventricular volumes, mass and function");
  measures->fallthrough();
  measures->add_option("--labels", measures_args.labels_dir, "directory of label containers");
  measures->add_option("--hr", measures_args.heart_rate,
                       "heart rate in bpm (default: from the container frame interval)");

  BlandAltmanArgs ba_args;
  CLI::App* blandaltman =
      app.add_subcommand("blandaltman", "agreement statistics between two raters");
  blandaltman->fallthrough();
  blandaltman->add_option("--auto", ba_args.auto_dir, "directory of automated labels");
  blandaltman->add_option("--manual", ba_args.manual_dir, "directory of manual labels");
  blandaltman->add_option("--hr", ba_args.heart_rate, "heart rate in bpm");

  CohortArgs cohort_args;
  CLI::App* cohort = app.add_subcommand("cohort", "two-group comparison of measures");
  cohort->fallthrough();
  cohort->add_option("--labels", cohort_args.labels_dir, "directory of label containers");
  cohort->add_option("--groups", cohort_args.groups_csv, "subject_id,group CSV");
  cohort->add_option("--hr", cohort_args.heart_rate, "heart rate in bpm");

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->fallthrough();
  gradcheck->add_option("--layers", gradcheck_args.layers, "subset of layers to check")
      ->delimiter(',');

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (rc.threads < 1) throw ConfigError("--threads must be at least 1");
    if (*synth) return cmd_synth(rc, synth_args);
    if (*train_cmd) return cmd_train(rc, train_args, false);
    if (*finetune_cmd) return cmd_train(rc, finetune_args, true);
    if (*segment) return cmd_segment(rc, segment_args);
    if (*evaluate) return cmd_evaluate(rc, evaluate_args);
    if (*measures) return cmd_measures(rc, measures_args);
    if (*blandaltman) return cmd_blandaltman(rc, ba_args);
    if (*cohort) return cmd_cohort(rc, cohort_args);
    if (*gradcheck) return cmd_gradcheck(rc, gradcheck_args);
  } catch (const Error& e) {
    std::cerr << "cardseg: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "cardseg: unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

inline int run(int argc, const char* const* argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace cseg::cli
