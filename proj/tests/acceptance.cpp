// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "tvol/pipeline.hpp"

using namespace tvol;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tvol_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string file_bytes(const fs::path& p) { return pipeline::read_text(p); }

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = file_bytes(e.path());
  return files;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<unsigned char> le_bytes(const std::vector<T>& v) {
  std::vector<unsigned char> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

template <typename T>
void random_payload(std::mt19937_64& rng, std::size_t n, std::vector<float>& values, std::vector<unsigned char>& raw) {
  std::vector<T> typed(n);
  for (auto& x : typed) {
    if constexpr (std::is_same_v<T, std::uint8_t>) x = static_cast<T>(rng() % 256);
    else if constexpr (std::is_same_v<T, std::int16_t>) x = static_cast<T>(static_cast<std::int64_t>(rng() % 65536) - 32768);
    else if constexpr (std::is_same_v<T, std::int32_t>) x = static_cast<T>(static_cast<std::int64_t>(rng() % (1u << 24)) - (1 << 23));
    else x = static_cast<T>(static_cast<float>(std::ldexp(static_cast<double>(rng() >> 11), -40) - 2048.0));
  }
  values.assign(typed.begin(), typed.end());
  raw = le_bytes(typed);
}

Outcome nifti_round_trip() {
  const fs::path dir = scratch("nifti");
  std::mt19937_64 rng(20240601);
  const std::array types{Datatype::UInt8, Datatype::Int16, Datatype::Int32, Datatype::Float32, Datatype::Float64};
  Clock clock;
  std::size_t bad = 0, bytes_total = 0;
  for (int i = 0; i < 50; ++i) {
    const Dims d{1 + static_cast<std::int64_t>(rng() % 64), 1 + static_cast<std::int64_t>(rng() % 64),
                 1 + static_cast<std::int64_t>(rng() % 32)};
    Spacing s;
    for (auto& x : s) x = static_cast<float>(0.25 + static_cast<double>(rng() % 4000) / 1000.0);
    const VolumeGeometry g(d, s);
    const Datatype t = types[i % types.size()];
    const bool gz = (rng() & 1) != 0;
    std::vector<float> values;
    std::vector<unsigned char> raw;
    switch (t) {
      case Datatype::UInt8: random_payload<std::uint8_t>(rng, g.voxel_count(), values, raw); break;
      case Datatype::Int16: random_payload<std::int16_t>(rng, g.voxel_count(), values, raw); break;
      case Datatype::Int32: random_payload<std::int32_t>(rng, g.voxel_count(), values, raw); break;
      case Datatype::Float32: random_payload<float>(rng, g.voxel_count(), values, raw); break;
      case Datatype::Float64: random_payload<double>(rng, g.voxel_count(), values, raw); break;
    }
    VoxelVolume v(g, values);
    v.stored_type = t;
    const fs::path p = dir / fmt("v%02d.nii%s", i, gz ? ".gz" : "");
    nifti::write_nifti(v, p, gz);

    const auto on_disk = nifti::detail::read_bytes(p);
    const bool payload_ok = on_disk.size() == nifti::kSingleFileOffset + raw.size() &&
                            std::equal(raw.begin(), raw.end(), on_disk.begin() + nifti::kSingleFileOffset);
    const VoxelVolume back = nifti::read_nifti(p);
    const bool values_ok = back.data() == values && back.stored_type == t && back.geometry().dims == d &&
                           back.geometry().spacing == s;
    nifti::write_nifti(back, dir / "rewrite.nii", false);
    const bool rewrite_ok = nifti::detail::read_bytes(dir / "rewrite.nii") == on_disk;
    if (!(payload_ok && values_ok && rewrite_ok)) ++bad;
    bytes_total += raw.size();
  }
  const double secs = clock.seconds();
  fs::remove_all(dir);
  return {bad == 0 && secs < 5.0,
          fmt("50 volumes (5 datatypes, gzip mixed, %zu payload bytes): %zu mismatches, %.2f s (limit 5 s)", bytes_total,
              bad, secs)};
}

// ---------------------------------------------------------------------------

Outcome volumetry_oracle() {
  std::mt19937_64 rng(77);
  auto u = [&](double a, double b) { return a + (b - a) * static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const auto model = inference::stub_threshold_model(0.0);
  const preprocess::NormalizationSpec norm;
  std::size_t exact = 0, total = 0;
  for (int i = 0; i < 24; ++i) {
    phantom::Subject s;
    s.id = fmt("vol%02d", i);
    s.dims = {64, 56, 28};
    for (auto& x : s.spacing) x = static_cast<float>(u(0.5, 3.5));
    s.noise_seed = rng();
    const int n_ell = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < n_ell; ++k)
      s.ellipsoids.push_back({{u(18, 46), u(16, 40), u(9, 19)}, {u(2, 12), u(2, 10), u(1.5, 6)}});

    // independent count: every voxel centre tested against the ellipsoid inequalities
    std::size_t count = 0;
    for (std::int64_t z = 0; z < s.dims[2]; ++z)
      for (std::int64_t y = 0; y < s.dims[1]; ++y)
        for (std::int64_t x = 0; x < s.dims[0]; ++x) {
          bool in = false;
          for (const auto& e : s.ellipsoids) {
            double q = 0.0;
            for (int a = 0; a < 3; ++a) {
              const double c = static_cast<double>(a == 0 ? x : a == 1 ? y : z);
              q += (c - e.center[a]) * (c - e.center[a]) / (e.radii[a] * e.radii[a]);
            }
            in = in || q <= 1.0;
          }
          count += in ? 1 : 0;
        }
    const double oracle = static_cast<double>(count) * (s.spacing[0] * s.spacing[1] * s.spacing[2]) / 1000.0;

    const auto stack = preprocess::normalize(phantom::render(s), norm);
    const auto mask = inference::to_mask(inference::predict_subject(model, preprocess::extract_slices(stack)),
                                         model.metadata.decision);
    const auto flagged = postprocess::apply_margin_rule(mask);
    const auto r = metrics::volume_ml(flagged, s.id, model.model_id);
    ++total;
    if (!flagged.margin_flagged && r.voxel_count == count && r.volume_ml == oracle) ++exact;
  }
  return {exact == total && total >= 20, fmt("%zu/%zu ellipsoid phantoms with volume_ml == count*voxel_volume/1000 exactly", exact, total)};
}

// ---------------------------------------------------------------------------

Outcome dice_suite() {
  std::mt19937_64 rng(4242);
  std::size_t failures = 0;
  std::string first;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok && failures++ == 0) first = what;
  };
  for (int i = 0; i < 100; ++i) {
    const Dims d{1 + static_cast<std::int64_t>(rng() % 20), 1 + static_cast<std::int64_t>(rng() % 20),
                 1 + static_cast<std::int64_t>(rng() % 10)};
    const VolumeGeometry g(d, {1, 1, 1});
    const double pa = static_cast<double>(rng() % 1000) / 1000.0, pb = static_cast<double>(rng() % 1000) / 1000.0;
    SegmentationMask a(g), b(g);
    std::set<std::size_t> sa, sb;
    for (std::size_t k = 0; k < g.voxel_count(); ++k) {
      if (static_cast<double>(rng() % 1000) / 1000.0 < pa) a.data()[k] = 1, sa.insert(k);
      if (static_cast<double>(rng() % 1000) / 1000.0 < pb) b.data()[k] = 1, sb.insert(k);
    }
    std::vector<std::size_t> inter;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    if (sa.empty() && sb.empty()) {
      bool threw = false;
      try {
        metrics::dice(a, b);
      } catch (const Error& e) {
        threw = e.kind() == ErrorKind::BothEmpty;
      }
      check(threw, "both-empty pair not rejected");
      continue;
    }
    const double oracle = 2.0 * static_cast<double>(inter.size()) / static_cast<double>(sa.size() + sb.size());
    const auto ab = metrics::dice(a, b);
    const auto ba = metrics::dice(b, a);
    check(ab.value == oracle, fmt("pair %d: dice %.17g vs oracle %.17g", i, ab.value, oracle));
    check(ab.n_a == sa.size() && ab.n_b == sb.size() && ab.n_intersection == inter.size(), fmt("pair %d counts", i));
    check(ab.value == ba.value, fmt("pair %d asymmetric", i));
    check(ab.value >= 0.0 && ab.value <= 1.0, fmt("pair %d out of bounds", i));
    if (!sa.empty()) check(metrics::dice(a, a).value == 1.0, fmt("pair %d identity", i));
    SegmentationMask complement(g);
    for (std::size_t k = 0; k < g.voxel_count(); ++k) complement.data()[k] = a.data()[k] ? 0 : 1;
    if (!sa.empty() || complement.foreground_count() > 0)
      check(metrics::dice(a, complement).value == 0.0, fmt("pair %d disjoint", i));
  }
  return {failures == 0, failures == 0 ? "100 random pairs: exact set-oracle agreement, symmetry, bounds, identity 1, "
                                         "disjoint 0"
                                       : fmt("%zu violations, first: %s", failures, first.c_str())};
}

// ---------------------------------------------------------------------------

Outcome margin_rule() {
  const Dims dims{40, 36, 20};
  std::size_t ok = 0, total = 0;
  std::string failed;
  for (Face f : kAllFaces) {
    phantom::Subject s;
    s.dims = dims;
    const int a = static_cast<int>(f) / 2;
    std::array<double, 3> c{20, 18, 10};
    c[a] = static_cast<int>(f) % 2 ? static_cast<double>(dims[a]) - 2.0 : 1.0;
    s.ellipsoids.push_back({c, {4, 4, 3}});
    const auto mask = phantom::truth_mask(s);
    const auto once = postprocess::apply_margin_rule(mask);
    const auto twice = postprocess::apply_margin_rule(once.mask);
    ++total;
    const bool good = once.margin_flagged && once.touched_faces == std::vector<Face>{f} &&
                      once.mask.foreground_count() == 0 && mask.foreground_count() > 0 &&
                      twice.mask.data() == once.mask.data();
    if (good) ++ok; else failed += " " + to_string(f);
  }
  for (int i = 0; i < 4; ++i) {
    phantom::Subject s;
    s.dims = dims;
    s.ellipsoids.push_back({{12.0 + 4 * i, 18, 10}, {3.0 + i, 4, 3}});
    s.ellipsoids.push_back({{28.0 - 2 * i, 15, 9}, {2.5, 3.0 + i, 2}});
    const auto mask = phantom::truth_mask(s);
    const auto once = postprocess::apply_margin_rule(mask);
    const auto twice = postprocess::apply_margin_rule(once.mask);
    ++total;
    const bool good = !once.margin_flagged && once.touched_faces.empty() && once.mask.data() == mask.data() &&
                      twice.mask.data() == once.mask.data() && !twice.margin_flagged;
    if (good) ++ok; else failed += fmt(" interior%d", i);
  }
  return {ok == total, fmt("%zu/%zu cases (6 single-face, 4 interior) zeroed/flagged or unchanged as expected, "
                           "idempotent%s%s", ok, total, failed.empty() ? "" : "; failed:", failed.c_str())};
}

// ---------------------------------------------------------------------------

Outcome split_determinism() {
  std::vector<std::string> ids;
  for (int i = 1; i <= 350; ++i) ids.push_back(fmt("subj%07d", 1000000 + i * 37));
  const fs::path dir = scratch("split");
  const auto m1 = cohort::make_splits(ids, {313, 37, 12}, 5, 42);
  std::vector<std::string> shuffled = ids;
  std::mt19937 g(3);
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  const auto m2 = cohort::make_splits(shuffled, {313, 37, 12}, 5, 42);
  cohort::write_manifest(m1, dir / "a.json");
  cohort::write_manifest(m2, dir / "b.json");
  const bool identical = file_bytes(dir / "a.json") == file_bytes(dir / "b.json");
  std::multiset<std::size_t> fold_sizes;
  std::set<std::string> fold_union;
  for (const auto& f : m1.folds) {
    fold_sizes.insert(f.size());
    fold_union.insert(f.begin(), f.end());
  }
  const std::set<std::string> train(m1.train_ids.begin(), m1.train_ids.end());
  const std::set<std::string> test(m1.test_ids.begin(), m1.test_ids.end());
  bool rt_in_test = true;
  for (const auto& r : m1.rt_ids) rt_in_test = rt_in_test && test.count(r);
  bool disjoint = true;
  for (const auto& t : m1.test_ids) disjoint = disjoint && !train.count(t);
  const bool sizes = m1.train_ids.size() == 313 && m1.test_ids.size() == 37 && m1.rt_ids.size() == 12;
  const bool folds = fold_sizes == std::multiset<std::size_t>{62, 62, 63, 63, 63} && fold_union == train;
  fs::remove_all(dir);
  std::string fs_str;
  for (auto f : m1.folds) fs_str += (fs_str.empty() ? "" : ",") + std::to_string(f.size());
  return {identical && sizes && folds && rt_in_test && disjoint,
          fmt("train/test/rt = %zu/%zu/%zu, folds {%s}, manifests byte-identical: %s", m1.train_ids.size(),
              m1.test_ids.size(), m1.rt_ids.size(), fs_str.c_str(), identical ? "yes" : "no")};
}

// ---------------------------------------------------------------------------

Outcome population_stats() {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> nd(48.5, 21.3);
  std::vector<metrics::VolumeReport> reports(100000);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    reports[i].subject_id = std::to_string(i);
    reports[i].volume_ml = nd(rng);
  }
  const double oracle = std::erfc(2.0 / std::sqrt(2.0));  // 2 * (1 - Phi(2))
  const auto base = popstats::summarize(reports, {});
  const bool tail_ok = std::fabs(base.frac_outside_2sd - 0.0455) <= 0.003;

  auto transformed = [&](double k, double c) {
    auto r = reports;
    for (auto& x : r) x.volume_ml = k * x.volume_ml + c;
    return popstats::summarize(r, {});
  };
  const auto shifted = transformed(1.0, 17.25);
  const auto scaled = transformed(2.5, 0.0);
  auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max(1.0, std::fabs(b)); };
  const bool trans = close(shifted.mean_ml, base.mean_ml + 17.25) && close(shifted.sd_ml, base.sd_ml) &&
                     shifted.frac_above_2sd == base.frac_above_2sd && shifted.frac_below_2sd == base.frac_below_2sd;
  const bool scale = close(scaled.mean_ml, 2.5 * base.mean_ml) && close(scaled.sd_ml, 2.5 * base.sd_ml) &&
                     scaled.frac_above_2sd == base.frac_above_2sd && scaled.frac_below_2sd == base.frac_below_2sd;
  return {tail_ok && trans && scale,
          fmt("frac_outside_2sd = %.5f (analytic %.5f, target 0.0455 +/- 0.003); translation %s, scale %s", base.frac_outside_2sd,
              oracle, trans ? "ok" : "VIOLATED", scale ? "ok" : "VIOLATED")};
}

// ---------------------------------------------------------------------------

Outcome end_to_end() {
  Clock clock;
  const fs::path root = scratch("e2e");
  phantom::CohortDesign design;  // 6 subjects on the full 224 x 162 x 72 window
  pipeline::run_phantom(design, root);
  const auto manifest = nlohmann::json::parse(file_bytes(root / "phantom_manifest.json"));

  auto cfg = pipeline::load_config(root / "pipeline.json");
  auto run = [&](const std::string& name, std::size_t workers, std::size_t limit) {
    auto c = cfg;
    c.output_dir = root / name;
    c.workers = workers;
    pipeline::InferOptions o;
    o.limit = limit;
    pipeline::run_infer(c, o);
    return c.output_dir;
  };
  const fs::path w1 = run("w1", 1, 0);
  const fs::path w8 = run("w8", 8, 0);
  run("resumed", 2, 4);
  const fs::path resumed = run("resumed", 2, 0);

  std::size_t matched = 0;
  std::string mismatch;
  const auto rows = metrics::parse_volumes_csv(file_bytes(w1 / "volumes.csv"));
  std::map<std::string, metrics::VolumeReport> by_id;
  for (const auto& r : rows) by_id[r.subject_id] = r;
  for (const auto& s : manifest["subjects"]) {
    const std::string id = s["subject_id"];
    if (!by_id.count(id)) {
      mismatch += " " + id + "(missing)";
      continue;
    }
    const auto& r = by_id[id];
    const bool flag = s["expect_margin_flag"].get<bool>();
    std::vector<std::string> faces;
    for (Face f : r.touched_faces) faces.push_back(to_string(f));
    const auto mask = nifti::read_mask(w1 / "masks" / (id + ".nii.gz"));
    const auto truth = nifti::read_mask(root / "truth" / (id + ".nii.gz"));
    const bool mask_ok = flag ? mask.foreground_count() == 0 : mask.data() == truth.data();
    const bool ok = !r.failed && r.margin_flagged == flag && faces == s["touched_faces"].get<std::vector<std::string>>() &&
                    r.volume_ml == s["expected_volume_ml"].get<double>() &&
                    (flag || r.voxel_count == s["voxel_count"].get<std::size_t>()) && mask_ok;
    if (ok) ++matched; else mismatch += " " + id;
  }
  const bool workers_same = file_bytes(w1 / "volumes.csv") == file_bytes(w8 / "volumes.csv") && snapshot(w1) == snapshot(w8);
  const bool resume_same = snapshot(w1) == snapshot(resumed);
  const double secs = clock.seconds();
  fs::remove_all(root);
  return {matched == 6 && rows.size() == 6 && workers_same && resume_same && secs < 60.0,
          fmt("%zu/6 subjects match manifest%s; workers 1 vs 8 identical: %s; interrupted+resumed identical: %s; "
              "%.1f s (limit 60 s)", matched, mismatch.empty() ? "" : (" (mismatch:" + mismatch + ")").c_str(),
              workers_same ? "yes" : "no", resume_same ? "yes" : "no", secs)};
}

// ---------------------------------------------------------------------------

Outcome exclusion_accounting() {
  const fs::path root = scratch("exclusion");
  const VolumeGeometry good({224, 162, 72}, {2.232, 2.232, 3.0});
  const VolumeGeometry short_z({224, 162, 71}, {2.232, 2.232, 3.0});
  auto write_subject = [&](const std::string& id, const VolumeGeometry& g, bool fat) {
    fs::create_directories(root / id);
    VoxelVolume v(g, 0.0f);
    v.stored_type = Datatype::Int16;
    for (cohort::Channel c : cohort::kChannels)
      if (fat || c != cohort::Channel::Fat) nifti::write_nifti(v, root / id / phantom::channel_file(id, c), true);
  };
  for (int i = 1; i <= 6; ++i) write_subject(fmt("ok%02d", i), good, true);
  fs::create_directories(root / "empty01");
  write_subject("nofat01", good, false);
  write_subject("nofat02", good, false);
  write_subject("dims01", short_z, true);

  const auto counts = cohort::count(cohort::scan_catalog(root, {}));
  fs::remove_all(root);
  const auto& ex = counts.excluded;
  const std::size_t all = ex.at(cohort::ExclusionKind::MissingAllData);
  const std::size_t win = ex.at(cohort::ExclusionKind::MissingWindowFile);
  const std::size_t dim = ex.at(cohort::ExclusionKind::DimensionMismatch);
  return {counts.total == 10 && counts.valid == 6 && all == 1 && win == 2 && dim == 1,
          fmt("10 subjects -> %zu valid, MissingAllData %zu, MissingWindowFile %zu, DimensionMismatch %zu "
              "(expected 6 / 1 / 2 / 1)", counts.valid, all, win, dim)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"nifti round-trip", nifti_round_trip},     {"volumetry oracle", volumetry_oracle},
      {"dice suite", dice_suite},                 {"margin rule", margin_rule},
      {"split determinism", split_determinism},   {"population stats", population_stats},
      {"end-to-end stub model", end_to_end},      {"exclusion accounting", exclusion_accounting},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
