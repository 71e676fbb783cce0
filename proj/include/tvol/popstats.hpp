#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvol/error.hpp"
#include "tvol/format.hpp"
#include "tvol/metrics.hpp"

namespace tvol::popstats {

struct SummaryOptions {
  /// Margin-flagged (zero-volume) subjects enter mean and SD only when set.
  bool include_flagged = false;
  /// Outlier test: strict (v > mean + 2sd) unless set, then inclusive (>=).
  bool inclusive_bounds = false;
};

struct PopulationSummary {
  std::size_t n = 0;
  std::size_t n_zero_flagged = 0;
  double mean_ml = 0.0;
  double sd_ml = 0.0;
  double frac_above_2sd = 0.0;
  double frac_below_2sd = 0.0;
  double frac_outside_2sd = 0.0;
  double lower_bound = 0.0;
  double upper_bound = 0.0;
};

inline std::vector<double> included_volumes(const std::vector<metrics::VolumeReport>& reports, bool include_flagged) {
  std::vector<double> v;
  for (const auto& r : reports)
    if (!r.failed && (include_flagged || !r.margin_flagged)) v.push_back(r.volume_ml);
  return v;
}

/// Mean, population SD (divisor n) and the fractions beyond mean +/- 2 SD.
/// n_zero_flagged counts every flagged report, included or not.
inline PopulationSummary summarize(const std::vector<metrics::VolumeReport>& reports,
                                   const SummaryOptions& options = {}) {
  std::vector<double> v = included_volumes(reports, options.include_flagged);
  if (v.size() < 2)
    throw Error(ErrorKind::TooFewSubjects, std::to_string(v.size()) + " subjects left after filtering, need 2");
  std::sort(v.begin(), v.end());  // fixed reduction order

  PopulationSummary s;
  s.n = v.size();
  for (const auto& r : reports) s.n_zero_flagged += (!r.failed && r.margin_flagged);

  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean_ml = sum / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean_ml) * (x - s.mean_ml);
  s.sd_ml = std::sqrt(ss / n);
  s.lower_bound = s.mean_ml - 2.0 * s.sd_ml;
  s.upper_bound = s.mean_ml + 2.0 * s.sd_ml;

  std::size_t above = 0, below = 0;
  for (double x : v) {
    if (options.inclusive_bounds ? x >= s.upper_bound : x > s.upper_bound) ++above;
    else if (options.inclusive_bounds ? x <= s.lower_bound : x < s.lower_bound) ++below;
  }
  // A zero-SD population has both bounds at the mean; nothing lies outside it.
  if (s.sd_ml == 0.0) above = below = 0;
  s.frac_above_2sd = static_cast<double>(above) / n;
  s.frac_below_2sd = static_cast<double>(below) / n;
  s.frac_outside_2sd = static_cast<double>(above + below) / n;
  return s;
}

inline nlohmann::ordered_json to_json(const PopulationSummary& s, const SummaryOptions& o) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["n_zero_flagged"] = s.n_zero_flagged;
  j["mean_ml"] = s.mean_ml;
  j["sd_ml"] = s.sd_ml;
  j["sd_divisor"] = "n";
  j["lower_bound_ml"] = s.lower_bound;
  j["upper_bound_ml"] = s.upper_bound;
  j["frac_above_2sd"] = s.frac_above_2sd;
  j["frac_below_2sd"] = s.frac_below_2sd;
  j["frac_outside_2sd"] = s.frac_outside_2sd;
  j["include_flagged"] = o.include_flagged;
  j["bounds"] = o.inclusive_bounds ? "inclusive" : "strict";
  return j;
}

inline std::string summary_csv(const PopulationSummary& s) {
  std::string out =
      "n,n_zero_flagged,mean_ml,sd_ml,lower_bound_ml,upper_bound_ml,frac_above_2sd,frac_below_2sd,frac_outside_2sd\n";
  out += std::to_string(s.n) + "," + std::to_string(s.n_zero_flagged) + "," + format_real(s.mean_ml) + "," +
         format_real(s.sd_ml) + "," + format_real(s.lower_bound) + "," + format_real(s.upper_bound) + "," +
         format_real(s.frac_above_2sd) + "," + format_real(s.frac_below_2sd) + "," + format_real(s.frac_outside_2sd) +
         "\n";
  return out;
}

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

/// Contiguous [k*w, (k+1)*w) bins from 0 through the bin holding the largest volume.
inline std::vector<HistogramBin> histogram(const std::vector<double>& volumes, double bin_width_ml) {
  if (!(bin_width_ml > 0.0)) throw Error(ErrorKind::PreconditionViolation, "bin width must be > 0");
  if (volumes.empty()) return {};
  auto bin_of = [&](double v) {
    auto k = static_cast<std::int64_t>(std::floor(v / bin_width_ml));
    if (k < 0) k = 0;
    // guard against the division rounding across an edge
    while (k > 0 && v < static_cast<double>(k) * bin_width_ml) --k;
    while (v >= static_cast<double>(k + 1) * bin_width_ml) ++k;
    return k;
  };
  std::int64_t last = 0;
  for (double v : volumes) {
    if (v < 0.0 || !std::isfinite(v)) throw Error(ErrorKind::PreconditionViolation, "volumes must be finite and >= 0");
    last = std::max(last, bin_of(v));
  }
  std::vector<HistogramBin> bins(static_cast<std::size_t>(last + 1));
  for (std::size_t k = 0; k < bins.size(); ++k) {
    bins[k].left = static_cast<double>(k) * bin_width_ml;
    bins[k].right = static_cast<double>(k + 1) * bin_width_ml;
  }
  for (double v : volumes) ++bins[static_cast<std::size_t>(bin_of(v))].count;
  return bins;
}

inline std::vector<HistogramBin> histogram(const std::vector<metrics::VolumeReport>& reports, double bin_width_ml,
                                           bool include_flagged) {
  return histogram(included_volumes(reports, include_flagged), bin_width_ml);
}

inline std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::string out = "bin_left,bin_right,count\n";
  for (const auto& b : bins)
    out += format_real(b.left) + "," + format_real(b.right) + "," + std::to_string(b.count) + "\n";
  return out;
}

}  // namespace tvol::popstats
