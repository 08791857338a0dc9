#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cranioclip/error.hpp"
#include "cranioclip/volume.hpp"

namespace cranioclip::metrics {

/// 2|A n B| / (|A| + |B|); two empty masks agree perfectly (1.0).
inline double dice(const Mask& a, const Mask& b) {
  require(a.dims() == b.dims(), ErrorCode::ShapeMismatch, "dice: mask dims differ");
  std::size_t na = 0, nb = 0, both = 0;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    na += da[i];
    nb += db[i];
    both += da[i] & db[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

struct ErrorRates {
  double fnr = 0.0;
  double fpr = 0.0;
};

/// FNR = FN / |truth positives|, FPR = FP / |truth negatives|.
inline ErrorRates fnr_fpr(const Mask& pred, const Mask& truth) {
  require(pred.dims() == truth.dims(), ErrorCode::ShapeMismatch, "fnr_fpr: mask dims differ");
  std::size_t pos = 0, neg = 0, fn = 0, fp = 0;
  const auto& p = pred.data();
  const auto& t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (t[i]) {
      ++pos;
      fn += p[i] ? 0 : 1;
    } else {
      ++neg;
      fp += p[i] ? 1 : 0;
    }
  }
  if (pos == 0 || neg == 0)
    fail(ErrorCode::DegenerateInput, "truth mask must contain both classes");
  return {double(fn) / double(pos), double(fp) / double(neg)};
}

struct VolumeMetrics {
  std::string volume_id;
  double dice = 0.0;  // fractions in [0,1]
  double fnr = 0.0;
  double fpr = 0.0;
  double seconds = 0.0;
};

inline VolumeMetrics evaluate(std::string id, const Mask& pred, const Mask& truth,
                              double seconds = 0.0) {
  const auto rates = fnr_fpr(pred, truth);
  return {std::move(id), dice(pred, truth), rates.fnr, rates.fpr, seconds};
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Set-level summary; rates in percent, population standard deviation.
struct MetricsReport {
  MeanStd dice;
  MeanStd fnr;
  MeanStd fpr;
  MeanStd seconds;
  std::vector<VolumeMetrics> rows;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / double(xs.size()))};
}

inline MetricsReport aggregate(const std::vector<VolumeMetrics>& rows) {
  if (rows.empty()) fail(ErrorCode::EmptyInput, "aggregate needs at least one row");
  std::vector<double> d, fn, fp, s;
  for (const auto& r : rows) {
    d.push_back(100.0 * r.dice);
    fn.push_back(100.0 * r.fnr);
    fp.push_back(100.0 * r.fpr);
    s.push_back(r.seconds);
  }
  return {mean_std(d), mean_std(fn), mean_std(fp), mean_std(s), rows};
}

/// Machine-readable report: one row per volume, fractions at full precision.
inline void write_csv(std::ostream& out, const MetricsReport& report) {
  out << "volume_id,dice,fnr,fpr,seconds\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", r.dice, r.fnr, r.fpr, r.seconds);
    out << r.volume_id << ',' << buf << '\n';
  }
}

/// Human-readable summary in the usual "mean +- std" table layout.
inline void write_table(std::ostream& out, const MetricsReport& report, const std::string& label) {
  auto cell = [](const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f \xc2\xb1 %.1f", m.mean, m.std);
    return std::string(buf);
  };
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %-22s %-14s %-14s %-14s\n", "Method",
                "Processing time (s)", "Dice (%)", "FNR (%)", "FPR (%)");
  out << line;
  std::snprintf(line, sizeof(line), "%-12s %-23s %-15s %-15s %-15s\n", label.c_str(),
                cell(report.seconds).c_str(), cell(report.dice).c_str(), cell(report.fnr).c_str(),
                cell(report.fpr).c_str());
  out << line;
}

}  // namespace cranioclip::metrics
