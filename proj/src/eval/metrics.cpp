#include "rtsmono/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rtsmono {

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

MetricsReport compute_metrics(const Tensor<float>& pred, const Tensor<float>& gt, double cap, bool median_scale) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("compute_metrics: prediction " + shape_string(pred.shape()) + " vs ground truth " +
                     shape_string(gt.shape()));
  }
  if (!(cap > kPredFloor)) throw std::invalid_argument("compute_metrics: depth cap must exceed 1e-3");
  std::vector<double> p, g;
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    const double gv = gt[i];
    if (gv > 0 && gv <= cap) {
      p.push_back(pred[i]);
      g.push_back(gv);
    }
  }
  if (g.empty()) throw std::invalid_argument("compute_metrics: no valid ground-truth pixels");
  if (median_scale) {
    const double mp = median(p);
    if (!(mp > 0)) throw std::domain_error("compute_metrics: prediction median is not positive");
    const double s = median(g) / mp;
    for (double& x : p) x *= s;
  }
  double abs_rel = 0, sq_rel = 0, se = 0, sle = 0;
  std::int64_t c1 = 0, c2 = 0, c3 = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = std::clamp(p[i], kPredFloor, cap);
    const double t = g[i];
    const double diff = d - t;
    abs_rel += std::abs(diff) / t;
    sq_rel += diff * diff / t;
    se += diff * diff;
    const double ld = std::log(d) - std::log(t);
    sle += ld * ld;
    const double delta = std::max(d / t, t / d);
    c1 += delta < 1.25;
    c2 += delta < 1.25 * 1.25;
    c3 += delta < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(g.size());
  MetricsReport r;
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(se / n);
  r.rmse_log = std::sqrt(sle / n);
  r.a1 = c1 / n;
  r.a2 = c2 / n;
  r.a3 = c3 / n;
  r.n_valid = static_cast<std::int64_t>(g.size());
  return r;
}

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, double cap, bool median_scale) {
  return compute_metrics(pred.values, gt.values, cap, median_scale);
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no metrics reports");
  // Fixed summation order over a sorted copy keeps the result independent of input order.
  std::vector<double> cols[7];
  MetricsReport out;
  for (const auto& r : reports) {
    const double v[7] = {r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.a1, r.a2, r.a3};
    for (int k = 0; k < 7; ++k) cols[k].push_back(v[k]);
    out.n_valid += r.n_valid;
  }
  double* dst[7] = {&out.abs_rel, &out.sq_rel, &out.rmse, &out.rmse_log, &out.a1, &out.a2, &out.a3};
  for (int k = 0; k < 7; ++k) {
    std::sort(cols[k].begin(), cols[k].end());
    double s = 0;
    for (double x : cols[k]) s += x;
    *dst[k] = s / static_cast<double>(reports.size());
  }
  return out;
}

std::string metrics_csv_header() { return "image,abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3,n_valid"; }

std::string format_metrics_row(const std::string& image, const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%lld", image.c_str(), r.abs_rel, r.sq_rel,
                r.rmse, r.rmse_log, r.a1, r.a2, r.a3, static_cast<long long>(r.n_valid));
  return buf;
}

namespace {

MetricsRow parse_metrics_row(const std::string& line, const std::string& where) {
  std::stringstream ss(line);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (fields.size() != 9) throw std::runtime_error(where + ": expected 9 fields");
  MetricsRow r;
  r.image = fields[0];
  double* dst[7] = {&r.report.abs_rel, &r.report.sq_rel, &r.report.rmse, &r.report.rmse_log,
                    &r.report.a1,      &r.report.a2,     &r.report.a3};
  try {
    for (int k = 0; k < 7; ++k) *dst[k] = std::stod(fields[k + 1]);
    r.report.n_valid = std::stoll(fields[8]);
  } catch (const std::logic_error&) {
    throw std::runtime_error(where + ": malformed number");
  }
  return r;
}

}  // namespace

// The mean is taken over the per-image values as written, so reloading the file and
// re-aggregating reproduces the MEAN row exactly.
MetricsReport write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::vector<std::string> lines;
  std::vector<MetricsReport> reports;
  for (const auto& r : rows) {
    lines.push_back(format_metrics_row(r.image, r.report));
    reports.push_back(parse_metrics_row(lines.back(), "row " + r.image).report);
  }
  const MetricsReport mean = aggregate(reports);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write metrics CSV " + path.string());
  f << metrics_csv_header() << '\n';
  for (const auto& l : lines) f << l << '\n';
  f << format_metrics_row("MEAN", mean) << '\n';
  if (!f) throw std::runtime_error("failed writing metrics CSV " + path.string());
  return mean;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read metrics CSV " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != metrics_csv_header()) {
    throw std::runtime_error(path.string() + ": missing or unexpected metrics CSV header");
  }
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    rows.push_back(parse_metrics_row(line, path.string() + ":" + std::to_string(lineno)));
  }
  return rows;
}

}  // namespace rtsmono
