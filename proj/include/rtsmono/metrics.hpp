#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rtsmono/camera.hpp"

namespace rtsmono {

struct MetricsReport {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double rmse_log = 0;
  double a1 = 0;  // delta < 1.25
  double a2 = 0;  // delta < 1.25^2
  double a3 = 0;  // delta < 1.25^3
  std::int64_t n_valid = 0;
};

inline constexpr double kPredFloor = 1e-3;

/// Valid pixels are gt in (0, cap]. With median_scale, pred is rescaled by
/// median(gt) / median(pred) over those pixels. Pred is then clamped to [1e-3, cap].
MetricsReport compute_metrics(const Tensor<float>& pred, const Tensor<float>& gt, double cap = 80.0,
                              bool median_scale = false);
MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, double cap = 80.0,
                              bool median_scale = false);

/// Unweighted per-image mean; n_valid is summed.
MetricsReport aggregate(const std::vector<MetricsReport>& reports);

/// Median of a non-empty sample (mean of the middle pair for even sizes).
double median(std::vector<double> values);

struct MetricsRow {
  std::string image;
  MetricsReport report;
};

std::string metrics_csv_header();
std::string format_metrics_row(const std::string& image, const MetricsReport& r);
/// Writes one row per image and a trailing MEAN row. Returns the aggregate.
MetricsReport write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace rtsmono
