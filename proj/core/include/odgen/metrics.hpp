#pragma once

#include "odgen/domain.hpp"
#include "odgen/hist.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace odgen {

/// Metrics that cannot be computed (zero variance, both matrices all-zero)
/// are marked NaN, excluded from aggregation, and counted in the report.
bool metric_defined(double value);

/// sqrt of the mean squared difference over all N^2 pairs, zeros included.
double rmse(const Matrix& f, const Matrix& f_hat);

/// rmse divided by the population standard deviation of the real flows;
/// undefined (NaN) when the real matrix has zero variance.
double nrmse(const Matrix& f, const Matrix& f_hat);

/// Common part of commuting: 2 sum(min(F, F_hat)) / (sum F + sum F_hat).
/// Requires nonnegative inputs; undefined (NaN) when both are all-zero.
double cpc(const Matrix& f, const Matrix& f_hat);

enum class FlowKind { Inflow, Outflow, ODFlow };

/// Extracts the per-region inflows (column sums), outflows (row sums), or
/// all N^2 entries of a nonnegative flow matrix.
std::vector<double> flow_values(const Matrix& f, FlowKind kind);

/// Histograms flow values into log2-spaced bins (zero bin separate) and
/// normalizes with additive smoothing 1e-12.
Log2Histogram flow_distribution(const Matrix& f, FlowKind kind);

enum class JsdMode {
  Symmetric,  // (KL(P||Q) + KL(Q||P)) / 2 on smoothed inputs
  Mixture,  // standard Jensen-Shannon divergence against M = (P+Q)/2
};

JsdMode jsd_mode_from_string(const std::string& s);
std::string to_string(JsdMode mode);

/// Divergence between two probability vectors on identical bins, in nats.
double jsd(std::span<const double> p, std::span<const double> q, JsdMode mode);
double jsd(const Log2Histogram& p, const Log2Histogram& q, JsdMode mode);

struct MetricsRecord {
  std::string area_id;
  double cpc = 0.0;
  double rmse = 0.0;
  double nrmse = 0.0;
  double jsd_inflow = 0.0;
  double jsd_outflow = 0.0;
  double jsd_odflow = 0.0;
};

MetricsRecord evaluate_area(const std::string& area_id, const Matrix& f, const Matrix& f_hat,
                            JsdMode mode = JsdMode::Symmetric);

/// Grouping for aggregation: size bands over region counts (the upper bounds
/// partition the positive integers, with a final open-ended band) and
/// optional structure labels.
struct GroupingSpec {
  std::vector<int> size_band_uppers{50, 100, 200, 500, 1000};
  std::map<std::string, std::string> labels;  // area_id -> label

  void validate() const;
  std::string size_band_name(int n_regions) const;
};

struct AggregateRow {
  std::string group;
  int n_areas = 0;
  // Per metric: mean over areas where the metric is defined (NaN when no
  // area defines it) and the count of undefined areas.
  MetricsRecord mean;
  std::map<std::string, int> undefined_counts;
};

struct AggregateReport {
  std::vector<AggregateRow> rows;  // first row covers all areas
};

/// Unweighted mean per group. region_counts maps area_id to its N (for size
/// bands). Throws on an empty record set.
AggregateReport aggregate(const std::vector<MetricsRecord>& records, const GroupingSpec& grouping,
                          const std::map<std::string, int>& region_counts);

/// metrics.csv with columns area_id,cpc,rmse,nrmse,jsd_inflow,jsd_outflow,
/// jsd_odflow; undefined metrics serialize as "nan".
std::string metrics_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& content);

/// Human-readable aggregation table.
std::string format_aggregate_report(const AggregateReport& report);

}  // namespace odgen
