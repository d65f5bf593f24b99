#include "odgen/metrics.hpp"

#include "odgen/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace odgen {

namespace {

constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();
constexpr int kMetricHistKmin = -20;
constexpr int kMetricHistKmax = 40;
constexpr double kMetricHistSmoothing = 1e-12;

void check_same_shape(const Matrix& f, const Matrix& f_hat) {
  if (f.rows() != f_hat.rows() || f.cols() != f_hat.cols())
    throw InvalidInputError("flow matrices differ in shape");
  if (f.size() == 0) throw InvalidInputError("flow matrices are empty");
}

void check_nonnegative(const Matrix& m, const char* what) {
  if ((m.array() < 0.0).any())
    throw InvalidInputError(std::string(what) + " matrix has negative entries");
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (!(q[i] > 0.0))
        throw InvalidInputError("KL divergence undefined: q has a zero where p is positive");
      sum += p[i] * std::log(p[i] / q[i]);
    }
  }
  return sum;
}

}  // namespace

bool metric_defined(double value) { return !std::isnan(value); }

double rmse(const Matrix& f, const Matrix& f_hat) {
  check_same_shape(f, f_hat);
  return std::sqrt((f - f_hat).squaredNorm() / static_cast<double>(f.size()));
}

double nrmse(const Matrix& f, const Matrix& f_hat) {
  check_same_shape(f, f_hat);
  const double mean = f.mean();
  const double var = (f.array() - mean).square().mean();
  if (var <= 0.0) return kUndefined;
  return rmse(f, f_hat) / std::sqrt(var);
}

double cpc(const Matrix& f, const Matrix& f_hat) {
  check_same_shape(f, f_hat);
  check_nonnegative(f, "real flow");
  check_nonnegative(f_hat, "generated flow");
  const double denom = f.sum() + f_hat.sum();
  if (denom <= 0.0) return kUndefined;
  return 2.0 * f.cwiseMin(f_hat).sum() / denom;
}

std::vector<double> flow_values(const Matrix& f, FlowKind kind) {
  if (f.size() == 0) throw InvalidInputError("flow matrix is empty");
  check_nonnegative(f, "flow");
  std::vector<double> values;
  switch (kind) {
    case FlowKind::Inflow: {
      const Vector v = f.colwise().sum();
      values.assign(v.data(), v.data() + v.size());
      break;
    }
    case FlowKind::Outflow: {
      const Vector v = f.rowwise().sum();
      values.assign(v.data(), v.data() + v.size());
      break;
    }
    case FlowKind::ODFlow: {
      values.reserve(static_cast<std::size_t>(f.size()));
      for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = 0; j < f.cols(); ++j) values.push_back(f(i, j));
      break;
    }
  }
  return values;
}

Log2Histogram flow_distribution(const Matrix& f, FlowKind kind) {
  const std::vector<double> values = flow_values(f, kind);
  return log2_histogram(values, kMetricHistKmin, kMetricHistKmax, kMetricHistSmoothing);
}

JsdMode jsd_mode_from_string(const std::string& s) {
  if (s == "symmetric") return JsdMode::Symmetric;
  if (s == "mixture") return JsdMode::Mixture;
  throw InvalidInputError("unknown jsd mode '" + s + "' (expected symmetric or mixture)");
}

std::string to_string(JsdMode mode) { return mode == JsdMode::Symmetric ? "symmetric" : "mixture"; }

double jsd(std::span<const double> p, std::span<const double> q, JsdMode mode) {
  if (p.size() != q.size()) throw InvalidInputError("probability vectors differ in length");
  if (p.empty()) throw InvalidInputError("probability vectors are empty");
  if (mode == JsdMode::Symmetric) return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p));

  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * (kl_divergence(p, m) + kl_divergence(q, m));
}

double jsd(const Log2Histogram& p, const Log2Histogram& q, JsdMode mode) {
  if (p.kmin != q.kmin || p.kmax != q.kmax)
    throw InvalidInputError("histograms use different bin layouts");
  return jsd(std::span<const double>(p.mass), std::span<const double>(q.mass), mode);
}

MetricsRecord evaluate_area(const std::string& area_id, const Matrix& f, const Matrix& f_hat,
                            JsdMode mode) {
  check_same_shape(f, f_hat);
  MetricsRecord rec;
  rec.area_id = area_id;
  rec.cpc = cpc(f, f_hat);
  rec.rmse = rmse(f, f_hat);
  rec.nrmse = nrmse(f, f_hat);
  rec.jsd_inflow =
      jsd(flow_distribution(f, FlowKind::Inflow), flow_distribution(f_hat, FlowKind::Inflow), mode);
  rec.jsd_outflow = jsd(flow_distribution(f, FlowKind::Outflow),
                        flow_distribution(f_hat, FlowKind::Outflow), mode);
  rec.jsd_odflow =
      jsd(flow_distribution(f, FlowKind::ODFlow), flow_distribution(f_hat, FlowKind::ODFlow), mode);
  return rec;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

void GroupingSpec::validate() const {
  if (size_band_uppers.empty()) throw InvalidInputError("size bands must not be empty");
  int prev = 0;
  for (const int u : size_band_uppers) {
    if (u <= prev) throw InvalidInputError("size band upper bounds must be strictly increasing");
    prev = u;
  }
}

std::string GroupingSpec::size_band_name(int n_regions) const {
  validate();
  if (n_regions < 1) throw InvalidInputError("region count must be positive");
  int lo = 1;
  for (const int u : size_band_uppers) {
    if (n_regions <= u) return "size " + std::to_string(lo) + "-" + std::to_string(u);
    lo = u + 1;
  }
  return "size >" + std::to_string(size_band_uppers.back());
}

namespace {

struct MetricField {
  const char* name;
  double MetricsRecord::* member;
};

constexpr MetricField kMetricFields[] = {
    {"cpc", &MetricsRecord::cpc},
    {"rmse", &MetricsRecord::rmse},
    {"nrmse", &MetricsRecord::nrmse},
    {"jsd_inflow", &MetricsRecord::jsd_inflow},
    {"jsd_outflow", &MetricsRecord::jsd_outflow},
    {"jsd_odflow", &MetricsRecord::jsd_odflow},
};

AggregateRow aggregate_group(const std::string& group,
                             const std::vector<const MetricsRecord*>& records) {
  AggregateRow row;
  row.group = group;
  row.n_areas = static_cast<int>(records.size());
  for (const auto& field : kMetricFields) {
    double sum = 0.0;
    int defined = 0;
    for (const MetricsRecord* rec : records) {
      const double v = rec->*(field.member);
      if (metric_defined(v)) {
        sum += v;
        ++defined;
      }
    }
    row.mean.*(field.member) = defined > 0 ? sum / defined : kUndefined;
    row.undefined_counts[field.name] = row.n_areas - defined;
  }
  return row;
}

}  // namespace

AggregateReport aggregate(const std::vector<MetricsRecord>& records, const GroupingSpec& grouping,
                          const std::map<std::string, int>& region_counts) {
  if (records.empty()) throw InvalidInputError("cannot aggregate an empty record set");
  grouping.validate();

  std::vector<const MetricsRecord*> all;
  std::map<std::string, std::vector<const MetricsRecord*>> size_groups;
  std::map<std::string, std::vector<const MetricsRecord*>> label_groups;
  for (const auto& rec : records) {
    all.push_back(&rec);
    const auto rc = region_counts.find(rec.area_id);
    if (rc != region_counts.end())
      size_groups[grouping.size_band_name(rc->second)].push_back(&rec);
    const auto lb = grouping.labels.find(rec.area_id);
    if (lb != grouping.labels.end()) label_groups["label " + lb->second].push_back(&rec);
  }

  AggregateReport report;
  report.rows.push_back(aggregate_group("all", all));
  for (const auto& [name, group] : size_groups)
    report.rows.push_back(aggregate_group(name, group));
  for (const auto& [name, group] : label_groups)
    report.rows.push_back(aggregate_group(name, group));
  return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out = "area_id,cpc,rmse,nrmse,jsd_inflow,jsd_outflow,jsd_odflow\n";
  for (const auto& rec : records) {
    out += rec.area_id;
    for (const auto& field : kMetricFields) {
      out += ',';
      out += text::format_double(rec.*(field.member));
    }
    out += '\n';
  }
  return out;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line) ||
      text::strip_cr(line) != "area_id,cpc,rmse,nrmse,jsd_inflow,jsd_outflow,jsd_odflow")
    throw InvalidInputError("metrics csv has an unexpected header");
  std::vector<MetricsRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = text::strip_cr(line);
    if (stripped.empty()) continue;
    const auto fields = text::split_csv_line(stripped);
    if (fields.size() != 7)
      throw InvalidInputError("metrics csv line " + std::to_string(line_no) + ": expected 7 fields");
    MetricsRecord rec;
    rec.area_id = fields[0];
    int i = 1;
    for (const auto& field : kMetricFields) {
      const std::string& raw = fields[static_cast<std::size_t>(i++)];
      rec.*(field.member) = raw == "nan" || raw == "-nan"
                                ? std::numeric_limits<double>::quiet_NaN()
                                : text::parse_double(raw);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string format_aggregate_report(const AggregateReport& report) {
  std::ostringstream out;
  out << "group,n_areas";
  for (const auto& field : kMetricFields) out << ',' << field.name;
  out << ",undefined\n";
  for (const auto& row : report.rows) {
    out << row.group << ',' << row.n_areas;
    for (const auto& field : kMetricFields) {
      const double v = row.mean.*(field.member);
      out << ',' << (metric_defined(v) ? text::format_double(v) : std::string("nan"));
    }
    int undefined_total = 0;
    for (const auto& [name, count] : row.undefined_counts) undefined_total += count;
    out << ',' << undefined_total << '\n';
  }
  return out.str();
}

}  // namespace odgen
