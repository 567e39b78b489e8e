#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "frailnet/csv.hpp"
#include "frailnet/errors.hpp"

namespace frailnet {

struct SurvivalRecord {
  std::string cluster;
  double time = 0.0;
  int status = 0;
  std::vector<double> covariates;
};

/**
 * Event-time structure for Breslow-type sweeps.
 *
 * `order` lists record ids sorted ascending by the composite key
 * (time, status, cluster label, covariates), so every reduction that walks it
 * is invariant to the order records arrived in. The risk set of distinct event
 * time y_(k) is the suffix order[risk_begin[k]..N).
 */
struct RiskIndex {
  std::vector<double> event_times;       // distinct, ascending
  std::vector<int> multiplicities;       // events tied at each y_(k)
  std::vector<int> order;                // composite-key ascending record ids
  std::vector<int> risk_begin;           // suffix start per event time
  std::vector<int> events_at_or_before;  // per record: #{k : y_(k) <= y_r}
  int num_events = 0;

  int num_event_times() const { return static_cast<int>(event_times.size()); }
};

namespace detail {

inline bool record_key_less(int a, int b, const Eigen::VectorXd& times,
                            const Eigen::VectorXi& status, const std::vector<int>& cluster,
                            const std::vector<std::string>& labels, const Eigen::MatrixXd& x) {
  if (times[a] != times[b]) return times[a] < times[b];
  if (status[a] != status[b]) return status[a] < status[b];
  const std::string& la = labels[cluster[a]];
  const std::string& lb = labels[cluster[b]];
  if (la != lb) return la < lb;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
  return a < b;
}

}  // namespace detail

inline RiskIndex build_risk_index(const Eigen::VectorXd& times, const Eigen::VectorXi& status,
                                  std::vector<int> order) {
  const int n = static_cast<int>(times.size());
  RiskIndex idx;
  idx.order = std::move(order);
  for (int r = 0; r < n; ++r) idx.num_events += status[r];

  // Distinct event times with tie multiplicities, then suffix offsets.
  int pos = 0;
  while (pos < n) {
    int end = pos;
    const double t = times[idx.order[pos]];
    int events = 0;
    while (end < n && times[idx.order[end]] == t) {
      events += status[idx.order[end]];
      ++end;
    }
    if (events > 0) {
      idx.event_times.push_back(t);
      idx.multiplicities.push_back(events);
      idx.risk_begin.push_back(pos);
    }
    pos = end;
  }

  idx.events_at_or_before.resize(n);
  for (int r = 0; r < n; ++r) {
    auto it = std::upper_bound(idx.event_times.begin(), idx.event_times.end(), times[r]);
    idx.events_at_or_before[r] = static_cast<int>(it - idx.event_times.begin());
  }
  return idx;
}

/**
 * Immutable clustered survival dataset.
 *
 * Cluster ids are encoded by first appearance; `cluster_labels()[i]` inverts the
 * encoding. Datasets produced by `split` keep the parent's full label universe so
 * frailty indices align across splits, even for clusters a split never sees.
 */
class ClusteredDataset {
 public:
  static ClusteredDataset from_records(const std::vector<SurvivalRecord>& records) {
    return from_records(records, {});
  }

  /** `label_universe` pre-seeds the encoding; new labels extend it in appearance order. */
  static ClusteredDataset from_records(const std::vector<SurvivalRecord>& records,
                                       const std::vector<std::string>& label_universe) {
    if (records.empty()) throw DataError("dataset needs at least one record");
    const std::size_t p = records.front().covariates.size();
    if (p == 0) throw DataError("dataset needs at least one covariate");

    ClusteredDataset ds;
    ds.labels_ = label_universe;
    for (std::size_t i = 0; i < ds.labels_.size(); ++i)
      ds.label_index_.emplace(ds.labels_[i], static_cast<int>(i));

    const int n = static_cast<int>(records.size());
    ds.times_.resize(n);
    ds.status_.resize(n);
    ds.cluster_.resize(n);
    ds.x_.resize(n, static_cast<Eigen::Index>(p));
    for (int r = 0; r < n; ++r) {
      const SurvivalRecord& rec = records[r];
      const long row = r + 1;
      if (!std::isfinite(rec.time) || rec.time <= 0.0) throw NonPositiveTimeError(row, rec.time);
      if (rec.status != 0 && rec.status != 1)
        throw InvalidStatusError(row, std::to_string(rec.status));
      if (rec.covariates.size() != p) throw RaggedRowError(row, rec.covariates.size() + 3, p + 3);
      ds.times_[r] = rec.time;
      ds.status_[r] = rec.status;
      for (std::size_t j = 0; j < p; ++j) {
        if (!std::isfinite(rec.covariates[j]))
          throw ParseError(row, "x" + std::to_string(j + 1), std::to_string(rec.covariates[j]));
        ds.x_(r, static_cast<Eigen::Index>(j)) = rec.covariates[j];
      }
      auto it = ds.label_index_.find(rec.cluster);
      if (it == ds.label_index_.end()) {
        int id = static_cast<int>(ds.labels_.size());
        ds.labels_.push_back(rec.cluster);
        ds.label_index_.emplace(rec.cluster, id);
        ds.cluster_[r] = id;
      } else {
        ds.cluster_[r] = it->second;
      }
    }
    for (std::size_t j = 0; j < p; ++j) ds.covariate_names_.push_back("x" + std::to_string(j + 1));
    ds.finalize();
    return ds;
  }

  int num_records() const { return static_cast<int>(times_.size()); }
  int num_clusters() const { return static_cast<int>(labels_.size()); }
  int num_covariates() const { return static_cast<int>(x_.cols()); }
  int num_events() const { return risk_.num_events; }
  int num_event_times() const { return risk_.num_event_times(); }

  double time(int r) const { return times_[r]; }
  int status(int r) const { return status_[r]; }
  int cluster(int r) const { return cluster_[r]; }
  const Eigen::VectorXd& times() const { return times_; }
  const Eigen::VectorXi& statuses() const { return status_; }
  const std::vector<int>& clusters() const { return cluster_; }
  const Eigen::MatrixXd& covariates() const { return x_; }

  const std::vector<std::string>& cluster_labels() const { return labels_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  std::optional<int> cluster_index(const std::string& label) const {
    auto it = label_index_.find(label);
    if (it == label_index_.end()) return std::nullopt;
    return it->second;
  }

  /** Records per cluster in this dataset (0 for clusters only present in siblings). */
  const std::vector<int>& cluster_sizes() const { return cluster_sizes_; }
  /** Events per cluster in this dataset. */
  const std::vector<int>& cluster_event_counts() const { return cluster_events_; }
  /** Cluster ids sorted by label; every per-cluster reduction walks this. */
  const std::vector<int>& canonical_cluster_order() const { return cluster_order_; }
  /** Record ids of cluster i, in canonical record order. */
  const std::vector<int>& cluster_records(int i) const { return cluster_records_[i]; }

  const RiskIndex& risk_index() const { return risk_; }
  const std::vector<int>& canonical_order() const { return risk_.order; }

  void set_covariate_names(std::vector<std::string> names) {
    if (names.size() != static_cast<std::size_t>(num_covariates()))
      throw ShapeMismatchError("covariate name count mismatch");
    covariate_names_ = std::move(names);
  }

  /** Subset sharing this dataset's label universe and covariate names. */
  ClusteredDataset subset(const std::vector<int>& record_ids) const {
    ClusteredDataset out;
    out.labels_ = labels_;
    out.label_index_ = label_index_;
    out.covariate_names_ = covariate_names_;
    const int n = static_cast<int>(record_ids.size());
    out.times_.resize(n);
    out.status_.resize(n);
    out.cluster_.resize(n);
    out.x_.resize(n, x_.cols());
    for (int k = 0; k < n; ++k) {
      int r = record_ids[k];
      out.times_[k] = times_[r];
      out.status_[k] = status_[r];
      out.cluster_[k] = cluster_[r];
      out.x_.row(k) = x_.row(r);
    }
    out.finalize();
    return out;
  }

 private:
  ClusteredDataset() = default;

  void finalize() {
    const int n = num_records();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return detail::record_key_less(a, b, times_, status_, cluster_, labels_, x_);
    });
    risk_ = build_risk_index(times_, status_, std::move(order));

    cluster_sizes_.assign(labels_.size(), 0);
    cluster_events_.assign(labels_.size(), 0);
    cluster_records_.assign(labels_.size(), {});
    for (int r : risk_.order) {
      cluster_sizes_[cluster_[r]]++;
      cluster_events_[cluster_[r]] += status_[r];
      cluster_records_[cluster_[r]].push_back(r);
    }
    cluster_order_.resize(labels_.size());
    std::iota(cluster_order_.begin(), cluster_order_.end(), 0);
    std::sort(cluster_order_.begin(), cluster_order_.end(),
              [&](int a, int b) { return labels_[a] < labels_[b]; });
  }

  Eigen::VectorXd times_;
  Eigen::VectorXi status_;
  std::vector<int> cluster_;
  Eigen::MatrixXd x_;
  std::vector<std::string> labels_;
  std::map<std::string, int> label_index_;
  std::vector<std::string> covariate_names_;
  std::vector<int> cluster_sizes_;
  std::vector<int> cluster_events_;
  std::vector<std::vector<int>> cluster_records_;
  std::vector<int> cluster_order_;
  RiskIndex risk_;
};

// ---------------------------------------------------------------------------
// Train / validation / test splitting
// ---------------------------------------------------------------------------

enum class Fold { train, validation, test };

struct SplitSpec {
  std::vector<Fold> assignment;  // one fold per record, in record order
};

struct SplitResult {
  std::optional<ClusteredDataset> train, validation, test;
};

/** Partition by fold; empty folds come back disengaged. All splits share the encoding. */
inline SplitResult split(const ClusteredDataset& ds, const SplitSpec& spec) {
  if (spec.assignment.size() != static_cast<std::size_t>(ds.num_records()))
    throw IncompleteAssignmentError(spec.assignment.size(), ds.num_records());
  std::vector<int> tr, va, te;
  for (int r = 0; r < ds.num_records(); ++r) {
    switch (spec.assignment[r]) {
      case Fold::train: tr.push_back(r); break;
      case Fold::validation: va.push_back(r); break;
      case Fold::test: te.push_back(r); break;
    }
  }
  SplitResult out;
  if (!tr.empty()) out.train = ds.subset(tr);
  if (!va.empty()) out.validation = ds.subset(va);
  if (!te.empty()) out.test = ds.subset(te);
  return out;
}

inline const char* fold_name(Fold f) {
  switch (f) {
    case Fold::train: return "train";
    case Fold::validation: return "validation";
    default: return "test";
  }
}

inline Fold parse_fold(const std::string& s, long row, const std::string& column) {
  if (s == "train") return Fold::train;
  if (s == "validation") return Fold::validation;
  if (s == "test") return Fold::test;
  throw ParseError(row, column, s);
}

// ---------------------------------------------------------------------------
// CSV interface
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::string cluster = "cluster";
  std::string time = "time";
  std::string status = "status";
  std::string split = "split";          // read/written only when present/requested
  std::vector<std::string> covariates;  // empty: every remaining column, header order
};

struct LoadResult {
  ClusteredDataset dataset;
  std::optional<SplitSpec> split;
};

inline LoadResult load_csv(const std::string& path, const CsvSchema& schema = {}) {
  csv::Table t = csv::read_file(path);
  const long c_cluster = t.column(schema.cluster);
  const long c_time = t.column(schema.time);
  const long c_status = t.column(schema.status);
  if (c_cluster < 0) throw MissingColumnError(schema.cluster);
  if (c_time < 0) throw MissingColumnError(schema.time);
  if (c_status < 0) throw MissingColumnError(schema.status);
  const long c_split = schema.split.empty() ? -1 : t.column(schema.split);

  std::vector<long> c_cov;
  std::vector<std::string> cov_names;
  if (schema.covariates.empty()) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      long lj = static_cast<long>(j);
      if (lj == c_cluster || lj == c_time || lj == c_status || lj == c_split) continue;
      c_cov.push_back(lj);
      cov_names.push_back(t.header[j]);
    }
  } else {
    for (const std::string& name : schema.covariates) {
      long c = t.column(name);
      if (c < 0) throw MissingColumnError(name);
      c_cov.push_back(c);
      cov_names.push_back(name);
    }
  }
  if (c_cov.empty()) throw DataError(path + " has no covariate columns");

  std::vector<SurvivalRecord> records;
  records.reserve(t.rows.size());
  std::vector<Fold> folds;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const long rownum = static_cast<long>(i) + 1;
    SurvivalRecord rec;
    rec.cluster = row[c_cluster];
    rec.time = csv::parse_double(row[c_time], rownum, schema.time);
    double st = csv::parse_double(row[c_status], rownum, schema.status);
    if (st != 0.0 && st != 1.0) throw InvalidStatusError(rownum, row[c_status]);
    rec.status = static_cast<int>(st);
    for (std::size_t j = 0; j < c_cov.size(); ++j)
      rec.covariates.push_back(csv::parse_double(row[c_cov[j]], rownum, cov_names[j]));
    records.push_back(std::move(rec));
    if (c_split >= 0) folds.push_back(parse_fold(row[c_split], rownum, schema.split));
  }

  LoadResult out{ClusteredDataset::from_records(records), std::nullopt};
  out.dataset.set_covariate_names(cov_names);
  if (c_split >= 0) out.split = SplitSpec{std::move(folds)};
  return out;
}

inline void write_csv(const ClusteredDataset& ds, const std::string& path,
                      const CsvSchema& schema = {}, const SplitSpec* split_spec = nullptr) {
  if (split_spec && split_spec->assignment.size() != static_cast<std::size_t>(ds.num_records()))
    throw IncompleteAssignmentError(split_spec->assignment.size(), ds.num_records());
  csv::Writer w(path);
  std::vector<std::string> row{schema.cluster, schema.time, schema.status};
  if (split_spec) row.push_back(schema.split);
  for (const auto& name : ds.covariate_names()) row.push_back(name);
  w.row(row);
  for (int r = 0; r < ds.num_records(); ++r) {
    row.clear();
    row.push_back(ds.cluster_labels()[ds.cluster(r)]);
    row.push_back(csv::format_double(ds.time(r)));
    row.push_back(std::to_string(ds.status(r)));
    if (split_spec) row.push_back(fold_name(split_spec->assignment[r]));
    for (int j = 0; j < ds.num_covariates(); ++j)
      row.push_back(csv::format_double(ds.covariates()(r, j)));
    w.row(row);
  }
  w.close();
}

}  // namespace frailnet
