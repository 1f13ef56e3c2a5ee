#include "adherence/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "adherence/error.hpp"
#include "adherence/text.hpp"

namespace adherence {

namespace {

std::string static_column(int i) { return fmt::format("s{:02d}", i + 1); }
std::string score_column(int step, int dim) { return fmt::format("x{}_{:02d}", step, dim + 1); }
std::string label_column(int interval) { return fmt::format("y{}", interval + 1); }

std::vector<std::string> canonical_header(const CohortSchema& schema) {
  std::vector<std::string> cols{"id"};
  for (int i = 0; i < schema.static_dim(); ++i) cols.push_back(static_column(i));
  for (int t = 0; t < kSteps; ++t) {
    for (int d = 0; d < schema.score_dim(); ++d) cols.push_back(score_column(t, d));
  }
  for (int t = 0; t < kIntervals; ++t) cols.push_back(label_column(t));
  cols.push_back("reason");
  return cols;
}

double parse_number(const std::string& cell, const std::string& column, const std::string& id) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ValidationError("record " + id + ": column " + column + " is not a finite number: '" + cell + "'");
  }
  return v;
}

}  // namespace

CohortSchema CohortSchema::release() {
  CohortSchema s;
  s.static_names = {"age",        "gender",     "distance_to_clinic", "cost_income_ratio", "eos_count",
                    "eos_percent", "delta_nr",  "delta_pnif",         "total_ige",         "sige_der_p",
                    "sige_der_f", "spt_der_p", "spt_der_f",          "static_14"};
  s.score_names = {"nasal_itching",       "sneezing",        "rhinorrhea", "nasal_congestion",
                   "ocular_itching",      "lacrimation",     "shortness_of_breath",
                   "chest_tightness",     "cough",           "wheezing",   "medication_score"};
  s.score_lower = Vector::Zero(kScoreDim);
  s.score_upper = Vector::Constant(kScoreDim, 10.0);
  s.score_upper[kScoreDim - 1] = std::numeric_limits<double>::infinity();
  return s;
}

CohortSchema CohortSchema::generic(int static_dim, int score_dim) {
  CohortSchema s;
  for (int i = 0; i < static_dim; ++i) s.static_names.push_back(static_column(i));
  for (int d = 0; d < score_dim; ++d) s.score_names.push_back(fmt::format("x_{:02d}", d + 1));
  s.score_lower = Vector::Constant(score_dim, -std::numeric_limits<double>::infinity());
  s.score_upper = Vector::Constant(score_dim, std::numeric_limits<double>::infinity());
  return s;
}

int PatientRecord::withdrawal_interval() const {
  for (int t = 0; t < kIntervals; ++t) {
    if (y[static_cast<size_t>(t)] == 0) return t;
  }
  return kIntervals;
}

const PatientRecord& Cohort::by_id(const std::string& id) const {
  for (const PatientRecord& r : records) {
    if (r.id == id) return r;
  }
  throw ValidationError("unknown patient id " + id);
}

void validate_record(const PatientRecord& r, const CohortSchema& schema) {
  const std::string where = "record " + r.id + ": ";
  if (r.s.size() != schema.static_dim()) throw DimensionError(where + "static dimension mismatch");
  if (r.x.rows() != kSteps || r.x.cols() != schema.score_dim()) {
    throw DimensionError(where + "score matrix must be " + std::to_string(kSteps) + "x" +
                         std::to_string(schema.score_dim()));
  }
  for (int t = 0; t < kIntervals; ++t) {
    const auto i = static_cast<size_t>(t);
    if (r.y[i] != 0 && r.y[i] != 1) throw ValidationError(where + "y" + std::to_string(t + 1) + " is not binary");
    if (r.a[i] != r.y[i]) throw ValidationError(where + "a" + std::to_string(t + 1) + " differs from y");
  }
  if (r.y[0] != 1) throw ValidationError(where + "y1 must be 1 (all patients complete the first interval)");
  for (int t = 1; t < kIntervals; ++t) {
    if (r.y[static_cast<size_t>(t)] == 1 && r.y[static_cast<size_t>(t - 1)] == 0) {
      throw ValidationError(where + "withdrawal is absorbing but y" + std::to_string(t + 1) + " = 1 after a 0");
    }
  }
  if (!r.s.allFinite()) throw ValidationError(where + "non-finite static feature");
  for (int t = 0; t < kSteps; ++t) {
    if (!r.mask[static_cast<size_t>(t)]) continue;
    for (int d = 0; d < schema.score_dim(); ++d) {
      const double v = r.x(t, d);
      if (!std::isfinite(v) || v < schema.score_lower[d] || v > schema.score_upper[d]) {
        throw ValidationError(where + score_column(t, d) + " = " + fmt::format("{}", v) + " outside [" +
                              fmt::format("{}", schema.score_lower[d]) + ", " +
                              fmt::format("{}", schema.score_upper[d]) + "]");
      }
    }
  }
}

void validate_cohort(const Cohort& cohort) {
  std::set<std::string> ids;
  for (const PatientRecord& r : cohort.records) {
    validate_record(r, cohort.schema);
    if (!ids.insert(r.id).second) throw ValidationError("duplicate patient id " + r.id);
  }
}

ColumnMapping ColumnMapping::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open column mapping " + path.string());
  ColumnMapping m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected 'source = canonical'");
    }
    m.source_to_canonical[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
  }
  return m;
}

Cohort parse_cohort_csv(const std::string& text, const ColumnMapping& mapping, const CohortSchema& schema) {
  const std::vector<std::vector<std::string>> rows = parse_csv(text);
  if (rows.empty()) throw SchemaError("cohort file is empty");
  std::map<std::string, size_t> column_index;
  for (size_t c = 0; c < rows[0].size(); ++c) {
    std::string name = trim(rows[0][c]);
    if (auto it = mapping.source_to_canonical.find(name); it != mapping.source_to_canonical.end()) {
      name = it->second;
    }
    column_index[name] = c;
  }
  for (const std::string& col : canonical_header(schema)) {
    if (col == "reason") continue;  // optional
    if (!column_index.contains(col)) throw SchemaError("missing column " + col);
  }
  auto cell = [&](const std::vector<std::string>& row, const std::string& col) -> std::string {
    auto it = column_index.find(col);
    if (it == column_index.end() || it->second >= row.size()) return {};
    return trim(row[it->second]);
  };

  Cohort cohort;
  cohort.schema = schema;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    PatientRecord rec;
    rec.id = cell(row, "id");
    if (rec.id.empty()) throw ValidationError("row " + std::to_string(r + 1) + ": empty id");
    rec.s.resize(schema.static_dim());
    for (int i = 0; i < schema.static_dim(); ++i) {
      rec.s[i] = parse_number(cell(row, static_column(i)), static_column(i), rec.id);
    }
    rec.x = Matrix::Zero(kSteps, schema.score_dim());
    for (int t = 0; t < kSteps; ++t) {
      int present = 0;
      for (int d = 0; d < schema.score_dim(); ++d) {
        const std::string v = cell(row, score_column(t, d));
        if (v.empty()) continue;
        rec.x(t, d) = parse_number(v, score_column(t, d), rec.id);
        ++present;
      }
      if (present != 0 && present != schema.score_dim()) {
        throw ValidationError("record " + rec.id + ": visit " + std::to_string(t) + " is partially filled");
      }
      rec.mask[static_cast<size_t>(t)] = present == schema.score_dim();
    }
    for (int t = 0; t < kIntervals; ++t) {
      const std::string col = label_column(t);
      const double v = parse_number(cell(row, col), col, rec.id);
      if (v != 0.0 && v != 1.0) throw ValidationError("record " + rec.id + ": " + col + " is not binary");
      rec.y[static_cast<size_t>(t)] = static_cast<int>(v);
      rec.a[static_cast<size_t>(t)] = rec.y[static_cast<size_t>(t)];
    }
    if (std::string reason = cell(row, "reason"); !reason.empty()) rec.withdrawal_reason = reason;
    cohort.records.push_back(std::move(rec));
  }
  validate_cohort(cohort);
  return cohort;
}

Cohort load_cohort(const std::filesystem::path& path, const ColumnMapping& mapping, const CohortSchema& schema) {
  return parse_cohort_csv(read_file(path), mapping, schema);
}

std::string canonical_csv(const Cohort& cohort) {
  const CohortSchema& schema = cohort.schema;
  std::string out = join(canonical_header(schema), ",") + "\n";
  for (const PatientRecord& r : cohort.records) {
    std::vector<std::string> cells{csv_escape(r.id)};
    for (int i = 0; i < schema.static_dim(); ++i) cells.push_back(format_number(r.s[i]));
    for (int t = 0; t < kSteps; ++t) {
      for (int d = 0; d < schema.score_dim(); ++d) {
        cells.push_back(r.mask[static_cast<size_t>(t)] ? format_number(r.x(t, d)) : std::string{});
      }
    }
    for (int t = 0; t < kIntervals; ++t) cells.push_back(std::to_string(r.y[static_cast<size_t>(t)]));
    cells.push_back(r.withdrawal_reason ? csv_escape(*r.withdrawal_reason) : std::string{});
    out += join(cells, ",") + "\n";
  }
  return out;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  write_file(path, canonical_csv(cohort));
}

Cohort apply_withdrawal_policy(Cohort cohort, bool use_post_withdrawal_scores) {
  if (use_post_withdrawal_scores) return cohort;
  for (PatientRecord& r : cohort.records) {
    const int w = r.withdrawal_interval();
    for (int t = w + 1; t < kSteps; ++t) r.mask[static_cast<size_t>(t)] = false;
  }
  return cohort;
}

Vector NormalizationStats::normalize_static(const Vector& s) const {
  if (s.size() != static_mean.size()) throw DimensionError("normalize: static dimension mismatch");
  return (s - static_mean).cwiseQuotient(static_std);
}

Vector NormalizationStats::normalize_scores(const Vector& x) const {
  if (x.size() != score_mean.size()) throw DimensionError("normalize: score dimension mismatch");
  return (x - score_mean).cwiseQuotient(score_std);
}

Vector NormalizationStats::denormalize_scores(const Vector& z) const {
  if (z.size() != score_mean.size()) throw DimensionError("denormalize: score dimension mismatch");
  return z.cwiseProduct(score_std) + score_mean;
}

Matrix NormalizationStats::normalize_score_rows(const Matrix& x) const {
  if (x.cols() != score_mean.size()) throw DimensionError("normalize: score dimension mismatch");
  return (x.rowwise() - score_mean.transpose()).array().rowwise() / score_std.transpose().array();
}

Matrix NormalizationStats::denormalize_score_rows(const Matrix& z) const {
  if (z.cols() != score_mean.size()) throw DimensionError("denormalize: score dimension mismatch");
  Matrix scaled = z.array().rowwise() * score_std.transpose().array();
  return scaled.rowwise() + score_mean.transpose();
}

NormalizationStats fit_normalization(const Cohort& cohort, const std::set<std::string>& train_ids) {
  if (train_ids.empty()) throw ValidationError("fit_normalization: no training ids");
  const int sd = cohort.schema.static_dim();
  const int xd = cohort.schema.score_dim();
  Vector s_sum = Vector::Zero(sd), s_sq = Vector::Zero(sd);
  Vector x_sum = Vector::Zero(xd), x_sq = Vector::Zero(xd);
  double s_n = 0.0, x_n = 0.0;
  for (const PatientRecord& r : cohort.records) {
    if (!train_ids.contains(r.id)) continue;
    s_sum += r.s;
    s_n += 1.0;
    for (int t = 0; t < kSteps; ++t) {
      if (!r.mask[static_cast<size_t>(t)]) continue;
      x_sum += r.x.row(t).transpose();
      x_n += 1.0;
    }
  }
  if (s_n == 0.0) throw ValidationError("fit_normalization: none of the training ids are in the cohort");
  NormalizationStats st;
  st.static_mean = s_sum / s_n;
  st.score_mean = x_n > 0.0 ? Vector(x_sum / x_n) : Vector::Zero(xd);
  // Second pass around the mean for accuracy.
  for (const PatientRecord& r : cohort.records) {
    if (!train_ids.contains(r.id)) continue;
    s_sq += (r.s - st.static_mean).cwiseAbs2();
    for (int t = 0; t < kSteps; ++t) {
      if (r.mask[static_cast<size_t>(t)]) x_sq += (r.x.row(t).transpose() - st.score_mean).cwiseAbs2();
    }
  }
  st.static_std = (s_sq / s_n).cwiseSqrt();
  st.score_std = x_n > 0.0 ? Vector((x_sq / x_n).cwiseSqrt()) : Vector::Ones(xd);
  auto floor = [&](Vector& std, const std::vector<std::string>& names) {
    for (Eigen::Index i = 0; i < std.size(); ++i) {
      if (std[i] < st.epsilon) {
        std::cerr << "warning: column " << names[static_cast<size_t>(i)]
                  << " is constant on the training set; std clamped to " << st.epsilon << "\n";
        std[i] = st.epsilon;
      }
    }
  };
  floor(st.static_std, cohort.schema.static_names);
  floor(st.score_std, cohort.schema.score_names);
  return st;
}

PatientRecord normalize(const PatientRecord& record, const NormalizationStats& stats) {
  PatientRecord out = record;
  out.s = stats.normalize_static(record.s);
  out.x = stats.normalize_score_rows(record.x);
  for (int t = 0; t < kSteps; ++t) {
    if (!record.mask[static_cast<size_t>(t)]) out.x.row(t).setZero();
  }
  return out;
}

PatientRecord denormalize(const PatientRecord& record, const NormalizationStats& stats) {
  PatientRecord out = record;
  out.s = record.s.cwiseProduct(stats.static_std) + stats.static_mean;
  out.x = stats.denormalize_score_rows(record.x);
  for (int t = 0; t < kSteps; ++t) {
    if (!record.mask[static_cast<size_t>(t)]) out.x.row(t).setZero();
  }
  return out;
}

std::vector<std::string> SplitSpec::test_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, a] : assignments) {
    if (a == kTestAssignment) ids.push_back(id);
  }
  return ids;
}

std::vector<std::string> SplitSpec::fold_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, a] : assignments) {
    if (a == fold) ids.push_back(id);
  }
  return ids;
}

std::vector<std::string> SplitSpec::train_ids_excluding(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, a] : assignments) {
    if (a != kTestAssignment && a != fold) ids.push_back(id);
  }
  return ids;
}

std::vector<std::string> SplitSpec::all_train_ids() const { return train_ids_excluding(kTestAssignment); }

SplitSpec make_splits(const Cohort& cohort, unsigned long long seed, double test_fraction, int k) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  if (k < 2) throw ValidationError("k must be at least 2");
  std::vector<std::string> ids;
  for (const PatientRecord& r : cohort.records) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (size_t i = ids.size(); i > 1; --i) {
    std::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(ids[i - 1], ids[pick(rng)]);
  }
  const auto n_test = static_cast<size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
  const size_t n_train = ids.size() - n_test;
  if (static_cast<size_t>(k) > n_train) {
    throw ValidationError("k = " + std::to_string(k) + " exceeds the training set size " + std::to_string(n_train));
  }
  SplitSpec spec;
  spec.seed = seed;
  spec.test_fraction = test_fraction;
  spec.k = k;
  for (size_t i = 0; i < ids.size(); ++i) {
    spec.assignments[ids[i]] = i < n_test ? kTestAssignment : static_cast<int>((i - n_test) % static_cast<size_t>(k));
  }
  return spec;
}

void write_splits(const SplitSpec& splits, const std::filesystem::path& path) {
  std::string out = "id,assignment\n";
  for (const auto& [id, a] : splits.assignments) {
    out += csv_escape(id) + "," + (a == kTestAssignment ? std::string("test") : "fold" + std::to_string(a)) + "\n";
  }
  write_file(path, out);
}

SplitSpec read_splits(const std::filesystem::path& path) {
  const auto rows = parse_csv(read_file(path));
  SplitSpec spec;
  int max_fold = -1;
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 2) continue;
    const std::string& a = rows[r][1];
    int v = kTestAssignment;
    if (a != "test") {
      if (a.rfind("fold", 0) != 0) throw SchemaError("splits: bad assignment '" + a + "'");
      v = std::stoi(a.substr(4));
      max_fold = std::max(max_fold, v);
    }
    spec.assignments[rows[r][0]] = v;
  }
  spec.k = max_fold + 1;
  const double n = static_cast<double>(spec.assignments.size());
  spec.test_fraction = n > 0 ? static_cast<double>(spec.test_ids().size()) / n : 0.0;
  return spec;
}

SequenceBatch make_batch(const std::vector<const PatientRecord*>& records) {
  if (records.empty()) throw ValidationError("make_batch: no records");
  const auto b = static_cast<Eigen::Index>(records.size());
  const Eigen::Index sd = records.front()->s.size();
  const Eigen::Index xd = records.front()->x.cols();
  SequenceBatch batch;
  batch.s.resize(b, sd);
  for (Matrix& xt : batch.x) xt = Matrix::Zero(b, xd);
  batch.mask = Matrix::Zero(b, kSteps);
  batch.y.resize(b, kIntervals);
  batch.a.resize(b, kIntervals);
  for (Eigen::Index i = 0; i < b; ++i) {
    const PatientRecord& r = *records[static_cast<size_t>(i)];
    if (r.s.size() != sd || r.x.cols() != xd) throw DimensionError("make_batch: records disagree on dimensions");
    batch.ids.push_back(r.id);
    batch.s.row(i) = r.s.transpose();
    for (int t = 0; t < kSteps; ++t) {
      if (r.mask[static_cast<size_t>(t)]) {
        batch.x[static_cast<size_t>(t)].row(i) = r.x.row(t);
        batch.mask(i, t) = 1.0;
      }
    }
    for (int t = 0; t < kIntervals; ++t) {
      batch.y(i, t) = r.y[static_cast<size_t>(t)];
      batch.a(i, t) = r.a[static_cast<size_t>(t)];
    }
  }
  return batch;
}

double sample_beta(double alpha, double beta, Rng& rng) {
  std::gamma_distribution<double> ga(alpha, 1.0);
  std::gamma_distribution<double> gb(beta, 1.0);
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y > 0.0) return x / (x + y);
  }
}

SequenceBatch mixup_with(const SequenceBatch& batch, const std::vector<double>& weights,
                         const std::vector<int>& partners) {
  const Eigen::Index b = batch.size();
  if (static_cast<Eigen::Index>(weights.size()) != b || static_cast<Eigen::Index>(partners.size()) != b) {
    throw DimensionError("mixup: weights/partners must match the batch size");
  }
  SequenceBatch out = batch;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double w = weights[static_cast<size_t>(i)];
    const Eigen::Index j = partners[static_cast<size_t>(i)];
    if (w < 0.0 || w > 1.0) throw ValidationError("mixup: weight outside [0, 1]");
    if (j < 0 || j >= b) throw ValidationError("mixup: partner index out of range");
    if (w == 1.0) continue;
    out.s.row(i) = w * batch.s.row(i) + (1.0 - w) * batch.s.row(j);
    for (size_t t = 0; t < kSteps; ++t) out.x[t].row(i) = w * batch.x[t].row(i) + (1.0 - w) * batch.x[t].row(j);
    out.y.row(i) = w * batch.y.row(i) + (1.0 - w) * batch.y.row(j);
    out.a.row(i) = w * batch.a.row(i) + (1.0 - w) * batch.a.row(j);
    out.mask.row(i) = batch.mask.row(i).cwiseMin(batch.mask.row(j));
  }
  return out;
}

SequenceBatch mixup_batch(const SequenceBatch& batch, double alpha, Rng& rng) {
  if (alpha <= 0.0) throw ValidationError("mixup: alpha must be positive");
  if (batch.size() < 2) {
    std::cerr << "warning: mixup needs at least two samples; batch returned unchanged\n";
    return batch;
  }
  std::vector<double> weights(static_cast<size_t>(batch.size()));
  std::vector<int> partners(static_cast<size_t>(batch.size()));
  std::iota(partners.begin(), partners.end(), 0);
  for (size_t i = partners.size(); i > 1; --i) {
    std::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(partners[i - 1], partners[pick(rng)]);
  }
  for (double& w : weights) w = sample_beta(alpha, alpha, rng);
  return mixup_with(batch, weights, partners);
}

}  // namespace adherence
