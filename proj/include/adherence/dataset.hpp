#pragma once

// Patient cohort: canonical schema, validation, normalization, splits and
// Mixup batches.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace adherence {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Visits per patient; adherence intervals sit between consecutive visits.
inline constexpr int kSteps = 6;
inline constexpr int kIntervals = kSteps - 1;
inline constexpr int kStaticDim = 14;
inline constexpr int kScoreDim = 11;
inline constexpr int kSchemaVersion = 1;
inline constexpr std::array<int, kSteps> kVisitMonths{0, 4, 12, 18, 24, 36};

/// Column labels and admissible score ranges. The release layout has 14
/// statics, 10 symptom items in [0, 10] and a nonnegative medication score.
struct CohortSchema {
  std::vector<std::string> static_names;
  std::vector<std::string> score_names;
  Vector score_lower;
  Vector score_upper;  // +inf where unbounded

  [[nodiscard]] int static_dim() const { return static_cast<int>(static_names.size()); }
  [[nodiscard]] int score_dim() const { return static_cast<int>(score_names.size()); }

  static CohortSchema release();
  /// Canonical names (s01.., x_01..) with unbounded scores.
  static CohortSchema generic(int static_dim, int score_dim);
};

struct PatientRecord {
  std::string id;
  Vector s;                          // static features
  Matrix x;                          // kSteps x score_dim; row t is visit t
  std::array<int, kIntervals> y{};   // 1 = continues treatment in interval t -> t+1
  std::array<int, kIntervals> a{};   // treatment given; equals y numerically
  std::array<bool, kSteps> mask{};   // visit observed
  std::optional<std::string> withdrawal_reason;

  /// Index of the first interval with y = 0, or kIntervals if none.
  [[nodiscard]] int withdrawal_interval() const;
};

struct Cohort {
  std::vector<PatientRecord> records;
  int schema_version = kSchemaVersion;
  CohortSchema schema;

  [[nodiscard]] size_t size() const { return records.size(); }
  [[nodiscard]] const PatientRecord& by_id(const std::string& id) const;
};

/// Throws ValidationError (with the record id) when an invariant fails.
void validate_record(const PatientRecord& record, const CohortSchema& schema);
void validate_cohort(const Cohort& cohort);

/// Source-column to canonical-column renames plus optional feature labels.
struct ColumnMapping {
  std::map<std::string, std::string> source_to_canonical;

  /// Key-value file: one `source = canonical` per line, `#` comments.
  static ColumnMapping load(const std::filesystem::path& path);
};

/// Reads a CSV in canonical layout (after applying `mapping`, if any).
Cohort load_cohort(const std::filesystem::path& path, const ColumnMapping& mapping = {},
                   const CohortSchema& schema = CohortSchema::release());
Cohort parse_cohort_csv(const std::string& text, const ColumnMapping& mapping = {},
                        const CohortSchema& schema = CohortSchema::release());
std::string canonical_csv(const Cohort& cohort);
void write_cohort(const Cohort& cohort, const std::filesystem::path& path);

/// Masks visits after withdrawal when post-withdrawal scores are not used.
Cohort apply_withdrawal_policy(Cohort cohort, bool use_post_withdrawal_scores);

inline constexpr double kStdEpsilon = 1e-6;

struct NormalizationStats {
  Vector static_mean, static_std;
  Vector score_mean, score_std;
  double epsilon = kStdEpsilon;

  [[nodiscard]] Vector normalize_static(const Vector& s) const;
  [[nodiscard]] Vector normalize_scores(const Vector& x) const;
  [[nodiscard]] Vector denormalize_scores(const Vector& z) const;
  /// Row-wise over a (rows x score_dim) matrix.
  [[nodiscard]] Matrix normalize_score_rows(const Matrix& x) const;
  [[nodiscard]] Matrix denormalize_score_rows(const Matrix& z) const;
};

/// Population mean/std over training records; scores use observed visits
/// only. Degenerate columns get std = epsilon and a warning on stderr.
NormalizationStats fit_normalization(const Cohort& cohort, const std::set<std::string>& train_ids);

PatientRecord normalize(const PatientRecord& record, const NormalizationStats& stats);
PatientRecord denormalize(const PatientRecord& record, const NormalizationStats& stats);

inline constexpr int kTestAssignment = -1;

struct SplitSpec {
  unsigned long long seed = 0;
  double test_fraction = 0.2;
  int k = 5;
  std::map<std::string, int> assignments;  // fold index, or kTestAssignment

  [[nodiscard]] std::vector<std::string> test_ids() const;
  [[nodiscard]] std::vector<std::string> fold_ids(int fold) const;
  /// Every non-test id outside `fold`.
  [[nodiscard]] std::vector<std::string> train_ids_excluding(int fold) const;
  [[nodiscard]] std::vector<std::string> all_train_ids() const;
};

SplitSpec make_splits(const Cohort& cohort, unsigned long long seed, double test_fraction = 0.2, int k = 5);
/// Sidecar file with `id,assignment` rows (`test` or `fold<i>`).
void write_splits(const SplitSpec& splits, const std::filesystem::path& path);
SplitSpec read_splits(const std::filesystem::path& path);

/// Normalized full-sequence batch. Unobserved score cells hold 0.
struct SequenceBatch {
  std::vector<std::string> ids;
  Matrix s;                         // B x static_dim
  std::array<Matrix, kSteps> x;     // each B x score_dim
  Matrix mask;                      // B x kSteps, 1 = observed
  Matrix y;                         // B x kIntervals, soft after Mixup
  Matrix a;                         // B x kIntervals, soft after Mixup

  [[nodiscard]] Eigen::Index size() const { return s.rows(); }
};

/// Records must already be normalized.
SequenceBatch make_batch(const std::vector<const PatientRecord*>& records);

/// Mixup with one Beta(alpha, alpha) weight per output row and a random
/// partner row. A batch of one is returned unchanged with a warning.
SequenceBatch mixup_batch(const SequenceBatch& batch, double alpha, Rng& rng);
/// Deterministic core: row i = w_i * batch[i] + (1 - w_i) * batch[partner_i];
/// the mask is the AND of both parents.
SequenceBatch mixup_with(const SequenceBatch& batch, const std::vector<double>& weights,
                         const std::vector<int>& partners);
double sample_beta(double alpha, double beta, Rng& rng);

}  // namespace adherence
