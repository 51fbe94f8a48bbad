#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prisk {

enum class Gender { Female = 0, Male = 1 };
enum class DrivingStyle { Conservative = 0, Moderate = 1, Aggressive = 2 };

struct DriverProfile {
  std::string driver_id;
  Gender gender = Gender::Male;
  double age = 30.0;         // years
  double experience = 5.0;   // years
  DrivingStyle style = DrivingStyle::Moderate;
};

void validate(const DriverProfile& p);  // throws DataError

// (gender, age, experience, style)
using FeatureVector = std::array<double, 4>;

FeatureVector encode(const DriverProfile& p);

double squared_distance(const FeatureVector& a, const FeatureVector& b);
double distance(const FeatureVector& a, const FeatureVector& b);

// Per-dimension range divisors. The range is not min-shifted, so normalized
// values need not land in [0, 1].
struct Normalizer {
  FeatureVector divisors = {1.0, 1.0, 1.0, 1.0};
  FeatureVector apply(const FeatureVector& v) const;
};

struct NormalizedCohort {
  std::vector<std::string> driver_ids;
  std::vector<FeatureVector> vectors;
  Normalizer normalizer;
  std::vector<std::string> outliers;  // removed before normalization
};

// Removes profiles farther than `outlier_sigma` sample standard deviations
// from the mean in any dimension, then divides each dimension by its range
// (a zero range leaves the divisor at 1). Throws DataError if fewer than two
// profiles remain.
NormalizedCohort encode_and_normalize(std::span<const DriverProfile> profiles,
                                      double outlier_sigma = 4.0);

struct KMeansResult {
  std::vector<FeatureVector> centers;
  std::vector<std::size_t> labels;
  std::vector<double> objective_history;  // J after every assignment step
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Lloyd iterations from k-means++ seeding. Empty clusters are re-seeded with
// the point farthest from its current center. Throws ConfigError unless
// 1 <= p <= n.
KMeansResult kmeans(std::span<const FeatureVector> vectors, std::size_t p, std::uint64_t seed,
                    int max_iter = 100, double tol = 1e-9);

// Best of `restarts` runs by objective; ties go to the earlier restart.
KMeansResult kmeans_restarts(std::span<const FeatureVector> vectors, std::size_t p,
                             std::uint64_t seed, int restarts);

// Same reduction with restarts run under OpenMP. Bit-identical to the serial
// version.
KMeansResult kmeans_restarts_parallel(std::span<const FeatureVector> vectors, std::size_t p,
                                      std::uint64_t seed, int restarts);

struct ClusterQuality {
  double sse = 0.0;
  std::optional<double> silhouette;  // absent with fewer than two clusters
  double avg_deviation = 0.0;
};

std::optional<double> silhouette(std::span<const FeatureVector> vectors,
                                 std::span<const std::size_t> labels, std::size_t p);

ClusterQuality quality(std::span<const FeatureVector> vectors,
                       std::span<const FeatureVector> centers,
                       std::span<const std::size_t> labels);

struct ClusterCountRow {
  std::size_t p = 0;
  ClusterQuality quality;
};

struct ClusterCountSelection {
  std::size_t best_p = 1;
  bool degenerate = false;  // all vectors identical
  std::vector<ClusterCountRow> table;  // p = 1 .. p_max
};

// best_p maximizes silhouette over p in [2, p_max]; ties go to lower SSE, then
// lower p. p_max is capped at n.
ClusterCountSelection select_cluster_count(std::span<const FeatureVector> vectors,
                                           std::size_t p_max, int seeds_per_p,
                                           std::uint64_t seed);

struct ClusterModel {
  std::size_t p = 0;
  Normalizer normalizer;
  std::vector<FeatureVector> centers;            // in normalized space
  std::map<std::string, std::size_t> assignments;  // driver_id -> cluster
};

ClusterModel make_cluster_model(const NormalizedCohort& cohort, const KMeansResult& fit);

// Nearest center to an already-normalized vector, ties to the lowest index.
std::size_t nearest_center(std::span<const FeatureVector> centers, const FeatureVector& v);

std::size_t assign(const ClusterModel& model, const DriverProfile& profile);

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_cluster_model(const std::filesystem::path& path);

struct PcaResult {
  std::vector<std::array<double, 2>> points;
  std::array<double, 2> explained_ratio{};
  std::array<double, 4> eigenvalues{};  // descending
  std::array<FeatureVector, 2> components{};
  FeatureVector mean{};
};

// Projection onto the top two principal axes of the sample covariance. Each
// axis is signed so its first nonzero component is positive. Throws DataError
// for n < 3 or zero variance.
PcaResult pca_project(std::span<const FeatureVector> vectors);

// Roster: line-delimited {driver_id, gender, age, experience, style} with
// enumerations as strings.
std::vector<DriverProfile> parse_roster(std::istream& in);
std::vector<DriverProfile> load_roster(const std::filesystem::path& path);
void write_roster(std::ostream& out, std::span<const DriverProfile> roster);
void save_roster(std::span<const DriverProfile> roster, const std::filesystem::path& path);

}  // namespace prisk
