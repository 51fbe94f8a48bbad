#include "prisk/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "prisk/common.hpp"
#include "prisk/parallel.hpp"

namespace prisk {

using json = nlohmann::json;

void validate(const DriverProfile& p) {
  if (!std::isfinite(p.age) || p.age < 16.0) {
    throw DataError("driver '" + p.driver_id + "': age must be at least 16");
  }
  if (!std::isfinite(p.experience) || p.experience < 0.0) {
    throw DataError("driver '" + p.driver_id + "': experience must be non-negative");
  }
  if (p.experience > p.age - 15.0) {
    throw DataError("driver '" + p.driver_id + "': experience exceeds age - 15");
  }
}

FeatureVector encode(const DriverProfile& p) {
  return {static_cast<double>(p.gender), p.age, p.experience, static_cast<double>(p.style)};
}

double squared_distance(const FeatureVector& a, const FeatureVector& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

double distance(const FeatureVector& a, const FeatureVector& b) {
  return std::sqrt(squared_distance(a, b));
}

FeatureVector Normalizer::apply(const FeatureVector& v) const {
  FeatureVector out;
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j] / divisors[j];
  return out;
}

NormalizedCohort encode_and_normalize(std::span<const DriverProfile> profiles,
                                      double outlier_sigma) {
  std::vector<FeatureVector> raw;
  raw.reserve(profiles.size());
  for (const auto& p : profiles) {
    validate(p);
    raw.push_back(encode(p));
  }

  const std::size_t n = raw.size();
  FeatureVector mean{}, sd{};
  if (n >= 2) {
    for (const auto& v : raw)
      for (std::size_t j = 0; j < 4; ++j) mean[j] += v[j] / static_cast<double>(n);
    for (const auto& v : raw)
      for (std::size_t j = 0; j < 4; ++j) sd[j] += (v[j] - mean[j]) * (v[j] - mean[j]);
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n - 1));
  }

  NormalizedCohort cohort;
  std::vector<FeatureVector> kept;
  for (std::size_t i = 0; i < n; ++i) {
    bool outlier = false;
    for (std::size_t j = 0; j < 4; ++j) {
      if (sd[j] > 0.0 && std::abs(raw[i][j] - mean[j]) > outlier_sigma * sd[j]) outlier = true;
    }
    if (outlier) {
      cohort.outliers.push_back(profiles[i].driver_id);
    } else {
      cohort.driver_ids.push_back(profiles[i].driver_id);
      kept.push_back(raw[i]);
    }
  }
  if (kept.size() < 2) throw DataError("fewer than two driver profiles after outlier removal");

  for (std::size_t j = 0; j < 4; ++j) {
    double lo = kept[0][j], hi = kept[0][j];
    for (const auto& v : kept) {
      lo = std::min(lo, v[j]);
      hi = std::max(hi, v[j]);
    }
    cohort.normalizer.divisors[j] = (hi - lo) > 0.0 ? (hi - lo) : 1.0;
  }
  for (const auto& v : kept) cohort.vectors.push_back(cohort.normalizer.apply(v));
  return cohort;
}

std::size_t nearest_center(std::span<const FeatureVector> centers, const FeatureVector& v) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const double d = squared_distance(v, centers[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

namespace {

std::vector<FeatureVector> plus_plus_seeding(std::span<const FeatureVector> x, std::size_t p,
                                             Rng& rng) {
  std::vector<FeatureVector> centers;
  centers.push_back(x[rng.index(x.size())]);
  std::vector<double> d2(x.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < p) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(x[i], centers.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = x.size() - 1;
      for (std::size_t i = 0; i < x.size(); ++i) {
        r -= d2[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(x.size());
    }
    centers.push_back(x[pick]);
  }
  return centers;
}

double objective(std::span<const FeatureVector> x, std::span<const FeatureVector> centers,
                 std::span<const std::size_t> labels) {
  double j = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) j += squared_distance(x[i], centers[labels[i]]);
  return j;
}

std::vector<FeatureVector> cluster_means(std::span<const FeatureVector> x,
                                         std::span<const std::size_t> labels,
                                         std::span<const std::size_t> sizes) {
  std::vector<FeatureVector> means(sizes.size(), FeatureVector{});
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t d = 0; d < 4; ++d) means[labels[i]][d] += x[i][d];
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) continue;
    for (std::size_t d = 0; d < 4; ++d) means[k][d] /= static_cast<double>(sizes[k]);
  }
  return means;
}

// Hartigan single-point transfers: move x_i from A to B when
// n_B/(n_B+1) |x_i - m_B|^2 < n_A/(n_A-1) |x_i - m_A|^2.
void transfer_refine(std::span<const FeatureVector> x, KMeansResult& r, std::size_t p) {
  std::vector<std::size_t> sizes(p, 0);
  for (auto l : r.labels) ++sizes[l];
  r.centers = cluster_means(x, r.labels, sizes);
  for (bool moved = true; moved;) {
    moved = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t a = r.labels[i];
      if (sizes[a] <= 1) continue;
      const double na = static_cast<double>(sizes[a]);
      const double remove = na / (na - 1.0) * squared_distance(x[i], r.centers[a]);
      std::size_t to = a;
      double best = remove;
      for (std::size_t b = 0; b < p; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(sizes[b]);
        const double add = nb / (nb + 1.0) * squared_distance(x[i], r.centers[b]);
        if (add < best) {
          best = add;
          to = b;
        }
      }
      if (to == a || remove - best <= 1e-12 * (1.0 + remove)) continue;
      r.labels[i] = to;
      --sizes[a];
      ++sizes[to];
      r.centers = cluster_means(x, r.labels, sizes);
      r.objective_history.push_back(objective(x, r.centers, r.labels));
      moved = true;
    }
  }
}

}  // namespace

KMeansResult kmeans(std::span<const FeatureVector> x, std::size_t p, std::uint64_t seed,
                    int max_iter, double tol) {
  const std::size_t n = x.size();
  if (p < 1 || p > n) {
    throw ConfigError("k-means needs 1 <= p <= n (p = " + std::to_string(p) +
                      ", n = " + std::to_string(n) + ")");
  }
  Rng rng(seed);
  KMeansResult r;
  r.centers = plus_plus_seeding(x, p, rng);
  r.labels.assign(n, SIZE_MAX);

  std::vector<std::size_t> prev;
  for (int iter = 0; iter < max_iter; ++iter) {
    r.iterations = iter + 1;
    prev = r.labels;
    for (std::size_t i = 0; i < n; ++i) r.labels[i] = nearest_center(r.centers, x[i]);

    // Re-seed empty clusters with the worst-served point.
    std::vector<std::size_t> sizes(p, 0);
    for (auto l : r.labels) ++sizes[l];
    for (std::size_t k = 0; k < p; ++k) {
      if (sizes[k] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[r.labels[i]] <= 1) continue;
        const double d = squared_distance(x[i], r.centers[r.labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far_d < 0.0) break;  // every point is alone in its cluster
      --sizes[r.labels[far]];
      r.labels[far] = k;
      sizes[k] = 1;
      r.centers[k] = x[far];
    }

    const double j = objective(x, r.centers, r.labels);
    const bool stable = (r.labels == prev);
    const bool flat = !r.objective_history.empty() && r.objective_history.back() - j <= tol;
    r.objective_history.push_back(j);

    // Center update: mean of assigned points.
    std::vector<FeatureVector> sums(p, FeatureVector{});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < 4; ++d) sums[r.labels[i]][d] += x[i][d];
    for (std::size_t k = 0; k < p; ++k) {
      if (sizes[k] == 0) continue;
      for (std::size_t d = 0; d < 4; ++d) {
        r.centers[k][d] = sums[k][d] / static_cast<double>(sizes[k]);
      }
    }

    if (stable || flat) {
      r.converged = true;
      break;
    }
  }

  r.objective = objective(x, r.centers, r.labels);
  if (r.objective < r.objective_history.back()) r.objective_history.push_back(r.objective);
  transfer_refine(x, r, p);
  r.objective = objective(x, r.centers, r.labels);
  return r;
}

KMeansResult kmeans_restarts(std::span<const FeatureVector> x, std::size_t p,
                             std::uint64_t seed, int restarts) {
  std::optional<KMeansResult> best;
  for (int s = 0; s < std::max(restarts, 1); ++s) {
    auto r = kmeans(x, p, mix_seed(seed, static_cast<std::uint64_t>(s)));
    if (!best || r.objective < best->objective) best = std::move(r);
  }
  return *best;
}

KMeansResult kmeans_restarts_parallel(std::span<const FeatureVector> x, std::size_t p,
                                      std::uint64_t seed, int restarts) {
  const int n = std::max(restarts, 1);
  if (p < 1 || p > x.size()) return kmeans(x, p, seed);  // raises ConfigError
  std::vector<KMeansResult> runs(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n; ++s) {
    runs[static_cast<std::size_t>(s)] = kmeans(x, p, mix_seed(seed, static_cast<std::uint64_t>(s)));
  }
  std::size_t best = 0;
  for (std::size_t s = 1; s < runs.size(); ++s) {
    if (runs[s].objective < runs[best].objective) best = s;
  }
  return std::move(runs[best]);
}

std::optional<double> silhouette(std::span<const FeatureVector> x,
                                 std::span<const std::size_t> labels, std::size_t p) {
  std::vector<std::size_t> sizes(p, 0);
  for (auto l : labels) ++sizes[l];
  const auto nonempty = std::count_if(sizes.begin(), sizes.end(), [](auto s) { return s > 0; });
  if (nonempty < 2 || x.empty()) return std::nullopt;

  double total = 0.0;
  std::vector<double> dist_sum(p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (sizes[labels[i]] <= 1) continue;  // singleton clusters score 0
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (j != i) dist_sum[labels[j]] += distance(x[i], x[j]);
    }
    const double a = dist_sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < p; ++k) {
      if (k == labels[i] || sizes[k] == 0) continue;
      b = std::min(b, dist_sum[k] / static_cast<double>(sizes[k]));
    }
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(x.size());
}

ClusterQuality quality(std::span<const FeatureVector> x, std::span<const FeatureVector> centers,
                       std::span<const std::size_t> labels) {
  ClusterQuality q;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d2 = squared_distance(x[i], centers[labels[i]]);
    q.sse += d2;
    q.avg_deviation += std::sqrt(d2);
  }
  if (!x.empty()) q.avg_deviation /= static_cast<double>(x.size());
  q.silhouette = silhouette(x, labels, centers.size());
  return q;
}

ClusterCountSelection select_cluster_count(std::span<const FeatureVector> x, std::size_t p_max,
                                           int seeds_per_p, std::uint64_t seed) {
  ClusterCountSelection sel;
  if (x.empty()) throw DataError("no vectors to cluster");
  p_max = std::clamp<std::size_t>(p_max, 1, x.size());
  sel.degenerate = std::all_of(x.begin(), x.end(), [&](const auto& v) { return v == x[0]; });

  for (std::size_t p = 1; p <= p_max; ++p) {
    const auto fit = kmeans_restarts(x, p, mix_seed(seed, p), seeds_per_p);
    ClusterCountRow row{p, quality(x, fit.centers, fit.labels)};
    if (sel.degenerate) row.quality.silhouette.reset();
    sel.table.push_back(row);
  }
  if (sel.degenerate) return sel;

  const ClusterCountRow* best = nullptr;
  for (const auto& row : sel.table) {
    if (!row.quality.silhouette) continue;
    if (!best || *row.quality.silhouette > *best->quality.silhouette ||
        (*row.quality.silhouette == *best->quality.silhouette &&
         row.quality.sse < best->quality.sse)) {
      best = &row;
    }
  }
  sel.best_p = best ? best->p : 1;
  return sel;
}

ClusterModel make_cluster_model(const NormalizedCohort& cohort, const KMeansResult& fit) {
  ClusterModel m;
  m.p = fit.centers.size();
  m.normalizer = cohort.normalizer;
  m.centers = fit.centers;
  for (std::size_t i = 0; i < cohort.driver_ids.size(); ++i) {
    m.assignments[cohort.driver_ids[i]] = fit.labels[i];
  }
  return m;
}

std::size_t assign(const ClusterModel& model, const DriverProfile& profile) {
  return nearest_center(model.centers, model.normalizer.apply(encode(profile)));
}

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "prisk-cluster-model";
  j["version"] = 1;
  j["p"] = model.p;
  j["normalizer"] = model.normalizer.divisors;
  j["centers"] = model.centers;
  j["assignments"] = model.assignments;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cluster model " + path.string());
  out << j.dump(2) << '\n';
}

ClusterModel load_cluster_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read cluster model " + path.string());
  try {
    const auto j = json::parse(in);
    if (j.at("format") != "prisk-cluster-model" || j.at("version") != 1) {
      throw FormatError("unsupported cluster model format in " + path.string());
    }
    ClusterModel m;
    m.p = j.at("p").get<std::size_t>();
    m.normalizer.divisors = j.at("normalizer").get<FeatureVector>();
    m.centers = j.at("centers").get<std::vector<FeatureVector>>();
    m.assignments = j.at("assignments").get<std::map<std::string, std::size_t>>();
    if (m.centers.size() != m.p) throw FormatError("center count does not match p");
    for (const auto& [id, k] : m.assignments) {
      if (k >= m.p) throw FormatError("assignment of '" + id + "' out of range");
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cluster model: ") + e.what());
  }
}

PcaResult pca_project(std::span<const FeatureVector> x) {
  const std::size_t n = x.size();
  if (n < 3) throw DataError("PCA needs at least three vectors");

  PcaResult r;
  for (const auto& v : x)
    for (std::size_t j = 0; j < 4; ++j) r.mean[j] += v[j] / static_cast<double>(n);

  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  for (const auto& v : x) {
    Eigen::Vector4d c;
    for (int j = 0; j < 4; ++j) c[j] = v[static_cast<std::size_t>(j)] - r.mean[static_cast<std::size_t>(j)];
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(n - 1);
  if (cov.trace() <= 0.0) throw DataError("PCA on data with zero variance");

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(cov);
  const auto& values = solver.eigenvalues();   // ascending
  const auto& vectors = solver.eigenvectors();
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    r.eigenvalues[static_cast<std::size_t>(i)] = std::max(values[3 - i], 0.0);
    total += r.eigenvalues[static_cast<std::size_t>(i)];
  }
  for (std::size_t c = 0; c < 2; ++c) {
    Eigen::Vector4d axis = vectors.col(3 - static_cast<int>(c));
    for (int j = 0; j < 4; ++j) {
      if (std::abs(axis[j]) > 1e-12) {
        if (axis[j] < 0.0) axis = -axis;
        break;
      }
    }
    for (int j = 0; j < 4; ++j) r.components[c][static_cast<std::size_t>(j)] = axis[j];
    r.explained_ratio[c] = r.eigenvalues[c] / total;
  }

  r.points.reserve(n);
  for (const auto& v : x) {
    std::array<double, 2> pt{};
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 4; ++j) pt[c] += (v[j] - r.mean[j]) * r.components[c][j];
    r.points.push_back(pt);
  }
  return r;
}

namespace {

Gender parse_gender(const std::string& s) {
  if (s == "male") return Gender::Male;
  if (s == "female") return Gender::Female;
  throw DataError("unknown gender '" + s + "' (expected male or female)");
}

DrivingStyle parse_style(const std::string& s) {
  if (s == "aggressive") return DrivingStyle::Aggressive;
  if (s == "moderate") return DrivingStyle::Moderate;
  if (s == "conservative") return DrivingStyle::Conservative;
  throw DataError("unknown driving style '" + s + "'");
}

const char* to_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

const char* to_string(DrivingStyle s) {
  switch (s) {
    case DrivingStyle::Aggressive: return "aggressive";
    case DrivingStyle::Moderate: return "moderate";
    case DrivingStyle::Conservative: return "conservative";
  }
  return "moderate";
}

}  // namespace

std::vector<DriverProfile> parse_roster(std::istream& in) {
  std::vector<DriverProfile> roster;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      DriverProfile p;
      p.driver_id = j.at("driver_id").get<std::string>();
      p.gender = parse_gender(j.at("gender").get<std::string>());
      p.age = j.at("age").get<double>();
      p.experience = j.at("experience").get<double>();
      p.style = parse_style(j.at("style").get<std::string>());
      validate(p);
      roster.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    } catch (const DataError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return roster;
}

std::vector<DriverProfile> load_roster(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read roster " + path.string());
  return parse_roster(in);
}

void write_roster(std::ostream& out, std::span<const DriverProfile> roster) {
  for (const auto& p : roster) {
    json j = {{"driver_id", p.driver_id},
              {"gender", to_string(p.gender)},
              {"age", p.age},
              {"experience", p.experience},
              {"style", to_string(p.style)}};
    out << j.dump() << '\n';
  }
}

void save_roster(std::span<const DriverProfile> roster, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write roster " + path.string());
  write_roster(out, roster);
}

}  // namespace prisk
