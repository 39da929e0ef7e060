#include "uma2/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <utility>

#include "uma2/common.hpp"
#include "uma2/rng.hpp"

namespace uma2 {

void FunnelConfig::validate() const {
  if (num_users == 0) throw ConfigError("sim.users must be > 0");
  if (num_items == 0) throw ConfigError("sim.items must be > 0");
  if (latent_dim == 0) throw ConfigError("sim.latent_dim must be > 0");
  if (recall_temp <= 0 || exposure_temp <= 0 || click_temp <= 0) {
    throw ConfigError("sim temperatures must be > 0");
  }
  if (feature_noise < 0) throw ConfigError("sim.feature_noise must be >= 0");
  if (avg_recall_size == 0) throw ConfigError("sim.avg_recall must be > 0");
  if (avg_exposure_size > avg_recall_size || avg_recall_size > num_items) {
    throw ConfigError("need sim.avg_exposure <= sim.avg_recall <= sim.items");
  }
}

double World::affinity(std::size_t u, std::size_t i) const {
  return dot(user_latent[u], item_latent[i]);
}

double World::true_p1(std::size_t u, std::size_t i) const {
  return sigmoid(config.recall_temp * affinity(u, i) + recall_bias);
}

double World::true_p2(std::size_t u, std::size_t i) const {
  return sigmoid(config.exposure_temp * affinity(u, i) + exposure_bias);
}

double World::click_prob(std::size_t u, std::size_t i) const {
  return sigmoid(config.click_temp * affinity(u, i) + config.click_bias);
}

namespace {

// Bisection on a monotone-increasing f; returns b with f(b) ~= target.
double bisect(const std::function<double(double)>& f, double target) {
  double lo = -60.0, hi = 60.0;
  for (int iter = 0; iter < 100 && hi - lo > 1e-11; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

constexpr std::size_t kCalibrationSampleCap = 2'000'000;

}  // namespace

World generate_world(const FunnelConfig& config) {
  config.validate();
  World w;
  w.config = config;

  const std::size_t n = config.num_users;
  const std::size_t m = config.num_items;
  const std::size_t d = config.latent_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  {
    auto rng = make_rng(config.seed, "world-latent");
    std::normal_distribution<double> gauss(0.0, 1.0);
    w.user_latent.resize(n);
    for (auto& v : w.user_latent) {
      v.resize(d);
      for (double& x : v) x = gauss(rng) * scale;
    }
    w.item_latent.resize(m);
    for (auto& v : w.item_latent) {
      v.resize(d);
      for (double& x : v) x = gauss(rng) * scale;
    }
  }
  {
    auto rng = make_rng(config.seed, "world-noise");
    std::normal_distribution<double> gauss(0.0, 1.0);
    w.user_features.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
      w.user_features[u].resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        w.user_features[u][k] = w.user_latent[u][k] + config.feature_noise * gauss(rng);
      }
    }
    w.item_features.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      w.item_features[i].resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        w.item_features[i][k] = w.item_latent[i][k] + config.feature_noise * gauss(rng);
      }
    }
  }

  // Affinities of every pair, or of a fixed subsample when the full cross
  // product is too large. Only used to calibrate the two bias terms.
  std::vector<double> aff;
  const std::size_t total = n * m;
  if (total <= kCalibrationSampleCap) {
    aff.reserve(total);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t i = 0; i < m; ++i) aff.push_back(w.affinity(u, i));
    }
  } else {
    auto rng = make_rng(config.seed, "world-calib");
    std::uniform_int_distribution<std::size_t> pick_u(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_i(0, m - 1);
    aff.reserve(kCalibrationSampleCap);
    for (std::size_t s = 0; s < kCalibrationSampleCap; ++s) {
      aff.push_back(w.affinity(pick_u(rng), pick_i(rng)));
    }
  }
  const double inv_count = 1.0 / static_cast<double>(aff.size());
  const double items = static_cast<double>(m);

  // Expected recall set size as a function of the recall bias.
  const double rt = config.recall_temp;
  w.recall_bias = bisect(
      [&](double b) {
        double acc = 0.0;
        for (double a : aff) acc += sigmoid(rt * a + b);
        return acc * inv_count * items;
      },
      static_cast<double>(config.avg_recall_size));

  // Exposure is conditional on recall, so p1 weights each pair.
  std::vector<double> p1(aff.size());
  for (std::size_t s = 0; s < aff.size(); ++s) p1[s] = sigmoid(rt * aff[s] + w.recall_bias);
  const double et = config.exposure_temp;
  w.exposure_bias = bisect(
      [&](double b) {
        double acc = 0.0;
        for (std::size_t s = 0; s < aff.size(); ++s) acc += p1[s] * sigmoid(et * aff[s] + b);
        return acc * inv_count * items;
      },
      static_cast<double>(config.avg_exposure_size));

  return w;
}

std::vector<OracleRecord> roll_funnel(const World& world, std::uint64_t roll_index) {
  auto rng = make_rng(world.config.seed, "funnel-roll", roll_index);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<OracleRecord> out;
  const std::size_t n = world.num_users();
  const std::size_t m = world.num_items();
  out.reserve(n * world.config.avg_recall_size);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t i = 0; i < m; ++i) {
      const double p1 = world.true_p1(u, i);
      if (u01(rng) >= p1) continue;
      OracleRecord rec;
      rec.user = static_cast<std::uint32_t>(u);
      rec.item = static_cast<std::uint32_t>(i);
      rec.true_p1 = p1;
      rec.true_p2 = world.true_p2(u, i);
      rec.recalled = true;
      rec.exposed = u01(rng) < rec.true_p2;
      if (rec.exposed) rec.clicked = u01(rng) < world.click_prob(u, i);
      out.push_back(rec);
    }
  }
  return out;
}

std::vector<OracleRecord> draw_test_positives(
    const World& world, const std::vector<std::vector<std::uint32_t>>& exclude_per_user) {
  auto rng = make_rng(world.config.seed, "test-positives");
  std::uniform_real_distribution<double> u01(std::nextafter(0.0, 1.0), 1.0);
  std::vector<OracleRecord> out;
  const std::size_t n = world.num_users();
  const std::size_t m = world.num_items();
  const std::size_t k = world.config.test_positives_per_user;
  std::vector<std::pair<double, std::uint32_t>> keyed;  // (key, item), larger key wins
  for (std::size_t u = 0; u < n; ++u) {
    const std::vector<std::uint32_t>* excl =
        u < exclude_per_user.size() ? &exclude_per_user[u] : nullptr;
    keyed.clear();
    for (std::size_t i = 0; i < m; ++i) {
      if (excl && std::binary_search(excl->begin(), excl->end(), static_cast<std::uint32_t>(i))) {
        continue;
      }
      // Weighted sampling without replacement (exponential-key trick):
      // taking the k largest log(U)/w draws items with probability
      // proportional to w.
      const double key = std::log(u01(rng)) / world.click_prob(u, i);
      keyed.emplace_back(key, static_cast<std::uint32_t>(i));
    }
    const std::size_t take = std::min(k, keyed.size());
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    std::sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (std::size_t t = 0; t < take; ++t) {
      OracleRecord rec;
      rec.user = static_cast<std::uint32_t>(u);
      rec.item = keyed[t].second;
      rec.true_p1 = world.true_p1(u, rec.item);
      rec.true_p2 = world.true_p2(u, rec.item);
      rec.recalled = rec.exposed = rec.clicked = true;
      out.push_back(rec);
    }
  }
  return out;
}

std::filesystem::path oracle_sidecar_path(const std::filesystem::path& log_path) {
  std::filesystem::path p = log_path;
  p.replace_extension(".oracle");
  return p;
}

namespace {

void append_features(std::string& line, const Vec& f) {
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (k) line += ',';
    line += fmt_double(f[k]);
  }
}

}  // namespace

void write_logs(const std::vector<OracleRecord>& records, const World& world,
                const std::filesystem::path& path, bool include_oracle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open log file for writing: " + path.string());
  out << "#schema=" << kLogSchema << "\n";
  std::string line;
  for (const OracleRecord& r : records) {
    line.clear();
    line += std::to_string(r.user);
    line += '\t';
    line += std::to_string(r.item);
    line += '\t';
    line += r.clicked ? '1' : '0';
    line += '\t';
    line += r.exposed ? '1' : '0';
    line += '\t';
    line += r.recalled ? '1' : '0';
    line += '\t';
    append_features(line, world.user_features[r.user]);
    line += '\t';
    append_features(line, world.item_features[r.item]);
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failed: " + path.string());
  out.close();

  if (!include_oracle) return;
  const std::filesystem::path side = oracle_sidecar_path(path);
  std::ofstream oracle(side, std::ios::binary);
  if (!oracle) throw IoError("cannot open oracle sidecar for writing: " + side.string());
  oracle << "#schema=" << kOracleSchema << "\n";
  for (const OracleRecord& r : records) {
    oracle << r.user << '\t' << r.item << '\t' << fmt_double(r.true_p1) << '\t'
           << fmt_double(r.true_p2) << '\n';
  }
  if (!oracle) throw IoError("write failed: " + side.string());
}

DatasetPaths write_dataset(const FunnelConfig& config, const std::filesystem::path& dir,
                           bool include_oracle) {
  std::filesystem::create_directories(dir);
  const World world = generate_world(config);
  const std::vector<OracleRecord> train = roll_funnel(world);

  std::vector<std::vector<std::uint32_t>> clicked(world.num_users());
  for (const OracleRecord& r : train) {
    if (r.clicked) clicked[r.user].push_back(r.item);
  }
  for (auto& items : clicked) std::sort(items.begin(), items.end());
  const std::vector<OracleRecord> test = draw_test_positives(world, clicked);

  DatasetPaths paths{dir / "train.log", dir / "test.log"};
  write_logs(train, world, paths.train_log, include_oracle);
  write_logs(test, world, paths.test_log, include_oracle);
  return paths;
}

}  // namespace uma2
