#include "uma2/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "uma2/common.hpp"

namespace uma2 {

Strategy parse_strategy(const std::string& name) {
  if (name == "ss-a") return Strategy::SsA;
  if (name == "ss-ab") return Strategy::SsAb;
  if (name == "ss-abc-random") return Strategy::SsAbcRandom;
  if (name == "ss-abc-fixed") return Strategy::SsAbcFixed;
  throw ConfigError("unknown sampling strategy '" + name +
                    "' (expected ss-a, ss-ab, ss-abc-random or ss-abc-fixed)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::SsA: return "ss-a";
    case Strategy::SsAb: return "ss-ab";
    case Strategy::SsAbcRandom: return "ss-abc-random";
    case Strategy::SsAbcFixed: return "ss-abc-fixed";
  }
  return "ss-abc-fixed";
}

SharingMode parse_sharing_mode(const std::string& name) {
  if (name == "fully-separate") return SharingMode::FullySeparate;
  if (name == "shared-input-layer") return SharingMode::SharedInputLayer;
  throw ConfigError("unknown sharing mode '" + name +
                    "' (expected fully-separate or shared-input-layer)");
}

std::string to_string(SharingMode m) {
  return m == SharingMode::SharedInputLayer ? "shared-input-layer" : "fully-separate";
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0' || value.find('-') != std::string::npos) {
    bad_value(key, value, "a non-negative integer");
  }
  return static_cast<std::uint64_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (errno != 0 || end == value.c_str() || *end != '\0') bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  bad_value(key, value, "on/off");
}

// Accepts "1,4,20" with optional surrounding brackets.
std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value) {
  std::string body = trim(value);
  if (body.size() >= 2 && body.front() == '[' && body.back() == ']') {
    body = trim(body.substr(1, body.size() - 2));
  }
  std::vector<std::uint64_t> out;
  std::stringstream ss(body);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_u64(key, trim(part)));
  if (out.empty()) bad_value(key, value, "a comma-separated integer list");
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (std::uint64_t v : parse_u64_list(key, value)) out.push_back(static_cast<std::size_t>(v));
  return out;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string join_u64(const std::vector<std::uint64_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  using Setter = std::function<void(Config&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> kSetters = {
      {"sim.users", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.num_users = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"sim.items", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.num_items = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"sim.latent_dim", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.latent_dim = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"sim.recall_temp", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.recall_temp = parse_real(k, v);
       }},
      {"sim.exposure_temp", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.exposure_temp = parse_real(k, v);
       }},
      {"sim.click_temp", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.click_temp = parse_real(k, v);
       }},
      {"sim.click_bias", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.click_bias = parse_real(k, v);
       }},
      {"sim.feature_noise", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.feature_noise = parse_real(k, v);
       }},
      {"sim.avg_recall", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.avg_recall_size = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"sim.avg_exposure", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.avg_exposure_size = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"sim.test_positives_per_user", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.test_positives_per_user = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"sim.seed", [](Config& c, const std::string& k, const std::string& v) {
         c.sim.seed = parse_u64(k, v);
       }},
      {"sampling.strategy", [](Config& c, const std::string&, const std::string& v) {
         c.sampling.strategy = parse_strategy(v);
       }},
      {"sampling.ratio", [](Config& c, const std::string& k, const std::string& v) {
         const auto r = parse_size_list(k, v);
         if (r.size() != 3) throw ConfigError("config key '" + k + "': need exactly 3 counts");
         c.sampling.ratio_a = r[0];
         c.sampling.ratio_b = r[1];
         c.sampling.ratio_c = r[2];
       }},
      {"sampling.negatives_per_positive", [](Config& c, const std::string& k, const std::string& v) {
         c.sampling.negatives_per_positive = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"model.dims", [](Config& c, const std::string& k, const std::string& v) {
         c.model.dims = parse_size_list(k, v);
       }},
      {"nsdn.p_floor", [](Config& c, const std::string& k, const std::string& v) {
         c.nsdn.p_floor = parse_real(k, v);
       }},
      {"nsdn.w_max", [](Config& c, const std::string& k, const std::string& v) {
         c.nsdn.w_max = parse_real(k, v);
       }},
      {"nsdn.sharing_mode", [](Config& c, const std::string&, const std::string& v) {
         c.nsdn.sharing_mode = parse_sharing_mode(v);
       }},
      {"nsdn.dims", [](Config& c, const std::string& k, const std::string& v) {
         c.nsdn.dims = parse_size_list(k, v);
       }},
      {"train.lr", [](Config& c, const std::string& k, const std::string& v) {
         c.train.lr = parse_real(k, v);
       }},
      {"train.batch_size", [](Config& c, const std::string& k, const std::string& v) {
         c.train.batch_size = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"train.epochs", [](Config& c, const std::string& k, const std::string& v) {
         c.train.epochs = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"train.seed", [](Config& c, const std::string& k, const std::string& v) {
         c.train.seed = parse_u64(k, v);
       }},
      {"train.lambda1", [](Config& c, const std::string& k, const std::string& v) {
         c.train.lambda1 = parse_real(k, v);
       }},
      {"train.lambda2", [](Config& c, const std::string& k, const std::string& v) {
         c.train.lambda2 = parse_real(k, v);
       }},
      {"train.lambda3", [](Config& c, const std::string& k, const std::string& v) {
         c.train.lambda3 = parse_real(k, v);
       }},
      {"train.lambda4", [](Config& c, const std::string& k, const std::string& v) {
         c.train.lambda4 = parse_real(k, v);
       }},
      {"train.lambda5", [](Config& c, const std::string& k, const std::string& v) {
         c.train.lambda5 = parse_real(k, v);
       }},
      {"train.patience", [](Config& c, const std::string& k, const std::string& v) {
         c.train.patience = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"train.warmup_epochs", [](Config& c, const std::string& k, const std::string& v) {
         c.train.warmup_epochs = static_cast<std::size_t>(parse_u64(k, v));
       }},
      {"train.debias", [](Config& c, const std::string& k, const std::string& v) {
         c.train.debias = parse_bool(k, v);
       }},
      {"train.holdout_fraction", [](Config& c, const std::string& k, const std::string& v) {
         c.train.holdout_fraction = parse_real(k, v);
       }},
      {"eval.k_list", [](Config& c, const std::string& k, const std::string& v) {
         c.eval.k_list = parse_size_list(k, v);
       }},
      {"eval.exclude_train_positives", [](Config& c, const std::string& k, const std::string& v) {
         c.eval.exclude_train_positives = parse_bool(k, v);
       }},
      {"ablation.seeds", [](Config& c, const std::string& k, const std::string& v) {
         c.ablation.seeds = parse_u64_list(k, v);
       }},
  };
  const auto it = kSetters.find(key);
  if (it == kSetters.end()) throw ConfigError("unknown config key: " + key);
  it->second(*this, key, trim(value));
}

void Config::set_master_seed(std::uint64_t seed) {
  sim.seed = seed;
  train.seed = seed;
}

void Config::validate() const {
  sim.validate();
  if (sampling.ratio_sum() == 0) throw ConfigError("sampling.ratio must not be all zero");
  if (sampling.negatives_per_positive == 0) {
    throw ConfigError("sampling.negatives_per_positive must be > 0");
  }
  if (model.dims.empty()) throw ConfigError("model.dims must not be empty");
  if (nsdn.dims.empty()) throw ConfigError("nsdn.dims must not be empty");
  if (!(nsdn.p_floor > 0.0 && nsdn.p_floor <= 1.0)) {
    throw ConfigError("nsdn.p_floor must be in (0, 1]");
  }
  if (nsdn.w_max < 1.0) throw ConfigError("nsdn.w_max must be >= 1");
  if (train.lr <= 0.0) throw ConfigError("train.lr must be > 0");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be > 0");
  for (double l : {train.lambda1, train.lambda2, train.lambda3, train.lambda4, train.lambda5}) {
    if (l < 0.0) throw ConfigError("train.lambda* must be >= 0");
  }
  if (!(train.holdout_fraction >= 0.0 && train.holdout_fraction < 1.0)) {
    throw ConfigError("train.holdout_fraction must be in [0, 1)");
  }
  if (eval.k_list.empty()) throw ConfigError("eval.k_list must not be empty");
  for (std::size_t k : eval.k_list) {
    if (k == 0) throw ConfigError("eval.k_list entries must be > 0");
  }
  if (ablation.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
  if (nsdn.sharing_mode == SharingMode::SharedInputLayer && nsdn.dims.size() < 2) {
    throw ConfigError("nsdn.dims needs at least 2 entries under shared-input-layer");
  }
}

std::map<std::string, std::string> Config::resolved() const {
  std::map<std::string, std::string> out;
  out["sim.users"] = std::to_string(sim.num_users);
  out["sim.items"] = std::to_string(sim.num_items);
  out["sim.latent_dim"] = std::to_string(sim.latent_dim);
  out["sim.recall_temp"] = fmt_double(sim.recall_temp);
  out["sim.exposure_temp"] = fmt_double(sim.exposure_temp);
  out["sim.click_temp"] = fmt_double(sim.click_temp);
  out["sim.click_bias"] = fmt_double(sim.click_bias);
  out["sim.feature_noise"] = fmt_double(sim.feature_noise);
  out["sim.avg_recall"] = std::to_string(sim.avg_recall_size);
  out["sim.avg_exposure"] = std::to_string(sim.avg_exposure_size);
  out["sim.test_positives_per_user"] = std::to_string(sim.test_positives_per_user);
  out["sim.seed"] = std::to_string(sim.seed);
  out["sampling.strategy"] = to_string(sampling.strategy);
  out["sampling.ratio"] =
      join({sampling.ratio_a, sampling.ratio_b, sampling.ratio_c});
  out["sampling.negatives_per_positive"] = std::to_string(sampling.negatives_per_positive);
  out["model.dims"] = join(model.dims);
  out["nsdn.p_floor"] = fmt_double(nsdn.p_floor);
  out["nsdn.w_max"] = fmt_double(nsdn.w_max);
  out["nsdn.sharing_mode"] = to_string(nsdn.sharing_mode);
  out["nsdn.dims"] = join(nsdn.dims);
  out["train.lr"] = fmt_double(train.lr);
  out["train.batch_size"] = std::to_string(train.batch_size);
  out["train.epochs"] = std::to_string(train.epochs);
  out["train.seed"] = std::to_string(train.seed);
  out["train.lambda1"] = fmt_double(train.lambda1);
  out["train.lambda2"] = fmt_double(train.lambda2);
  out["train.lambda3"] = fmt_double(train.lambda3);
  out["train.lambda4"] = fmt_double(train.lambda4);
  out["train.lambda5"] = fmt_double(train.lambda5);
  out["train.patience"] = std::to_string(train.patience);
  out["train.warmup_epochs"] = std::to_string(train.warmup_epochs);
  out["train.debias"] = train.debias ? "on" : "off";
  out["train.holdout_fraction"] = fmt_double(train.holdout_fraction);
  out["eval.k_list"] = join(eval.k_list);
  out["eval.exclude_train_positives"] = eval.exclude_train_positives ? "on" : "off";
  out["ablation.seeds"] = join_u64(ablation.seeds);
  return out;
}

namespace {

Config parse_stream(std::istream& in, const std::string& origin) {
  Config c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + body + "'");
    }
    try {
      c.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ConfigError& ex) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return c;
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  return parse_stream(in, path.string());
}

Config Config::from_string(const std::string& text) {
  std::istringstream in(text);
  return parse_stream(in, "<string>");
}

}  // namespace uma2
