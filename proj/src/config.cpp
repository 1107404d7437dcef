#include "occfeat/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace occfeat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) {
    throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  }
  return d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno == ERANGE) {
    throw std::invalid_argument("config key '" + key + "': not a non-negative integer: '" + v + "'");
  }
  return u;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void parse_arms(const std::string& text, bool& occ, bool& feat) {
  occ = feat = false;
  const auto items = split_commas(text);
  if (items.size() == 1 && items[0] == "none") return;
  if (items.empty()) throw std::invalid_argument("arms: empty list");
  for (const auto& a : items) {
    if (a == "occ") {
      occ = true;
    } else if (a == "feat") {
      feat = true;
    } else {
      throw std::invalid_argument("arms: unknown arm '" + a + "' (expected occ, feat or none)");
    }
  }
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& s : split_commas(text)) out.push_back(to_double("list", s));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_commas(text)) out.push_back(to_u64("seeds", s));
  if (out.empty()) throw std::invalid_argument("seeds: empty list");
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "seed") seed = to_u64(key, v);
  else if (key == "data") data = v;
  else if (key == "val_count") val_count = to_u64(key, v);
  else if (key == "epochs") epochs = to_u64(key, v);
  else if (key == "batch_size") batch_size = to_u64(key, v);
  else if (key == "lr") lr = to_double(key, v);
  else if (key == "weight_decay") weight_decay = to_double(key, v);
  else if (key == "lambda") lambda = to_double(key, v);
  else if (key == "arms") parse_arms(v, arm_occ, arm_feat);
  else if (key == "fraction") fraction = to_double(key, v);
  else if (key == "finetune_steps") finetune_steps = to_u64(key, v);
  else if (key == "finetune_lr") finetune_lr = to_double(key, v);
  else if (key == "ckpt") ckpt = v;
  else if (key == "encoder_channels") encoder_channels = to_u64(key, v);
  else if (key == "bev_channels") bev_channels = to_u64(key, v);
  else if (key == "pull_z_cells") pull_z_cells = to_u64(key, v);
  else if (key == "sweep_lambdas") sweep_lambdas = parse_double_list(v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in (0, 1]");
  for (double l : sweep_lambdas) {
    if (!(l >= 0.0)) throw std::invalid_argument("sweep_lambdas must be non-negative");
  }
}

std::string RunConfig::arms_string() const {
  if (arm_occ && arm_feat) return "occ,feat";
  if (arm_occ) return "occ";
  if (arm_feat) return "feat";
  return "none";
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string format_run_config(const RunConfig& c) {
  std::string lambdas;
  for (std::size_t i = 0; i < c.sweep_lambdas.size(); ++i) {
    lambdas += (i ? "," : "") + fmt(c.sweep_lambdas[i]);
  }
  std::ostringstream out;
  out << "seed = " << c.seed << "\n"
      << "data = " << c.data.string() << "\n"
      << "val_count = " << c.val_count << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "lr = " << fmt(c.lr) << "\n"
      << "weight_decay = " << fmt(c.weight_decay) << "\n"
      << "lambda = " << fmt(c.lambda) << "\n"
      << "arms = " << c.arms_string() << "\n"
      << "fraction = " << fmt(c.fraction) << "\n"
      << "finetune_steps = " << c.finetune_steps << "\n"
      << "finetune_lr = " << fmt(c.finetune_lr) << "\n"
      << "ckpt = " << c.ckpt.string() << "\n"
      << "encoder_channels = " << c.encoder_channels << "\n"
      << "bev_channels = " << c.bev_channels << "\n"
      << "pull_z_cells = " << c.pull_z_cells << "\n"
      << "sweep_lambdas = " << lambdas << "\n";
  return out.str();
}

}  // namespace occfeat
