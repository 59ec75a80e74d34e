#include "runconfig.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace m3pt {

namespace {

struct KeyBinding {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

int64_t parse_int(const std::string& v) {
  size_t pos = 0;
  int64_t r = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return r;
}

double parse_double(const std::string& v) {
  size_t pos = 0;
  double r = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return r;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// "128" (square) or "128x96" (width x height)
void parse_size(const std::string& v, int64_t& h, int64_t& w) {
  size_t x = v.find('x');
  if (x == std::string::npos) {
    h = w = parse_int(v);
  } else {
    w = parse_int(v.substr(0, x));
    h = parse_int(v.substr(x + 1));
  }
}

std::string fmt_size(int64_t h, int64_t w) {
  if (h == w) return std::to_string(w);
  return std::to_string(w) + "x" + std::to_string(h);
}

std::set<int64_t> parse_int_set(const std::string& v) {
  std::set<int64_t> out;
  if (v.empty() || v == "none") return out;
  std::istringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.insert(parse_int(tok));
  return out;
}

std::string fmt_int_set(const std::set<int64_t>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (int64_t v : s) {
    if (!out.empty()) out += ",";
    out += std::to_string(v);
  }
  return out;
}

const std::map<std::string, KeyBinding>& bindings() {
  static const std::map<std::string, KeyBinding> map = [] {
    std::map<std::string, KeyBinding> b;
    auto add_int = [&b](const std::string& key, auto member) {
      b[key] = {[member](const RunConfig& c) { return std::to_string(c.*member); },
                [member](RunConfig& c, const std::string& v) { c.*member = parse_int(v); }};
    };
    (void)add_int;

    b["foundation.patch_size"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.foundation.patch_size); },
        [](RunConfig& c, const std::string& v) { c.tracker.foundation.patch_size = parse_int(v); }};
    b["foundation.embed_dim"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.foundation.embed_dim); },
        [](RunConfig& c, const std::string& v) { c.tracker.foundation.embed_dim = parse_int(v); }};
    b["foundation.num_blocks"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.foundation.num_blocks); },
        [](RunConfig& c, const std::string& v) { c.tracker.foundation.num_blocks = parse_int(v); }};
    b["foundation.num_heads"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.foundation.num_heads); },
        [](RunConfig& c, const std::string& v) { c.tracker.foundation.num_heads = parse_int(v); }};
    b["foundation.mlp_ratio"] = {
        [](const RunConfig& c) { return fmt_double(c.tracker.foundation.mlp_ratio); },
        [](RunConfig& c, const std::string& v) { c.tracker.foundation.mlp_ratio = parse_double(v); }};
    b["foundation.template_size"] = {
        [](const RunConfig& c) {
          return fmt_size(c.tracker.foundation.template_h, c.tracker.foundation.template_w);
        },
        [](RunConfig& c, const std::string& v) {
          parse_size(v, c.tracker.foundation.template_h, c.tracker.foundation.template_w);
        }};
    b["foundation.search_size"] = {
        [](const RunConfig& c) {
          return fmt_size(c.tracker.foundation.search_h, c.tracker.foundation.search_w);
        },
        [](RunConfig& c, const std::string& v) {
          parse_size(v, c.tracker.foundation.search_h, c.tracker.foundation.search_w);
        }};

    b["tracker.first_stage_blocks"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.first_stage_blocks); },
        [](RunConfig& c, const std::string& v) { c.tracker.first_stage_blocks = parse_int(v); }};
    b["tracker.uep_layers"] = {
        [](const RunConfig& c) { return fmt_int_set(c.tracker.uep_layers); },
        [](RunConfig& c, const std::string& v) { c.tracker.uep_layers = parse_int_set(v); }};
    b["tracker.prompt_tokens"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.prompt_tokens); },
        [](RunConfig& c, const std::string& v) { c.tracker.prompt_tokens = parse_int(v); }};
    b["tracker.uep_low_dim"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.uep_low_dim); },
        [](RunConfig& c, const std::string& v) { c.tracker.uep_low_dim = parse_int(v); }};
    b["tracker.ip_low_dim"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.ip_low_dim); },
        [](RunConfig& c, const std::string& v) { c.tracker.ip_low_dim = parse_int(v); }};
    b["tracker.mfp_low_dim"] = {
        [](const RunConfig& c) { return std::to_string(c.tracker.mfp_low_dim); },
        [](RunConfig& c, const std::string& v) { c.tracker.mfp_low_dim = parse_int(v); }};
    b["tracker.ip_per_direction"] = {
        [](const RunConfig& c) { return c.tracker.ip_per_direction ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) { c.tracker.ip_per_direction = parse_bool(v); }};
    b["tracker.template_factor"] = {
        [](const RunConfig& c) { return fmt_double(c.tracker.template_factor); },
        [](RunConfig& c, const std::string& v) { c.tracker.template_factor = parse_double(v); }};
    b["tracker.search_factor"] = {
        [](const RunConfig& c) { return fmt_double(c.tracker.search_factor); },
        [](RunConfig& c, const std::string& v) { c.tracker.search_factor = parse_double(v); }};

    b["train.batch_size"] = {
        [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
        [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_int(v); }};
    b["train.epochs"] = {
        [](const RunConfig& c) { return std::to_string(c.train.epochs); },
        [](RunConfig& c, const std::string& v) { c.train.epochs = parse_int(v); }};
    b["train.samples_per_epoch"] = {
        [](const RunConfig& c) { return std::to_string(c.train.samples_per_epoch); },
        [](RunConfig& c, const std::string& v) { c.train.samples_per_epoch = parse_int(v); }};
    b["train.learning_rate"] = {
        [](const RunConfig& c) { return fmt_double(c.train.learning_rate); },
        [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_double(v); }};
    b["train.weight_decay"] = {
        [](const RunConfig& c) { return fmt_double(c.train.weight_decay); },
        [](RunConfig& c, const std::string& v) { c.train.weight_decay = parse_double(v); }};
    b["train.decay_epoch"] = {
        [](const RunConfig& c) { return std::to_string(c.train.decay_epoch); },
        [](RunConfig& c, const std::string& v) { c.train.decay_epoch = parse_int(v); }};
    b["train.decay_factor"] = {
        [](const RunConfig& c) { return fmt_double(c.train.decay_factor); },
        [](RunConfig& c, const std::string& v) { c.train.decay_factor = parse_double(v); }};
    b["train.seed"] = {
        [](const RunConfig& c) { return std::to_string(c.train.seed); },
        [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_int(v)); }};
    b["train.synthetic_pairs"] = {
        [](const RunConfig& c) { return std::to_string(c.train.synthetic_pairs); },
        [](RunConfig& c, const std::string& v) { c.train.synthetic_pairs = parse_int(v); }};

    b["loss.lambda_giou"] = {
        [](const RunConfig& c) { return fmt_double(c.loss.lambda_giou); },
        [](RunConfig& c, const std::string& v) { c.loss.lambda_giou = parse_double(v); }};
    b["loss.lambda_l1"] = {
        [](const RunConfig& c) { return fmt_double(c.loss.lambda_l1); },
        [](RunConfig& c, const std::string& v) { c.loss.lambda_l1 = parse_double(v); }};
    b["loss.focal_alpha"] = {
        [](const RunConfig& c) { return fmt_double(c.loss.focal_alpha); },
        [](RunConfig& c, const std::string& v) { c.loss.focal_alpha = parse_double(v); }};
    b["loss.focal_beta"] = {
        [](const RunConfig& c) { return fmt_double(c.loss.focal_beta); },
        [](RunConfig& c, const std::string& v) { c.loss.focal_beta = parse_double(v); }};

    b["eval.precision_max"] = {
        [](const RunConfig& c) { return fmt_double(c.eval.precision_max); },
        [](RunConfig& c, const std::string& v) { c.eval.precision_max = parse_double(v); }};
    b["eval.precision_step"] = {
        [](const RunConfig& c) { return fmt_double(c.eval.precision_step); },
        [](RunConfig& c, const std::string& v) { c.eval.precision_step = parse_double(v); }};
    b["eval.precision_rep"] = {
        [](const RunConfig& c) { return fmt_double(c.eval.precision_rep); },
        [](RunConfig& c, const std::string& v) { c.eval.precision_rep = parse_double(v); }};
    b["eval.norm_max"] = {
        [](const RunConfig& c) { return fmt_double(c.eval.norm_max); },
        [](RunConfig& c, const std::string& v) { c.eval.norm_max = parse_double(v); }};
    b["eval.norm_step"] = {
        [](const RunConfig& c) { return fmt_double(c.eval.norm_step); },
        [](RunConfig& c, const std::string& v) { c.eval.norm_step = parse_double(v); }};
    b["eval.norm_rep"] = {
        [](const RunConfig& c) { return fmt_double(c.eval.norm_rep); },
        [](RunConfig& c, const std::string& v) { c.eval.norm_rep = parse_double(v); }};
    b["eval.success_points"] = {
        [](const RunConfig& c) { return std::to_string(c.eval.success_points); },
        [](RunConfig& c, const std::string& v) { c.eval.success_points = parse_int(v); }};
    b["eval.pr_uses_max_fusion"] = {
        [](const RunConfig& c) { return c.eval.pr_uses_max_fusion ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) { c.eval.pr_uses_max_fusion = parse_bool(v); }};

    b["paths.weights"] = {
        [](const RunConfig& c) { return c.weights_path.empty() ? "none" : c.weights_path; },
        [](RunConfig& c, const std::string& v) { c.weights_path = v == "none" ? "" : v; }};
    return b;
  }();
  return map;
}

void validate_all(const RunConfig& cfg, std::vector<std::string>& problems) {
  try {
    cfg.tracker.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  try {
    cfg.loss.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  if (cfg.eval.precision_step <= 0 || cfg.eval.norm_step <= 0 ||
      cfg.eval.success_points < 2)
    problems.push_back("eval: grid steps must be positive and success_points >= 2");
}

}  // namespace

std::string RunConfig::canonical_text() const {
  std::ostringstream os;
  for (const auto& [key, binding] : bindings())
    os << key << "=" << binding.get(*this) << "\n";
  return os.str();
}

uint64_t RunConfig::hash() const {
  std::string text = canonical_text();
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string RunConfig::hash_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, hash());
  return buf;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::vector<std::string> problems;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    size_t last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(origin + ":" + std::to_string(lineno) +
                         ": expected key=value, got '" + line + "'");
      continue;
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    size_t vstart = value.find_first_not_of(" ");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    auto it = bindings().find(key);
    if (it == bindings().end()) {
      problems.push_back(origin + ":" + std::to_string(lineno) + ": unknown key '" +
                         key + "'");
      continue;
    }
    try {
      it->second.set(cfg, value);
    } catch (const std::exception&) {
      problems.push_back(origin + ":" + std::to_string(lineno) + ": bad value '" +
                         value + "' for " + key);
    }
  }
  validate_all(cfg, problems);
  if (!problems.empty()) {
    std::string msg = "configuration invalid (" + std::to_string(problems.size()) +
                      " problem" + (problems.size() == 1 ? "" : "s") + "):";
    for (const std::string& p : problems) msg += "\n  - " + p;
    fail(ErrorKind::Config, msg);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open config " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

void apply_overrides(RunConfig& cfg,
                     const std::vector<std::pair<std::string, std::string>>& sets) {
  std::vector<std::string> problems;
  for (const auto& [key, value] : sets) {
    auto it = bindings().find(key);
    if (it == bindings().end()) {
      problems.push_back("--set: unknown key '" + key + "'");
      continue;
    }
    try {
      it->second.set(cfg, value);
    } catch (const std::exception&) {
      problems.push_back("--set: bad value '" + value + "' for " + key);
    }
  }
  validate_all(cfg, problems);
  if (!problems.empty()) {
    std::string msg = "configuration invalid (" + std::to_string(problems.size()) +
                      " problem" + (problems.size() == 1 ? "" : "s") + "):";
    for (const std::string& p : problems) msg += "\n  - " + p;
    fail(ErrorKind::Config, msg);
  }
}

void write_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << cfg.canonical_text();
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

}  // namespace m3pt
