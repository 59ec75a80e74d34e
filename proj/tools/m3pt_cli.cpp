// Command-line front end for the M3PT tracker. Everything goes through the
// C API in m3pt/m3pt.h; exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "m3pt/m3pt.h"

namespace {

int exit_code(m3pt_status s) {
  switch (s) {
    case M3PT_OK:
      return 0;
    case M3PT_ERR_USAGE:
      return 1;
    case M3PT_ERR_DATA:
      return 2;
    case M3PT_ERR_NUMERIC:
      return 3;
    default:
      return 3;
  }
}

int report_failure(m3pt_status s) {
  std::fprintf(stderr, "error: %s\n", m3pt_last_error());
  return exit_code(s);
}

struct ConfigHandle {
  m3pt_config* cfg = nullptr;
  ~ConfigHandle() { m3pt_config_free(cfg); }
};

struct ModelHandle {
  m3pt_model* model = nullptr;
  ~ModelHandle() { m3pt_model_free(model); }
};

struct TextHandle {
  char* text = nullptr;
  ~TextHandle() { m3pt_free_text(text); }
};

m3pt_status load_config(const std::string& path,
                        const std::vector<std::string>& sets, ConfigHandle& out) {
  m3pt_status s = path.empty() ? m3pt_config_create(&out.cfg)
                               : m3pt_config_load(path.c_str(), &out.cfg);
  if (s != M3PT_OK) return s;
  for (const std::string& kv : sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return M3PT_ERR_USAGE;
    }
    s = m3pt_config_set(out.cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != M3PT_OK) return s;
  }
  return M3PT_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M3PT RGB-T prompt tracker"};
  app.require_subcommand(1);

  std::string config_path, sequence_dir, weights, out_path, manifest, results_dir;
  std::string sweep = "1..";
  std::vector<std::string> sets;
  long long seed = 0;
  long long steps = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key=value lines)");
    cmd->add_option("--set", sets, "override, key=value (repeatable)");
  };

  CLI::App* track = app.add_subcommand("track", "track one sequence directory");
  add_common(track);
  track->add_option("--sequence", sequence_dir, "sequence directory")->required();
  track->add_option("--weights", weights, "weight archive to load");
  track->add_option("--out", out_path, "output box file")->required();
  track->add_option("--seed", seed, "model init seed");

  CLI::App* train = app.add_subcommand("train", "run the prompt-tuning loop");
  add_common(train);
  train->add_option("--out", out_path, "checkpoint path prefix")->required();
  train->add_option("--weights", weights, "initial weight archive");
  train->add_option("--steps", steps, "cap on optimizer steps (default: full schedule)");
  train->add_option("--seed", seed, "model init seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate result files on a benchmark");
  add_common(eval);
  eval->add_option("--manifest", manifest, "benchmark manifest")->required();
  eval->add_option("--results", results_dir, "directory of <sequence>.txt files")->required();
  eval->add_option("--out", out_path, "report output directory")->required();

  CLI::App* params = app.add_subcommand("params", "print the parameter budget");
  add_common(params);

  CLI::App* cost = app.add_subcommand("cost", "print the fusion-location cost table");
  add_common(cost);
  cost->add_option("--sweep", sweep, "fusion locations, lo..hi (default 1..L-1)");

  app.add_subcommand("selftest", "run the built-in invariant suite");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand("selftest")) {
    TextHandle text;
    m3pt_status s = m3pt_selftest(&text.text);
    if (text.text) std::fputs(text.text, stdout);
    if (s != M3PT_OK && s != M3PT_ERR_NUMERIC) return report_failure(s);
    return exit_code(s);
  }

  ConfigHandle cfg;
  if (m3pt_status s = load_config(config_path, sets, cfg)) return report_failure(s);

  if (app.got_subcommand("params")) {
    TextHandle text;
    if (m3pt_status s = m3pt_params_report(cfg.cfg, &text.text)) return report_failure(s);
    std::fputs(text.text, stdout);
    return 0;
  }

  if (app.got_subcommand("cost")) {
    int lo = 1, hi = -1;
    size_t dots = sweep.find("..");
    try {
      if (dots == std::string::npos) {
        lo = hi = std::stoi(sweep);
      } else {
        lo = std::stoi(sweep.substr(0, dots));
        std::string rest = sweep.substr(dots + 2);
        hi = rest.empty() ? -1 : std::stoi(rest);
      }
    } catch (const std::exception&) {
      std::fprintf(stderr, "error: --sweep expects lo..hi, got '%s'\n", sweep.c_str());
      return 1;
    }
    TextHandle text;
    if (m3pt_status s = m3pt_cost_report(cfg.cfg, lo, hi, &text.text))
      return report_failure(s);
    std::fputs(text.text, stdout);
    return 0;
  }

  if (app.got_subcommand("eval")) {
    if (m3pt_status s = m3pt_eval(cfg.cfg, manifest.c_str(), results_dir.c_str(),
                                  out_path.c_str()))
      return report_failure(s);
    std::printf("report written to %s\n", out_path.c_str());
    return 0;
  }

  ModelHandle model;
  if (m3pt_status s =
          m3pt_model_create(cfg.cfg, static_cast<unsigned long long>(seed), &model.model))
    return report_failure(s);
  if (!weights.empty())
    if (m3pt_status s = m3pt_model_load_archive(model.model, weights.c_str()))
      return report_failure(s);

  if (app.got_subcommand("track")) {
    if (m3pt_status s =
            m3pt_track_sequence(model.model, sequence_dir.c_str(), out_path.c_str()))
      return report_failure(s);
    std::printf("results written to %s\n", out_path.c_str());
    return 0;
  }

  if (app.got_subcommand("train")) {
    if (m3pt_status s = m3pt_train(model.model, steps, out_path.c_str()))
      return report_failure(s);
    std::printf("checkpoint written to %s\n", out_path.c_str());
    return 0;
  }

  return 1;
}
