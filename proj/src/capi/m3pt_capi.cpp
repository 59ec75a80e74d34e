#include "m3pt/m3pt.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/archive.hpp"
#include "core/pipeline.hpp"
#include "core/report.hpp"
#include "core/runconfig.hpp"
#include "core/runner.hpp"
#include "core/selftest.hpp"
#include "core/train.hpp"

namespace {

thread_local std::string g_last_error;

m3pt_status status_of(const m3pt::Error& e) {
  switch (e.kind()) {
    case m3pt::ErrorKind::Config:
      return M3PT_ERR_USAGE;
    case m3pt::ErrorKind::Numeric:
      return M3PT_ERR_NUMERIC;
    case m3pt::ErrorKind::Dimension:
    case m3pt::ErrorKind::Shape:
    case m3pt::ErrorKind::Archive:
    case m3pt::ErrorKind::Io:
    case m3pt::ErrorKind::Data:
      return M3PT_ERR_DATA;
  }
  return M3PT_ERR_INTERNAL;
}

template <typename Fn>
m3pt_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const m3pt::Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return M3PT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return M3PT_ERR_INTERNAL;
  }
}

char* dup_text(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

m3pt_status require(bool cond, const char* what) {
  if (!cond) {
    g_last_error = what;
    return M3PT_ERR_USAGE;
  }
  return M3PT_OK;
}

}  // namespace

struct m3pt_config {
  m3pt::RunConfig cfg;
};

struct m3pt_model {
  m3pt::RunConfig cfg;
  m3pt::Foundation<float> foundation;
  m3pt::PrompterBank<float> bank;

  m3pt_model(const m3pt::RunConfig& c, unsigned long long seed)
      : cfg(c), foundation(c.tracker.foundation, seed), bank(c.tracker, seed) {}
};

extern "C" {

const char* m3pt_last_error(void) { return g_last_error.c_str(); }

void m3pt_free_text(char* text) { std::free(text); }

m3pt_status m3pt_config_create(m3pt_config** out) {
  if (m3pt_status s = require(out != nullptr, "out is NULL")) return s;
  return guarded([&] {
    *out = new m3pt_config{m3pt::parse_config_text("", "<defaults>")};
    return M3PT_OK;
  });
}

m3pt_status m3pt_config_load(const char* path, m3pt_config** out) {
  if (m3pt_status s = require(path && out, "path/out is NULL")) return s;
  return guarded([&] {
    *out = new m3pt_config{m3pt::parse_config_file(path)};
    return M3PT_OK;
  });
}

m3pt_status m3pt_config_set(m3pt_config* cfg, const char* key, const char* value) {
  if (m3pt_status s = require(cfg && key && value, "cfg/key/value is NULL")) return s;
  return guarded([&] {
    m3pt::apply_overrides(cfg->cfg, {{key, value}});
    return M3PT_OK;
  });
}

m3pt_status m3pt_config_hash(const m3pt_config* cfg, char* buf, size_t bufsize) {
  if (m3pt_status s = require(cfg && buf, "cfg/buf is NULL")) return s;
  return guarded([&] {
    std::string hex = cfg->cfg.hash_hex();
    if (bufsize < hex.size() + 1) {
      g_last_error = "buffer too small (need 17 bytes)";
      return M3PT_ERR_USAGE;
    }
    std::memcpy(buf, hex.c_str(), hex.size() + 1);
    return M3PT_OK;
  });
}

m3pt_status m3pt_config_write(const m3pt_config* cfg, const char* path) {
  if (m3pt_status s = require(cfg && path, "cfg/path is NULL")) return s;
  return guarded([&] {
    m3pt::write_config_file(cfg->cfg, path);
    return M3PT_OK;
  });
}

void m3pt_config_free(m3pt_config* cfg) { delete cfg; }

m3pt_status m3pt_model_create(const m3pt_config* cfg, unsigned long long seed,
                              m3pt_model** out) {
  if (m3pt_status s = require(cfg && out, "cfg/out is NULL")) return s;
  return guarded([&] {
    *out = new m3pt_model(cfg->cfg, seed);
    return M3PT_OK;
  });
}

m3pt_status m3pt_model_load_archive(m3pt_model* model, const char* path) {
  if (m3pt_status s = require(model && path, "model/path is NULL")) return s;
  return guarded([&] {
    m3pt::WeightArchive a = m3pt::load_archive(path);
    bool prompters_only = true;
    for (const auto& e : a.entries)
      if (e.name.rfind("prompter/", 0) != 0) prompters_only = false;
    if (!prompters_only)
      m3pt::apply_archive(a, model->foundation.store());
    m3pt::apply_archive(a, model->bank.store(), "prompter/");
    return M3PT_OK;
  });
}

m3pt_status m3pt_model_save_archive(const m3pt_model* model, const char* path,
                                    int prompters_only) {
  if (m3pt_status s = require(model && path, "model/path is NULL")) return s;
  return guarded([&] {
    m3pt::WeightArchive a;
    if (prompters_only) {
      a = m3pt::archive_from_store(model->bank.store(), "prompter/");
    } else {
      a = m3pt::archive_from_store(model->foundation.store());
      m3pt::WeightArchive b = m3pt::archive_from_store(model->bank.store(), "prompter/");
      int64_t base = static_cast<int64_t>(a.payload.size());
      for (auto& e : b.entries) {
        e.offset += base;
        a.entries.push_back(e);
      }
      a.payload.insert(a.payload.end(), b.payload.begin(), b.payload.end());
    }
    m3pt::save_archive(a, path);
    return M3PT_OK;
  });
}

void m3pt_model_free(m3pt_model* model) { delete model; }

m3pt_status m3pt_track_sequence(m3pt_model* model, const char* sequence_dir,
                                const char* out_path) {
  if (m3pt_status s = require(model && sequence_dir && out_path, "NULL argument"))
    return s;
  return guarded([&] {
    m3pt::IngestedSequence seq = m3pt::ingest_sequence(sequence_dir, {});
    std::vector<m3pt::BoundingBox> boxes =
        m3pt::run_sequence(model->foundation, model->bank, seq);
    m3pt::write_box_file(boxes, out_path);
    return M3PT_OK;
  });
}

m3pt_status m3pt_train(m3pt_model* model, long long max_steps,
                       const char* out_prefix) {
  if (m3pt_status s = require(model && out_prefix, "model/out_prefix is NULL"))
    return s;
  return guarded([&] {
    std::ofstream loss_csv(std::string(out_prefix) + ".loss.csv");
    if (!loss_csv)
      m3pt::fail(m3pt::ErrorKind::Io, "cannot write loss csv next to " +
                                          std::string(out_prefix));
    loss_csv << "step,lr,total,cls,giou,l1\n";
    char buf[256];
    m3pt::TrainResult result = m3pt::train_loop<float>(
        model->foundation, model->bank, model->cfg.train, model->cfg.loss,
        max_steps, [&loss_csv, &buf](const m3pt::StepRecord& r) {
          std::snprintf(buf, sizeof buf, "%lld,%.8g,%.8g,%.8g,%.8g,%.8g\n",
                        static_cast<long long>(r.step), r.lr, r.total, r.cls,
                        r.giou, r.l1);
          loss_csv << buf;
        });
    if (result.foundation_checksum_before != result.foundation_checksum_after)
      m3pt::fail(m3pt::ErrorKind::Numeric, "foundation changed during training");

    m3pt::WeightArchive a =
        m3pt::archive_from_store(model->bank.store(), "prompter/");
    m3pt::save_archive(a, out_prefix);

    std::ofstream manifest(std::string(out_prefix) + ".manifest");
    manifest << "config_hash=" << model->cfg.hash_hex() << "\n";
    manifest << "steps=" << result.history.size() << "\n";
    char sum[64];
    std::snprintf(sum, sizeof sum, "%016llx",
                  static_cast<unsigned long long>(
                      m3pt::param_checksum(model->bank.store())));
    manifest << "prompter_checksum=" << sum << "\n";
    if (!result.history.empty()) {
      std::snprintf(sum, sizeof sum, "%.8g", result.history.back().total);
      manifest << "final_loss=" << sum << "\n";
    }
    return M3PT_OK;
  });
}

m3pt_status m3pt_eval(const m3pt_config* cfg, const char* manifest_path,
                      const char* results_dir, const char* out_dir) {
  if (m3pt_status s =
          require(cfg && manifest_path && results_dir && out_dir, "NULL argument"))
    return s;
  return guarded([&] {
    m3pt::BenchmarkManifest manifest = m3pt::read_manifest(manifest_path);
    std::vector<std::string> schema = manifest.attribute_schema();
    std::vector<m3pt::SequenceRecord> records;
    for (const std::string& dir : manifest.sequence_dirs) {
      m3pt::IngestedSequence seq = m3pt::ingest_sequence(dir, schema);
      std::string results =
          std::string(results_dir) + "/" + seq.record.name + ".txt";
      if (!std::filesystem::exists(results))
        m3pt::fail(m3pt::ErrorKind::Data, "missing result file " + results);
      seq.record.pred = m3pt::read_box_file(results);
      seq.record.validate();
      records.push_back(seq.record);
    }
    const m3pt::EvalGrids& grids = cfg->cfg.eval;
    m3pt::GtSource source = grids.pr_uses_max_fusion ? m3pt::GtSource::MaxFused
                                                     : m3pt::GtSource::Visible;
    m3pt::EvalReport report;
    report.pr = m3pt::precision_curve(records, grids, source);
    report.npr = m3pt::norm_precision_curve(records, grids, source);
    report.sr = m3pt::success_curve(records, grids, source);
    bool any_thermal = false;
    for (const auto& r : records) any_thermal |= r.has_thermal_gt();
    if (any_thermal) {
      m3pt::MaxFuseResult mf = m3pt::max_fuse(records, grids);
      report.has_max_fused = true;
      report.max_fuse_fell_back = mf.fell_back;
      report.mpr = mf.mpr;
      report.msr = mf.msr;
    }
    if (!schema.empty())
      report.attributes = m3pt::attribute_breakdown(records, schema, grids, source);
    m3pt::export_report(report, out_dir);
    return M3PT_OK;
  });
}

m3pt_status m3pt_params_report(const m3pt_config* cfg, char** out_text) {
  if (m3pt_status s = require(cfg && out_text, "cfg/out_text is NULL")) return s;
  return guarded([&] {
    m3pt::ParamBudget b = m3pt::param_budget(cfg->cfg.tracker);
    char line[160];
    std::string text = "component      parameters\n";
    for (const char* k : {"uep", "ip", "mfp", "fep", "tokens"}) {
      std::snprintf(line, sizeof line, "%-14s %lld\n", k,
                    static_cast<long long>(b.per_component.at(k)));
      text += line;
    }
    std::snprintf(line, sizeof line, "%-14s %lld\n", "tuned",
                  static_cast<long long>(b.tuned_params));
    text += line;
    std::snprintf(line, sizeof line, "%-14s %lld\n", "foundation",
                  static_cast<long long>(b.foundation_params));
    text += line;
    std::snprintf(line, sizeof line, "%-14s %lld\n", "total",
                  static_cast<long long>(b.total_params()));
    text += line;
    std::snprintf(line, sizeof line, "tuned_fraction %.4f%%\n",
                  100.0 * b.tuned_fraction());
    text += line;
    std::snprintf(line, sizeof line, "tuned_millions %.4fM\n",
                  static_cast<double>(b.tuned_params) / 1e6);
    text += line;
    *out_text = dup_text(text);
    return M3PT_OK;
  });
}

m3pt_status m3pt_cost_report(const m3pt_config* cfg, int sweep_lo, int sweep_hi,
                             char** out_text) {
  if (m3pt_status s = require(cfg && out_text, "cfg/out_text is NULL")) return s;
  return guarded([&] {
    int64_t hi = sweep_hi < 0 ? cfg->cfg.tracker.foundation.num_blocks - 1
                              : static_cast<int64_t>(sweep_hi);
    auto rows = m3pt::cost_sweep(cfg->cfg.tracker, sweep_lo, hi);
    std::string text = "fusion_location macs gmacs\n";
    char line[128];
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%lld %lld %.3f\n",
                    static_cast<long long>(r.fusion_location),
                    static_cast<long long>(r.macs),
                    static_cast<double>(r.macs) / 1e9);
      text += line;
    }
    *out_text = dup_text(text);
    return M3PT_OK;
  });
}

m3pt_status m3pt_selftest(char** out_text) {
  if (m3pt_status s = require(out_text != nullptr, "out_text is NULL")) return s;
  return guarded([&] {
    std::string output;
    bool ok = m3pt::run_selftest(output);
    *out_text = dup_text(output);
    if (!ok) {
      g_last_error = "selftest failed";
      return M3PT_ERR_NUMERIC;
    }
    return M3PT_OK;
  });
}

}  // extern "C"
