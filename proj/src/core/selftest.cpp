#include "selftest.hpp"

#include <functional>
#include <sstream>

#include "core/archive.hpp"
#include "core/loss.hpp"
#include "core/pipeline.hpp"
#include "core/runconfig.hpp"
#include "core/runner.hpp"
#include "core/synth.hpp"
#include "core/train.hpp"

namespace m3pt {

namespace {

struct Check {
  const char* name;
  std::function<void()> run;
};

void expect(bool cond, const std::string& why) {
  if (!cond) fail(ErrorKind::Numeric, why);
}

void expect_near(double a, double b, double tol, const std::string& what) {
  if (std::abs(a - b) > tol)
    fail(ErrorKind::Numeric, what + ": " + std::to_string(a) + " vs " +
                                 std::to_string(b));
}

TrackerConfig toy_config() {
  TrackerConfig c;
  c.foundation.patch_size = 16;
  c.foundation.embed_dim = 16;
  c.foundation.num_blocks = 4;
  c.foundation.num_heads = 2;
  c.foundation.mlp_ratio = 2.0;
  c.foundation.template_h = c.foundation.template_w = 32;
  c.foundation.search_h = c.foundation.search_w = 64;
  c.first_stage_blocks = 3;
  c.uep_layers = {2};
  c.prompt_tokens = 2;
  return c;
}

Tensor<float> random_image(Rng& rng, int64_t h, int64_t w) {
  Tensor<float> img({h, w, 3});
  for (int64_t k = 0; k < img.numel(); ++k)
    img[k] = static_cast<float>(rng.uniform01());
  return img;
}

const std::vector<Check>& checks() {
  static const std::vector<Check> list = {
      {"patch_counts",
       [] {
         Rng rng(7);
         Tensor<float> t32 = random_image(rng, 32, 32);
         expect(extract_patches<double>(t32, 16).dim(0) == 4, "32x32/16 != 4 tokens");
         Tensor<float> t128 = random_image(rng, 128, 128);
         expect(extract_patches<double>(t128, 16).dim(0) == 64, "128x128/16 != 64 tokens");
       }},
      {"patch_dimension_error",
       [] {
         Rng rng(7);
         Tensor<float> bad = random_image(rng, 130, 128);
         try {
           extract_patches<double>(bad, 16);
           fail(ErrorKind::Numeric, "130x128 accepted");
         } catch (const Error& e) {
           expect(e.kind() == ErrorKind::Dimension, "wrong error kind");
           expect(std::string(e.what()).find("height") != std::string::npos,
                  "error does not name the offending axis");
         }
       }},
      {"encoder_zero_projection_identity",
       [] {
         TrackerConfig c = toy_config();
         Foundation<double> f(c.foundation, 11);
         for (int64_t l = 1; l <= c.foundation.num_blocks; ++l) {
           std::string b = "foundation/block" + std::to_string(l) + "/";
           f.store().get(b + "proj_w").fill(0);
           f.store().get(b + "proj_b").fill(0);
           f.store().get(b + "fc2_w").fill(0);
           f.store().get(b + "fc2_b").fill(0);
         }
         Rng rng(3);
         Tensor<double> x({5, c.foundation.embed_dim});
         for (int64_t k = 0; k < x.numel(); ++k) x[k] = rng.normal();
         for (int64_t l = 1; l <= c.foundation.num_blocks; ++l) {
           Tape<double> tape;
           StoreLeaves<double> fp(tape, f.store(), false);
           int in = tape.leaf(x);
           int out = encoder_block_node(tape, fp, f.cfg(), static_cast<int>(l), in);
           const Tensor<double>& y = tape.val(out);
           for (int64_t k = 0; k < x.numel(); ++k)
             expect(y[k] == x[k], "zero-projection block changed its input");
         }
       }},
      {"head_decode_center_and_tiebreak",
       [] {
         Tensor<double> score({4, 4});
         Tensor<double> offset({2, 4, 4});
         Tensor<double> size({2, 4, 4});
         offset.fill(0.5);
         size.fill(1.0);
         score.at(2, 1) = 1.0;
         HeadOutput out = decode_box(score, offset, size, 16, 64, 64);
         expect_near(out.box.cx(), (1 + 0.5) * 16, 1e-12, "decode cx");
         expect_near(out.box.cy(), (2 + 0.5) * 16, 1e-12, "decode cy");
         expect(out.score_map.shape == std::vector<int64_t>({4, 4}), "score map shape");
         score.fill(0.25);  // all equal: first row-major cell wins
         HeadOutput tie = decode_box(score, offset, size, 16, 64, 64);
         expect_near(tie.box.cx(), 0.5 * 16, 1e-12, "tie-break cx");
         expect_near(tie.box.cy(), 0.5 * 16, 1e-12, "tie-break cy");
       }},
      {"archive_round_trip",
       [] {
         TrackerConfig c = toy_config();
         PrompterBank<float> bank(c, 5);
         WeightArchive a = archive_from_store(bank.store(), "prompter/");
         std::stringstream buf;
         write_archive_stream(a, buf);
         WeightArchive back = read_archive_stream(buf);
         PrompterBank<float> other(c, 99);
         apply_archive(back, other.store(), "prompter/");
         expect(param_checksum(bank.store()) == param_checksum(other.store()),
                "round trip not bitwise");
       }},
      {"archive_missing_and_mismatch_errors",
       [] {
         TrackerConfig c = toy_config();
         PrompterBank<float> bank(c, 5);
         WeightArchive a = archive_from_store(bank.store(), "prompter/");
         WeightArchive missing = a;
         missing.entries.erase(missing.entries.begin());
         std::string first = a.entries[0].name;
         try {
           apply_archive(missing, bank.store(), "prompter/");
           fail(ErrorKind::Numeric, "missing tensor accepted");
         } catch (const Error& e) {
           expect(std::string(e.what()).find(first) != std::string::npos,
                  "missing-tensor error does not name it");
         }
         WeightArchive bad = a;
         bad.entries[0].shape[0] += 1;
         bad.payload.resize(bad.payload.size() + 4);
         try {
           apply_archive(bad, bank.store(), "prompter/");
           fail(ErrorKind::Numeric, "shape mismatch accepted");
         } catch (const Error& e) {
           expect(std::string(e.what()).find("shape mismatch") != std::string::npos,
                  "wrong error for shape mismatch");
         }
       }},
      {"zero_init_prompters_are_noops",
       [] {
         TrackerConfig c = toy_config();
         PrompterBank<double> bank(c, 17);
         Rng rng(23);
         Tensor<double> z({4, 16}), z2({4, 16});
         for (int64_t k = 0; k < z.numel(); ++k) z[k] = rng.normal();
         for (int64_t k = 0; k < z2.numel(); ++k) z2[k] = rng.normal();
         Tensor<double> du = uep_forward(bank, "v", 2, z, 2, 2);
         for (int64_t k = 0; k < du.numel(); ++k)
           expect(du[k] == 0.0, "fresh UEP delta not zero");
         Tensor<double> ipo = ip_forward(bank, 1, true, z, z2, 2, 2);
         for (int64_t k = 0; k < z.numel(); ++k)
           expect(ipo[k] == z[k], "fresh IP changed the prompted stream");
         Tensor<double> fo = fep_forward(bank, 1, z, z2, 2, 2);
         for (int64_t k = 0; k < fo.numel(); ++k)
           expect(fo[k] == 0.0, "fresh FEP delta not zero");
       }},
      {"mfp_softmax_and_sigmoid_ranges",
       [] {
         TrackerConfig c = toy_config();
         PrompterBank<double> bank(c, 29);
         Rng rng(31);
         Tensor<double> v({4, 16}), t({4, 16});
         for (int64_t k = 0; k < v.numel(); ++k) v[k] = rng.normal();
         for (int64_t k = 0; k < t.numel(); ++k) t[k] = rng.normal();
         MfpTrace<double> trace;
         mfp_forward(bank, v, t, 2, 2, &trace);
         for (int64_t k = 0; k < trace.w_visible.numel(); ++k) {
           double sum = trace.w_visible[k] + trace.w_thermal[k];
           expect_near(sum, 1.0, 1e-6, "mfp weights do not sum to 1");
           expect(trace.w_visible[k] >= 0 && trace.w_visible[k] <= 1,
                  "mfp weight outside [0,1]");
         }
         for (int64_t k = 0; k < trace.sig_visible.numel(); ++k)
           expect(trace.sig_visible[k] > 0 && trace.sig_visible[k] < 1 &&
                      trace.sig_thermal[k] > 0 && trace.sig_thermal[k] < 1,
                  "sigmoid feature outside (0,1)");
       }},
      {"loss_examples",
       [] {
         expect_near(box_iou({0, 0, 2, 2}, {1, 0, 2, 2}), 1.0 / 3.0, 1e-12, "iou 1/3");
         expect_near(box_iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0, 1e-12, "iou self");
         expect_near(box_iou({0, 0, 1, 1}, {5, 5, 1, 1}), 0.0, 1e-12, "iou disjoint");
         expect_near(1.0 - box_giou({0, 0, 2, 2}, {1, 0, 2, 2}), 2.0 / 3.0, 1e-12,
                     "giou loss 2/3");
         Tensor<double> perfect({4, 4});
         BoundingBox gt{24, 24, 16, 16};
         int64_t i0, j0;
         center_cell_of(gt, 16, 4, 4, i0, j0);
         perfect.at(i0, j0) = 1.0;
         LossParts parts = compute_loss(gt, perfect, gt, LossWeights{}, 16, 64, 64);
         expect_near(parts.giou, 0.0, 1e-12, "giou at pred==gt");
         expect_near(parts.l1, 0.0, 1e-12, "l1 at pred==gt");
       }},
      {"lr_schedule_exact",
       [] {
         TrainConfig c;
         expect(lr_at_epoch(c, 0) == 4e-4 && lr_at_epoch(c, 47) == 4e-4,
                "lr before decay");
         expect(lr_at_epoch(c, 48) == 4e-5 && lr_at_epoch(c, 59) == 4e-5,
                "lr after decay");
       }},
      {"bank_init_deterministic",
       [] {
         TrackerConfig c = toy_config();
         PrompterBank<float> a(c, 123), b(c, 123);
         expect(param_checksum(a.store()) == param_checksum(b.store()),
                "same seed gave different banks");
         for (size_t i = 0; i < a.store().count(); ++i) {
           const std::string& name = a.store().name(i);
           if (name.find("up_w") != std::string::npos ||
               name.rfind("prompter/tokens/", 0) == 0) {
             const auto& t = a.store().tensor(i);
             for (int64_t k = 0; k < t.numel(); ++k)
               expect(t[k] == 0.0f, name + " not zero-initialized");
           }
         }
       }},
      {"synthetic_deterministic_and_bounded",
       [] {
         TrackerConfig c = toy_config();
         auto a = generate_synthetic(0, 6, c.foundation);
         auto b = generate_synthetic(0, 6, c.foundation);
         for (size_t i = 0; i < a.size(); ++i) {
           expect(a[i].gt == b[i].gt, "synthetic gt differs across runs");
           expect(a[i].searches.visible.data == b[i].searches.visible.data,
                  "synthetic frames differ across runs");
           expect(a[i].gt.x >= 0 && a[i].gt.y >= 0 &&
                      a[i].gt.x + a[i].gt.w <= c.foundation.search_w &&
                      a[i].gt.y + a[i].gt.h <= c.foundation.search_h,
                  "synthetic gt outside search bounds");
         }
       }},
      {"metric_trivials",
       [] {
         expect_near(center_error_px({0, 0, 2, 2}, {3, 4, 2, 2}), 5.0, 1e-12,
                     "3-4-5 center error");
         SequenceRecord r;
         r.name = "perfect";
         for (int i = 0; i < 5; ++i) {
           BoundingBox b{10.0 + i, 20.0, 8, 6};
           r.pred.push_back(b);
           r.gt_visible.push_back(b);
         }
         MetricCurve pr = precision_curve({r});
         for (double v : pr.values) expect(v == 1.0, "perfect tracker PR != 1");
         expect(pr.representative == 1.0, "perfect tracker PR@20 != 1");
       }},
      {"config_defaults_and_roundtrip",
       [] {
         RunConfig cfg = parse_config_text("", "<empty>");
         expect(cfg.tracker.first_stage_blocks == 10, "default N != 10");
         expect(cfg.tracker.uep_layers == std::set<int64_t>({2, 5, 8}),
                "default uep layers != {2,5,8}");
         expect(cfg.tracker.prompt_tokens == 2, "default P != 2");
         RunConfig again = parse_config_text(cfg.canonical_text(), "<roundtrip>");
         expect(again.hash() == cfg.hash(), "round-trip hash differs");
         try {
           parse_config_text("tracker.first_stage_blocks=12\n", "<bad>");
           fail(ErrorKind::Numeric, "N == L accepted");
         } catch (const Error& e) {
           expect(e.kind() == ErrorKind::Config, "wrong error kind for bad N");
         }
       }},
      {"cost_model_monotonic",
       [] {
         TrackerConfig c = toy_config();
         auto rows = cost_sweep(c, 1, c.foundation.num_blocks - 1);
         for (size_t i = 1; i < rows.size(); ++i)
           expect(rows[i].macs > rows[i - 1].macs, "cost not strictly increasing");
       }},
      {"budget_component_additivity",
       [] {
         TrackerConfig c = toy_config();
         c.first_stage_blocks = 1;
         c.uep_layers.clear();
         c.prompt_tokens = 0;
         ParamBudget b = param_budget(c);
         expect(b.per_component.at("uep") == 0 && b.per_component.at("tokens") == 0,
                "unexpected uep/token params");
         // without UEP and prompt tokens, the bank is IP + MFP + FEP
         expect(b.tuned_params == b.per_component.at("ip") + b.per_component.at("mfp") +
                                      b.per_component.at("fep"),
                "component counts do not add up");
       }},
      {"track_bounds_and_determinism",
       [] {
         TrackerConfig c = toy_config();
         Foundation<float> f(c.foundation, 2);
         PrompterBank<float> bank(c, 3);
         auto data = generate_synthetic(1, 1, c.foundation);
         HeadOutput a = track(f, bank, data[0].templates, data[0].searches);
         HeadOutput b = track(f, bank, data[0].templates, data[0].searches);
         expect(a.box == b.box, "track rerun differs");
         expect(a.box.x >= 0 && a.box.y >= 0 &&
                    a.box.x + a.box.w <= c.foundation.search_w &&
                    a.box.y + a.box.h <= c.foundation.search_h,
                "track box outside search bounds");
       }},
      {"middle_fuse_token_counts",
       [] {
         TrackerConfig c = toy_config();
         for (int64_t p : {0, 2}) {
           c.prompt_tokens = p;
           Foundation<float> f(c.foundation, 2);
           PrompterBank<float> bank(c, 3);
           auto data = generate_synthetic(2, 1, c.foundation);
           TrackGraph<float> g(f, bank, false);
           SeqNodes v0 = g.embed_modality(data[0].templates.visible,
                                          data[0].searches.visible,
                                          "prompter/tokens/visible");
           SeqNodes t0 = g.embed_modality(data[0].templates.thermal,
                                          data[0].searches.thermal,
                                          "prompter/tokens/thermal");
           SeqNodes v, t;
           g.stage1(v0, t0, v, t);
           SeqNodes fused = g.middle_fuse(v, t);
           int64_t total = g.tape().val(fused.z).dim(0) + g.tape().val(fused.x).dim(0);
           if (fused.prompt >= 0) {
             total += g.tape().val(fused.prompt).dim(0);
             const auto& pv = g.tape().val(fused.prompt);
             for (int64_t k = 0; k < pv.numel(); ++k)
               expect(pv[k] == 0.0f, "fresh-bank fused prompt segment not zero");
           }
           expect(total == p + 4 + 16, "fused token count wrong");
         }
       }},
  };
  return list;
}

}  // namespace

bool run_selftest(std::string& output) {
  std::ostringstream os;
  bool all_ok = true;
  for (const Check& c : checks()) {
    try {
      c.run();
      os << "ok " << c.name << "\n";
    } catch (const std::exception& e) {
      os << "FAIL " << c.name << ": " << e.what() << "\n";
      all_ok = false;
    }
  }
  os << (all_ok ? "selftest passed" : "selftest FAILED") << " ("
     << checks().size() << " checks)\n";
  output += os.str();
  return all_ok;
}

}  // namespace m3pt
