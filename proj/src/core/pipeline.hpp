#pragma once

#include <map>

#include "head.hpp"
#include "prompters.hpp"

namespace m3pt {

// Per-modality frame pair; both modalities must share dimensions.
struct ModalFramePair {
  Tensor<float> visible;  // [H, W, 3]
  Tensor<float> thermal;  // [H, W, 3]

  void validate() const {
    if (visible.shape != thermal.shape)
      fail(ErrorKind::Dimension, "modal frame pair: visible " +
                                     shape_str(visible.shape) + " vs thermal " +
                                     shape_str(thermal.shape));
  }
};

// Token segments tracked as tape node ids: [prompt | template | search].
struct SeqNodes {
  int prompt = -1;
  int z = -1;
  int x = -1;
};

// One full forward graph. Bank leaves optionally carry gradients; the
// foundation never does (the freeze contract is structural).
template <typename S>
class TrackGraph {
 public:
  TrackGraph(const Foundation<S>& foundation, const PrompterBank<S>& bank,
             bool train_bank)
      : foundation_(foundation), bank_(bank),
        fp_(tape_, foundation.store(), false),
        bp_(tape_, bank.store(), train_bank) {}

  Tape<S>& tape() { return tape_; }
  StoreLeaves<S>& fp() { return fp_; }
  StoreLeaves<S>& bp() { return bp_; }
  const TrackerConfig& cfg() const { return bank_.cfg(); }
  const FoundationConfig& fcfg() const { return foundation_.cfg(); }
  PrompterCalls& calls() { return calls_; }

  // -- embedding ----------------------------------------------------------

  SeqNodes embed_modality(const Tensor<float>& tmpl, const Tensor<float>& search,
                          const char* prompt_table) {
    SeqNodes s;
    if (cfg().prompt_tokens > 0) s.prompt = bp_(prompt_table);
    s.z = patch_embed_node(tape_, fp_, fcfg(), tmpl, PatchRole::Template);
    s.x = patch_embed_node(tape_, fp_, fcfg(), search, PatchRole::Search);
    return s;
  }

  // -- encoder over a segmented sequence -----------------------------------

  SeqNodes encoder(int block_index, const SeqNodes& in) {
    std::vector<int> parts;
    if (in.prompt >= 0) parts.push_back(in.prompt);
    parts.push_back(in.z);
    parts.push_back(in.x);
    int full = parts.size() == 1 ? parts[0] : op_concat_rows(tape_, parts);
    int out = encoder_block_node(tape_, fp_, fcfg(), block_index, full);
    int64_t p = in.prompt >= 0 ? tape_.val(in.prompt).dim(0) : 0;
    int64_t nz = tape_.val(in.z).dim(0);
    int64_t nx = tape_.val(in.x).dim(0);
    SeqNodes r;
    if (p > 0) r.prompt = op_slice_rows(tape_, out, 0, p);
    r.z = op_slice_rows(tape_, out, p, p + nz);
    r.x = op_slice_rows(tape_, out, p + nz, p + nz + nx);
    return r;
  }

  // -- stage 1: dual stream with UEP / IP ----------------------------------
  //
  // Per layer n: the visible block runs first; UEP_V adds its delta to the
  // block output; IP^n prompts the thermal template input from the previous
  // thermal template and the fresh visible template; the thermal block and
  // UEP_T follow; the same IP^n instance then prompts the visible template
  // that feeds layer n+1 (at n = N it feeds the fusion instead). Learnable
  // prompt tokens ride along in their segment and stay out of prompter math.
  void stage1(const SeqNodes& v0, const SeqNodes& t0, SeqNodes& v_out,
              SeqNodes& t_out) {
    const TrackerConfig& c = cfg();
    int64_t zh = fcfg().template_grid_h(), zw = fcfg().template_grid_w();
    int64_t xh = fcfg().search_grid_h(), xw = fcfg().search_grid_w();
    SeqNodes v = v0, t = t0;
    for (int64_t n = 1; n <= c.first_stage_blocks; ++n) {
      SeqNodes ev = encoder(static_cast<int>(n), v);
      if (c.uep_layers.count(n)) {
        std::string pre = "prompter/uep/v/" + std::to_string(n) + "/";
        ev.z = op_add(tape_, ev.z, uep_delta_node(tape_, bp_, pre, v.z, zh, zw));
        ev.x = op_add(tape_, ev.x, uep_delta_node(tape_, bp_, pre, v.x, xh, xw));
        calls_.uep_v++;
      }
      int tz_in = ip_node(tape_, bp_, bank_.ip_prefix(n, true), t.z, ev.z, zh, zw);
      calls_.ip_to_thermal++;
      SeqNodes t_in{t.prompt, tz_in, t.x};
      SeqNodes et = encoder(static_cast<int>(n), t_in);
      if (c.uep_layers.count(n)) {
        std::string pre = "prompter/uep/t/" + std::to_string(n) + "/";
        et.z = op_add(tape_, et.z, uep_delta_node(tape_, bp_, pre, t_in.z, zh, zw));
        et.x = op_add(tape_, et.x, uep_delta_node(tape_, bp_, pre, t_in.x, xh, xw));
        calls_.uep_t++;
      }
      int vz_next = ip_node(tape_, bp_, bank_.ip_prefix(n, false), ev.z, et.z, zh, zw);
      calls_.ip_to_visible++;
      v = SeqNodes{ev.prompt, vz_next, ev.x};
      t = et;
    }
    v_out = v;
    t_out = t;
  }

  // -- middle fusion --------------------------------------------------------
  //
  // Template and search segments go through MFP; the prompt segment for the
  // second stage is the elementwise sum of the three learnable prompt tables.
  SeqNodes middle_fuse(const SeqNodes& v, const SeqNodes& t,
                       MfpTrace<S>* trace = nullptr) {
    int64_t zh = fcfg().template_grid_h(), zw = fcfg().template_grid_w();
    int64_t xh = fcfg().search_grid_h(), xw = fcfg().search_grid_w();
    SeqNodes fused;
    fused.z = mfp_node(tape_, bp_, v.z, t.z, zh, zw, trace);
    fused.x = mfp_node(tape_, bp_, v.x, t.x, xh, xw);
    calls_.mfp++;
    if (cfg().prompt_tokens > 0) {
      int sum_vt = op_add(tape_, bp_("prompter/tokens/visible"),
                          bp_("prompter/tokens/thermal"));
      fused.prompt = op_add(tape_, sum_vt, bp_("prompter/tokens/fusion"));
    }
    return fused;
  }

  // -- stage 2: single stream with FEP --------------------------------------
  SeqNodes stage2(const SeqNodes& fused) {
    const TrackerConfig& c = cfg();
    int64_t zh = fcfg().template_grid_h(), zw = fcfg().template_grid_w();
    int64_t xh = fcfg().search_grid_h(), xw = fcfg().search_grid_w();
    SeqNodes h = fused;
    int prev_pz = -1, prev_px = -1;
    for (int64_t m = c.first_stage_blocks + 1; m <= fcfg().num_blocks; ++m) {
      int64_t k = m - c.first_stage_blocks;
      SeqNodes e = encoder(static_cast<int>(m), h);
      std::string pre = "prompter/fep/" + std::to_string(k) + "/";
      int src_z = k == 1 ? h.z : prev_pz;
      int src_x = k == 1 ? h.x : prev_px;
      int pz = fep_node(tape_, bp_, pre, src_z, e.z, zh, zw);
      int px = fep_node(tape_, bp_, pre, src_x, e.x, xh, xw);
      calls_.fep++;
      h = SeqNodes{e.prompt, op_add(tape_, e.z, pz), op_add(tape_, e.x, px)};
      prev_pz = pz;
      prev_px = px;
    }
    return h;
  }

  // -- full pipeline ---------------------------------------------------------
  HeadNodes<S> forward(const ModalFramePair& templates,
                       const ModalFramePair& searches) {
    templates.validate();
    searches.validate();
    SeqNodes v0 = embed_modality(templates.visible, searches.visible,
                                 "prompter/tokens/visible");
    SeqNodes t0 = embed_modality(templates.thermal, searches.thermal,
                                 "prompter/tokens/thermal");
    SeqNodes v, t;
    stage1(v0, t0, v, t);
    SeqNodes fused = middle_fuse(v, t);
    SeqNodes out = stage2(fused);
    return head_nodes(tape_, fp_, fcfg(), out.x);
  }

 private:
  const Foundation<S>& foundation_;
  const PrompterBank<S>& bank_;
  Tape<S> tape_;
  StoreLeaves<S> fp_;
  StoreLeaves<S> bp_;
  PrompterCalls calls_;
};

// Plain inference: deterministic, no gradients.
template <typename S>
HeadOutput track(const Foundation<S>& foundation, const PrompterBank<S>& bank,
                 const ModalFramePair& templates, const ModalFramePair& searches,
                 PrompterCalls* calls = nullptr) {
  TrackGraph<S> g(foundation, bank, false);
  HeadNodes<S> head = g.forward(templates, searches);
  if (calls) *calls = g.calls();
  const FoundationConfig& fc = foundation.cfg();
  HeadMaps<S> maps = activate_head_maps(
      g.tape().val(head.score_logits), g.tape().val(head.offset_raw),
      g.tape().val(head.size_raw), fc.search_grid_h(), fc.search_grid_w());
  return decode_box(maps.score, maps.offset, maps.size, fc.patch_size,
                    fc.search_w, fc.search_h);
}

// ---------------------------------------------------------------------------
// Parameter budget
// ---------------------------------------------------------------------------

struct ParamBudget {
  int64_t foundation_params = 0;
  int64_t tuned_params = 0;
  std::map<std::string, int64_t> per_component;  // uep, ip, mfp, fep, tokens

  int64_t total_params() const { return foundation_params + tuned_params; }
  double tuned_fraction() const {
    return foundation_params > 0
               ? static_cast<double>(tuned_params) / static_cast<double>(foundation_params)
               : 0.0;
  }
};

inline ParamBudget param_budget(const TrackerConfig& cfg) {
  cfg.validate();
  ParamBudget b;
  b.foundation_params = foundation_param_count(cfg.foundation);
  for (const char* k : {"uep", "ip", "mfp", "fep", "tokens"}) b.per_component[k] = 0;
  for_each_bank_param(cfg, [&b](const std::string& name,
                                const std::vector<int64_t>& shape) {
    int64_t n = Tensor<float>::numel_of(shape);
    b.tuned_params += n;
    for (auto& kv : b.per_component) {
      if (name.rfind("prompter/" + kv.first + "/", 0) == 0) {
        kv.second += n;
        break;
      }
    }
  });
  return b;
}

// Exact integer counts from a constructed model; must agree with param_budget.
template <typename S>
ParamBudget count_parameters(const Foundation<S>& foundation,
                             const PrompterBank<S>& bank) {
  ParamBudget b = param_budget(bank.cfg());
  int64_t live_foundation = foundation.store().total_elems();
  int64_t live_bank = bank.store().total_elems();
  if (live_foundation != b.foundation_params || live_bank != b.tuned_params)
    fail(ErrorKind::Shape, "parameter registry disagrees with live tensors");
  return b;
}

// ---------------------------------------------------------------------------
// Analytic cost model (multiply-accumulates per tracked frame)
// ---------------------------------------------------------------------------
//
// Stage-1 blocks run twice (dual stream), stage-2 blocks once; prompter costs
// are added per application. Attention cost uses the standard ViT estimate.

inline int64_t encoder_block_macs(const FoundationConfig& c, int64_t tokens) {
  int64_t d = c.embed_dim;
  int64_t hidden = c.mlp_hidden();
  int64_t attn = 4 * tokens * d * d + 2 * tokens * tokens * d;
  int64_t mlp = 2 * tokens * d * hidden;
  return attn + mlp;
}

inline int64_t cost_model_macs(const TrackerConfig& cfg, int64_t fusion_location) {
  const FoundationConfig& f = cfg.foundation;
  int64_t n = fusion_location;
  int64_t l = f.num_blocks;
  int64_t d = f.embed_dim;
  int64_t nz = f.num_template_tokens(), nx = f.num_search_tokens();
  int64_t grid = nz + nx;
  int64_t tokens = cfg.prompt_tokens + grid;
  int64_t du = cfg.uep_low_dim, di = cfg.ip_low_dim, m = cfg.mfp_low_dim;

  int64_t total = 0;
  // dual patch embedding
  total += 2 * grid * d * 3 * f.patch_size * f.patch_size;
  // backbone: 2N + (L - N) block passes
  total += (2 * n + (l - n)) * encoder_block_macs(f, tokens);
  // UEP: per active layer <= N, both modalities, template+search grids
  int64_t uep_apps = 0;
  for (int64_t u : cfg.uep_layers)
    if (u <= n) uep_apps += 2;
  total += uep_apps * grid * (d * du + du * du + 9 * du + 9 * du * du + du * du + du * d);
  // IP: both directions per layer, template grid only
  total += 2 * n * nz * (2 * d * di + di + (di + 1) * di + di * d);
  // MFP once
  total += grid * (2 * d * m + 5 * m * 2 + 3 * m + m * d);
  // FEP per stage-2 layer
  total += (l - n) * grid * (2 * d * di + 2 * di + di * d);
  // head branches
  total += nx * (d * d / 2 + 3 * d);
  return total;
}

struct CostRow {
  int64_t fusion_location;
  int64_t macs;
};

inline std::vector<CostRow> cost_sweep(const TrackerConfig& cfg, int64_t lo, int64_t hi) {
  if (lo < 1 || hi > cfg.foundation.num_blocks - 1 || lo > hi)
    fail(ErrorKind::Config, "cost sweep range must satisfy 1 <= lo <= hi <= L-1");
  std::vector<CostRow> rows;
  for (int64_t n = lo; n <= hi; ++n) rows.push_back({n, cost_model_macs(cfg, n)});
  return rows;
}

}  // namespace m3pt
