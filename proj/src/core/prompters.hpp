#pragma once

#include <string>
#include <vector>

#include "tape.hpp"
#include "tracker_config.hpp"

namespace m3pt {

// ---------------------------------------------------------------------------
// PrompterBank: the complete trainable state. Everything else in the model is
// frozen. Names live under the "prompter/" prefix so checkpoints can carry
// only the tuned tensors.
// ---------------------------------------------------------------------------

inline void for_each_bank_param(const TrackerConfig& c, const ParamSpecFn& fn) {
  int64_t d = c.foundation.embed_dim;
  int64_t du = c.uep_low_dim, di = c.ip_low_dim, m = c.mfp_low_dim;
  for (const char* mod : {"v", "t"}) {
    for (int64_t l : c.uep_layers) {
      std::string b = "prompter/uep/" + std::string(mod) + "/" + std::to_string(l) + "/";
      fn(b + "down_w", {du, d});
      fn(b + "down_b", {du});
      fn(b + "std_w", {du, du});
      fn(b + "std_b", {du});
      fn(b + "dw_w", {du, 3, 3});
      fn(b + "dw_b", {du});
      fn(b + "dl_w", {du, du, 3, 3});
      fn(b + "dl_b", {du});
      fn(b + "merge_w", {du, du});
      fn(b + "merge_b", {du});
      fn(b + "up_w", {d, du});
      fn(b + "up_b", {d});
    }
  }
  auto ip_tensors = [&](const std::string& b) {
    fn(b + "pdown_w", {di, d});   // prompting-modality down projection
    fn(b + "pdown_b", {di});
    fn(b + "xdown_w", {di, d});   // prompted-modality down projection
    fn(b + "xdown_b", {di});
    fn(b + "merge_w", {di, di + 1});
    fn(b + "merge_b", {di});
    fn(b + "up_w", {d, di});
    fn(b + "up_b", {d});
  };
  for (int64_t l = 1; l <= c.first_stage_blocks; ++l) {
    if (c.ip_per_direction) {
      ip_tensors("prompter/ip/" + std::to_string(l) + "/v2t/");
      ip_tensors("prompter/ip/" + std::to_string(l) + "/t2v/");
    } else {
      ip_tensors("prompter/ip/" + std::to_string(l) + "/");
    }
  }
  fn("prompter/mfp/downv_w", {m, d});
  fn("prompter/mfp/downv_b", {m});
  fn("prompter/mfp/downt_w", {m, d});
  fn("prompter/mfp/downt_b", {m});
  fn("prompter/mfp/fc_w", {2, 5 * m});
  fn("prompter/mfp/fc_b", {2});
  fn("prompter/mfp/up_w", {d, m});
  fn("prompter/mfp/up_b", {d});
  for (int64_t k = 1; k <= c.second_stage_blocks(); ++k) {
    std::string b = "prompter/fep/" + std::to_string(k) + "/";
    fn(b + "pdown_w", {di, d});
    fn(b + "pdown_b", {di});
    fn(b + "fdown_w", {di, d});
    fn(b + "fdown_b", {di});
    fn(b + "up_w", {d, di});
    fn(b + "up_b", {d});
  }
  fn("prompter/tokens/visible", {c.prompt_tokens, d});
  fn("prompter/tokens/thermal", {c.prompt_tokens, d});
  fn("prompter/tokens/fusion", {c.prompt_tokens, d});
}

inline int64_t bank_param_count(const TrackerConfig& c) {
  int64_t n = 0;
  for_each_bank_param(c, [&n](const std::string&, const std::vector<int64_t>& s) {
    n += Tensor<float>::numel_of(s);
  });
  return n;
}

// Every up-projection and all three learnable prompt tables start at zero so
// a fresh bank is an exact no-op on the prompted streams; remaining weights
// are small-random, biases zero.
template <typename S>
class PrompterBank {
 public:
  PrompterBank(const TrackerConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    for_each_bank_param(cfg_, [this](const std::string& name,
                                     const std::vector<int64_t>& shape) {
      store_.add(name, shape);
    });
    Rng root(seed ^ 0xB4D2A3C1ULL);
    auto ends_with = [](const std::string& s, const std::string& suf) {
      return s.size() >= suf.size() &&
             s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    for (size_t i = 0; i < store_.count(); ++i) {
      const std::string& name = store_.name(i);
      Tensor<S>& t = store_.tensor(i);
      if (ends_with(name, "_b") || ends_with(name, "up_w") ||
          name.rfind("prompter/tokens/", 0) == 0) {
        t.fill(S(0));
      } else {
        Rng r = root.fork(i + 1);
        for (int64_t k = 0; k < t.numel(); ++k)
          t[k] = static_cast<S>(static_cast<float>(r.normal(0.0, 0.02)));
      }
    }
  }

  const TrackerConfig& cfg() const { return cfg_; }
  ParamStore<S>& store() { return store_; }
  const ParamStore<S>& store() const { return store_; }

  std::string ip_prefix(int64_t layer, bool thermal_prompted) const {
    std::string b = "prompter/ip/" + std::to_string(layer) + "/";
    if (cfg_.ip_per_direction) b += thermal_prompted ? "v2t/" : "t2v/";
    return b;
  }

 private:
  TrackerConfig cfg_;
  ParamStore<S> store_;
};

// ---------------------------------------------------------------------------
// Prompter forwards (tape level). All of them exclude learnable prompt tokens:
// callers pass template/search segments only.
// ---------------------------------------------------------------------------

// Dilation shrinks on grids too small for the nominal rate so the dilated
// branch never degenerates to a pure border effect.
inline int64_t clamped_dilation(int64_t nominal, int64_t h, int64_t w) {
  int64_t max_d = std::max<int64_t>(1, std::min(h, w) - 1);
  return std::min(nominal, max_d);
}

// Call counters for wiring tests.
struct PrompterCalls {
  int uep_v = 0, uep_t = 0, ip_to_thermal = 0, ip_to_visible = 0;
  int mfp = 0, fep = 0;
};

// UEP on one token segment viewed as an h x w grid. Returns the prompt delta
// (the up-projected exploration features); the caller adds it to the encoder
// output, which realizes the prompter's residual connection exactly once.
template <typename S>
int uep_delta_node(Tape<S>& tape, StoreLeaves<S>& bp, const std::string& prefix,
                   int tokens, int64_t h, int64_t w) {
  int grid = op_tokens_to_grid(tape, tokens, h, w);
  int low = op_conv1x1(tape, grid, bp(prefix + "down_w"), bp(prefix + "down_b"));
  int std_f = op_conv1x1(tape, low, bp(prefix + "std_w"), bp(prefix + "std_b"));
  int dl_f = op_conv_dense(tape, low, bp(prefix + "dl_w"), bp(prefix + "dl_b"),
                           clamped_dilation(2, h, w));
  int dw_f = op_conv_depthwise(tape, low, bp(prefix + "dw_w"), bp(prefix + "dw_b"));
  int fsum = op_add(tape, op_add(tape, std_f, dl_f), dw_f);
  int merged = op_gelu(tape, op_conv1x1(tape, fsum, bp(prefix + "merge_w"),
                                        bp(prefix + "merge_b")));
  int up = op_conv1x1(tape, merged, bp(prefix + "up_w"), bp(prefix + "up_b"));
  return op_grid_to_tokens(tape, up);
}

// IP: channel-pooled summary of the prompting modality's template injected
// into the prompted modality's template. Residual on the prompted stream.
template <typename S>
int ip_node(Tape<S>& tape, StoreLeaves<S>& bp, const std::string& prefix,
            int prompted_tokens, int prompting_tokens, int64_t h, int64_t w) {
  if (!tape.val(prompted_tokens).same_shape(tape.val(prompting_tokens)))
    fail(ErrorKind::Shape, "ip: template token shapes differ");
  int gp = op_tokens_to_grid(tape, prompting_tokens, h, w);
  int low_p = op_conv1x1(tape, gp, bp(prefix + "pdown_w"), bp(prefix + "pdown_b"));
  int pooled = op_mean_channels(tape, low_p);
  int gx = op_tokens_to_grid(tape, prompted_tokens, h, w);
  int low_x = op_conv1x1(tape, gx, bp(prefix + "xdown_w"), bp(prefix + "xdown_b"));
  // pooled prompt rides as the extra (d+1)-th channel
  int cat = op_concat_channels(tape, {low_x, pooled});
  int merged = op_conv1x1(tape, cat, bp(prefix + "merge_w"), bp(prefix + "merge_b"));
  int up = op_conv1x1(tape, merged, bp(prefix + "up_w"), bp(prefix + "up_b"));
  return op_add(tape, prompted_tokens, op_grid_to_tokens(tape, up));
}

// MFP diagnostics captured for invariant tests.
template <typename S>
struct MfpTrace {
  Tensor<S> w_visible, w_thermal;       // [1, h, w] each
  Tensor<S> sig_visible, sig_thermal;   // [m, h, w]
  Tensor<S> fused_low;                  // [m, h, w]
};

// MFP on one token segment pair. All MFP convolutions are 1x1, so segments
// can be fused independently with identical results.
template <typename S>
int mfp_node(Tape<S>& tape, StoreLeaves<S>& bp, int tokens_v, int tokens_t,
             int64_t h, int64_t w, MfpTrace<S>* trace = nullptr) {
  if (!tape.val(tokens_v).same_shape(tape.val(tokens_t)))
    fail(ErrorKind::Shape, "mfp: segment shapes differ");
  int gv = op_tokens_to_grid(tape, tokens_v, h, w);
  int gt = op_tokens_to_grid(tape, tokens_t, h, w);
  int lv = op_conv1x1(tape, gv, bp("prompter/mfp/downv_w"), bp("prompter/mfp/downv_b"));
  int lt = op_conv1x1(tape, gt, bp("prompter/mfp/downt_w"), bp("prompter/mfp/downt_b"));
  int fs = op_mul(tape, lv, lt);
  int fa = op_add(tape, lv, lt);
  int fv = op_sigmoid(tape, op_sub(tape, lv, lt));
  int ft = op_sigmoid(tape, op_sub(tape, lt, lv));
  // concat order (F'_V, F'_S, F'_A, F'_S, F'_T); the shared term appears twice
  int cat = op_concat_channels(tape, {fv, fs, fa, fs, ft});
  int logits = op_conv1x1(tape, cat, bp("prompter/mfp/fc_w"), bp("prompter/mfp/fc_b"));
  int wmap = op_softmax_channels(tape, logits);
  int wv = op_slice_channels(tape, wmap, 0, 1);
  int wt = op_slice_channels(tape, wmap, 1, 2);
  int fused_low = op_add(
      tape, fs,
      op_add(tape, op_mul_broadcast_channel(tape, lv, wv),
             op_mul_broadcast_channel(tape, lt, wt)));
  if (trace) {
    trace->w_visible = tape.val(wv);
    trace->w_thermal = tape.val(wt);
    trace->sig_visible = tape.val(fv);
    trace->sig_thermal = tape.val(ft);
    trace->fused_low = tape.val(fused_low);
  }
  int up = op_conv1x1(tape, fused_low, bp("prompter/mfp/up_w"), bp("prompter/mfp/up_b"));
  return op_grid_to_tokens(tape, up);
}

// FEP: fovea-gated prompt stream summed with the encoder-feature stream.
// Returns the prompt delta added to the stage-2 features.
template <typename S>
int fep_node(Tape<S>& tape, StoreLeaves<S>& bp, const std::string& prefix,
             int prompt_in, int feat, int64_t h, int64_t w) {
  if (!tape.val(prompt_in).same_shape(tape.val(feat)))
    fail(ErrorKind::Shape, "fep: prompt/feature shapes differ");
  int gp = op_tokens_to_grid(tape, prompt_in, h, w);
  int zp = op_conv1x1(tape, gp, bp(prefix + "pdown_w"), bp(prefix + "pdown_b"));
  int gated = op_mul(tape, zp, op_spatial_softmax(tape, zp));  // fovea
  int gf = op_tokens_to_grid(tape, feat, h, w);
  int zf = op_conv1x1(tape, gf, bp(prefix + "fdown_w"), bp(prefix + "fdown_b"));
  int up = op_conv1x1(tape, op_add(tape, gated, zf), bp(prefix + "up_w"),
                      bp(prefix + "up_b"));
  return op_grid_to_tokens(tape, up);
}

// ---------------------------------------------------------------------------
// Plain-tensor convenience wrappers (single-shot graphs) for module-level use
// and tests. Segments are given as [n, D] token blocks plus their grid shape.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> uep_forward(const PrompterBank<S>& bank, const std::string& modality,
                      int64_t layer, const Tensor<S>& tokens, int64_t h, int64_t w) {
  Tape<S> tape;
  StoreLeaves<S> bp(tape, bank.store(), false);
  int in = tape.leaf(tokens);
  std::string prefix =
      "prompter/uep/" + modality + "/" + std::to_string(layer) + "/";
  return tape.val(uep_delta_node(tape, bp, prefix, in, h, w));
}

template <typename S>
Tensor<S> ip_forward(const PrompterBank<S>& bank, int64_t layer,
                     bool thermal_prompted, const Tensor<S>& prompted,
                     const Tensor<S>& prompting, int64_t h, int64_t w) {
  Tape<S> tape;
  StoreLeaves<S> bp(tape, bank.store(), false);
  int a = tape.leaf(prompted);
  int b = tape.leaf(prompting);
  return tape.val(
      ip_node(tape, bp, bank.ip_prefix(layer, thermal_prompted), a, b, h, w));
}

template <typename S>
Tensor<S> mfp_forward(const PrompterBank<S>& bank, const Tensor<S>& tokens_v,
                      const Tensor<S>& tokens_t, int64_t h, int64_t w,
                      MfpTrace<S>* trace = nullptr) {
  Tape<S> tape;
  StoreLeaves<S> bp(tape, bank.store(), false);
  int a = tape.leaf(tokens_v);
  int b = tape.leaf(tokens_t);
  return tape.val(mfp_node(tape, bp, a, b, h, w, trace));
}

template <typename S>
Tensor<S> fep_forward(const PrompterBank<S>& bank, int64_t stage2_index,
                      const Tensor<S>& prompt_in, const Tensor<S>& feat,
                      int64_t h, int64_t w) {
  Tape<S> tape;
  StoreLeaves<S> bp(tape, bank.store(), false);
  int a = tape.leaf(prompt_in);
  int b = tape.leaf(feat);
  std::string prefix = "prompter/fep/" + std::to_string(stage2_index) + "/";
  return tape.val(fep_node(tape, bp, prefix, a, b, h, w));
}

}  // namespace m3pt
