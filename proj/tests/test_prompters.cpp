#include "doctest.h"

#include "core/prompters.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace m3pt;
using namespace m3pt::testutil;

namespace {

// Fills every bank tensor (including the zero-initialized up-projections and
// prompt tables) with small random values so all paths carry signal.
template <typename S>
void randomize_bank(PrompterBank<S>& bank, uint64_t seed, double scale = 0.5) {
  Rng root(seed);
  for (size_t i = 0; i < bank.store().count(); ++i) {
    Rng r = root.fork(i + 1);
    Tensor<S>& t = bank.store().tensor(i);
    for (int64_t k = 0; k < t.numel(); ++k)
      t[k] = static_cast<S>(r.normal(0.0, scale));
  }
}

// Modality relabeling for the MFP symmetry invariant: swap the private down
// projections, mirror the five weight_fc input blocks and swap its two output
// rows. Under this relabeling MFP is exactly equivariant to swapping inputs.
template <typename S>
void swap_mfp_modalities(PrompterBank<S>& bank) {
  auto& s = bank.store();
  std::swap(s.get("prompter/mfp/downv_w").data, s.get("prompter/mfp/downt_w").data);
  std::swap(s.get("prompter/mfp/downv_b").data, s.get("prompter/mfp/downt_b").data);
  Tensor<S>& fc = s.get("prompter/mfp/fc_w");
  int64_t m = bank.cfg().mfp_low_dim;
  Tensor<S> out(fc.shape);
  // block order (V, S, A, S, T) reverses to (T, S, A, S, V); rows swap
  for (int64_t row = 0; row < 2; ++row)
    for (int64_t blk = 0; blk < 5; ++blk)
      for (int64_t c = 0; c < m; ++c)
        out.at(1 - row, (4 - blk) * m + c) = fc.at(row, blk * m + c);
  fc = out;
  Tensor<S>& fb = s.get("prompter/mfp/fc_b");
  std::swap(fb[0], fb[1]);
}

}  // namespace

TEST_CASE("uep: zero-init bank gives an exactly zero prompt delta") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 7);
  Rng rng(1);
  auto tokens = random_tensor<double>(rng, {16, c.foundation.embed_dim});
  Tensor<double> delta = uep_forward(bank, "v", 2, tokens, 4, 4);
  CHECK(delta.shape == tokens.shape);
  for (int64_t k = 0; k < delta.numel(); ++k) CHECK(delta[k] == 0.0);
}

TEST_CASE("uep: shape preserved on a 320-token split and errors on bad grids") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 7);
  randomize_bank(bank, 2);
  Rng rng(3);
  auto tokens = random_tensor<double>(rng, {320, c.foundation.embed_dim});
  Tensor<double> delta = uep_forward(bank, "v", 2, tokens, 16, 20);
  CHECK(delta.shape == std::vector<int64_t>({320, c.foundation.embed_dim}));
  CHECK_THROWS_AS(uep_forward(bank, "v", 2, tokens, 7, 7), Error);
}

TEST_CASE("uep: d=1 2x2 all-ones instance matches the hand evaluation") {
  // With all conv weights 1, zero biases, D=2, d=1 and a clamped dilation the
  // low feature is the channel sum s(i,j); every 3x3 window covers the whole
  // 2x2 grid, so std/dilated/depthwise branches give s, S, S (S = total sum)
  // and the delta per output channel is gelu(s + 2S).
  TrackerConfig c = toy_config();
  c.foundation.embed_dim = 2;  // grid D for this instance
  c.foundation.num_heads = 1;
  c.uep_low_dim = 1;
  c.uep_layers = {1};
  PrompterBank<double> bank(c, 7);
  std::string pre = "prompter/uep/v/1/";
  for (const char* n : {"down_w", "std_w", "dw_w", "dl_w", "merge_w", "up_w"})
    bank.store().get(pre + n).fill(1.0);

  Tensor<double> tokens({4, 2});
  double vals[4][2] = {{0.1, 0.2}, {0.3, -0.1}, {-0.2, 0.4}, {0.5, 0.05}};
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 2; ++j) tokens.at(i, j) = vals[i][j];

  double s[4];
  double total = 0;
  for (int i = 0; i < 4; ++i) {
    s[i] = vals[i][0] + vals[i][1];
    total += s[i];
  }
  Tensor<double> delta = uep_forward(bank, "v", 1, tokens, 2, 2);
  for (int64_t i = 0; i < 4; ++i) {
    double expected = oracle::o_gelu(s[i] + 2.0 * total);
    CHECK(delta.at(i, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(delta.at(i, 1) == doctest::Approx(expected).epsilon(1e-12));
  }
  // and the independent transcription agrees
  Tensor<double> want = oracle::uep(bank.store(), pre, tokens, 2, 2);
  CHECK(oracle::max_abs_diff(delta, want) < 1e-14);
}

TEST_CASE("ip: zero-init residual identity and constant pooled prompt") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 9);
  Rng rng(5);
  auto prompted = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  auto prompting = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  Tensor<double> out = ip_forward(bank, 1, true, prompted, prompting, 2, 2);
  for (int64_t k = 0; k < out.numel(); ++k) CHECK(out[k] == prompted[k]);

  // force the prompting-side low features to the constant 0.7: zero weights,
  // bias 0.7; the pooled channel is then exactly 0.7 everywhere, observed
  // through a merge conv that reads only channel d+1
  randomize_bank(bank, 11);
  std::string pre = bank.ip_prefix(1, true);
  bank.store().get(pre + "pdown_w").fill(0.0);
  bank.store().get(pre + "pdown_b").fill(0.7);
  Tensor<double>& merge_w = bank.store().get(pre + "merge_w");
  merge_w.fill(0.0);
  int64_t d = c.ip_low_dim;
  for (int64_t o = 0; o < d; ++o) merge_w.at(o, d) = 1.0;  // read pooled channel
  bank.store().get(pre + "merge_b").fill(0.0);
  bank.store().get(pre + "up_w").fill(0.0);
  Tensor<double>& up_w = bank.store().get(pre + "up_w");
  up_w.at(0, 0) = 1.0;  // output channel 0 = merged channel 0 = pooled value
  bank.store().get(pre + "up_b").fill(0.0);
  Tensor<double> out2 = ip_forward(bank, 1, true, prompted, prompting, 2, 2);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(out2.at(i, 0) - prompted.at(i, 0) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("ip: random instances match the straight-line transcription") {
  TrackerConfig c = toy_config();
  c.ip_low_dim = 2;
  PrompterBank<double> bank(c, 13);
  Rng rng(17);
  for (int iter = 0; iter < 25; ++iter) {
    randomize_bank(bank, 100 + static_cast<uint64_t>(iter));
    auto prompted = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    auto prompting = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    Tensor<double> got = ip_forward(bank, 1, true, prompted, prompting, 2, 2);
    Tensor<double> want =
        oracle::ip(bank.store(), bank.ip_prefix(1, true), prompted, prompting, 2, 2);
    CHECK(oracle::max_rel_diff(got, want) < 1e-10);
  }
}

TEST_CASE("mfp: equal low-dim features give sigma 0.5 and fused F*F + F") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 19);
  randomize_bank(bank, 21);
  // identical inputs + identical private projections force F_V,L == F_T,L
  auto& s = bank.store();
  s.get("prompter/mfp/downt_w").data = s.get("prompter/mfp/downv_w").data;
  s.get("prompter/mfp/downt_b").data = s.get("prompter/mfp/downv_b").data;
  Rng rng(23);
  auto tokens = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  MfpTrace<double> trace;
  mfp_forward(bank, tokens, tokens, 2, 2, &trace);
  for (int64_t k = 0; k < trace.sig_visible.numel(); ++k) {
    CHECK(trace.sig_visible[k] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(trace.sig_thermal[k] == doctest::Approx(0.5).epsilon(1e-12));
  }
  // fused_low = F*F + F regardless of the weights since w_V + w_T = 1
  oracle::Grid low = oracle::conv1x1(oracle::to_grid(tokens, 2, 2),
                                     s.get("prompter/mfp/downv_w"),
                                     s.get("prompter/mfp/downv_b"));
  for (int64_t k = 0; k < low.numel(); ++k)
    CHECK(trace.fused_low[k] ==
          doctest::Approx(low[k] * low[k] + low[k]).epsilon(1e-10));
}

TEST_CASE("mfp: softmax weights sum to one and sigma features stay in (0,1)") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 25);
  Rng rng(27);
  for (int iter = 0; iter < 50; ++iter) {
    randomize_bank(bank, 300 + static_cast<uint64_t>(iter), 0.5);
    auto tv = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    auto tt = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    MfpTrace<double> trace;
    mfp_forward(bank, tv, tt, 2, 2, &trace);
    for (int64_t k = 0; k < trace.w_visible.numel(); ++k) {
      CHECK(trace.w_visible[k] + trace.w_thermal[k] ==
            doctest::Approx(1.0).epsilon(1e-6));
      CHECK(trace.w_visible[k] >= 0.0);
      CHECK(trace.w_visible[k] <= 1.0);
    }
    for (int64_t k = 0; k < trace.sig_visible.numel(); ++k) {
      CHECK(trace.sig_visible[k] > 0.0);
      CHECK(trace.sig_visible[k] < 1.0);
      CHECK(trace.sig_thermal[k] > 0.0);
      CHECK(trace.sig_thermal[k] < 1.0);
    }
  }
}

TEST_CASE("mfp: modality relabeling swaps the weights and preserves the fusion") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 29);
  Rng rng(31);
  for (int iter = 0; iter < 20; ++iter) {
    randomize_bank(bank, 400 + static_cast<uint64_t>(iter));
    auto tv = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    auto tt = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    MfpTrace<double> trace;
    Tensor<double> fused = mfp_forward(bank, tv, tt, 2, 2, &trace);

    PrompterBank<double> swapped = bank;
    swap_mfp_modalities(swapped);
    MfpTrace<double> trace2;
    Tensor<double> fused2 = mfp_forward(swapped, tt, tv, 2, 2, &trace2);

    CHECK(oracle::max_abs_diff(fused, fused2) < 1e-12);
    for (int64_t k = 0; k < trace.w_visible.numel(); ++k) {
      CHECK(trace.w_visible[k] == doctest::Approx(trace2.w_thermal[k]).epsilon(1e-12));
      CHECK(trace.w_thermal[k] == doctest::Approx(trace2.w_visible[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("mfp: random instances match the step-by-step Eq. 12-18 oracle") {
  TrackerConfig c = toy_config();
  c.mfp_low_dim = 2;
  PrompterBank<double> bank(c, 33);
  Rng rng(35);
  for (int iter = 0; iter < 25; ++iter) {
    randomize_bank(bank, 500 + static_cast<uint64_t>(iter));
    auto tv = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    auto tt = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    Tensor<double> got = mfp_forward(bank, tv, tt, 2, 2);
    oracle::MfpOracleOut want = oracle::mfp(bank.store(), tv, tt, 2, 2);
    CHECK(oracle::max_rel_diff(got, want.fused) < 1e-10);
  }
}

TEST_CASE("fep: zero-init delta is zero and one-location fovea is the identity") {
  TrackerConfig c = toy_config();
  PrompterBank<double> bank(c, 37);
  Rng rng(39);
  auto prompt = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  auto feat = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  Tensor<double> delta = fep_forward(bank, 1, prompt, feat, 2, 2);
  for (int64_t k = 0; k < delta.numel(); ++k) CHECK(delta[k] == 0.0);

  // single spatial location: the softmax weight is exactly 1 and fovea(z) = z
  randomize_bank(bank, 41);
  auto p1 = random_tensor<double>(rng, {1, c.foundation.embed_dim});
  auto f1 = random_tensor<double>(rng, {1, c.foundation.embed_dim});
  std::string pre = "prompter/fep/1/";
  Tensor<double> got = fep_forward(bank, 1, p1, f1, 1, 1);
  oracle::Grid zp = oracle::conv1x1(oracle::to_grid(p1, 1, 1),
                                    bank.store().get(pre + "pdown_w"),
                                    bank.store().get(pre + "pdown_b"));
  oracle::Grid zf = oracle::conv1x1(oracle::to_grid(f1, 1, 1),
                                    bank.store().get(pre + "fdown_w"),
                                    bank.store().get(pre + "fdown_b"));
  for (int64_t k = 0; k < zp.numel(); ++k) zp[k] += zf[k];
  oracle::Toks want = oracle::to_tokens(oracle::conv1x1(
      zp, bank.store().get(pre + "up_w"), bank.store().get(pre + "up_b")));
  CHECK(oracle::max_rel_diff(got, want) < 1e-10);
}

TEST_CASE("fep: random instances match the structure oracle") {
  TrackerConfig c = toy_config();
  c.ip_low_dim = 2;  // fep shares the ip low dim
  PrompterBank<double> bank(c, 43);
  Rng rng(45);
  for (int iter = 0; iter < 25; ++iter) {
    randomize_bank(bank, 600 + static_cast<uint64_t>(iter));
    auto prompt = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    auto feat = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    Tensor<double> got = fep_forward(bank, 1, prompt, feat, 2, 2);
    Tensor<double> want =
        oracle::fep(bank.store(), "prompter/fep/1/", prompt, feat, 2, 2);
    CHECK(oracle::max_rel_diff(got, want) < 1e-10);
  }
}

TEST_CASE("uep: random instances match the Eq. 4-5 oracle, clamped dilation") {
  TrackerConfig c = toy_config();
  c.uep_low_dim = 1;
  PrompterBank<double> bank(c, 47);
  Rng rng(49);
  for (int iter = 0; iter < 25; ++iter) {
    randomize_bank(bank, 700 + static_cast<uint64_t>(iter));
    auto t22 = random_tensor<double>(rng, {4, c.foundation.embed_dim});
    Tensor<double> got = uep_forward(bank, "v", 2, t22, 2, 2);
    Tensor<double> want = oracle::uep(bank.store(), "prompter/uep/v/2/", t22, 2, 2);
    CHECK(oracle::max_rel_diff(got, want) < 1e-10);
    // 4x4 grid keeps the nominal dilation of 2
    auto t44 = random_tensor<double>(rng, {16, c.foundation.embed_dim});
    Tensor<double> got2 = uep_forward(bank, "v", 2, t44, 4, 4);
    Tensor<double> want2 = oracle::uep(bank.store(), "prompter/uep/v/2/", t44, 4, 4);
    CHECK(oracle::max_rel_diff(got2, want2) < 1e-10);
  }
}

TEST_CASE("bank init: deterministic, zero up-projections, zero prompt tables") {
  TrackerConfig c = toy_config();
  PrompterBank<float> a(c, 0), b(c, 0), other(c, 1);
  CHECK(param_checksum(a.store()) == param_checksum(b.store()));
  CHECK(param_checksum(a.store()) != param_checksum(other.store()));
  bool saw_nonzero_random = false;
  for (size_t i = 0; i < a.store().count(); ++i) {
    const std::string& name = a.store().name(i);
    const Tensor<float>& t = a.store().tensor(i);
    bool must_be_zero = name.find("up_w") != std::string::npos ||
                        name.find("_b") != std::string::npos ||
                        name.rfind("prompter/tokens/", 0) == 0;
    for (int64_t k = 0; k < t.numel(); ++k) {
      if (must_be_zero)
        CHECK(t[k] == 0.0f);
      else if (t[k] != 0.0f)
        saw_nonzero_random = true;
    }
  }
  CHECK(saw_nonzero_random);
}

TEST_CASE("per-prompter gradients match central finite differences") {
  TrackerConfig c = toy_config();
  c.uep_low_dim = 2;
  c.ip_low_dim = 2;
  c.mfp_low_dim = 2;
  PrompterBank<double> bank(c, 51);
  randomize_bank(bank, 53);
  Rng rng(55);
  Tensor<double> tok_c = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  Tensor<double> oth_c = random_tensor<double>(rng, {4, c.foundation.embed_dim});
  Tensor<double> proj_c = random_tensor<double>(rng, {4, c.foundation.embed_dim});

  struct Case {
    const char* name;
    std::function<int(Tape<double>&, StoreLeaves<double>&)> run;
    const char* prefix;
  };
  std::vector<Case> cases = {
      {"uep",
       [&](Tape<double>& t, StoreLeaves<double>& bp) {
         return uep_delta_node(t, bp, "prompter/uep/v/2/", t.leaf(tok_c), 2, 2);
       },
       "prompter/uep/v/2/"},
      {"ip",
       [&](Tape<double>& t, StoreLeaves<double>& bp) {
         return ip_node(t, bp, "prompter/ip/1/", t.leaf(tok_c), t.leaf(oth_c), 2, 2);
       },
       "prompter/ip/1/"},
      {"mfp",
       [&](Tape<double>& t, StoreLeaves<double>& bp) {
         return mfp_node(t, bp, t.leaf(tok_c), t.leaf(oth_c), 2, 2);
       },
       "prompter/mfp/"},
      {"fep",
       [&](Tape<double>& t, StoreLeaves<double>& bp) {
         return fep_node(t, bp, "prompter/fep/1/", t.leaf(tok_c), t.leaf(oth_c), 2, 2);
       },
       "prompter/fep/1/"},
  };

  for (const Case& cs : cases) {
    CAPTURE(cs.name);
    auto loss_value = [&]() {
      Tape<double> t;
      StoreLeaves<double> bp(t, bank.store(), false);
      int out = cs.run(t, bp);
      double acc = 0;
      const auto& o = t.val(out);
      for (int64_t k = 0; k < o.numel(); ++k) acc += o[k] * proj_c[k];
      return acc;
    };
    Tape<double> t;
    StoreLeaves<double> bp(t, bank.store(), true);
    int out = cs.run(t, bp);
    int loss = op_sum(t, op_mul(t, out, t.leaf(proj_c)));
    t.backward(loss);
    double max_err = 0.0;
    int64_t checked = 0;
    for (size_t i = 0; i < bank.store().count(); ++i) {
      const std::string& name = bank.store().name(i);
      if (name.rfind(cs.prefix, 0) != 0) continue;
      int id = bp.by_index(i);
      const Tensor<double>& analytic = t.grad(id);
      Tensor<double>& param = bank.store().tensor(i);
      for (int64_t k = 0; k < param.numel(); ++k) {
        double keep = param[k];
        param[k] = keep + 1e-6;
        double up = loss_value();
        param[k] = keep - 1e-6;
        double down = loss_value();
        param[k] = keep;
        double fd = (up - down) / 2e-6;
        max_err = std::max(max_err, rel_err(analytic[k], fd));
        ++checked;
      }
    }
    CHECK(checked > 0);
    CHECK(max_err < 1e-5);
  }
}
