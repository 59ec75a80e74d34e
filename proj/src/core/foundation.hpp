#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "params.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace m3pt {

struct FoundationConfig {
  int64_t patch_size = 16;
  int64_t embed_dim = 768;   // D
  int64_t num_blocks = 12;   // L
  int64_t num_heads = 12;
  double mlp_ratio = 4.0;
  int64_t template_h = 128, template_w = 128;
  int64_t search_h = 256, search_w = 256;

  int64_t template_grid_h() const { return template_h / patch_size; }
  int64_t template_grid_w() const { return template_w / patch_size; }
  int64_t search_grid_h() const { return search_h / patch_size; }
  int64_t search_grid_w() const { return search_w / patch_size; }
  int64_t num_template_tokens() const { return template_grid_h() * template_grid_w(); }
  int64_t num_search_tokens() const { return search_grid_h() * search_grid_w(); }
  int64_t mlp_hidden() const {
    return static_cast<int64_t>(mlp_ratio * static_cast<double>(embed_dim) + 0.5);
  }
  int64_t head_hidden() const { return std::max<int64_t>(4, embed_dim / 4); }

  void validate() const {
    if (patch_size <= 0 || embed_dim <= 0 || num_blocks <= 0 || num_heads <= 0)
      fail(ErrorKind::Config, "foundation: dims must be positive");
    if (template_h % patch_size != 0)
      fail(ErrorKind::Dimension, "template height " + std::to_string(template_h) +
                                     " not divisible by patch size " +
                                     std::to_string(patch_size));
    if (template_w % patch_size != 0)
      fail(ErrorKind::Dimension, "template width " + std::to_string(template_w) +
                                     " not divisible by patch size " +
                                     std::to_string(patch_size));
    if (search_h % patch_size != 0)
      fail(ErrorKind::Dimension, "search height " + std::to_string(search_h) +
                                     " not divisible by patch size " +
                                     std::to_string(patch_size));
    if (search_w % patch_size != 0)
      fail(ErrorKind::Dimension, "search width " + std::to_string(search_w) +
                                     " not divisible by patch size " +
                                     std::to_string(patch_size));
    if (embed_dim % num_heads != 0)
      fail(ErrorKind::Config, "embed_dim must be divisible by num_heads");
    if (mlp_ratio <= 0) fail(ErrorKind::Config, "mlp_ratio must be positive");
  }
};

// Shape-only walk over every foundation tensor, in canonical order.
inline void for_each_foundation_param(const FoundationConfig& c, const ParamSpecFn& fn) {
  int64_t d = c.embed_dim, p = c.patch_size;
  fn("foundation/embed/w", {d, 3 * p * p});
  fn("foundation/embed/b", {d});
  fn("foundation/pos/template", {c.num_template_tokens(), d});
  fn("foundation/pos/search", {c.num_search_tokens(), d});
  int64_t hidden = c.mlp_hidden();
  for (int64_t l = 1; l <= c.num_blocks; ++l) {
    std::string b = "foundation/block" + std::to_string(l) + "/";
    fn(b + "ln1_g", {d});
    fn(b + "ln1_b", {d});
    fn(b + "qkv_w", {3 * d, d});
    fn(b + "qkv_b", {3 * d});
    fn(b + "proj_w", {d, d});
    fn(b + "proj_b", {d});
    fn(b + "ln2_g", {d});
    fn(b + "ln2_b", {d});
    fn(b + "fc1_w", {hidden, d});
    fn(b + "fc1_b", {hidden});
    fn(b + "fc2_w", {d, hidden});
    fn(b + "fc2_b", {d});
  }
  fn("foundation/norm/g", {d});
  fn("foundation/norm/b", {d});
  int64_t hd = c.head_hidden();
  for (const char* branch : {"cls", "offset", "size"}) {
    std::string b = std::string("foundation/head/") + branch + "/";
    int64_t out = std::string(branch) == "cls" ? 1 : 2;
    fn(b + "w1", {hd, d});
    fn(b + "b1", {hd});
    fn(b + "w2", {out, hd});
    fn(b + "b2", {out});
  }
}

inline int64_t foundation_param_count(const FoundationConfig& c) {
  int64_t n = 0;
  for_each_foundation_param(c, [&n](const std::string&, const std::vector<int64_t>& s) {
    n += Tensor<float>::numel_of(s);
  });
  return n;
}

// The frozen one-stream foundation: patch embedding, L pre-norm encoder
// blocks, and the center/offset/size head. Parameters never receive gradient
// updates; only the weight archive mutates them.
template <typename S>
class Foundation {
 public:
  explicit Foundation(const FoundationConfig& cfg, uint64_t seed = 1)
      : cfg_(cfg) {
    cfg_.validate();
    Rng root(seed);
    for_each_foundation_param(cfg_, [this](const std::string& name,
                                           const std::vector<int64_t>& shape) {
      store_.add(name, shape);
    });
    auto ends_with = [](const std::string& s, const std::string& suf) {
      return s.size() >= suf.size() &&
             s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    // A stand-in for pre-trained weights. Weight matrices use fan-in scaling
    // and biases carry small noise; norm gains sit near 1. Flat tiny weights
    // or exactly-zero biases would cap the head logits and park the ReLUs on
    // their kink, stalling gradient flow into the prompter bank.
    for (size_t i = 0; i < store_.count(); ++i) {
      const std::string& name = store_.name(i);
      Tensor<S>& t = store_.tensor(i);
      Rng r = root.fork(i + 1);
      double base = 0.0;
      double std_dev = 0.02;
      if (ends_with(name, "_g") || ends_with(name, "/g")) {
        base = 1.0;
      } else if (t.rank() >= 2) {
        int64_t fan_in = t.numel() / t.dim(0);
        std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
      }
      for (int64_t k = 0; k < t.numel(); ++k)
        t[k] = static_cast<S>(static_cast<float>(base + r.normal(0.0, std_dev)));
    }
  }

  const FoundationConfig& cfg() const { return cfg_; }
  ParamStore<S>& store() { return store_; }
  const ParamStore<S>& store() const { return store_; }

 private:
  FoundationConfig cfg_;
  ParamStore<S> store_;
};

// ---------------------------------------------------------------------------
// Tape-level building blocks
// ---------------------------------------------------------------------------

// Leaf ids for an entire store, created lazily and cached per graph.
template <typename S>
class StoreLeaves {
 public:
  StoreLeaves(Tape<S>& tape, const ParamStore<S>& store, bool needs_grad)
      : tape_(tape), store_(store), needs_grad_(needs_grad),
        ids_(store.count(), -1) {}

  int operator()(const std::string& name) { return by_index(store_.index_of(name)); }

  int by_index(size_t i) {
    if (ids_[i] < 0) ids_[i] = tape_.borrow_leaf(&store_.tensor(i), needs_grad_);
    return ids_[i];
  }

  const std::vector<int>& ids() const { return ids_; }

 private:
  Tape<S>& tape_;
  const ParamStore<S>& store_;
  bool needs_grad_;
  std::vector<int> ids_;
};

enum class PatchRole { Template, Search };

// Image layout: [H, W, 3] floats. Patch vector order is (row, col, channel)
// within each patch, patches in row-major grid order.
template <typename S>
Tensor<S> extract_patches(const Tensor<float>& image, int64_t patch) {
  if (image.rank() != 3 || image.dim(2) != 3)
    fail(ErrorKind::Dimension, "image must be [H, W, 3]");
  int64_t h = image.dim(0), w = image.dim(1);
  if (h % patch != 0)
    fail(ErrorKind::Dimension,
         "image height " + std::to_string(h) + " not divisible by patch size " +
             std::to_string(patch));
  if (w % patch != 0)
    fail(ErrorKind::Dimension,
         "image width " + std::to_string(w) + " not divisible by patch size " +
             std::to_string(patch));
  int64_t gh = h / patch, gw = w / patch;
  Tensor<S> out({gh * gw, 3 * patch * patch});
  for (int64_t gi = 0; gi < gh; ++gi)
    for (int64_t gj = 0; gj < gw; ++gj) {
      int64_t tok = gi * gw + gj;
      int64_t k = 0;
      for (int64_t i = 0; i < patch; ++i)
        for (int64_t j = 0; j < patch; ++j)
          for (int64_t c = 0; c < 3; ++c)
            out.at(tok, k++) =
                static_cast<S>(image.at(gi * patch + i, gj * patch + j, c));
    }
  return out;
}

// Patch embedding with role-specific learned positional table.
template <typename S>
int patch_embed_node(Tape<S>& tape, StoreLeaves<S>& fp, const FoundationConfig& cfg,
                     const Tensor<float>& image, PatchRole role) {
  int64_t want_h = role == PatchRole::Template ? cfg.template_h : cfg.search_h;
  int64_t want_w = role == PatchRole::Template ? cfg.template_w : cfg.search_w;
  if (image.dim(0) != want_h || image.dim(1) != want_w)
    fail(ErrorKind::Dimension,
         std::string(role == PatchRole::Template ? "template" : "search") +
             " image is " + std::to_string(image.dim(0)) + "x" +
             std::to_string(image.dim(1)) + ", config wants " +
             std::to_string(want_h) + "x" + std::to_string(want_w));
  int patches = tape.leaf(extract_patches<S>(image, cfg.patch_size));
  int emb = op_linear(tape, patches, fp("foundation/embed/w"), fp("foundation/embed/b"));
  int pos = fp(role == PatchRole::Template ? "foundation/pos/template"
                                           : "foundation/pos/search");
  return op_add(tape, emb, pos);
}

// One pre-norm encoder block on a full token sequence [T, D].
template <typename S>
int encoder_block_node(Tape<S>& tape, StoreLeaves<S>& fp, const FoundationConfig& cfg,
                       int block_index, int x) {
  if (block_index < 1 || block_index > cfg.num_blocks)
    fail(ErrorKind::Config, "block index " + std::to_string(block_index) +
                                " outside 1.." + std::to_string(cfg.num_blocks));
  const auto& X = tape.val(x);
  if (X.rank() != 2 || X.dim(1) != cfg.embed_dim)
    fail(ErrorKind::Shape, "encoder input must be [N, " +
                               std::to_string(cfg.embed_dim) + "], got " +
                               shape_str(X.shape));
  std::string b = "foundation/block" + std::to_string(block_index) + "/";
  int64_t d = cfg.embed_dim;
  int64_t heads = cfg.num_heads;
  int64_t dh = d / heads;
  S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

  int ln1 = op_layernorm(tape, x, fp(b + "ln1_g"), fp(b + "ln1_b"), S(1e-6));
  int qkv = op_linear(tape, ln1, fp(b + "qkv_w"), fp(b + "qkv_b"));
  int q = op_slice_cols(tape, qkv, 0, d);
  int k = op_slice_cols(tape, qkv, d, 2 * d);
  int v = op_slice_cols(tape, qkv, 2 * d, 3 * d);
  std::vector<int> head_outs;
  for (int64_t h = 0; h < heads; ++h) {
    int qh = op_slice_cols(tape, q, h * dh, (h + 1) * dh);
    int kh = op_slice_cols(tape, k, h * dh, (h + 1) * dh);
    int vh = op_slice_cols(tape, v, h * dh, (h + 1) * dh);
    int att = op_scale(tape, op_matmul(tape, qh, op_transpose(tape, kh)), scale);
    int pm = op_softmax_rows(tape, att);
    head_outs.push_back(op_matmul(tape, pm, vh));
  }
  int merged = heads == 1 ? head_outs[0] : op_concat_cols(tape, head_outs);
  int proj = op_linear(tape, merged, fp(b + "proj_w"), fp(b + "proj_b"));
  int h1 = op_add(tape, x, proj);

  int ln2 = op_layernorm(tape, h1, fp(b + "ln2_g"), fp(b + "ln2_b"), S(1e-6));
  int f1 = op_gelu(tape, op_linear(tape, ln2, fp(b + "fc1_w"), fp(b + "fc1_b")));
  int f2 = op_linear(tape, f1, fp(b + "fc2_w"), fp(b + "fc2_b"));
  return op_add(tape, h1, f2);
}

// Head branches on search tokens [N_X, D] (template/prompt tokens already
// stripped). Returns logits for score and pre-activation maps for offsets and
// sizes; decoding happens in head.hpp.
template <typename S>
struct HeadNodes {
  int score_logits;  // [N_X, 1]
  int offset_raw;    // [N_X, 2]
  int size_raw;      // [N_X, 2]
};

template <typename S>
HeadNodes<S> head_nodes(Tape<S>& tape, StoreLeaves<S>& fp, const FoundationConfig& cfg,
                        int search_tokens) {
  const auto& X = tape.val(search_tokens);
  if (X.rank() != 2 || X.dim(0) != cfg.num_search_tokens() || X.dim(1) != cfg.embed_dim)
    fail(ErrorKind::Shape, "head expects [" + std::to_string(cfg.num_search_tokens()) +
                               ", " + std::to_string(cfg.embed_dim) + "] search tokens, got " +
                               shape_str(X.shape));
  int normed = op_layernorm(tape, search_tokens, fp("foundation/norm/g"),
                            fp("foundation/norm/b"), S(1e-6));
  auto branch = [&](const std::string& name) {
    std::string b = "foundation/head/" + name + "/";
    int h1 = op_relu(tape, op_linear(tape, normed, fp(b + "w1"), fp(b + "b1")));
    return op_linear(tape, h1, fp(b + "w2"), fp(b + "b2"));
  };
  HeadNodes<S> out;
  out.score_logits = branch("cls");
  out.offset_raw = branch("offset");
  out.size_raw = branch("size");
  return out;
}

}  // namespace m3pt
