#include "doctest.h"

#include "core/tape.hpp"
#include "test_util.hpp"

using namespace m3pt;
using namespace m3pt::testutil;

namespace {

// Reduce any output to a scalar via a fixed random projection so every
// element's gradient is exercised.
int project(Tape<double>& t, int node, uint64_t salt) {
  Rng rng(salt);
  Tensor<double> r(t.val(node).shape);
  for (int64_t k = 0; k < r.numel(); ++k) r[k] = rng.normal();
  return op_sum(t, op_mul(t, node, t.leaf(r)));
}

void check_op(const std::function<int(Tape<double>&, std::vector<int>&)>& build,
              std::vector<Tensor<double>> inputs, double tol = 1e-5) {
  auto fd = fd_check_inputs<double>(inputs, build);
  CHECK(fd.checked > 0);
  CHECK(fd.max_rel_err < tol);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(42);
  auto a = random_tensor<double>(rng, {3, 4});
  auto b = random_tensor<double>(rng, {3, 4});
  for (int64_t k = 0; k < b.numel(); ++k) b[k] += b[k] > 0 ? 1.5 : -1.5;  // keep |b| away from 0

  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_add(t, l[0], l[1]), 1);
  }, {a, b});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_sub(t, l[0], l[1]), 2);
  }, {a, b});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_mul(t, l[0], l[1]), 3);
  }, {a, b});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_div(t, l[0], l[1]), 4);
  }, {a, b});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_sigmoid(t, l[0]), 5);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_gelu(t, l[0]), 6);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_softplus(t, l[0]), 7);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_scale(t, l[0], 2.5), 8);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_abs(t, l[0]), 9);
  }, {a});
  // even power keeps pow differentiable at negative inputs
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_pow_const(t, l[0], 2.0), 10);
  }, {a});
}

TEST_CASE("min/max ops match finite differences away from ties") {
  Rng rng(43);
  auto a = random_tensor<double>(rng, {3, 3});
  auto b = random_tensor<double>(rng, {3, 3});
  for (int64_t k = 0; k < a.numel(); ++k)
    if (std::abs(a[k] - b[k]) < 0.1) b[k] += 0.5;
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_maximum(t, l[0], l[1]), 11);
  }, {a, b});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_minimum(t, l[0], l[1]), 12);
  }, {a, b});
}

TEST_CASE("matrix and sequence ops match finite differences") {
  Rng rng(44);
  auto a = random_tensor<double>(rng, {3, 4});
  auto b = random_tensor<double>(rng, {4, 2});
  auto w = random_tensor<double>(rng, {5, 4});
  auto bias = random_tensor<double>(rng, {5});
  auto g = random_tensor<double>(rng, {4});
  auto beta = random_tensor<double>(rng, {4});

  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_matmul(t, l[0], l[1]), 20);
  }, {a, b});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_linear(t, l[0], l[1], l[2]), 21);
  }, {a, w, bias});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_layernorm(t, l[0], l[1], l[2], 1e-6), 22);
  }, {a, g, beta});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_softmax_rows(t, l[0]), 23);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_transpose(t, l[0]), 24);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_slice_rows(t, l[0], 1, 3), 25);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_concat_rows(t, {l[0], l[1]}), 26);
  }, {a, a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_slice_cols(t, l[0], 1, 3), 27);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_concat_cols(t, {l[0], l[1]}), 28);
  }, {a, a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_gather(t, l[0], {0, 5, 11, 3}), 29);
  }, {a});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return op_mean(t, l[0]);
  }, {a});
}

TEST_CASE("grid ops match finite differences") {
  Rng rng(45);
  auto x = random_tensor<double>(rng, {3, 4, 5});      // [C,H,W]
  auto tokens = random_tensor<double>(rng, {20, 3});   // 4x5 grid
  auto w11 = random_tensor<double>(rng, {2, 3});
  auto b11 = random_tensor<double>(rng, {2});
  auto wdw = random_tensor<double>(rng, {3, 3, 3});
  auto bdw = random_tensor<double>(rng, {3});
  auto wdense = random_tensor<double>(rng, {2, 3, 3, 3});
  auto bdense = random_tensor<double>(rng, {2});
  auto wmap = random_tensor<double>(rng, {1, 4, 5});

  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_tokens_to_grid(t, l[0], 4, 5), 30);
  }, {tokens});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_grid_to_tokens(t, l[0]), 31);
  }, {x});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_conv1x1(t, l[0], l[1], l[2]), 32);
  }, {x, w11, b11});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_conv_depthwise(t, l[0], l[1], l[2]), 33);
  }, {x, wdw, bdw});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_conv_dense(t, l[0], l[1], l[2], 2), 34);
  }, {x, wdense, bdense});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_mean_channels(t, l[0]), 35);
  }, {x});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_softmax_channels(t, l[0]), 36);
  }, {x});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_spatial_softmax(t, l[0]), 37);
  }, {x});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_concat_channels(t, {l[0], l[0]}), 38);
  }, {x});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_slice_channels(t, l[0], 1, 3), 39);
  }, {x});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    return project(t, op_mul_broadcast_channel(t, l[0], l[1]), 40);
  }, {x, wmap});
}

TEST_CASE("fan-out accumulates gradients") {
  Rng rng(46);
  auto a = random_tensor<double>(rng, {2, 2});
  check_op([](Tape<double>& t, std::vector<int>& l) {
    int sq = op_mul(t, l[0], l[0]);
    int both = op_add(t, sq, l[0]);  // a^2 + a, a used three times
    return op_sum(t, both);
  }, {a});
}

TEST_CASE("backward requires scalar root") {
  Tape<double> t;
  int leaf = t.leaf(Tensor<double>({2, 2}), true);
  int y = op_add(t, leaf, leaf);
  CHECK_THROWS_AS(t.backward(y), Error);
}
