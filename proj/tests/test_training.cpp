#include "doctest.h"

#include "core/loss.hpp"
#include "core/train.hpp"
#include "test_util.hpp"

using namespace m3pt;
using namespace m3pt::testutil;

namespace {

TrainConfig desk_train() {
  TrainConfig t;
  t.batch_size = 4;
  t.epochs = 4;
  t.samples_per_epoch = 16;  // 4 steps per epoch
  t.decay_epoch = 3;
  t.synthetic_pairs = 6;
  t.seed = 0;
  return t;
}

}  // namespace

TEST_CASE("compute_loss: worked giou example and degenerate inputs") {
  Tensor<double> score({4, 4});
  score.at(0, 0) = 1.0;
  LossWeights w;

  // boxes (0,0,2,2) vs (1,0,2,2): IoU 1/3, enclosing box 3x2 = union, so
  // GIoU = 1/3 and the giou loss term is 2/3
  BoundingBox pred{0, 0, 2, 2}, gt{1, 0, 2, 2};
  LossParts parts = compute_loss(pred, score, gt, w, 16, 64, 64);
  CHECK(parts.giou == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(parts.total == doctest::Approx(parts.cls + w.lambda_giou * parts.giou +
                                       w.lambda_l1 * parts.l1));

  // disjoint boxes inside a common enclosing box: GIoU < 0, loss > 1
  LossParts disjoint =
      compute_loss({0, 0, 2, 2}, score, {10, 0, 2, 2}, w, 16, 64, 64);
  CHECK(disjoint.giou > 1.0);

  // pred == gt with a perfect one-hot score map: giou and l1 vanish
  BoundingBox box{24, 24, 16, 16};
  Tensor<double> perfect({4, 4});
  int64_t i0, j0;
  center_cell_of(box, 16, 4, 4, i0, j0);
  perfect.at(i0, j0) = 1.0;
  LossParts zero = compute_loss(box, perfect, box, w, 16, 64, 64);
  CHECK(zero.giou == doctest::Approx(0.0));
  CHECK(zero.l1 == doctest::Approx(0.0));
  CHECK(zero.cls >= 0.0);

  CHECK_THROWS_AS(compute_loss(pred, score, {1, 1, 0, 3}, w, 16, 64, 64), Error);
}

TEST_CASE("loss components are non-negative and total is monotone in each") {
  Rng rng(5);
  Tensor<double> score({4, 4});
  for (int64_t k = 0; k < score.numel(); ++k) score[k] = rng.uniform01();
  LossWeights w;
  for (int i = 0; i < 20; ++i) {
    BoundingBox pred{rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(2, 20),
                     rng.uniform(2, 20)};
    BoundingBox gt{rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(2, 20),
                   rng.uniform(2, 20)};
    LossParts p = compute_loss(pred, score, gt, w, 16, 64, 64);
    CHECK(p.cls >= 0.0);
    CHECK(p.giou >= 0.0);
    CHECK(p.l1 >= 0.0);
    LossWeights heavier = w;
    heavier.lambda_giou += 1.0;
    LossParts q = compute_loss(pred, score, gt, heavier, 16, 64, 64);
    CHECK(q.total >= p.total - 1e-12);
  }
}

TEST_CASE("tape loss agrees with compute_loss on the gt-cell decoded box") {
  TrackerConfig c = toy_config();
  Foundation<double> f(c.foundation, 3);
  PrompterBank<double> bank(c, 5);
  auto data = generate_synthetic(7, 1, c.foundation);
  LossWeights w;

  TrackGraph<double> g(f, bank, false);
  HeadNodes<double> head = g.forward(data[0].templates, data[0].searches);
  LossNodes nodes = training_loss_node(g.tape(), head, data[0].gt, w, f.cfg());

  // rebuild the decoded-at-gt-cell box in plain arithmetic
  const FoundationConfig& fc = f.cfg();
  int64_t gh = fc.search_grid_h(), gw = fc.search_grid_w();
  int64_t i0, j0;
  center_cell_of(data[0].gt, fc.patch_size, gh, gw, i0, j0);
  int64_t tok = i0 * gw + j0;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const auto& off = g.tape().val(head.offset_raw);
  const auto& siz = g.tape().val(head.size_raw);
  double cx = (static_cast<double>(j0) + sig(off.at(tok, 0))) * fc.patch_size;
  double cy = (static_cast<double>(i0) + sig(off.at(tok, 1))) * fc.patch_size;
  double bw = sig(siz.at(tok, 0)) * static_cast<double>(gw) * fc.patch_size;
  double bh = sig(siz.at(tok, 1)) * static_cast<double>(gh) * fc.patch_size;
  BoundingBox pred{cx - bw / 2, cy - bh / 2, bw, bh};
  const auto& logits = g.tape().val(head.score_logits);
  Tensor<double> probs({gh, gw});
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) probs.at(i, j) = sig(logits.at(i * gw + j, 0));
  LossParts want = compute_loss(pred, probs, data[0].gt, w, fc.patch_size,
                                fc.search_w, fc.search_h);
  CHECK(g.tape().val(nodes.cls)[0] == doctest::Approx(want.cls).epsilon(1e-9));
  CHECK(g.tape().val(nodes.giou)[0] == doctest::Approx(want.giou).epsilon(1e-9));
  CHECK(g.tape().val(nodes.l1)[0] == doctest::Approx(want.l1).epsilon(1e-9));
  CHECK(g.tape().val(nodes.total)[0] == doctest::Approx(want.total).epsilon(1e-9));
}

TEST_CASE("lr schedule: exact step decay") {
  TrainConfig t;
  CHECK(lr_at_epoch(t, 0) == 4e-4);
  CHECK(lr_at_epoch(t, 47) == 4e-4);
  CHECK(lr_at_epoch(t, 48) == 4e-5);
  CHECK(lr_at_epoch(t, 59) == 4e-5);
  TrainConfig bad;
  bad.decay_epoch = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("training is deterministic from identical state") {
  TrackerConfig c = toy_config();
  Foundation<float> f(c.foundation, 11);
  TrainConfig t = desk_train();
  LossWeights w;
  PrompterBank<float> bank_a(c, 13);
  PrompterBank<float> bank_b(c, 13);
  TrainResult ra = train_loop<float>(f, bank_a, t, w, 2);
  TrainResult rb = train_loop<float>(f, bank_b, t, w, 2);
  CHECK(param_checksum(bank_a.store()) == param_checksum(bank_b.store()));
  REQUIRE(ra.history.size() == rb.history.size());
  for (size_t i = 0; i < ra.history.size(); ++i)
    CHECK(ra.history[i].total == rb.history[i].total);
}

TEST_CASE("freeze contract: foundation unchanged, every active family moves") {
  TrackerConfig c = toy_config(2, {1, 2});  // M=2 so FEP recurrence is active
  Foundation<float> f(c.foundation, 17);
  PrompterBank<float> bank(c, 19);
  std::vector<Tensor<float>> before;
  for (size_t i = 0; i < bank.store().count(); ++i)
    before.push_back(bank.store().tensor(i));

  TrainConfig t = desk_train();
  LossWeights w;
  TrainResult r = train_loop<float>(f, bank, t, w, 10);
  CHECK(r.foundation_checksum_before == r.foundation_checksum_after);

  std::map<std::string, bool> family_changed = {
      {"uep", false}, {"ip", false}, {"mfp", false}, {"fep", false}, {"tokens", false}};
  for (size_t i = 0; i < bank.store().count(); ++i) {
    const std::string& name = bank.store().name(i);
    const Tensor<float>& now = bank.store().tensor(i);
    bool changed = false;
    for (int64_t k = 0; k < now.numel(); ++k)
      if (now[k] != before[i][k]) changed = true;
    for (auto& kv : family_changed)
      if (name.rfind("prompter/" + kv.first + "/", 0) == 0 && changed)
        kv.second = true;
  }
  for (const auto& kv : family_changed) {
    CAPTURE(kv.first);
    CHECK(kv.second);
  }
}

TEST_CASE("synthetic data: degraded-visible frames have tiny variance") {
  TrackerConfig c = toy_config();
  auto data = generate_synthetic(0, 12, c.foundation);
  auto variance = [](const Tensor<float>& img) {
    double mean = 0;
    for (int64_t k = 0; k < img.numel(); ++k) mean += img[k];
    mean /= static_cast<double>(img.numel());
    double var = 0;
    for (int64_t k = 0; k < img.numel(); ++k)
      var += (img[k] - mean) * (img[k] - mean);
    return var / static_cast<double>(img.numel());
  };
  int degraded_seen = 0;
  for (const auto& s : data) {
    if (s.degrade == 1) {
      ++degraded_seen;
      CHECK(variance(s.searches.visible) < 0.1 * variance(s.searches.thermal));
    }
  }
  CHECK(degraded_seen == 4);  // every third sample starting at index 1
}

TEST_CASE("synthetic data: at least one pair per degrade mode, gt valid") {
  TrackerConfig c = toy_config();
  auto data = generate_synthetic(3, 9, c.foundation);
  int modes[3] = {0, 0, 0};
  for (const auto& s : data) {
    modes[s.degrade]++;
    CHECK(s.gt.w > 0);
    CHECK(s.gt.h > 0);
  }
  CHECK(modes[0] == 3);
  CHECK(modes[1] == 3);
  CHECK(modes[2] == 3);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  TrackerConfig c = toy_config();
  Foundation<float> f(c.foundation, 23);
  PrompterBank<float> bank(c, 29);
  // corrupt the head so the classification logits go NaN; a poisoned
  // activation upstream would be swallowed by the head ReLUs
  f.store().get("foundation/head/cls/b2").fill(
      std::numeric_limits<float>::quiet_NaN());
  TrainConfig t = desk_train();
  LossWeights w;
  try {
    train_loop<float>(f, bank, t, w, 1);
    FAIL("non-finite loss not detected");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("toy overfit trend: loss drops on a fixed synthetic set") {
  // the acceptance suite runs the full 200-step contract; this is a fast smoke
  TrackerConfig c = toy_config();
  Foundation<float> f(c.foundation, 31);
  PrompterBank<float> bank(c, 0);
  TrainConfig t = desk_train();
  t.learning_rate = 2e-3;
  LossWeights w;
  TrainResult r = train_loop<float>(f, bank, t, w, 30);
  double first = r.history.front().total;
  double last = r.history.back().total;
  CHECK(last < first);
}
