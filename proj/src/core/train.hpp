#pragma once

#include <functional>

#include "loss.hpp"
#include "optim.hpp"
#include "pipeline.hpp"
#include "synth.hpp"

namespace m3pt {

struct TrainConfig {
  int64_t batch_size = 32;
  int64_t epochs = 60;
  int64_t samples_per_epoch = 60000;
  double learning_rate = 4e-4;
  double weight_decay = 1e-4;
  int64_t decay_epoch = 48;
  double decay_factor = 0.1;
  uint64_t seed = 0;
  int64_t synthetic_pairs = 20;

  int64_t steps_per_epoch() const {
    return std::max<int64_t>(1, samples_per_epoch / batch_size);
  }
  int64_t total_steps() const { return epochs * steps_per_epoch(); }

  void validate() const {
    if (batch_size < 1 || epochs < 1 || samples_per_epoch < 1)
      fail(ErrorKind::Config, "train: batch/epochs/samples must be >= 1");
    if (decay_epoch >= epochs)
      fail(ErrorKind::Config, "train: decay_epoch must be < epochs");
    if (learning_rate <= 0) fail(ErrorKind::Config, "train: learning_rate must be > 0");
    if (synthetic_pairs < 1) fail(ErrorKind::Config, "train: synthetic_pairs must be >= 1");
  }
};

// Step decay exactly at decay_epoch.
inline double lr_at_epoch(const TrainConfig& c, int64_t epoch) {
  return epoch < c.decay_epoch ? c.learning_rate : c.learning_rate * c.decay_factor;
}

struct StepRecord {
  int64_t step = 0;
  double lr = 0;
  double total = 0, cls = 0, giou = 0, l1 = 0;
};

// One optimizer step over a batch of samples. Builds a fresh graph per sample,
// averages bank gradients, applies AdamW. The foundation is untouched by
// construction: its leaves never request gradients and the optimizer only
// holds the bank store.
template <typename S>
class Trainer {
 public:
  Trainer(const Foundation<S>& foundation, PrompterBank<S>& bank,
          const TrainConfig& cfg, const LossWeights& weights)
      : foundation_(foundation), bank_(bank), cfg_(cfg), weights_(weights),
        opt_(bank.store(),
             {0.9, 0.999, 1e-8, cfg.weight_decay}) {
    cfg_.validate();
    weights_.validate();
  }

  StepRecord step(const std::vector<const SyntheticSample*>& batch, int64_t step_index) {
    int64_t epoch = step_index / cfg_.steps_per_epoch();
    double lr = lr_at_epoch(cfg_, epoch);
    std::vector<Tensor<S>> grads(bank_.store().count());
    for (size_t i = 0; i < grads.size(); ++i)
      grads[i] = Tensor<S>(bank_.store().tensor(i).shape);

    StepRecord rec;
    rec.step = step_index;
    rec.lr = lr;
    S inv_b = S(1) / static_cast<S>(batch.size());
    for (const SyntheticSample* sample : batch) {
      TrackGraph<S> g(foundation_, bank_, true);
      HeadNodes<S> head = g.forward(sample->templates, sample->searches);
      LossNodes loss = training_loss_node(g.tape(), head, sample->gt, weights_,
                                          foundation_.cfg());
      int scaled = op_scale(g.tape(), loss.total, inv_b);
      double lv = static_cast<double>(g.tape().val(loss.total)[0]);
      if (!std::isfinite(lv))
        fail(ErrorKind::Numeric,
             "non-finite training loss at step " + std::to_string(step_index));
      double nb = static_cast<double>(batch.size());
      rec.total += lv / nb;
      rec.cls += static_cast<double>(g.tape().val(loss.cls)[0]) / nb;
      rec.giou += static_cast<double>(g.tape().val(loss.giou)[0]) / nb;
      rec.l1 += static_cast<double>(g.tape().val(loss.l1)[0]) / nb;
      g.tape().backward(scaled);
      const std::vector<int>& ids = g.bp().ids();
      for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;  // parameter unused in this graph
        const Tensor<S>& pg = g.tape().grad(ids[i]);
        for (int64_t k = 0; k < pg.numel(); ++k) grads[i][k] += pg[k];
      }
    }
    opt_.step(grads, lr);
    return rec;
  }

 private:
  const Foundation<S>& foundation_;
  PrompterBank<S>& bank_;
  TrainConfig cfg_;
  LossWeights weights_;
  AdamW<S> opt_;
};

struct TrainResult {
  std::vector<StepRecord> history;
  uint64_t foundation_checksum_before = 0;
  uint64_t foundation_checksum_after = 0;
};

// Full prompt-tuning loop on synthetic data. Batches cycle deterministically
// through the pair set under a seeded shuffle.
template <typename S>
TrainResult train_loop(const Foundation<S>& foundation, PrompterBank<S>& bank,
                       const TrainConfig& cfg, const LossWeights& weights,
                       int64_t max_steps = -1,
                       const std::function<void(const StepRecord&)>& on_step = {}) {
  cfg.validate();
  TrainResult result;
  result.foundation_checksum_before = param_checksum(foundation.store());
  std::vector<SyntheticSample> data =
      generate_synthetic(cfg.seed, cfg.synthetic_pairs, foundation.cfg());
  Trainer<S> trainer(foundation, bank, cfg, weights);
  Rng order_rng(cfg.seed ^ 0x51ED270B31ULL);
  int64_t steps = max_steps >= 0 ? max_steps : cfg.total_steps();
  for (int64_t s = 0; s < steps; ++s) {
    std::vector<const SyntheticSample*> batch;
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      int64_t idx = order_rng.uniform_int(0, static_cast<int64_t>(data.size()) - 1);
      batch.push_back(&data[static_cast<size_t>(idx)]);
    }
    StepRecord rec = trainer.step(batch, s);
    result.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.foundation_checksum_after = param_checksum(foundation.store());
  return result;
}

}  // namespace m3pt
