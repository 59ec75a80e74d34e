#pragma once

#include "params.hpp"

namespace m3pt {

// Decoupled-weight-decay adaptive-moment optimizer over one parameter store.
template <typename S>
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  explicit AdamW(ParamStore<S>& store, Hyper hyper = {})
      : store_(store), hyper_(hyper) {
    m_.resize(store.count());
    v_.resize(store.count());
    for (size_t i = 0; i < store.count(); ++i) {
      m_[i] = Tensor<double>(store.tensor(i).shape);
      v_[i] = Tensor<double>(store.tensor(i).shape);
    }
  }

  // grads[i] aligns with store tensor i.
  void step(const std::vector<Tensor<S>>& grads, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(hyper_.beta1, t_);
    double bc2 = 1.0 - std::pow(hyper_.beta2, t_);
    for (size_t i = 0; i < store_.count(); ++i) {
      Tensor<S>& p = store_.tensor(i);
      const Tensor<S>& g = grads[i];
      for (int64_t k = 0; k < p.numel(); ++k) {
        double gv = static_cast<double>(g[k]);
        m_[i][k] = hyper_.beta1 * m_[i][k] + (1.0 - hyper_.beta1) * gv;
        v_[i][k] = hyper_.beta2 * v_[i][k] + (1.0 - hyper_.beta2) * gv * gv;
        double mhat = m_[i][k] / bc1;
        double vhat = v_[i][k] / bc2;
        double upd = mhat / (std::sqrt(vhat) + hyper_.eps) +
                     hyper_.weight_decay * static_cast<double>(p[k]);
        p[k] = static_cast<S>(static_cast<double>(p[k]) - lr * upd);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  ParamStore<S>& store_;
  Hyper hyper_;
  std::vector<Tensor<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace m3pt
