#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "scribe/autograd.hpp"
#include "scribe/common.hpp"
#include "scribe/mat.hpp"

namespace scribe {

// A named trainable tensor with a gradient accumulator and Adam moments.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;  // Adam first moment
  Mat v;  // Adam second moment

  void zero_grad() { grad.fill(0.0); }
};

// Owns the parameters of one model. Iteration order is creation order, which
// makes saving, loading and gradient checks deterministic.
class ParamStore {
 public:
  Param& add(const std::string& name, Mat init) {
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Mat(init.rows, init.cols);
    p->m = Mat(init.rows, init.cols);
    p->v = Mat(init.rows, init.cols);
    p->value = std::move(init);
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Param* find(const std::string& name) {
    for (auto& p : items_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  const Param* find(const std::string& name) const {
    for (const auto& p : items_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  const std::vector<std::unique_ptr<Param>>& items() const { return items_; }
  std::vector<std::unique_ptr<Param>>& items() { return items_; }

  void zero_grad() {
    for (auto& p : items_) p->zero_grad();
  }

  long total_size() const {
    long n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param>> items_;
};

// Binds parameters onto a tape for one forward pass and pulls the tape
// gradients back into the parameter accumulators afterwards.
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(&tape) {}

  Var operator()(Param& p) {
    Var v = tape_->leaf(p.value, /*needs_grad=*/true);
    bound_.emplace_back(&p, v.id);
    return v;
  }

  // Call after Tape::backward.
  void collect() {
    for (auto& [p, id] : bound_) {
      p->grad.add_inplace(tape_->nodes_[id].grad);
    }
  }

 private:
  Tape* tape_;
  std::vector<std::pair<Param*, int>> bound_;
};

class SgdOpt {
 public:
  explicit SgdOpt(double lr) : lr_(lr) {}

  void step(ParamStore& ps) {
    for (auto& p : ps.items()) {
      p->value.add_inplace(p->grad, -lr_);
      p->zero_grad();
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_;
};

class AdamOpt {
 public:
  explicit AdamOpt(double lr, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& ps) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& p : ps.items()) {
      for (int i = 0; i < p->value.size(); ++i) {
        double g = p->grad.a[i];
        p->m.a[i] = beta1_ * p->m.a[i] + (1.0 - beta1_) * g;
        p->v.a[i] = beta2_ * p->v.a[i] + (1.0 - beta2_) * g * g;
        double mhat = p->m.a[i] / bc1;
        double vhat = p->v.a[i] / bc2;
        p->value.a[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      p->zero_grad();
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps_taken() const { return t_; }

 private:
  double lr_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Warmup + inverse-sqrt schedule. `base` is the configured learning rate;
// the d^-1/2 factor keeps large nominal rates (0.5) in a usable range.
inline double noam_lr(double base, int model_dim, int warmup, long step) {
  double s = static_cast<double>(std::max<long>(1, step));
  double w = static_cast<double>(std::max(1, warmup));
  return base / std::sqrt(static_cast<double>(model_dim)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

}  // namespace scribe
