#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ctxfuse {

// Dense 64-bit float tensor with reverse-mode gradients. A Tensor is a cheap
// handle onto shared storage; ops build a define-by-run tape that backward()
// replays in reverse. Tracked tensors always carry a grad buffer of the same
// shape. Gradients accumulate additively, so a tensor used in several places
// (the provider representation feeds every layer) collects all contributions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool tracked = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool tracked = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool tracked = false);
  static Tensor scalar(double value, bool tracked = false);

  bool defined() const { return data_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  double* data();
  const double* data() const;
  const std::vector<double>& values() const;
  double* grad();
  const double* grad() const;
  const std::vector<double>& grad_values() const;

  bool tracked() const;
  void set_tracked(bool tracked);
  void zero_grad();

  double item() const;  // scalar tensors
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  void set(std::size_t i, double v);
  void set(std::size_t i, std::size_t j, double v);

  // identity of the underlying storage, for aliasing checks in tests
  const void* storage_id() const { return data_.get(); }

 private:
  struct Storage {
    std::vector<std::size_t> shape;
    std::vector<double> v;
    std::vector<double> g;  // sized like v iff tracked
    bool tracked = false;
  };
  std::shared_ptr<Storage> data_;

  explicit Tensor(std::shared_ptr<Storage> s) : data_(std::move(s)) {}
};

// Ordered record of executed differentiable operations. Execution order is a
// topological order of the define-by-run graph, so replaying the entries in
// reverse applies the chain rule. One tape per thread; it is cleared by
// backward() and expected to be rebuilt on every forward pass.
class Tape {
 public:
  static Tape& active();

  void record(std::function<void()> backward_step);
  void clear();
  std::size_t size() const { return entries_.size(); }

  // grad mode; NoGradGuard flips it off for pure inference
  static bool recording();

 private:
  friend class NoGradGuard;
  friend void backward(const Tensor& loss, double seed);
  std::vector<std::function<void()>> entries_;
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Runs reverse-mode accumulation from a scalar loss and clears the tape.
// seed is the upstream dL/dloss, 1 for a plain backward; fractional seeds let
// a caller accumulate sentence losses into one batch gradient.
void backward(const Tensor& loss, double seed = 1.0);

// ---- differentiable operations -------------------------------------------
// Tensors are cheap handles, so ops take them by value; the backward closure
// captures the same storage the caller holds.

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);        // element-wise
Tensor scale(Tensor a, double c);      // scalar * tensor
Tensor add_rowvec(Tensor x, Tensor b);  // x[m×n] + b[n] per row
Tensor relu(Tensor x);
Tensor sum(Tensor x);  // -> scalar

Tensor matmul(Tensor a, Tensor b);     // [m×k]·[k×n]
Tensor matmul_nt(Tensor a, Tensor b);  // [m×k]·[n×k]ᵀ -> [m×n]

// softmax over a rank-1 tensor, max-subtracted
Tensor softmax(Tensor x);
// row-wise softmax over a rank-2 tensor; allowed (empty or rows*cols 0/1
// flags) pins disallowed entries to probability exactly 0. A fully
// disallowed row is rejected.
Tensor softmax_rows(Tensor x, const std::vector<std::uint8_t>& allowed = {});

// row-wise layer normalization with learned gain/bias, eps inside the sqrt
Tensor layer_norm_rows(Tensor x, Tensor gain, Tensor bias, double eps = 1e-5);

// row lookup: out[i] = table[ids[i]]; gradients accumulate into table rows
Tensor embed_rows(Tensor table, const std::vector<int>& ids);

Tensor slice_cols(Tensor x, std::size_t from, std::size_t to);
Tensor concat_cols(const std::vector<Tensor>& parts);

// inverted dropout; draws one uniform per element from rng when rate > 0
class Rng;
Tensor dropout(Tensor x, double rate, Rng& rng);

// Mean token-level negative log-likelihood over non-pad rows with label
// smoothing mass spread uniformly across the vocabulary. pad_id < 0 disables
// pad filtering.
Tensor nll_loss_rows(Tensor logits, const std::vector<int>& targets, double label_smoothing,
                     int pad_id);

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace ctxfuse
