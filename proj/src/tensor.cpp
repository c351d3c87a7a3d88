#include "ctxfuse/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "ctxfuse/kernels.hpp"
#include "ctxfuse/rng.hpp"

namespace ctxfuse {

namespace {

thread_local bool g_recording = true;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool tracked) {
  auto s = std::make_shared<Storage>();
  const std::size_t n = shape_numel(shape);
  s->shape = std::move(shape);
  s->v.assign(n, 0.0);
  s->tracked = tracked;
  if (tracked) s->g.assign(n, 0.0);
  return Tensor(std::move(s));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool tracked) {
  Tensor t = zeros(std::move(shape), tracked);
  for (auto& x : t.data_->v) x = value;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values, bool tracked) {
  const std::size_t n = shape_numel(shape);
  if (values.size() != n)
    throw std::invalid_argument("tensor init: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->v = std::move(values);
  s->tracked = tracked;
  if (tracked) s->g.assign(n, 0.0);
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool tracked) { return from({1}, {value}, tracked); }

const std::vector<std::size_t>& Tensor::shape() const { return data_->shape; }
std::size_t Tensor::size() const { return data_->v.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows(): tensor is not rank-2, shape " + shape_str(shape()));
  return data_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols(): tensor is not rank-2, shape " + shape_str(shape()));
  return data_->shape[1];
}

double* Tensor::data() { return data_->v.data(); }
const double* Tensor::data() const { return data_->v.data(); }
const std::vector<double>& Tensor::values() const { return data_->v; }

double* Tensor::grad() { return data_->tracked ? data_->g.data() : nullptr; }
const double* Tensor::grad() const { return data_->tracked ? data_->g.data() : nullptr; }

const std::vector<double>& Tensor::grad_values() const {
  if (!data_->tracked) throw std::runtime_error("grad_values(): tensor is not tracked");
  return data_->g;
}

bool Tensor::tracked() const { return data_ && data_->tracked; }

void Tensor::set_tracked(bool tracked) {
  data_->tracked = tracked;
  if (tracked)
    data_->g.assign(data_->v.size(), 0.0);
  else
    data_->g.clear();
}

void Tensor::zero_grad() {
  if (data_->tracked) data_->g.assign(data_->v.size(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(size()) + " elements");
  return data_->v[0];
}

double Tensor::at(std::size_t i) const { return data_->v.at(i); }
double Tensor::at(std::size_t i, std::size_t j) const { return data_->v.at(i * cols() + j); }
void Tensor::set(std::size_t i, double v) { data_->v.at(i) = v; }
void Tensor::set(std::size_t i, std::size_t j, double v) { data_->v.at(i * cols() + j) = v; }

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::function<void()> backward_step) {
  entries_.push_back(std::move(backward_step));
}

void Tape::clear() { entries_.clear(); }

bool Tape::recording() { return g_recording; }

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }

void backward(const Tensor& loss, double seed) {
  require(loss.size() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.tracked()) throw std::invalid_argument("backward: loss is not tracked");
  Tensor l = loss;
  l.grad()[0] += seed;
  auto& tape = Tape::active();
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) (*it)();
  tape.clear();
}

namespace {

bool want_track(const Tensor& a) { return Tape::recording() && a.tracked(); }
bool want_track(const Tensor& a, const Tensor& b) {
  return Tape::recording() && (a.tracked() || b.tracked());
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), want_track(a, b));
  kernels::add(a.data(), b.data(), out.data(), a.size());
  if (out.tracked()) {
    Tape::active().record([a, b, out]() mutable {
      const double* go = out.grad();
      const std::size_t n = out.size();
      if (a.tracked())
        for (std::size_t i = 0; i < n; ++i) a.grad()[i] += go[i];
      if (b.tracked())
        for (std::size_t i = 0; i < n; ++i) b.grad()[i] += go[i];
    });
  }
  return out;
}

Tensor sub(Tensor a, Tensor b) {
  require(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), want_track(a, b));
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (out.tracked()) {
    Tape::active().record([a, b, out]() mutable {
      const double* go = out.grad();
      const std::size_t n = out.size();
      if (a.tracked())
        for (std::size_t i = 0; i < n; ++i) a.grad()[i] += go[i];
      if (b.tracked())
        for (std::size_t i = 0; i < n; ++i) b.grad()[i] -= go[i];
    });
  }
  return out;
}

Tensor mul(Tensor a, Tensor b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), want_track(a, b));
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.tracked()) {
    Tape::active().record([a, b, out]() mutable {
      const double* go = out.grad();
      const std::size_t n = out.size();
      if (a.tracked())
        for (std::size_t i = 0; i < n; ++i) a.grad()[i] += go[i] * b.data()[i];
      if (b.tracked())
        for (std::size_t i = 0; i < n; ++i) b.grad()[i] += go[i] * a.data()[i];
    });
  }
  return out;
}

Tensor scale(Tensor a, double c) {
  Tensor out = Tensor::zeros(a.shape(), want_track(a));
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (out.tracked()) {
    Tape::active().record([a, out, c]() mutable {
      const double* go = out.grad();
      for (std::size_t i = 0; i < out.size(); ++i) a.grad()[i] += go[i] * c;
    });
  }
  return out;
}

Tensor add_rowvec(Tensor x, Tensor b) {
  require(x.rank() == 2 && b.rank() == 1 && b.size() == x.cols(),
          "add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(x.shape(), want_track(x, b));
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + b.data()[j];
  if (out.tracked()) {
    Tape::active().record([x, b, out, m, n]() mutable {
      const double* go = out.grad();
      if (x.tracked())
        for (std::size_t i = 0; i < m * n; ++i) x.grad()[i] += go[i];
      if (b.tracked())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) b.grad()[j] += go[i * n + j];
    });
  }
  return out;
}

Tensor relu(Tensor x) {
  Tensor out = Tensor::zeros(x.shape(), want_track(x));
  kernels::relu(x.data(), out.data(), x.size());
  if (out.tracked()) {
    Tape::active().record([x, out]() mutable {
      const double* go = out.grad();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x.data()[i] > 0.0) x.grad()[i] += go[i];
    });
  }
  return out;
}

Tensor sum(Tensor x) {
  Tensor out = Tensor::zeros({1}, want_track(x));
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  out.data()[0] = acc;
  if (out.tracked()) {
    Tape::active().record([x, out]() mutable {
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += g;
    });
  }
  return out;
}

Tensor matmul(Tensor a, Tensor b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n}, want_track(a, b));
  kernels::matmul(a.data(), b.data(), out.data(), m, k, n, false, false, false);
  if (out.tracked()) {
    Tape::active().record([a, b, out, m, k, n]() mutable {
      if (a.tracked())  // dA += dC · Bᵀ
        kernels::matmul(out.grad(), b.data(), a.grad(), m, n, k, false, true, true);
      if (b.tracked())  // dB += Aᵀ · dC
        kernels::matmul(a.data(), out.grad(), b.grad(), k, m, n, true, false, true);
    });
  }
  return out;
}

Tensor matmul_nt(Tensor a, Tensor b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "ᵀ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n}, want_track(a, b));
  kernels::matmul(a.data(), b.data(), out.data(), m, k, n, false, true, false);
  if (out.tracked()) {
    Tape::active().record([a, b, out, m, k, n]() mutable {
      if (a.tracked())  // dA += dC · B
        kernels::matmul(out.grad(), b.data(), a.grad(), m, n, k, false, false, true);
      if (b.tracked())  // dB += dCᵀ · A
        kernels::matmul(out.grad(), a.data(), b.grad(), n, m, k, true, false, true);
    });
  }
  return out;
}

namespace {

void check_finite(const Tensor& x, const char* op) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.data()[i]))
      throw std::invalid_argument(std::string(op) + ": non-finite input entry");
}

Tensor softmax_impl(Tensor x, std::size_t rows_n, std::size_t cols_n,
                    const std::vector<std::uint8_t>& allowed) {
  Tensor out = Tensor::zeros(x.shape(), want_track(x));
  const bool ok = kernels::softmax_rows(x.data(), out.data(), rows_n, cols_n,
                                        allowed.empty() ? nullptr : allowed.data());
  if (!ok) throw std::invalid_argument("softmax: a row has every position masked");
  if (out.tracked()) {
    Tape::active().record([x, out, rows_n, cols_n]() mutable {
      // dx = y ⊙ (dy − Σ dy·y), row-wise; masked entries have y = 0
      for (std::size_t i = 0; i < rows_n; ++i) {
        const double* y = out.data() + i * cols_n;
        const double* gy = out.grad() + i * cols_n;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols_n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < cols_n; ++j) x.grad()[i * cols_n + j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax(Tensor x) {
  require(x.rank() == 1, "softmax: expected rank-1 input, got " + shape_str(x.shape()));
  require(x.size() >= 1, "softmax: empty input");
  check_finite(x, "softmax");
  return softmax_impl(x, 1, x.size(), {});
}

Tensor softmax_rows(Tensor x, const std::vector<std::uint8_t>& allowed) {
  require(x.rank() == 2, "softmax_rows: expected rank-2 input, got " + shape_str(x.shape()));
  require(allowed.empty() || allowed.size() == x.size(),
          "softmax_rows: mask size " + std::to_string(allowed.size()) + " for " +
              shape_str(x.shape()));
  check_finite(x, "softmax_rows");
  return softmax_impl(x, x.rows(), x.cols(), allowed);
}

Tensor layer_norm_rows(Tensor x, Tensor gain, Tensor bias, double eps) {
  require(x.rank() == 2, "layer_norm: expected rank-2 input, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), d = x.cols();
  require(d >= 2, "layer_norm: dimension must be >= 2, got " + std::to_string(d));
  require(gain.rank() == 1 && gain.size() == d && bias.rank() == 1 && bias.size() == d,
          "layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  const bool track = Tape::recording() && (x.tracked() || gain.tracked() || bias.tracked());
  Tensor out = Tensor::zeros(x.shape(), track);
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  kernels::layer_norm_rows(x.data(), gain.data(), bias.data(), out.data(), xhat->data(),
                           inv_std->data(), m, d, eps);
  if (track) {
    Tape::active().record([x, gain, bias, out, xhat, inv_std, m, d]() mutable {
      for (std::size_t i = 0; i < m; ++i) {
        const double* gy = out.grad() + i * d;
        const double* xh = xhat->data() + i * d;
        const double is = (*inv_std)[i];
        if (bias.tracked())
          for (std::size_t j = 0; j < d; ++j) bias.grad()[j] += gy[j];
        if (gain.tracked())
          for (std::size_t j = 0; j < d; ++j) gain.grad()[j] += gy[j] * xh[j];
        if (x.tracked()) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[j] * gain.data()[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[j] * gain.data()[j];
            x.grad()[i * d + j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor embed_rows(Tensor table, const std::vector<int>& ids) {
  require(table.rank() == 2, "embed: table must be rank-2, got " + shape_str(table.shape()));
  require(!ids.empty(), "embed: empty id sequence");
  const std::size_t v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::invalid_argument("embed: id " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(v));
  Tensor out = Tensor::zeros({ids.size(), d}, want_track(table));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.data()[i * d + j] = table.data()[static_cast<std::size_t>(ids[i]) * d + j];
  if (out.tracked()) {
    Tape::active().record([table, out, ids, d]() mutable {
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          table.grad()[static_cast<std::size_t>(ids[i]) * d + j] += out.grad()[i * d + j];
    });
  }
  return out;
}

Tensor slice_cols(Tensor x, std::size_t from, std::size_t to) {
  require(x.rank() == 2 && from < to && to <= x.cols(),
          "slice_cols: [" + std::to_string(from) + "," + std::to_string(to) + ") of " +
              shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols(), w = to - from;
  Tensor out = Tensor::zeros({m, w}, want_track(x));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data()[i * w + j] = x.data()[i * n + from + j];
  if (out.tracked()) {
    Tape::active().record([x, out, from, m, n, w]() mutable {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) x.grad()[i * n + from + j] += out.grad()[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool track = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.rows() == m, "concat_cols: row mismatch");
    total += p.cols();
    track = track || want_track(p);
  }
  Tensor out = Tensor::zeros({m, total}, track);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out.data()[i * total + off + j] = p.data()[i * w + j];
    off += w;
  }
  if (track) {
    std::vector<Tensor> held = parts;
    Tape::active().record([held, out, m, total]() mutable {
      std::size_t off2 = 0;
      for (auto& p : held) {
        const std::size_t w = p.cols();
        if (p.tracked())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              p.grad()[i * w + j] += out.grad()[i * total + off2 + j];
        off2 += w;
      }
    });
  }
  return out;
}

Tensor dropout(Tensor x, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    (*mask)[i] = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out = Tensor::zeros(x.shape(), want_track(x));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * (*mask)[i];
  if (out.tracked()) {
    Tape::active().record([x, out, mask]() mutable {
      for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += out.grad()[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor nll_loss_rows(Tensor logits, const std::vector<int>& targets, double label_smoothing,
                     int pad_id) {
  require(logits.rank() == 2, "loss: logits must be rank-2, got " + shape_str(logits.shape()));
  require(targets.size() == logits.rows(),
          "loss: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(logits.rows()) + " rows");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, "loss: label smoothing outside [0,1)");
  const std::size_t t_len = logits.rows(), v = logits.cols();
  std::size_t live = 0;
  for (int t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw std::invalid_argument("loss: target " + std::to_string(t) + " outside vocabulary of " +
                                  std::to_string(v));
    ++live;
  }
  if (live == 0) throw std::invalid_argument("loss: every position is padding");

  const double eps = label_smoothing;
  const double unif = eps / static_cast<double>(v);
  double total = 0.0;
  std::vector<double> lse(t_len, 0.0);
  for (std::size_t i = 0; i < t_len; ++i) {
    if (targets[i] == pad_id) continue;
    const double* row = logits.data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    lse[i] = mx + std::log(z);
    double q_logp = (1.0 - eps) * (row[static_cast<std::size_t>(targets[i])] - lse[i]);
    if (eps > 0.0)
      for (std::size_t j = 0; j < v; ++j) q_logp += unif * (row[j] - lse[i]);
    total -= q_logp;
  }
  Tensor out = Tensor::zeros({1}, want_track(logits));
  out.data()[0] = total / static_cast<double>(live);
  if (out.tracked()) {
    Tape::active().record([logits, out, targets, lse, eps, unif, pad_id, t_len, v, live]() mutable {
      const double g = out.grad()[0] / static_cast<double>(live);
      for (std::size_t i = 0; i < t_len; ++i) {
        if (targets[i] == pad_id) continue;
        const double* row = logits.data() + i * v;
        double* grow = logits.grad() + i * v;
        for (std::size_t j = 0; j < v; ++j) {
          const double p = std::exp(row[j] - lse[i]);
          double q = unif;
          if (j == static_cast<std::size_t>(targets[i])) q += 1.0 - eps;
          grow[j] += g * (p - q);
        }
      }
    });
  }
  return out;
}

}  // namespace ctxfuse
