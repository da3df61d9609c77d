#include "dcvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dcvae {

const Tensor& Var::value() const {
  if (!valid()) throw std::invalid_argument("var: invalid handle");
  return tape->value(id);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, {}, false});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, {}, true});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Tensor& param) {
  if (auto it = params_.find(&param); it != params_.end()) return Var{this, it->second};
  Var v = track_ ? variable(param) : constant(param);
  params_.emplace(&param, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<int> inputs, Backward backward) {
  bool needs = false;
  for (int in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
  if (!needs) return constant(std::move(value));
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), {}, true});
  ++recorded_;
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::span<double> Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::incoming(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.id < 0 || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw std::invalid_argument("backward: loss is not on this tape");
  }
  if (value(loss.id).size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(value(loss.id).shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.tape != this) throw std::invalid_argument("grad: variable is not on this tape");
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

Tensor Tape::grad_of(const Tensor& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return Tensor(param.shape(), 0.0);
  return grad(Var{const_cast<Tape*>(this), it->second});
}

namespace ops {
namespace {

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) throw std::invalid_argument("ops: operands on different tapes");
  return *a.tape;
}

// Gradient sink for input `id`, or empty when it does not need one.
std::span<double> sink(Tape& t, int id) {
  if (!t.requires_grad(id)) return {};
  return t.grad_buffer(id);
}

template <class F>
Var unary(Var a, std::vector<double> out, F&& local_grad) {
  Tape& t = *a.tape;
  return t.record(Tensor(a.shape(), std::move(out)), {a.id},
                  [ia = a.id, lg = std::forward<F>(local_grad)](Tape& tp, int self) {
                    auto g = tp.incoming(self);
                    auto da = sink(tp, ia);
                    const auto& x = tp.value(ia).values();
                    const auto& y = tp.value(self).values();
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * lg(x[i], y[i]);
                  });
}

// C[m,n] += A[m,k] B[k,n]
double dot(std::size_t k, const double* a, const double* b) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    s0 += a[p] * b[p];
    s1 += a[p + 1] * b[p + 1];
    s2 += a[p + 2] * b[p + 2];
    s3 += a[p + 3] * b[p + 3];
  }
  for (; p < k; ++p) s0 += a[p] * b[p];
  return (s0 + s1) + (s2 + s3);
}

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) c[i] += dot(k, a + i * k, b);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] B[n,k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(k, ai, b + j * k);
  }
}

// C[k,n] += A[m,k]^T B[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double bi = b[i];
      if (bi == 0.0) continue;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) c[p] += bi * ai[p];
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

void log_softmax_rows(const std::vector<double>& x, std::size_t cols, std::vector<double>& out) {
  out.resize(x.size());
  for (std::size_t r = 0; r < x.size() / cols; ++r) {
    const double* xr = x.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = *std::max_element(xr, xr + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(xr[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) o[j] = xr[j] - lse;
  }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  std::vector<double> out(a.value().values());
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(Tensor(a.shape(), std::move(out)), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    auto g = tp.incoming(self);
    for (int in : {ia, ib}) {
      auto d = sink(tp, in);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
  std::vector<double> out(a.value().values());
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(Tensor(a.shape(), std::move(out)), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto da = sink(tp, ia);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
    auto db = sink(tp, ib);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  std::vector<double> out(a.value().values());
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(Tensor(a.shape(), std::move(out)), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, int self) {
    auto g = tp.incoming(self);
    const auto& av = tp.value(ia).values();
    const auto& bv2 = tp.value(ib).values();
    auto da = sink(tp, ia);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv2[i];
    auto db = sink(tp, ib);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
  });
}

Var scale(Var a, double c) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v *= c;
  return unary(a, std::move(out), [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v += c;
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var add_row(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 1 || a.shape()[1] != b.shape()[0]) {
    mismatch("add_row", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.value().values());
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return t.record(Tensor(a.shape(), std::move(out)), {a.id, b.id}, [ia = a.id, ib = b.id, n](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto da = sink(tp, ia);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
    auto db = sink(tp, ib);
    if (!db.empty())
      for (std::size_t i = 0; i < g.size(); ++i) db[i % n] += g[i];
  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  std::size_t m = 0, k = 0, n = 0;
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0]) {
    m = sa[0], k = sa[1], n = 1, out_shape = {m};
  } else if (sa.size() == 1 && sb.size() == 2 && sa[0] == sb[0]) {
    m = 1, k = sa[0], n = sb[1], out_shape = {n};
  } else if (sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0]) {
    m = sa[0], k = sa[1], n = sb[1], out_shape = {m, n};
  } else {
    mismatch("matmul", sa, sb);
  }
  std::vector<double> out(m * n, 0.0);
  gemm(m, k, n, a.value().values().data(), b.value().values().data(), out.data());
  return t.record(Tensor(std::move(out_shape), std::move(out)), {a.id, b.id},
                  [ia = a.id, ib = b.id, m, k, n](Tape& tp, int self) {
                    auto g = tp.incoming(self);
                    auto da = sink(tp, ia);
                    if (!da.empty()) gemm_nt(m, n, k, g.data(), tp.value(ib).values().data(), da.data());
                    auto db = sink(tp, ib);
                    if (!db.empty()) gemm_tn(m, k, n, tp.value(ia).values().data(), g.data(), db.data());
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() != 2 || sa.size() > 2 || sa.back() != sb[1]) mismatch("matmul_nt", sa, sb);
  const std::size_t m = sa.size() == 2 ? sa[0] : 1, k = sb[1], n = sb[0];
  Shape out_shape = sa.size() == 2 ? Shape{m, n} : Shape{n};
  std::vector<double> out(m * n, 0.0);
  gemm_nt(m, k, n, a.value().values().data(), b.value().values().data(), out.data());
  return t.record(Tensor(std::move(out_shape), std::move(out)), {a.id, b.id},
                  [ia = a.id, ib = b.id, m, k, n](Tape& tp, int self) {
                    auto g = tp.incoming(self);
                    auto da = sink(tp, ia);
                    if (!da.empty()) gemm(m, n, k, g.data(), tp.value(ib).values().data(), da.data());
                    auto db = sink(tp, ib);
                    if (!db.empty()) gemm_tn(m, n, k, g.data(), tp.value(ia).values().data(), db.data());
                  });
}

Var transpose(Var a) {
  if (a.value().rank() != 2) throw std::invalid_argument("transpose: expected matrix, got " + shape_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto& x = a.value().values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return a.tape->record(Tensor({n, m}, std::move(out)), {a.id}, [ia = a.id, m, n](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto da = sink(tp, ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
  });
}

Var affine(Var w, Var x, Var b) {
  Tape& t = same_tape(w, x);
  same_tape(w, b);
  const Shape& sw = w.shape();
  if (sw.size() != 2 || x.value().rank() != 1 || sw[1] != x.shape()[0]) mismatch("affine", sw, x.shape());
  if (b.value().rank() != 1 || b.shape()[0] != sw[0]) mismatch("affine", sw, b.shape());
  const std::size_t m = sw[0], k = sw[1];
  std::vector<double> out(b.value().values());
  gemm(m, k, 1, w.value().values().data(), x.value().values().data(), out.data());
  return t.record(Tensor({m}, std::move(out)), {w.id, x.id, b.id},
                  [iw = w.id, ix = x.id, ib = b.id, m, k](Tape& tp, int self) {
                    auto g = tp.incoming(self);
                    const auto& wv = tp.value(iw).values();
                    const auto& xv = tp.value(ix).values();
                    auto dw = sink(tp, iw);
                    if (!dw.empty()) {
                      for (std::size_t i = 0; i < m; ++i) {
                        const double gi = g[i];
                        if (gi == 0.0) continue;
                        double* row = dw.data() + i * k;
                        for (std::size_t p = 0; p < k; ++p) row[p] += gi * xv[p];
                      }
                    }
                    auto dx = sink(tp, ix);
                    if (!dx.empty()) gemm_tn(m, k, 1, wv.data(), g.data(), dx.data());
                    auto db = sink(tp, ib);
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i];
                  });
}

Var tanh(Var a) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v = std::tanh(v);
  return unary(a, std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return unary(a, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v = std::exp(v);
  return unary(a, std::move(out), [](double, double y) { return y; });
}

Var log(Var a) {
  std::vector<double> out(a.value().values());
  for (double& v : out) {
    if (!(v > 0.0)) throw std::invalid_argument("log: non-positive input");
    v = std::log(v);
  }
  return unary(a, std::move(out), [](double x, double) { return 1.0 / x; });
}

Var log_softmax(Var a) {
  const std::size_t cols = a.shape().back();
  std::vector<double> out;
  log_softmax_rows(a.value().values(), cols, out);
  return a.tape->record(Tensor(a.shape(), std::move(out)), {a.id}, [ia = a.id, cols](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto da = sink(tp, ia);
    const auto& y = tp.value(self).values();
    for (std::size_t r = 0; r < y.size() / cols; ++r) {
      const std::size_t o = r * cols;
      double gs = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gs += g[o + j];
      for (std::size_t j = 0; j < cols; ++j) da[o + j] += g[o + j] - std::exp(y[o + j]) * gs;
    }
  });
}

Var softmax(Var a) {
  const std::size_t cols = a.shape().back();
  std::vector<double> out;
  log_softmax_rows(a.value().values(), cols, out);
  for (double& v : out) v = std::exp(v);
  return a.tape->record(Tensor(a.shape(), std::move(out)), {a.id}, [ia = a.id, cols](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto da = sink(tp, ia);
    const auto& y = tp.value(self).values();
    for (std::size_t r = 0; r < y.size() / cols; ++r) {
      const std::size_t o = r * cols;
      double gy = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gy += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < cols; ++j) da[o + j] += y[o + j] * (g[o + j] - gy);
    }
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t rank = parts[0].value().rank();
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.value().rank() != rank || p.value().rows() != rows) mismatch("concat", parts[0].shape(), p.shape());
    ids.push_back(p.id);
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const auto& v = parts[q].value().values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[q], widths[q], out.data() + r * total + off);
    off += widths[q];
  }
  Shape s = rank == 2 ? Shape{rows, total} : Shape{total};
  return t.record(Tensor(std::move(s), std::move(out)), ids, [ids, widths, rows, total](Tape& tp, int self) {
    auto g = tp.incoming(self);
    std::size_t off2 = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      auto d = sink(tp, ids[q]);
      if (!d.empty())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[q]; ++j) d[r * widths[q] + j] += g[r * total + off2 + j];
      off2 += widths[q];
    }
  });
}

Var stack(std::span<const Var> rows_in) {
  if (rows_in.empty()) throw std::invalid_argument("stack: no inputs");
  Tape& t = *rows_in[0].tape;
  const std::size_t d = rows_in[0].size();
  std::vector<int> ids;
  std::vector<double> out;
  out.reserve(d * rows_in.size());
  for (const Var& r : rows_in) {
    same_tape(rows_in[0], r);
    if (r.value().rank() != 1 || r.size() != d) mismatch("stack", rows_in[0].shape(), r.shape());
    ids.push_back(r.id);
    out.insert(out.end(), r.value().values().begin(), r.value().values().end());
  }
  return t.record(Tensor({rows_in.size(), d}, std::move(out)), ids, [ids, d](Tape& tp, int self) {
    auto g = tp.incoming(self);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      auto dr = sink(tp, ids[q]);
      for (std::size_t j = 0; j < dr.size(); ++j) dr[j] += g[q * d + j];
    }
  });
}

Var lookup(Var table, std::size_t row) {
  if (table.value().rank() != 2) throw std::invalid_argument("lookup: table must be a matrix");
  const std::size_t n = table.shape()[0], d = table.shape()[1];
  if (row >= n) {
    throw std::invalid_argument("lookup: row " + std::to_string(row) + " out of range for " + shape_string(table.shape()));
  }
  const auto& tv = table.value().values();
  std::vector<double> out(tv.begin() + static_cast<std::ptrdiff_t>(row * d),
                          tv.begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
  return table.tape->record(Tensor({d}, std::move(out)), {table.id}, [it = table.id, row, d](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto dt = sink(tp, it);
    for (std::size_t j = 0; j < d; ++j) dt[row * d + j] += g[j];
  });
}

Var rows(Var table, std::span<const std::size_t> indices) {
  if (table.value().rank() != 2) throw std::invalid_argument("rows: table must be a matrix");
  if (indices.empty()) throw std::invalid_argument("rows: no indices");
  const std::size_t n = table.shape()[0], d = table.shape()[1];
  const auto& tv = table.value().values();
  std::vector<double> out(indices.size() * d);
  for (std::size_t q = 0; q < indices.size(); ++q) {
    if (indices[q] >= n) throw std::invalid_argument("rows: index out of range for " + shape_string(table.shape()));
    std::copy_n(tv.data() + indices[q] * d, d, out.data() + q * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape->record(Tensor({idx.size(), d}, std::move(out)), {table.id},
                            [it = table.id, idx, d](Tape& tp, int self) {
                              auto g = tp.incoming(self);
                              auto dt = sink(tp, it);
                              for (std::size_t q = 0; q < idx.size(); ++q)
                                for (std::size_t j = 0; j < d; ++j) dt[idx[q] * d + j] += g[q * d + j];
                            });
}

Var gather(Var a, std::span<const std::size_t> flat_indices) {
  if (flat_indices.empty()) throw std::invalid_argument("gather: no indices");
  const auto& av = a.value().values();
  std::vector<double> out(flat_indices.size());
  for (std::size_t q = 0; q < flat_indices.size(); ++q) {
    if (flat_indices[q] >= av.size()) throw std::invalid_argument("gather: index out of range for " + shape_string(a.shape()));
    out[q] = av[flat_indices[q]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  return a.tape->record(Tensor({idx.size()}, std::move(out)), {a.id}, [ia = a.id, idx](Tape& tp, int self) {
    auto g = tp.incoming(self);
    auto da = sink(tp, ia);
    for (std::size_t q = 0; q < idx.size(); ++q) da[idx[q]] += g[q];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id}, [ia = a.id](Tape& tp, int self) {
    const double g = tp.incoming(self)[0];
    for (double& d : sink(tp, ia)) d += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var straight_through(Var probs, Var table, std::size_t index) {
  Tape& t = same_tape(probs, table);
  if (table.value().rank() != 2 || probs.value().rank() != 1 || probs.shape()[0] != table.shape()[0]) {
    mismatch("straight_through", probs.shape(), table.shape());
  }
  const std::size_t n = table.shape()[0], d = table.shape()[1];
  if (index >= n) throw std::invalid_argument("straight_through: index out of range");
  const auto& tv = table.value().values();
  std::vector<double> out(tv.begin() + static_cast<std::ptrdiff_t>(index * d),
                          tv.begin() + static_cast<std::ptrdiff_t>((index + 1) * d));
  return t.record(Tensor({d}, std::move(out)), {probs.id, table.id},
                  [ip = probs.id, it = table.id, index, n, d](Tape& tp, int self) {
                    auto g = tp.incoming(self);
                    auto dt = sink(tp, it);
                    if (!dt.empty())
                      for (std::size_t j = 0; j < d; ++j) dt[index * d + j] += g[j];
                    auto dp = sink(tp, ip);
                    if (!dp.empty()) gemm(n, d, 1, tp.value(it).values().data(), g.data(), dp.data());
                  });
}

Var apply(std::string_view kind, std::span<const Var> in) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(kind) + ": expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(in.size()));
    }
  };
  if (kind == "add") return need(2), add(in[0], in[1]);
  if (kind == "sub") return need(2), sub(in[0], in[1]);
  if (kind == "mul") return need(2), mul(in[0], in[1]);
  if (kind == "add_row") return need(2), add_row(in[0], in[1]);
  if (kind == "matmul") return need(2), matmul(in[0], in[1]);
  if (kind == "matmul_nt") return need(2), matmul_nt(in[0], in[1]);
  if (kind == "affine") return need(3), affine(in[0], in[1], in[2]);
  if (kind == "transpose") return need(1), transpose(in[0]);
  if (kind == "tanh") return need(1), tanh(in[0]);
  if (kind == "sigmoid") return need(1), sigmoid(in[0]);
  if (kind == "exp") return need(1), exp(in[0]);
  if (kind == "log") return need(1), log(in[0]);
  if (kind == "softmax") return need(1), softmax(in[0]);
  if (kind == "log_softmax") return need(1), log_softmax(in[0]);
  if (kind == "sum") return need(1), sum(in[0]);
  if (kind == "mean") return need(1), mean(in[0]);
  if (kind == "concat") return concat(in);
  if (kind == "stack") return stack(in);
  throw std::invalid_argument("apply: unknown primitive '" + std::string(kind) + "'");
}

}  // namespace ops

double grad_check(const TapeFunction& fn, const std::vector<Tensor>& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  auto evaluate = [&](const std::vector<Tensor>& at, Tape& tape) {
    std::vector<Var> vars;
    vars.reserve(at.size());
    for (const Tensor& p : at) vars.push_back(tape.variable(p));
    Var out = fn(tape, vars);
    if (out.size() != 1) throw std::invalid_argument("grad_check: function output is not scalar, got " + shape_string(out.shape()));
    return std::pair{out, vars};
  };

  Tape tape;
  auto [out, vars] = evaluate(point, tape);
  tape.backward(out);

  double worst = 0.0;
  std::vector<Tensor> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Tensor analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double orig = point[k][i];
      probe[k][i] = orig + eps;
      Tape tp;
      const double fp = evaluate(probe, tp).first.value().item();
      probe[k][i] = orig - eps;
      Tape tm;
      const double fm = evaluate(probe, tm).first.value().item();
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace dcvae
