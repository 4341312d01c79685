#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vidreplay/random.hpp"
#include "vidreplay/tensor.hpp"

namespace vidreplay::ops {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kLogClamp = 1e-12;

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + to_string(t.shape()));
  }
}

inline ShapeError mismatch(const char* op, const Tensor& a, const Tensor& b) {
  return ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                    to_string(b.shape()));
}

inline ConstMap view(const Tensor& t) {
  return ConstMap(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

inline ConstMap view(const Buffer& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MutMap view(double* p, std::size_t rows, std::size_t cols) {
  return MutMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Operand b either matches a exactly or is a single row broadcast over a's rows.
inline bool broadcast_row(const char* op, const Tensor& a, const Tensor& b) {
  require_matrix(op, a);
  require_matrix(op, b);
  if (a.shape() == b.shape()) return false;
  if (b.rows() == 1 && b.cols() == a.cols()) return true;
  throw mismatch(op, a, b);
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D df) {
  Buffer out(a.size());
  auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return vidreplay::detail::make_result(op, a.shape(), std::move(out), {&a},
                                        [df](vidreplay::detail::Node& self) {
                                          double* ga = vidreplay::detail::input_grad(self, 0);
                                          if (!ga) return;
                                          const auto& x = self.inputs[0]->value;
                                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                            ga[i] += self.grad[i] * df(x[i], self.value[i]);
                                          }
                                        });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.cols() != b.rows()) throw detail::mismatch("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Buffer out(m * n);
  detail::view(out.data(), m, n).noalias() = detail::view(a) * detail::view(b);
  return vidreplay::detail::make_result(
      "matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](vidreplay::detail::Node& self) {
        auto g = detail::view(self.grad, m, n);
        if (double* ga = vidreplay::detail::input_grad(self, 0)) {
          detail::view(ga, m, k).noalias() += g * detail::view(self.inputs[1]->value, k, n).transpose();
        }
        if (double* gb = vidreplay::detail::input_grad(self, 1)) {
          detail::view(gb, k, n).noalias() += detail::view(self.inputs[0]->value, m, k).transpose() * g;
        }
      });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool bcast = detail::broadcast_row("add", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bcast ? bv[j] : bv[i * c + j];
  return vidreplay::detail::make_result(
      "add", a.shape(), std::move(out), {&a, &b}, [bcast, r, c](vidreplay::detail::Node& self) {
        if (double* ga = vidreplay::detail::input_grad(self, 0)) {
          for (std::size_t i = 0; i < r * c; ++i) ga[i] += self.grad[i];
        }
        if (double* gb = vidreplay::detail::input_grad(self, 1)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[bcast ? j : i * c + j] += self.grad[i * c + j];
        }
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const bool bcast = detail::broadcast_row("sub", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] -= bcast ? bv[j] : bv[i * c + j];
  return vidreplay::detail::make_result(
      "sub", a.shape(), std::move(out), {&a, &b}, [bcast, r, c](vidreplay::detail::Node& self) {
        if (double* ga = vidreplay::detail::input_grad(self, 0)) {
          for (std::size_t i = 0; i < r * c; ++i) ga[i] += self.grad[i];
        }
        if (double* gb = vidreplay::detail::input_grad(self, 1)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[bcast ? j : i * c + j] -= self.grad[i * c + j];
        }
      });
}

// Element-wise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  const bool bcast = detail::broadcast_row("mul", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= bcast ? bv[j] : bv[i * c + j];
  return vidreplay::detail::make_result(
      "mul", a.shape(), std::move(out), {&a, &b}, [bcast, r, c](vidreplay::detail::Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        double* ga = vidreplay::detail::input_grad(self, 0);
        double* gb = vidreplay::detail::input_grad(self, 1);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            const std::size_t kb = bcast ? j : k;
            if (ga) ga[k] += self.grad[k] * bv[kb];
            if (gb) gb[kb] += self.grad[k] * av[k];
          }
        }
      });
}

inline Tensor scale(const Tensor& a, double factor) {
  return detail::unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

inline Tensor add_scalar(const Tensor& a, double offset) {
  return detail::unary(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) {
        const double e = std::exp(-std::abs(x));
        return x >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// Subgradient at 0 taken as 0.
inline Tensor relu(const Tensor& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& a, double slope = kLeakySlope) {
  return detail::unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return vidreplay::detail::make_result("sum", {1, 1}, {total}, {&a}, [](vidreplay::detail::Node& self) {
    if (double* ga = vidreplay::detail::input_grad(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// Sum across columns: [r,c] -> [r,1].
inline Tensor row_sums(const Tensor& a) {
  detail::require_matrix("row_sums", a);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(r, 0.0);
  auto v = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += v[i * c + j];
  return vidreplay::detail::make_result("row_sums", {r, 1}, std::move(out), {&a},
                                        [r, c](vidreplay::detail::Node& self) {
                                          if (double* ga = vidreplay::detail::input_grad(self, 0)) {
                                            for (std::size_t i = 0; i < r; ++i)
                                              for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[i];
                                          }
                                        });
}

// Row-wise softmax.
inline Tensor softmax(const Tensor& a) {
  detail::require_matrix("softmax", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0) throw ShapeError("softmax: zero columns");
  Buffer out(r * c);
  auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = v.data() + i * c;
    const double top = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(row[j] - top));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return vidreplay::detail::make_result(
      "softmax", a.shape(), std::move(out), {&a}, [r, c](vidreplay::detail::Node& self) {
        double* ga = vidreplay::detail::input_grad(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            ga[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
          }
        }
      });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_cols", p);
    if (p.rows() != r) throw detail::mismatch("concat_cols", parts.front(), p);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return vidreplay::detail::make_result(
      "concat_cols", {r, total}, std::move(out), parts,
      [r, total, widths](vidreplay::detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (double* g = vidreplay::detail::input_grad(self, k)) {
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
          }
          off += widths[k];
        }
      });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t c = parts.front().cols();
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_rows", p);
    if (p.cols() != c) throw detail::mismatch("concat_rows", parts.front(), p);
    sizes.push_back(p.size());
    rows += p.rows();
  }
  Buffer out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return vidreplay::detail::make_result("concat_rows", {rows, c}, std::move(out), parts,
                                        [sizes](vidreplay::detail::Node& self) {
                                          std::size_t off = 0;
                                          for (std::size_t k = 0; k < sizes.size(); ++k) {
                                            if (double* g = vidreplay::detail::input_grad(self, k)) {
                                              for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
                                            }
                                            off += sizes[k];
                                          }
                                        });
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  detail::require_matrix("slice_cols", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (start + count > c) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") out of range for " + to_string(a.shape()));
  }
  Buffer out(r * count);
  auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * c + start, count, out.data() + i * count);
  return vidreplay::detail::make_result("slice_cols", {r, count}, std::move(out), {&a},
                                        [r, c, start, count](vidreplay::detail::Node& self) {
                                          if (double* ga = vidreplay::detail::input_grad(self, 0)) {
                                            for (std::size_t i = 0; i < r; ++i)
                                              for (std::size_t j = 0; j < count; ++j)
                                                ga[i * c + start + j] += self.grad[i * count + j];
                                          }
                                        });
}

// Selects rows by index (repeats allowed); backward scatters into the source.
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
  detail::require_matrix("gather_rows", a);
  const std::size_t c = a.cols();
  Buffer out(index.size() * c);
  auto v = a.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                       to_string(a.shape()));
    }
    std::copy_n(v.data() + index[i] * c, c, out.data() + i * c);
  }
  const std::size_t n = index.size();
  return vidreplay::detail::make_result("gather_rows", {n, c}, std::move(out), {&a},
                                        [c, index = std::move(index)](vidreplay::detail::Node& self) {
                                          if (double* ga = vidreplay::detail::input_grad(self, 0)) {
                                            for (std::size_t i = 0; i < index.size(); ++i)
                                              for (std::size_t j = 0; j < c; ++j)
                                                ga[index[i] * c + j] += self.grad[i * c + j];
                                          }
                                        });
}

// Dimension-wise maximum over the rows: [r,c] -> [1,c]. The gradient of each
// column goes entirely to its argmax row, ties resolved toward the lowest row.
inline Tensor max_rows(const Tensor& a) {
  detail::require_matrix("max_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw ShapeError("max_rows: empty set");
  Buffer out(c);
  std::vector<std::size_t> arg(c, 0);
  auto v = a.values();
  for (std::size_t j = 0; j < c; ++j) {
    out[j] = v[j];
    for (std::size_t i = 1; i < r; ++i) {
      if (v[i * c + j] > out[j]) {
        out[j] = v[i * c + j];
        arg[j] = i;
      }
    }
  }
  return vidreplay::detail::make_result("max_rows", {1, c}, std::move(out), {&a},
                                        [c, arg = std::move(arg)](vidreplay::detail::Node& self) {
                                          if (double* ga = vidreplay::detail::input_grad(self, 0)) {
                                            for (std::size_t j = 0; j < c; ++j) ga[arg[j] * c + j] += self.grad[j];
                                          }
                                        });
}

// Dimension-wise maximum over a set of equally shaped tensors.
inline Tensor max_over(const std::vector<Tensor>& set) {
  if (set.empty()) throw ShapeError("max_over: empty set");
  const Shape& shape = set.front().shape();
  for (const auto& t : set) {
    if (t.shape() != shape) throw detail::mismatch("max_over", set.front(), t);
  }
  const std::size_t n = set.front().size();
  Buffer out(set.front().values().begin(), set.front().values().end());
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t k = 1; k < set.size(); ++k) {
    auto v = set[k].values();
    for (std::size_t i = 0; i < n; ++i) {
      if (v[i] > out[i]) {
        out[i] = v[i];
        arg[i] = k;
      }
    }
  }
  return vidreplay::detail::make_result("max_over", shape, std::move(out), set,
                                        [arg = std::move(arg)](vidreplay::detail::Node& self) {
                                          for (std::size_t i = 0; i < arg.size(); ++i) {
                                            if (double* g = vidreplay::detail::input_grad(self, arg[i])) {
                                              g[i] += self.grad[i];
                                            }
                                          }
                                        });
}

// Inverted dropout: kept units are scaled by 1/(1-rate) at train time so the
// evaluation path is the identity.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidInput("dropout: rate must lie in [0,1)");
  if (!training || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  Buffer mask(a.size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Buffer out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return vidreplay::detail::make_result("dropout", a.shape(), std::move(out), {&a},
                                        [mask = std::move(mask)](vidreplay::detail::Node& self) {
                                          if (double* ga = vidreplay::detail::input_grad(self, 0)) {
                                            for (std::size_t i = 0; i < mask.size(); ++i) ga[i] += self.grad[i] * mask[i];
                                          }
                                        });
}

// Per-row cross-entropy against class indices, given probabilities:
// -log(max(p[y], 1e-12)). Returns [r,1].
inline Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
  detail::require_matrix("cross_entropy", probs);
  const std::size_t r = probs.rows(), c = probs.cols();
  if (labels.size() != r) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(r) +
                     " rows");
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  Buffer out(r);
  auto p = probs.values();
  for (std::size_t i = 0; i < r; ++i) {
    if (y[i] >= c) {
      throw InvalidInput("cross_entropy: class index " + std::to_string(y[i]) + " >= " + std::to_string(c));
    }
    out[i] = -std::log(std::max(p[i * c + y[i]], kLogClamp));
  }
  return vidreplay::detail::make_result("cross_entropy", {r, 1}, std::move(out), {&probs},
                                        [c, y = std::move(y)](vidreplay::detail::Node& self) {
                                          double* gp = vidreplay::detail::input_grad(self, 0);
                                          if (!gp) return;
                                          const auto& p = self.inputs[0]->value;
                                          for (std::size_t i = 0; i < y.size(); ++i) {
                                            const double pi = p[i * c + y[i]];
                                            if (pi > kLogClamp) gp[i * c + y[i]] -= self.grad[i] / pi;
                                          }
                                        });
}

// Per-row squared error (pred - target)^2 for single-column predictions.
inline Tensor squared_error(const Tensor& pred, std::span<const double> target) {
  detail::require_matrix("squared_error", pred);
  if (pred.cols() != 1 || target.size() != pred.rows()) {
    throw ShapeError("squared_error: prediction " + to_string(pred.shape()) + " vs " +
                     std::to_string(target.size()) + " targets");
  }
  return square(sub(pred, Tensor::from_buffer({pred.rows(), 1}, Buffer(target.begin(), target.end()))));
}

// Per-row sum over j of mu^2 + exp(lv) - 1 - lv, for mean mu and log-variance
// lv of the same shape. Returns [r,1]. expm1 keeps each term >= 0 in floating
// point, not only analytically.
inline Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar) {
  detail::require_matrix("gaussian_kl", mu);
  detail::require_matrix("gaussian_kl", logvar);
  if (mu.shape() != logvar.shape()) throw detail::mismatch("gaussian_kl", mu, logvar);
  const std::size_t r = mu.rows(), c = mu.cols();
  Buffer out(r, 0.0);
  auto m = mu.values();
  auto lv = logvar.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double x = lv[i * c + j];
      out[i] += m[i * c + j] * m[i * c + j] + std::max(0.0, std::expm1(x) - x);
    }
  return vidreplay::detail::make_result("gaussian_kl", {r, 1}, std::move(out), {&mu, &logvar},
                                        [r, c](vidreplay::detail::Node& self) {
                                          const auto& m = self.inputs[0]->value;
                                          const auto& lv = self.inputs[1]->value;
                                          double* gm = vidreplay::detail::input_grad(self, 0);
                                          double* gl = vidreplay::detail::input_grad(self, 1);
                                          for (std::size_t i = 0; i < r; ++i)
                                            for (std::size_t j = 0; j < c; ++j) {
                                              const std::size_t k = i * c + j;
                                              if (gm) gm[k] += self.grad[i] * 2.0 * m[k];
                                              if (gl) gl[k] += self.grad[i] * std::expm1(lv[k]);
                                            }
                                        });
}

// One GRU step over a batch, gate order (reset, update, candidate):
//   r = s(x Wx_r + bx_r + h Wh_r + bh_r)
//   z = s(x Wx_z + bx_z + h Wh_z + bh_z)
//   n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
// x:[B,I] h:[B,H] wx:[I,3H] wh:[H,3H] bx,bh:[1,3H].
inline Tensor gru_cell(const Tensor& x, const Tensor& h, const Tensor& wx, const Tensor& wh, const Tensor& bx,
                       const Tensor& bh) {
  for (const Tensor* t : {&x, &h, &wx, &wh, &bx, &bh}) detail::require_matrix("gru_cell", *t);
  const std::size_t batch = x.rows(), in = x.cols(), hid = h.cols();
  if (h.rows() != batch) throw detail::mismatch("gru_cell", x, h);
  if (wx.rows() != in || wx.cols() != 3 * hid) throw detail::mismatch("gru_cell", x, wx);
  if (wh.rows() != hid || wh.cols() != 3 * hid) throw detail::mismatch("gru_cell", h, wh);
  if (bx.rows() != 1 || bx.cols() != 3 * hid) throw detail::mismatch("gru_cell", wx, bx);
  if (bh.rows() != 1 || bh.cols() != 3 * hid) throw detail::mismatch("gru_cell", wh, bh);

  const std::size_t g3 = 3 * hid;
  detail::RowMatrix gx = detail::view(x) * detail::view(wx);
  detail::RowMatrix gh = detail::view(h) * detail::view(wh);
  gx.rowwise() += detail::view(bx).row(0);
  gh.rowwise() += detail::view(bh).row(0);

  // Saved activations for backward: r, z, n, and the hidden-side candidate
  // pre-activation. Skipped when no graph will be recorded.
  bool record = false;
  if (vidreplay::detail::grad_enabled())
    for (const Tensor* t : {&x, &h, &wx, &wh, &bx, &bh}) record = record || t->requires_grad();
  Buffer saved(record ? 4 * batch * hid : 0);
  Buffer out(batch * hid);
  auto hv = h.values();
  auto sig = [](double v) {
    const double e = std::exp(-std::abs(v));
    return v >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < hid; ++j) {
      const double r = sig(gx(b, j) + gh(b, j));
      const double z = sig(gx(b, hid + j) + gh(b, hid + j));
      const double hn = gh(b, 2 * hid + j);
      const double n = std::tanh(gx(b, 2 * hid + j) + r * hn);
      const std::size_t k = b * hid + j;
      if (record) {
        saved[k] = r;
        saved[batch * hid + k] = z;
        saved[2 * batch * hid + k] = n;
        saved[3 * batch * hid + k] = hn;
      }
      out[k] = (1.0 - z) * n + z * hv[k];
    }
  }
  return vidreplay::detail::make_result(
      "gru_cell", {batch, hid}, std::move(out), {&x, &h, &wx, &wh, &bx, &bh},
      [batch, in, hid, g3, saved = std::move(saved)](vidreplay::detail::Node& self) {
        const std::size_t bh_size = batch * hid;
        const auto& hprev = self.inputs[1]->value;
        detail::RowMatrix dgx(batch, g3), dgh(batch, g3);
        Buffer dh_direct(bh_size);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < hid; ++j) {
            const std::size_t k = b * hid + j;
            const double r = saved[k], z = saved[bh_size + k], n = saved[2 * bh_size + k];
            const double hn = saved[3 * bh_size + k];
            const double g = self.grad[k];
            const double dn = g * (1.0 - z);
            const double dz = g * (hprev[k] - n);
            dh_direct[k] = g * z;
            const double dn_pre = dn * (1.0 - n * n);
            const double dr_pre = dn_pre * hn * r * (1.0 - r);
            const double dz_pre = dz * z * (1.0 - z);
            dgx(b, j) = dr_pre;
            dgx(b, hid + j) = dz_pre;
            dgx(b, 2 * hid + j) = dn_pre;
            dgh(b, j) = dr_pre;
            dgh(b, hid + j) = dz_pre;
            dgh(b, 2 * hid + j) = dn_pre * r;
          }
        }
        if (double* g = vidreplay::detail::input_grad(self, 0)) {
          detail::view(g, batch, in).noalias() += dgx * detail::view(self.inputs[2]->value, in, g3).transpose();
        }
        if (double* g = vidreplay::detail::input_grad(self, 1)) {
          auto gm = detail::view(g, batch, hid);
          gm.noalias() += dgh * detail::view(self.inputs[3]->value, hid, g3).transpose();
          for (std::size_t k = 0; k < bh_size; ++k) g[k] += dh_direct[k];
        }
        if (double* g = vidreplay::detail::input_grad(self, 2)) {
          detail::view(g, in, g3).noalias() += detail::view(self.inputs[0]->value, batch, in).transpose() * dgx;
        }
        if (double* g = vidreplay::detail::input_grad(self, 3)) {
          detail::view(g, hid, g3).noalias() += detail::view(hprev, batch, hid).transpose() * dgh;
        }
        if (double* g = vidreplay::detail::input_grad(self, 4)) {
          detail::view(g, 1, g3) += dgx.colwise().sum();
        }
        if (double* g = vidreplay::detail::input_grad(self, 5)) {
          detail::view(g, 1, g3) += dgh.colwise().sum();
        }
      });
}

}  // namespace vidreplay::ops
