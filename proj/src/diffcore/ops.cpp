// SPDX-License-Identifier: Apache-2.0
#include "tce/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "tce/error.hpp"

namespace tce {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_mat(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_fail(std::string_view op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_rank2(std::string_view op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank 2, got " + t.shape_string());
}

Graph& graph_of(std::string_view op, Var a) {
  if (!a.valid()) throw ShapeError(std::string(op) + ": invalid input");
  return *a.graph;
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rows() == 1 && a.rows() > 1 && b.cols() == a.cols();
}

template <typename F, typename D>
Var unary(std::string_view op, Var a, F f, D df_from_out) {
  Graph& g = graph_of(op, a);
  const Tensor& x = a.value();
  require_rank2(op, x);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return g.record(op, std::move(y), {a}, [a, df_from_out](Graph& gr, const Tensor& out, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * df_from_out(x[i], out[i]);
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of("matmul", a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  Tensor c = Tensor::matrix(av.rows(), bv.cols());
  as_mat(c).noalias() = as_mat(av) * as_mat(bv);
  return g.record("matmul", std::move(c), {a, b}, [a, b](Graph& gr, const Tensor&, const Tensor& dc) {
    if (Tensor* da = gr.grad_slot(a)) as_mat(*da).noalias() += as_mat(dc) * as_mat(b.value()).transpose();
    if (Tensor* db = gr.grad_slot(b)) as_mat(*db).noalias() += as_mat(a.value()).transpose() * as_mat(dc);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of("transpose", a);
  const Tensor& av = a.value();
  require_rank2("transpose", av);
  Tensor t = Tensor::matrix(av.cols(), av.rows());
  as_mat(t) = as_mat(av).transpose();
  return g.record("transpose", std::move(t), {a}, [a](Graph& gr, const Tensor&, const Tensor& dt) {
    if (Tensor* da = gr.grad_slot(a)) as_mat(*da) += as_mat(dt).transpose();
  });
}

namespace {

Var add_sub(std::string_view op, Var a, Var b, double sign) {
  Graph& g = graph_of(op, a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(op, av);
  require_rank2(op, bv);
  const bool broadcast = is_row_broadcast(av, bv);
  if (!broadcast && !av.same_shape(bv)) shape_fail(op, av, bv);
  Tensor c = av;
  if (broadcast) {
    as_mat(c).rowwise() += sign * as_mat(bv).row(0);
  } else {
    as_mat(c) += sign * as_mat(bv);
  }
  return g.record(op, std::move(c), {a, b}, [a, b, broadcast, sign](Graph& gr, const Tensor&, const Tensor& dc) {
    if (Tensor* da = gr.grad_slot(a)) as_mat(*da) += as_mat(dc);
    if (Tensor* db = gr.grad_slot(b)) {
      if (broadcast) {
        as_mat(*db).row(0) += sign * as_mat(dc).colwise().sum();
      } else {
        as_mat(*db) += sign * as_mat(dc);
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return add_sub("add", a, b, 1.0); }
Var sub(Var a, Var b) { return add_sub("sub", a, b, -1.0); }

Var mul(Var a, Var b) {
  Graph& g = graph_of("mul", a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("mul", av);
  require_rank2("mul", bv);
  const bool broadcast = is_row_broadcast(av, bv);
  if (!broadcast && !av.same_shape(bv)) shape_fail("mul", av, bv);
  Tensor c = av;
  if (broadcast) {
    as_mat(c).array().rowwise() *= as_mat(bv).row(0).array();
  } else {
    as_mat(c).array() *= as_mat(bv).array();
  }
  return g.record("mul", std::move(c), {a, b}, [a, b, broadcast](Graph& gr, const Tensor&, const Tensor& dc) {
    const auto A = as_mat(a.value());
    const auto B = as_mat(b.value());
    const auto D = as_mat(dc);
    if (Tensor* da = gr.grad_slot(a)) {
      if (broadcast) {
        as_mat(*da).array() += D.array().rowwise() * B.row(0).array();
      } else {
        as_mat(*da).array() += D.array() * B.array();
      }
    }
    if (Tensor* db = gr.grad_slot(b)) {
      if (broadcast) {
        as_mat(*db).row(0).array() += (D.array() * A.array()).colwise().sum();
      } else {
        as_mat(*db).array() += D.array() * A.array();
      }
    }
  });
}

Var scale(Var a, double k) { return affine_scalar(a, k, 0.0); }

Var affine_scalar(Var a, double k, double c) {
  Graph& g = graph_of("affine_scalar", a);
  const Tensor& av = a.value();
  require_rank2("affine_scalar", av);
  Tensor y = av;
  for (double& v : y.data()) v = k * v + c;
  return g.record("affine_scalar", std::move(y), {a}, [a, k](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) as_mat(*da) += k * as_mat(dy);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = graph_of("concat_cols", parts.front());
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_rank2("concat_cols", p.value());
    if (p.value().rows() != rows) shape_fail("concat_cols", parts.front().value(), p.value());
    cols += p.value().cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.value().cols();
    as_mat(out).middleCols(offset, w) = as_mat(p.value());
    offset += w;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record("concat_cols", std::move(out), inputs, [inputs](Graph& gr, const Tensor&, const Tensor& dy) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t w = p.value().cols();
      if (Tensor* dp = gr.grad_slot(p)) as_mat(*dp) += as_mat(dy).middleCols(off, w);
      off += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = graph_of("concat_rows", parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_rank2("concat_rows", p.value());
    if (p.value().cols() != cols) shape_fail("concat_rows", parts.front().value(), p.value());
    rows += p.value().rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * cols));
    offset += p.value().rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record("concat_rows", std::move(out), inputs, [inputs](Graph& gr, const Tensor&, const Tensor& dy) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t h = p.value().rows();
      if (Tensor* dp = gr.grad_slot(p)) as_mat(*dp) += as_mat(dy).middleRows(off, h);
      off += h;
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Graph& g = graph_of("slice_cols", a);
  const Tensor& av = a.value();
  require_rank2("slice_cols", av);
  if (count == 0 || start + count > av.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + av.shape_string());
  }
  Tensor out = Tensor::matrix(av.rows(), count);
  as_mat(out) = as_mat(av).middleCols(start, count);
  return g.record("slice_cols", std::move(out), {a}, [a, start, count](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) as_mat(*da).middleCols(start, count) += as_mat(dy);
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Graph& g = graph_of("slice_rows", a);
  const Tensor& av = a.value();
  require_rank2("slice_rows", av);
  if (count == 0 || start + count > av.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + av.shape_string());
  }
  Tensor out = Tensor::matrix(count, av.cols());
  as_mat(out) = as_mat(av).middleRows(start, count);
  return g.record("slice_rows", std::move(out), {a}, [a, start, count](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) as_mat(*da).middleRows(start, count) += as_mat(dy);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = graph_of("gather_rows", a);
  const Tensor& av = a.value();
  require_rank2("gather_rows", av);
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor out = Tensor::matrix(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of " + av.shape_string());
    }
    as_mat(out).row(i) = as_mat(av).row(rows[i]);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.record("gather_rows", std::move(out), {a}, [a, idx](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) {
      for (std::size_t i = 0; i < idx.size(); ++i) as_mat(*da).row(idx[i]) += as_mat(dy).row(i);
    }
  });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  Graph& g = graph_of("relu", a);
  if (g.tracking_kinks()) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) g.note_kink(x[i], x[i] > 0.0 ? 1 : 0);
  }
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericalError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax_rows(Var a, const std::vector<bool>* keep) {
  Graph& g = graph_of("softmax_rows", a);
  const Tensor& x = a.value();
  require_rank2("softmax_rows", x);
  const std::size_t n = x.cols();
  if (keep != nullptr && keep->size() != n) {
    throw ShapeError("softmax_rows: mask length " + std::to_string(keep->size()) + " vs shape " +
                     x.shape_string());
  }
  auto kept = [keep](std::size_t j) { return keep == nullptr || (*keep)[j]; };
  Tensor y(x.shape(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (kept(j)) mx = std::max(mx, x(r, j));
    }
    if (!std::isfinite(mx)) throw ShapeError("softmax_rows: every position masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!kept(j)) continue;
      y(r, j) = std::exp(x(r, j) - mx);
      sum += y(r, j);
    }
    for (std::size_t j = 0; j < n; ++j) y(r, j) /= sum;
  }
  return g.record("softmax_rows", std::move(y), {a}, [a](Graph& gr, const Tensor& y, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) {
      const auto Y = as_mat(y);
      const auto D = as_mat(dy);
      const Eigen::VectorXd dots = (Y.array() * D.array()).rowwise().sum();
      as_mat(*da).array() += Y.array() * (D.array().colwise() - dots.array());
    }
  });
}

Var scaled_dot_product(Var q, Var k) {
  const double d = static_cast<double>(q.value().cols());
  return scale(matmul(q, transpose(k)), 1.0 / std::sqrt(d));
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of("layer_norm_rows", x);
  const Tensor& xv = x.value();
  require_rank2("layer_norm_rows", xv);
  const std::size_t n = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n) shape_fail("layer_norm_rows", xv, gain.value());
  if (bias.value().rows() != 1 || bias.value().cols() != n) shape_fail("layer_norm_rows", xv, bias.value());

  const auto X = as_mat(xv);
  const Eigen::VectorXd mean = X.rowwise().mean();
  RowMat centered = X.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
  Tensor xhat(xv.shape());
  as_mat(xhat) = centered.array().colwise() * inv_std.array();
  Tensor y(xv.shape());
  as_mat(y) = (as_mat(xhat).array().rowwise() * as_mat(gain.value()).row(0).array()).rowwise() +
              as_mat(bias.value()).row(0).array();

  return g.record("layer_norm_rows", std::move(y), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std, n](Graph& gr, const Tensor&, const Tensor& dy) {
                    const auto D = as_mat(dy);
                    const auto XH = as_mat(xhat);
                    if (Tensor* dg = gr.grad_slot(gain)) as_mat(*dg).row(0) += (D.array() * XH.array()).colwise().sum().matrix();
                    if (Tensor* db = gr.grad_slot(bias)) as_mat(*db).row(0) += D.colwise().sum();
                    if (Tensor* dx = gr.grad_slot(x)) {
                      const RowMat dxhat = D.array().rowwise() * as_mat(gain.value()).row(0).array();
                      const Eigen::VectorXd s1 = dxhat.rowwise().sum();
                      const Eigen::VectorXd s2 = (dxhat.array() * XH.array()).rowwise().sum();
                      const double nn = static_cast<double>(n);
                      RowMat t = (nn * dxhat).array().colwise() - s1.array();
                      t.array() -= XH.array().colwise() * s2.array();
                      as_mat(*dx).array() += t.array().colwise() * (inv_std.array() / nn);
                    }
                  });
}

Var batch_norm(Var x, Var gain, Var bias, const BatchNormState& state, bool train) {
  Graph& g = graph_of("batch_norm", x);
  const Tensor& xv = x.value();
  require_rank2("batch_norm", xv);
  const std::size_t n = xv.cols();
  const std::size_t b = xv.rows();
  if (gain.value().cols() != n || bias.value().cols() != n) shape_fail("batch_norm", xv, gain.value());
  if (state.running_mean == nullptr || state.running_var == nullptr ||
      state.running_mean->cols() != n || state.running_var->cols() != n) {
    throw ShapeError("batch_norm: running statistics missing or mis-shaped for " + xv.shape_string());
  }

  const auto X = as_mat(xv);
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
  if (train) {
    mean = X.colwise().mean();
    var = (X.rowwise() - mean).array().square().colwise().mean();
    const double unbiased = b > 1 ? static_cast<double>(b) / static_cast<double>(b - 1) : 1.0;
    auto rm = as_mat(*state.running_mean).row(0);
    auto rv = as_mat(*state.running_var).row(0);
    rm = (1.0 - state.momentum) * rm + state.momentum * mean;
    rv = (1.0 - state.momentum) * rv + state.momentum * unbiased * var;
  } else {
    mean = as_mat(*state.running_mean).row(0);
    var = as_mat(*state.running_var).row(0);
  }
  const Eigen::RowVectorXd inv_std = (var.array() + state.eps).rsqrt();
  Tensor xhat(xv.shape());
  as_mat(xhat) = (X.rowwise() - mean).array().rowwise() * inv_std.array();
  Tensor y(xv.shape());
  as_mat(y) = (as_mat(xhat).array().rowwise() * as_mat(gain.value()).row(0).array()).rowwise() +
              as_mat(bias.value()).row(0).array();

  return g.record("batch_norm", std::move(y), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std, train, b](Graph& gr, const Tensor&, const Tensor& dy) {
                    const auto D = as_mat(dy);
                    const auto XH = as_mat(xhat);
                    if (Tensor* dg = gr.grad_slot(gain)) as_mat(*dg).row(0) += (D.array() * XH.array()).colwise().sum().matrix();
                    if (Tensor* db = gr.grad_slot(bias)) as_mat(*db).row(0) += D.colwise().sum();
                    if (Tensor* dx = gr.grad_slot(x)) {
                      const RowMat dxhat = D.array().rowwise() * as_mat(gain.value()).row(0).array();
                      if (!train) {
                        as_mat(*dx).array() += dxhat.array().rowwise() * inv_std.array();
                        return;
                      }
                      const double m = static_cast<double>(b);
                      const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
                      const Eigen::RowVectorXd s2 = (dxhat.array() * XH.array()).colwise().sum();
                      RowMat t = (m * dxhat).rowwise() - s1;
                      t.array() -= XH.array().rowwise() * s2.array();
                      as_mat(*dx).array() += t.array().rowwise() * (inv_std.array() / m);
                    }
                  });
}

Var sum_all(Var a) {
  Graph& g = graph_of("sum_all", a);
  require_rank2("sum_all", a.value());
  return g.record("sum_all", Tensor::scalar(as_mat(a.value()).sum()), {a},
                  [a](Graph& gr, const Tensor&, const Tensor& dy) {
                    if (Tensor* da = gr.grad_slot(a)) as_mat(*da).array() += dy[0];
                  });
}

Var mean_rows(Var a) {
  Graph& g = graph_of("mean_rows", a);
  const Tensor& av = a.value();
  require_rank2("mean_rows", av);
  Tensor y = Tensor::matrix(1, av.cols());
  as_mat(y).row(0) = as_mat(av).colwise().mean();
  return g.record("mean_rows", std::move(y), {a}, [a](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) {
      const double inv = 1.0 / static_cast<double>(da->rows());
      as_mat(*da).rowwise() += inv * as_mat(dy).row(0);
    }
  });
}

Var max_rows(Var a) {
  Graph& g = graph_of("max_rows", a);
  const Tensor& av = a.value();
  require_rank2("max_rows", av);
  Tensor y = Tensor::matrix(1, av.cols());
  std::vector<std::size_t> arg(av.cols(), 0);
  for (std::size_t j = 0; j < av.cols(); ++j) {
    double best = av(0, j);
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r < av.rows(); ++r) {
      if (av(r, j) > best) {
        second = best;
        best = av(r, j);
        arg[j] = r;
      } else {
        second = std::max(second, av(r, j));
      }
    }
    y(0, j) = best;
    if (av.rows() > 1) g.note_kink(best - second, arg[j]);
  }
  return g.record("max_rows", std::move(y), {a}, [a, arg](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) {
      for (std::size_t j = 0; j < arg.size(); ++j) (*da)(arg[j], j) += dy(0, j);
    }
  });
}

Var l2_normalize_rows(Var a) {
  Graph& g = graph_of("l2_normalize_rows", a);
  const Tensor& av = a.value();
  require_rank2("l2_normalize_rows", av);
  const Eigen::VectorXd norms = as_mat(av).rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (norms[r] == 0.0) throw NumericalError("cosine: zero-norm vector (degenerate embedding) at row " + std::to_string(r));
  }
  Tensor y(av.shape());
  as_mat(y) = as_mat(av).array().colwise() / norms.array();
  return g.record("l2_normalize_rows", std::move(y), {a}, [a, norms](Graph& gr, const Tensor& y, const Tensor& dy) {
    if (Tensor* da = gr.grad_slot(a)) {
      const auto Y = as_mat(y);
      const auto D = as_mat(dy);
      const Eigen::VectorXd dots = (Y.array() * D.array()).rowwise().sum();
      as_mat(*da).array() += (D.array() - Y.array().colwise() * dots.array()).colwise() / norms.array();
    }
  });
}

Var straight_through(Var soft, Tensor hard) {
  Graph& g = graph_of("straight_through", soft);
  if (!soft.value().same_shape(hard)) shape_fail("straight_through", soft.value(), hard);
  return g.record("straight_through", std::move(hard), {soft}, [soft](Graph& gr, const Tensor&, const Tensor& dy) {
    if (Tensor* ds = gr.grad_slot(soft)) as_mat(*ds) += as_mat(dy);
  });
}

}  // namespace tce
