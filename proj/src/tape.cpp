#include "eg/tape.hpp"

#include <algorithm>
#include <cmath>

#include "eg/error.hpp"

namespace eg::ad {

namespace {

constexpr double kLogClamp = 1e-300;

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractError("variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("variables belong to different tapes");
  return tape_of(a);
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto in = a.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

// Unary elementwise op whose local derivative depends on input and output values.
template <typename F, typename D>
Var unary(const char* name, Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  Matrix out = map(t.value(a), f);
  return t.record(name, out, {a}, [&t, a, out, dfdx](const Matrix& g) {
    const Matrix& x = t.value(a);
    Matrix d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i)
      d.values()[i] = g.values()[i] * dfdx(x.values()[i], out.values()[i]);
    return std::vector<Matrix>{std::move(d)};
  });
}

Matrix normalized_rows_checked(const Matrix& a, const char* op) {
  try {
    return normalize_rows(a);
  } catch (const DegenerateVectorError& e) {
    throw DegenerateVectorError(std::string(op) + ": " + e.what());
  }
}

}  // namespace

const Matrix& Gradients::operator[](Var v) const {
  if (v.id >= grads_.size()) throw ContractError("gradient requested for unknown node");
  return grads_[v.id];
}

Var Tape::leaf(Matrix value) { return record("leaf", std::move(value), {}, nullptr); }

Var Tape::record(std::string op, Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(op + ": non-finite result");
  Node node;
  node.op = std::move(op);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this || in.id >= nodes_.size()) {
      throw ContractError(node.op + ": input does not precede this node on the tape");
    }
    node.inputs.push_back(in.id);
  }
  node.backward = std::move(backward);
  const Var v{this, nodes_.size(), value.rows(), value.cols()};
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return v;
}

const Matrix& Tape::value(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractError("variable not on this tape");
  return nodes_[v.id].value;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) {
    throw ContractError("expected a scalar, got " + shape_string(m));
  }
  return m(0, 0);
}

Gradients Tape::backward(Var loss) const {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward requires a 1x1 loss, got " + shape_string(lv));
  }
  std::vector<Matrix> grads(nodes_.size());
  std::vector<bool> touched(nodes_.size(), false);
  grads[loss.id] = Matrix(1, 1, 1.0);
  touched[loss.id] = true;

  for (std::size_t k = loss.id + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!touched[k] || !node.backward) continue;
    std::vector<Matrix> local = node.backward(grads[k]);
    if (local.size() != node.inputs.size()) {
      throw ContractError(node.op + ": backward produced the wrong number of gradients");
    }
    for (std::size_t i = 0; i < local.size(); ++i) {
      const std::size_t in = node.inputs[i];
      if (!touched[in]) {
        grads[in] = std::move(local[i]);
        touched[in] = true;
      } else {
        grads[in] = eg::add(grads[in], local[i]);
      }
    }
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (!touched[k]) grads[k] = Matrix(nodes_[k].value.rows(), nodes_[k].value.cols());
  }
  return Gradients(std::move(grads));
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record("matmul", eg::matmul(t.value(a), t.value(b)), {a, b}, [&t, a, b](const Matrix& g) {
    return std::vector<Matrix>{eg::matmul(g, eg::transpose(t.value(b))),
                               eg::matmul(eg::transpose(t.value(a)), g)};
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.record("transpose", eg::transpose(t.value(a)), {a},
                  [](const Matrix& g) { return std::vector<Matrix>{eg::transpose(g)}; });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record("add", eg::add(t.value(a), t.value(b)), {a, b},
                  [](const Matrix& g) { return std::vector<Matrix>{g, g}; });
}

Var subtract(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record("subtract", eg::subtract(t.value(a), t.value(b)), {a, b},
                  [](const Matrix& g) { return std::vector<Matrix>{g, eg::scale(g, -1.0)}; });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record("hadamard", eg::hadamard(t.value(a), t.value(b)), {a, b},
                  [&t, a, b](const Matrix& g) {
                    return std::vector<Matrix>{eg::hadamard(g, t.value(b)),
                                               eg::hadamard(g, t.value(a))};
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.record("scale", eg::scale(t.value(a), s), {a},
                  [s](const Matrix& g) { return std::vector<Matrix>{eg::scale(g, s)}; });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = map(t.value(a), [s](double x) { return x + s; });
  return t.record("add_scalar", std::move(out), {a},
                  [](const Matrix& g) { return std::vector<Matrix>{g}; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(std::max(x, kLogClamp)); },
      [](double x, double) { return x < kLogClamp ? 0.0 : 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var a) {
  return unary(
      "log_sigmoid", a,
      [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        // d/dx log(sigmoid(x)) = sigmoid(-x)
        if (x <= 0) return 1.0 / (1.0 + std::exp(x));
        const double e = std::exp(-x);
        return e / (1.0 + e);
      });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var power(Var a, double p) {
  return unary(
      "power", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  const std::size_t r = a.rows, c = a.cols;
  return t.record("sum", Matrix(1, 1, s), {a},
                  [r, c](const Matrix& g) { return std::vector<Matrix>{Matrix(r, c, g(0, 0))}; });
}

Var mean(Var a) {
  const std::size_t n = a.rows * a.cols;
  if (n == 0) throw DimensionError("mean of an empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = t.value(a);
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double v : x.row(i)) out(i, 0) += v;
  const std::size_t c = a.cols;
  return t.record("row_sum", std::move(out), {a}, [c](const Matrix& g) {
    Matrix d(g.rows(), c);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (double& v : d.row(i)) v = g(i, 0);
    return std::vector<Matrix>{std::move(d)};
  });
}

Var row_mean(Var a) {
  if (a.cols == 0) throw DimensionError("row_mean of a matrix with no columns");
  return scale(row_sum(a), 1.0 / static_cast<double>(a.cols));
}

Var frobenius_norm(Var a) {
  Tape& t = tape_of(a);
  const double n = eg::frobenius_norm(t.value(a));
  return t.record("frobenius_norm", Matrix(1, 1, n), {a}, [&t, a, n](const Matrix& g) {
    if (n == 0.0) return std::vector<Matrix>{Matrix(a.rows, a.cols)};
    return std::vector<Matrix>{eg::scale(t.value(a), g(0, 0) / n)};
  });
}

Var concat_rows(Var top, Var bottom) {
  Tape& t = tape_of(top, bottom);
  const std::size_t r1 = top.rows, r2 = bottom.rows;
  const std::size_t c1 = top.cols, c2 = bottom.cols;
  return t.record("concat_rows", eg::vstack(t.value(top), t.value(bottom)), {top, bottom},
                  [r1, r2, c1, c2](const Matrix& g) {
                    Matrix a(r1, c1), b(r2, c2);
                    for (std::size_t i = 0; i < r1; ++i)
                      std::copy(g.row(i).begin(), g.row(i).end(), a.row(i).begin());
                    for (std::size_t i = 0; i < r2; ++i)
                      std::copy(g.row(r1 + i).begin(), g.row(r1 + i).end(), b.row(i).begin());
                    return std::vector<Matrix>{std::move(a), std::move(b)};
                  });
}

Var concat_cols(Var left, Var right) {
  Tape& t = tape_of(left, right);
  const Matrix& l = t.value(left);
  const Matrix& r = t.value(right);
  if (l.rows() != r.rows() && l.cols() != 0 && r.cols() != 0) {
    throw DimensionError("concat_cols: row counts differ " + shape_string(l) + " / " +
                         shape_string(r));
  }
  const std::size_t rows = l.cols() != 0 ? l.rows() : r.rows();
  const std::size_t c1 = l.cols(), c2 = r.cols();
  Matrix out(rows, c1 + c2);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < c1; ++j) out(i, j) = l(i, j);
    for (std::size_t j = 0; j < c2; ++j) out(i, c1 + j) = r(i, j);
  }
  const std::size_t lr = l.rows(), rr = r.rows();
  return t.record("concat_cols", std::move(out), {left, right},
                  [rows, c1, c2, lr, rr](const Matrix& g) {
                    Matrix a(lr, c1), b(rr, c2);
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t j = 0; j < c1; ++j) a(i, j) = g(i, j);
                      for (std::size_t j = 0; j < c2; ++j) b(i, j) = g(i, c1 + j);
                    }
                    return std::vector<Matrix>{std::move(a), std::move(b)};
                  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  if (begin + count > a.rows) throw DimensionError("slice_rows: range exceeds row count");
  const Matrix& x = t.value(a);
  Matrix out(count, x.cols());
  for (std::size_t i = 0; i < count; ++i)
    std::copy(x.row(begin + i).begin(), x.row(begin + i).end(), out.row(i).begin());
  const std::size_t rows = a.rows, cols = a.cols;
  return t.record("slice_rows", std::move(out), {a}, [rows, cols, begin, count](const Matrix& g) {
    Matrix d(rows, cols);
    for (std::size_t i = 0; i < count; ++i)
      std::copy(g.row(i).begin(), g.row(i).end(), d.row(begin + i).begin());
    return std::vector<Matrix>{std::move(d)};
  });
}

Var pick(Var a, std::span<const std::size_t> column_per_row) {
  Tape& t = tape_of(a);
  if (column_per_row.size() != a.rows) {
    throw DimensionError("pick: need one column index per row");
  }
  const Matrix& x = t.value(a);
  std::vector<std::size_t> idx(column_per_row.begin(), column_per_row.end());
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.cols()) throw DimensionError("pick: column index out of range");
    out(i, 0) = x(i, idx[i]);
  }
  const std::size_t rows = a.rows, cols = a.cols;
  return t.record("pick", std::move(out), {a}, [rows, cols, idx](const Matrix& g) {
    Matrix d(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) d(i, idx[i]) = g(i, 0);
    return std::vector<Matrix>{std::move(d)};
  });
}

Var scale_rows(Var a, Var v) {
  Tape& t = tape_of(a, v);
  if (v.rows != a.rows || v.cols != 1) throw DimensionError("scale_rows: expects an r x 1 vector");
  const Matrix& x = t.value(a);
  const Matrix& s = t.value(v);
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double& e : out.row(i)) e *= s(i, 0);
  return t.record("scale_rows", std::move(out), {a, v}, [&t, a, v](const Matrix& g) {
    const Matrix& x = t.value(a);
    const Matrix& s = t.value(v);
    Matrix da(g.rows(), g.cols()), dv(g.rows(), 1);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        da(i, j) = g(i, j) * s(i, 0);
        dv(i, 0) += g(i, j) * x(i, j);
      }
    }
    return std::vector<Matrix>{std::move(da), std::move(dv)};
  });
}

Var scale_cols(Var a, Var v) {
  Tape& t = tape_of(a, v);
  if (v.rows != a.cols || v.cols != 1) throw DimensionError("scale_cols: expects a c x 1 vector");
  const Matrix& x = t.value(a);
  const Matrix& s = t.value(v);
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) *= s(j, 0);
  return t.record("scale_cols", std::move(out), {a, v}, [&t, a, v](const Matrix& g) {
    const Matrix& x = t.value(a);
    const Matrix& s = t.value(v);
    Matrix da(g.rows(), g.cols()), dv(g.cols(), 1);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        da(i, j) = g(i, j) * s(j, 0);
        dv(j, 0) += g(i, j) * x(i, j);
      }
    }
    return std::vector<Matrix>{std::move(da), std::move(dv)};
  });
}

Var stop_gradient(Var a) {
  Tape& t = tape_of(a);
  return t.record("stop_gradient", t.value(a), {a}, nullptr);
}

Var row_softmax(Var a) {
  Tape& t = tape_of(a);
  Matrix y = eg::row_softmax(t.value(a));
  return t.record("row_softmax", y, {a}, [y](const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
    }
    return std::vector<Matrix>{std::move(d)};
  });
}

namespace {

// Gradient through u = x / ||x|| applied row by row.
Matrix normalize_backward(const Matrix& x, const Matrix& unit, const Matrix& g) {
  Matrix d(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double norm = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      norm += x(i, j) * x(i, j);
      dot += g(i, j) * unit(i, j);
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = (g(i, j) - dot * unit(i, j)) / norm;
  }
  return d;
}

}  // namespace

Var cosine_sim(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols != b.cols) {
    throw DimensionError("cosine_sim: widths differ " + std::to_string(a.cols) + " vs " +
                         std::to_string(b.cols));
  }
  Matrix ua = normalized_rows_checked(t.value(a), "cosine_sim");
  Matrix ub = normalized_rows_checked(t.value(b), "cosine_sim");
  Matrix c = eg::matmul(ua, eg::transpose(ub));
  return t.record("cosine_sim", std::move(c), {a, b}, [&t, a, b, ua, ub](const Matrix& g) {
    Matrix dua = eg::matmul(g, ub);
    Matrix dub = eg::matmul(eg::transpose(g), ua);
    return std::vector<Matrix>{normalize_backward(t.value(a), ua, dua),
                               normalize_backward(t.value(b), ub, dub)};
  });
}

Var pairwise_sq_dist(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record("pairwise_sq_dist", eg::pairwise_sq_dist(t.value(a), t.value(b)), {a, b},
                  [&t, a, b](const Matrix& g) {
                    const Matrix& x = t.value(a);
                    const Matrix& y = t.value(b);
                    Matrix da(x.rows(), x.cols()), db(y.rows(), y.cols());
                    for (std::size_t i = 0; i < x.rows(); ++i) {
                      for (std::size_t j = 0; j < y.rows(); ++j) {
                        const double gij = 2.0 * g(i, j);
                        if (gij == 0.0) continue;
                        for (std::size_t k = 0; k < x.cols(); ++k) {
                          const double diff = gij * (x(i, k) - y(j, k));
                          da(i, k) += diff;
                          db(j, k) -= diff;
                        }
                      }
                    }
                    return std::vector<Matrix>{std::move(da), std::move(db)};
                  });
}

Var gaussian_kernel(Var a, Var b, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("gaussian kernel width must be positive, got " + std::to_string(sigma));
  }
  return exp(scale(pairwise_sq_dist(a, b), -1.0 / (2.0 * sigma * sigma)));
}

}  // namespace eg::ad
