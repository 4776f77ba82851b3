#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every primitive applied to its Vars together with a closure that maps the
// upstream gradient to one gradient per input. Node ids grow monotonically, so input ids
// always precede the node that consumes them and a single reverse sweep suffices.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <deque>
#include <vector>

#include "eg/matrix.hpp"

namespace eg::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Returns d(loss)/d(input_k) for every input k, given d(loss)/d(output).
using BackwardFn = std::function<std::vector<Matrix>(const Matrix& grad_out)>;

class Gradients {
 public:
  explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}
  const Matrix& operator[](Var v) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Matrix> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf node. Every leaf receives a gradient; callers decide what to do with it.
  Var leaf(Matrix value);

  // Appends a primitive. `backward` may be empty for nodes that stop gradient flow.
  Var record(std::string op, Matrix value, std::vector<Var> inputs, BackwardFn backward);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // One reverse sweep from a 1x1 loss. Nodes the loss does not depend on get zero gradients.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    std::string op;
    Matrix value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // stable addresses: value() references outlive later records
};

// Linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// Elementwise
Var exp(Var a);
Var log(Var a);  // input clamped at 1e-300
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var relu(Var a);
Var abs(Var a);
Var power(Var a, double p);  // requires positive entries

// Reductions
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var row_mean(Var a);
Var frobenius_norm(Var a);

// Structure
Var concat_rows(Var top, Var bottom);
Var concat_cols(Var left, Var right);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var pick(Var a, std::span<const std::size_t> column_per_row);  // r x 1, a(i, idx[i])
Var scale_rows(Var a, Var v);                                 // a(i,j) * v(i)
Var scale_cols(Var a, Var v);                                 // a(i,j) * v(j)
Var stop_gradient(Var a);

// Similarity
Var row_softmax(Var a);
Var cosine_sim(Var a, Var b);
Var pairwise_sq_dist(Var a, Var b);
Var gaussian_kernel(Var a, Var b, double sigma);

}  // namespace eg::ad
