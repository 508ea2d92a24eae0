#pragma once

// Minimal reverse-mode differentiation over small dense vectors and
// matrices: a tape of recorded operations, bias-free linear maps,
// activations, losses, gradient reversal, Adam, and a finite-difference
// gradient checker.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace explink {

// Row-major parameter matrix. `grad` is scratch space written during
// backward passes, so it stays writable through const references.
struct ParamTensor {
  ParamTensor() = default;
  ParamTensor(std::string name, std::size_t rows, std::size_t cols);

  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  mutable std::vector<double> grad;

  std::size_t size() const { return values.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  void zero_grad() const;

  bool operator==(const ParamTensor& o) const {
    return name == o.name && rows == o.rows && cols == o.cols &&
           values == o.values;
  }
};

// Uniform(-scale, scale) initialization.
void init_uniform(ParamTensor& p, double scale, std::mt19937_64& rng);
// Xavier/Glorot uniform scaled by `gain`.
void init_xavier(ParamTensor& p, double gain, std::mt19937_64& rng);

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape;

// Called once per node during backward with the node's accumulated
// output gradient.
using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a constant; its gradient is readable after backward.
  Var input(std::vector<double> values, std::size_t rows, std::size_t cols);
  Var input(std::vector<double> column);
  Var scalar(double v) { return input({v}, 1, 1); }

  // Generic node for module-specific operations.
  Var record(std::vector<double> values, std::size_t rows, std::size_t cols,
             BackwardFn backward);

  std::span<const double> value(Var v) const;
  double scalar_value(Var v) const;
  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::size_t size(Var v) const { return nodes_[v.id].value.size(); }
  std::size_t node_count() const { return nodes_.size(); }

  // Gradient buffer of a node (zeros if nothing flowed into it).
  std::vector<double> grad(Var v) const;
  // Adds `g` into a node's gradient; used inside BackwardFn.
  void accumulate(Var v, std::span<const double> g);
  void accumulate(Var v, std::size_t index, double g);

  // Populates gradients of every node reachable from `loss` and adds
  // parameter gradients into ParamTensor::grad. Throws ShapeError unless
  // `loss` is 1x1. Node gradients are reset on every call; parameter
  // gradients accumulate.
  void backward(Var loss);

  // y = W^T x with W of shape [in, out].
  Var linear(const ParamTensor& w, Var x);
  Var tanh(Var x);
  Var leaky_relu(Var x, double slope);
  Var relu(Var x);
  Var l2_normalize(Var x);
  // Identity forward; backward multiplies the gradient by -lambda.
  Var grad_reverse(Var x, double lambda);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var x, double s);
  Var add_scalar(Var x, double c);
  Var dot(Var a, Var b);
  Var square(Var x);
  Var sum(Var x);
  Var sum(std::span<const Var> scalars);
  Var mean(std::span<const Var> scalars);
  Var element(Var x, std::size_t index);
  // log(clamp(softmax(logits)[cls], eps, 1 - eps)); zero gradient when
  // the clamp is active.
  Var log_softmax_prob(Var logits, std::size_t cls, double eps);

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    std::size_t rows = 0;
    std::size_t cols = 0;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

struct ParamGroup {
  std::vector<ParamTensor*> params;
  double lr = 1e-3;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.96;
};

// Adam with bias correction, one base learning rate per group and
// epoch-wise exponential decay.
class Adam {
 public:
  explicit Adam(std::vector<ParamGroup> groups, AdamOptions options = {});

  // Applies one update from the accumulated gradients and clears them.
  // Throws Error, leaving parameters untouched, if any gradient is NaN/Inf.
  void step();
  // Multiplies every group's learning rate by the decay factor.
  void decay_epoch();

  std::size_t steps() const { return steps_; }
  double lr(std::size_t group) const { return groups_[group].lr; }
  std::size_t groups() const { return groups_.size(); }
  void zero_grad() const;

 private:
  struct Slot {
    ParamTensor* param;
    std::vector<double> m;
    std::vector<double> v;
  };
  struct Group {
    double lr;
    std::vector<Slot> slots;
  };

  std::vector<Group> groups_;
  AdamOptions options_;
  std::size_t steps_ = 0;
};

using LossBuilder = std::function<Var(Tape&)>;

// Central-difference gradient check over every coordinate of `params`.
// Returns max |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Throws Error on non-finite function values. Parameter values and
// gradients are restored on return.
double finite_diff_check(const LossBuilder& loss,
                         std::span<ParamTensor* const> params,
                         double epsilon = 1e-5);

// Text checkpoint: header line, then per tensor "name rows cols" followed
// by a line of shortest round-trip decimal values.
void save_params(const std::filesystem::path& path,
                 std::span<const ParamTensor* const> params);
// Loads values into tensors matched by name; shapes must agree.
void load_params(const std::filesystem::path& path,
                 std::span<ParamTensor* const> params);

}  // namespace explink
