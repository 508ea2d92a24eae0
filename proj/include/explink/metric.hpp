#pragma once

// Interaction-based matching between two instances: squared-distance
// matrix of item embeddings, RBF kernel responses, per-kernel log-pooled
// soft match counts, and an MLP mapping them to a score in (-1, 1).

#include <cstddef>
#include <span>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/diffcore.hpp"

namespace explink {

struct Kernel {
  double mu = 0.0;
  double sigma = 0.1;
};

class KernelBank {
 public:
  KernelBank() = default;
  explicit KernelBank(std::vector<Kernel> kernels);

  // 21 kernels: exact match (mu 0, sigma 1e-3), then mu = 0.05..1.0 in
  // steps of 0.05 with sigma 0.1.
  static KernelBank standard();

  std::size_t size() const { return kernels_.size(); }
  const Kernel& operator[](std::size_t k) const { return kernels_[k]; }
  const std::vector<Kernel>& kernels() const { return kernels_; }

 private:
  std::vector<Kernel> kernels_;
};

// Pool floor inside the log.
inline constexpr double kPoolFloor = 1e-30;
inline constexpr double kLeakySlope = 0.2;
// Pooled features are multiplied by this before the MLP. Raw values reach
// the hundreds, and at that scale single Adam steps on the hidden layer
// drive tanh into exact saturation.
inline constexpr double kFeatureScale = 0.01;
// Allowed deviation from unit norm for metric inputs.
inline constexpr double kUnitTolerance = 1e-6;

double kernel_response(double alpha, const Kernel& kernel);
std::vector<double> kernel_features(double alpha, const KernelBank& bank);

// Row-major alpha matrix, rows = first argument.
struct AlphaMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

// phi_k = sum_m log(max(sum_n K_k(alpha_mn), floor)).
std::vector<double> pool_values(const AlphaMatrix& alpha,
                                const KernelBank& bank);

// alpha_mn = |a_m - b_n|^2 / 4. Throws Error on empty lists or inputs that
// are not unit length.
Var similarity_matrix(Tape& tape, std::span<const Var> a,
                      std::span<const Var> b);
Var pool(Tape& tape, Var alpha, const KernelBank& bank);

struct MetricParams {
  MetricParams();
  explicit MetricParams(KernelBank bank);

  KernelBank bank;
  ParamTensor hidden;  // K x K, leaky ReLU
  ParamTensor output;  // K x 1, tanh

  void init(Rng& rng);
  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

// tanh(W2^T leaky_relu(W1^T (s * phi(A)))) with s = kFeatureScale. The
// first argument supplies rows.
Var score(Tape& tape, const MetricParams& params, std::span<const Var> a,
          std::span<const Var> b);
// Score on precomputed unit embeddings.
double score(const MetricParams& params,
             std::span<const std::vector<double>> a,
             std::span<const std::vector<double>> b);

}  // namespace explink
