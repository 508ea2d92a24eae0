#include "explink/metric.hpp"

#include <algorithm>
#include <cmath>

#include "explink/error.hpp"

namespace explink {

KernelBank::KernelBank(std::vector<Kernel> kernels)
    : kernels_(std::move(kernels)) {
  for (const auto& k : kernels_) {
    if (!(k.sigma > 0.0)) throw Error("kernel sigma must be > 0");
  }
}

KernelBank KernelBank::standard() {
  std::vector<Kernel> kernels{{0.0, 1e-3}};
  for (int i = 1; i <= 20; ++i) kernels.push_back({0.05 * i, 0.1});
  return KernelBank(std::move(kernels));
}

double kernel_response(double alpha, const Kernel& kernel) {
  const double d = alpha - kernel.mu;
  return std::exp(-(d * d) / (2.0 * kernel.sigma * kernel.sigma));
}

std::vector<double> kernel_features(double alpha, const KernelBank& bank) {
  std::vector<double> out(bank.size());
  for (std::size_t k = 0; k < bank.size(); ++k) {
    out[k] = kernel_response(alpha, bank[k]);
  }
  return out;
}

std::vector<double> pool_values(const AlphaMatrix& alpha,
                                const KernelBank& bank) {
  std::vector<double> phi(bank.size(), 0.0);
  std::vector<double> row_sum(bank.size());
  for (std::size_t m = 0; m < alpha.rows; ++m) {
    std::fill(row_sum.begin(), row_sum.end(), 0.0);
    for (std::size_t n = 0; n < alpha.cols; ++n) {
      const double a = alpha.values[m * alpha.cols + n];
      for (std::size_t k = 0; k < bank.size(); ++k) {
        row_sum[k] += kernel_response(a, bank[k]);
      }
    }
    for (std::size_t k = 0; k < bank.size(); ++k) {
      phi[k] += std::log(std::max(row_sum[k], kPoolFloor));
    }
  }
  return phi;
}

namespace {

void check_unit(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) {
    throw Error("similarity_matrix: input embedding has norm " +
                std::to_string(std::sqrt(sq)) + ", expected unit length");
  }
}

}  // namespace

Var similarity_matrix(Tape& tape, std::span<const Var> a,
                      std::span<const Var> b) {
  if (a.empty() || b.empty()) {
    throw Error("similarity_matrix: both instances must be non-empty");
  }
  const std::size_t dim = tape.size(a[0]);
  for (Var v : a) {
    if (tape.size(v) != dim) throw ShapeError("similarity_matrix: dim mismatch");
    check_unit(tape.value(v));
  }
  for (Var v : b) {
    if (tape.size(v) != dim) throw ShapeError("similarity_matrix: dim mismatch");
    check_unit(tape.value(v));
  }
  std::vector<double> alpha(a.size() * b.size());
  for (std::size_t m = 0; m < a.size(); ++m) {
    const auto av = tape.value(a[m]);
    for (std::size_t n = 0; n < b.size(); ++n) {
      const auto bv = tape.value(b[n]);
      double sq = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double d = av[i] - bv[i];
        sq += d * d;
      }
      alpha[m * b.size() + n] = sq / 4.0;
    }
  }
  std::vector<Var> left(a.begin(), a.end());
  std::vector<Var> right(b.begin(), b.end());
  const std::size_t rows = a.size();
  const std::size_t cols = b.size();
  return tape.record(
      std::move(alpha), rows, cols,
      [left = std::move(left), right = std::move(right), dim](
          Tape& t, std::span<const double> g) {
        const std::size_t cols = right.size();
        std::vector<std::vector<double>> gl(left.size(),
                                            std::vector<double>(dim, 0.0));
        std::vector<std::vector<double>> gr(right.size(),
                                            std::vector<double>(dim, 0.0));
        for (std::size_t m = 0; m < left.size(); ++m) {
          const auto av = t.value(left[m]);
          for (std::size_t n = 0; n < cols; ++n) {
            const double gmn = g[m * cols + n];
            if (gmn == 0.0) continue;
            const auto bv = t.value(right[n]);
            // d/da |a-b|^2/4 = (a-b)/2
            for (std::size_t i = 0; i < dim; ++i) {
              const double d = 0.5 * gmn * (av[i] - bv[i]);
              gl[m][i] += d;
              gr[n][i] -= d;
            }
          }
        }
        for (std::size_t m = 0; m < left.size(); ++m) t.accumulate(left[m], gl[m]);
        for (std::size_t n = 0; n < cols; ++n) t.accumulate(right[n], gr[n]);
      });
}

Var pool(Tape& tape, Var alpha, const KernelBank& bank) {
  const std::size_t rows = tape.rows(alpha);
  const std::size_t cols = tape.cols(alpha);
  if (rows == 0 || cols == 0) throw Error("pool: empty alpha matrix");
  const std::size_t K = bank.size();
  const auto av = tape.value(alpha);

  // Responses kept for the backward pass: [m][n][k].
  std::vector<double> resp(rows * cols * K);
  std::vector<double> row_sums(rows * K, 0.0);
  for (std::size_t m = 0; m < rows; ++m) {
    for (std::size_t n = 0; n < cols; ++n) {
      const double a = av[m * cols + n];
      for (std::size_t k = 0; k < K; ++k) {
        const double r = kernel_response(a, bank[k]);
        resp[(m * cols + n) * K + k] = r;
        row_sums[m * K + k] += r;
      }
    }
  }
  std::vector<double> phi(K, 0.0);
  for (std::size_t m = 0; m < rows; ++m) {
    for (std::size_t k = 0; k < K; ++k) {
      phi[k] += std::log(std::max(row_sums[m * K + k], kPoolFloor));
    }
  }
  return tape.record(
      std::move(phi), K, 1,
      [alpha, bank, rows, cols, resp = std::move(resp),
       row_sums = std::move(row_sums)](Tape& t, std::span<const double> g) {
        const std::size_t K = bank.size();
        const auto av = t.value(alpha);
        std::vector<double> ga(rows * cols, 0.0);
        for (std::size_t m = 0; m < rows; ++m) {
          for (std::size_t k = 0; k < K; ++k) {
            const double s = row_sums[m * K + k];
            // Zero gradient at the floor.
            if (!(s > kPoolFloor) || g[k] == 0.0) continue;
            const double scale = g[k] / s;
            const double inv_var = 1.0 / (bank[k].sigma * bank[k].sigma);
            for (std::size_t n = 0; n < cols; ++n) {
              const double r = resp[(m * cols + n) * K + k];
              if (r == 0.0) continue;
              const double a = av[m * cols + n];
              ga[m * cols + n] += scale * r * (-(a - bank[k].mu) * inv_var);
            }
          }
        }
        t.accumulate(alpha, ga);
      });
}

MetricParams::MetricParams() : MetricParams(KernelBank::standard()) {}

MetricParams::MetricParams(KernelBank b)
    : bank(std::move(b)),
      hidden("metric.hidden", bank.size(), bank.size()),
      output("metric.output", bank.size(), 1) {}

void MetricParams::init(Rng& rng) {
  init_xavier(hidden, 1.0, rng);
  init_xavier(output, 0.5, rng);
}

std::vector<ParamTensor*> MetricParams::tensors() { return {&hidden, &output}; }

std::vector<const ParamTensor*> MetricParams::tensors() const {
  return {&hidden, &output};
}

Var score(Tape& tape, const MetricParams& params, std::span<const Var> a,
          std::span<const Var> b) {
  Var alpha = similarity_matrix(tape, a, b);
  Var phi = tape.scale(pool(tape, alpha, params.bank), kFeatureScale);
  Var h = tape.leaky_relu(tape.linear(params.hidden, phi), kLeakySlope);
  return tape.element(tape.tanh(tape.linear(params.output, h)), 0);
}

double score(const MetricParams& params,
             std::span<const std::vector<double>> a,
             std::span<const std::vector<double>> b) {
  Tape tape;
  std::vector<Var> va;
  std::vector<Var> vb;
  va.reserve(a.size());
  vb.reserve(b.size());
  for (const auto& v : a) va.push_back(tape.input(v));
  for (const auto& v : b) vb.push_back(tape.input(v));
  return tape.scalar_value(score(tape, params, va, vb));
}

}  // namespace explink
