#include "explink/diffcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "explink/error.hpp"

namespace explink {

ParamTensor::ParamTensor(std::string name, std::size_t rows, std::size_t cols)
    : name(std::move(name)),
      rows(rows),
      cols(cols),
      values(rows * cols, 0.0),
      grad(rows * cols, 0.0) {}

void ParamTensor::zero_grad() const {
  grad.assign(values.size(), 0.0);
}

void init_uniform(ParamTensor& p, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& v : p.values) v = dist(rng);
}

void init_xavier(ParamTensor& p, double gain, std::mt19937_64& rng) {
  const double bound =
      gain * std::sqrt(6.0 / static_cast<double>(p.rows + p.cols));
  init_uniform(p, bound, rng);
}

namespace {

std::string shape_string(std::size_t r, std::size_t c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

}  // namespace

Var Tape::input(std::vector<double> values, std::size_t rows,
                std::size_t cols) {
  if (values.size() != rows * cols) {
    throw ShapeError("input: " + std::to_string(values.size()) +
                     " values for shape " + shape_string(rows, cols));
  }
  return record(std::move(values), rows, cols, nullptr);
}

Var Tape::input(std::vector<double> column) {
  const std::size_t n = column.size();
  return input(std::move(column), n, 1);
}

Var Tape::record(std::vector<double> values, std::size_t rows,
                 std::size_t cols, BackwardFn backward) {
  nodes_.push_back({std::move(values), {}, rows, cols, std::move(backward)});
  return Var{nodes_.size() - 1};
}

std::span<const double> Tape::value(Var v) const { return nodes_[v.id].value; }

double Tape::scalar_value(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.value.size() != 1) {
    throw ShapeError("scalar_value: node has shape " +
                     shape_string(n.rows, n.cols));
  }
  return n.value[0];
}

std::vector<double> Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

void Tape::accumulate(Var v, std::span<const double> g) {
  auto& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::accumulate(Var v, std::size_t index, double g) {
  auto& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  n.grad[index] += g;
}

void Tape::backward(Var loss) {
  const auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_string(root.rows, root.cols));
  }
  for (auto& n : nodes_) n.grad.clear();
  nodes_[loss.id].grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Var Tape::linear(const ParamTensor& w, Var x) {
  const auto xv = value(x);
  if (xv.size() != w.rows) {
    throw ShapeError("linear: weight " + shape_string(w.rows, w.cols) +
                     " incompatible with input " +
                     shape_string(rows(x), cols(x)));
  }
  std::vector<double> y(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = xv[i];
    const double* row = &w.values[i * w.cols];
    for (std::size_t j = 0; j < w.cols; ++j) y[j] += row[j] * xi;
  }
  const ParamTensor* wp = &w;
  return record(std::move(y), w.cols, 1,
                [wp, x](Tape& t, std::span<const double> g) {
                  const auto xv = t.value(x);
                  std::vector<double> gx(wp->rows, 0.0);
                  for (std::size_t i = 0; i < wp->rows; ++i) {
                    const double* row = &wp->values[i * wp->cols];
                    double* grow = &wp->grad[i * wp->cols];
                    double acc = 0.0;
                    for (std::size_t j = 0; j < wp->cols; ++j) {
                      grow[j] += xv[i] * g[j];
                      acc += row[j] * g[j];
                    }
                    gx[i] = acc;
                  }
                  t.accumulate(x, gx);
                });
}

Var Tape::tanh(Var x) {
  std::vector<double> y(value(x).begin(), value(x).end());
  for (auto& v : y) v = std::tanh(v);
  const Var out{nodes_.size()};
  return record(std::move(y), rows(x), cols(x),
                [x, out](Tape& t, std::span<const double> g) {
                  const auto y = t.value(out);
                  std::vector<double> gx(g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = g[i] * (1.0 - y[i] * y[i]);
                  }
                  t.accumulate(x, gx);
                });
}

Var Tape::leaky_relu(Var x, double slope) {
  std::vector<double> y(value(x).begin(), value(x).end());
  for (auto& v : y) v = v > 0.0 ? v : slope * v;
  return record(std::move(y), rows(x), cols(x),
                [x, slope](Tape& t, std::span<const double> g) {
                  const auto xv = t.value(x);
                  std::vector<double> gx(g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = xv[i] > 0.0 ? g[i] : slope * g[i];
                  }
                  t.accumulate(x, gx);
                });
}

Var Tape::relu(Var x) { return leaky_relu(x, 0.0); }

Var Tape::l2_normalize(Var x) {
  const auto xv = value(x);
  double sq = 0.0;
  for (double v : xv) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error("l2_normalize: zero or non-finite vector");
  }
  std::vector<double> y(xv.begin(), xv.end());
  for (auto& v : y) v /= norm;
  const Var out{nodes_.size()};
  return record(std::move(y), rows(x), cols(x),
                [x, out, norm](Tape& t, std::span<const double> g) {
                  const auto y = t.value(out);
                  double yg = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) yg += y[i] * g[i];
                  std::vector<double> gx(g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = (g[i] - y[i] * yg) / norm;
                  }
                  t.accumulate(x, gx);
                });
}

Var Tape::grad_reverse(Var x, double lambda) {
  if (lambda < 0.0) throw Error("grad_reverse: lambda must be >= 0");
  std::vector<double> y(value(x).begin(), value(x).end());
  return record(std::move(y), rows(x), cols(x),
                [x, lambda](Tape& t, std::span<const double> g) {
                  std::vector<double> gx(g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = -lambda * g[i];
                  }
                  t.accumulate(x, gx);
                });
}

Var Tape::add(Var a, Var b) {
  if (size(a) != size(b)) {
    throw ShapeError("add: " + shape_string(rows(a), cols(a)) + " vs " +
                     shape_string(rows(b), cols(b)));
  }
  std::vector<double> y(value(a).begin(), value(a).end());
  const auto bv = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return record(std::move(y), rows(a), cols(a),
                [a, b](Tape& t, std::span<const double> g) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
}

Var Tape::sub(Var a, Var b) {
  if (size(a) != size(b)) {
    throw ShapeError("sub: " + shape_string(rows(a), cols(a)) + " vs " +
                     shape_string(rows(b), cols(b)));
  }
  std::vector<double> y(value(a).begin(), value(a).end());
  const auto bv = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return record(std::move(y), rows(a), cols(a),
                [a, b](Tape& t, std::span<const double> g) {
                  t.accumulate(a, g);
                  std::vector<double> gb(g.begin(), g.end());
                  for (auto& v : gb) v = -v;
                  t.accumulate(b, gb);
                });
}

Var Tape::scale(Var x, double s) {
  std::vector<double> y(value(x).begin(), value(x).end());
  for (auto& v : y) v *= s;
  return record(std::move(y), rows(x), cols(x),
                [x, s](Tape& t, std::span<const double> g) {
                  std::vector<double> gx(g.begin(), g.end());
                  for (auto& v : gx) v *= s;
                  t.accumulate(x, gx);
                });
}

Var Tape::add_scalar(Var x, double c) {
  std::vector<double> y(value(x).begin(), value(x).end());
  for (auto& v : y) v += c;
  return record(std::move(y), rows(x), cols(x),
                [x](Tape& t, std::span<const double> g) {
                  t.accumulate(x, g);
                });
}

Var Tape::dot(Var a, Var b) {
  if (size(a) != size(b)) {
    throw ShapeError("dot: " + shape_string(rows(a), cols(a)) + " vs " +
                     shape_string(rows(b), cols(b)));
  }
  const auto av = value(a);
  const auto bv = value(b);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return record({s}, 1, 1, [a, b](Tape& t, std::span<const double> g) {
    const auto av = t.value(a);
    const auto bv = t.value(b);
    std::vector<double> ga(av.size());
    std::vector<double> gb(bv.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
      ga[i] = g[0] * bv[i];
      gb[i] = g[0] * av[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var Tape::square(Var x) {
  std::vector<double> y(value(x).begin(), value(x).end());
  for (auto& v : y) v *= v;
  return record(std::move(y), rows(x), cols(x),
                [x](Tape& t, std::span<const double> g) {
                  const auto xv = t.value(x);
                  std::vector<double> gx(g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] = 2.0 * xv[i] * g[i];
                  }
                  t.accumulate(x, gx);
                });
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x)) s += v;
  return record({s}, 1, 1, [x](Tape& t, std::span<const double> g) {
    std::vector<double> gx(t.size(x), g[0]);
    t.accumulate(x, gx);
  });
}

Var Tape::sum(std::span<const Var> scalars) {
  double s = 0.0;
  for (Var v : scalars) s += scalar_value(v);
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return record({s}, 1, 1,
                [inputs = std::move(inputs)](Tape& t,
                                             std::span<const double> g) {
                  for (Var v : inputs) t.accumulate(v, 0, g[0]);
                });
}

Var Tape::mean(std::span<const Var> scalars) {
  if (scalars.empty()) throw Error("mean: no inputs");
  return scale(sum(scalars), 1.0 / static_cast<double>(scalars.size()));
}

Var Tape::element(Var x, std::size_t index) {
  if (index >= size(x)) throw ShapeError("element: index out of range");
  return record({value(x)[index]}, 1, 1,
                [x, index](Tape& t, std::span<const double> g) {
                  t.accumulate(x, index, g[0]);
                });
}

Var Tape::log_softmax_prob(Var logits, std::size_t cls, double eps) {
  const auto z = value(logits);
  if (cls >= z.size()) throw ShapeError("log_softmax_prob: class out of range");
  const double zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double v : z) denom += std::exp(v - zmax);
  std::vector<double> probs(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    probs[i] = std::exp(z[i] - zmax) / denom;
  }
  const double p = probs[cls];
  const bool clamped = p < eps || p > 1.0 - eps;
  const double out = std::log(std::clamp(p, eps, 1.0 - eps));
  return record(
      {out}, 1, 1,
      [logits, cls, clamped, probs = std::move(probs)](
          Tape& t, std::span<const double> g) {
        if (clamped) return;
        std::vector<double> gz(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) {
          gz[i] = g[0] * ((i == cls ? 1.0 : 0.0) - probs[i]);
        }
        t.accumulate(logits, gz);
      });
}

Adam::Adam(std::vector<ParamGroup> groups, AdamOptions options)
    : options_(options) {
  for (auto& g : groups) {
    Group group{g.lr, {}};
    for (ParamTensor* p : g.params) {
      if (p->grad.size() != p->values.size()) p->zero_grad();
      group.slots.push_back({p, std::vector<double>(p->size(), 0.0),
                             std::vector<double>(p->size(), 0.0)});
    }
    groups_.push_back(std::move(group));
  }
}

void Adam::step() {
  for (const auto& group : groups_) {
    for (const auto& slot : group.slots) {
      for (double g : slot.param->grad) {
        if (!std::isfinite(g)) {
          throw Error("adam_step: non-finite gradient in '" +
                      slot.param->name + "' at step " +
                      std::to_string(steps_ + 1));
        }
      }
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (auto& group : groups_) {
    for (auto& slot : group.slots) {
      auto& p = *slot.param;
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double g = p.grad[i];
        slot.m[i] = options_.beta1 * slot.m[i] + (1.0 - options_.beta1) * g;
        slot.v[i] = options_.beta2 * slot.v[i] + (1.0 - options_.beta2) * g * g;
        const double mhat = slot.m[i] / c1;
        const double vhat = slot.v[i] / c2;
        p.values[i] -= group.lr * mhat / (std::sqrt(vhat) + options_.eps);
      }
      p.zero_grad();
    }
  }
}

void Adam::decay_epoch() {
  for (auto& g : groups_) g.lr *= options_.decay;
}

void Adam::zero_grad() const {
  for (const auto& g : groups_) {
    for (const auto& s : g.slots) s.param->zero_grad();
  }
}

namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  const double v = tape.scalar_value(loss(tape));
  if (!std::isfinite(v)) {
    throw Error("finite_diff_check: non-finite function value");
  }
  return v;
}

}  // namespace

double finite_diff_check(const LossBuilder& loss,
                         std::span<ParamTensor* const> params,
                         double epsilon) {
  if (!(epsilon > 0.0)) throw Error("finite_diff_check: epsilon must be > 0");
  std::vector<std::vector<double>> saved_grads;
  for (ParamTensor* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }
  {
    Tape tape;
    Var l = loss(tape);
    if (!std::isfinite(tape.scalar_value(l))) {
      throw Error("finite_diff_check: non-finite function value");
    }
    tape.backward(l);
  }
  double worst = 0.0;
  for (ParamTensor* p : params) {
    const std::vector<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->values.size(); ++i) {
      const double original = p->values[i];
      p->values[i] = original + epsilon;
      const double plus = evaluate(loss);
      p->values[i] = original - epsilon;
      const double minus = evaluate(loss);
      p->values[i] = original;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double err =
          std::abs(analytic[i] - numeric) /
          std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->grad = std::move(saved_grads[k]);
  }
  return worst;
}

namespace {

constexpr const char* kCheckpointHeader = "explink-params 1";

}  // namespace

void save_params(const std::filesystem::path& path,
                 std::span<const ParamTensor* const> params) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out << kCheckpointHeader << '\n' << params.size() << '\n';
  char buf[64];
  for (const ParamTensor* p : params) {
    out << p->name << ' ' << p->rows << ' ' << p->cols << '\n';
    for (std::size_t i = 0; i < p->values.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof(buf), p->values[i]);
      if (i) out << ' ';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

void load_params(const std::filesystem::path& path,
                 std::span<ParamTensor* const> params) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::string header;
  std::getline(in, header);
  if (header != kCheckpointHeader) {
    throw Error("'" + path.string() + "' is not a parameter checkpoint");
  }
  std::size_t count = 0;
  in >> count;
  std::map<std::string, ParamTensor*> by_name;
  for (ParamTensor* p : params) by_name[p->name] = p;
  std::size_t loaded = 0;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (!(in >> name >> rows >> cols)) {
      throw Error("truncated checkpoint '" + path.string() + "'");
    }
    std::vector<double> values(rows * cols);
    std::string token;
    for (auto& v : values) {
      in >> token;
      auto res = std::from_chars(token.data(), token.data() + token.size(), v);
      if (res.ec != std::errc()) {
        throw Error("bad value '" + token + "' in checkpoint tensor '" +
                    name + "'");
      }
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    ParamTensor& p = *it->second;
    if (p.rows != rows || p.cols != cols) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                       shape_string(rows, cols) + ", expected " +
                       shape_string(p.rows, p.cols));
    }
    p.values = std::move(values);
    p.zero_grad();
    ++loaded;
  }
  if (loaded != params.size()) {
    throw Error("checkpoint '" + path.string() + "' is missing " +
                std::to_string(params.size() - loaded) + " tensor(s)");
  }
}

}  // namespace explink
