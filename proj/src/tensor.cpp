#include "chauffeur/tensor.hpp"

#include <cmath>

#include "chauffeur/errors.hpp"

namespace chauffeur {

Var Tape::push(Mat value, std::vector<Var> inputs, std::function<void(Tape&)> back) {
  Var out{static_cast<int>(nodes_.size())};
  for (Var in : inputs)
    if (!(in.id >= 0 && in.id < out.id)) throw GraphCycle("op input from a later node");
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return out;
}

Var Tape::leaf(Mat value) { return push(std::move(value), {}, {}); }

Var Tape::constant(Mat value) {
  Var v = push(std::move(value), {}, {});
  nodes_[v.id].wants_grad = false;
  return v;
}

void Tape::backward(Var loss) {
  check(record_, "backward on a non-recording tape");
  check(loss.valid() && val(loss).rows() == 1 && val(loss).cols() == 1,
        "backward needs a scalar loss");
  g(loss)(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this);
}

namespace {
void same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": shape mismatch");
}
}  // namespace

Var Tape::add(Var a, Var b) {
  same_shape(val(a), val(b), "add");
  return push(val(a) + val(b), {a, b}, [a, b, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self});
    t.g(b) += t.g(Var{self});
  });
}

Var Tape::sub(Var a, Var b) {
  same_shape(val(a), val(b), "sub");
  return push(val(a) - val(b), {a, b}, [a, b, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self});
    t.g(b) -= t.g(Var{self});
  });
}

Var Tape::mul(Var a, Var b) {
  same_shape(val(a), val(b), "mul");
  return push(val(a).cwiseProduct(val(b)), {a, b}, [a, b, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self}).cwiseProduct(t.val(b));
    t.g(b) += t.g(Var{self}).cwiseProduct(t.val(a));
  });
}

Var Tape::minimum(Var a, Var b) {
  same_shape(val(a), val(b), "minimum");
  return push(val(a).cwiseMin(val(b)), {a, b}, [a, b, self = size()](Tape& t) {
    const Mat& va = t.val(a);
    const Mat& vb = t.val(b);
    Mat take_a = (va.array() <= vb.array()).cast<double>().matrix();
    t.g(a) += t.g(Var{self}).cwiseProduct(take_a);
    t.g(b) += t.g(Var{self}).cwiseProduct(Mat((1.0 - take_a.array()).matrix()));
  });
}

Var Tape::matmul(Var a, Var b) {
  if (val(a).cols() != val(b).rows()) throw ShapeMismatch("matmul: inner dims differ");
  return push(val(a) * val(b), {a, b}, [a, b, self = size()](Tape& t) {
    t.g(a).noalias() += t.g(Var{self}) * t.val(b).transpose();
    t.g(b).noalias() += t.val(a).transpose() * t.g(Var{self});
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  if (val(a).cols() != val(b).cols()) throw ShapeMismatch("matmul_nt: inner dims differ");
  return push(val(a) * val(b).transpose(), {a, b}, [a, b, self = size()](Tape& t) {
    t.g(a).noalias() += t.g(Var{self}) * t.val(b);
    t.g(b).noalias() += t.g(Var{self}).transpose() * t.val(a);
  });
}

Var Tape::scale(Var a, double k) {
  return push(val(a) * k, {a},
              [a, k, self = size()](Tape& t) { t.g(a) += t.g(Var{self}) * k; });
}

Var Tape::add_scalar(Var a, double k) {
  return push((val(a).array() + k).matrix(), {a},
              [a, self = size()](Tape& t) { t.g(a) += t.g(Var{self}); });
}

Var Tape::add_constmat(Var a, const Mat& m) {
  same_shape(val(a), m, "add_constmat");
  return push(val(a) + m, {a}, [a, self = size()](Tape& t) { t.g(a) += t.g(Var{self}); });
}

Var Tape::mul_constmat(Var a, const Mat& m) {
  same_shape(val(a), m, "mul_constmat");
  return push(val(a).cwiseProduct(m), {a}, [a, m, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self}).cwiseProduct(m);
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
    throw ShapeMismatch("add_rowvec: bias must be 1 x cols(a)");
  return push(val(a).rowwise() + val(row).row(0), {a, row},
              [a, row, self = size()](Tape& t) {
                t.g(a) += t.g(Var{self});
                t.g(row) += t.g(Var{self}).colwise().sum();
              });
}

Var Tape::tanh_(Var a) {
  return push(val(a).array().tanh().matrix(), {a}, [a, self = size()](Tape& t) {
    const Mat& y = t.val(Var{self});
    t.g(a).array() += t.g(Var{self}).array() * (1.0 - y.array().square());
  });
}

Var Tape::softplus_(Var a) {
  // log1p(e^x) for x <= 30, x beyond (the difference is below 1 ulp there).
  Mat y = val(a).unaryExpr(
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); });
  return push(std::move(y), {a}, [a, self = size()](Tape& t) {
    Mat sig = t.val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.g(a) += t.g(Var{self}).cwiseProduct(sig);
  });
}

Var Tape::exp_(Var a) {
  return push(val(a).array().exp().matrix(), {a}, [a, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self}).cwiseProduct(t.val(Var{self}));
  });
}

Var Tape::log_(Var a) {
  if ((val(a).array() <= 0.0).any()) throw DomainError("log of non-positive value");
  return push(val(a).array().log().matrix(), {a}, [a, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self}).cwiseQuotient(t.val(a));
  });
}

Var Tape::abs_(Var a) {
  return push(val(a).cwiseAbs(), {a}, [a, self = size()](Tape& t) {
    Mat sign = t.val(a).unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    t.g(a) += t.g(Var{self}).cwiseProduct(sign);
  });
}

Var Tape::lgamma_(Var a) {
  if ((val(a).array() <= 0.0).any()) throw DomainError("lgamma of non-positive value");
  return push(val(a).unaryExpr([](double x) { return std::lgamma(x); }), {a},
              [a, self = size()](Tape& t) {
                Mat d = t.val(a).unaryExpr([](double x) { return digamma(x); });
                t.g(a) += t.g(Var{self}).cwiseProduct(d);
              });
}

Var Tape::digamma_(Var a) {
  if ((val(a).array() <= 0.0).any()) throw DomainError("digamma of non-positive value");
  return push(val(a).unaryExpr([](double x) { return digamma(x); }), {a},
              [a, self = size()](Tape& t) {
                Mat d = t.val(a).unaryExpr([](double x) { return trigamma(x); });
                t.g(a) += t.g(Var{self}).cwiseProduct(d);
              });
}

Var Tape::clamp_(Var a, double lo, double hi) {
  Mat y = val(a).array().max(lo).min(hi).matrix();
  return push(std::move(y), {a}, [a, lo, hi, self = size()](Tape& t) {
    Mat pass = t.val(a).unaryExpr(
        [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    t.g(a) += t.g(Var{self}).cwiseProduct(pass);
  });
}

Var Tape::softmax_rows(Var a) {
  Mat y = val(a);
  for (int i = 0; i < y.rows(); ++i) {
    double m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return push(std::move(y), {a}, [a, self = size()](Tape& t) {
    const Mat& y2 = t.val(Var{self});
    const Mat& gy = t.g(Var{self});
    Mat gprod = gy.cwiseProduct(y2);
    Eigen::VectorXd dot = gprod.rowwise().sum();
    t.g(a) += gprod - y2.cwiseProduct(dot.replicate(1, y2.cols()));
  });
}

Var Tape::layer_norm(Var a, Var gain, Var bias) {
  if (val(gain).rows() != 1 || val(gain).cols() != val(a).cols() ||
      val(bias).rows() != 1 || val(bias).cols() != val(a).cols())
    throw ShapeMismatch("layer_norm: gain/bias must be 1 x cols(a)");
  constexpr double kEps = 1e-5;
  const Mat& x = val(a);
  int C = static_cast<int>(x.cols());
  Mat xhat(x.rows(), C);
  Eigen::VectorXd inv_s(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().sum() / C;
    inv_s(i) = 1.0 / std::sqrt(var + kEps);
    xhat.row(i) = ((x.row(i).array() - mu) * inv_s(i)).matrix();
  }
  Mat y = xhat;
  y.array().rowwise() *= val(gain).row(0).array();
  y.array().rowwise() += val(bias).row(0).array();
  return push(std::move(y), {a, gain, bias},
              [a, gain, bias, xhat, inv_s, self = size()](Tape& t) {
                const Mat& gy = t.g(Var{self});
                int C2 = static_cast<int>(gy.cols());
                Mat dxhat = gy;
  dxhat.array().rowwise() *= t.val(gain).row(0).array();
                for (int i = 0; i < gy.rows(); ++i) {
                  double m1 = dxhat.row(i).mean();
                  double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                  t.g(a).row(i).array() +=
                      inv_s(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                  (void)C2;
                }
                t.g(gain) += gy.cwiseProduct(xhat).colwise().sum();
                t.g(bias) += gy.colwise().sum();
              });
}

Var Tape::vstack(const std::vector<Var>& parts) {
  check(!parts.empty(), "vstack of nothing");
  int cols_n = static_cast<int>(val(parts[0]).cols());
  int rows_n = 0;
  for (Var p : parts) {
    if (val(p).cols() != cols_n) throw ShapeMismatch("vstack: column mismatch");
    rows_n += static_cast<int>(val(p).rows());
  }
  Mat y(rows_n, cols_n);
  int r = 0;
  for (Var p : parts) {
    y.middleRows(r, val(p).rows()) = val(p);
    r += static_cast<int>(val(p).rows());
  }
  return push(std::move(y), parts, [parts, self = size()](Tape& t) {
    int r2 = 0;
    for (Var p : parts) {
      int n = static_cast<int>(t.val(p).rows());
      t.g(p) += t.g(Var{self}).middleRows(r2, n);
      r2 += n;
    }
  });
}

Var Tape::hcat(const std::vector<Var>& parts) {
  check(!parts.empty(), "hcat of nothing");
  int rows_n = static_cast<int>(val(parts[0]).rows());
  int cols_n = 0;
  for (Var p : parts) {
    if (val(p).rows() != rows_n) throw ShapeMismatch("hcat: row mismatch");
    cols_n += static_cast<int>(val(p).cols());
  }
  Mat y(rows_n, cols_n);
  int c = 0;
  for (Var p : parts) {
    y.middleCols(c, val(p).cols()) = val(p);
    c += static_cast<int>(val(p).cols());
  }
  return push(std::move(y), parts, [parts, self = size()](Tape& t) {
    int c2 = 0;
    for (Var p : parts) {
      int n = static_cast<int>(t.val(p).cols());
      t.g(p) += t.g(Var{self}).middleCols(c2, n);
      c2 += n;
    }
  });
}

Var Tape::cols(Var a, int j0, int n) {
  if (j0 < 0 || n < 1 || j0 + n > val(a).cols()) throw ShapeMismatch("cols: out of range");
  return push(val(a).middleCols(j0, n), {a}, [a, j0, n, self = size()](Tape& t) {
    t.g(a).middleCols(j0, n) += t.g(Var{self});
  });
}

Var Tape::row(Var a, int i) {
  if (i < 0 || i >= val(a).rows()) throw ShapeMismatch("row: out of range");
  return push(val(a).row(i), {a}, [a, i, self = size()](Tape& t) {
    t.g(a).row(i) += t.g(Var{self});
  });
}

Var Tape::rowsum(Var a) {
  Mat y = val(a).rowwise().sum();
  return push(std::move(y), {a}, [a, self = size()](Tape& t) {
    t.g(a) += t.g(Var{self}).replicate(1, t.val(a).cols());
  });
}

Var Tape::sum_all(Var a) {
  Mat y(1, 1);
  y(0, 0) = val(a).sum();
  return push(std::move(y), {a}, [a, self = size()](Tape& t) {
    t.g(a).array() += t.g(Var{self})(0, 0);
  });
}

Var Tape::mean_all(Var a) {
  double n = static_cast<double>(val(a).size());
  Mat y(1, 1);
  y(0, 0) = val(a).sum() / n;
  return push(std::move(y), {a}, [a, n, self = size()](Tape& t) {
    t.g(a).array() += t.g(Var{self})(0, 0) / n;
  });
}

// Recurrence to x >= 10, then the asymptotic Bernoulli series.
double digamma(double x) {
  double r = 0.0;
  while (x < 10.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  double inv = 1.0 / x, inv2 = inv * inv;
  double series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 -
                  inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))));
  return r + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
  double r = 0.0;
  while (x < 10.0) {
    r += 1.0 / (x * x);
    x += 1.0;
  }
  double inv = 1.0 / x, inv2 = inv * inv;
  double series =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 -
             inv2 / 30)))));
  return r + series;
}

double adam_step(std::map<std::string, Mat>& params, const std::map<std::string, Mat>& grads,
                 AdamState& state, const AdamConfig& cfg) {
  double norm2 = 0.0;
  for (const auto& [name, gmat] : grads) norm2 += gmat.squaredNorm();
  double norm = std::sqrt(norm2);
  double clip_scale = 1.0;
  if (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm)
    clip_scale = cfg.max_grad_norm / norm;

  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    check(it != grads.end(), "adam_step: missing grad for " + name);
    Mat eff = it->second * clip_scale;
    Mat& m = state.m.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    Mat& v = state.v.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * eff;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * eff.cwiseProduct(eff);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    p.array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
  }
  return norm;
}

}  // namespace chauffeur
