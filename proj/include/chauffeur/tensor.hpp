#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace chauffeur {

using Mat = Eigen::MatrixXd;

// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense 64-bit matrices. Ops append nodes; backward()
// walks the tape once in reverse. A non-recording tape runs the exact same
// value arithmetic (same kernels, same order) and skips the closures, so
// recording vs non-recording forwards are bit-identical by construction.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Leaf that wants gradients (parameters, differentiable inputs).
  Var leaf(Mat value);
  // Leaf that never accumulates a gradient (fixed data).
  Var constant(Mat value);

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order.
  void backward(Var loss);

  // Elementwise arithmetic (shapes must match exactly).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var minimum(Var a, Var b);  // ties route the gradient to a

  // Matrix products.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T

  // Scalar and constant-matrix forms.
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var add_constmat(Var a, const Mat& m);
  Var mul_constmat(Var a, const Mat& m);

  // Broadcast a 1 x cols row vector across every row of a.
  Var add_rowvec(Var a, Var row);

  // Elementwise functions.
  Var tanh_(Var a);
  Var softplus_(Var a);  // log(1 + e^x), large-x overflow guarded
  Var exp_(Var a);
  Var log_(Var a);
  Var abs_(Var a);       // subgradient 0 at 0
  Var lgamma_(Var a);    // requires positive entries
  Var digamma_(Var a);
  Var clamp_(Var a, double lo, double hi);  // gradient passes on [lo, hi]

  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var a);

  // Row-wise layer norm with per-column gain and bias (both 1 x cols), eps 1e-5.
  Var layer_norm(Var a, Var gain, Var bias);

  // Structure ops.
  Var vstack(const std::vector<Var>& parts);
  Var hcat(const std::vector<Var>& parts);
  Var cols(Var a, int j0, int n);
  Var row(Var a, int i);

  // Reductions.
  Var rowsum(Var a);   // N x C -> N x 1
  Var sum_all(Var a);  // -> 1 x 1
  Var mean_all(Var a);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> back;  // empty for leaves/constants
    bool wants_grad = true;
  };

  Var push(Mat value, std::vector<Var> inputs, std::function<void(Tape&)> back);
  Mat& g(Var v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
  bool record_;
};

// Hand-rolled polygamma values (positive arguments), accurate to ~1e-12.
double digamma(double x);
double trigamma(double x);

// Adam with optional global-norm clipping applied to all grads jointly before
// the update. Returns the pre-clip global gradient norm.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = -1.0;  // <= 0 disables clipping
};

struct AdamState {
  std::map<std::string, Mat> m, v;
  long t = 0;
};

double adam_step(std::map<std::string, Mat>& params, const std::map<std::string, Mat>& grads,
                 AdamState& state, const AdamConfig& cfg);

}  // namespace chauffeur
