#pragma once

// Reverse-mode autodiff over Eigen double matrices. A Tape owns the nodes of
// one forward pass; Var is a cheap handle. Nodes are pushed in topological
// order, so backward() is a single reverse sweep. Nodes whose gradient was
// never touched by a child are skipped.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gretel/common.hpp"

namespace gretel::ad {

using Mat = Eigen::MatrixXd;

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;  // lazily allocated on first accumulation
    std::function<void(Tape&)> backprop;
  };

  int push(Mat v, std::function<void(Tape&)> bp = {}) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(bp)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& val(int i) const { return nodes_[i].value; }

  Mat& grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_grad(int i) const { return nodes_[i].grad.size() != 0; }

  // root must be a 1x1 scalar node.
  void backward(int root) {
    grad(root)(0, 0) = 1.0;
    for (int i = root; i >= 0; --i)
      if (nodes_[i].backprop && has_grad(i)) nodes_[i].backprop(*this);
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  const Mat& val() const { return tape->val(idx); }
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

inline Var make(Tape& t, Mat v) { return Var{&t, t.push(std::move(v))}; }

inline Var scalar(Tape& t, double v) { return make(t, Mat::Constant(1, 1, v)); }

inline void check_finite(const Var& v, const char* what) {
  if (!v.val().allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

// ---------------------------------------------------------------------------
// Primitives.

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  int i = t.push(t.val(ia) + t.val(ib), [ia, ib, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i);
    tp.grad(ib) += tp.grad(i);
  });
  return Var{&t, i};
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  int i = t.push(t.val(ia) - t.val(ib), [ia, ib, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i);
    tp.grad(ib) -= tp.grad(i);
  });
  return Var{&t, i};
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia) * c, [ia, c, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += c * tp.grad(i);
  });
  return Var{&t, i};
}

inline Var add_const(Var a, const Mat& c) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia) + c, [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i);
  });
  return Var{&t, i};
}

inline Var cmul(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  int i = t.push(t.val(ia).cwiseProduct(t.val(ib)), [ia, ib, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i).cwiseProduct(tp.val(ib));
    tp.grad(ib) += tp.grad(i).cwiseProduct(tp.val(ia));
  });
  return Var{&t, i};
}

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  int i = t.push(t.val(ia) * t.val(ib), [ia, ib, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i) * tp.val(ib).transpose();
    tp.grad(ib) += tp.val(ia).transpose() * tp.grad(i);
  });
  return Var{&t, i};
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).transpose(), [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i).transpose();
  });
  return Var{&t, i};
}

// b is a 1xC row vector broadcast over the rows of a.
inline Var add_rowvec(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  Mat v = t.val(ia);
  v.rowwise() += Eigen::RowVectorXd(t.val(ib).row(0));
  int i = t.push(std::move(v), [ia, ib, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i);
    tp.grad(ib) += tp.grad(i).colwise().sum();
  });
  return Var{&t, i};
}

inline Var slice_rows(Var a, int r0, int nr) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).middleRows(r0, nr), [ia, r0, nr, i = (int)t.size()](Tape& tp) {
    tp.grad(ia).middleRows(r0, nr) += tp.grad(i);
  });
  return Var{&t, i};
}

inline Var slice_cols(Var a, int c0, int nc) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).middleCols(c0, nc), [ia, c0, nc, i = (int)t.size()](Tape& tp) {
    tp.grad(ia).middleCols(c0, nc) += tp.grad(i);
  });
  return Var{&t, i};
}

inline Var concat_cols(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape;
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (const Var& p : parts) cols += p.cols();
  Mat v(rows, cols);
  std::vector<int> idxs;
  std::vector<int> offs;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.val();
    idxs.push_back(p.idx);
    offs.push_back(static_cast<int>(c));
    c += p.cols();
  }
  int i = t.push(std::move(v), [idxs, offs, i = (int)t.size()](Tape& tp) {
    const Mat& g = tp.grad(i);
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      Eigen::Index nc = tp.val(idxs[k]).cols();
      tp.grad(idxs[k]) += g.middleCols(offs[k], nc);
    }
  });
  return Var{&t, i};
}

inline Var concat_rows(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape;
  Eigen::Index cols = parts.front().cols(), rows = 0;
  for (const Var& p : parts) rows += p.rows();
  Mat v(rows, cols);
  std::vector<int> idxs, offs;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.val();
    idxs.push_back(p.idx);
    offs.push_back(static_cast<int>(r));
    r += p.rows();
  }
  int i = t.push(std::move(v), [idxs, offs, i = (int)t.size()](Tape& tp) {
    const Mat& g = tp.grad(i);
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      Eigen::Index nr = tp.val(idxs[k]).rows();
      tp.grad(idxs[k]) += g.middleRows(offs[k], nr);
    }
  });
  return Var{&t, i};
}

// Embedding-style lookup; duplicate indices accumulate in the backward pass.
inline Var gather_rows(Var a, std::vector<int> rows) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Mat v(static_cast<Eigen::Index>(rows.size()), t.val(ia).cols());
  for (std::size_t k = 0; k < rows.size(); ++k) v.row(k) = t.val(ia).row(rows[k]);
  int i = t.push(std::move(v), [ia, rows = std::move(rows), i = (int)t.size()](Tape& tp) {
    const Mat& g = tp.grad(i);
    Mat& ga = tp.grad(ia);
    for (std::size_t k = 0; k < rows.size(); ++k) ga.row(rows[k]) += g.row(k);
  });
  return Var{&t, i};
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Mat y = t.val(ia);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    Eigen::RowVectorXd row = y.row(r);
    double m = row.maxCoeff();
    row = (row.array() - m).exp();
    y.row(r) = row / row.sum();
  }
  int i = t.push(std::move(y), [ia, i = (int)t.size()](Tape& tp) {
    const Mat& g = tp.grad(i);
    const Mat& y = tp.val(i);
    Mat& ga = tp.grad(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = g.row(r).dot(y.row(r));
      ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
    }
  });
  return Var{&t, i};
}

inline Var exp_(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).array().exp().matrix(), [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i).cwiseProduct(tp.val(i));
  });
  return Var{&t, i};
}

inline Var log_(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).array().log().matrix(), [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i).cwiseQuotient(tp.val(ia));
  });
  return Var{&t, i};
}

inline Var sqrt_(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).array().sqrt().matrix(), [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += (tp.grad(i).array() * 0.5 / tp.val(i).array()).matrix();
  });
  return Var{&t, i};
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Mat y = (1.0 / (1.0 + (-t.val(ia)).array().exp())).matrix();
  int i = t.push(std::move(y), [ia, i = (int)t.size()](Tape& tp) {
    const Mat& y = tp.val(i);
    tp.grad(ia) += tp.grad(i).cwiseProduct(
        (y.array() * (1.0 - y.array())).matrix());
  });
  return Var{&t, i};
}

inline Var gelu(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  const Mat& x = t.val(ia);
  auto phi = [](double v) { return 0.5 * (1.0 + std::erf(v / M_SQRT2)); };
  Mat y = x.unaryExpr([&](double v) { return v * phi(v); });
  int i = t.push(std::move(y), [ia, phi, i = (int)t.size()](Tape& tp) {
    const auto& x = tp.val(ia).array();
    Eigen::ArrayXXd cdf = tp.val(ia).unaryExpr([&](double v) { return phi(v); }).array();
    Eigen::ArrayXXd pdf = (-0.5 * x.square()).exp() / std::sqrt(2.0 * M_PI);
    tp.grad(ia) += (tp.grad(i).array() * (cdf + x * pdf)).matrix();
  });
  return Var{&t, i};
}

// Gradient is passed through only where the value was not clipped.
inline Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Mat y = t.val(ia).cwiseMax(lo).cwiseMin(hi);
  int i = t.push(std::move(y), [ia, lo, hi, i = (int)t.size()](Tape& tp) {
    const auto& x = tp.val(ia).array();
    Eigen::ArrayXXd pass = ((x > lo) && (x < hi)).cast<double>();
    tp.grad(ia) += (tp.grad(i).array() * pass).matrix();
  });
  return Var{&t, i};
}

inline Var rowsum(Var a) {  // R x C -> R x 1
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).rowwise().sum(), [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia) += tp.grad(i) * Eigen::RowVectorXd::Ones(tp.val(ia).cols());
  });
  return Var{&t, i};
}

inline Var colmean(Var a) {  // R x C -> 1 x C
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(t.val(ia).colwise().mean(), [ia, i = (int)t.size()](Tape& tp) {
    double inv = 1.0 / tp.val(ia).rows();
    tp.grad(ia) += inv * Eigen::VectorXd::Ones(tp.val(ia).rows()) * tp.grad(i);
  });
  return Var{&t, i};
}

inline Var sum_all(Var a) {  // -> 1 x 1
  Tape& t = *a.tape;
  int ia = a.idx;
  int i = t.push(Mat::Constant(1, 1, t.val(ia).sum()), [ia, i = (int)t.size()](Tape& tp) {
    tp.grad(ia).array() += tp.grad(i)(0, 0);
  });
  return Var{&t, i};
}

// y_r = x_r / ||x_r||_2; rows must be nonzero.
inline Var normalize_rows(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Mat y = t.val(ia);
  Eigen::VectorXd norms(y.rows());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    norms(r) = y.row(r).norm();
    y.row(r) /= norms(r);
  }
  int i = t.push(std::move(y), [ia, norms = std::move(norms), i = (int)t.size()](Tape& tp) {
    const Mat& g = tp.grad(i);
    const Mat& y = tp.val(i);
    Mat& ga = tp.grad(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = g.row(r).dot(y.row(r));
      ga.row(r) += (g.row(r) - dot * y.row(r)) / norms(r);
    }
  });
  return Var{&t, i};
}

// Row-wise layer norm with learnable 1xC gain and bias.
inline Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-6) {
  Tape& t = *x.tape;
  int ix = x.idx, ig = gain.idx, ib = bias.idx;
  const Mat& xv = t.val(ix);
  const Eigen::Index R = xv.rows(), C = xv.cols();
  Mat xhat(R, C);
  Eigen::VectorXd inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double mu = xv.row(r).mean();
    Eigen::RowVectorXd ctr = xv.row(r).array() - mu;
    double var = ctr.squaredNorm() / C;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ctr * inv_std(r);
  }
  Mat y = xhat;
  for (Eigen::Index r = 0; r < R; ++r)
    y.row(r) = xhat.row(r).cwiseProduct(t.val(ig).row(0)) + t.val(ib).row(0);
  int i = t.push(std::move(y),
                 [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std),
                  i = (int)t.size()](Tape& tp) {
    const Mat& g = tp.grad(i);
    const Eigen::Index R = g.rows(), C = g.cols();
    const Eigen::RowVectorXd gain = tp.val(ig).row(0);
    Mat& gx = tp.grad(ix);
    for (Eigen::Index r = 0; r < R; ++r) {
      Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain);
      double m1 = dxhat.mean();
      double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      gx.row(r) += inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
    }
    tp.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
    tp.grad(ib) += g.colwise().sum();
  });
  return Var{&t, i};
}

// Numerically stable log(1 + exp(x)); derivative is sigmoid(x).
inline Var softplus(Var a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  const auto& x = t.val(ia).array();
  Mat y = (x.max(0.0) + (1.0 + (-x.abs()).exp()).log()).matrix();
  int i = t.push(std::move(y), [ia, i = (int)t.size()](Tape& tp) {
    const auto& x = tp.val(ia).array();
    tp.grad(ia) += (tp.grad(i).array() / (1.0 + (-x).exp())).matrix();
  });
  return Var{&t, i};
}

inline Var affine(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

}  // namespace gretel::ad
