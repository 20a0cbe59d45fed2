#include "pausenlu/numcore.hpp"

#include <cmath>
#include <stdexcept>

namespace pausenlu {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw std::runtime_error(std::string(op) + ": incompatible shapes " +
                           shape_str(a) + " and " + shape_str(b));
}


void check_same_tape(const char* op, Value a, Value b) {
  if (a.tape != b.tape)
    throw std::runtime_error(std::string(op) + ": values on different tapes");
}

}  // namespace

const Mat& Value::val() const { return tape->value_of(idx); }
const Mat& Value::grad() const { return tape->grad_of(idx); }

Value Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, nodes_.size() - 1};
}

std::size_t Tape::push(Mat value, std::vector<std::size_t> parents,
                       std::function<void(Tape&, std::size_t)> backward_fn) {
  Node n;
  n.value = std::move(value);
  for (std::size_t p : parents)
    if (nodes_[p].requires_grad) n.requires_grad = true;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const Mat& Tape::grad_of(std::size_t i) const {
  const Node& n = nodes_[i];
  if (n.grad_set) return n.grad;
  // untouched: report a zero gradient of the right shape
  const_cast<Tape*>(this)->zero_grad_ = Mat::Zero(n.value.rows(), n.value.cols());
  return zero_grad_;
}

void Tape::accum_grad(std::size_t i, const Mat& delta) {
  Node& n = nodes_[i];
  if (!n.requires_grad) return;
  if (delta.rows() != n.value.rows() || delta.cols() != n.value.cols())
    shape_error("accum_grad", n.value, delta);
  if (!n.grad_set) {
    n.grad = delta;
    n.grad_set = true;
  } else {
    n.grad += delta;
  }
}

void Tape::backward(Value loss) {
  if (loss.tape != this)
    throw std::runtime_error("backward: loss is not on this tape");
  Node& ln = nodes_[loss.idx];
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw std::runtime_error("backward: loss must be 1x1, got " +
                             shape_str(ln.value));
  if (!ln.requires_grad) return;  // nothing reaches a trainable leaf
  ln.grad = Mat::Ones(1, 1);
  ln.grad_set = true;
  for (std::size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_set && n.backward_fn) n.backward_fn(*this, i);
  }
}

namespace {

// small helper to build a unary/binary node
Value make_node(Tape* tape, Mat value, std::vector<std::size_t> parents,
                std::function<void(Tape&, std::size_t)> backward_fn) {
  return Value{tape, tape->push(std::move(value), std::move(parents),
                                std::move(backward_fn))};
}

}  // namespace

Value matmul(Value a, Value b) {
  check_same_tape("matmul", a, b);
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t ia = a.idx, ib = b.idx;
  return make_node(a.tape, A * B, {ia, ib},
                   [ia, ib](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     t.accum_grad(ia, g * t.value_of(ib).transpose());
                     t.accum_grad(ib, t.value_of(ia).transpose() * g);
                   });
}

Value add(Value a, Value b) {
  check_same_tape("add", a, b);
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
  const std::size_t ia = a.idx, ib = b.idx;
  return make_node(a.tape, A + B, {ia, ib},
                   [ia, ib](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     t.accum_grad(ia, g);
                     t.accum_grad(ib, g);
                   });
}

Value sub(Value a, Value b) {
  check_same_tape("sub", a, b);
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  const std::size_t ia = a.idx, ib = b.idx;
  return make_node(a.tape, A - B, {ia, ib},
                   [ia, ib](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     t.accum_grad(ia, g);
                     t.accum_grad(ib, -g);
                   });
}

Value mul(Value a, Value b) {
  check_same_tape("mul", a, b);
  const Mat& A = a.val();
  const Mat& B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  const std::size_t ia = a.idx, ib = b.idx;
  return make_node(a.tape, A.cwiseProduct(B), {ia, ib},
                   [ia, ib](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     t.accum_grad(ia, g.cwiseProduct(t.value_of(ib)));
                     t.accum_grad(ib, g.cwiseProduct(t.value_of(ia)));
                   });
}

Value scale(Value a, double s) {
  const std::size_t ia = a.idx;
  return make_node(a.tape, a.val() * s, {ia},
                   [ia, s](Tape& t, std::size_t self) {
                     t.accum_grad(ia, t.grad_of(self) * s);
                   });
}

Value add_rowvec(Value a, Value v) {
  check_same_tape("add_rowvec", a, v);
  const Mat& A = a.val();
  const Mat& V = v.val();
  if (V.rows() != 1 || V.cols() != A.cols()) shape_error("add_rowvec", A, V);
  Mat out = A;
  out.rowwise() += V.row(0);
  const std::size_t ia = a.idx, iv = v.idx;
  return make_node(a.tape, std::move(out), {ia, iv},
                   [ia, iv](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     t.accum_grad(ia, g);
                     t.accum_grad(iv, g.colwise().sum());
                   });
}

Value add_colvec(Value a, Value v) {
  check_same_tape("add_colvec", a, v);
  const Mat& A = a.val();
  const Mat& V = v.val();
  if (V.cols() != 1 || V.rows() != A.rows()) shape_error("add_colvec", A, V);
  Mat out = A;
  out.colwise() += V.col(0);
  const std::size_t ia = a.idx, iv = v.idx;
  return make_node(a.tape, std::move(out), {ia, iv},
                   [ia, iv](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     t.accum_grad(ia, g);
                     t.accum_grad(iv, g.rowwise().sum());
                   });
}

Value transpose(Value a) {
  const std::size_t ia = a.idx;
  return make_node(a.tape, a.val().transpose(), {ia},
                   [ia](Tape& t, std::size_t self) {
                     t.accum_grad(ia, t.grad_of(self).transpose());
                   });
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_cols: no inputs");
  Tape* tape = parts[0].tape;
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> idxs;
  for (const Value& p : parts) {
    check_same_tape("concat_cols", parts[0], p);
    if (p.rows() != rows) shape_error("concat_cols", parts[0].val(), p.val());
    cols += p.cols();
    idxs.push_back(p.idx);
  }
  Mat out(rows, cols);
  Eigen::Index off = 0;
  for (const Value& p : parts) {
    out.middleCols(off, p.cols()) = p.val();
    off += p.cols();
  }
  return make_node(tape, std::move(out), idxs,
                   [idxs](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     Eigen::Index off = 0;
                     for (std::size_t id : idxs) {
                       const Eigen::Index w = t.value_of(id).cols();
                       t.accum_grad(id, g.middleCols(off, w));
                       off += w;
                     }
                   });
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: no inputs");
  Tape* tape = parts[0].tape;
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<std::size_t> idxs;
  for (const Value& p : parts) {
    check_same_tape("concat_rows", parts[0], p);
    if (p.cols() != cols) shape_error("concat_rows", parts[0].val(), p.val());
    rows += p.rows();
    idxs.push_back(p.idx);
  }
  Mat out(rows, cols);
  Eigen::Index off = 0;
  for (const Value& p : parts) {
    out.middleRows(off, p.rows()) = p.val();
    off += p.rows();
  }
  return make_node(tape, std::move(out), idxs,
                   [idxs](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     Eigen::Index off = 0;
                     for (std::size_t id : idxs) {
                       const Eigen::Index h = t.value_of(id).rows();
                       t.accum_grad(id, g.middleRows(off, h));
                       off += h;
                     }
                   });
}

Value slice_cols(Value a, Eigen::Index start, Eigen::Index n) {
  const Mat& A = a.val();
  if (start < 0 || n < 0 || start + n > A.cols())
    throw std::runtime_error("slice_cols: range [" + std::to_string(start) +
                             ", " + std::to_string(start + n) +
                             ") out of bounds for " + shape_str(A));
  const std::size_t ia = a.idx;
  return make_node(a.tape, A.middleCols(start, n), {ia},
                   [ia, start, n](Tape& t, std::size_t self) {
                     const Mat& src = t.value_of(ia);
                     Mat g = Mat::Zero(src.rows(), src.cols());
                     g.middleCols(start, n) = t.grad_of(self);
                     t.accum_grad(ia, g);
                   });
}

Value slice_rows(Value a, Eigen::Index start, Eigen::Index n) {
  const Mat& A = a.val();
  if (start < 0 || n < 0 || start + n > A.rows())
    throw std::runtime_error("slice_rows: range [" + std::to_string(start) +
                             ", " + std::to_string(start + n) +
                             ") out of bounds for " + shape_str(A));
  const std::size_t ia = a.idx;
  return make_node(a.tape, A.middleRows(start, n), {ia},
                   [ia, start, n](Tape& t, std::size_t self) {
                     const Mat& src = t.value_of(ia);
                     Mat g = Mat::Zero(src.rows(), src.cols());
                     g.middleRows(start, n) = t.grad_of(self);
                     t.accum_grad(ia, g);
                   });
}

Value lookup_rows(Value table, const std::vector<int>& rows) {
  const Mat& T = table.val();
  for (int r : rows)
    if (r < 0 || r >= T.rows())
      throw std::runtime_error("lookup_rows: row " + std::to_string(r) +
                               " out of bounds for " + shape_str(T));
  Mat out(static_cast<Eigen::Index>(rows.size()), T.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = T.row(rows[i]);
  const std::size_t it = table.idx;
  return make_node(table.tape, std::move(out), {it},
                   [it, rows](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     const Mat& src = t.value_of(it);
                     Mat d = Mat::Zero(src.rows(), src.cols());
                     for (std::size_t i = 0; i < rows.size(); ++i)
                       d.row(rows[i]) += g.row(i);
                     t.accum_grad(it, d);
                   });
}

Value gather(Value a, const std::vector<int>& rows,
             const std::vector<int>& cols) {
  if (rows.size() != cols.size())
    throw std::runtime_error("gather: index lists differ in length");
  const Mat& A = a.val();
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i] < 0 || rows[i] >= A.rows() || cols[i] < 0 ||
        cols[i] >= A.cols())
      throw std::runtime_error("gather: index (" + std::to_string(rows[i]) +
                               ", " + std::to_string(cols[i]) +
                               ") out of bounds for " + shape_str(A));
  Mat out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) out(i, 0) = A(rows[i], cols[i]);
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia, rows, cols](Tape& t, std::size_t self) {
                     const Mat& g = t.grad_of(self);
                     const Mat& src = t.value_of(ia);
                     Mat d = Mat::Zero(src.rows(), src.cols());
                     for (std::size_t i = 0; i < rows.size(); ++i)
                       d(rows[i], cols[i]) += g(i, 0);
                     t.accum_grad(ia, d);
                   });
}

Value softmax_rows(Value a) {
  const Mat& A = a.val();
  Mat out(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double mx = A.row(r).maxCoeff();
    Eigen::ArrayXd e = (A.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& y = t.value_of(self);
                     const Mat& g = t.grad_of(self);
                     Mat d(y.rows(), y.cols());
                     for (Eigen::Index r = 0; r < y.rows(); ++r) {
                       const double dot = g.row(r).dot(y.row(r));
                       d.row(r) =
                           (y.row(r).array() * (g.row(r).array() - dot))
                               .matrix();
                     }
                     t.accum_grad(ia, d);
                   });
}

Value log_softmax_rows(Value a) {
  const Mat& A = a.val();
  Mat out(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double mx = A.row(r).maxCoeff();
    const double lse = mx + std::log((A.row(r).array() - mx).exp().sum());
    out.row(r) = A.row(r).array() - lse;
  }
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& y = t.value_of(self);  // log-probs
                     const Mat& g = t.grad_of(self);
                     Mat d(y.rows(), y.cols());
                     for (Eigen::Index r = 0; r < y.rows(); ++r) {
                       const double gsum = g.row(r).sum();
                       d.row(r) =
                           g.row(r) - (y.row(r).array().exp() * gsum).matrix();
                     }
                     t.accum_grad(ia, d);
                   });
}

Value logsumexp_cols(Value a) {
  const Mat& A = a.val();
  Mat out(1, A.cols());
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    const double mx = A.col(c).maxCoeff();
    out(0, c) = mx + std::log((A.col(c).array() - mx).exp().sum());
  }
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& A = t.value_of(ia);
                     const Mat& y = t.value_of(self);
                     const Mat& g = t.grad_of(self);
                     Mat d(A.rows(), A.cols());
                     for (Eigen::Index c = 0; c < A.cols(); ++c)
                       d.col(c) =
                           (A.col(c).array() - y(0, c)).exp() * g(0, c);
                     t.accum_grad(ia, d);
                   });
}

Value logsumexp_all(Value a) {
  const Mat& A = a.val();
  const double mx = A.maxCoeff();
  Mat out(1, 1);
  out(0, 0) = mx + std::log((A.array() - mx).exp().sum());
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& A = t.value_of(ia);
                     const double y = t.value_of(self)(0, 0);
                     const double g = t.grad_of(self)(0, 0);
                     Mat d = ((A.array() - y).exp() * g).matrix();
                     t.accum_grad(ia, d);
                   });
}

Value sigmoid(Value a) {
  Mat out = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& y = t.value_of(self);
                     const Mat& g = t.grad_of(self);
                     Mat d = (g.array() * y.array() * (1.0 - y.array())).matrix();
                     t.accum_grad(ia, d);
                   });
}

Value tanh(Value a) {
  Mat out = a.val().array().tanh().matrix();
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& y = t.value_of(self);
                     const Mat& g = t.grad_of(self);
                     Mat d = (g.array() * (1.0 - y.array().square())).matrix();
                     t.accum_grad(ia, d);
                   });
}

Value log_clamped(Value a, double floor) {
  if (floor <= 0.0)
    throw std::runtime_error("log_clamped: floor must be positive");
  const Mat& A = a.val();
  Mat out = A.array().max(floor).log().matrix();
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia, floor](Tape& t, std::size_t self) {
                     const Mat& x = t.value_of(ia);
                     const Mat& g = t.grad_of(self);
                     Mat d = (x.array() > floor)
                                 .select(g.array() / x.array(), 0.0)
                                 .matrix();
                     t.accum_grad(ia, d);
                   });
}

namespace {
double gauss_cdf(double x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  return 0.5 * (1.0 + std::erf(x * inv_sqrt2));
}
double gelu_slope(double x) {
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return gauss_cdf(x) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}
}  // namespace

Value gelu(Value a) {
  const Mat& A = a.val();
  Mat out = A.unaryExpr([](double x) { return x * gauss_cdf(x); });
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& x = t.value_of(ia);
                     const Mat& g = t.grad_of(self);
                     Mat slope = x.unaryExpr(&gelu_slope);
                     Mat d = (g.array() * slope.array()).matrix();
                     t.accum_grad(ia, d);
                   });
}

Value layer_norm(Value x, Value gain, Value bias, double eps) {
  check_same_tape("layer_norm", x, gain);
  check_same_tape("layer_norm", x, bias);
  const Mat& X = x.val();
  const Mat& G = gain.val();
  const Mat& B = bias.val();
  if (G.rows() != 1 || G.cols() != X.cols()) shape_error("layer_norm", X, G);
  if (B.rows() != 1 || B.cols() != X.cols()) shape_error("layer_norm", X, B);
  const Eigen::Index n = X.cols();
  Mat xhat(X.rows(), n);
  Eigen::VectorXd inv_sd(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var =
        (X.row(r).array() - mu).square().sum() / static_cast<double>(n);
    inv_sd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_sd(r);
  }
  Mat out(X.rows(), n);
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    out.row(r) = xhat.row(r).cwiseProduct(G.row(0)) + B.row(0);
  const std::size_t ix = x.idx, ig = gain.idx, ib = bias.idx;
  return make_node(
      x.tape, std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat, inv_sd, n](Tape& t, std::size_t self) {
        const Mat& g = t.grad_of(self);
        const Mat& G = t.value_of(ig);
        Mat dgain = Mat::Zero(1, n);
        Mat dbias = Mat::Zero(1, n);
        Mat dx(xhat.rows(), n);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          Eigen::RowVectorXd gy = g.row(r).cwiseProduct(G.row(0));
          dgain.row(0) += g.row(r).cwiseProduct(xhat.row(r));
          dbias.row(0) += g.row(r);
          const double m1 = gy.sum() * inv_n;
          const double m2 = gy.dot(xhat.row(r)) * inv_n;
          dx.row(r) = ((gy.array() - m1 - xhat.row(r).array() * m2) *
                       inv_sd(r))
                          .matrix();
        }
        t.accum_grad(ix, dx);
        t.accum_grad(ig, dgain);
        t.accum_grad(ib, dbias);
      });
}

Value dropout(Value a, const Mat& mask, double keep_prob) {
  const Mat& A = a.val();
  if (mask.rows() != A.rows() || mask.cols() != A.cols())
    shape_error("dropout", A, mask);
  if (keep_prob <= 0.0 || keep_prob > 1.0)
    throw std::runtime_error("dropout: keep_prob must be in (0, 1]");
  Mat scaled = mask / keep_prob;
  Mat out = A.cwiseProduct(scaled);
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia, scaled](Tape& t, std::size_t self) {
                     t.accum_grad(ia, t.grad_of(self).cwiseProduct(scaled));
                   });
}

Value mean_all(Value a) {
  const Mat& A = a.val();
  Mat out(1, 1);
  out(0, 0) = A.mean();
  const std::size_t ia = a.idx;
  const double inv = 1.0 / static_cast<double>(A.rows() * A.cols());
  return make_node(a.tape, std::move(out), {ia},
                   [ia, inv](Tape& t, std::size_t self) {
                     const Mat& src = t.value_of(ia);
                     const double g = t.grad_of(self)(0, 0);
                     t.accum_grad(
                         ia, Mat::Constant(src.rows(), src.cols(), g * inv));
                   });
}

Value sum_all(Value a) {
  const Mat& A = a.val();
  Mat out(1, 1);
  out(0, 0) = A.sum();
  const std::size_t ia = a.idx;
  return make_node(a.tape, std::move(out), {ia},
                   [ia](Tape& t, std::size_t self) {
                     const Mat& src = t.value_of(ia);
                     const double g = t.grad_of(self)(0, 0);
                     t.accum_grad(ia,
                                  Mat::Constant(src.rows(), src.cols(), g));
                   });
}

Param& ParamSet::add(const std::string& name, Mat init) {
  if (contains(name))
    throw std::runtime_error("ParamSet: duplicate parameter '" + name + "'");
  Param p;
  p.name = name;
  p.grad = Mat::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamSet::at(const std::string& name) {
  for (Param& p : params_)
    if (p.name == name) return p;
  throw std::runtime_error("ParamSet: no parameter '" + name + "'");
}

const Param& ParamSet::at(const std::string& name) const {
  for (const Param& p : params_)
    if (p.name == name) return p;
  throw std::runtime_error("ParamSet: no parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  for (const Param& p : params_)
    if (p.name == name) return true;
  return false;
}

void ParamSet::zero_grads() {
  for (Param& p : params_) p.grad.setZero();
}

std::size_t ParamSet::count_scalars() const {
  std::size_t n = 0;
  for (const Param& p : params_)
    n += static_cast<std::size_t>(p.value.rows() * p.value.cols());
  return n;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(ParamSet& params) {
  auto& ps = params.all();
  if (m_.empty()) {
    m_.reserve(ps.size());
    v_.reserve(ps.size());
    for (const Param& p : ps) {
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (m_.size() != ps.size())
    throw std::runtime_error("AdamOptimizer: parameter count changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Param& p = ps[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      shape_error("optimizer_step", p.value, p.grad);
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = (beta2_ * v_[i].array() +
             (1.0 - beta2_) * p.grad.array().square())
                .matrix();
    Eigen::ArrayXXd mhat = m_[i].array() / bc1;
    Eigen::ArrayXXd vhat = v_[i].array() / bc2;
    p.value.array() -= lr_ * mhat / (vhat.sqrt() + eps_);
    p.grad.setZero();
  }
}

}  // namespace pausenlu
