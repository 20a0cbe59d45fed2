#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pausenlu {

// All compute is 64-bit, row-major dense matrices.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Value {
  Tape* tape = nullptr;
  std::size_t idx = 0;

  const Mat& val() const;
  const Mat& grad() const;  // zero matrix if backward never touched the node
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

// A dynamically built computation graph. One tape per training step; nodes
// are stored in creation order, which is also the topological order, so the
// backward sweep and all gradient accumulation are deterministic.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(Mat value, bool requires_grad = false);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. loss must be
  // a 1x1 node on this tape.
  void backward(Value loss);

  // --- internal plumbing for the op implementations ---
  std::size_t push(Mat value, std::vector<std::size_t> parents,
                   std::function<void(Tape&, std::size_t)> backward_fn);
  const Mat& value_of(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  const Mat& grad_of(std::size_t i) const;
  void accum_grad(std::size_t i, const Mat& delta);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool grad_set = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward_fn;  // arg: own index
  };
  std::vector<Node> nodes_;
  Mat zero_grad_;  // scratch returned for untouched nodes

  friend struct Value;
};

// Primitive operations. Shape mismatches throw, naming the op and shapes.
Value matmul(Value a, Value b);
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);  // elementwise
Value scale(Value a, double s);
Value add_rowvec(Value a, Value v);  // v: 1 x cols, broadcast over rows
Value add_colvec(Value a, Value v);  // v: rows x 1, broadcast over cols
Value transpose(Value a);
Value concat_cols(const std::vector<Value>& parts);
Value concat_rows(const std::vector<Value>& parts);
Value slice_cols(Value a, Eigen::Index start, Eigen::Index n);
Value slice_rows(Value a, Eigen::Index start, Eigen::Index n);
Value lookup_rows(Value table, const std::vector<int>& rows);
// Picks entries (rows[i], cols[i]); result is n x 1.
Value gather(Value a, const std::vector<int>& rows,
             const std::vector<int>& cols);
Value softmax_rows(Value a);
Value log_softmax_rows(Value a);
Value logsumexp_cols(Value a);  // reduce over rows -> 1 x cols
Value logsumexp_all(Value a);   // -> 1 x 1
Value sigmoid(Value a);
Value tanh(Value a);
// log(max(x, floor)); gradient is 1/x where x > floor and 0 where clamped.
Value log_clamped(Value a, double floor);
Value gelu(Value a);  // exact erf form
// Row-wise normalization; gain/bias are 1 x cols.
Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);
// mask entries are 0/1; kept activations are rescaled by 1/keep_prob.
Value dropout(Value a, const Mat& mask, double keep_prob);
Value mean_all(Value a);  // -> 1 x 1
Value sum_all(Value a);   // -> 1 x 1

// Named trainable parameters, in registration order.
struct Param {
  std::string name;
  Mat value;
  Mat grad;  // accumulated across a batch; zeroed by the optimizer step
};

class ParamSet {
 public:
  Param& add(const std::string& name, Mat init);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  void zero_grads();
  std::size_t count_scalars() const;

 private:
  std::vector<Param> params_;
};

// Adaptive-moment optimizer with bias correction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8);
  // Applies one update from the accumulated grads, then zeroes them.
  void step(ParamSet& params);
  std::uint64_t step_count() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Mat> m_, v_;  // parallel to params by registration order
};

}  // namespace pausenlu
