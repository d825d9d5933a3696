#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "istt/error.hpp"

namespace istt {

// Dense row-major tensor of doubles. Shapes are small (desk scale), so we
// keep the representation plain: a dims vector plus a flat data vector.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  // 2-D convenience constructor used heavily in tests.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return !shape_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long numel() const { return static_cast<long>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  // Rows/cols of a 2-D tensor (most of the model works on matrices).
  int rows() const;
  int cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator()(int i) { return data_[static_cast<size_t>(i)]; }
  double operator()(int i) const { return data_[static_cast<size_t>(i)]; }
  double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

  double item() const;  // value of a scalar (numel == 1)

  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
  long cols_ = 0;  // stride of the last dimension's parent, cached for operator()
};

long shape_numel(const std::vector<int>& shape);

// Throws NumericError naming `what` if t contains NaN or Inf.
void check_finite(const Tensor& t, const char* what);

// Boolean attention mask over rows (queries) x cols (keys); open == attendable.
struct AttnMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> open;

  AttnMask() = default;
  AttnMask(int r, int c) : rows(r), cols(c), open(static_cast<size_t>(r) * c, 0) {}
  static AttnMask all_open(int r, int c) {
    AttnMask m(r, c);
    std::fill(m.open.begin(), m.open.end(), std::uint8_t{1});
    return m;
  }
  bool is_open(int i, int j) const { return open[static_cast<size_t>(i) * cols + j] != 0; }
  void set(int i, int j, bool o) { open[static_cast<size_t>(i) * cols + j] = o ? 1 : 0; }
};

// ---- raw kernels (shared by the autograd ops and the inference path) ----

Tensor matmul(const Tensor& a, const Tensor& b);              // [m,k]x[k,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);           // a^T b
Tensor matmul_nt(const Tensor& a, const Tensor& b);           // a b^T
Tensor add(const Tensor& a, const Tensor& b);                 // same shape
Tensor add_row_bias(const Tensor& x, const Tensor& bias);     // [m,n] + [n]
Tensor scale(const Tensor& a, double c);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor relu(const Tensor& x);

// Multi-head scaled dot-product attention over already-projected q/k/v.
// Heads split the last dimension; closed positions get -1e9 added to their
// score; rows whose keys are all closed produce zeros. If probs != nullptr
// the post-softmax weights are stored there as [n_heads*rows, cols].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttnMask& mask, int n_heads, Tensor* probs = nullptr);

}  // namespace istt
