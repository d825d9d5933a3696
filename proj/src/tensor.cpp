#include "istt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace istt {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap as_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a 2-D tensor, got shape " + t.shape_str());
  return ECMap(t.data(), t.rows(), t.cols());
}

}  // namespace

long shape_numel(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in tensor shape");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
  cols_ = shape_.empty() ? 0 : shape_.back();
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<long>(data_.size()))
    throw ShapeError("tensor data length does not match shape " + shape_str());
  cols_ = shape_.back();
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  int c = static_cast<int>(rows.begin()->size());
  Tensor t({r, c});
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) throw ShapeError("ragged rows in Tensor::from_rows");
    int j = 0;
    for (double v : row) t(i, j++) = v;
    ++i;
  }
  return t;
}

int Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on non-matrix tensor " + shape_str());
  return shape_[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on non-matrix tensor " + shape_str());
  return shape_[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a scalar tensor, shape is " + shape_str());
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ")";
  return os.str();
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " produced a non-finite value");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto am = as_matrix(a);
  auto bm = as_matrix(b);
  if (am.cols() != bm.rows())
    throw ShapeError("matmul inner dimensions disagree: " + a.shape_str() + " x " + b.shape_str());
  Tensor out({a.rows(), b.cols()});
  EMap(out.data(), out.rows(), out.cols()).noalias() = am * bm;
  check_finite(out, "matmul");
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  auto am = as_matrix(a);
  auto bm = as_matrix(b);
  if (am.rows() != bm.rows())
    throw ShapeError("matmul_tn dimensions disagree: " + a.shape_str() + " x " + b.shape_str());
  Tensor out({a.cols(), b.cols()});
  EMap(out.data(), out.rows(), out.cols()).noalias() = am.transpose() * bm;
  check_finite(out, "matmul_tn");
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  auto am = as_matrix(a);
  auto bm = as_matrix(b);
  if (am.cols() != bm.cols())
    throw ShapeError("matmul_nt dimensions disagree: " + a.shape_str() + " x " + b.shape_str());
  Tensor out({a.rows(), b.rows()});
  EMap(out.data(), out.rows(), out.cols()).noalias() = am * bm.transpose();
  check_finite(out, "matmul_nt");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  const double* bp = b.data();
  double* op = out.data();
  for (long i = 0; i < out.numel(); ++i) op[i] += bp[i];
  check_finite(out, "add");
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.numel() != x.cols())
    throw ShapeError("add_row_bias: bias " + bias.shape_str() + " does not match " + x.shape_str());
  Tensor out = x;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) += bias(j);
  check_finite(out, "add_row_bias");
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.vec()) v *= c;
  check_finite(out, "scale");
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax axis out of range");
  const auto& shape = x.shape();
  long inner = 1, outer = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= shape[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  long n = shape[static_cast<size_t>(axis)];

  Tensor out = x;
  double* p = out.data();
  for (long o = 0; o < outer; ++o) {
    for (long in = 0; in < inner; ++in) {
      double* base = p + o * n * inner + in;
      double mx = base[0];
      for (long i = 1; i < n; ++i) mx = std::max(mx, base[i * inner]);
      double sum = 0.0;
      for (long i = 0; i < n; ++i) {
        double e = std::exp(base[i * inner] - mx);
        base[i * inner] = e;
        sum += e;
      }
      for (long i = 0; i < n; ++i) base[i * inner] /= sum;
    }
  }
  check_finite(out, "softmax");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm expects a matrix, got " + x.shape_str());
  int n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm gain/bias do not match last dimension of " + x.shape_str());
  Tensor out({x.rows(), n});
  for (int i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x(i, j);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = x(i, j) - mean;
      var += d * d;
    }
    var /= n;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) out(i, j) = (x(i, j) - mean) * inv * gain(j) + bias(j);
  }
  check_finite(out, "layer_norm");
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttnMask& mask, int n_heads, Tensor* probs) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeError("attention expects matrices");
  int d = q.cols();
  if (k.cols() != d || v.cols() != d)
    throw ShapeError("attention q/k/v widths disagree");
  if (k.rows() != v.rows()) throw ShapeError("attention key/value row counts disagree");
  if (n_heads <= 0 || d % n_heads != 0)
    throw ShapeError("attention width not divisible by head count");
  if (mask.rows != q.rows() || mask.cols != k.rows())
    throw ShapeError("attention mask shape does not match q rows x k rows");

  const int dk = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  const int mq = q.rows();
  const int mk = k.rows();

  Tensor out({mq, d});
  if (probs) *probs = Tensor({n_heads * mq, mk});

  std::vector<double> scores(static_cast<size_t>(mk));
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * dk;
    for (int i = 0; i < mq; ++i) {
      bool any_open = false;
      for (int j = 0; j < mk; ++j) {
        double s = 0.0;
        const double* qp = q.data() + static_cast<size_t>(i) * d + off;
        const double* kp = k.data() + static_cast<size_t>(j) * d + off;
        for (int t = 0; t < dk; ++t) s += qp[t] * kp[t];
        s *= sc;
        if (!mask.is_open(i, j)) s += -1e9;
        else any_open = true;
        scores[static_cast<size_t>(j)] = s;
      }
      if (!any_open) {
        // all keys masked: define the row output as zeros
        if (probs)
          for (int j = 0; j < mk; ++j) (*probs)(h * mq + i, j) = 0.0;
        continue;  // out row stays zero for this head slice
      }
      double mx = *std::max_element(scores.begin(), scores.end());
      double sum = 0.0;
      for (int j = 0; j < mk; ++j) {
        scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
        sum += scores[static_cast<size_t>(j)];
      }
      double* orow = out.data() + static_cast<size_t>(i) * d + off;
      for (int j = 0; j < mk; ++j) {
        double p = scores[static_cast<size_t>(j)] / sum;
        if (probs) (*probs)(h * mq + i, j) = p;
        if (p != 0.0) {
          const double* vp = v.data() + static_cast<size_t>(j) * d + off;
          for (int t = 0; t < dk; ++t) orow[t] += p * vp[t];
        }
      }
    }
  }
  check_finite(out, "attention");
  return out;
}

}  // namespace istt
