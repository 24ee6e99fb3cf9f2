#include "petbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace petbench {

std::string_view name(UnaryOp op) {
  switch (op) {
    case UnaryOp::neg: return "neg";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::square: return "square";
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::relu: return "relu";
    case UnaryOp::gelu: return "gelu";
    case UnaryOp::silu: return "silu";
    case UnaryOp::softplus: return "softplus";
  }
  return "?";
}

UnaryOp parse_unary_op(std::string_view n) {
  for (auto op : {UnaryOp::neg, UnaryOp::exp, UnaryOp::log, UnaryOp::square, UnaryOp::sigmoid, UnaryOp::tanh,
                  UnaryOp::relu, UnaryOp::gelu, UnaryOp::silu, UnaryOp::softplus}) {
    if (name(op) == n) return op;
  }
  throw std::invalid_argument("unknown activation '" + std::string(n) + "'");
}

namespace {

template <typename S>
using ColMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

int normalize_dim(int dim, int ndim) {
  int d = dim < 0 ? dim + ndim : dim;
  if (d < 0 || d >= ndim) throw ShapeError("dimension " + std::to_string(dim) + " out of range");
  return d;
}

struct Split {
  Index outer, mid, inner;
};

Split split_at(const Shape& shape, int dim) {
  Split s{1, shape[static_cast<std::size_t>(dim)], 1};
  for (int i = 0; i < dim; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(dim) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// GELU, tanh approximation.
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

template <typename S>
S stable_sigmoid(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
Array<S> unary_value(UnaryOp op, const Array<S>& x) {
  switch (op) {
    case UnaryOp::neg: return -x;
    case UnaryOp::exp: return x.exp();
    case UnaryOp::log: return x.log();
    case UnaryOp::square: return x.square();
    case UnaryOp::sigmoid: return x.unaryExpr([](S v) { return stable_sigmoid(v); });
    case UnaryOp::tanh: return x.tanh();
    case UnaryOp::relu: return x.max(S(0));
    case UnaryOp::gelu: {
      Array<S> inner = S(kSqrt2OverPi) * (x + S(kGeluC) * x.cube());
      return S(0.5) * x * (S(1) + inner.tanh());
    }
    case UnaryOp::silu: return x * x.unaryExpr([](S v) { return stable_sigmoid(v); });
    case UnaryOp::softplus:
      return x.max(S(0)) + (-x.abs()).exp().log1p();
  }
  throw std::invalid_argument("unknown unary op");
}

// Local derivative dy/dx given input x and output y.
template <typename S>
Array<S> unary_derivative(UnaryOp op, const Array<S>& x, const Array<S>& y) {
  switch (op) {
    case UnaryOp::neg: return Array<S>::Constant(x.size(), S(-1));
    case UnaryOp::exp: return y;
    case UnaryOp::log: return x.inverse();
    case UnaryOp::square: return S(2) * x;
    case UnaryOp::sigmoid: return y * (S(1) - y);
    case UnaryOp::tanh: return S(1) - y.square();
    case UnaryOp::relu: return (x > S(0)).template cast<S>();
    case UnaryOp::gelu: {
      Array<S> t = (S(kSqrt2OverPi) * (x + S(kGeluC) * x.cube())).tanh();
      return S(0.5) * (S(1) + t) +
             S(0.5) * x * (S(1) - t.square()) * S(kSqrt2OverPi) * (S(1) + S(3 * kGeluC) * x.square());
    }
    case UnaryOp::silu: {
      Array<S> s = x.unaryExpr([](S v) { return stable_sigmoid(v); });
      return s * (S(1) + x * (S(1) - s));
    }
    case UnaryOp::softplus: return x.unaryExpr([](S v) { return stable_sigmoid(v); });
  }
  throw std::invalid_argument("unknown unary op");
}

const char* op_label(UnaryOp op) {
  switch (op) {
    case UnaryOp::neg: return "neg";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::square: return "square";
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::relu: return "relu";
    case UnaryOp::gelu: return "gelu";
    case UnaryOp::silu: return "silu";
    case UnaryOp::softplus: return "softplus";
  }
  return "unary";
}

const char* op_label(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "binary";
}

}  // namespace

template <typename S>
Tensor<S> elementwise(UnaryOp op, const Tensor<S>& a) {
  Array<S> y = unary_value(op, a.value());
  Array<S> saved_y = a.requires_grad() ? y : Array<S>();
  Tensor<S> in = a;
  return make_result<S>(a.shape(), std::move(y), {a}, op_label(op),
                        [op, in, saved_y](const Array<S>& g, std::span<Array<S>* const> pg) {
                          *pg[0] += g * unary_derivative(op, in.value(), saved_y);
                        });
}

template <typename S>
Tensor<S> elementwise(BinaryOp op, const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    Array<S> y;
    switch (op) {
      case BinaryOp::add: y = a.value() + b.value(); break;
      case BinaryOp::sub: y = a.value() - b.value(); break;
      case BinaryOp::mul: y = a.value() * b.value(); break;
      case BinaryOp::div: y = a.value() / b.value(); break;
    }
    return make_result<S>(sa, std::move(y), {a, b}, op_label(op),
                          [op, a, b](const Array<S>& g, std::span<Array<S>* const> pg) {
                            switch (op) {
                              case BinaryOp::add:
                                if (pg[0]) *pg[0] += g;
                                if (pg[1]) *pg[1] += g;
                                break;
                              case BinaryOp::sub:
                                if (pg[0]) *pg[0] += g;
                                if (pg[1]) *pg[1] -= g;
                                break;
                              case BinaryOp::mul:
                                if (pg[0]) *pg[0] += g * b.value();
                                if (pg[1]) *pg[1] += g * a.value();
                                break;
                              case BinaryOp::div:
                                if (pg[0]) *pg[0] += g / b.value();
                                if (pg[1]) *pg[1] -= g * a.value() / b.value().square();
                                break;
                            }
                          });
  }

  // Broadcast: the short operand repeats over the leading dims of the long one.
  bool a_long;
  if (b.size() == 1 || is_suffix(sb, sa)) {
    a_long = true;
  } else if (a.size() == 1 || is_suffix(sa, sb)) {
    a_long = false;
  } else {
    throw ShapeError(std::string(op_label(op)) + ": shape mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  const Tensor<S>& lng = a_long ? a : b;
  const Tensor<S>& shr = a_long ? b : a;
  const Index inner = shr.size();
  const Index outer = lng.size() / inner;
  using CMap = Eigen::Map<const ColMatrix<S>>;
  auto L = CMap(lng.value().data(), inner, outer).array();
  auto s = shr.value();

  Array<S> y(lng.size());
  auto Y = Eigen::Map<ColMatrix<S>>(y.data(), inner, outer).array();
  for (Index o = 0; o < outer; ++o) {
    auto lcol = L.col(o);
    switch (op) {
      case BinaryOp::add: Y.col(o) = lcol + s; break;
      case BinaryOp::mul: Y.col(o) = lcol * s; break;
      case BinaryOp::sub: Y.col(o) = a_long ? (lcol - s).eval() : (s - lcol).eval(); break;
      case BinaryOp::div: Y.col(o) = a_long ? (lcol / s).eval() : (s / lcol).eval(); break;
    }
  }

  return make_result<S>(
      lng.shape(), std::move(y), {a, b}, op_label(op),
      [op, a_long, lng, shr, inner, outer](const Array<S>& g, std::span<Array<S>* const> pg) {
        Array<S>* g_long = a_long ? pg[0] : pg[1];
        Array<S>* g_short = a_long ? pg[1] : pg[0];
        auto G = Eigen::Map<const ColMatrix<S>>(g.data(), inner, outer).array();
        auto L = Eigen::Map<const ColMatrix<S>>(lng.value().data(), inner, outer).array();
        const auto& s = shr.value();
        // d y / d long and d y / d short per element, with y = a op b.
        for (Index o = 0; o < outer; ++o) {
          auto gcol = G.col(o);
          auto lcol = L.col(o);
          Array<S> dl, ds;
          switch (op) {
            case BinaryOp::add:
              dl = gcol;
              ds = gcol;
              break;
            case BinaryOp::sub:
              dl = a_long ? Array<S>(gcol) : Array<S>(-gcol);
              ds = a_long ? Array<S>(-gcol) : Array<S>(gcol);
              break;
            case BinaryOp::mul:
              dl = gcol * s;
              ds = gcol * lcol;
              break;
            case BinaryOp::div:
              if (a_long) {  // y = l / s
                dl = gcol / s;
                ds = -gcol * lcol / s.square();
              } else {  // y = s / l
                dl = -gcol * s / lcol.square();
                ds = gcol / lcol;
              }
              break;
          }
          if (g_long) {
            Eigen::Map<ColMatrix<S>>(g_long->data(), inner, outer).array().col(o) += dl;
          }
          if (g_short) *g_short += ds;
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  return make_result<S>(a.shape(), a.value() * factor, {a}, "scale",
                        [factor](const Array<S>& g, std::span<Array<S>* const> pg) { *pg[0] += g * factor; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S offset) {
  return make_result<S>(a.shape(), a.value() + offset, {a}, "add_scalar",
                        [](const Array<S>& g, std::span<Array<S>* const> pg) { *pg[0] += g; });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeError("matmul expects 2-d operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = a.dim(0), n = b.dim(1);
  Array<S> y(m * n);
  MatrixMap<S>(y.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result<S>({m, n}, std::move(y), {a, b}, "matmul",
                        [a, b, m, n](const Array<S>& g, std::span<Array<S>* const> pg) {
                          ConstMatrixMap<S> G(g.data(), m, n);
                          if (pg[0]) MatrixMap<S>(pg[0]->data(), m, a.dim(1)).noalias() += G * b.matrix().transpose();
                          if (pg[1]) MatrixMap<S>(pg[1]->data(), b.dim(0), n).noalias() += a.matrix().transpose() * G;
                        });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.ndim() != 2) throw ShapeError("linear weight must be 2-d, got " + to_string(weight.shape()));
  const Index in = weight.dim(1), out = weight.dim(0);
  if (x.dim(-1) != in) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  if (bias.defined() && bias.size() != out) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  const Index rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = out;
  Array<S> y(rows * out);
  MatrixMap<S> Y(y.data(), rows, out);
  Y.noalias() = x.matrix() * weight.matrix().transpose();
  if (bias.defined()) Y.rowwise() += bias.value().matrix().transpose();

  std::vector<Tensor<S>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<S>(std::move(shape), std::move(y), parents, "linear",
                        [x, weight, rows, in, out](const Array<S>& g, std::span<Array<S>* const> pg) {
                          ConstMatrixMap<S> G(g.data(), rows, out);
                          if (pg[0]) MatrixMap<S>(pg[0]->data(), rows, in).noalias() += G * weight.matrix();
                          if (pg[1]) MatrixMap<S>(pg[1]->data(), out, in).noalias() += G.transpose() * x.matrix();
                          if (pg.size() > 2 && pg[2]) pg[2]->matrix() += G.colwise().sum().transpose();
                        });
}

template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm expects [B,m,k] and [B,k,n], got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  if (bk != k) {
    throw ShapeError("bmm inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index b_rows = b.dim(1), b_cols = b.dim(2);
  Array<S> y(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap<S> A(a.value().data() + i * m * k, m, k);
    ConstMatrixMap<S> B(b.value().data() + i * b_rows * b_cols, b_rows, b_cols);
    MatrixMap<S> Y(y.data() + i * m * n, m, n);
    if (transpose_b) {
      Y.noalias() = A * B.transpose();
    } else {
      Y.noalias() = A * B;
    }
  }
  return make_result<S>(
      {batch, m, n}, std::move(y), {a, b}, "bmm",
      [a, b, transpose_b, batch, m, k, n, b_rows, b_cols](const Array<S>& g, std::span<Array<S>* const> pg) {
        for (Index i = 0; i < batch; ++i) {
          ConstMatrixMap<S> G(g.data() + i * m * n, m, n);
          ConstMatrixMap<S> A(a.value().data() + i * m * k, m, k);
          ConstMatrixMap<S> B(b.value().data() + i * b_rows * b_cols, b_rows, b_cols);
          if (pg[0]) {
            MatrixMap<S> GA(pg[0]->data() + i * m * k, m, k);
            if (transpose_b) {
              GA.noalias() += G * B;
            } else {
              GA.noalias() += G * B.transpose();
            }
          }
          if (pg[1]) {
            MatrixMap<S> GB(pg[1]->data() + i * b_rows * b_cols, b_rows, b_cols);
            if (transpose_b) {
              GB.noalias() += G.transpose() * A;
            } else {
              GB.noalias() += A.transpose() * G;
            }
          }
        }
      });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  return make_result<S>({1}, Array<S>::Constant(1, x.value().sum()), {x}, "sum",
                        [](const Array<S>& g, std::span<Array<S>* const> pg) { *pg[0] += g[0]; });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const S inv = S(1) / static_cast<S>(x.size());
  return make_result<S>({1}, Array<S>::Constant(1, x.value().sum() * inv), {x}, "mean",
                        [inv](const Array<S>& g, std::span<Array<S>* const> pg) { *pg[0] += g[0] * inv; });
}

template <typename S>
Tensor<S> mean_dim(const Tensor<S>& x, int dim) {
  int d = normalize_dim(dim, x.ndim());
  Split sp = split_at(x.shape(), d);
  Shape shape = x.shape();
  shape.erase(shape.begin() + d);
  if (shape.empty()) shape = {1};
  const S inv = S(1) / static_cast<S>(sp.mid);
  Array<S> y = Array<S>::Zero(sp.outer * sp.inner);
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index m = 0; m < sp.mid; ++m) {
      y.segment(o * sp.inner, sp.inner) += x.value().segment((o * sp.mid + m) * sp.inner, sp.inner);
    }
  }
  y *= inv;
  return make_result<S>(std::move(shape), std::move(y), {x}, "mean_dim",
                        [sp, inv](const Array<S>& g, std::span<Array<S>* const> pg) {
                          for (Index o = 0; o < sp.outer; ++o) {
                            for (Index m = 0; m < sp.mid; ++m) {
                              pg[0]->segment((o * sp.mid + m) * sp.inner, sp.inner) +=
                                  g.segment(o * sp.inner, sp.inner) * inv;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return make_result<S>(std::move(shape), x.value(), {x}, "reshape",
                        [](const Array<S>& g, std::span<Array<S>* const> pg) { *pg[0] += g; });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int dim, Index start, Index length) {
  int d = normalize_dim(dim, x.ndim());
  Split sp = split_at(x.shape(), d);
  if (start < 0 || length <= 0 || start + length > sp.mid) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                     to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(d)] = length;
  const Index block = length * sp.inner;
  Array<S> y(sp.outer * block);
  for (Index o = 0; o < sp.outer; ++o) {
    y.segment(o * block, block) = x.value().segment((o * sp.mid + start) * sp.inner, block);
  }
  return make_result<S>(std::move(shape), std::move(y), {x}, "slice",
                        [sp, start, block](const Array<S>& g, std::span<Array<S>* const> pg) {
                          for (Index o = 0; o < sp.outer; ++o) {
                            pg[0]->segment((o * sp.mid + start) * sp.inner, block) += g.segment(o * block, block);
                          }
                        });
}

template <typename S>
Tensor<S> select(const Tensor<S>& x, int dim, Index index) {
  int d = normalize_dim(dim, x.ndim());
  Tensor<S> s = slice(x, d, index, 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + d);
  if (shape.empty()) shape = {1};
  return reshape(s, std::move(shape));
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int nd = parts.front().ndim();
  int d = normalize_dim(dim, nd);
  Shape shape = parts.front().shape();
  Index total = 0;
  std::vector<Index> mids;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (static_cast<int>(ps.size()) != nd) throw ShapeError("concat rank mismatch");
    ps[static_cast<std::size_t>(d)] = shape[static_cast<std::size_t>(d)];
    if (ps != shape) {
      throw ShapeError("concat shape mismatch " + to_string(parts.front().shape()) + " vs " + to_string(p.shape()));
    }
    mids.push_back(p.dim(d));
    total += p.dim(d);
  }
  shape[static_cast<std::size_t>(d)] = total;
  Split sp = split_at(shape, d);
  Array<S> y(numel(shape));
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Index block = mids[i] * sp.inner;
    for (Index o = 0; o < sp.outer; ++o) {
      y.segment((o * sp.mid + offset) * sp.inner, block) = parts[i].value().segment(o * block, block);
    }
    offset += mids[i];
  }
  return make_result<S>(std::move(shape), std::move(y), parts, "concat",
                        [sp, mids](const Array<S>& g, std::span<Array<S>* const> pg) {
                          Index offset = 0;
                          for (std::size_t i = 0; i < mids.size(); ++i) {
                            const Index block = mids[i] * sp.inner;
                            if (pg[i]) {
                              for (Index o = 0; o < sp.outer; ++o) {
                                pg[i]->segment(o * block, block) +=
                                    g.segment((o * sp.mid + offset) * sp.inner, block);
                              }
                            }
                            offset += mids[i];
                          }
                        });
}

namespace {

template <typename S>
RowMatrix<S> row_softmax(ConstMatrixMap<S> X) {
  RowMatrix<S> Y = (X.colwise() - X.rowwise().maxCoeff()).array().exp().matrix();
  Y.array().colwise() /= Y.rowwise().sum().array();
  return Y;
}

}  // namespace

template <typename S>
Tensor<S> softmax_last(const Tensor<S>& x) {
  const Index cols = x.dim(-1), rows = x.size() / cols;
  Array<S> y(x.size());
  MatrixMap<S>(y.data(), rows, cols) = row_softmax<S>(x.matrix());
  Array<S> saved = y;
  return make_result<S>(x.shape(), std::move(y), {x}, "softmax",
                        [saved, rows, cols](const Array<S>& g, std::span<Array<S>* const> pg) {
                          ConstMatrixMap<S> Y(saved.data(), rows, cols);
                          ConstMatrixMap<S> G(g.data(), rows, cols);
                          auto dot = (G.array() * Y.array()).rowwise().sum();
                          MatrixMap<S>(pg[0]->data(), rows, cols).array() +=
                              Y.array() * (G.array().colwise() - dot);
                        });
}

template <typename S>
Tensor<S> log_softmax_last(const Tensor<S>& x) {
  const Index cols = x.dim(-1), rows = x.size() / cols;
  auto X = x.matrix();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mx = X.rowwise().maxCoeff();
  Eigen::Matrix<S, Eigen::Dynamic, 1> lse =
      mx.array() + (X.colwise() - mx).array().exp().rowwise().sum().log();
  Array<S> y(x.size());
  MatrixMap<S>(y.data(), rows, cols) = X.colwise() - lse;
  Array<S> saved = y;
  return make_result<S>(x.shape(), std::move(y), {x}, "log_softmax",
                        [saved, rows, cols](const Array<S>& g, std::span<Array<S>* const> pg) {
                          ConstMatrixMap<S> Y(saved.data(), rows, cols);
                          ConstMatrixMap<S> G(g.data(), rows, cols);
                          auto gs = G.rowwise().sum();
                          MatrixMap<S>(pg[0]->data(), rows, cols) +=
                              G - (Y.array().exp().colwise() * gs.array()).matrix();
                        });
}

template <typename S>
Tensor<S> logsumexp_last(const Tensor<S>& x) {
  const Index cols = x.dim(-1), rows = x.size() / cols;
  auto X = x.matrix();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mx = X.rowwise().maxCoeff();
  Array<S> y = mx.array() + (X.colwise() - mx).array().exp().rowwise().sum().log();
  Shape shape = x.shape();
  shape.pop_back();
  if (shape.empty()) shape = {1};
  Tensor<S> in = x;
  return make_result<S>(std::move(shape), std::move(y), {x}, "logsumexp",
                        [in, rows, cols](const Array<S>& g, std::span<Array<S>* const> pg) {
                          RowMatrix<S> P = row_softmax<S>(in.matrix());
                          MatrixMap<S>(pg[0]->data(), rows, cols).array() += P.array().colwise() * g;
                        });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy expects [B,K] logits, got " + to_string(logits.shape()));
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) throw std::out_of_range("label " + std::to_string(l) + " out of range");
  }
  RowMatrix<S> P = row_softmax<S>(logits.matrix());
  auto X = logits.matrix();
  double total = 0;
  for (Index i = 0; i < batch; ++i) {
    S mx = X.row(i).maxCoeff();
    S lse = mx + std::log((X.row(i).array() - mx).exp().sum());
    total += static_cast<double>(lse - X(i, labels[static_cast<std::size_t>(i)]));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<S>({1}, Array<S>::Constant(1, static_cast<S>(total / static_cast<double>(batch))), {logits},
                        "cross_entropy",
                        [P = std::move(P), lab, batch, classes](const Array<S>& g, std::span<Array<S>* const> pg) {
                          MatrixMap<S> GX(pg[0]->data(), batch, classes);
                          const S f = g[0] / static_cast<S>(batch);
                          GX += P * f;
                          for (Index i = 0; i < batch; ++i) GX(i, lab[static_cast<std::size_t>(i)]) -= f;
                        });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  const Index d = x.dim(-1), rows = x.size() / d;
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: last extent " + std::to_string(d) + " does not match parameters");
  }
  auto X = x.matrix();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mu = X.rowwise().mean();
  RowMatrix<S> centered = X.colwise() - mu;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<S>(d)) + eps).rsqrt();
  RowMatrix<S> xhat = centered.array().colwise() * inv_std.array();
  Array<S> y(x.size());
  MatrixMap<S> Y(y.data(), rows, d);
  Y = (xhat.array().rowwise() * gamma.value().transpose()).rowwise() + beta.value().transpose();
  return make_result<S>(
      x.shape(), std::move(y), {x, gamma, beta}, "layer_norm",
      [xhat = std::move(xhat), inv_std, gamma, rows, d](const Array<S>& g, std::span<Array<S>* const> pg) {
        ConstMatrixMap<S> G(g.data(), rows, d);
        if (pg[1]) pg[1]->matrix() += (G.array() * xhat.array()).colwise().sum().matrix().transpose();
        if (pg[2]) pg[2]->matrix() += G.colwise().sum().transpose();
        if (pg[0]) {
          RowMatrix<S> gx = G.array().rowwise() * gamma.value().transpose();
          auto m1 = gx.rowwise().mean();
          auto m2 = (gx.array() * xhat.array()).rowwise().mean();
          RowMatrix<S> dx = gx;
          dx.colwise() -= m1;
          dx.array() -= xhat.array().colwise() * m2.array();
          dx.array().colwise() *= inv_std.array();
          MatrixMap<S>(pg[0]->data(), rows, d) += dx;
        }
      });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Index stride, Index padding) {
  if (x.ndim() != 4 || weight.ndim() != 4) {
    throw ShapeError("conv2d expects x[B,C,H,W] and weight[O,C,k,k], got " + to_string(x.shape()) + " and " +
                     to_string(weight.shape()));
  }
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C || weight.dim(3) != k) {
    throw ShapeError("conv2d weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  }
  if (stride <= 0 || padding < 0 || H + 2 * padding < k || W + 2 * padding < k) {
    throw ShapeError("conv2d invalid geometry: input " + to_string(x.shape()) + ", kernel " + std::to_string(k) +
                     ", stride " + std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  if (bias.defined() && bias.size() != O) throw ShapeError("conv2d bias size mismatch");
  const Index Ho = (H + 2 * padding - k) / stride + 1;
  const Index Wo = (W + 2 * padding - k) / stride + 1;
  const Index P = Ho * Wo, K = C * k * k;

  // im2col: rows are (c, ki, kj), columns are (b, oy, ox).
  RowMatrix<S> col = RowMatrix<S>::Zero(K, B * P);
  const S* xd = x.value().data();
  for (Index c = 0; c < C; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        S* row = col.row((c * k + ki) * k + kj).data();
        for (Index b = 0; b < B; ++b) {
          const S* plane = xd + (b * C + c) * H * W;
          for (Index oy = 0; oy < Ho; ++oy) {
            const Index iy = oy * stride - padding + ki;
            if (iy < 0 || iy >= H) continue;
            S* dst = row + b * P + oy * Wo;
            for (Index ox = 0; ox < Wo; ++ox) {
              const Index ix = ox * stride - padding + kj;
              if (ix >= 0 && ix < W) dst[ox] = plane[iy * W + ix];
            }
          }
        }
      }
    }
  }
  ConstMatrixMap<S> Wm(weight.value().data(), O, K);
  RowMatrix<S> out = Wm * col;
  Array<S> y(B * O * P);
  for (Index b = 0; b < B; ++b) {
    MatrixMap<S> Yb(y.data() + b * O * P, O, P);
    Yb = out.middleCols(b * P, P);
    if (bias.defined()) Yb.colwise() += bias.value().matrix();
  }

  std::vector<Tensor<S>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<S>(
      {B, O, Ho, Wo}, std::move(y), parents, "conv2d",
      [col = std::move(col), weight, B, C, H, W, O, k, Ho, Wo, P, K, stride, padding](
          const Array<S>& g, std::span<Array<S>* const> pg) {
        RowMatrix<S> G(O, B * P);
        for (Index b = 0; b < B; ++b) G.middleCols(b * P, P) = ConstMatrixMap<S>(g.data() + b * O * P, O, P);
        if (pg[1]) MatrixMap<S>(pg[1]->data(), O, K).noalias() += G * col.transpose();
        if (pg.size() > 2 && pg[2]) pg[2]->matrix() += G.rowwise().sum();
        if (pg[0]) {
          ConstMatrixMap<S> Wm(weight.value().data(), O, K);
          RowMatrix<S> gcol = Wm.transpose() * G;
          S* gx = pg[0]->data();
          for (Index c = 0; c < C; ++c) {
            for (Index ki = 0; ki < k; ++ki) {
              for (Index kj = 0; kj < k; ++kj) {
                const S* row = gcol.row((c * k + ki) * k + kj).data();
                for (Index b = 0; b < B; ++b) {
                  S* plane = gx + (b * C + c) * H * W;
                  for (Index oy = 0; oy < Ho; ++oy) {
                    const Index iy = oy * stride - padding + ki;
                    if (iy < 0 || iy >= H) continue;
                    const S* src = row + b * P + oy * Wo;
                    for (Index ox = 0; ox < Wo; ++ox) {
                      const Index ix = ox * stride - padding + kj;
                      if (ix >= 0 && ix < W) plane[iy * W + ix] += src[ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, Index window) {
  if (x.ndim() != 4) throw ShapeError("max_pool2d expects [B,C,H,W], got " + to_string(x.shape()));
  if (window <= 0) throw ShapeError("max_pool2d window must be positive");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = H / window, Wo = W / window;
  if (Ho == 0 || Wo == 0) throw ShapeError("max_pool2d window larger than input " + to_string(x.shape()));
  Array<S> y(B * C * Ho * Wo);
  std::vector<Index> argmax(static_cast<std::size_t>(y.size()));
  const S* xd = x.value().data();
  Index out = 0;
  for (Index bc = 0; bc < B * C; ++bc) {
    const Index base = bc * H * W;
    for (Index oy = 0; oy < Ho; ++oy) {
      for (Index ox = 0; ox < Wo; ++ox, ++out) {
        Index best = base + oy * window * W + ox * window;
        for (Index dy = 0; dy < window; ++dy) {
          for (Index dx = 0; dx < window; ++dx) {
            Index idx = base + (oy * window + dy) * W + ox * window + dx;
            if (xd[idx] > xd[best]) best = idx;
          }
        }
        y[out] = xd[best];
        argmax[static_cast<std::size_t>(out)] = best;
      }
    }
  }
  return make_result<S>({B, C, Ho, Wo}, std::move(y), {x}, "max_pool2d",
                        [argmax = std::move(argmax)](const Array<S>& g, std::span<Array<S>* const> pg) {
                          for (std::size_t i = 0; i < argmax.size(); ++i) {
                            (*pg[0])[argmax[i]] += g[static_cast<Index>(i)];
                          }
                        });
}

template <typename S>
Tensor<S> apply_mask(const Tensor<S>& x, const Array<S>& mask) {
  if (mask.size() != x.size()) throw ShapeError("mask size does not match " + to_string(x.shape()));
  return make_result<S>(x.shape(), x.value() * mask, {x}, "mask",
                        [mask](const Array<S>& g, std::span<Array<S>* const> pg) { *pg[0] += g * mask; });
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  Array<S> mask(x.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = unif(rng) < p ? S(0) : keep_scale;
  return apply_mask(x, mask);
}

template <typename S>
Tensor<S> indicator_nonpositive(const Tensor<S>& x) {
  return Tensor<S>::from(x.shape(), (x.value() <= S(0)).template cast<S>(), false);
}

template <typename S>
Tensor<S> rbf_basis(const Tensor<S>& x, std::span<const double> grid, double width) {
  if (grid.empty() || !(width > 0)) throw std::invalid_argument("rbf_basis needs a grid and positive width");
  const Index G = static_cast<Index>(grid.size());
  Shape shape = x.shape();
  shape.push_back(G);
  Array<S> y(x.size() * G);
  Array<S> d(x.size() * G);  // d phi / d x
  for (Index i = 0; i < x.size(); ++i) {
    const double xv = static_cast<double>(x.value()[i]);
    for (Index j = 0; j < G; ++j) {
      const double u = (xv - grid[static_cast<std::size_t>(j)]) / width;
      const double phi = std::exp(-u * u);
      y[i * G + j] = static_cast<S>(phi);
      d[i * G + j] = static_cast<S>(-2.0 * u / width * phi);
    }
  }
  return make_result<S>(std::move(shape), std::move(y), {x}, "rbf_basis",
                        [d = std::move(d), G](const Array<S>& g, std::span<Array<S>* const> pg) {
                          Eigen::Map<const ColMatrix<S>> GM(g.data(), G, g.size() / G);
                          Eigen::Map<const ColMatrix<S>> DM(d.data(), G, d.size() / G);
                          pg[0]->matrix() += (GM.array() * DM.array()).colwise().sum().matrix().transpose();
                        });
}

void bspline_eval(double x, std::span<const double> knots, int order, std::span<double> values,
                  std::span<double> deriv) {
  const std::size_t nk = knots.size();
  if (order < 0 || nk < static_cast<std::size_t>(order) + 2) throw std::invalid_argument("too few knots");
  // Degree-0 indicators on half-open intervals, then raise the degree.
  std::vector<double> b(nk - 1, 0.0);
  for (std::size_t i = 0; i + 1 < nk; ++i) b[i] = (x >= knots[i] && x < knots[i + 1]) ? 1.0 : 0.0;
  std::vector<double> lower;
  for (int p = 1; p <= order; ++p) {
    lower = b;
    const std::size_t count = nk - 1 - static_cast<std::size_t>(p);
    for (std::size_t i = 0; i < count; ++i) {
      const double left_den = knots[i + p] - knots[i];
      const double right_den = knots[i + p + 1] - knots[i + 1];
      double v = 0.0;
      if (left_den > 0) v += (x - knots[i]) / left_den * lower[i];
      if (right_den > 0) v += (knots[i + p + 1] - x) / right_den * lower[i + 1];
      b[i] = v;
    }
    b.resize(count);
  }
  const std::size_t n = nk - 1 - static_cast<std::size_t>(order);
  if (values.size() < n) throw std::invalid_argument("bspline_eval output too small");
  std::copy(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(n), values.begin());
  if (!deriv.empty()) {
    if (order == 0) {
      std::fill(deriv.begin(), deriv.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
      return;
    }
    // B'_{i,p} = p/(t_{i+p}-t_i) B_{i,p-1} - p/(t_{i+p+1}-t_{i+1}) B_{i+1,p-1}
    const int p = order;
    for (std::size_t i = 0; i < n; ++i) {
      const double left_den = knots[i + p] - knots[i];
      const double right_den = knots[i + p + 1] - knots[i + 1];
      double v = 0.0;
      if (left_den > 0) v += p / left_den * lower[i];
      if (right_den > 0) v -= p / right_den * lower[i + 1];
      deriv[i] = v;
    }
  }
}

template <typename S>
Tensor<S> bspline_basis(const Tensor<S>& x, std::span<const double> knots, int order) {
  if (order < 0 || knots.size() < static_cast<std::size_t>(order) + 2) {
    throw std::invalid_argument("bspline_basis: need at least order + 2 knots");
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) throw std::invalid_argument("bspline_basis: knots must be strictly increasing");
  }
  const Index n = static_cast<Index>(knots.size()) - order - 1;
  Shape shape = x.shape();
  shape.push_back(n);
  Array<S> y(x.size() * n);
  Array<S> d(x.size() * n);
  std::vector<double> vals(static_cast<std::size_t>(n)), ders(static_cast<std::size_t>(n));
  for (Index i = 0; i < x.size(); ++i) {
    bspline_eval(static_cast<double>(x.value()[i]), knots, order, vals, ders);
    for (Index j = 0; j < n; ++j) {
      y[i * n + j] = static_cast<S>(vals[static_cast<std::size_t>(j)]);
      d[i * n + j] = static_cast<S>(ders[static_cast<std::size_t>(j)]);
    }
  }
  return make_result<S>(std::move(shape), std::move(y), {x}, "bspline_basis",
                        [d = std::move(d), n](const Array<S>& g, std::span<Array<S>* const> pg) {
                          Eigen::Map<const ColMatrix<S>> GM(g.data(), n, g.size() / n);
                          Eigen::Map<const ColMatrix<S>> DM(d.data(), n, d.size() / n);
                          pg[0]->matrix() += (GM.array() * DM.array()).colwise().sum().matrix().transpose();
                        });
}

#define PETBENCH_INSTANTIATE_OPS(S)                                                                   \
  template Tensor<S> elementwise(BinaryOp, const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> elementwise(UnaryOp, const Tensor<S>&);                                         \
  template Tensor<S> scale(const Tensor<S>&, S);                                                     \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                                \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                   \
  template Tensor<S> bmm(const Tensor<S>&, const Tensor<S>&, bool);                                  \
  template Tensor<S> sum(const Tensor<S>&);                                                          \
  template Tensor<S> mean(const Tensor<S>&);                                                         \
  template Tensor<S> mean_dim(const Tensor<S>&, int);                                                \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                               \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                                     \
  template Tensor<S> select(const Tensor<S>&, int, Index);                                           \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                                     \
  template Tensor<S> softmax_last(const Tensor<S>&);                                                 \
  template Tensor<S> log_softmax_last(const Tensor<S>&);                                             \
  template Tensor<S> logsumexp_last(const Tensor<S>&);                                               \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);                          \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);            \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);     \
  template Tensor<S> max_pool2d(const Tensor<S>&, Index);                                            \
  template Tensor<S> apply_mask(const Tensor<S>&, const Array<S>&);                                  \
  template Tensor<S> dropout(const Tensor<S>&, double, bool, std::mt19937_64&);                      \
  template Tensor<S> indicator_nonpositive(const Tensor<S>&);                                        \
  template Tensor<S> rbf_basis(const Tensor<S>&, std::span<const double>, double);                   \
  template Tensor<S> bspline_basis(const Tensor<S>&, std::span<const double>, int);

PETBENCH_INSTANTIATE_OPS(float)
PETBENCH_INSTANTIATE_OPS(double)

}  // namespace petbench
