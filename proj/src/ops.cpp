#include "samiro/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "samiro/error.hpp"

namespace samiro {
namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(s));
  }
}

// For every flat index of `a_shape`, the flat index of `b_shape` it reads
// under right-aligned broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& a_shape, const Shape& b_shape) {
  const std::size_t rank = a_shape.size();
  if (b_shape.size() > rank) {
    throw DimensionError("broadcast: operand shape " + shape_str(b_shape) +
                         " has higher rank than " + shape_str(a_shape));
  }
  const std::size_t offset = rank - b_shape.size();
  std::vector<std::size_t> b_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = b_shape.size(); i-- > 0;) {
    const std::size_t axis = i + offset;
    if (b_shape[i] == a_shape[axis]) {
      b_stride[axis] = stride;
    } else if (b_shape[i] != 1) {
      throw DimensionError("broadcast: axis " + std::to_string(axis) + " extent " +
                           std::to_string(b_shape[i]) + " cannot broadcast to " +
                           std::to_string(a_shape[axis]) + " (shapes " + shape_str(a_shape) +
                           " and " + shape_str(b_shape) + ")");
    }
    stride *= b_shape[i];
  }
  std::vector<std::size_t> map(numel(a_shape));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t b = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = b;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++idx[axis];
      b += b_stride[axis];
      if (idx[axis] < a_shape[axis]) break;
      b -= b_stride[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
  return map;
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& x, std::string_view name, Fwd fwd, Bwd bwd) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto xn = x.node();
  auto on = std::make_shared<std::vector<T>>(out);
  return Tensor<T>::from_op(
      x.shape(), std::move(out), name, {x},
      [xn, on, bwd](std::span<const T> g, std::span<std::vector<T>* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += bwd(xn->data[i], (*on)[i], g[i]);
      });
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding) {
  require_rank(input.shape(), 3, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel axis 1 (C_in=" + std::to_string(kernel.dim(1)) +
                         ") != input axis 0 (C=" + std::to_string(cin) + ")");
  }
  if (kernel.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernel axes 2,3 must be equal and odd, got " +
                         shape_str(kernel.shape()));
  }
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: stride >= 1 and padding >= 0 required");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " != [C_out=" +
                         std::to_string(cout) + "]");
  }
  const long span_h = static_cast<long>(h) + 2L * padding - static_cast<long>(k);
  const long span_w = static_cast<long>(w) + 2L * padding - static_cast<long>(k);
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  const std::size_t oh = static_cast<std::size_t>(span_h / stride + 1);
  const std::size_t ow = static_cast<std::size_t>(span_w / stride + 1);
  const long s = stride, p = padding;

  // Valid output column range for kernel column kx: 0 <= ox*s - p + kx < w.
  auto col_range = [w, ow, p, s](std::size_t kx) {
    const long off = static_cast<long>(kx) - p;
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long hi = (static_cast<long>(w) - 1 - off);
    hi = hi < 0 ? -1 : std::min<long>(hi / s, static_cast<long>(ow) - 1);
    return std::pair<long, long>{lo, hi};
  };

  const auto x = input.data();
  const auto wt = kernel.data();
  std::vector<T> out(cout * oh * ow, T(0));
  for (std::size_t co = 0; co < cout; ++co) {
    T* op = out.data() + co * oh * ow;
    if (bias.defined()) std::fill(op, op + oh * ow, bias.data()[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* ip = x.data() + ci * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T wv = wt[((co * cin + ci) * k + ky) * k + kx];
          const auto [lo, hi] = col_range(kx);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const T* row = ip + iy * static_cast<long>(w) + static_cast<long>(kx) - p;
            T* orow = op + oy * ow;
            for (long ox = lo; ox <= hi; ++ox) orow[ox] += wv * row[ox * s];
          }
        }
      }
    }
  }

  auto xn = input.node();
  auto kn = kernel.node();
  return Tensor<T>::from_op(
      {cout, oh, ow}, std::move(out), "conv2d", {input, kernel, bias.defined() ? bias : Tensor<T>::scalar(0)},
      [=](std::span<const T> g, std::span<std::vector<T>* const> grads) {
        const auto& xd = xn->data;
        const auto& wd = kn->data;
        for (std::size_t co = 0; co < cout; ++co) {
          const T* gp = g.data() + co * oh * ow;
          if (grads[2]) {
            T acc = 0;
            for (std::size_t i = 0; i < oh * ow; ++i) acc += gp[i];
            (*grads[2])[co] += acc;
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const std::size_t plane = ci * h * w;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
                const T wv = wd[widx];
                const auto [lo, hi] = col_range(kx);
                T wacc = 0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  const long base = static_cast<long>(plane) + iy * static_cast<long>(w) +
                                    static_cast<long>(kx) - p;
                  const T* grow = gp + oy * ow;
                  if (grads[1]) {
                    const T* row = xd.data() + base;
                    for (long ox = lo; ox <= hi; ++ox) wacc += grow[ox] * row[ox * s];
                  }
                  if (grads[0]) {
                    T* girow = grads[0]->data() + base;
                    for (long ox = lo; ox <= hi; ++ox) girow[ox * s] += wv * grow[ox];
                  }
                }
                if (grads[1]) (*grads[1])[widx] += wacc;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> pool_over_channels(const Tensor<T>& input, PoolMode mode) {
  require_rank(input.shape(), 3, "pool_over_channels");
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  if (c == 0 || hw == 0) throw DimensionError("pool_over_channels: empty tensor " + shape_str(input.shape()));
  const auto x = input.data();
  std::vector<T> out(hw);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (mode == PoolMode::avg) {
    for (std::size_t i = 0; i < hw; ++i) {
      T acc = 0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += x[ch * hw + i];
      out[i] = acc / static_cast<T>(c);
    }
  } else {
    argmax->resize(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      for (std::size_t ch = 1; ch < c; ++ch) {
        if (x[ch * hw + i] > x[best * hw + i]) best = ch;
      }
      (*argmax)[i] = best;
      out[i] = x[best * hw + i];
    }
  }
  return Tensor<T>::from_op(
      {1, input.dim(1), input.dim(2)}, std::move(out), mode == PoolMode::avg ? "avg_pool_c" : "max_pool_c",
      {input}, [=](std::span<const T> g, std::span<std::vector<T>* const> grads) {
        auto& gx = *grads[0];
        if (mode == PoolMode::avg) {
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += g[i] / static_cast<T>(c);
        } else {
          for (std::size_t i = 0; i < hw; ++i) gx[(*argmax)[i] * hw + i] += g[i];
        }
      });
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  auto map = std::make_shared<std::vector<std::size_t>>();
  if (!same) *map = broadcast_map(a.shape(), b.shape());
  auto bi = [same, map](std::size_t i) { return same ? i : (*map)[i]; };

  const auto x = a.data();
  const auto y = b.data();
  if (op == BinaryOp::div) {
    for (auto v : y) {
      if (v == T(0)) throw DivideByZeroError("elementwise div: divisor contains an exact zero");
    }
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T bv = y[bi(i)];
    switch (op) {
      case BinaryOp::add: out[i] = x[i] + bv; break;
      case BinaryOp::sub: out[i] = x[i] - bv; break;
      case BinaryOp::mul: out[i] = x[i] * bv; break;
      case BinaryOp::div: out[i] = x[i] / bv; break;
    }
  }
  static constexpr std::string_view names[] = {"add", "sub", "mul", "div"};
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::from_op(
      a.shape(), std::move(out), names[static_cast<int>(op)], {a, b},
      [=](std::span<const T> g, std::span<std::vector<T>* const> grads) {
        const auto& xd = an->data;
        const auto& yd = bn->data;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = bi(i);
          T da = 0, db = 0;
          switch (op) {
            case BinaryOp::add: da = g[i]; db = g[i]; break;
            case BinaryOp::sub: da = g[i]; db = -g[i]; break;
            case BinaryOp::mul: da = g[i] * yd[j]; db = g[i] * xd[i]; break;
            case BinaryOp::div: da = g[i] / yd[j]; db = -g[i] * xd[i] / (yd[j] * yd[j]); break;
          }
          if (grads[0]) (*grads[0])[i] += da;
          if (grads[1]) (*grads[1])[j] += db;
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, "scale", [s](T v) { return v * s; }, [s](T, T, T g) { return g * s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, "add_scalar", [s](T v) { return v + s; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> activate(Activation op, const Tensor<T>& x) {
  switch (op) {
    case Activation::sigmoid:
      return unary(
          x, "sigmoid",
          [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
          },
          [](T, T y, T g) { return g * y * (T(1) - y); });
    case Activation::relu:
      return unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                   [](T v, T, T g) { return v > T(0) ? g : T(0); });
    case Activation::log_abs: {
      const T floor = static_cast<T>(kLogFloor);
      return unary(x, "log_abs", [floor](T v) { return std::log(std::max(std::abs(v), floor)); },
                   [floor](T v, T, T g) { return std::abs(v) >= floor ? g / v : T(0); });
    }
  }
  throw Error("activate: unknown activation");
}

template <typename T>
Tensor<T> abs_floor(const Tensor<T>& x, T floor) {
  return unary(x, "abs_floor", [floor](T v) { return std::max(std::abs(v), floor); },
               [floor](T v, T, T g) {
                 if (std::abs(v) < floor) return T(0);
                 return v >= T(0) ? g : -g;
               });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary(x, "sqrt", [](T v) { return std::sqrt(v); },
               [](T, T y, T g) { return y > T(0) ? g / (T(2) * y) : T(0); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary(x, "clamp", [lo, hi](T v) { return std::clamp(v, lo, hi); },
               [lo, hi](T v, T, T g) { return (v >= lo && v <= hi) ? g : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, "square", [](T v) { return v * v; }, [](T v, T, T g) { return T(2) * v * g; });
}

template <typename T>
Tensor<T> reduce(Reduction op, const Tensor<T>& x, const std::vector<std::size_t>& axes,
                 bool keepdims) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> reduced(rank, axes.empty());
  for (auto a : axes) {
    if (a >= rank) {
      throw DimensionError("reduce: axis " + std::to_string(a) + " invalid for shape " +
                           shape_str(in_shape));
    }
    reduced[a] = true;
  }
  Shape kept_shape(rank), out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    kept_shape[i] = reduced[i] ? 1 : in_shape[i];
    if (reduced[i]) count *= in_shape[i];
    if (!reduced[i] || keepdims) out_shape.push_back(kept_shape[i]);
  }
  auto map = std::make_shared<std::vector<std::size_t>>(broadcast_map(in_shape, kept_shape));
  const auto xd = x.data();
  std::vector<T> out(numel(kept_shape), T(0));
  for (std::size_t i = 0; i < xd.size(); ++i) {
    out[(*map)[i]] += op == Reduction::sq_l2_norm ? xd[i] * xd[i] : xd[i];
  }
  const T inv = count ? T(1) / static_cast<T>(count) : T(0);
  if (op == Reduction::mean) {
    for (auto& v : out) v *= inv;
  }
  static constexpr std::string_view names[] = {"sum", "mean", "sq_l2_norm"};
  auto xn = x.node();
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), names[static_cast<int>(op)], {x},
      [=](std::span<const T> g, std::span<std::vector<T>* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T up = g[(*map)[i]];
          switch (op) {
            case Reduction::sum: gx[i] += up; break;
            case Reduction::mean: gx[i] += up * inv; break;
            case Reduction::sq_l2_norm: gx[i] += T(2) * xn->data[i] * up; break;
          }
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 3, "concat_channels lhs");
  require_rank(b.shape(), 3, "concat_channels rhs");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial axes 1,2 differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.numel();
  return Tensor<T>::from_op(
      {a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out), "concat", {a, b},
      [na](std::span<const T> g, std::span<std::vector<T>* const> grads) {
        if (grads[0])
          for (std::size_t i = 0; i < na; ++i) (*grads[0])[i] += g[i];
        if (grads[1])
          for (std::size_t i = na; i < g.size(); ++i) (*grads[1])[i - na] += g[i];
      });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x.shape(), 3, "slice_channels");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for axis 0 of " + shape_str(x.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  const std::size_t off = begin * plane;
  std::vector<T> out(x.data().begin() + off, x.data().begin() + end * plane);
  return Tensor<T>::from_op({end - begin, x.dim(1), x.dim(2)}, std::move(out), "slice", {x},
                            [off](std::span<const T> g, std::span<std::vector<T>* const> grads) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[off + i] += g[i];
                            });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  require_rank(x.shape(), 3, "upsample_nearest");
  if (factor < 1) throw DimensionError("upsample_nearest: factor must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), f = factor;
  const std::size_t oh = h * f, ow = w * f;
  std::vector<T> out(c * oh * ow);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(ch * oh + y) * ow + xx] = xd[(ch * h + y / f) * w + xx / f];
  return Tensor<T>::from_op({c, oh, ow}, std::move(out), "upsample", {x},
                            [=](std::span<const T> g, std::span<std::vector<T>* const> grads) {
                              auto& gx = *grads[0];
                              for (std::size_t ch = 0; ch < c; ++ch)
                                for (std::size_t y = 0; y < oh; ++y)
                                  for (std::size_t xx = 0; xx < ow; ++xx)
                                    gx[(ch * h + y / f) * w + xx / f] += g[(ch * oh + y) * ow + xx];
                            });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int factor) {
  require_rank(x.shape(), 3, "avg_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw DimensionError("avg_pool2d: axes 1,2 of " + shape_str(x.shape()) +
                         " not divisible by factor " + std::to_string(factor));
  }
  const std::size_t f = factor, oh = h / f, ow = w / f;
  const T inv = T(1) / static_cast<T>(f * f);
  std::vector<T> out(c * oh * ow, T(0));
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        out[(ch * oh + y / f) * ow + xx / f] += xd[(ch * h + y) * w + xx];
  for (auto& v : out) v *= inv;
  return Tensor<T>::from_op({c, oh, ow}, std::move(out), "avg_pool2d", {x},
                            [=](std::span<const T> g, std::span<std::vector<T>* const> grads) {
                              auto& gx = *grads[0];
                              for (std::size_t ch = 0; ch < c; ++ch)
                                for (std::size_t y = 0; y < h; ++y)
                                  for (std::size_t xx = 0; xx < w; ++xx)
                                    gx[(ch * h + y) * w + xx] += g[(ch * oh + y / f) * ow + xx / f] * inv;
                            });
}

#define SAMIRO_INSTANTIATE(T)                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);    \
  template Tensor<T> pool_over_channels(const Tensor<T>&, PoolMode);                            \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> activate(Activation, const Tensor<T>&);                                    \
  template Tensor<T> abs_floor(const Tensor<T>&, T);                                            \
  template Tensor<T> sqrt(const Tensor<T>&);                                                    \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                             \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> reduce(Reduction, const Tensor<T>&, const std::vector<std::size_t>&, bool); \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                   \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int);

SAMIRO_INSTANTIATE(float)
SAMIRO_INSTANTIATE(double)

}  // namespace samiro
