#pragma once

// Tape-based reverse-mode autodiff over dense float32 arrays.
//
// Values are stored in float32; reductions accumulate in double with a fixed
// sequential order, so forward results are bit-identical run to run on the
// same platform. Ops record onto a thread-local tape whenever an input either
// requires grad or was itself produced on the active tape; backward() walks
// the tape once in reverse and then consumes it. Tapes are single-owner per
// thread and never shared.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "nerfmark/common.hpp"

namespace nerfmark {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

struct TensorData {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until touched by a backward pass
  bool requires_grad = false;
  uint64_t tape_gen = 0;  // generation of the tape that produced this, 0 = leaf
};

namespace detail {

struct Tape {
  struct Entry {
    std::shared_ptr<TensorData> out;
    std::function<void()> back;
  };
  std::vector<Entry> entries;
  uint64_t generation = 1;
};

inline Tape& tape() {
  thread_local Tape t;
  return t;
}

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

}  // namespace detail

// Disables tape recording on this thread for its lifetime.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0f, requires_grad);
  }
  static Tensor filled(Shape shape, float v, bool requires_grad = false) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->value.assign(shape_numel(d->shape), v);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }
  static Tensor from_vector(Shape shape, std::vector<float> v,
                            bool requires_grad = false) {
    NM_CHECK(shape_numel(shape) == static_cast<int64_t>(v.size()),
             "from_vector: shape " << shape_str(shape) << " does not match "
                                   << v.size() << " values");
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->value = std::move(v);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }
  static Tensor scalar(float v, bool requires_grad = false) {
    return from_vector({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }
  int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(d_->shape.size()); }

  float* data() { return d_->value.data(); }
  const float* data() const { return d_->value.data(); }
  std::vector<float>& values() { return d_->value; }
  const std::vector<float>& values() const { return d_->value; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<float>& grad() {
    NM_CHECK(has_grad(), "grad: no gradient populated for this tensor");
    return d_->grad;
  }
  const std::vector<float>& grad() const {
    NM_CHECK(has_grad(), "grad: no gradient populated for this tensor");
    return d_->grad;
  }
  void zero_grad() { d_->grad.clear(); }

  float item() const {
    NM_CHECK(numel() == 1, "item: tensor has " << numel() << " elements");
    return d_->value[0];
  }

  // Value copy detached from any tape.
  Tensor detach() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->value = d_->value;
    return Tensor(std::move(d));
  }

  bool all_finite() const {
    for (float v : d_->value) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
  void check_finite(const char* what) const {
    NM_CHECK(all_finite(), what << ": non-finite value detected");
  }

  std::shared_ptr<TensorData> d_;
};

namespace detail {

inline bool recording_enabled() { return no_grad_depth() == 0; }

inline bool attached(const Tensor& t) {
  return t.d_->requires_grad || t.d_->tape_gen == tape().generation;
}

inline bool wants_grad(const Tensor& t) {
  return recording_enabled() && attached(t);
}

inline std::vector<float>& ensure_grad(const std::shared_ptr<TensorData>& d) {
  if (d->grad.empty()) d->grad.assign(d->value.size(), 0.0f);
  return d->grad;
}

inline void record(std::shared_ptr<TensorData> out, std::function<void()> back) {
  out->tape_gen = tape().generation;
  tape().entries.push_back({std::move(out), std::move(back)});
}

// --- broadcasting -----------------------------------------------------------

constexpr int kMaxRank = 6;

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  NM_CHECK(r <= kMaxRank, op << ": rank above " << kMaxRank << " unsupported");
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    NM_CHECK(da == db || da == 1 || db == 1,
             op << ": shapes " << shape_str(a) << " and " << shape_str(b)
                << " do not broadcast (dims must match or be 1)");
    out[i] = std::max(da, db);
  }
  return out;
}

struct BcastMap {
  int rank = 0;
  int64_t n = 0;
  std::array<int64_t, kMaxRank> dims{};
  std::array<int64_t, kMaxRank> sa{};  // strides into a, 0 on broadcast dims
  std::array<int64_t, kMaxRank> sb{};
};

inline BcastMap make_bcast(const Shape& out, const Shape& a, const Shape& b) {
  BcastMap m;
  m.rank = static_cast<int>(out.size());
  m.n = shape_numel(out);
  auto strides_for = [&](const Shape& s, std::array<int64_t, kMaxRank>& st) {
    // right-aligned; stride 0 where the input dim is 1 but output is larger
    std::array<int64_t, kMaxRank> full{};
    int off = m.rank - static_cast<int>(s.size());
    int64_t run = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
      full[static_cast<size_t>(off + i)] = run;
      run *= s[static_cast<size_t>(i)];
    }
    for (int i = 0; i < m.rank; ++i) {
      int64_t d = i < off ? 1 : s[static_cast<size_t>(i - off)];
      st[static_cast<size_t>(i)] = (d == 1 && out[static_cast<size_t>(i)] != 1)
                                       ? 0
                                       : full[static_cast<size_t>(i)];
    }
  };
  for (int i = 0; i < m.rank; ++i) m.dims[static_cast<size_t>(i)] = out[static_cast<size_t>(i)];
  strides_for(a, m.sa);
  strides_for(b, m.sb);
  return m;
}

// Calls fn(oi, ai, bi) for every output element, output index in order.
template <class F>
void bcast_iterate(const BcastMap& m, F&& fn) {
  if (m.n == 0) return;
  if (m.rank == 0) {
    fn(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  int last = m.rank - 1;
  int64_t inner = m.dims[static_cast<size_t>(last)];
  int64_t sa_in = m.sa[static_cast<size_t>(last)];
  int64_t sb_in = m.sb[static_cast<size_t>(last)];
  std::array<int64_t, kMaxRank> idx{};
  int64_t ai = 0, bi = 0, oi = 0;
  for (;;) {
    int64_t a = ai, b = bi;
    for (int64_t i = 0; i < inner; ++i) {
      fn(oi + i, a, b);
      a += sa_in;
      b += sb_in;
    }
    oi += inner;
    // odometer over the outer dims
    int d = last - 1;
    for (; d >= 0; --d) {
      ai += m.sa[static_cast<size_t>(d)];
      bi += m.sb[static_cast<size_t>(d)];
      if (++idx[static_cast<size_t>(d)] < m.dims[static_cast<size_t>(d)]) break;
      ai -= m.sa[static_cast<size_t>(d)] * m.dims[static_cast<size_t>(d)];
      bi -= m.sb[static_cast<size_t>(d)] * m.dims[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
    if (d < 0) break;
  }
}

using EVec = Eigen::Map<Eigen::Array<float, Eigen::Dynamic, 1>>;
using CEVec = Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, 1>>;

inline CEVec emap(const Tensor& t) { return CEVec(t.data(), t.numel()); }
inline EVec emap(std::vector<float>& v) {
  return EVec(v.data(), static_cast<int64_t>(v.size()));
}

}  // namespace detail

// --- elementwise binary ops --------------------------------------------------

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

inline const char* binop_name(BinOp op) {
  switch (op) {
    case BinOp::Add: return "add";
    case BinOp::Sub: return "sub";
    case BinOp::Mul: return "mul";
    case BinOp::Div: return "div";
  }
  return "?";
}

inline Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const char* name = binop_name(op);
  if (op == BinOp::Div) {
    for (float v : b.values()) {
      NM_CHECK(v != 0.0f, "div: zero divisor");
    }
  }
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(os);
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();

  bool same = a.shape() == b.shape() && a.shape() == os;
  if (same) {
    CEVec va(pa, a.numel()), vb(pb, b.numel());
    EVec vo(po, out.numel());
    switch (op) {
      case BinOp::Add: vo = va + vb; break;
      case BinOp::Sub: vo = va - vb; break;
      case BinOp::Mul: vo = va * vb; break;
      case BinOp::Div: vo = va / vb; break;
    }
  } else {
    BcastMap m = make_bcast(os, a.shape(), b.shape());
    switch (op) {
      case BinOp::Add:
        bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = pa[ai] + pb[bi]; });
        break;
      case BinOp::Sub:
        bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = pa[ai] - pb[bi]; });
        break;
      case BinOp::Mul:
        bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = pa[ai] * pb[bi]; });
        break;
      case BinOp::Div:
        bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = pa[ai] / pb[bi]; });
        break;
    }
  }

  bool ga = wants_grad(a), gb = wants_grad(b);
  if (ga || gb) {
    auto ad = a.d_, bd = b.d_, od = out.d_;
    Shape ssa = a.shape(), ssb = b.shape(), sso = os;
    record(out.d_, [=]() {
      const std::vector<float>& go = od->grad;
      BcastMap m = make_bcast(sso, ssa, ssb);
      if (ga) {
        auto& g = ensure_grad(ad);
        switch (op) {
          case BinOp::Add:
          case BinOp::Sub:
            bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t) { g[static_cast<size_t>(ai)] += go[static_cast<size_t>(oi)]; });
            break;
          case BinOp::Mul:
            bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) {
              g[static_cast<size_t>(ai)] += bd->value[static_cast<size_t>(bi)] * go[static_cast<size_t>(oi)];
            });
            break;
          case BinOp::Div:
            bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) {
              g[static_cast<size_t>(ai)] += go[static_cast<size_t>(oi)] / bd->value[static_cast<size_t>(bi)];
            });
            break;
        }
      }
      if (gb) {
        auto& g = ensure_grad(bd);
        switch (op) {
          case BinOp::Add:
            bcast_iterate(m, [&](int64_t oi, int64_t, int64_t bi) { g[static_cast<size_t>(bi)] += go[static_cast<size_t>(oi)]; });
            break;
          case BinOp::Sub:
            bcast_iterate(m, [&](int64_t oi, int64_t, int64_t bi) { g[static_cast<size_t>(bi)] -= go[static_cast<size_t>(oi)]; });
            break;
          case BinOp::Mul:
            bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) {
              g[static_cast<size_t>(bi)] += ad->value[static_cast<size_t>(ai)] * go[static_cast<size_t>(oi)];
            });
            break;
          case BinOp::Div:
            bcast_iterate(m, [&](int64_t oi, int64_t ai, int64_t bi) {
              float b2 = bd->value[static_cast<size_t>(bi)];
              g[static_cast<size_t>(bi)] -= ad->value[static_cast<size_t>(ai)] / (b2 * b2) * go[static_cast<size_t>(oi)];
            });
            break;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Div); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, float s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, float s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, float s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, float s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator+(float s, const Tensor& a) { return add(Tensor::scalar(s), a); }
inline Tensor operator-(float s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
inline Tensor operator*(float s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator/(float s, const Tensor& a) { return div(Tensor::scalar(s), a); }

// --- elementwise unary ops ---------------------------------------------------

namespace detail {

// fwd fills out.value from x.value; bwd adds dx contributions given (x, out, go).
template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, Fwd&& fwd, Bwd&& bwd) {
  Tensor out = Tensor::zeros(x.shape());
  fwd(x.values(), out.values());
  if (wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    record(out.d_, [xd, od, bwd]() {
      auto& gx = ensure_grad(xd);
      bwd(xd->value, od->value, od->grad, gx);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).exp();
      },
      [](const std::vector<float>&, const std::vector<float>& out,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += out[i] * go[i];
      });
}

inline Tensor log(const Tensor& x) {
  for (float v : x.values()) {
    NM_CHECK(v > 0.0f, "log: domain error (value " << v << " <= 0)");
  }
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).log();
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] / xv[i];
      });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) =
            1.0f / (1.0f + (-detail::CEVec(v.data(), static_cast<int64_t>(v.size()))).exp());
      },
      [](const std::vector<float>&, const std::vector<float>& out,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i)
          gx[i] += out[i] * (1.0f - out[i]) * go[i];
      });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).max(0.0f);
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i)
          if (xv[i] > 0.0f) gx[i] += go[i];
      });
}

// Numerically stable log(1 + exp(x)); derivative is sigmoid(x).
inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        for (size_t i = 0; i < v.size(); ++i) {
          float z = v[i];
          o[i] = z > 20.0f ? z : (z < -20.0f ? std::exp(z) : std::log1p(std::exp(z)));
        }
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i)
          gx[i] += go[i] / (1.0f + std::exp(-xv[i]));
      });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).tanh();
      },
      [](const std::vector<float>&, const std::vector<float>& out,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i)
          gx[i] += (1.0f - out[i] * out[i]) * go[i];
      });
}

inline Tensor sin(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).sin();
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += std::cos(xv[i]) * go[i];
      });
}

inline Tensor cos(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).cos();
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i) gx[i] -= std::sin(xv[i]) * go[i];
      });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).square();
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0f * xv[i] * go[i];
      });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x,
      [](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) = detail::CEVec(v.data(), static_cast<int64_t>(v.size())).abs();
      },
      [](const std::vector<float>& xv, const std::vector<float>&,
         const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i)
          gx[i] += (xv[i] > 0.0f ? 1.0f : (xv[i] < 0.0f ? -1.0f : 0.0f)) * go[i];
      });
}

inline Tensor neg(const Tensor& x) { return x * -1.0f; }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// Gradient passes only where lo < x < hi.
inline Tensor clamp(const Tensor& x, float lo, float hi) {
  NM_CHECK(lo <= hi, "clamp: lo > hi");
  return detail::unary(
      x,
      [lo, hi](const std::vector<float>& v, std::vector<float>& o) {
        detail::emap(o) =
            detail::CEVec(v.data(), static_cast<int64_t>(v.size())).max(lo).min(hi);
      },
      [lo, hi](const std::vector<float>& xv, const std::vector<float>&,
               const std::vector<float>& go, std::vector<float>& gx) {
        for (size_t i = 0; i < gx.size(); ++i)
          if (xv[i] > lo && xv[i] < hi) gx[i] += go[i];
      });
}

// --- matmul ------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  NM_CHECK(a.rank() == 2 && b.rank() == 2,
           "matmul: expects 2-D operands, got " << shape_str(a.shape()) << " @ "
                                                << shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  NM_CHECK(k == k2, "matmul: inner dims mismatch " << shape_str(a.shape())
                                                   << " @ " << shape_str(b.shape()));
  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  Tensor out = Tensor::zeros({m, n});
  MMap(out.data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), k, n);

  bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    auto ad = a.d_, bd = b.d_, od = out.d_;
    detail::record(out.d_, [=]() {
      CMap go(od->grad.data(), m, n);
      if (ga) {
        auto& g = detail::ensure_grad(ad);
        MMap(g.data(), m, k).noalias() += go * CMap(bd->value.data(), k, n).transpose();
      }
      if (gb) {
        auto& g = detail::ensure_grad(bd);
        MMap(g.data(), k, n).noalias() += CMap(ad->value.data(), m, k).transpose() * go;
      }
    });
  }
  return out;
}

// --- reductions ---------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;  // fixed sequential order
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od]() {
      auto& g = detail::ensure_grad(xd);
      float go = od->grad[0];
      for (float& v : g) v += go;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  NM_CHECK(x.numel() > 0, "mean: empty tensor");
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  int64_t n = x.numel();
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od, n]() {
      auto& g = detail::ensure_grad(xd);
      float go = od->grad[0] / static_cast<float>(n);
      for (float& v : g) v += go;
    });
  }
  return out;
}

namespace detail {

inline void axis_extents(const Shape& s, int axis, int64_t& outer, int64_t& ax,
                         int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  ax = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

inline Tensor sum_axis(const Tensor& x, int axis, bool keepdim = true) {
  NM_CHECK(axis >= 0 && axis < x.rank(), "sum_axis: axis " << axis << " out of range");
  int64_t outer, ax, inner;
  detail::axis_extents(x.shape(), axis, outer, ax, inner);
  Shape os = x.shape();
  if (keepdim) {
    os[static_cast<size_t>(axis)] = 1;
  } else {
    os.erase(os.begin() + axis);
  }
  Tensor out = Tensor::zeros(os);
  const float* px = x.data();
  float* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      const float* p = px + (o * ax) * inner + i;
      for (int64_t a = 0; a < ax; ++a) acc += p[a * inner];
      po[o * inner + i] = static_cast<float>(acc);
    }
  }
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od, outer, ax, inner]() {
      auto& g = detail::ensure_grad(xd);
      const float* go = od->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < ax; ++a)
          for (int64_t i = 0; i < inner; ++i)
            g[static_cast<size_t>((o * ax + a) * inner + i)] += go[o * inner + i];
    });
  }
  return out;
}

inline Tensor mean_axis(const Tensor& x, int axis, bool keepdim = true) {
  int64_t d = x.dim(axis);
  return sum_axis(x, axis, keepdim) * (1.0f / static_cast<float>(d));
}

// Exclusive prefix sum along the last axis: y[..., j] = sum_{k<j} x[..., k].
inline Tensor cumsum_exclusive(const Tensor& x) {
  NM_CHECK(x.rank() >= 1, "cumsum_exclusive: rank 0");
  int64_t inner = x.dim(x.rank() - 1);
  int64_t rows = x.numel() / inner;
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t j = 0; j < inner; ++j) {
      po[r * inner + j] = static_cast<float>(acc);
      acc += px[r * inner + j];
    }
  }
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od, rows, inner]() {
      auto& g = detail::ensure_grad(xd);
      const float* go = od->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t j = inner - 1; j >= 0; --j) {
          g[static_cast<size_t>(r * inner + j)] += static_cast<float>(acc);
          acc += go[r * inner + j];
        }
      }
    });
  }
  return out;
}

// --- shape ops ----------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  // one -1 dim is inferred
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      NM_CHECK(infer < 0, "reshape: multiple -1 dims");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    NM_CHECK(known > 0 && x.numel() % known == 0,
             "reshape: cannot infer dim for " << shape_str(x.shape()));
    shape[static_cast<size_t>(infer)] = x.numel() / known;
  }
  NM_CHECK(shape_numel(shape) == x.numel(),
           "reshape: " << shape_str(x.shape()) << " -> " << shape_str(shape)
                       << " changes element count");
  Tensor out = Tensor::zeros(shape);
  out.values() = x.values();
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od]() {
      auto& g = detail::ensure_grad(xd);
      for (size_t i = 0; i < g.size(); ++i) g[i] += od->grad[i];
    });
  }
  return out;
}

inline Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  int r = x.rank();
  NM_CHECK(static_cast<int>(perm.size()) == r, "permute: perm size mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    NM_CHECK(p >= 0 && p < r && !seen[static_cast<size_t>(p)], "permute: invalid perm");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);

  std::vector<int64_t> xstr(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    xstr[static_cast<size_t>(i)] = xstr[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  std::vector<int64_t> gather(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) gather[static_cast<size_t>(i)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  Tensor out = Tensor::zeros(os);
  const float* px = x.data();
  float* po = out.data();
  int64_t n = x.numel();
  // odometer over the output index
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t src = 0;
  std::vector<int64_t> srcmap(static_cast<size_t>(n));
  for (int64_t oi = 0; oi < n; ++oi) {
    po[oi] = px[src];
    srcmap[static_cast<size_t>(oi)] = src;
    for (int d = r - 1; d >= 0; --d) {
      src += gather[static_cast<size_t>(d)];
      if (++idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
      src -= gather[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od, srcmap = std::move(srcmap)]() {
      auto& g = detail::ensure_grad(xd);
      for (size_t oi = 0; oi < srcmap.size(); ++oi)
        g[static_cast<size_t>(srcmap[oi])] += od->grad[oi];
    });
  }
  return out;
}

inline Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  NM_CHECK(axis >= 0 && axis < x.rank(), "slice: axis out of range");
  NM_CHECK(start >= 0 && len > 0 && start + len <= x.dim(axis),
           "slice: range [" << start << ", " << start + len << ") out of bounds for dim "
                            << x.dim(axis));
  int64_t outer, ax, inner;
  detail::axis_extents(x.shape(), axis, outer, ax, inner);
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = len;
  Tensor out = Tensor::zeros(os);
  const float* px = x.data();
  float* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(po + o * len * inner, px + (o * ax + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(float));
  }
  if (detail::wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od, outer, ax, inner, start, len]() {
      auto& g = detail::ensure_grad(xd);
      const float* go = od->grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        float* dst = g.data() + (o * ax + start) * inner;
        const float* src = go + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  NM_CHECK(!parts.empty(), "concat: no inputs");
  int r = parts[0].rank();
  NM_CHECK(axis >= 0 && axis < r, "concat: axis out of range");
  int64_t total_ax = 0;
  for (const Tensor& p : parts) {
    NM_CHECK(p.rank() == r, "concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis)
        NM_CHECK(p.dim(i) == parts[0].dim(i),
                 "concat: shape mismatch " << shape_str(p.shape()) << " vs "
                                           << shape_str(parts[0].shape()));
    }
    total_ax += p.dim(axis);
  }
  Shape os = parts[0].shape();
  os[static_cast<size_t>(axis)] = total_ax;
  Tensor out = Tensor::zeros(os);
  int64_t outer, ax_out, inner;
  detail::axis_extents(os, axis, outer, ax_out, inner);
  float* po = out.data();
  int64_t off = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) any_grad = any_grad || detail::wants_grad(p);
  std::vector<std::shared_ptr<TensorData>> pds;
  std::vector<int64_t> offsets;
  for (const Tensor& p : parts) {
    int64_t pax = p.dim(axis);
    const float* pp = p.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(po + (o * ax_out + off) * inner, pp + o * pax * inner,
                  static_cast<size_t>(pax * inner) * sizeof(float));
    }
    pds.push_back(p.d_);
    offsets.push_back(off);
    off += pax;
  }
  if (any_grad) {
    std::vector<bool> wants;
    for (const Tensor& p : parts) wants.push_back(detail::wants_grad(p));
    auto od = out.d_;
    detail::record(out.d_, [od, pds, offsets, wants, outer, ax_out, inner, axis]() {
      const float* go = od->grad.data();
      for (size_t pi = 0; pi < pds.size(); ++pi) {
        if (!wants[pi]) continue;
        auto& g = detail::ensure_grad(pds[pi]);
        int64_t pax = pds[pi]->shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o) {
          float* dst = g.data() + o * pax * inner;
          const float* src = go + (o * ax_out + offsets[pi]) * inner;
          for (int64_t i = 0; i < pax * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

// --- backward ------------------------------------------------------------------

inline void backward(const Tensor& loss, std::span<const float> seed = {}) {
  auto& tp = detail::tape();
  NM_CHECK(loss.d_ && loss.d_->tape_gen == tp.generation,
           "backward: tensor was not produced on the active tape "
           "(tape already consumed, or built under NoGradGuard)");
  if (seed.empty()) {
    NM_CHECK(loss.numel() == 1, "backward: loss must be scalar (got "
                                    << shape_str(loss.shape()) << ")");
    loss.d_->grad.assign(1, 1.0f);
  } else {
    NM_CHECK(static_cast<int64_t>(seed.size()) == loss.numel(),
             "backward: seed size " << seed.size() << " does not match tensor "
                                    << shape_str(loss.shape()));
    detail::ensure_grad(loss.d_);
    for (size_t i = 0; i < seed.size(); ++i) loss.d_->grad[i] += seed[i];
  }
  for (auto it = tp.entries.rbegin(); it != tp.entries.rend(); ++it) {
    if (!it->out->grad.empty()) it->back();
  }
  tp.entries.clear();
  ++tp.generation;  // consumed
}

inline size_t tape_size() { return detail::tape().entries.size(); }

// Drops any recorded entries without running backward.
inline void discard_tape() {
  auto& tp = detail::tape();
  tp.entries.clear();
  ++tp.generation;
}

}  // namespace nerfmark
