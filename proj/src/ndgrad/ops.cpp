#include "rwm/ndgrad/ops.hpp"

#include <cmath>

namespace rwm {
namespace {

template <typename Scalar>
using Array = typename Tensor<Scalar>::Array;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
using NodeT = detail::Node<Scalar>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename Scalar>
void accumulate(NodeT<Scalar>& parent, const auto& contribution) {
  if (parent.requires_grad) parent.ensure_grad() += contribution;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return make_result<Scalar>(a.shape(), a.data() + b.data(), "add", {pa, pb},
                             [pa, pb](NodeT<Scalar>& self) {
                               accumulate(*pa, self.grad);
                               accumulate(*pb, self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return make_result<Scalar>(a.shape(), a.data() - b.data(), "sub", {pa, pb},
                             [pa, pb](NodeT<Scalar>& self) {
                               accumulate(*pa, self.grad);
                               accumulate(*pb, -self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  auto pa = a.node(), pb = b.node();
  return make_result<Scalar>(a.shape(), a.data() * b.data(), "mul", {pa, pb},
                             [pa, pb](NodeT<Scalar>& self) {
                               accumulate(*pa, self.grad * pb->value);
                               accumulate(*pb, self.grad * pa->value);
                             });
}

template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& a, double scale, double shift) {
  auto pa = a.node();
  const Scalar s = Scalar(scale);
  return make_result<Scalar>(a.shape(), s * a.data() + Scalar(shift), "affine", {pa},
                             [pa, s](NodeT<Scalar>& self) { accumulate(*pa, s * self.grad); });
}

template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& a, const Array<Scalar>& c) {
  require(c.size() == a.size(), "add_constant: size mismatch");
  auto pa = a.node();
  return make_result<Scalar>(a.shape(), a.data() + c, "add_constant", {pa},
                             [pa](NodeT<Scalar>& self) { accumulate(*pa, self.grad); });
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  auto pa = a.node();
  const Scalar l = Scalar(lo), h = Scalar(hi);
  return make_result<Scalar>(a.shape(), a.data().max(l).min(h), "clamp", {pa},
                             [pa, l, h](NodeT<Scalar>& self) {
                               const auto& x = pa->value;
                               accumulate(*pa, ((x >= l) && (x <= h)).select(self.grad, Scalar(0)));
                             });
}

template <typename Scalar>
Tensor<Scalar> blend(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Array<Scalar>& mask) {
  require_same_shape(a, b, "blend");
  require(mask.size() == a.size(), "blend: mask size mismatch");
  auto pa = a.node(), pb = b.node();
  Array<Scalar> m = mask;
  return make_result<Scalar>(a.shape(), m * a.data() + (Scalar(1) - m) * b.data(), "blend",
                             {pa, pb}, [pa, pb, m](NodeT<Scalar>& self) {
                               accumulate(*pa, m * self.grad);
                               accumulate(*pb, (Scalar(1) - m) * self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  auto pa = a.node();
  const double total = a.data().template cast<double>().sum();
  return make_result<Scalar>(Shape{}, Array<Scalar>::Constant(1, Scalar(total)), "sum", {pa},
                             [pa](NodeT<Scalar>& self) {
                               accumulate(*pa, Array<Scalar>::Constant(pa->value.size(), self.grad[0]));
                             });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  require(a.size() > 0, "mean of empty tensor");
  auto pa = a.node();
  const double n = double(a.size());
  const double m = a.data().template cast<double>().sum() / n;
  return make_result<Scalar>(Shape{}, Array<Scalar>::Constant(1, Scalar(m)), "mean", {pa},
                             [pa, n](NodeT<Scalar>& self) {
                               accumulate(*pa, Array<Scalar>::Constant(pa->value.size(),
                                                                       Scalar(self.grad[0] / n)));
                             });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  require(shape_numel(shape) == a.size(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto pa = a.node();
  return make_result<Scalar>(std::move(shape), a.data(), "reshape", {pa},
                             [pa](NodeT<Scalar>& self) { accumulate(*pa, self.grad); });
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts) {
  require(!parts.empty(), "concat: no inputs");
  Shape shape = parts[0].shape();
  require(!shape.empty(), "concat: scalar input");
  Index rows = 0, total = 0;
  std::vector<typename Tensor<Scalar>::NodePtr> parents;
  for (const auto& p : parts) {
    require(p.ndim() == shape.size() &&
                std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1),
            "concat: trailing dims differ, " + shape_str(shape) + " vs " + shape_str(p.shape()));
    rows += p.dim(0);
    total += p.size();
    parents.push_back(p.node());
  }
  shape[0] = rows;
  Array<Scalar> value(total);
  Index offset = 0;
  for (const auto& p : parts) {
    value.segment(offset, p.size()) = p.data();
    offset += p.size();
  }
  return make_result<Scalar>(std::move(shape), std::move(value), "concat", parents,
                             [parents](NodeT<Scalar>& self) {
                               Index off = 0;
                               for (const auto& p : parents) {
                                 const Index n = p->value.size();
                                 accumulate(*p, self.grad.segment(off, n));
                                 off += n;
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index begin, Index end) {
  require(a.ndim() >= 1 && 0 <= begin && begin <= end && end <= a.dim(0),
          "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") out of bounds for " + shape_str(a.shape()));
  Shape shape = a.shape();
  const Index stride = a.dim(0) == 0 ? 0 : a.size() / a.dim(0);
  shape[0] = end - begin;
  auto pa = a.node();
  const Index off = begin * stride, n = (end - begin) * stride;
  return make_result<Scalar>(std::move(shape), a.data().segment(off, n), "slice", {pa},
                             [pa, off, n](NodeT<Scalar>& self) {
                               if (!pa->requires_grad) return;
                               pa->ensure_grad().segment(off, n) += self.grad;
                             });
}

template <typename Scalar>
Tensor<Scalar> max_of(std::span<const Tensor<Scalar>> parts) {
  require(!parts.empty(), "max_of: no inputs");
  std::vector<typename Tensor<Scalar>::NodePtr> parents;
  for (const auto& p : parts) {
    require_same_shape(parts[0], p, "max_of");
    parents.push_back(p.node());
  }
  Array<Scalar> value = parts[0].data();
  auto winner = std::make_shared<Eigen::ArrayXi>(Eigen::ArrayXi::Zero(value.size()));
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto& v = parts[k].data();
    for (Index i = 0; i < value.size(); ++i) {
      if (v[i] > value[i]) {
        value[i] = v[i];
        (*winner)[i] = int(k);
      }
    }
  }
  return make_result<Scalar>(parts[0].shape(), std::move(value), "max_of", parents,
                             [parents, winner](NodeT<Scalar>& self) {
                               for (std::size_t k = 0; k < parents.size(); ++k) {
                                 accumulate(*parents[k],
                                            (*winner == int(k)).select(self.grad, Scalar(0)));
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> mean_of(std::span<const Tensor<Scalar>> parts) {
  require(!parts.empty(), "mean_of: no inputs");
  std::vector<typename Tensor<Scalar>::NodePtr> parents;
  Array<Scalar> value = Array<Scalar>::Zero(parts[0].size());
  for (const auto& p : parts) {
    require_same_shape(parts[0], p, "mean_of");
    parents.push_back(p.node());
    value += p.data();
  }
  const Scalar inv = Scalar(1.0 / double(parts.size()));
  value *= inv;
  return make_result<Scalar>(parts[0].shape(), std::move(value), "mean_of", parents,
                             [parents, inv](NodeT<Scalar>& self) {
                               for (const auto& p : parents) accumulate(*p, inv * self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  auto px = x.node();
  return make_result<Scalar>(x.shape(), x.data().max(Scalar(0)), "relu", {px},
                             [px](NodeT<Scalar>& self) {
                               accumulate(*px, (px->value > Scalar(0)).select(self.grad, Scalar(0)));
                             });
}

namespace {

struct ConvGeometry {
  Index n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, padding;
  Index patch() const { return cin * kh * kw; }
  Index out_pixels() const { return ho * wo; }
};

// Output columns [lo, hi) whose input index ox*stride - padding + j lies inside [0, extent).
inline std::pair<Index, Index> valid_range(Index out, Index extent, int stride, int padding, Index j) {
  const Index shift = j - padding;
  Index lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  Index hi = extent - shift <= 0 ? 0 : (extent - shift - 1) / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

// cols is (patch x ld) row-major; this sample occupies columns [offset, offset + ho*wo).
template <typename Scalar>
void im2col(const Scalar* in, const ConvGeometry& g, Scalar* cols, Index ld, Index offset) {
  for (Index c = 0; c < g.cin; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      const auto [oy0, oy1] = valid_range(g.ho, g.h, g.stride, g.padding, i);
      for (Index j = 0; j < g.kw; ++j) {
        const auto [ox0, ox1] = valid_range(g.wo, g.w, g.stride, g.padding, j);
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * ld + offset;
        std::fill(row, row + oy0 * g.wo, Scalar(0));
        std::fill(row + oy1 * g.wo, row + g.ho * g.wo, Scalar(0));
        for (Index oy = oy0; oy < oy1; ++oy) {
          const Index y = oy * g.stride - g.padding + i;
          Scalar* dst = row + oy * g.wo;
          const Scalar* src = in + (c * g.h + y) * g.w + (j - g.padding);
          std::fill(dst, dst + ox0, Scalar(0));
          std::fill(dst + ox1, dst + g.wo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + ox0, src + ox1, dst + ox0);
          } else {
            for (Index ox = ox0; ox < ox1; ++ox) dst[ox] = src[ox * g.stride];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index ld, Index offset, const ConvGeometry& g, Scalar* in) {
  for (Index c = 0; c < g.cin; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      const auto [oy0, oy1] = valid_range(g.ho, g.h, g.stride, g.padding, i);
      for (Index j = 0; j < g.kw; ++j) {
        const auto [ox0, ox1] = valid_range(g.wo, g.w, g.stride, g.padding, j);
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * ld + offset;
        for (Index oy = oy0; oy < oy1; ++oy) {
          const Index y = oy * g.stride - g.padding + i;
          const Scalar* src = row + oy * g.wo;
          Scalar* dst = in + (c * g.h + y) * g.w + (j - g.padding);
          if (g.stride == 1) {
            for (Index ox = ox0; ox < ox1; ++ox) dst[ox] += src[ox];
          } else {
            for (Index ox = ox0; ox < ox1; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, int stride, int padding) {
  require(input.ndim() == 4, "conv2d: input must be (N,Cin,H,W), got " + shape_str(input.shape()));
  require(kernel.ndim() == 4,
          "conv2d: kernel must be (Cout,Cin,kh,kw), got " + shape_str(kernel.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(padding >= 0, "conv2d: padding must be >= 0");
  ConvGeometry g{input.dim(0),  input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                 kernel.dim(2), kernel.dim(3), 0,           0,            stride,
                 padding};
  require(kernel.dim(1) == g.cin, "conv2d: Cin mismatch, input has " + std::to_string(g.cin) +
                                      " channels, kernel expects " + std::to_string(kernel.dim(1)));
  require(bias.ndim() == 1 && bias.dim(0) == g.cout,
          "conv2d: bias must be (Cout=" + std::to_string(g.cout) + "), got " +
              shape_str(bias.shape()));
  require(g.kh <= g.h + 2 * padding, "conv2d: kernel height exceeds padded input height");
  require(g.kw <= g.w + 2 * padding, "conv2d: kernel width exceeds padded input width");
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  // One GEMM over the whole batch: (Cout x patch) * (patch x N*HoWo).
  const Index in_stride = g.cin * g.h * g.w;
  const Index pix = g.out_pixels();
  const Index ld = g.n * pix;
  auto cols = std::make_shared<RowMatrix<Scalar>>(g.patch(), ld);
  for (Index n = 0; n < g.n; ++n) {
    im2col(input.data().data() + n * in_stride, g, cols->data(), ld, n * pix);
  }
  ConstRowMap<Scalar> kmat(kernel.data().data(), g.cout, g.patch());
  RowMatrix<Scalar> prod(g.cout, ld);
  prod.noalias() = kmat * (*cols);
  Array<Scalar> out(g.n * g.cout * pix);
  for (Index n = 0; n < g.n; ++n) {
    RowMap<Scalar>(out.data() + n * g.cout * pix, g.cout, pix) =
        prod.middleCols(n * pix, pix).colwise() + bias.data().matrix();
  }
  if (!(grad_enabled() && (input.requires_grad() || kernel.requires_grad() ||
                           bias.requires_grad()))) {
    cols.reset();
  }

  auto pi = input.node(), pk = kernel.node(), pb = bias.node();
  return make_result<Scalar>(
      Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), "conv2d", {pi, pk, pb},
      [pi, pk, pb, g, cols, in_stride, pix, ld](NodeT<Scalar>& self) {
        RowMatrix<Scalar> go(g.cout, ld);
        for (Index n = 0; n < g.n; ++n) {
          go.middleCols(n * pix, pix) =
              ConstRowMap<Scalar>(self.grad.data() + n * g.cout * pix, g.cout, pix);
        }
        if (pk->requires_grad) {
          RowMap<Scalar>(pk->ensure_grad().data(), g.cout, g.patch()).noalias() +=
              go * cols->transpose();
        }
        if (pb->requires_grad) pb->ensure_grad() += go.rowwise().sum().array();
        if (pi->requires_grad) {
          ConstRowMap<Scalar> km(pk->value.data(), g.cout, g.patch());
          RowMatrix<Scalar> gcol(g.patch(), ld);
          gcol.noalias() = km.transpose() * go;
          Scalar* gi = pi->ensure_grad().data();
          for (Index n = 0; n < g.n; ++n) col2im(gcol.data(), ld, n * pix, g, gi + n * in_stride);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> instance_norm2d(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                               const Tensor<Scalar>& beta, double eps) {
  require(input.ndim() == 4, "instance_norm2d: input must be (N,C,H,W)");
  const Index n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  require(hw >= 2, "instance_norm2d: need H*W >= 2 for a variance");
  require(gamma.size() == c && beta.size() == c, "instance_norm2d: gamma/beta must be (C)");

  Array<Scalar> out(input.size());
  auto normalized = std::make_shared<Array<Scalar>>(input.size());
  auto inv_std = std::make_shared<Eigen::ArrayXd>(n * c);
  for (Index s = 0; s < n * c; ++s) {
    const Scalar* x = input.data().data() + s * hw;
    double acc = 0.0;
    for (Index i = 0; i < hw; ++i) acc += x[i];
    const double mu = acc / double(hw);
    double sq = 0.0;
    for (Index i = 0; i < hw; ++i) {
      const double d = x[i] - mu;
      sq += d * d;
    }
    const double is = 1.0 / std::sqrt(sq / double(hw) + eps);
    (*inv_std)[s] = is;
    const Index ch = s % c;
    const Scalar gam = gamma.data()[ch], bet = beta.data()[ch];
    Scalar* xn = normalized->data() + s * hw;
    Scalar* o = out.data() + s * hw;
    for (Index i = 0; i < hw; ++i) {
      xn[i] = Scalar((x[i] - mu) * is);
      o[i] = gam * xn[i] + bet;
    }
  }

  auto pi = input.node(), pg = gamma.node(), pb = beta.node();
  return make_result<Scalar>(
      input.shape(), std::move(out), "instance_norm2d", {pi, pg, pb},
      [pi, pg, pb, normalized, inv_std, n, c, hw](NodeT<Scalar>& self) {
        for (Index s = 0; s < n * c; ++s) {
          const Index ch = s % c;
          const Scalar* g = self.grad.data() + s * hw;
          const Scalar* xn = normalized->data() + s * hw;
          double gsum = 0.0, gxsum = 0.0;
          for (Index i = 0; i < hw; ++i) {
            gsum += g[i];
            gxsum += double(g[i]) * xn[i];
          }
          if (pg->requires_grad) pg->ensure_grad()[ch] += Scalar(gxsum);
          if (pb->requires_grad) pb->ensure_grad()[ch] += Scalar(gsum);
          if (pi->requires_grad) {
            const double gam = double(pg->value[ch]);
            const double is = (*inv_std)[s];
            const Scalar m1 = Scalar(gam * gsum / double(hw));
            const Scalar m2 = Scalar(gam * gxsum / double(hw));
            const Scalar scale_g = Scalar(gam * is), scale = Scalar(is);
            Scalar* gi = pi->ensure_grad().data() + s * hw;
            for (Index i = 0; i < hw; ++i) gi[i] += scale_g * g[i] - scale * (m1 + xn[i] * m2);
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  require(x.ndim() == 2 && weight.ndim() == 2, "linear: x must be (N,D) and weight (D,M)");
  const Index n = x.dim(0), d = x.dim(1), m = weight.dim(1);
  require(weight.dim(0) == d, "linear: inner dims differ, x has D=" + std::to_string(d) +
                                  ", weight has " + std::to_string(weight.dim(0)));
  require(bias.ndim() == 1 && bias.dim(0) == m, "linear: bias must be (M)");
  Array<Scalar> out(n * m);
  RowMap<Scalar> o(out.data(), n, m);
  ConstRowMap<Scalar> xm(x.data().data(), n, d), wm(weight.data().data(), d, m);
  o.noalias() = xm * wm;
  o.rowwise() += bias.data().matrix().transpose();
  auto px = x.node(), pw = weight.node(), pb = bias.node();
  return make_result<Scalar>(Shape{n, m}, std::move(out), "linear", {px, pw, pb},
                             [px, pw, pb, n, d, m](NodeT<Scalar>& self) {
                               ConstRowMap<Scalar> g(self.grad.data(), n, m);
                               if (px->requires_grad) {
                                 RowMap<Scalar>(px->ensure_grad().data(), n, d).noalias() +=
                                     g * ConstRowMap<Scalar>(pw->value.data(), d, m).transpose();
                               }
                               if (pw->requires_grad) {
                                 RowMap<Scalar>(pw->ensure_grad().data(), d, m).noalias() +=
                                     ConstRowMap<Scalar>(px->value.data(), n, d).transpose() * g;
                               }
                               if (pb->requires_grad) {
                                 pb->ensure_grad() += g.colwise().sum().transpose().array();
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  require(x.ndim() == 4, "global_avg_pool: input must be (N,C,H,W)");
  const Index nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  require(hw >= 1, "global_avg_pool: empty spatial dims");
  Array<Scalar> out(nc);
  for (Index s = 0; s < nc; ++s) {
    out[s] = Scalar(x.data().segment(s * hw, hw).template cast<double>().mean());
  }
  auto px = x.node();
  return make_result<Scalar>(Shape{x.dim(0), x.dim(1)}, std::move(out), "global_avg_pool", {px},
                             [px, nc, hw](NodeT<Scalar>& self) {
                               if (!px->requires_grad) return;
                               auto& g = px->ensure_grad();
                               for (Index s = 0; s < nc; ++s) {
                                 g.segment(s * hw, hw) += self.grad[s] / Scalar(hw);
                               }
                             });
}

Resampling::Resampling(Index samples_, Index in_h_, Index in_w_, Index out_h_, Index out_w_, Index taps_)
    : samples(samples_), in_h(in_h_), in_w(in_w_), out_h(out_h_), out_w(out_w_), taps(taps_),
      index(samples_ * out_h_ * out_w_ * taps_, -1), weight(samples_ * out_h_ * out_w_ * taps_, 0.0) {
  require(samples >= 1 && taps >= 1, "Resampling: samples and taps must be positive");
}

void Resampling::set_identity(Index sample) {
  require(in_h == out_h && in_w == out_w, "Resampling: identity needs equal sizes");
  for (Index p = 0; p < out_pixels(); ++p) {
    const Index o = offset(sample, p);
    std::fill(index.begin() + o, index.begin() + o + taps, -1);
    std::fill(weight.begin() + o, weight.begin() + o + taps, 0.0);
    index[o] = std::int32_t(p);
    weight[o] = 1.0;
  }
}

Eigen::MatrixXd Resampling::dense(Index sample) const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(out_pixels(), in_h * in_w);
  for (Index p = 0; p < out_pixels(); ++p)
    for (Index k = 0; k < taps; ++k) {
      const Index o = offset(sample, p) + k;
      if (index[o] >= 0) m(p, index[o]) += weight[o];
    }
  return m;
}

template <typename Scalar>
Tensor<Scalar> resample(const Tensor<Scalar>& x, std::shared_ptr<const Resampling> map) {
  require(map != nullptr, "resample: no map");
  require(x.ndim() == 4, "resample: input must be (N,C,H,W)");
  const Resampling& r = *map;
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), ohw = r.out_pixels();
  require(x.dim(2) == r.in_h && x.dim(3) == r.in_w, "resample: input is " + shape_str(x.shape()) +
                                                        " but the map expects " + std::to_string(r.in_h) + "x" +
                                                        std::to_string(r.in_w));
  require(r.samples == 1 || r.samples == n, "resample: need a shared map or one per sample");
  const Index k = r.taps;
  std::vector<Scalar> w(r.weight.begin(), r.weight.end());
  Array<Scalar> out(n * c * ohw);
  for (Index s = 0; s < n; ++s) {
    const Index base = r.samples == 1 ? 0 : r.offset(s, 0);
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* in = x.data().data() + (s * c + ch) * hw;
      Scalar* o = out.data() + (s * c + ch) * ohw;
      for (Index p = 0; p < ohw; ++p) {
        const std::int32_t* idx = r.index.data() + base + p * k;
        const Scalar* wt = w.data() + base + p * k;
        Scalar acc = 0;
        for (Index t = 0; t < k; ++t)
          if (idx[t] >= 0) acc += wt[t] * in[idx[t]];
        o[p] = acc;
      }
    }
  }
  auto px = x.node();
  return make_result<Scalar>(Shape{n, c, r.out_h, r.out_w}, std::move(out), "resample", {px},
                             [px, map, w = std::move(w), n, c, hw, ohw, k](NodeT<Scalar>& self) {
                               if (!px->requires_grad) return;
                               auto& g = px->ensure_grad();
                               for (Index s = 0; s < n; ++s) {
                                 const Index base = map->samples == 1 ? 0 : map->offset(s, 0);
                                 for (Index ch = 0; ch < c; ++ch) {
                                   const Scalar* go = self.grad.data() + (s * c + ch) * ohw;
                                   Scalar* gi = g.data() + (s * c + ch) * hw;
                                   for (Index p = 0; p < ohw; ++p) {
                                     const std::int32_t* idx = map->index.data() + base + p * k;
                                     const Scalar* wt = w.data() + base + p * k;
                                     for (Index t = 0; t < k; ++t)
                                       if (idx[t] >= 0) gi[idx[t]] += wt[t] * go[p];
                                   }
                                 }
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> contrast_about_mean(const Tensor<Scalar>& x, std::span<const double> factors) {
  require(x.ndim() >= 1 && Index(factors.size()) == x.dim(0),
          "contrast_about_mean: need one factor per sample");
  const Index n = x.dim(0);
  const Index per = n == 0 ? 0 : x.size() / n;
  Array<Scalar> out(x.size());
  for (Index s = 0; s < n; ++s) {
    const auto seg = x.data().segment(s * per, per);
    const double mu = seg.template cast<double>().mean();
    const double f = factors[s];
    out.segment(s * per, per) = (mu + f * (seg.template cast<double>() - mu)).template cast<Scalar>();
  }
  auto px = x.node();
  std::vector<double> fs(factors.begin(), factors.end());
  return make_result<Scalar>(x.shape(), std::move(out), "contrast", {px},
                             [px, fs, n, per](NodeT<Scalar>& self) {
                               if (!px->requires_grad) return;
                               auto& g = px->ensure_grad();
                               for (Index s = 0; s < n; ++s) {
                                 const auto gs = self.grad.segment(s * per, per).template cast<double>();
                                 const double shared = (1.0 - fs[s]) * gs.mean();
                                 g.segment(s * per, per) += (fs[s] * gs + shared).template cast<Scalar>();
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> bce_with_logits(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels,
                               Reduction reduction) {
  require(logits.ndim() == 2 && logits.dim(1) == 1, "bce_with_logits: logits must be (N,1)");
  require(labels.shape() == logits.shape(), "bce_with_logits: labels must match logits shape");
  const auto& y = labels.data();
  require(((y == Scalar(0)) || (y == Scalar(1))).all(), "bce_with_logits: labels must be 0 or 1");
  const Index n = logits.dim(0);
  const Eigen::ArrayXd z = logits.data().template cast<double>();
  const Eigen::ArrayXd yd = y.template cast<double>();
  const Eigen::ArrayXd per = z.max(0.0) - z * yd + (-z.abs()).exp().log1p();
  const Eigen::ArrayXd dz = 1.0 / (1.0 + (-z).exp()) - yd;

  auto pl = logits.node();
  if (reduction == Reduction::per_sample) {
    return make_result<Scalar>(logits.shape(), per.template cast<Scalar>(), "bce", {pl},
                               [pl, dz](NodeT<Scalar>& self) {
                                 accumulate(*pl, (self.grad.template cast<double>() * dz)
                                                     .template cast<Scalar>());
                               });
  }
  require(n > 0, "bce_with_logits: empty batch");
  return make_result<Scalar>(Shape{}, Array<Scalar>::Constant(1, Scalar(per.mean())), "bce",
                             {pl}, [pl, dz, n](NodeT<Scalar>& self) {
                               accumulate(*pl, (dz * (double(self.grad[0]) / double(n)))
                                                   .template cast<Scalar>());
                             });
}

template <typename Scalar>
Tensor<Scalar> hinge_multibit(const Tensor<Scalar>& logits, const Tensor<Scalar>& bits,
                              Reduction reduction) {
  require(logits.ndim() == 2, "hinge_multibit: logits must be (N,n)");
  require(bits.shape() == logits.shape(),
          "hinge_multibit: code length mismatch, logits " + shape_str(logits.shape()) +
              " vs code " + shape_str(bits.shape()));
  const auto& b = bits.data();
  require(((b == Scalar(0)) || (b == Scalar(1))).all(), "hinge_multibit: bits must be 0 or 1");
  const Index n = logits.dim(0), width = logits.dim(1);
  require(width > 0, "hinge_multibit: zero-length code");
  const Eigen::ArrayXd t = 2.0 * b.template cast<double>() - 1.0;
  const Eigen::ArrayXd margin = 1.0 - t * logits.data().template cast<double>();
  const Eigen::ArrayXd loss = margin.max(0.0);
  const Eigen::ArrayXd dz = (margin > 0.0).select(-t, 0.0);

  auto pl = logits.node();
  if (reduction == Reduction::per_sample) {
    Eigen::ArrayXd per(n);
    for (Index s = 0; s < n; ++s) per[s] = loss.segment(s * width, width).mean();
    return make_result<Scalar>(Shape{n, 1}, per.template cast<Scalar>(), "hinge", {pl},
                               [pl, dz, n, width](NodeT<Scalar>& self) {
                                 Eigen::ArrayXd g(n * width);
                                 for (Index s = 0; s < n; ++s) {
                                   g.segment(s * width, width) =
                                       dz.segment(s * width, width) * (double(self.grad[s]) / double(width));
                                 }
                                 accumulate(*pl, g.template cast<Scalar>());
                               });
  }
  require(n > 0, "hinge_multibit: empty batch");
  const double count = double(n * width);
  return make_result<Scalar>(Shape{}, Array<Scalar>::Constant(1, Scalar(loss.sum() / count)),
                             "hinge", {pl}, [pl, dz, count](NodeT<Scalar>& self) {
                               accumulate(*pl, (dz * (double(self.grad[0]) / count))
                                                   .template cast<Scalar>());
                             });
}

#define RWM_INSTANTIATE(S)                                                                    \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> affine(const Tensor<S>&, double, double);                                \
  template Tensor<S> add_constant(const Tensor<S>&, const Tensor<S>::Array&);                 \
  template Tensor<S> clamp(const Tensor<S>&, double, double);                                 \
  template Tensor<S> blend(const Tensor<S>&, const Tensor<S>&, const Tensor<S>::Array&);      \
  template Tensor<S> sum(const Tensor<S>&);                                                   \
  template Tensor<S> mean(const Tensor<S>&);                                                  \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                        \
  template Tensor<S> concat(std::span<const Tensor<S>>);                                      \
  template Tensor<S> slice(const Tensor<S>&, Index, Index);                                   \
  template Tensor<S> max_of(std::span<const Tensor<S>>);                                      \
  template Tensor<S> mean_of(std::span<const Tensor<S>>);                                     \
  template Tensor<S> relu(const Tensor<S>&);                                                  \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);  \
  template Tensor<S> instance_norm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,    \
                                     double);                                                 \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                       \
  template Tensor<S> resample(const Tensor<S>&, std::shared_ptr<const Resampling>);           \
  template Tensor<S> contrast_about_mean(const Tensor<S>&, std::span<const double>);          \
  template Tensor<S> bce_with_logits(const Tensor<S>&, const Tensor<S>&, Reduction);          \
  template Tensor<S> hinge_multibit(const Tensor<S>&, const Tensor<S>&, Reduction);
RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)
#undef RWM_INSTANTIATE

}  // namespace rwm
