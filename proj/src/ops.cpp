#include "lvpm3/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "lvpm3/error.hpp"

namespace lvpm3::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
ConstMap<T> cmap(const T* p, std::size_t rows, std::size_t cols) {
    return ConstMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MutMap<T> mmap(T* p, std::size_t rows, std::size_t cols) {
    return MutMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct MatmulPlan {
    std::size_t batch = 1;
    std::size_t m = 0, k = 0, n = 0;
    bool a_shared = false;
    bool b_shared = false;
    Shape out;
};

MatmulPlan plan_matmul(const Shape& a, const Shape& b, bool transpose_b) {
    auto fail = [&](const std::string& why) {
        return ShapeError("matmul " + why + ": " + shape_str(a) + (transpose_b ? " x T" : " x ") +
                          shape_str(b));
    };
    if (a.size() < 2 || b.size() < 2) {
        throw fail("needs rank >= 2");
    }
    MatmulPlan p;
    p.m = a[a.size() - 2];
    p.k = a[a.size() - 1];
    const std::size_t bk = transpose_b ? b[b.size() - 1] : b[b.size() - 2];
    p.n = transpose_b ? b[b.size() - 2] : b[b.size() - 1];
    if (bk != p.k) {
        throw fail("inner dimensions differ");
    }
    const Shape a_batch(a.begin(), a.end() - 2);
    const Shape b_batch(b.begin(), b.end() - 2);
    Shape out_batch;
    if (a_batch == b_batch) {
        out_batch = a_batch;
    } else if (b_batch.empty()) {
        p.b_shared = true;
        out_batch = a_batch;
    } else if (a_batch.empty()) {
        p.a_shared = true;
        out_batch = b_batch;
    } else {
        throw fail("batch dimensions are not compatible");
    }
    p.batch = shape_numel(out_batch);
    p.out = out_batch;
    p.out.push_back(p.m);
    p.out.push_back(p.n);
    return p;
}

template <typename T>
BasicTensor<T> matmul_impl(const BasicTensor<T>& a, const BasicTensor<T>& b, bool bt) {
    const MatmulPlan p = plan_matmul(a.shape(), b.shape(), bt);
    std::vector<T> out(shape_numel(p.out), T(0));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    const std::size_t a_step = p.a_shared ? 0 : p.m * p.k;
    const std::size_t b_step = p.b_shared ? 0 : p.k * p.n;
    const std::size_t brows = bt ? p.n : p.k;
    const std::size_t bcols = bt ? p.k : p.n;

    if (p.b_shared) {
        auto c = mmap(out.data(), p.batch * p.m, p.n);
        auto am = cmap(ad, p.batch * p.m, p.k);
        auto bm = cmap(bd, brows, bcols);
        if (bt) {
            c.noalias() = am * bm.transpose();
        } else {
            c.noalias() = am * bm;
        }
    } else {
        for (std::size_t i = 0; i < p.batch; ++i) {
            auto c = mmap(out.data() + i * p.m * p.n, p.m, p.n);
            auto am = cmap(ad + i * a_step, p.m, p.k);
            auto bm = cmap(bd + i * b_step, brows, bcols);
            if (bt) {
                c.noalias() = am * bm.transpose();
            } else {
                c.noalias() = am * bm;
            }
        }
    }

    return make_op<T>(bt ? "matmul_bt" : "matmul", p.out, std::move(out), {a, b},
                      [p, bt, brows, bcols, a_step, b_step](TensorImpl<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          const T* g = self.grad.data();
                          if (pa.requires_grad) {
                              T* ga = pa.grad_buffer().data();
                              if (p.b_shared) {
                                  auto gam = mmap(ga, p.batch * p.m, p.k);
                                  auto gm = cmap(g, p.batch * p.m, p.n);
                                  auto bm = cmap(pb.data.data(), brows, bcols);
                                  if (bt) {
                                      gam.noalias() += gm * bm;
                                  } else {
                                      gam.noalias() += gm * bm.transpose();
                                  }
                              } else {
                                  for (std::size_t i = 0; i < p.batch; ++i) {
                                      auto gam = mmap(ga + i * a_step, p.m, p.k);
                                      auto gm = cmap(g + i * p.m * p.n, p.m, p.n);
                                      auto bm = cmap(pb.data.data() + i * b_step, brows, bcols);
                                      if (bt) {
                                          gam.noalias() += gm * bm;
                                      } else {
                                          gam.noalias() += gm * bm.transpose();
                                      }
                                  }
                              }
                          }
                          if (pb.requires_grad) {
                              T* gb = pb.grad_buffer().data();
                              if (p.b_shared) {
                                  auto gbm = mmap(gb, brows, bcols);
                                  auto gm = cmap(g, p.batch * p.m, p.n);
                                  auto am = cmap(pa.data.data(), p.batch * p.m, p.k);
                                  if (bt) {
                                      gbm.noalias() += gm.transpose() * am;
                                  } else {
                                      gbm.noalias() += am.transpose() * gm;
                                  }
                              } else {
                                  for (std::size_t i = 0; i < p.batch; ++i) {
                                      auto gbm = mmap(gb + i * b_step, brows, bcols);
                                      auto gm = cmap(g + i * p.m * p.n, p.m, p.n);
                                      auto am = cmap(pa.data.data() + i * a_step, p.m, p.k);
                                      if (bt) {
                                          gbm.noalias() += gm.transpose() * am;
                                      } else {
                                          gbm.noalias() += am.transpose() * gm;
                                      }
                                  }
                              }
                          }
                      });
}

bool is_suffix(const Shape& full, const Shape& suffix) {
    if (suffix.size() > full.size()) {
        return false;
    }
    return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
    for (T v : values) {
        if (std::isnan(v)) {
            throw NumericError(std::string(op) + ": NaN input");
        }
    }
}

} // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return matmul_impl(a, b, false);
}

template <typename T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return matmul_impl(a, b, true);
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (!is_suffix(a.shape(), b.shape())) {
        throw ShapeError("add: " + shape_str(b.shape()) + " does not broadcast onto " +
                         shape_str(a.shape()));
    }
    const std::size_t nb = b.numel();
    std::vector<T> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bd[i % nb];
    }
    return make_op<T>("add", a.shape(), std::move(out), {a, b}, [nb](TensorImpl<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto ga = pa.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += self.grad[i];
            }
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb[i % nb] += self.grad[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] * b.data()[i];
    }
    return make_op<T>("mul", a.shape(), std::move(out), {a, b}, [](TensorImpl<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto ga = pa.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += self.grad[i] * pb.data[i];
            }
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += self.grad[i] * pa.data[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (T& v : out) {
        v *= factor;
    }
    return make_op<T>("scale", x.shape(), std::move(out), {x}, [factor](TensorImpl<T>& self) {
        auto gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += factor * self.grad[i];
        }
    });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    }
    return make_op<T>("relu", x.shape(), std::move(out), {x}, [](TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto gx = px.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (px.data[i] > T(0)) {
                gx[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
    }
    check_finite<T>(x.data(), "softmax");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    std::vector<T> out(x.numel());
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
            T total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const T e = std::exp(xd[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
        }
    }
    return make_op<T>("softmax", s, std::move(out), {x},
                      [outer, inner, n](TensorImpl<T>& self) {
                          auto gx = self.parents[0]->grad_buffer();
                          const auto& y = self.data;
                          const auto& g = self.grad;
                          for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                  const std::size_t base = o * n * inner + in;
                                  T dot = 0;
                                  for (std::size_t j = 0; j < n; ++j) {
                                      dot += g[base + j * inner] * y[base + j * inner];
                                  }
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const std::size_t idx = base + j * inner;
                                      gx[idx] += y[idx] * (g[idx] - dot);
                                  }
                              }
                          }
                      });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, double eps) {
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = gd[j] * h + bd[j];
        }
    }
    return make_op<T>(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [d, rows, xhat, inv_std](TensorImpl<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& g = self.grad;
            if (pg.requires_grad || pb.requires_grad) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (pg.requires_grad) pg.grad_buffer()[j] += g[r * d + j] * (*xhat)[r * d + j];
                        if (pb.requires_grad) pb.grad_buffer()[j] += g[r * d + j];
                    }
                }
            }
            if (px.requires_grad) {
                auto gx = px.grad_buffer();
                std::vector<T> dh(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = g[r * d + j] * pg.data[j];
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * (*xhat)[r * d + j];
                    }
                    mean_dh /= static_cast<T>(d);
                    mean_dh_h /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] +=
                            (*inv_std)[r] * (dh[j] - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
                    }
                }
            }
        });
}

template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const TokenId> ids) {
    if (table.rank() != 2) {
        throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
    }
    if (ids.empty()) {
        throw ShapeError("embedding_lookup: empty id list");
    }
    const std::size_t vocab = table.dim(0);
    const std::size_t d = table.dim(1);
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw VocabularyError("token id " + std::to_string(ids[i]) +
                                  " out of range for vocabulary of size " + std::to_string(vocab));
        }
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.data() + i * d);
    }
    std::vector<TokenId> saved(ids.begin(), ids.end());
    return make_op<T>("embedding_lookup", Shape{ids.size(), d}, std::move(out), {table},
                      [saved = std::move(saved), d](TensorImpl<T>& self) {
                          auto gt = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                              T* dst = gt.data() + static_cast<std::size_t>(saved[i]) * d;
                              for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
                          }
                      });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::vector<std::size_t> chunk;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                             " along axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
        chunk.push_back(p.numel() / outer);
    }
    const std::size_t row = std::accumulate(chunk.begin(), chunk.end(), std::size_t{0});
    std::vector<T> out(outer * row);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pd = parts[k].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pd.data() + o * chunk[k], chunk[k], out.data() + o * row + offset);
        }
        offset += chunk[k];
    }
    return make_op<T>("concat", out_shape, std::move(out), parts,
                      [chunk, outer, row](TensorImpl<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < chunk.size(); ++k) {
                              auto& pk = *self.parents[k];
                              if (pk.requires_grad) {
                                  auto gk = pk.grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                      for (std::size_t j = 0; j < chunk[k]; ++j) {
                                          gk[o * chunk[k] + j] += self.grad[o * row + off + j];
                                      }
                                  }
                              }
                              off += chunk[k];
                          }
                      });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& order) {
    const Shape& s = x.shape();
    std::vector<std::size_t> check = order;
    std::sort(check.begin(), check.end());
    bool valid = order.size() == s.size();
    for (std::size_t i = 0; valid && i < check.size(); ++i) valid = check[i] == i;
    if (!valid) {
        throw ShapeError("permute: invalid axis order for " + shape_str(s));
    }
    const std::size_t rank = s.size();
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = s[order[i]];

    auto source = std::make_shared<std::vector<std::size_t>>(x.numel());
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < x.numel(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_stride[order[i]];
        (*source)[flat] = src;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[(*source)[i]];
    return make_op<T>("permute", out_shape, std::move(out), {x}, [source](TensorImpl<T>& self) {
        auto gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < source->size(); ++i) gx[(*source)[i]] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
    if (x.rank() < 2) {
        throw ShapeError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
    }
    std::vector<std::size_t> order(x.rank());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::swap(order[order.size() - 1], order[order.size() - 2]);
    return permute(x, order);
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_op<T>("reshape", std::move(shape), std::move(out), {x}, [](TensorImpl<T>& self) {
        auto gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> slice_last(const BasicTensor<T>& x, std::size_t begin, std::size_t length) {
    const std::size_t cols = x.shape().back();
    if (length == 0 || begin + length > cols) {
        throw ShapeError("slice_last: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + length) + ") outside " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / cols;
    Shape out_shape = x.shape();
    out_shape.back() = length;
    std::vector<T> out(rows * length);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data().data() + r * cols + begin, length, out.data() + r * length);
    }
    return make_op<T>("slice_last", out_shape, std::move(out), {x},
                      [rows, cols, begin, length](TensorImpl<T>& self) {
                          auto gx = self.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < length; ++j) {
                                  gx[r * cols + begin + j] += self.grad[r * length + j];
                              }
                          }
                      });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T total = 0;
    for (T v : x.data()) total += v;
    return make_op<T>("sum", Shape{1}, std::vector<T>{total}, {x}, [](TensorImpl<T>& self) {
        auto gx = self.parents[0]->grad_buffer();
        for (T& g : gx) g += self.grad[0];
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> linear_with_external_params(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                           const BasicTensor<T>& bias) {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
        throw ShapeError("linear: weight " + shape_str(weight.shape()) + " and bias " +
                         shape_str(bias.shape()) + " disagree");
    }
    return add(matmul(x, weight), bias);
}

template <typename T>
BasicTensor<T> add_batch_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
    if (x.rank() != 3 || bias.rank() != 2 || bias.dim(0) != x.dim(0) || bias.dim(1) != x.dim(2)) {
        throw ShapeError("add_batch_bias: " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
    }
    const std::size_t batch = x.dim(0), rows = x.dim(1), d = x.dim(2);
    std::vector<T> out(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) out[(b * rows + r) * d + j] += bias.data()[b * d + j];
        }
    }
    return make_op<T>("add_batch_bias", x.shape(), std::move(out), {x, bias},
                      [batch, rows, d](TensorImpl<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (px.requires_grad) {
                              auto gx = px.grad_buffer();
                              for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                              auto gb = pb.grad_buffer();
                              for (std::size_t b = 0; b < batch; ++b) {
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t j = 0; j < d; ++j) {
                                          gb[b * d + j] += self.grad[(b * rows + r) * d + j];
                                      }
                                  }
                              }
                          }
                      });
}

template <typename T>
BasicTensor<T> cross_entropy_label_smoothed(const BasicTensor<T>& logits,
                                            std::span<const TokenId> targets, double eps_ls,
                                            TokenId pad_id) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
    }
    if (!(eps_ls >= 0.0 && eps_ls < 1.0)) {
        throw ConfigError("label smoothing must lie in [0, 1), got " + std::to_string(eps_ls));
    }
    const std::size_t n = logits.dim(0), vocab = logits.dim(1);
    std::size_t count = 0;
    for (TokenId t : targets) {
        if (t == pad_id) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw VocabularyError("target id " + std::to_string(t) + " out of range");
        }
        ++count;
    }
    if (count == 0) {
        throw DegenerateBatchError("cross_entropy: every target position is padding");
    }
    check_finite<T>(logits.data(), "cross_entropy");
    const double on = 1.0 - eps_ls + eps_ls / static_cast<double>(vocab);
    const double off = eps_ls / static_cast<double>(vocab);
    auto probs = std::make_shared<std::vector<T>>(n * vocab, T(0));
    double total = 0;
    const auto ld = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] == pad_id) continue;
        const T* row = ld.data() + i * vocab;
        const double mx = *std::max_element(row, row + vocab);
        double z = 0;
        for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
        const double log_z = mx + std::log(z);
        double row_loss = 0;
        for (std::size_t v = 0; v < vocab; ++v) {
            const double logp = static_cast<double>(row[v]) - log_z;
            const double q = static_cast<std::size_t>(targets[i]) == v ? on : off;
            row_loss -= q * logp;
            (*probs)[i * vocab + v] = static_cast<T>(std::exp(logp));
        }
        total += row_loss;
    }
    std::vector<TokenId> saved(targets.begin(), targets.end());
    const T loss = static_cast<T>(total / static_cast<double>(count));
    return make_op<T>("cross_entropy", Shape{1}, std::vector<T>{loss}, {logits},
                      [probs, saved = std::move(saved), vocab, count, on, off,
                       pad_id](TensorImpl<T>& self) {
                          auto gl = self.parents[0]->grad_buffer();
                          const T g = self.grad[0] / static_cast<T>(count);
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                              if (saved[i] == pad_id) continue;
                              for (std::size_t v = 0; v < vocab; ++v) {
                                  const T q = static_cast<T>(
                                      static_cast<std::size_t>(saved[i]) == v ? on : off);
                                  gl[i * vocab + v] += g * ((*probs)[i * vocab + v] - q);
                              }
                          }
                      });
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
    }
    if (p == 0.0) {
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
        out[i] = x.data()[i] * (*mask)[i];
    }
    return make_op<T>("dropout", x.shape(), std::move(out), {x}, [mask](TensorImpl<T>& self) {
        auto gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
    });
}

template <typename T>
BasicTensor<T> attention_mask(const BasicTensor<T>& scores, std::span<const std::uint8_t> allowed) {
    if (scores.rank() != 4) {
        throw ShapeError("attention_mask: scores must be [B, H, Tq, Tk], got " +
                         shape_str(scores.shape()));
    }
    const std::size_t batch = scores.dim(0), heads = scores.dim(1);
    const std::size_t plane = scores.dim(2) * scores.dim(3);
    if (allowed.size() != batch * plane) {
        throw ShapeError("attention_mask: mask size " + std::to_string(allowed.size()) +
                         " does not match scores " + shape_str(scores.shape()));
    }
    constexpr T kBlocked = static_cast<T>(-1e9);
    auto keep = std::make_shared<std::vector<std::uint8_t>>(allowed.begin(), allowed.end());
    std::vector<T> out(scores.data().begin(), scores.data().end());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < plane; ++i) {
                if (!(*keep)[b * plane + i]) out[(b * heads + h) * plane + i] = kBlocked;
            }
        }
    }
    return make_op<T>("attention_mask", scores.shape(), std::move(out), {scores},
                      [keep, batch, heads, plane](TensorImpl<T>& self) {
                          auto gs = self.parents[0]->grad_buffer();
                          for (std::size_t b = 0; b < batch; ++b) {
                              for (std::size_t h = 0; h < heads; ++h) {
                                  for (std::size_t i = 0; i < plane; ++i) {
                                      if ((*keep)[b * plane + i]) {
                                          const std::size_t idx = (b * heads + h) * plane + i;
                                          gs[idx] += self.grad[idx];
                                      }
                                  }
                              }
                          }
                      });
}

#define LVPM3_INSTANTIATE_OPS(T)                                                                  \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> matmul_bt(const BasicTensor<T>&, const BasicTensor<T>&);              \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                      \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                          \
    template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                          \
    template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                       const BasicTensor<T>&, double);                            \
    template BasicTensor<T> embedding_lookup(const BasicTensor<T>&, std::span<const TokenId>);    \
    template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);              \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                     \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                \
    template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);      \
    template BasicTensor<T> slice_last(const BasicTensor<T>&, std::size_t, std::size_t);          \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                           \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                          \
    template BasicTensor<T> linear_with_external_params(const BasicTensor<T>&,                    \
                                                        const BasicTensor<T>&,                    \
                                                        const BasicTensor<T>&);                   \
    template BasicTensor<T> add_batch_bias(const BasicTensor<T>&, const BasicTensor<T>&);         \
    template BasicTensor<T> cross_entropy_label_smoothed(                                         \
        const BasicTensor<T>&, std::span<const TokenId>, double, TokenId);                        \
    template BasicTensor<T> dropout(const BasicTensor<T>&, double, Rng&);                         \
    template BasicTensor<T> attention_mask(const BasicTensor<T>&, std::span<const std::uint8_t>);

LVPM3_INSTANTIATE_OPS(float)
LVPM3_INSTANTIATE_OPS(double)

#undef LVPM3_INSTANTIATE_OPS

} // namespace lvpm3::ad
