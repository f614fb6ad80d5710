#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fca/tape.hpp"
#include "fca/tensor.hpp"

namespace fca {

// Byte mask over a tensor's elements; 1 = participates. Row-major, same
// length as the tensor it masks.
using ElementMask = std::vector<std::uint8_t>;

namespace detail {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

inline CMap cmap(const Tensor& t) {
  return CMap(t.values().data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}

inline Map map_buffer(std::vector<double>& buf, std::size_t r, std::size_t c) {
  return Map(buf.data(), static_cast<Eigen::Index>(r),
             static_cast<Eigen::Index>(c));
}

inline CMap cmap_buffer(const std::vector<double>& buf, std::size_t r,
                        std::size_t c) {
  return CMap(buf.data(), static_cast<Eigen::Index>(r),
              static_cast<Eigen::Index>(c));
}

inline bool track(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) tape->watch(*t);
    }
  }
  return any;
}

inline void mark_output(Tensor& out, bool tracked) {
  out.mark_interior();
  if (tracked) out.set_requires_grad(true);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  detail::map_buffer(out.values(), out.rows(), out.cols()).noalias() =
      detail::cmap(a) * detail::cmap(b);
  detail::check_finite(out, "matmul");

  bool tracked = detail::track(tape, {&a, &b});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([a, b, out, tape] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      detail::CMap g = detail::cmap_buffer(*go, out.rows(), out.cols());
      if (a.requires_grad()) {
        auto ga = detail::map_buffer(tape->grad(a), a.rows(), a.cols());
        ga.noalias() += g * detail::cmap(b).transpose();
      }
      if (b.requires_grad()) {
        auto gb = detail::map_buffer(tape->grad(b), b.rows(), b.cols());
        gb.noalias() += detail::cmap(a).transpose() * g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out(i) = a(i) + b(i);
  }
  detail::check_finite(out, "add");

  bool tracked = detail::track(tape, {&a, &b});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([a, b, out, tape] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        std::vector<double>& g = tape->grad(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*go)[i];
      }
    });
  }
  return out;
}

/// x [n x d] plus a length-d row vector broadcast over rows.
inline Tensor add_row_broadcast(Tape* tape, const Tensor& x, const Tensor& b) {
  if (x.ndim() != 2 || b.numel() != x.cols()) {
    throw ShapeError("add_row_broadcast: " + shape_str(x.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(x.shape());
  const std::size_t n = x.rows(), d = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x(i, j) + b(j);
  }
  detail::check_finite(out, "add_row_broadcast");

  bool tracked = detail::track(tape, {&x, &b});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, b, out, tape, n, d] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      if (x.requires_grad()) {
        std::vector<double>& gx = tape->grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i];
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = tape->grad(b);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += (*go)[i * d + j];
        }
      }
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& x, double c) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) = c * x(i);
  detail::check_finite(out, "scale");

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape, c] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * (*go)[i];
    });
  }
  return out;
}

inline Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("hadamard: shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) = a(i) * b(i);
  detail::check_finite(out, "hadamard");

  bool tracked = detail::track(tape, {&a, &b});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([a, b, out, tape] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      if (a.requires_grad()) {
        std::vector<double>& ga = tape->grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += b(i) * (*go)[i];
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = tape->grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += a(i) * (*go)[i];
      }
    });
  }
  return out;
}

/// Scales row i of x by coeff[i]. Gradients flow to both x and coeff.
inline Tensor scale_rows(Tape* tape, const Tensor& x, const Tensor& coeff) {
  if (x.ndim() != 2 || coeff.numel() != x.rows()) {
    throw ShapeError("scale_rows: " + shape_str(x.shape()) + " vs " +
                     shape_str(coeff.shape()));
  }
  Tensor out(x.shape());
  const std::size_t n = x.rows(), d = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = coeff(i) * x(i, j);
  }
  detail::check_finite(out, "scale_rows");

  bool tracked = detail::track(tape, {&x, &coeff});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, coeff, out, tape, n, d] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      if (x.requires_grad()) {
        std::vector<double>& gx = tape->grad(x);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            gx[i * d + j] += coeff(i) * (*go)[i * d + j];
          }
        }
      }
      if (coeff.requires_grad()) {
        std::vector<double>& gc = tape->grad(coeff);
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += x(i, j) * (*go)[i * d + j];
          gc[i] += acc;
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(Tape* tape, const Tensor& x) {
  if (x.ndim() != 2) {
    throw ShapeError("transpose: expected 2-D, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out({d, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(j, i) = x(i, j);
  }

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape, n, d] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (*go)[j * n + i];
      }
    });
  }
  return out;
}

inline Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  }
  Tensor out(std::move(shape), x.values());

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row softmax with optional element mask

/// Row-wise softmax, stabilized by row-max subtraction. Masked positions are
/// exactly zero in the output and receive no gradient. A fully masked row is
/// a degenerate-row error.
inline Tensor softmax_rows(Tape* tape, const Tensor& x,
                           const ElementMask* mask = nullptr) {
  if (x.ndim() != 2) {
    throw ShapeError("softmax_rows: expected 2-D, got " +
                     shape_str(x.shape()));
  }
  if (mask && mask->size() != x.numel()) {
    throw ShapeError("softmax_rows: mask length " +
                     std::to_string(mask->size()) + " vs " +
                     std::to_string(x.numel()) + " elements");
  }
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
      if (!mask || (*mask)[i * d + j]) mx = std::max(mx, x(i, j));
    }
    if (!std::isfinite(mx)) {
      throw NumericError("softmax_rows: fully masked row " +
                         std::to_string(i));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (!mask || (*mask)[i * d + j]) {
        out(i, j) = std::exp(x(i, j) - mx);
        sum += out(i, j);
      } else {
        out(i, j) = 0.0;
      }
    }
    for (std::size_t j = 0; j < d; ++j) out(i, j) /= sum;
  }
  detail::check_finite(out, "softmax_rows");

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape, n, d] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += (*go)[i * d + j] * out(i, j);
        }
        for (std::size_t j = 0; j < d; ++j) {
          gx[i * d + j] += out(i, j) * ((*go)[i * d + j] - dot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// GeLU (tanh form)

// GeLU(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluCubic = 0.044715;
inline const double kGeluScale = std::sqrt(2.0 / M_PI);

inline double gelu_scalar(double x) {
  double u = kGeluScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad_scalar(double x) {
  double u = kGeluScale * (x + kGeluCubic * x * x * x);
  double t = std::tanh(u);
  double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline Tensor gelu(Tape* tape, const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out(i) = gelu_scalar(x(i));
  detail::check_finite(out, "gelu");

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += gelu_grad_scalar(x(i)) * (*go)[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization

inline constexpr double kLayerNormEpsilon = 1e-12;

/// Per-row standardization followed by the gain/bias affine map.
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain,
                         const Tensor& bias) {
  if (x.ndim() != 2 || x.cols() < 2) {
    throw ShapeError("layer_norm: expected [n x d] with d >= 2, got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias must have length " +
                     std::to_string(d));
  }
  Tensor out(x.shape());
  std::vector<double> inv_std(n), xhat(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (x(i, j) - mean) * inv_std[i];
      out(i, j) = xhat[i * d + j] * gain(j) + bias(j);
    }
  }
  detail::check_finite(out, "layer_norm");

  bool tracked = detail::track(tape, {&x, &gain, &bias});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, gain, bias, out, tape, n, d, inv_std = std::move(inv_std),
                  xhat = std::move(xhat)] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      if (gain.requires_grad()) {
        std::vector<double>& gg = tape->grad(gain);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += (*go)[i * d + j] * xhat[i * d + j];
          }
        }
      }
      if (bias.requires_grad()) {
        std::vector<double>& gb = tape->grad(bias);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += (*go)[i * d + j];
        }
      }
      if (x.requires_grad()) {
        std::vector<double>& gx = tape->grad(x);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            double dxh = (*go)[i * d + j] * gain(j);
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i * d + j];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            double dxh = (*go)[i * d + j] * gain(j);
            gx[i * d + j] += inv_std[i] * (dxh - mean_dxhat -
                                           xhat[i * d + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

/// Selects rows (first-axis slices) of x by index; repeats allowed.
inline Tensor gather_rows(Tape* tape, const Tensor& x,
                          const std::vector<std::size_t>& indices) {
  if (x.ndim() == 0) throw ShapeError("gather_rows: empty tensor");
  const std::size_t d = x.cols();
  for (std::size_t idx : indices) {
    if (idx >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) +
                       " out of range for " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x(indices[i], j);
  }

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape, indices, d] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          gx[indices[i] * d + j] += (*go)[i * d + j];
        }
      }
    });
  }
  return out;
}

inline Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != d) {
      throw ShapeError("concat_rows: column mismatch " +
                       shape_str(p.shape()));
    }
    total += p.rows();
  }
  Shape out_shape = parts.front().shape();
  out_shape[0] = total;
  Tensor out(out_shape);
  std::size_t row = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) out(row, j) = p(i, j);
    }
  }

  bool tracked = false;
  if (tape) {
    for (const Tensor& p : parts) {
      tracked = detail::track(tape, {&p}) || tracked;
    }
  }
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([parts, out, tape, d] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::size_t row = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad()) {
          std::vector<double>& gp = tape->grad(p);
          for (std::size_t i = 0; i < p.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              gp[i * d + j] += (*go)[(row + i) * d + j];
            }
          }
        }
        row += p.rows();
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.rows() != n) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor out({n, total});
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, col + j) = p(i, j);
    }
    col += p.cols();
  }

  bool tracked = false;
  if (tape) {
    for (const Tensor& p : parts) {
      tracked = detail::track(tape, {&p}) || tracked;
    }
  }
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([parts, out, tape, n, total] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::size_t col = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad()) {
          std::vector<double>& gp = tape->grad(p);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < p.cols(); ++j) {
              gp[i * p.cols() + j] += (*go)[i * total + col + j];
            }
          }
        }
        col += p.cols();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Tensor sum_all(Tape* tape, const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x(i);
  Tensor out = Tensor::scalar(s);
  detail::check_finite(out, "sum_all");

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gx = tape->grad(x);
      for (double& g : gx) g += (*go)[0];
    });
  }
  return out;
}

/// sqrt(x + eps) on a scalar; eps keeps the gradient finite at zero.
inline Tensor sqrt_scalar(Tape* tape, const Tensor& x, double eps = 1e-12) {
  if (x.numel() != 1) {
    throw ShapeError("sqrt_scalar: expected scalar, got " +
                     shape_str(x.shape()));
  }
  double root = std::sqrt(x(0) + eps);
  Tensor out = Tensor::scalar(root);
  detail::check_finite(out, "sqrt_scalar");

  bool tracked = detail::track(tape, {&x});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([x, out, tape, root] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      tape->grad(x)[0] += 0.5 / root * (*go)[0];
    });
  }
  return out;
}

/// Cross entropy of a single logit row against an integer label,
/// log-sum-exp stabilized.
inline Tensor cross_entropy_logits(Tape* tape, const Tensor& logits,
                                   std::size_t label) {
  const std::size_t c = logits.numel();
  if (label >= c) {
    throw ShapeError("cross_entropy_logits: label " + std::to_string(label) +
                     " out of range for " + std::to_string(c) + " classes");
  }
  double mx = logits(0);
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(j));
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) sum += std::exp(logits(j) - mx);
  double lse = mx + std::log(sum);
  Tensor out = Tensor::scalar(lse - logits(label));
  detail::check_finite(out, "cross_entropy_logits");

  bool tracked = detail::track(tape, {&logits});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([logits, out, tape, label, mx, sum, c] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gl = tape->grad(logits);
      for (std::size_t j = 0; j < c; ++j) {
        double p = std::exp(logits(j) - mx) / sum;
        gl[j] += ((j == label ? p - 1.0 : p)) * (*go)[0];
      }
    });
  }
  return out;
}

/// Mean squared error against a constant target.
inline Tensor mse_loss(Tape* tape, const Tensor& pred,
                       const std::vector<double>& target) {
  if (pred.numel() != target.size()) {
    throw ShapeError("mse_loss: prediction/target length mismatch");
  }
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    double diff = pred(i) - target[i];
    acc += diff * diff;
  }
  Tensor out = Tensor::scalar(acc / n);
  detail::check_finite(out, "mse_loss");

  bool tracked = detail::track(tape, {&pred});
  detail::mark_output(out, tracked);
  if (tracked) {
    tape->record([pred, out, tape, target, n] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      std::vector<double>& gp = tape->grad(pred);
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gp[i] += 2.0 * (pred(i) - target[i]) / n * (*go)[0];
      }
    });
  }
  return out;
}

}  // namespace fca
