#include "mmgl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mmgl {

namespace {

// Accumulating matmul kernels, row-major. c += a * b in the indicated
// transposition. These are the hot paths of the whole project.
void mm_nn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[i,j] += dot(a_i, b_j) with a [m x k], b [n x k]. Four independent
// accumulator chains so the reduction vectorizes; their fixed combination
// order keeps results run-to-run identical.
void mm_nt(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) s0 += ai[p] * bj[p];
      ci[j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// c[i,j] += sum_p a[p,i] b[p,j] with a [k x m], b [k x n].
void mm_tn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

bool want_grad(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

Tensor make_out(std::vector<std::size_t> shape, bool rec) {
  Tensor t = Tensor::zeros(std::move(shape));
  if (rec) t.set_requires_grad(true);
  return t;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()) + " differ");
}

}  // namespace

void backward_all(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1)
    throw std::runtime_error("backward_all: loss " + shape_str(loss.shape()) +
                             " has " + std::to_string(loss.size()) +
                             " elements, expected a single one");
  if (!loss.requires_grad())
    throw std::runtime_error("backward_all: loss was not recorded on the tape");
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  tape.replay_backward();
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape, bool trans_a, bool trans_b) {
  if (trans_a && trans_b)
    throw std::invalid_argument("matmul: both-sides-transposed form is not supported");
  std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  std::size_t m = trans_a ? ac : ar;
  std::size_t ka = trans_a ? ar : ac;
  std::size_t kb = trans_b ? bc : br;
  std::size_t n = trans_b ? br : bc;
  if (ka != kb)
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a.shape()) + (trans_a ? "^T" : "") + " * " +
                                shape_str(b.shape()) + (trans_b ? "^T" : ""));
  bool rec = want_grad(tape, {&a, &b});
  Tensor out = make_out({m, n}, rec);
  if (!trans_a && !trans_b)
    mm_nn(a.data(), b.data(), out.data(), m, ka, n);
  else if (!trans_a && trans_b)
    mm_nt(a.data(), b.data(), out.data(), m, ka, n);
  else
    mm_tn(a.data(), b.data(), out.data(), m, ka, n);
  if (rec) {
    auto ai = a.share(), bi = b.share(), oi = out.share();
    std::size_t k = ka;
    tape->record([ai, bi, oi, m, k, n, trans_a, trans_b]() {
      const double* dc = oi->grad.data();
      if (!trans_a && !trans_b) {
        if (ai->requires_grad) mm_nt(dc, bi->data.data(), ai->grad.data(), m, n, k);
        if (bi->requires_grad) mm_tn(ai->data.data(), dc, bi->grad.data(), k, m, n);
      } else if (!trans_a && trans_b) {
        // out = a * b^T, a [m x k], b [n x k]
        if (ai->requires_grad) mm_nn(dc, bi->data.data(), ai->grad.data(), m, n, k);
        if (bi->requires_grad) mm_tn(dc, ai->data.data(), bi->grad.data(), n, m, k);
      } else {
        // out = a^T * b, a [k x m], b [k x n]
        if (ai->requires_grad) mm_nt(bi->data.data(), dc, ai->grad.data(), k, n, m);
        if (bi->requires_grad) mm_nn(ai->data.data(), dc, bi->grad.data(), k, m, n);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("add", a, b);
  bool rec = want_grad(tape, {&a, &b});
  Tensor out = make_out(a.shape(), rec);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
  if (rec) {
    auto ai = a.share(), bi = b.share(), oi = out.share();
    tape->record([ai, bi, oi]() {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += oi->grad[i];
        if (bi->requires_grad) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n)
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) +
                                " does not match row width of " + shape_str(x.shape()));
  bool rec = want_grad(tape, {&x, &bias});
  Tensor out = make_out(x.shape(), rec);
  const double* px = x.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  if (rec) {
    auto xi = x.share(), bi = bias.share(), oi = out.share();
    tape->record([xi, bi, oi, m, n]() {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double g = oi->grad[i * n + j];
          if (xi->requires_grad) xi->grad[i * n + j] += g;
          if (bi->requires_grad) bi->grad[j] += g;
        }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c, Tape* tape) {
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out(x.shape(), rec);
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi, c]() {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += c * oi->grad[i];
    });
  }
  return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s, Tape* tape) {
  if (s.size() != 1)
    throw std::invalid_argument("scale_by: scale " + shape_str(s.shape()) + " is not a scalar");
  bool rec = want_grad(tape, {&x, &s});
  Tensor out = make_out(x.shape(), rec);
  double sv = s.data()[0];
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * sv;
  if (rec) {
    auto xi = x.share(), si = s.share(), oi = out.share();
    tape->record([xi, si, oi, sv]() {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        if (xi->requires_grad) xi->grad[i] += sv * oi->grad[i];
        if (si->requires_grad) si->grad[0] += xi->data[i] * oi->grad[i];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out(x.shape(), rec);
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi]() {
      for (std::size_t i = 0; i < oi->grad.size(); ++i)
        if (xi->data[i] > 0.0) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor tanh_t(const Tensor& x, Tape* tape) {
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out(x.shape(), rec);
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi]() {
      for (std::size_t i = 0; i < oi->grad.size(); ++i)
        xi->grad[i] += (1.0 - oi->data[i] * oi->data[i]) * oi->grad[i];
    });
  }
  return out;
}

namespace {

Tensor softmax_impl(const Tensor& x, const std::vector<uint8_t>* mask, Tape* tape) {
  std::size_t m = x.rows(), n = x.cols();
  if (mask && mask->size() != m * n)
    throw std::invalid_argument("softmax: mask has " + std::to_string(mask->size()) +
                                " entries for " + shape_str(x.shape()));
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out(x.shape(), rec);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double* oi = out.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || (*mask)[i * n + j]) mx = std::max(mx, xi[j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::runtime_error("softmax: row " + std::to_string(i) +
                               " has every entry masked out");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask || (*mask)[i * n + j]) {
        oi[j] = std::exp(xi[j] - mx);
        z += oi[j];
      } else {
        oi[j] = 0.0;
      }
    }
    for (std::size_t j = 0; j < n; ++j) oi[j] /= z;
  }
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi, m, n]() {
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = oi->data.data() + i * n;
        const double* dy = oi->grad.data() + i * n;
        double* dx = xi->grad.data() + i * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += dy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - s);
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& x, Tape* tape) { return softmax_impl(x, nullptr, tape); }

Tensor masked_softmax_rows(const Tensor& x, const std::vector<uint8_t>& mask, Tape* tape) {
  return softmax_impl(x, &mask, tape);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps, Tape* tape) {
  std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n)
    throw std::invalid_argument("layer_norm: gamma " + shape_str(gamma.shape()) + ", beta " +
                                shape_str(beta.shape()) + " do not match row width of " +
                                shape_str(x.shape()));
  bool rec = want_grad(tape, {&x, &gamma, &beta});
  Tensor out = make_out(x.shape(), rec);
  std::vector<double> inv(m), mu(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(n);
    mu[i] = mean;
    inv[i] = 1.0 / std::sqrt(var + eps);
    double* oi = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      oi[j] = gamma.data()[j] * (xi[j] - mean) * inv[i] + beta.data()[j];
  }
  if (rec) {
    auto xi = x.share(), gi = gamma.share(), bi = beta.share(), oi = out.share();
    tape->record([xi, gi, bi, oi, m, n, mu, inv]() {
      std::vector<double> t(n);
      for (std::size_t i = 0; i < m; ++i) {
        const double* xr = xi->data.data() + i * n;
        const double* dy = oi->grad.data() + i * n;
        double mt = 0.0, mtx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double xhat = (xr[j] - mu[i]) * inv[i];
          t[j] = gi->data[j] * dy[j];
          mt += t[j];
          mtx += t[j] * xhat;
          if (gi->requires_grad) gi->grad[j] += dy[j] * xhat;
          if (bi->requires_grad) bi->grad[j] += dy[j];
        }
        mt /= static_cast<double>(n);
        mtx /= static_cast<double>(n);
        if (xi->requires_grad) {
          double* dx = xi->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            double xhat = (xr[j] - mu[i]) * inv[i];
            dx[j] += inv[i] * (t[j] - mt - xhat * mtx);
          }
        }
      }
    });
  }
  return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<uint8_t>* mask, Tape* tape) {
  if (q.cols() != k.cols())
    throw std::invalid_argument("attention: query width " + shape_str(q.shape()) +
                                " does not match key width " + shape_str(k.shape()));
  if (k.rows() != v.rows())
    throw std::invalid_argument("attention: key count " + shape_str(k.shape()) +
                                " does not match value count " + shape_str(v.shape()));
  Tensor scores = matmul(q, k, tape, false, true);
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(q.cols())), tape);
  Tensor p = mask ? masked_softmax_rows(scores, *mask, tape) : softmax_rows(scores, tape);
  return matmul(p, v, tape);
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids, Tape* tape) {
  std::size_t v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("embedding_rows: id " + std::to_string(id) +
                              " outside table " + shape_str(table.shape()));
  bool rec = want_grad(tape, {&table});
  Tensor out = make_out({ids.size(), d}, rec);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  if (rec) {
    auto ti = table.share(), oi = out.share();
    tape->record([ti, oi, ids, d]() {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = ti->grad.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = oi->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor row_scatter(const Tensor& x, std::size_t row, const Tensor& v, Tape* tape) {
  std::size_t m = x.rows(), n = x.cols();
  if (row >= m)
    throw std::out_of_range("row_scatter: row " + std::to_string(row) + " outside " +
                            shape_str(x.shape()));
  if (v.size() != n)
    throw std::invalid_argument("row_scatter: row value " + shape_str(v.shape()) +
                                " does not fit " + shape_str(x.shape()));
  bool rec = want_grad(tape, {&x, &v});
  Tensor out = make_out(x.shape(), rec);
  std::copy_n(x.data(), m * n, out.data());
  std::copy_n(v.data(), n, out.data() + row * n);
  if (rec) {
    auto xi = x.share(), vi = v.share(), oi = out.share();
    tape->record([xi, vi, oi, row, m, n]() {
      for (std::size_t i = 0; i < m; ++i) {
        const double* dy = oi->grad.data() + i * n;
        if (i == row) {
          if (vi->requires_grad)
            for (std::size_t j = 0; j < n; ++j) vi->grad[j] += dy[j];
        } else if (xi->requires_grad) {
          double* dx = xi->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) dx[j] += dy[j];
        }
      }
    });
  }
  return out;
}

Tensor add_row_select(const Tensor& x, const std::vector<int>& select,
                      const Tensor& pe_rows, Tape* tape) {
  std::size_t m = x.rows(), n = x.cols();
  std::size_t p = pe_rows.rows();
  if (select.size() != m)
    throw std::invalid_argument("add_row_select: " + std::to_string(select.size()) +
                                " row selectors for " + shape_str(x.shape()));
  if (pe_rows.cols() != n)
    throw std::invalid_argument("add_row_select: rows " + shape_str(pe_rows.shape()) +
                                " do not match " + shape_str(x.shape()));
  for (int s : select)
    if (s >= static_cast<int>(p))
      throw std::out_of_range("add_row_select: selector " + std::to_string(s) +
                              " outside " + shape_str(pe_rows.shape()));
  bool rec = want_grad(tape, {&x, &pe_rows});
  Tensor out = make_out(x.shape(), rec);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data() + i * n;
    double* or_ = out.data() + i * n;
    if (select[i] >= 0) {
      const double* pr = pe_rows.data() + static_cast<std::size_t>(select[i]) * n;
      for (std::size_t j = 0; j < n; ++j) or_[j] = xr[j] + pr[j];
    } else {
      std::copy_n(xr, n, or_);
    }
  }
  if (rec) {
    auto xi = x.share(), pi = pe_rows.share(), oi = out.share();
    tape->record([xi, pi, oi, select, m, n]() {
      for (std::size_t i = 0; i < m; ++i) {
        const double* dy = oi->grad.data() + i * n;
        if (xi->requires_grad) {
          double* dx = xi->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) dx[j] += dy[j];
        }
        if (select[i] >= 0 && pi->requires_grad) {
          double* dp = pi->grad.data() + static_cast<std::size_t>(select[i]) * n;
          for (std::size_t j = 0; j < n; ++j) dp[j] += dy[j];
        }
      }
    });
  }
  return out;
}

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows, Tape* tape) {
  std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r : rows)
    if (r >= m)
      throw std::out_of_range("take_rows: row " + std::to_string(r) + " outside " +
                              shape_str(x.shape()));
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out({rows.size(), n}, rec);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * n, n, out.data() + i * n);
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi, rows, n]() {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = xi->grad.data() + rows[i] * n;
        const double* src = oi->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t lo, std::size_t n, Tape* tape) {
  std::size_t m = x.rows(), w = x.cols();
  if (lo + n > w)
    throw std::out_of_range("slice_cols: columns [" + std::to_string(lo) + ", " +
                            std::to_string(lo + n) + ") outside " + shape_str(x.shape()));
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out({m, n}, rec);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data() + i * w + lo, n, out.data() + i * n);
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi, m, n, w, lo]() {
      for (std::size_t i = 0; i < m; ++i) {
        double* dst = xi->grad.data() + i * w + lo;
        const double* src = oi->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
  std::size_t n = parts[0].cols(), m = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n)
      throw std::invalid_argument("concat_rows: width " + shape_str(p.shape()) +
                                  " does not match " + shape_str(parts[0].shape()));
    m += p.rows();
  }
  bool rec = false;
  for (const Tensor& p : parts) rec = rec || want_grad(tape, {&p});
  Tensor out = make_out({m, n}, rec);
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data(), p.rows() * n, out.data() + at * n);
    at += p.rows();
  }
  if (rec) {
    std::vector<std::shared_ptr<TensorImpl>> pis;
    std::vector<std::size_t> prows;
    for (const Tensor& p : parts) {
      pis.push_back(p.share());
      prows.push_back(p.rows());
    }
    auto oi = out.share();
    tape->record([pis, prows, oi, n]() {
      std::size_t at = 0;
      for (std::size_t k = 0; k < pis.size(); ++k) {
        if (pis[k]->requires_grad) {
          const double* src = oi->grad.data() + at * n;
          for (std::size_t j = 0; j < prows[k] * n; ++j) pis[k]->grad[j] += src[j];
        }
        at += prows[k];
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
  std::size_t m = parts[0].rows(), n = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m)
      throw std::invalid_argument("concat_cols: height " + shape_str(p.shape()) +
                                  " does not match " + shape_str(parts[0].shape()));
    n += p.cols();
  }
  bool rec = false;
  for (const Tensor& p : parts) rec = rec || want_grad(tape, {&p});
  Tensor out = make_out({m, n}, rec);
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data() + i * w, w, out.data() + i * n + at);
    at += w;
  }
  if (rec) {
    std::vector<std::shared_ptr<TensorImpl>> pis;
    std::vector<std::size_t> pcols;
    for (const Tensor& p : parts) {
      pis.push_back(p.share());
      pcols.push_back(p.cols());
    }
    auto oi = out.share();
    tape->record([pis, pcols, oi, m, n]() {
      std::size_t at = 0;
      for (std::size_t k = 0; k < pis.size(); ++k) {
        std::size_t w = pcols[k];
        if (pis[k]->requires_grad) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* src = oi->grad.data() + i * n + at;
            double* dst = pis[k]->grad.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        at += w;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
  bool rec = want_grad(tape, {&x});
  Tensor out = make_out({}, rec);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  out.data()[0] = s;
  if (rec) {
    auto xi = x.share(), oi = out.share();
    tape->record([xi, oi]() {
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[0];
    });
  }
  return out;
}

Tensor mean_cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tape* tape) {
  std::size_t m = logits.rows(), v = logits.cols();
  if (m == 0 || targets.size() != m)
    throw std::invalid_argument("mean_cross_entropy: " + std::to_string(targets.size()) +
                                " targets for logits " + shape_str(logits.shape()));
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw std::out_of_range("mean_cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(v));
  bool rec = want_grad(tape, {&logits});
  Tensor out = make_out({}, rec);
  std::vector<double> lse(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* li = logits.data() + i * v;
    double mx = li[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, li[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(li[j] - mx);
    lse[i] = mx + std::log(z);
    total += lse[i] - li[targets[i]];
  }
  out.data()[0] = total / static_cast<double>(m);
  if (rec) {
    auto li = logits.share(), oi = out.share();
    tape->record([li, oi, targets, m, v, lse]() {
      double g = oi->grad[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double* lr = li->data.data() + i * v;
        double* dl = li->grad.data() + i * v;
        for (std::size_t j = 0; j < v; ++j)
          dl[j] += g * std::exp(lr[j] - lse[i]);
        dl[targets[i]] -= g;
      }
    });
  }
  return out;
}

}  // namespace mmgl
