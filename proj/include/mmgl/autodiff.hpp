#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mmgl/tensor.hpp"

namespace mmgl {

// Reverse-mode tape. Ops append their backward closure as they execute, so
// the record is already in topological order; backward_all replays it once,
// in reverse. Gradients accumulate into the grad buffers; the caller zeroes
// them between steps.
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return ops_.size(); }
  void replay_backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape. The loss must be scalar.
void backward_all(const Tensor& loss, Tape& tape);

// ---- ops -------------------------------------------------------------
// Every op takes the tape last; passing nullptr computes the forward value
// without recording (inference). Outputs carry a grad buffer exactly when
// they were recorded.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape,
              bool trans_a = false, bool trans_b = false);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape);
Tensor scale(const Tensor& x, double c, Tape* tape);
// Multiplies every entry of x by the scalar tensor s.
Tensor scale_by(const Tensor& x, const Tensor& s, Tape* tape);
Tensor relu(const Tensor& x, Tape* tape);
Tensor tanh_t(const Tensor& x, Tape* tape);
Tensor softmax_rows(const Tensor& x, Tape* tape);
// mask is row-major [rows x cols], nonzero = allowed. A row with no allowed
// entry is an error.
Tensor masked_softmax_rows(const Tensor& x, const std::vector<uint8_t>& mask, Tape* tape);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps, Tape* tape);
// softmax(q k^T / sqrt(d) + mask) v. mask may be nullptr (all allowed);
// otherwise [Tq x Tk], nonzero = allowed, and every query row must keep at
// least one allowed key.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<uint8_t>* mask, Tape* tape);
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids, Tape* tape);
// Copy of x with one row replaced by v; no gradient flows to the replaced row.
Tensor row_scatter(const Tensor& x, std::size_t row, const Tensor& v, Tape* tape);
// Adds select[r] >= 0 ? pe_rows[select[r]] : 0 to each row r of x.
Tensor add_row_select(const Tensor& x, const std::vector<int>& select,
                      const Tensor& pe_rows, Tape* tape);
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows, Tape* tape);
Tensor slice_cols(const Tensor& x, std::size_t lo, std::size_t n, Tape* tape);
Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape);
Tensor sum_all(const Tensor& x, Tape* tape);
// Mean over rows of (logsumexp(row) - row[target]). targets.size() == rows.
Tensor mean_cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tape* tape);

}  // namespace mmgl
