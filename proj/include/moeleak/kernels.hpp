#pragma once

// Dense kernels used by the forward pass. Every batched kernel is built from
// the single-row primitives below, so a token processed alone (prefix cache,
// forced routing) is bit-identical to the same token inside a batch.
//
// `serial` is the reference implementation. `parallel` splits the outer row
// loop across OpenMP threads and performs no cross-thread reductions, so it
// returns exactly the same bits. The unqualified entry points dispatch to
// `parallel` when the library is built with OpenMP.

#include <cstddef>
#include <span>

#include "moeleak/numerics.hpp"

namespace moeleak::kernels {

// out[j] = sum_i x[i] * w(i, j)
void matvec(std::span<const double> x, const Matrix& w, std::span<double> out);

// Root-mean-square normalisation without learned gain.
void rmsnorm(std::span<const double> x, std::span<double> out);

// Scaled dot-product attention of one query against keys/values rows
// [first, first + count) of `keys` / `values`.
void attend(std::span<const double> query, const Matrix& keys, const Matrix& values,
            std::size_t first, std::size_t count, std::span<double> out);

// Two-layer ReLU feed-forward: out = relu(x * w1) * w2. `hidden` is scratch
// of size w1.cols().
void ffn(std::span<const double> x, const Matrix& w1, const Matrix& w2, std::span<double> hidden,
         std::span<double> out);

namespace serial {
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void rmsnorm_rows(const Matrix& in, Matrix& out);
// Causal self-attention over `sequences` blocks of `length` rows each.
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t sequences,
                      std::size_t length, Matrix& out);
// out.row(r) = ffn(in.row(rows[r]))
void ffn_rows(const Matrix& in, std::span<const std::size_t> rows, const Matrix& w1,
              const Matrix& w2, Matrix& out);
}  // namespace serial

namespace parallel {
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void rmsnorm_rows(const Matrix& in, Matrix& out);
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t sequences,
                      std::size_t length, Matrix& out);
void ffn_rows(const Matrix& in, std::span<const std::size_t> rows, const Matrix& w1,
              const Matrix& w2, Matrix& out);
}  // namespace parallel

void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void rmsnorm_rows(const Matrix& in, Matrix& out);
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t sequences,
                      std::size_t length, Matrix& out);
void ffn_rows(const Matrix& in, std::span<const std::size_t> rows, const Matrix& w1,
              const Matrix& w2, Matrix& out);

/// True when the dispatching entry points run the OpenMP kernels.
bool parallel_enabled() noexcept;

}  // namespace moeleak::kernels
