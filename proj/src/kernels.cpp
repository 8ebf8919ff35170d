#include "moeleak/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "moeleak/errors.hpp"

namespace moeleak::kernels {

void matvec(std::span<const double> x, const Matrix& w, std::span<double> out) {
  const std::size_t n = w.cols();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const auto wr = w.row(i);
    for (std::size_t j = 0; j < n; ++j) out[j] += xi * wr[j];
  }
}

void rmsnorm(std::span<const double> x, std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

void attend(std::span<const double> query, const Matrix& keys, const Matrix& values,
            std::size_t first, std::size_t count, std::span<double> out) {
  thread_local std::vector<double> scores;
  scores.resize(count);
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  for (std::size_t j = 0; j < count; ++j) {
    const auto kr = keys.row(first + j);
    double s = 0.0;
    for (std::size_t c = 0; c < query.size(); ++c) s += query[c] * kr[c];
    scores[j] = s * scale;
  }
  softmax_inplace(scores);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < count; ++j) {
    const auto vr = values.row(first + j);
    const double w = scores[j];
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * vr[c];
  }
}

void ffn(std::span<const double> x, const Matrix& w1, const Matrix& w2, std::span<double> hidden,
         std::span<double> out) {
  matvec(x, w1, hidden);
  for (double& h : hidden) h = h > 0.0 ? h : 0.0;
  matvec(hidden, w2, out);
}

namespace {

void check_matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
  if (out.rows() != a.rows() || out.cols() != b.cols()) out = Matrix(a.rows(), b.cols());
}

}  // namespace

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, out);
  for (std::size_t r = 0; r < a.rows(); ++r) matvec(a.row(r), b, out.row(r));
}

void rmsnorm_rows(const Matrix& in, Matrix& out) {
  if (out.rows() != in.rows() || out.cols() != in.cols()) out = Matrix(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) rmsnorm(in.row(r), out.row(r));
}

void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t sequences,
                      std::size_t length, Matrix& out) {
  if (out.rows() != q.rows() || out.cols() != v.cols()) out = Matrix(q.rows(), v.cols());
  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t row = s * length + t;
      attend(q.row(row), k, v, s * length, t + 1, out.row(row));
    }
  }
}

void ffn_rows(const Matrix& in, std::span<const std::size_t> rows, const Matrix& w1,
              const Matrix& w2, Matrix& out) {
  if (out.rows() != rows.size() || out.cols() != w2.cols()) out = Matrix(rows.size(), w2.cols());
  std::vector<double> hidden(w1.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) ffn(in.row(rows[r]), w1, w2, hidden, out.row(r));
}

}  // namespace serial

namespace parallel {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, out);
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    matvec(a.row(static_cast<std::size_t>(r)), b, out.row(static_cast<std::size_t>(r)));
  }
}

void rmsnorm_rows(const Matrix& in, Matrix& out) {
  if (out.rows() != in.rows() || out.cols() != in.cols()) out = Matrix(in.rows(), in.cols());
  const auto n = static_cast<std::ptrdiff_t>(in.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    rmsnorm(in.row(static_cast<std::size_t>(r)), out.row(static_cast<std::size_t>(r)));
  }
}

void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t sequences,
                      std::size_t length, Matrix& out) {
  if (out.rows() != q.rows() || out.cols() != v.cols()) out = Matrix(q.rows(), v.cols());
  const auto total = static_cast<std::ptrdiff_t>(sequences * length);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    const auto row = static_cast<std::size_t>(i);
    const std::size_t s = row / length;
    const std::size_t t = row % length;
    attend(q.row(row), k, v, s * length, t + 1, out.row(row));
  }
}

void ffn_rows(const Matrix& in, std::span<const std::size_t> rows, const Matrix& w1,
              const Matrix& w2, Matrix& out) {
  if (out.rows() != rows.size() || out.cols() != w2.cols()) out = Matrix(rows.size(), w2.cols());
  const auto n = static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel
  {
    std::vector<double> hidden(w1.cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r) {
      const auto i = static_cast<std::size_t>(r);
      ffn(in.row(rows[i]), w1, w2, hidden, out.row(i));
    }
  }
}

}  // namespace parallel

#ifdef MOELEAK_HAVE_OPENMP
namespace impl = parallel;
#else
namespace impl = serial;
#endif

void matmul(const Matrix& a, const Matrix& b, Matrix& out) { impl::matmul(a, b, out); }
void rmsnorm_rows(const Matrix& in, Matrix& out) { impl::rmsnorm_rows(in, out); }
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t sequences,
                      std::size_t length, Matrix& out) {
  impl::causal_attention(q, k, v, sequences, length, out);
}
void ffn_rows(const Matrix& in, std::span<const std::size_t> rows, const Matrix& w1,
              const Matrix& w2, Matrix& out) {
  impl::ffn_rows(in, rows, w1, w2, out);
}

bool parallel_enabled() noexcept {
#ifdef MOELEAK_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace moeleak::kernels
