#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gradcheck.hpp"
#include "vtlab/attention/attention.hpp"

namespace vtlab::testing {

inline LinearParams random_linear(std::int64_t in, std::int64_t out, std::uint64_t seed, std::uint64_t stream) {
  return {scale(random_tensor({in, out}, seed, stream), 1.0 / std::sqrt(static_cast<double>(in))),
          scale(random_tensor({out}, seed, stream + 1000), 0.1)};
}

inline AttentionParams random_attention(std::int64_t dim, std::int64_t heads, std::uint64_t seed,
                                        std::int64_t dim_out = -1) {
  if (dim_out < 0) dim_out = dim;
  return {heads, random_linear(dim, 3 * dim_out, seed, 1), random_linear(dim_out, dim_out, seed, 2)};
}

inline NormParams random_norm(std::int64_t dim, std::uint64_t seed, std::uint64_t stream) {
  return {add_scalar(scale(random_tensor({dim}, seed, stream), 0.1), 1.0),
          scale(random_tensor({dim}, seed, stream + 1), 0.1)};
}

inline EncoderBlockParams random_block(std::int64_t dim, std::int64_t heads, std::uint64_t seed) {
  return {random_norm(dim, seed, 10), random_attention(dim, heads, seed), random_norm(dim, seed, 20),
          MlpParams{random_linear(dim, 2 * dim, seed, 30), random_linear(2 * dim, dim, seed, 40)}};
}

// Reference attention on plain vectors: rows are tokens, `bias(h, i, j)`
// is added to the scaled scores of head h.
using Matrix = std::vector<std::vector<double>>;

inline Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                              const std::function<double(int, int, int)>& bias) {
  const int Lq = static_cast<int>(q.size());
  const int Lk = static_cast<int>(k.size());
  const int D = static_cast<int>(q[0].size());
  const int dh = D / heads;
  Matrix out(Lq, std::vector<double>(D, 0.0));
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < Lq; ++i) {
      std::vector<double> s(Lk);
      double mx = -1e300;
      for (int j = 0; j < Lk; ++j) {
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh)) + (bias ? bias(h, i, j) : 0.0);
        mx = std::max(mx, s[j]);
      }
      double total = 0;
      for (double& x : s) total += (x = std::exp(x - mx));
      for (int j = 0; j < Lk; ++j)
        for (int c = 0; c < dh; ++c) out[i][h * dh + c] += s[j] / total * v[j][h * dh + c];
    }
  }
  return out;
}

inline Matrix naive_linear(const Matrix& x, const LinearParams& p) {
  const auto in = p.weight.dim(0), outf = p.weight.dim(1);
  Matrix y(x.size(), std::vector<double>(outf));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::int64_t o = 0; o < outf; ++o) {
      double acc = p.bias.defined() ? p.bias.value(o) : 0.0;
      for (std::int64_t i = 0; i < in; ++i) acc += x[r][i] * p.weight.value(i * outf + o);
      y[r][o] = acc;
    }
  return y;
}

inline Matrix rows_of(const Tensor& t, std::int64_t first, std::int64_t count) {
  const auto D = t.dim(-1);
  Matrix m(count, std::vector<double>(D));
  for (std::int64_t r = 0; r < count; ++r)
    for (std::int64_t c = 0; c < D; ++c) m[r][c] = t.value((first + r) * D + c);
  return m;
}

inline Matrix columns(const Matrix& m, std::int64_t start, std::int64_t count) {
  Matrix out(m.size(), std::vector<double>(count));
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::int64_t c = 0; c < count; ++c) out[r][c] = m[r][start + c];
  return out;
}

}  // namespace vtlab::testing
