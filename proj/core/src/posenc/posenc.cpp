// SPDX-License-Identifier: Apache-2.0
#include "bipete/posenc.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace bipete::posenc {
namespace {

void require_even(std::size_t d, const char* what) {
  if (d == 0 || d % 2 != 0) {
    throw ConfigError(std::string(what) + " must be even and positive, got " + std::to_string(d));
  }
}

// Precomputed (cos, sin) for every row and pair index.
template <typename T>
void rotation_tables(std::span<const int> positions, std::size_t head_dim, double base,
                     std::vector<T>& cos_t, std::vector<T>& sin_t) {
  const std::size_t pairs = head_dim / 2;
  cos_t.resize(positions.size() * pairs);
  sin_t.resize(positions.size() * pairs);
  std::vector<double> theta(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    theta[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
  }
  for (std::size_t t = 0; t < positions.size(); ++t) {
    for (std::size_t i = 0; i < pairs; ++i) {
      const double angle = static_cast<double>(positions[t]) * theta[i];
      cos_t[t * pairs + i] = static_cast<T>(std::cos(angle));
      sin_t[t * pairs + i] = static_cast<T>(std::sin(angle));
    }
  }
}

// Rotates rows of width `width` made of consecutive heads of `head_dim`.
// sign = -1 applies the inverse rotation.
template <typename T>
void rotate_rows(std::span<const T> in, std::span<T> out, std::size_t rows, std::size_t width,
                 std::size_t head_dim, const std::vector<T>& cos_t, const std::vector<T>& sin_t,
                 T sign) {
  const std::size_t pairs = head_dim / 2;
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t h = 0; h < width / head_dim; ++h) {
      const std::size_t base_idx = t * width + h * head_dim;
      for (std::size_t i = 0; i < pairs; ++i) {
        const T c = cos_t[t * pairs + i];
        const T s = sign * sin_t[t * pairs + i];
        const T a = in[base_idx + 2 * i];
        const T b = in[base_idx + 2 * i + 1];
        out[base_idx + 2 * i] = a * c - b * s;
        out[base_idx + 2 * i + 1] = a * s + b * c;
      }
    }
  }
}

}  // namespace

template <typename T>
num::Tensor<T> spe_table(std::size_t max_pos, std::size_t d_model, double base) {
  require_even(d_model, "d_model");
  std::vector<T> data(max_pos * d_model);
  for (std::size_t p = 0; p < max_pos; ++p) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double freq =
          std::pow(base, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      const double x = static_cast<double>(p) / freq;
      data[p * d_model + 2 * i] = static_cast<T>(std::sin(x));
      data[p * d_model + 2 * i + 1] = static_cast<T>(std::cos(x));
    }
  }
  return num::Tensor<T>({max_pos, d_model}, std::move(data));
}

template <typename T>
num::Tensor<T> add_visit_embedding(const num::Tensor<T>& tok_emb, std::span<const int> visits,
                                   std::size_t max_pos, double base) {
  if (tok_emb.rank() != 2 || tok_emb.dim(0) != visits.size()) {
    throw ShapeError("token embeddings " + num::shape_str(tok_emb.shape()) + " vs " +
                     std::to_string(visits.size()) + " visit indices");
  }
  const std::size_t d = tok_emb.dim(1);
  const auto table = spe_table<T>(max_pos, d, base);
  std::vector<T> out(tok_emb.vec());
  for (std::size_t t = 0; t < visits.size(); ++t) {
    if (visits[t] < 0 || static_cast<std::size_t>(visits[t]) >= max_pos) {
      throw RangeError("visit index " + std::to_string(visits[t]) + " outside [0, " +
                       std::to_string(max_pos) + ")");
    }
    const auto row = static_cast<std::size_t>(visits[t]) * d;
    for (std::size_t j = 0; j < d; ++j) out[t * d + j] += table[row + j];
  }
  return num::Tensor<T>(tok_emb.shape(), std::move(out));
}

template <typename T>
num::Tensor<T> rope_rotate(const num::Tensor<T>& qk, std::span<const int> positions, double base) {
  if (qk.rank() != 2 || qk.dim(0) != positions.size()) {
    throw ShapeError("rope input " + num::shape_str(qk.shape()) + " vs " +
                     std::to_string(positions.size()) + " positions");
  }
  const std::size_t d = qk.dim(1);
  require_even(d, "d_head");
  std::vector<T> cos_t, sin_t;
  rotation_tables(positions, d, base, cos_t, sin_t);
  std::vector<T> out(qk.numel());
  rotate_rows<T>(qk.data(), out, positions.size(), d, d, cos_t, sin_t, T(1));
  return num::Tensor<T>(qk.shape(), std::move(out));
}

template <typename T>
num::Var rope(num::Graph<T>& g, num::Var x, std::span<const int> positions, std::size_t head_dim,
              double base) {
  const auto& s = g.shape(x);
  require_even(head_dim, "head_dim");
  if (s.empty() || s.back() % head_dim != 0) {
    throw ShapeError("rope width " + num::shape_str(s) + " not a multiple of head_dim");
  }
  const std::size_t width = s.back();
  const std::size_t rows = num::shape_numel(s) / width;
  if (rows != positions.size()) {
    throw ShapeError("rope rows " + std::to_string(rows) + " vs " +
                     std::to_string(positions.size()) + " positions");
  }
  std::vector<T> cos_t, sin_t;
  rotation_tables(positions, head_dim, base, cos_t, sin_t);
  std::vector<T> out(rows * width);
  rotate_rows<T>(g.value(x).data(), out, rows, width, head_dim, cos_t, sin_t, T(1));
  return g.custom(num::Tensor<T>(s, std::move(out)), {x},
                  [x, rows, width, head_dim, cos_t = std::move(cos_t),
                   sin_t = std::move(sin_t)](num::Graph<T>& gr, std::span<const T> d) {
                    std::vector<T> back(d.size());
                    rotate_rows<T>(d, back, rows, width, head_dim, cos_t, sin_t, T(-1));
                    gr.accumulate_grad(x, back);
                  });
}

#define BIPETE_POSENC_INSTANTIATE(T)                                                              \
  template num::Tensor<T> spe_table<T>(std::size_t, std::size_t, double);                         \
  template num::Tensor<T> add_visit_embedding<T>(const num::Tensor<T>&, std::span<const int>,     \
                                                 std::size_t, double);                            \
  template num::Tensor<T> rope_rotate<T>(const num::Tensor<T>&, std::span<const int>, double);    \
  template num::Var rope<T>(num::Graph<T>&, num::Var, std::span<const int>, std::size_t, double);

BIPETE_POSENC_INSTANTIATE(float)
BIPETE_POSENC_INSTANTIATE(double)

}  // namespace bipete::posenc
