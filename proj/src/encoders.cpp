#include "empl/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "empl/errors.hpp"
#include "empl/rng.hpp"

namespace empl {

namespace {

void append(Vec& out, std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); }

std::size_t take(std::span<const double> flat, std::size_t pos, std::span<double> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = flat[pos + i];
  return pos + dst.size();
}

// Token vector fed to pool_map for a prompt built from `contexts` and v(c).
Vec pooled_tokens(PoolMode pool, const Matrix& contexts, std::span<const double> word) {
  const std::size_t m = contexts.rows;
  const std::size_t d_tok = contexts.cols;
  if (word.size() != d_tok) {
    throw InvalidConfigError("class token has dimension " + std::to_string(word.size()) +
                             ", contexts have " + std::to_string(d_tok));
  }
  if (pool == PoolMode::mean) {
    // Summed in sorted order so the result is bitwise invariant to slot order.
    Vec t(d_tok, 0.0);
    Vec column(m + 1);
    const double inv = 1.0 / static_cast<double>(m + 1);
    for (std::size_t i = 0; i < d_tok; ++i) {
      for (std::size_t j = 0; j < m; ++j) column[j] = contexts(j, i);
      column[m] = word[i];
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      t[i] = sum * inv;
    }
    return t;
  }
  Vec t;
  t.reserve((m + 1) * d_tok);
  append(t, contexts.data);
  append(t, word);
  return t;
}

Vec prompt_from_tokens(const ModelParams& params, std::span<const double> tokens) {
  Vec h = matvec(params.pool_map, tokens);
  axpy(1.0, params.pool_bias, h);
  if (!params.extra.empty()) {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] *= params.extra[i];
  }
  return h;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<VocabEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].class_id != i) {
      throw InvalidConfigError("vocabulary class ids must be dense from 0; entry " +
                               std::to_string(i) + " has id " +
                               std::to_string(entries_[i].class_id));
    }
    if (entries_[i].word_vec.size() != entries_[0].word_vec.size()) {
      throw InvalidConfigError("vocabulary word vectors have inconsistent dimensions");
    }
    if (!all_finite(entries_[i].word_vec)) {
      throw InvalidConfigError("vocabulary word vector for class " + std::to_string(i) +
                               " is not finite");
    }
  }
}

const VocabEntry& Vocabulary::at(ClassId id) const {
  if (!contains(id)) throw UnknownClassError(id);
  return entries_[id];
}

ModelDims ModelParams::dims() const {
  ModelDims d;
  d.d_in = image_map.cols;
  d.d = image_map.rows;
  d.d_tok = contexts.cols;
  d.m = contexts.rows;
  d.pool = pool;
  d.prompt_gain = !extra.empty();
  return d;
}

std::size_t ModelParams::flat_size() const {
  return image_map.data.size() + image_bias.size() + pool_map.data.size() + pool_bias.size() +
         contexts.data.size() + word_vecs.data.size() + extra.size();
}

Vec ModelParams::flatten() const {
  Vec out;
  out.reserve(flat_size());
  append(out, image_map.data);
  append(out, image_bias);
  append(out, pool_map.data);
  append(out, pool_bias);
  append(out, contexts.data);
  append(out, word_vecs.data);
  append(out, extra);
  return out;
}

void ModelParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != flat_size()) throw InvalidConfigError("flat parameter vector has wrong size");
  std::size_t pos = 0;
  pos = take(flat, pos, image_map.data);
  pos = take(flat, pos, image_bias);
  pos = take(flat, pos, pool_map.data);
  pos = take(flat, pos, pool_bias);
  pos = take(flat, pos, contexts.data);
  pos = take(flat, pos, word_vecs.data);
  take(flat, pos, extra);
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  Vec zeros(flat_size(), 0.0);
  z.assign_flat(zeros);
  return z;
}

void ModelParams::validate() const {
  const ModelDims d = dims();
  if (d.d == 0 || d.d_in == 0 || d.d_tok == 0 || d.m == 0) {
    throw InvalidConfigError("model dimensions must be positive");
  }
  if (image_bias.size() != d.d || pool_map.rows != d.d || pool_bias.size() != d.d ||
      pool_map.cols != d.pool_in() || word_vecs.cols != d.d_tok ||
      (!extra.empty() && extra.size() != d.d)) {
    throw InvalidConfigError("model parameter shapes are inconsistent");
  }
  if (!all_finite(flatten())) throw InvalidConfigError("model parameters are not finite");
}

Vec encode_image(const ModelParams& params, std::span<const double> x_in) {
  if (x_in.size() != params.image_map.cols) {
    throw InvalidConfigError("image input has dimension " + std::to_string(x_in.size()) +
                             ", model expects " + std::to_string(params.image_map.cols));
  }
  Vec f = matvec(params.image_map, x_in);
  axpy(1.0, params.image_bias, f);
  return f;
}

Vec encode_prompt(const ModelParams& params, const PromptTemplate& tmpl, const Vocabulary& vocab) {
  if (!vocab.contains(tmpl.class_id) || tmpl.class_id >= params.word_vecs.rows) {
    throw UnknownClassError(tmpl.class_id);
  }
  const Vec tokens = pooled_tokens(params.pool, tmpl.contexts, params.word_vecs.row(tmpl.class_id));
  if (tokens.size() != params.pool_map.cols) {
    throw InvalidConfigError("prompt template does not match pool_map width");
  }
  return prompt_from_tokens(params, tokens);
}

Vec encode_class(const ModelParams& params, const Vocabulary& vocab, ClassId class_id) {
  return encode_prompt(params, PromptTemplate{params.contexts, class_id}, vocab);
}

ModelParams param_grads(const ModelParams& params, const EmbeddingGrads& upstream) {
  ModelParams g = params.zeros_like();
  const std::size_t d = params.image_map.rows;

  for (const auto& term : upstream.images) {
    if (term.grad.size() != d || term.x_in.size() != params.image_map.cols) {
      throw InvalidConfigError("image gradient term has the wrong shape");
    }
    add_outer(g.image_map, 1.0, term.grad, term.x_in);
    axpy(1.0, term.grad, g.image_bias);
  }

  const std::size_t m = params.contexts.rows;
  const std::size_t d_tok = params.contexts.cols;
  for (const auto& term : upstream.prompts) {
    if (term.grad.size() != d) throw InvalidConfigError("prompt gradient term has the wrong shape");
    if (term.class_id >= params.word_vecs.rows) throw UnknownClassError(term.class_id);
    const Vec tokens = pooled_tokens(params.pool, params.contexts, params.word_vecs.row(term.class_id));

    // Through the optional gain: h = gain * e.
    Vec grad_e = term.grad;
    if (!params.extra.empty()) {
      const Vec e = [&] {
        Vec v = matvec(params.pool_map, tokens);
        axpy(1.0, params.pool_bias, v);
        return v;
      }();
      for (std::size_t i = 0; i < d; ++i) {
        g.extra[i] += term.grad[i] * e[i];
        grad_e[i] = term.grad[i] * params.extra[i];
      }
    }
    add_outer(g.pool_map, 1.0, grad_e, tokens);
    axpy(1.0, grad_e, g.pool_bias);

    const Vec grad_tokens = matvec_transposed(params.pool_map, grad_e);
    auto word_row = g.word_vecs.row(term.class_id);
    if (params.pool == PoolMode::mean) {
      const double inv = 1.0 / static_cast<double>(m + 1);
      for (std::size_t j = 0; j < m; ++j) axpy(inv, grad_tokens, g.contexts.row(j));
      axpy(inv, grad_tokens, word_row);
    } else {
      for (std::size_t j = 0; j < m; ++j) {
        axpy(1.0, std::span<const double>(grad_tokens).subspan(j * d_tok, d_tok), g.contexts.row(j));
      }
      axpy(1.0, std::span<const double>(grad_tokens).subspan(m * d_tok, d_tok), word_row);
    }
  }
  return g;
}

ModelParams init_params(std::uint64_t seed, const ModelDims& dims, double scale,
                        const Vocabulary& vocab) {
  if (dims.d == 0 || dims.d_in == 0 || dims.d_tok == 0 || dims.m == 0) {
    throw InvalidConfigError("model dimensions must be positive");
  }
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw InvalidConfigError("init scale must be >= 0");
  if (vocab.size() == 0 || vocab.word_dim() != dims.d_tok) {
    throw InvalidConfigError("vocabulary word dimension " + std::to_string(vocab.word_dim()) +
                             " does not match d_tok " + std::to_string(dims.d_tok));
  }
  Rng rng(seed);
  auto fill = [&](Matrix& mat, std::size_t fan_in) {
    const double std_dev = scale / std::sqrt(static_cast<double>(fan_in));
    for (double& v : mat.data) v = std_dev * rng.normal();
  };

  ModelParams p;
  p.pool = dims.pool;
  p.image_map = Matrix(dims.d, dims.d_in);
  p.image_bias = Vec(dims.d, 0.0);
  p.pool_map = Matrix(dims.d, dims.pool_in());
  p.pool_bias = Vec(dims.d, 0.0);
  p.contexts = Matrix(dims.m, dims.d_tok);
  fill(p.image_map, dims.d_in);
  fill(p.pool_map, dims.pool_in());
  fill(p.contexts, dims.d_tok);
  p.word_vecs = Matrix(vocab.size(), dims.d_tok);
  for (const auto& e : vocab.entries()) {
    auto row = p.word_vecs.row(e.class_id);
    std::copy(e.word_vec.begin(), e.word_vec.end(), row.begin());
  }
  if (dims.prompt_gain) p.extra = Vec(dims.d, 1.0);
  return p;
}

}  // namespace empl
