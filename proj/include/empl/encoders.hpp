#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "empl/numeric.hpp"

namespace empl {

using ClassId = std::uint32_t;

// How the m context tokens and the class token are reduced before pool_map.
enum class PoolMode : std::uint32_t {
  mean = 0,    // average of the m+1 token vectors; pool_map is d x d_tok
  concat = 1,  // stacked token vectors; pool_map is d x (m+1)*d_tok
};

struct VocabEntry {
  ClassId class_id;
  std::string name;
  Vec word_vec;

  friend bool operator==(const VocabEntry&, const VocabEntry&) = default;
};

// Class names available to the model. Ids are dense from 0 and equal to the
// entry index.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<VocabEntry> entries);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t word_dim() const noexcept { return entries_.empty() ? 0 : entries_[0].word_vec.size(); }
  bool contains(ClassId id) const noexcept { return id < entries_.size(); }
  const VocabEntry& at(ClassId id) const;
  const std::vector<VocabEntry>& entries() const noexcept { return entries_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<VocabEntry> entries_;
};

struct ModelDims {
  std::size_t d_in = 0;   // raw input dimension
  std::size_t d = 0;      // shared embedding dimension
  std::size_t d_tok = 0;  // token / word-vector dimension
  std::size_t m = 4;      // learnable context slots
  PoolMode pool = PoolMode::mean;
  bool prompt_gain = false;  // learnable per-dimension gain on prompt embeddings

  std::size_t pool_in() const noexcept { return pool == PoolMode::mean ? d_tok : (m + 1) * d_tok; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Learnable parameters phi = {theta, v}.
//   f(x)  = image_map x + image_bias
//   h(c)  = gain * (pool_map pool(v_1..v_m, v(c)) + pool_bias)
// word_vecs holds the learnable class tokens v(c), one row per vocabulary
// entry, seeded from the vocabulary. `extra` is the optional gain block
// (empty when disabled).
struct ModelParams {
  Matrix image_map;
  Vec image_bias;
  Matrix pool_map;
  Vec pool_bias;
  Matrix contexts;
  Matrix word_vecs;
  Vec extra;
  PoolMode pool = PoolMode::mean;

  ModelDims dims() const;
  std::size_t n_classes() const noexcept { return word_vecs.rows; }

  std::size_t flat_size() const;
  Vec flatten() const;
  // Overwrites every entry from `flat` (same order as flatten()).
  void assign_flat(std::span<const double> flat);
  ModelParams zeros_like() const;
  // Throws InvalidConfigError on inconsistent shapes or non-finite entries.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct PromptTemplate {
  Matrix contexts;  // m x d_tok
  ClassId class_id = 0;
};

Vec encode_image(const ModelParams& params, std::span<const double> x_in);

// Embedding of `template` through the prompt tower; the class token comes
// from params.word_vecs and must name a vocabulary entry.
Vec encode_prompt(const ModelParams& params, const PromptTemplate& tmpl, const Vocabulary& vocab);

// encode_prompt with the model's own context slots.
Vec encode_class(const ModelParams& params, const Vocabulary& vocab, ClassId class_id);

// Upstream derivatives of a scalar loss at the encoder outputs.
struct EmbeddingGrads {
  struct ImageTerm {
    Vec x_in;
    Vec grad;  // dL/df(x_in)
  };
  struct PromptTerm {
    ClassId class_id;
    Vec grad;  // dL/dh(class_id), built from params.contexts
  };
  std::vector<ImageTerm> images;
  std::vector<PromptTerm> prompts;
};

// Chain rule through both towers. The result has the shape of `params`.
ModelParams param_grads(const ModelParams& params, const EmbeddingGrads& upstream);

// Gaussian init with std = scale / sqrt(fan_in) for image_map (fan_in d_in),
// pool_map (fan_in = pool input width) and contexts (fan_in d_tok), drawn in
// that order, row-major, from Rng(seed). Biases start at zero, the gain at
// one, and word_vecs are copied from the vocabulary.
ModelParams init_params(std::uint64_t seed, const ModelDims& dims, double scale,
                        const Vocabulary& vocab);

}  // namespace empl
