#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "t2ipal/corpus.hpp"
#include "t2ipal/rng.hpp"
#include "t2ipal/tape.hpp"
#include "t2ipal/tensor.hpp"

namespace t2ipal::encoders {

/// Configuration of the frozen surrogate encoders. Equal specs give
/// identical frozen parameters.
struct EncoderSpec {
  std::uint64_t seed = 0;
  std::size_t token_dim = 64;      // D_tok
  std::size_t feature_dim = 64;    // D
  std::size_t image_grid = 49;     // N_im, local slots per synthetic image
  std::size_t text_capacity = 77;  // N_te, maximum tokens per text input
  double noise_sigma = 0.0;        // relative noise norm added to each image slot
  double background_prob = 0.2;    // chance that an image slot shows background
  // cos(image class direction, text anchor of the same class name)
  double text_image_alignment = 0.1;

  // Throws InvalidArgument when a field is out of range.
  void validate() const;
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// One encoded sample: unit-norm global feature, unit-norm local rows, labels.
struct FeatureSet {
  std::vector<double> global;         // D
  Tensor local;                       // N×D
  std::vector<std::uint8_t> labels;   // C, 0/1

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

/// Deterministic token vector for one word, entries in [-1, 1].
std::vector<double> embed_word(std::string_view word, const EncoderSpec& spec);

/// |words|×D_tok matrix of word embeddings. Throws for an empty list or more
/// than N_te words.
Tensor embed_tokens(std::span<const std::string> words, const EncoderSpec& spec);

/// C×D_tok frozen class tokens; multi-word names are mean-pooled.
Tensor class_token_matrix(const std::vector<std::string>& class_names, const EncoderSpec& spec);

/// Frozen surrogate text encoder: a seeded D×D_tok projection followed by
/// per-token normalisation (local) and normalised mean pooling (global).
class TextEncoder {
 public:
  explicit TextEncoder(const EncoderSpec& spec);

  const EncoderSpec& spec() const noexcept { return spec_; }
  const Tensor& projection() const noexcept { return projection_; }

  struct Encoded {
    Var global;  // 1×D
    Var local;   // n×D
  };

  // Differentiable with respect to `tokens`.
  Encoded encode(Tape& tape, Var tokens) const;
  // Same, reusing a projection leaf already placed on the tape.
  Encoded encode(Tape& tape, Var tokens, Var projection) const;

  // Labels are left empty.
  FeatureSet encode_text(const Tensor& tokens) const;

  // Unit vector W·token for a single token row.
  std::vector<double> project_unit(std::span<const double> token) const;

 private:
  EncoderSpec spec_;
  Tensor projection_;  // D×D_tok
};

/// Per-class image-space directions shared by every synthetic image.
struct ClassDirections {
  Tensor directions;  // C×D, unit rows
  Tensor anchors;     // C×D, unit text-space anchors W·CLS_i the directions are tilted from
};

// Each direction has cosine `text_image_alignment` with its class's text
// anchor plus a seeded random orthogonal component. For D >= 64 the set is
// resampled until all pairwise |cos| < 0.5.
ClassDirections make_class_directions(const EncoderSpec& spec, const TextEncoder& encoder,
                                      const std::vector<std::string>& class_names);

/// Surrogate synthetic-image features for one multi-hot label vector.
FeatureSet synth_image_features(std::span<const std::uint8_t> labels, const EncoderSpec& spec,
                                const ClassDirections& directions, Rng& rng);

/// Token matrix for a caption after class matching: recognised phrases
/// become their class token, other words their word embedding. Truncated to N_te.
Tensor caption_tokens(const std::vector<corpus::CanonicalToken>& tokens,
                      const Tensor& class_tokens, const EncoderSpec& spec);

// Token used to pad text local maps to a common length.
inline constexpr std::string_view kPadToken = "<pad>";

/// Pads every sample's local rows with the pad-token feature up to the
/// longest sample, so a text set can share one feature file.
void pad_locals(std::vector<FeatureSet>& samples, const TextEncoder& encoder);

/// Binary feature file ("T2IF", version 1). See README for the layout.
void write_feature_file(const std::vector<FeatureSet>& samples, const std::filesystem::path& path);
std::vector<FeatureSet> read_feature_file(const std::filesystem::path& path);

// In-memory variants used by the file functions and tests.
std::string encode_feature_file(const std::vector<FeatureSet>& samples);
std::vector<FeatureSet> decode_feature_file(std::string bytes);

}  // namespace t2ipal::encoders
