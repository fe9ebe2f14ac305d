#include "t2ipal/encoders.hpp"

#include <cmath>
#include <string>

#include "t2ipal/errors.hpp"
#include "t2ipal/numerics.hpp"

namespace t2ipal::encoders {

void EncoderSpec::validate() const {
  if (token_dim == 0 || feature_dim == 0 || image_grid == 0 || text_capacity == 0) {
    throw InvalidArgument("encoder dimensions D_tok, D, N_im, N_te must all be >= 1");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw InvalidArgument("noise_sigma must be a finite nonnegative number");
  }
  if (!(background_prob >= 0.0 && background_prob <= 1.0)) {
    throw InvalidArgument("background_prob must lie in [0, 1]");
  }
  if (!(text_image_alignment >= -1.0 && text_image_alignment <= 1.0)) {
    throw InvalidArgument("text_image_alignment must lie in [-1, 1]");
  }
}

std::vector<double> embed_word(std::string_view word, const EncoderSpec& spec) {
  std::uint64_t state =
      splitmix64(derive_seed(spec.seed, "token-embedding") ^ fnv1a64(word));
  std::vector<double> v(spec.token_dim);
  for (double& x : v) {
    state = splitmix64(state);
    x = 2.0 * (static_cast<double>(state >> 11) * 0x1.0p-53) - 1.0;
  }
  return v;
}

Tensor embed_tokens(std::span<const std::string> words, const EncoderSpec& spec) {
  if (words.empty()) throw InvalidArgument("embed_tokens: word list is empty");
  if (words.size() > spec.text_capacity) {
    throw InvalidArgument("embed_tokens: " + std::to_string(words.size()) +
                          " words exceed text capacity " + std::to_string(spec.text_capacity));
  }
  Tensor out = Tensor::matrix(words.size(), spec.token_dim);
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto v = embed_word(words[i], spec);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

Tensor class_token_matrix(const std::vector<std::string>& class_names, const EncoderSpec& spec) {
  if (class_names.empty()) throw InvalidArgument("class_token_matrix: no classes");
  Tensor out = Tensor::matrix(class_names.size(), spec.token_dim);
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    const auto words = corpus::tokenize(class_names[i]);
    if (words.empty()) throw InvalidArgument("class name '" + class_names[i] + "' has no words");
    for (const auto& w : words) {
      const auto v = embed_word(w, spec);
      for (std::size_t k = 0; k < v.size(); ++k) out(i, k) += v[k];
    }
    for (double& x : out.row(i)) x /= static_cast<double>(words.size());
  }
  return out;
}

TextEncoder::TextEncoder(const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng(derive_seed(spec_.seed, "text-projection"));
  projection_ = Tensor::matrix(spec_.feature_dim, spec_.token_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.token_dim));
  for (double& w : projection_.data()) w = scale * rng.normal();
}

TextEncoder::Encoded TextEncoder::encode(Tape& tape, Var tokens) const {
  return encode(tape, tokens, tape.constant(projection_));
}

TextEncoder::Encoded TextEncoder::encode(Tape& tape, Var tokens, Var projection) const {
  const Tensor& tv = tokens.value();
  if (tv.cols() != spec_.token_dim) {
    throw InvalidArgument("encode_text: token width " + std::to_string(tv.cols()) +
                          " != D_tok " + std::to_string(spec_.token_dim));
  }
  if (tv.rows() == 0 || tv.rows() > spec_.text_capacity) {
    throw InvalidArgument("encode_text: " + std::to_string(tv.rows()) +
                          " tokens outside [1, N_te=" + std::to_string(spec_.text_capacity) + "]");
  }
  if (tokens.tape() != &tape || projection.tape() != &tape) {
    throw InvalidArgument("encode_text: inputs belong to a different tape");
  }
  Var projected = ops::matmul_nt(tokens, projection);
  return {ops::normalize_rows(ops::mean_rows(projected)), ops::normalize_rows(projected)};
}

FeatureSet TextEncoder::encode_text(const Tensor& tokens) const {
  Tape tape;
  auto enc = encode(tape, tape.constant(tokens));
  const Tensor& g = enc.global.value();
  return FeatureSet{g.data(), enc.local.value(), {}};
}

std::vector<double> TextEncoder::project_unit(std::span<const double> token) const {
  if (token.size() != spec_.token_dim) throw InvalidArgument("project_unit: width mismatch");
  std::vector<double> out(spec_.feature_dim, 0.0);
  for (std::size_t d = 0; d < spec_.feature_dim; ++d) out[d] = dot(projection_.row(d), token);
  return l2_normalize(out);
}

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  for (;;) {
    for (double& x : v) x = rng.normal();
    if (norm(v) > kNormEpsilon) return l2_normalize(v);
  }
}

// Orthonormal basis (Gram-Schmidt) of the anchor span; empty when the
// anchors would fill more than half of the space.
std::vector<std::vector<double>> anchor_basis(const Tensor& anchors, std::size_t dim) {
  std::vector<std::vector<double>> rows;
  if (2 * anchors.rows() > dim) return rows;
  for (std::size_t i = 0; i < anchors.rows(); ++i) {
    std::vector<double> v(anchors.row(i).begin(), anchors.row(i).end());
    for (const auto& b : rows) {
      const double p = dot(v, b);
      for (std::size_t d = 0; d < dim; ++d) v[d] -= p * b[d];
    }
    if (norm(v) > 1e-8) rows.push_back(l2_normalize(v));
  }
  return rows;
}

}  // namespace

ClassDirections make_class_directions(const EncoderSpec& spec, const TextEncoder& encoder,
                                      const std::vector<std::string>& class_names) {
  spec.validate();
  const std::size_t num_classes = class_names.size();
  const std::size_t dim = spec.feature_dim;
  const Tensor tokens = class_token_matrix(class_names, spec);
  ClassDirections out{Tensor::matrix(num_classes, dim), Tensor::matrix(num_classes, dim)};
  for (std::size_t i = 0; i < num_classes; ++i) {
    auto anchor = encoder.project_unit(tokens.row(i));
    std::copy(anchor.begin(), anchor.end(), out.anchors.row(i).begin());
  }

  // direction = a·anchor + sqrt(1 − a²)·r with r a seeded unit vector
  // orthogonal to the anchor. When D leaves room, r also avoids the span of
  // every other text anchor, so a class's image looks like no other class's text.
  const auto basis = anchor_basis(out.anchors, dim);
  const double along = spec.text_image_alignment;
  const double rest = std::sqrt(std::max(0.0, 1.0 - along * along));
  const bool enforce_spread = dim >= 64;
  constexpr int kMaxAttempts = 10000;
  Rng rng(derive_seed(spec.seed, "class-directions"));
  for (std::size_t i = 0; i < num_classes; ++i) {
    const auto e1 = out.anchors.row(i);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      std::vector<double> candidate(dim);
      if (rest == 0.0 || dim < 2) {
        for (std::size_t d = 0; d < dim; ++d) candidate[d] = along * e1[d];
      } else {
        auto r = random_unit(dim, rng);
        for (const auto& b : basis) {
          const double p = dot(r, b);
          for (std::size_t d = 0; d < dim; ++d) r[d] -= p * b[d];
        }
        const double p1 = dot(r, e1);
        for (std::size_t d = 0; d < dim; ++d) r[d] -= p1 * e1[d];
        if (norm(r) <= 1e-8) continue;
        r = l2_normalize(r);
        for (std::size_t d = 0; d < dim; ++d) candidate[d] = along * e1[d] + rest * r[d];
      }
      candidate = l2_normalize(candidate);
      placed = true;
      if (enforce_spread) {
        for (std::size_t j = 0; j < i && placed; ++j) {
          placed = std::abs(dot(candidate, out.directions.row(j))) < 0.5;
        }
      }
      if (placed) std::copy(candidate.begin(), candidate.end(), out.directions.row(i).begin());
    }
    if (!placed) {
      throw DegenerateInput("could not place class direction " + std::to_string(i) +
                            " with pairwise |cos| < 0.5");
    }
  }
  return out;
}

FeatureSet synth_image_features(std::span<const std::uint8_t> labels, const EncoderSpec& spec,
                                const ClassDirections& directions, Rng& rng) {
  const std::size_t dim = spec.feature_dim;
  require_shape(directions.directions, labels.size(), dim, "class directions");
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw InvalidArgument("labels must be 0/1");
    if (labels[i]) present.push_back(i);
  }
  if (present.empty()) throw InvalidArgument("synth_image_features: no label set");

  const double noise_scale = spec.noise_sigma / std::sqrt(static_cast<double>(dim));
  FeatureSet out{std::vector<double>(dim, 0.0), Tensor::matrix(spec.image_grid, dim),
                 std::vector<std::uint8_t>(labels.begin(), labels.end())};
  std::vector<double> slot(dim);
  for (std::size_t j = 0; j < spec.image_grid; ++j) {
    if (rng.uniform() < spec.background_prob) {
      slot = random_unit(dim, rng);
    } else {
      auto dir = directions.directions.row(present[rng.below(present.size())]);
      slot.assign(dir.begin(), dir.end());
    }
    if (spec.noise_sigma > 0.0) {
      for (double& x : slot) x += noise_scale * rng.normal();
    }
    const auto unit = l2_normalize(slot);
    std::copy(unit.begin(), unit.end(), out.local.row(j).begin());
    for (std::size_t d = 0; d < dim; ++d) out.global[d] += unit[d];
  }
  out.global = l2_normalize(out.global);
  return out;
}

Tensor caption_tokens(const std::vector<corpus::CanonicalToken>& tokens,
                      const Tensor& class_tokens, const EncoderSpec& spec) {
  if (tokens.empty()) throw InvalidArgument("caption has no tokens");
  const std::size_t n = std::min(tokens.size(), spec.text_capacity);
  Tensor out = Tensor::matrix(n, spec.token_dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (const auto* label = std::get_if<std::size_t>(&tokens[i])) {
      if (*label >= class_tokens.rows()) throw InvalidArgument("caption token class out of range");
      auto src = class_tokens.row(*label);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    } else {
      const auto v = embed_word(std::get<std::string>(tokens[i]), spec);
      std::copy(v.begin(), v.end(), out.row(i).begin());
    }
  }
  return out;
}

void pad_locals(std::vector<FeatureSet>& samples, const TextEncoder& encoder) {
  std::size_t longest = 0;
  for (const auto& s : samples) longest = std::max(longest, s.local.rows());
  const auto pad = encoder.project_unit(embed_word(kPadToken, encoder.spec()));
  for (auto& s : samples) {
    const std::size_t n = s.local.rows();
    if (n == longest) continue;
    Tensor grown = Tensor::matrix(longest, s.local.cols());
    std::copy(s.local.data().begin(), s.local.data().end(), grown.data().begin());
    for (std::size_t r = n; r < longest; ++r) std::copy(pad.begin(), pad.end(), grown.row(r).begin());
    s.local = std::move(grown);
  }
}

}  // namespace t2ipal::encoders
