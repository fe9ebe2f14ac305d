#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "t2ipal/encoders.hpp"
#include "t2ipal/rng.hpp"
#include "t2ipal/tape.hpp"
#include "t2ipal/tensor.hpp"

namespace t2ipal::model {

struct HyperParams {
  double gamma = 0.2;  // weight of the image-branch loss
  double alpha = 1.0;  // adapter residual ratio
  double beta = 3.5;   // affinity sharpness
  double eta = 1.0;    // ranking margin
  double tau = 0.02;   // heatmap temperature

  void validate() const;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

inline constexpr std::size_t kDefaultContextLength = 16;
inline constexpr double kContextInitStddev = 0.02;

/// Learnable global/local prompt contexts plus the frozen class tokens.
struct PromptBank {
  Tensor global_context;  // M×D_tok
  Tensor local_context;   // M×D_tok
  Tensor class_tokens;    // C×D_tok, frozen

  std::size_t context_length() const { return global_context.rows(); }
  std::size_t num_classes() const { return class_tokens.rows(); }
};

/// Contexts drawn i.i.d. from N(0, 0.02²); class tokens from the class names.
PromptBank build_prompts(const std::vector<std::string>& class_names, std::size_t context_length,
                         const encoders::EncoderSpec& spec, Rng& rng);

struct ClassEmbeddings {
  Tensor global;  // G, C×D
  Tensor local;   // L, C×D
};

struct ClassEmbeddingVars {
  Var global;
  Var local;
};

/// G_i and L_i are the global text features of [context..., CLS_i].
ClassEmbeddingVars encode_class_embeddings(Tape& tape, Var global_context, Var local_context,
                                           const Tensor& class_tokens,
                                           const encoders::TextEncoder& encoder);
ClassEmbeddings encode_class_embeddings(const PromptBank& prompts,
                                        const encoders::TextEncoder& encoder);

/// Shared class-prototype adapter, C×D.
struct PrototypeMatrix {
  Tensor weights;
};

/// Every intermediate of one forward pass over a sample.
struct SimilarityBundle {
  std::vector<double> s;           // global similarities, C
  Tensor S;                        // local similarities, C×N
  Tensor h;                        // class-wise heatmap, C×N
  Tensor H;                        // class-wise attended features, C×D
  std::vector<double> q;           // prototype affinities, C
  std::vector<double> s_local;     // heatmap-aggregated local similarities, C
  std::vector<double> s_combined;  // alpha·q + s_local, C

  friend bool operator==(const SimilarityBundle&, const SimilarityBundle&) = default;
};

/// Differentiable building blocks. Column outputs are C×1.
namespace graph {

Var global_similarity(Var global_feature, Var G);
Var local_similarity(Var local_features, Var L);
Var class_heatmap(Var S, double tau);
Var aggregate_local(Var S, Var h);
Var attended_features(Var h, Var local_features);
Var adapter_affinity(Var H, Var A, double beta);
Var combined_logits(Var q, Var s_local, double alpha);

struct BranchVars {
  Var s, S, h, H, q, s_local, s_combined;
};

// Features enter as constants; gradients reach G, L and A.
BranchVars forward_branch(Tape& tape, const encoders::FeatureSet& features, Var G, Var L, Var A,
                          const HyperParams& hp);

SimilarityBundle to_bundle(const BranchVars& vars);

}  // namespace graph

std::vector<double> global_similarity(std::span<const double> global_feature, const Tensor& G);
Tensor local_similarity(const Tensor& local_features, const Tensor& L);
Tensor class_heatmap(const Tensor& S, double tau);
std::vector<double> aggregate_local(const Tensor& S, const Tensor& h);
Tensor attended_features(const Tensor& h, const Tensor& local_features);
std::vector<double> adapter_affinity(const Tensor& H, const PrototypeMatrix& A, double beta);
std::vector<double> combined_logits(std::span<const double> q, std::span<const double> s_local,
                                    double alpha);

SimilarityBundle forward_branch(const encoders::FeatureSet& features,
                                const ClassEmbeddings& embeddings, const PrototypeMatrix& A,
                                const HyperParams& hp);
SimilarityBundle forward_branch(const encoders::FeatureSet& features, const PromptBank& prompts,
                                const PrototypeMatrix& A, const HyperParams& hp,
                                const encoders::TextEncoder& encoder);

}  // namespace t2ipal::model
