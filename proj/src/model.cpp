#include "t2ipal/model.hpp"

#include <cmath>
#include <string>

#include "t2ipal/errors.hpp"

namespace t2ipal::model {

void HyperParams::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(gamma) || gamma < 0.0 || gamma > 1.0) throw InvalidArgument("gamma must lie in [0, 1]");
  if (!finite(alpha) || alpha < 0.0) throw InvalidArgument("alpha must be >= 0");
  if (!finite(beta) || beta < 0.0) throw InvalidArgument("beta must be >= 0");
  if (!finite(eta) || eta < 0.0) throw InvalidArgument("eta must be >= 0");
  if (!finite(tau) || !(tau > 0.0)) throw InvalidArgument("tau must be > 0");
}

PromptBank build_prompts(const std::vector<std::string>& class_names, std::size_t context_length,
                         const encoders::EncoderSpec& spec, Rng& rng) {
  if (context_length == 0) throw InvalidArgument("prompt context length M must be >= 1");
  PromptBank bank{Tensor::matrix(context_length, spec.token_dim),
                  Tensor::matrix(context_length, spec.token_dim),
                  encoders::class_token_matrix(class_names, spec)};
  for (double& v : bank.global_context.data()) v = rng.normal(0.0, kContextInitStddev);
  for (double& v : bank.local_context.data()) v = rng.normal(0.0, kContextInitStddev);
  return bank;
}

ClassEmbeddingVars encode_class_embeddings(Tape& tape, Var global_context, Var local_context,
                                           const Tensor& class_tokens,
                                           const encoders::TextEncoder& encoder) {
  const std::size_t num_classes = class_tokens.rows();
  Var projection = tape.constant(encoder.projection());
  std::vector<Var> globals, locals;
  globals.reserve(num_classes);
  locals.reserve(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) {
    Var cls = tape.constant(Tensor::row_vector(class_tokens.row(i)));
    const Var g_tokens[] = {global_context, cls};
    const Var l_tokens[] = {local_context, cls};
    globals.push_back(encoder.encode(tape, ops::concat_rows(g_tokens), projection).global);
    locals.push_back(encoder.encode(tape, ops::concat_rows(l_tokens), projection).global);
  }
  return {ops::concat_rows(globals), ops::concat_rows(locals)};
}

ClassEmbeddings encode_class_embeddings(const PromptBank& prompts,
                                        const encoders::TextEncoder& encoder) {
  Tape tape;
  auto vars = encode_class_embeddings(tape, tape.constant(prompts.global_context),
                                      tape.constant(prompts.local_context), prompts.class_tokens,
                                      encoder);
  return {vars.global.value(), vars.local.value()};
}

namespace graph {

Var global_similarity(Var global_feature, Var G) {
  return ops::matmul_nt(ops::normalize_rows(G), ops::normalize_rows(global_feature));
}

Var local_similarity(Var local_features, Var L) {
  return ops::matmul_nt(ops::normalize_rows(L), ops::normalize_rows(local_features));
}

Var class_heatmap(Var S, double tau) { return ops::softmax_rows(S, tau); }

Var aggregate_local(Var S, Var h) { return ops::row_dot(h, S); }

Var attended_features(Var h, Var local_features) { return ops::matmul(h, local_features); }

Var adapter_affinity(Var H, Var A, double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("beta must be >= 0");
  Var cos = ops::row_dot(ops::normalize_rows(H), ops::normalize_rows(A));
  // exp(−β(1 − cos)) = exp(β·cos − β)
  return ops::exp(ops::affine(cos, beta, -beta));
}

Var combined_logits(Var q, Var s_local, double alpha) {
  return ops::add(ops::scale(q, alpha), s_local);
}

BranchVars forward_branch(Tape& tape, const encoders::FeatureSet& features, Var G, Var L, Var A,
                          const HyperParams& hp) {
  const std::size_t dim = G.value().cols();
  if (features.global.size() != dim || features.local.cols() != dim) {
    throw InvalidArgument("feature width does not match class embeddings (D=" +
                          std::to_string(dim) + ")");
  }
  Var f_g = tape.constant(Tensor::row_vector(features.global));
  Var f_l = tape.constant(features.local);
  BranchVars out;
  out.s = global_similarity(f_g, G);
  out.S = local_similarity(f_l, L);
  out.h = class_heatmap(out.S, hp.tau);
  out.s_local = aggregate_local(out.S, out.h);
  out.H = attended_features(out.h, f_l);
  out.q = adapter_affinity(out.H, A, hp.beta);
  out.s_combined = combined_logits(out.q, out.s_local, hp.alpha);
  return out;
}

SimilarityBundle to_bundle(const BranchVars& v) {
  return SimilarityBundle{v.s.value().data(), v.S.value(),       v.h.value(),
                          v.H.value(),        v.q.value().data(), v.s_local.value().data(),
                          v.s_combined.value().data()};
}

}  // namespace graph

std::vector<double> global_similarity(std::span<const double> global_feature, const Tensor& G) {
  Tape tape;
  return graph::global_similarity(tape.constant(Tensor::row_vector(global_feature)),
                                  tape.constant(G))
      .value()
      .data();
}

Tensor local_similarity(const Tensor& local_features, const Tensor& L) {
  Tape tape;
  return graph::local_similarity(tape.constant(local_features), tape.constant(L)).value();
}

Tensor class_heatmap(const Tensor& S, double tau) {
  Tape tape;
  return graph::class_heatmap(tape.constant(S), tau).value();
}

std::vector<double> aggregate_local(const Tensor& S, const Tensor& h) {
  Tape tape;
  return graph::aggregate_local(tape.constant(S), tape.constant(h)).value().data();
}

Tensor attended_features(const Tensor& h, const Tensor& local_features) {
  Tape tape;
  return graph::attended_features(tape.constant(h), tape.constant(local_features)).value();
}

std::vector<double> adapter_affinity(const Tensor& H, const PrototypeMatrix& A, double beta) {
  Tape tape;
  return graph::adapter_affinity(tape.constant(H), tape.constant(A.weights), beta).value().data();
}

std::vector<double> combined_logits(std::span<const double> q, std::span<const double> s_local,
                                    double alpha) {
  if (q.size() != s_local.size()) throw InvalidArgument("combined_logits: length mismatch");
  Tape tape;
  return graph::combined_logits(tape.constant(Tensor::column_vector(q)),
                                tape.constant(Tensor::column_vector(s_local)), alpha)
      .value()
      .data();
}

SimilarityBundle forward_branch(const encoders::FeatureSet& features,
                                const ClassEmbeddings& embeddings, const PrototypeMatrix& A,
                                const HyperParams& hp) {
  hp.validate();
  Tape tape;
  auto vars = graph::forward_branch(tape, features, tape.constant(embeddings.global),
                                    tape.constant(embeddings.local), tape.constant(A.weights), hp);
  return graph::to_bundle(vars);
}

SimilarityBundle forward_branch(const encoders::FeatureSet& features, const PromptBank& prompts,
                                const PrototypeMatrix& A, const HyperParams& hp,
                                const encoders::TextEncoder& encoder) {
  return forward_branch(features, encode_class_embeddings(prompts, encoder), A, hp);
}

}  // namespace t2ipal::model
