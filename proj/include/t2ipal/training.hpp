#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "t2ipal/encoders.hpp"
#include "t2ipal/model.hpp"
#include "t2ipal/tape.hpp"

namespace t2ipal::training {

/// Which hinge the ranking loss uses.
enum class RankingForm {
  Directed,  // max(0, η − (s_pos − s_neg))
  Literal,   // max(0, η − |s_pos − s_neg|)
};

enum class LrSchedule { Constant, Cosine };

std::string to_string(RankingForm form);
std::string to_string(LrSchedule schedule);
RankingForm ranking_form_from_string(const std::string& name);
LrSchedule lr_schedule_from_string(const std::string& name);

struct TrainConfig {
  model::HyperParams hp;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 40;
  std::uint64_t seed = 0;
  std::size_t context_length = model::kDefaultContextLength;  // M
  // Dimensions and synthesis settings; the seed field is ignored in favour
  // of a stream derived from `seed` (see encoder_spec()).
  encoders::EncoderSpec encoder;
  double weight_decay = 0.0;
  double momentum = 0.0;
  LrSchedule lr_schedule = LrSchedule::Constant;
  RankingForm ranking_form = RankingForm::Directed;
  double fusion_weight = 0.5;  // weight of the global score at inference
  std::vector<std::string> class_names;

  encoders::EncoderSpec encoder_spec() const;
  std::size_t num_classes() const noexcept { return class_names.size(); }
  void validate() const;
};

/// The tensors SGD updates. Everything else is frozen.
struct LearnableParams {
  Tensor global_context;  // M×D_tok
  Tensor local_context;   // M×D_tok
  Tensor prototypes;      // C×D

  friend bool operator==(const LearnableParams&, const LearnableParams&) = default;
};

struct Checkpoint {
  std::vector<std::string> class_names;
  encoders::EncoderSpec encoder;
  model::HyperParams hp;
  LearnableParams params;
  std::uint32_t epochs_completed = 0;
  double final_loss = 0.0;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::size_t context_length() const { return params.global_context.rows(); }
  model::PromptBank prompts() const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Ranking loss over all (positive, negative) class pairs; 0 when either side is empty.
double ranking_loss(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    double eta, RankingForm form = RankingForm::Directed);
Var ranking_loss(Var scores, std::span<const std::uint8_t> labels, double eta,
                 RankingForm form = RankingForm::Directed);

struct BranchLoss {
  double global = 0.0;  // over s
  double local = 0.0;   // over s_combined
};

BranchLoss branch_loss(const model::SimilarityBundle& bundle,
                       std::span<const std::uint8_t> labels, double eta,
                       RankingForm form = RankingForm::Directed);
// Sum of the global and local terms.
Var branch_loss(const model::graph::BranchVars& vars, std::span<const std::uint8_t> labels,
                double eta, RankingForm form = RankingForm::Directed);

/// γ·image + (1−γ)·text; throws InvalidArgument for γ outside [0, 1].
double joint_loss(double image_loss, double text_loss, double gamma);
Var joint_loss(Var image_loss, Var text_loss, double gamma);

/// p ← p − lr·g for the three learnable tensors.
void sgd_step(LearnableParams& params, const LearnableParams& grads, double lr);

/// Momentum / weight-decay SGD; with both at 0 it reduces to sgd_step exactly.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay);
  void step(LearnableParams& params, const LearnableParams& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  bool has_velocity_ = false;
  LearnableParams velocity_;
};

/// Fixed context for evaluating the joint loss of one step.
struct LossProblem {
  const Tensor* class_tokens = nullptr;
  const encoders::TextEncoder* encoder = nullptr;
  std::vector<const encoders::FeatureSet*> image_batch;
  std::vector<const encoders::FeatureSet*> text_batch;
  model::HyperParams hp;
  RankingForm form = RankingForm::Directed;
};

struct LossAndGrad {
  double loss = 0.0;
  double image_loss = 0.0;  // batch mean, 0 when the image branch is off
  double text_loss = 0.0;
  LearnableParams grads;
};

// A branch is skipped entirely (never read) when its weight is 0.
double evaluate_loss(const LossProblem& problem, const LearnableParams& params);
LossAndGrad loss_and_grad(const LossProblem& problem, const LearnableParams& params);

/// Untrained state: contexts from N(0, 0.02²); prototypes start at the
/// initial local class embeddings.
Checkpoint initial_checkpoint(const TrainConfig& config);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;  // mean joint loss per epoch
};

/// Seeded mini-batch SGD over both branches with a shared prototype matrix.
TrainResult train(const TrainConfig& config, const std::vector<encoders::FeatureSet>& text_samples,
                  const std::vector<encoders::FeatureSet>& image_samples);

/// Binary checkpoint ("T2IC", version 1).
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Finite-difference verification of every learnable tensor's gradient on
/// small random instances.
struct GradCheckDims {
  std::size_t num_classes = 3;
  std::size_t context_length = 2;
  std::size_t feature_dim = 8;
  std::size_t token_dim = 6;
  std::size_t slots = 4;
};

struct GradCheckRow {
  std::string tensor;
  std::size_t seeds = 0;
  std::size_t passed = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  bool pass() const noexcept { return seeds > 0 && passed == seeds; }
};

struct GradCheckOptions {
  GradCheckDims dims;
  double rtol = 1e-4;
  double atol = 1e-7;
  double step = 1e-6;
  std::uint64_t base_seed = 0;
  // Test hook: negate the analytic gradient before comparing.
  bool flip_analytic_sign = false;
};

std::vector<GradCheckRow> gradient_suite(const model::HyperParams& hp, RankingForm form,
                                         std::size_t num_seeds, const GradCheckOptions& options);

}  // namespace t2ipal::training
