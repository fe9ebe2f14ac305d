#include "t2ipal/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "t2ipal/errors.hpp"
#include "t2ipal/numerics.hpp"
#include "t2ipal/rng.hpp"

namespace t2ipal::training {

using encoders::FeatureSet;

std::string to_string(RankingForm form) {
  return form == RankingForm::Directed ? "directed" : "literal";
}

std::string to_string(LrSchedule schedule) {
  return schedule == LrSchedule::Constant ? "constant" : "cosine";
}

RankingForm ranking_form_from_string(const std::string& name) {
  if (name == "directed") return RankingForm::Directed;
  if (name == "literal") return RankingForm::Literal;
  throw InvalidArgument("unknown ranking loss form '" + name + "'");
}

LrSchedule lr_schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  throw InvalidArgument("unknown lr schedule '" + name + "'");
}

encoders::EncoderSpec TrainConfig::encoder_spec() const {
  encoders::EncoderSpec spec = encoder;
  spec.seed = derive_seed(seed, "encoder");
  return spec;
}

void TrainConfig::validate() const {
  hp.validate();
  encoder.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be > 0");
  }
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (epochs == 0) throw InvalidArgument("epochs must be >= 1");
  if (context_length == 0) throw InvalidArgument("M must be >= 1");
  if (context_length + 1 > encoder.text_capacity) {
    throw InvalidArgument("a prompt of M+1 = " + std::to_string(context_length + 1) +
                          " tokens exceeds N_te = " + std::to_string(encoder.text_capacity));
  }
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (!(fusion_weight >= 0.0 && fusion_weight <= 1.0)) {
    throw InvalidArgument("fusion_weight must lie in [0, 1]");
  }
  if (class_names.size() < 2) throw InvalidArgument("at least two classes are required");
}

model::PromptBank Checkpoint::prompts() const {
  return model::PromptBank{params.global_context, params.local_context,
                           encoders::class_token_matrix(class_names, encoder)};
}

namespace {

void check_labels(std::size_t num_scores, std::span<const std::uint8_t> labels) {
  if (num_scores != labels.size()) {
    throw InvalidArgument("ranking_loss: " + std::to_string(num_scores) + " scores but " +
                          std::to_string(labels.size()) + " labels");
  }
}

// Loss value and d(loss)/d(scores). Pairs are visited positive-major in
// ascending class order.
double ranking_terms(std::span<const double> scores, std::span<const std::uint8_t> labels,
                     double eta, RankingForm form, std::vector<double>* grad) {
  check_labels(scores.size(), labels);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      const double gap = scores[i] - scores[j];
      const double term = form == RankingForm::Directed ? eta - gap : eta - std::abs(gap);
      if (!(term > 0.0)) continue;
      total += term;
      if (grad) {
        const double slope = form == RankingForm::Directed ? 1.0 : (gap > 0.0) - (gap < 0.0);
        (*grad)[i] -= slope;
        (*grad)[j] += slope;
      }
    }
  }
  return total;
}

}  // namespace

double ranking_loss(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    double eta, RankingForm form) {
  return ranking_terms(scores, labels, eta, form, nullptr);
}

Var ranking_loss(Var scores, std::span<const std::uint8_t> labels, double eta, RankingForm form) {
  const Tensor& sv = scores.value();
  std::vector<double> grad(sv.size(), 0.0);
  const double value = ranking_terms(sv.data(), labels, eta, form, &grad);
  return scores.tape()->record(Tensor({1, 1}, value), {scores},
                               [scores, grad = std::move(grad)](const Tensor&, const Tensor& g,
                                                                Tape& t) {
                                 Tensor& gs = t.grad_buffer(scores);
                                 for (std::size_t i = 0; i < grad.size(); ++i) gs[i] += g[0] * grad[i];
                               });
}

BranchLoss branch_loss(const model::SimilarityBundle& bundle,
                       std::span<const std::uint8_t> labels, double eta, RankingForm form) {
  return {ranking_loss(bundle.s, labels, eta, form),
          ranking_loss(bundle.s_combined, labels, eta, form)};
}

Var branch_loss(const model::graph::BranchVars& vars, std::span<const std::uint8_t> labels,
                double eta, RankingForm form) {
  return ops::add(ranking_loss(vars.s, labels, eta, form),
                  ranking_loss(vars.s_combined, labels, eta, form));
}

double joint_loss(double image_loss, double text_loss, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  return gamma * image_loss + (1.0 - gamma) * text_loss;
}

Var joint_loss(Var image_loss, Var text_loss, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  const Var terms[] = {image_loss, text_loss};
  const double weights[] = {gamma, 1.0 - gamma};
  return ops::weighted_sum(terms, weights);
}

namespace {

void descend(Tensor& p, const Tensor& g, double lr, const char* name) {
  if (!p.same_shape(g)) {
    throw InvalidArgument(std::string("sgd_step: gradient shape mismatch for ") + name);
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

}  // namespace

void sgd_step(LearnableParams& params, const LearnableParams& grads, double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be > 0");
  descend(params.global_context, grads.global_context, lr, "global_context");
  descend(params.local_context, grads.local_context, lr, "local_context");
  descend(params.prototypes, grads.prototypes, lr, "prototypes");
}

SgdOptimizer::SgdOptimizer(double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {}

void SgdOptimizer::step(LearnableParams& params, const LearnableParams& grads, double lr) {
  if (momentum_ == 0.0 && weight_decay_ == 0.0) {
    sgd_step(params, grads, lr);
    return;
  }
  LearnableParams direction = grads;
  auto decay = [&](Tensor& d, const Tensor& p) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += weight_decay_ * p[i];
  };
  decay(direction.global_context, params.global_context);
  decay(direction.local_context, params.local_context);
  decay(direction.prototypes, params.prototypes);
  if (momentum_ > 0.0) {
    if (!has_velocity_) {
      velocity_ = direction;
      has_velocity_ = true;
    } else {
      auto blend = [&](Tensor& v, const Tensor& d) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = momentum_ * v[i] + d[i];
      };
      blend(velocity_.global_context, direction.global_context);
      blend(velocity_.local_context, direction.local_context);
      blend(velocity_.prototypes, direction.prototypes);
    }
    direction = velocity_;
  }
  sgd_step(params, direction, lr);
}

namespace {

struct BuiltLoss {
  Var total;
  Var image;
  Var text;
  bool has_image = false;
  bool has_text = false;
};

Var batch_mean_loss(Tape& tape, const std::vector<const FeatureSet*>& batch,
                    const model::ClassEmbeddingVars& emb, Var A, const model::HyperParams& hp,
                    RankingForm form, const char* branch) {
  if (batch.empty()) {
    throw InvalidArgument(std::string(branch) + " branch is weighted but its batch is empty");
  }
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const FeatureSet* sample : batch) {
    auto vars = model::graph::forward_branch(tape, *sample, emb.global, emb.local, A, hp);
    losses.push_back(branch_loss(vars, sample->labels, hp.eta, form));
  }
  const std::vector<double> weights(batch.size(), 1.0 / static_cast<double>(batch.size()));
  return ops::weighted_sum(losses, weights);
}

BuiltLoss build_loss(Tape& tape, const LossProblem& problem, Var gc, Var lc, Var A) {
  if (!problem.class_tokens || !problem.encoder) {
    throw InvalidArgument("loss problem is missing class tokens or encoder");
  }
  const auto& hp = problem.hp;
  hp.validate();
  auto emb = model::encode_class_embeddings(tape, gc, lc, *problem.class_tokens, *problem.encoder);
  BuiltLoss out;
  std::vector<Var> terms;
  std::vector<double> weights;
  if (hp.gamma > 0.0) {
    out.image = batch_mean_loss(tape, problem.image_batch, emb, A, hp, problem.form, "image");
    out.has_image = true;
    terms.push_back(out.image);
    weights.push_back(hp.gamma);
  }
  if (hp.gamma < 1.0) {
    out.text = batch_mean_loss(tape, problem.text_batch, emb, A, hp, problem.form, "text");
    out.has_text = true;
    terms.push_back(out.text);
    weights.push_back(1.0 - hp.gamma);
  }
  out.total = out.has_image && out.has_text ? joint_loss(out.image, out.text, hp.gamma)
                                            : ops::weighted_sum(terms, weights);
  return out;
}

}  // namespace

double evaluate_loss(const LossProblem& problem, const LearnableParams& params) {
  Tape tape;
  auto built = build_loss(tape, problem, tape.constant(params.global_context),
                          tape.constant(params.local_context), tape.constant(params.prototypes));
  return built.total.value()[0];
}

LossAndGrad loss_and_grad(const LossProblem& problem, const LearnableParams& params) {
  Tape tape;
  Var gc = tape.parameter(params.global_context);
  Var lc = tape.parameter(params.local_context);
  Var A = tape.parameter(params.prototypes);
  auto built = build_loss(tape, problem, gc, lc, A);
  tape.backward(built.total);
  LossAndGrad out;
  out.loss = built.total.value()[0];
  out.image_loss = built.has_image ? built.image.value()[0] : 0.0;
  out.text_loss = built.has_text ? built.text.value()[0] : 0.0;
  out.grads = LearnableParams{tape.grad(gc), tape.grad(lc), tape.grad(A)};
  return out;
}

Checkpoint initial_checkpoint(const TrainConfig& config) {
  config.validate();
  const auto full_spec = config.encoder_spec();
  encoders::EncoderSpec stored;
  stored.seed = full_spec.seed;
  stored.token_dim = full_spec.token_dim;
  stored.feature_dim = full_spec.feature_dim;
  stored.image_grid = full_spec.image_grid;
  stored.text_capacity = full_spec.text_capacity;

  const encoders::TextEncoder encoder(stored);
  Rng prompt_rng(derive_seed(config.seed, "prompts"));
  auto bank = model::build_prompts(config.class_names, config.context_length, stored, prompt_rng);
  auto embeddings = model::encode_class_embeddings(bank, encoder);

  Checkpoint ckpt;
  ckpt.class_names = config.class_names;
  ckpt.encoder = stored;
  ckpt.hp = config.hp;
  ckpt.params = LearnableParams{round_to_float(bank.global_context),
                                round_to_float(bank.local_context),
                                round_to_float(embeddings.local)};
  return ckpt;
}

namespace {

void check_samples(const std::vector<FeatureSet>& samples, const TrainConfig& config,
                   bool image_branch) {
  const auto& spec = config.encoder;
  const char* branch = image_branch ? "image" : "text";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto fail = [&](const std::string& why) {
      throw ConsistencyError(std::string(branch) + " sample " + std::to_string(i) + ": " + why);
    };
    if (s.labels.size() != config.num_classes()) {
      fail("has " + std::to_string(s.labels.size()) + " labels, config has " +
           std::to_string(config.num_classes()) + " classes");
    }
    if (s.global.size() != spec.feature_dim || s.local.cols() != spec.feature_dim) {
      fail("feature width differs from D = " + std::to_string(spec.feature_dim));
    }
    if (image_branch && s.local.rows() != spec.image_grid) {
      fail("has " + std::to_string(s.local.rows()) + " local slots, N_im = " +
           std::to_string(spec.image_grid));
    }
    if (!image_branch && s.local.rows() > spec.text_capacity) {
      fail("has " + std::to_string(s.local.rows()) + " tokens, N_te = " +
           std::to_string(spec.text_capacity));
    }
  }
}

// Shuffled index stream over one branch. Wraps (with a fresh shuffle) when exhausted.
class BatchCursor {
 public:
  BatchCursor(std::size_t size, Rng& rng) : order_(size), rng_(&rng) {
    for (std::size_t i = 0; i < size; ++i) order_[i] = i;
  }

  void restart() {
    rng_->shuffle(order_);
    pos_ = 0;
  }

  std::size_t remaining() const noexcept { return order_.size() - pos_; }

  std::vector<std::size_t> take(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) restart();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng* rng_;
  std::size_t pos_ = 0;
};

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<FeatureSet>& text_samples,
                  const std::vector<FeatureSet>& image_samples) {
  config.validate();
  const bool use_image = config.hp.gamma > 0.0;
  const bool use_text = config.hp.gamma < 1.0;
  if (use_image) {
    if (image_samples.empty()) throw InvalidArgument("image branch is weighted but has no samples");
    check_samples(image_samples, config, true);
  }
  if (use_text) {
    if (text_samples.empty()) throw InvalidArgument("text branch is weighted but has no samples");
    check_samples(text_samples, config, false);
  }

  TrainResult result;
  result.checkpoint = initial_checkpoint(config);
  const encoders::TextEncoder encoder(result.checkpoint.encoder);
  const Tensor class_tokens =
      encoders::class_token_matrix(config.class_names, result.checkpoint.encoder);
  LearnableParams params = result.checkpoint.params;

  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  BatchCursor image_cursor(use_image ? image_samples.size() : 0, shuffle_rng);
  BatchCursor text_cursor(use_text ? text_samples.size() : 0, shuffle_rng);
  const std::size_t n_image = use_image ? image_samples.size() : 0;
  const std::size_t n_text = use_text ? text_samples.size() : 0;
  const std::size_t dominant = std::max(n_image, n_text);
  const bool image_leads = n_image >= n_text;
  const std::size_t steps = (dominant + config.batch_size - 1) / config.batch_size;

  SgdOptimizer optimizer(config.momentum, config.weight_decay);
  LossProblem problem;
  problem.class_tokens = &class_tokens;
  problem.encoder = &encoder;
  problem.hp = config.hp;
  problem.form = config.ranking_form;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.lr_schedule == LrSchedule::Cosine) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                  static_cast<double>(config.epochs)));
    }
    if (use_image) image_cursor.restart();
    if (use_text) text_cursor.restart();
    double epoch_total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      problem.image_batch.clear();
      problem.text_batch.clear();
      auto batch_size = [&](bool leads, const BatchCursor& cursor, std::size_t n) {
        return leads ? std::min(config.batch_size, cursor.remaining())
                     : std::min(config.batch_size, n);
      };
      if (use_image) {
        for (auto i : image_cursor.take(batch_size(image_leads, image_cursor, n_image))) {
          problem.image_batch.push_back(&image_samples[i]);
        }
      }
      if (use_text) {
        for (auto i : text_cursor.take(batch_size(!image_leads, text_cursor, n_text))) {
          problem.text_batch.push_back(&text_samples[i]);
        }
      }
      auto lg = loss_and_grad(problem, params);
      if (!std::isfinite(lg.loss)) {
        throw NumericFailure("non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_total += lg.loss;
      optimizer.step(params, lg.grads, lr);
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(steps));
  }

  result.checkpoint.params = LearnableParams{round_to_float(params.global_context),
                                             round_to_float(params.local_context),
                                             round_to_float(params.prototypes)};
  result.checkpoint.epochs_completed = static_cast<std::uint32_t>(config.epochs);
  result.checkpoint.final_loss = result.epoch_losses.back();
  return result;
}

namespace {

std::vector<double> random_unit_row(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  do {
    for (double& x : v) x = rng.normal();
  } while (norm(v) <= kNormEpsilon);
  return l2_normalize(v);
}

FeatureSet random_sample(std::size_t num_classes, std::size_t dim, std::size_t slots, Rng& rng) {
  FeatureSet s{random_unit_row(dim, rng), Tensor::matrix(slots, dim),
               std::vector<std::uint8_t>(num_classes, 0)};
  for (std::size_t j = 0; j < slots; ++j) {
    auto row = random_unit_row(dim, rng);
    std::copy(row.begin(), row.end(), s.local.row(j).begin());
  }
  // At least one positive and one negative so both hinge sums are populated.
  const std::size_t pos = rng.below(num_classes);
  const std::size_t neg = (pos + 1 + rng.below(num_classes - 1)) % num_classes;
  for (std::size_t i = 0; i < num_classes; ++i) s.labels[i] = rng.bernoulli(0.5) ? 1 : 0;
  s.labels[pos] = 1;
  s.labels[neg] = 0;
  return s;
}

}  // namespace

std::vector<GradCheckRow> gradient_suite(const model::HyperParams& hp, RankingForm form,
                                         std::size_t num_seeds, const GradCheckOptions& options) {
  if (num_seeds == 0) throw InvalidArgument("gradient suite needs at least one seed");
  hp.validate();
  const auto& dims = options.dims;
  if (dims.num_classes < 2) throw InvalidArgument("gradient suite needs at least two classes");
  std::vector<GradCheckRow> rows = {{"global_context"}, {"local_context"}, {"prototypes"}};

  for (std::size_t s = 0; s < num_seeds; ++s) {
    const std::uint64_t seed = options.base_seed + s;
    Rng rng(derive_seed(seed, "gradcheck"));
    encoders::EncoderSpec spec;
    spec.seed = derive_seed(seed, "encoder");
    spec.token_dim = dims.token_dim;
    spec.feature_dim = dims.feature_dim;
    spec.image_grid = dims.slots;
    spec.text_capacity = std::max(dims.slots, dims.context_length + 1);
    const encoders::TextEncoder encoder(spec);

    std::vector<std::string> names;
    for (std::size_t i = 0; i < dims.num_classes; ++i) names.push_back("class" + std::to_string(i));
    const Tensor class_tokens = encoders::class_token_matrix(names, spec);

    LearnableParams params{Tensor::matrix(dims.context_length, dims.token_dim),
                           Tensor::matrix(dims.context_length, dims.token_dim),
                           Tensor::matrix(dims.num_classes, dims.feature_dim)};
    for (double& v : params.global_context.data()) v = rng.normal(0.0, 0.5);
    for (double& v : params.local_context.data()) v = rng.normal(0.0, 0.5);
    for (double& v : params.prototypes.data()) v = rng.normal();

    std::vector<FeatureSet> images, texts;
    for (int k = 0; k < 2; ++k) {
      images.push_back(random_sample(dims.num_classes, dims.feature_dim, dims.slots, rng));
      texts.push_back(
          random_sample(dims.num_classes, dims.feature_dim, 1 + rng.below(dims.slots), rng));
    }
    LossProblem problem;
    problem.class_tokens = &class_tokens;
    problem.encoder = &encoder;
    problem.hp = hp;
    problem.form = form;
    for (const auto& f : images) problem.image_batch.push_back(&f);
    for (const auto& f : texts) problem.text_batch.push_back(&f);

    const auto analytic = loss_and_grad(problem, params);
    auto check = [&](GradCheckRow& row, Tensor LearnableParams::*member) {
      std::vector<double> a = (analytic.grads.*member).data();
      if (options.flip_analytic_sign) {
        for (double& v : a) v = -v;
      }
      const Tensor base = params.*member;
      auto f = [&](std::span<const double> x) {
        LearnableParams probe = params;
        std::copy(x.begin(), x.end(), (probe.*member).data().begin());
        return evaluate_loss(problem, probe);
      };
      const auto numeric = finite_diff_grad(f, base.data(), options.step);
      const auto report = check_gradients(a, numeric, options.rtol, options.atol);
      row.seeds += 1;
      row.passed += report.pass ? 1 : 0;
      row.max_relative_error = std::max(row.max_relative_error, report.max_relative_error);
      row.max_abs_error = std::max(row.max_abs_error, report.max_abs_error);
    };
    check(rows[0], &LearnableParams::global_context);
    check(rows[1], &LearnableParams::local_context);
    check(rows[2], &LearnableParams::prototypes);
  }
  return rows;
}

}  // namespace t2ipal::training
