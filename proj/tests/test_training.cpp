#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "t2ipal/binary_io.hpp"
#include "t2ipal/errors.hpp"
#include "t2ipal/training.hpp"
#include "test_util.hpp"
#include "toy.hpp"

using namespace t2ipal;
using namespace t2ipal::training;

namespace {

// Pair enumeration over every (positive, negative) combination.
double oracle_ranking(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double eta,
                      RankingForm form) {
  double total = 0.0;
  for (std::size_t p = 0; p < s.size(); ++p) {
    if (!y[p]) continue;
    for (std::size_t n = 0; n < s.size(); ++n) {
      if (y[n]) continue;
      const double gap = form == RankingForm::Directed ? s[p] - s[n] : std::abs(s[p] - s[n]);
      total += std::max(0.0, eta - gap);
    }
  }
  return total;
}

struct Tiny {
  encoders::EncoderSpec spec;
  encoders::TextEncoder encoder;
  Tensor class_tokens;
  std::vector<encoders::FeatureSet> images, texts;
  LearnableParams params;

  explicit Tiny(std::uint64_t seed) : spec(make_spec(seed)), encoder(spec) {
    class_tokens = encoders::class_token_matrix({"a", "b", "c"}, spec);
    Rng rng(seed);
    for (int k = 0; k < 3; ++k) {
      images.push_back(sample(rng, 4));
      texts.push_back(sample(rng, 2));
    }
    params = {testutil::random_matrix(2, 6, rng, 0.5), testutil::random_matrix(2, 6, rng, 0.5),
              testutil::random_matrix(3, 8, rng)};
  }

  static encoders::EncoderSpec make_spec(std::uint64_t seed) {
    encoders::EncoderSpec s;
    s.seed = seed;
    s.token_dim = 6;
    s.feature_dim = 8;
    s.image_grid = 4;
    s.text_capacity = 8;
    return s;
  }

  encoders::FeatureSet sample(Rng& rng, std::size_t slots) {
    encoders::FeatureSet f{l2_normalize(testutil::random_matrix(1, 8, rng).data()),
                           l2_normalize_rows(testutil::random_matrix(slots, 8, rng)),
                           {1, 0, static_cast<std::uint8_t>(rng.bernoulli(0.5))}};
    return f;
  }

  LossProblem problem(double gamma, std::size_t per_branch) const {
    LossProblem p;
    p.class_tokens = &class_tokens;
    p.encoder = &encoder;
    p.hp.gamma = gamma;
    for (std::size_t i = 0; i < per_branch; ++i) {
      p.image_batch.push_back(&images[i]);
      p.text_batch.push_back(&texts[i]);
    }
    return p;
  }
};

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.class_names = {"dog", "cat", "bird"};
  c.context_length = 2;
  c.encoder.token_dim = 6;
  c.encoder.feature_dim = 8;
  c.encoder.image_grid = 4;
  c.encoder.text_capacity = 8;
  c.batch_size = 4;
  c.epochs = 3;
  c.learning_rate = 1e-2;
  return c;
}

std::vector<encoders::FeatureSet> random_set(std::size_t n, std::size_t slots, Rng& rng) {
  std::vector<encoders::FeatureSet> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> labels = {0, 0, 0};
    labels[rng.below(3)] = 1;
    out.push_back({l2_normalize(testutil::random_matrix(1, 8, rng).data()),
                   l2_normalize_rows(testutil::random_matrix(slots, 8, rng)), labels});
  }
  return out;
}

}  // namespace

TEST(RankingLoss, Examples) {
  EXPECT_EQ(ranking_loss(std::vector<double>{2.5, 1.0}, std::vector<std::uint8_t>{1, 0}, 1.0), 0.0);
  EXPECT_NEAR(ranking_loss(std::vector<double>{0.2, 0.5}, std::vector<std::uint8_t>{1, 0}, 1.0), 1.3,
              1e-15);
  EXPECT_EQ(ranking_loss(std::vector<double>{0.2, 0.5}, std::vector<std::uint8_t>{1, 1}, 1.0), 0.0);
  EXPECT_EQ(ranking_loss(std::vector<double>{0.2, 0.5}, std::vector<std::uint8_t>{0, 0}, 1.0), 0.0);
  EXPECT_THROW(ranking_loss(std::vector<double>{0.2}, std::vector<std::uint8_t>{1, 0}, 1.0),
               InvalidArgument);
}

TEST(RankingLoss, LiteralFormIsDirectionBlind) {
  // A negative far above the positive costs nothing under the literal form.
  const std::vector<std::uint8_t> y = {1, 0};
  EXPECT_EQ(ranking_loss(std::vector<double>{-1.0, 1.0}, y, 1.0, RankingForm::Literal), 0.0);
  EXPECT_EQ(ranking_loss(std::vector<double>{-1.0, 1.0}, y, 1.0, RankingForm::Directed), 3.0);
}

TEST(RankingLossProperty, MatchesPairEnumerationExactly) {
  Rng rng(1);
  for (int n = 0; n < 2000; ++n) {
    const std::size_t c = 2 + rng.below(5);
    std::vector<double> s(c);
    for (double& v : s) v = rng.uniform(-2.0, 2.0);
    const auto y = testutil::random_labels(c, rng);
    const double eta = rng.uniform(0.0, 2.0);
    for (auto form : {RankingForm::Directed, RankingForm::Literal}) {
      const double got = ranking_loss(s, y, eta, form);
      EXPECT_EQ(got, oracle_ranking(s, y, eta, form));
      EXPECT_GE(got, 0.0);
      Tape tape;
      Var v = ranking_loss(tape.constant(Tensor::column_vector(s)), y, eta, form);
      EXPECT_EQ(v.value()[0], got);
    }
  }
}

TEST(RankingLossProperty, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int n = 0; n < 100; ++n) {
    const auto x = testutil::random_matrix(5, 1, rng);
    auto y = testutil::random_labels(5, rng);
    y[0] = 1;
    y[1] = 0;
    auto report = testutil::check_op_gradient(
        x, [&](Tape&, Var v) { return ranking_loss(v, y, 1.0); }, rng);
    EXPECT_TRUE(report.pass);
  }
}

TEST(BranchLoss, Examples) {
  model::SimilarityBundle b;
  b.s = {2.0, 0.5};
  b.s_local = {0.1, 0.0};
  b.q = {1.0, 0.0};
  b.s_combined = {3.0, 0.0};
  const std::vector<std::uint8_t> y = {1, 0};
  auto loss = branch_loss(b, y, 1.0);
  EXPECT_EQ(loss.global, 0.0);
  EXPECT_EQ(loss.local, 0.0);

  b.s_combined = b.s_local;  // alpha = 0
  EXPECT_EQ(branch_loss(b, y, 1.0).local, ranking_loss(b.s_local, y, 1.0));
}

TEST(BranchLoss, AlphaChangesOnlyTheLocalTerm) {
  Tiny t(3);
  Rng rng(1);
  model::ClassEmbeddings e{l2_normalize_rows(testutil::random_matrix(3, 8, rng)),
                           l2_normalize_rows(testutil::random_matrix(3, 8, rng))};
  model::PrototypeMatrix A{t.params.prototypes};
  model::HyperParams hp;
  auto a = branch_loss(model::forward_branch(t.images[0], e, A, hp), t.images[0].labels, 1.0);
  hp.alpha = 3.0;
  auto b = branch_loss(model::forward_branch(t.images[0], e, A, hp), t.images[0].labels, 1.0);
  EXPECT_EQ(a.global, b.global);
  EXPECT_NE(a.local, b.local);
}

TEST(JointLoss, Endpoints) {
  EXPECT_EQ(joint_loss(1.0, 2.0, 0.0), 2.0);
  EXPECT_EQ(joint_loss(1.0, 2.0, 1.0), 1.0);
  EXPECT_NEAR(joint_loss(1.0, 2.0, 0.2), 1.8, 1e-15);
  EXPECT_THROW(joint_loss(1.0, 2.0, 1.2), InvalidArgument);
}

TEST(SgdStep, Examples) {
  LearnableParams p{Tensor::from_rows({{1.0}}), Tensor::from_rows({{2.0}}), Tensor::from_rows({{3.0}})};
  const auto before = p;
  LearnableParams zero{Tensor::from_rows({{0.0}}), Tensor::from_rows({{0.0}}), Tensor::from_rows({{0.0}})};
  sgd_step(p, zero, 0.1);
  EXPECT_EQ(p, before);
  LearnableParams g{Tensor::from_rows({{0.5}}), Tensor::from_rows({{0.5}}), Tensor::from_rows({{0.5}})};
  sgd_step(p, g, 1.0);
  EXPECT_EQ(p.global_context(0, 0), 0.5);
  EXPECT_THROW(sgd_step(p, LearnableParams{Tensor::matrix(2, 1), zero.local_context, zero.prototypes}, 1.0),
               InvalidArgument);
}

TEST(SgdOptimizer, PlainMatchesSgdStepAndMomentumAccumulates) {
  LearnableParams p{Tensor::from_rows({{1.0}}), Tensor::from_rows({{1.0}}), Tensor::from_rows({{1.0}})};
  LearnableParams g{Tensor::from_rows({{1.0}}), Tensor::from_rows({{1.0}}), Tensor::from_rows({{1.0}})};
  auto a = p, b = p;
  SgdOptimizer plain(0.0, 0.0);
  plain.step(a, g, 0.1);
  sgd_step(b, g, 0.1);
  EXPECT_EQ(a, b);
  SgdOptimizer heavy(0.9, 0.0);
  auto c = p;
  heavy.step(c, g, 0.1);  // v = 1
  heavy.step(c, g, 0.1);  // v = 1.9
  EXPECT_NEAR(c.prototypes(0, 0), 1.0 - 0.1 - 0.19, 1e-15);
}

TEST(LossAndGrad, WeightZeroBranchIsNeverRead) {
  Tiny t(4);
  auto p = t.problem(1.0, 2);
  p.text_batch.clear();
  auto lg = loss_and_grad(p, t.params);
  EXPECT_EQ(lg.text_loss, 0.0);
  EXPECT_GT(lg.image_loss, 0.0);
  EXPECT_EQ(lg.loss, lg.image_loss);
  p = t.problem(0.0, 2);
  p.image_batch.clear();
  EXPECT_NO_THROW(loss_and_grad(p, t.params));
  p = t.problem(0.5, 2);
  p.image_batch.clear();
  EXPECT_THROW(loss_and_grad(p, t.params), InvalidArgument);
}

TEST(LossAndGrad, JointIsGammaWeightedBranchMean) {
  Tiny t(5);
  auto lg = loss_and_grad(t.problem(0.2, 3), t.params);
  EXPECT_NEAR(lg.loss, 0.2 * lg.image_loss + 0.8 * lg.text_loss, 1e-14);
  EXPECT_GE(lg.image_loss, 0.0);
  EXPECT_NEAR(evaluate_loss(t.problem(0.2, 3), t.params), lg.loss, 1e-14);
}

TEST(SharedAdapter, UpdateIsGammaWeightedSumOfBranchGradients) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tiny t(seed);
    const auto image_only = loss_and_grad(t.problem(1.0, 1), t.params).grads.prototypes;
    const auto text_only = loss_and_grad(t.problem(0.0, 1), t.params).grads.prototypes;
    const auto joint = loss_and_grad(t.problem(0.5, 1), t.params);
    auto stepped = t.params;
    sgd_step(stepped, joint.grads, 0.1);
    for (std::size_t i = 0; i < image_only.size(); ++i) {
      const double expected = 0.5 * image_only[i] + 0.5 * text_only[i];
      ASSERT_EQ(joint.grads.prototypes[i], expected) << "seed " << seed << " entry " << i;
      ASSERT_EQ(stepped.prototypes[i], t.params.prototypes[i] - 0.1 * expected);
    }
  }
}

TEST(GradientSuite, PassesForEveryTensor) {
  const auto rows = gradient_suite(model::HyperParams{}, RankingForm::Directed, 20, GradCheckOptions{});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].tensor, "global_context");
  EXPECT_EQ(rows[1].tensor, "local_context");
  EXPECT_EQ(rows[2].tensor, "prototypes");
  for (const auto& r : rows) {
    EXPECT_EQ(r.seeds, 20u);
    EXPECT_TRUE(r.pass()) << r.tensor << " rel " << r.max_relative_error;
  }
}

TEST(GradientSuite, LiteralFormAlsoPasses) {
  const auto rows = gradient_suite(model::HyperParams{}, RankingForm::Literal, 5, GradCheckOptions{});
  for (const auto& r : rows) EXPECT_TRUE(r.pass()) << r.tensor;
}

TEST(GradientSuite, FlippedSignFails) {
  GradCheckOptions opt;
  opt.flip_analytic_sign = true;
  const auto rows = gradient_suite(model::HyperParams{}, RankingForm::Directed, 3, opt);
  for (const auto& r : rows) EXPECT_FALSE(r.pass()) << r.tensor;
}

TEST(GradientSuite, RejectsZeroSeeds) {
  EXPECT_THROW(gradient_suite(model::HyperParams{}, RankingForm::Directed, 0, GradCheckOptions{}),
               InvalidArgument);
}

TEST(TrainConfig, Validation) {
  auto c = small_config(1);
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config(1);
  c.class_names = {"dog"};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config(1);
  c.context_length = 8;  // M + 1 > N_te
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(ranking_form_from_string(to_string(RankingForm::Literal)), RankingForm::Literal);
  EXPECT_THROW(lr_schedule_from_string("linear"), InvalidArgument);
}

TEST(InitialCheckpoint, PrototypesStartAtLocalEmbeddings) {
  const auto c = small_config(2);
  const auto ck = initial_checkpoint(c);
  const encoders::TextEncoder enc(ck.encoder);
  const auto emb = model::encode_class_embeddings(ck.prompts(), enc);
  for (std::size_t i = 0; i < emb.local.size(); ++i) {
    EXPECT_NEAR(ck.params.prototypes[i], emb.local[i], 1e-6);
  }
  EXPECT_EQ(ck.context_length(), 2u);
}

TEST(Train, DeterministicAndFrozenStateUntouched) {
  const auto c = small_config(3);
  Rng rng(3);
  const auto text = random_set(10, 3, rng);
  const auto image = random_set(12, 4, rng);
  const auto spec = c.encoder_spec();
  const auto projection = encoders::TextEncoder(spec).projection();
  const auto tokens = encoders::class_token_matrix(c.class_names, spec);
  auto a = train(c, text, image);
  auto b = train(c, text, image);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  EXPECT_EQ(a.epoch_losses.size(), 3u);
  EXPECT_EQ(a.checkpoint.epochs_completed, 3u);
  EXPECT_EQ(a.checkpoint.final_loss, a.epoch_losses.back());
  EXPECT_EQ(encoders::TextEncoder(a.checkpoint.encoder).projection(), projection);
  EXPECT_EQ(encoders::class_token_matrix(a.checkpoint.class_names, a.checkpoint.encoder), tokens);
  EXPECT_NE(a.checkpoint.params, initial_checkpoint(c).params);
}

TEST(Train, GammaEndpointsIgnoreTheOtherBranch) {
  auto c = small_config(4);
  Rng rng(4);
  const auto image = random_set(8, 4, rng);
  const auto text = random_set(8, 2, rng);
  c.hp.gamma = 1.0;
  EXPECT_NO_THROW(train(c, {}, image));
  c.hp.gamma = 0.0;
  EXPECT_NO_THROW(train(c, text, {}));
  c.hp.gamma = 0.5;
  EXPECT_THROW(train(c, text, {}), InvalidArgument);
}

TEST(Train, InconsistentSamplesRejected) {
  auto c = small_config(5);
  Rng rng(5);
  auto image = random_set(4, 4, rng);
  const auto text = random_set(4, 2, rng);
  image[2].labels.push_back(0);
  EXPECT_THROW(train(c, text, image), ConsistencyError);
  image = random_set(4, 3, rng);  // N_im is 4
  EXPECT_THROW(train(c, text, image), ConsistencyError);
}

TEST(Train, ToyLossDecreases) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = toy::default_setup(seed);
    s.train_captions = 60;
    s.test_captions = 1;
    s.multiplicity = 2;
    s.config.epochs = 5;
    const auto d = toy::make_data(s);
    const auto r = train(s.config, d.text, d.image);
    EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front()) << "seed " << seed;
  }
}

// --- checkpoint file --------------------------------------------------------

TEST(CheckpointFile, RoundTrip) {
  testutil::TempDir dir("ckpt");
  auto ck = initial_checkpoint(small_config(6));
  ck.epochs_completed = 7;
  ck.final_loss = 1.25;
  save_checkpoint(ck, dir.file("c.bin"));
  const auto loaded = load_checkpoint(dir.file("c.bin"));
  EXPECT_EQ(loaded, ck);
  EXPECT_EQ(encode_checkpoint(loaded), testutil::read_file(dir.file("c.bin")));
}

TEST(CheckpointFile, HeaderLayout) {
  const auto ck = initial_checkpoint(small_config(7));
  const auto bytes = encode_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 4), "T2IC");
  binary::ByteReader r(bytes.substr(4));
  EXPECT_EQ(r.u16("v"), 1u);
  EXPECT_EQ(r.u32("C"), 3u);
  EXPECT_EQ(r.u32("D"), 8u);
  EXPECT_EQ(r.u32("D_tok"), 6u);
  EXPECT_EQ(r.u32("M"), 2u);
  EXPECT_EQ(r.u32("N_im"), 4u);
  EXPECT_EQ(r.u32("N_te"), 8u);
  EXPECT_EQ(r.u64("seed"), ck.encoder.seed);
  EXPECT_EQ(r.f64("gamma"), 0.2);
  EXPECT_EQ(r.f64("alpha"), 1.0);
  EXPECT_EQ(r.f64("beta"), 3.5);
  EXPECT_EQ(r.f64("eta"), 1.0);
  EXPECT_EQ(r.f64("tau"), 0.02);
  EXPECT_EQ(r.f32("first context entry"), static_cast<float>(ck.params.global_context[0]));
}

TEST(CheckpointFile, Errors) {
  const auto bytes = encode_checkpoint(initial_checkpoint(small_config(8)));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), FormatError);
  bad = bytes;
  bad[6] = 4;  // header C = 4, three names follow
  EXPECT_ANY_THROW(decode_checkpoint(bad));
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
}

TEST(CheckpointFile, ClassCountMismatchIsConsistencyError) {
  // Build a checkpoint with C = 3 tensors, then drop one name so the list disagrees.
  auto ck = initial_checkpoint(small_config(9));
  const auto full = encode_checkpoint(ck);
  const std::size_t names_at = 4 + 2 + 6 * 4 + 8 + 5 * 8 + 4 * (2 * 2 * 6 + 3 * 8);
  auto bad = full;
  bad[names_at] = 2;
  EXPECT_THROW(decode_checkpoint(bad), ConsistencyError);
}
