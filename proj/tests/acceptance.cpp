// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "t2ipal/cli.hpp"
#include "t2ipal/eval.hpp"
#include "t2ipal/model.hpp"
#include "t2ipal/training.hpp"
#include "test_util.hpp"
#include "toy.hpp"

using namespace t2ipal;

namespace {

// Pinned tolerances and thresholds.
constexpr double kGradRtol = 1e-4;
constexpr double kGradAtol = 1e-7;
constexpr std::size_t kGradSeeds = 20;
constexpr double kGradBudgetSeconds = 10.0;
constexpr double kHeatmapSumTol = 1e-10;
constexpr double kAggregateTol = 1e-12;
constexpr std::size_t kApCases = 1000;
constexpr double kWorkedApTol = 1e-12;
constexpr double kTrainedMapMin = 0.95;
constexpr double kUntrainedMapMax = 0.60;
constexpr double kToyBudgetSeconds = 120.0;
constexpr std::uint64_t kToySeeds[] = {100, 101, 102, 103, 104};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

Outcome guarded(const std::function<Outcome()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

Outcome gradient_suite() {
  training::GradCheckOptions opt;
  opt.rtol = kGradRtol;
  opt.atol = kGradAtol;
  opt.dims = {3, 2, 8, 6, 4};
  const auto t0 = Clock::now();
  const auto rows =
      training::gradient_suite(model::HyperParams{}, training::RankingForm::Directed, kGradSeeds, opt);
  const double elapsed = seconds_since(t0);
  bool pass = elapsed < kGradBudgetSeconds;
  std::string detail;
  for (const auto& r : rows) {
    pass = pass && r.pass();
    detail += r.tensor + " " + std::to_string(r.passed) + "/" + std::to_string(r.seeds) +
              fmt(" (max rel %.1e), ", r.max_relative_error);
  }
  return {pass, detail + fmt("%.2f s", elapsed)};
}

// --- 2 ---------------------------------------------------------------------

double oracle_ranking(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double eta) {
  double total = 0.0;
  for (std::size_t p = 0; p < s.size(); ++p)
    for (std::size_t n = 0; n < s.size(); ++n)
      if (y[p] && !y[n]) total += std::max(0.0, eta - (s[p] - s[n]));
  return total;
}

Outcome formula_oracles() {
  Rng rng(2024);
  double worst_sum = 0.0, worst_agg = 0.0;
  std::size_t affinity_out = 0, alpha_mismatch = 0, ranking_mismatch = 0;
  for (int n = 0; n < 500; ++n) {
    const std::size_t c = 2 + rng.below(5), slots = 1 + rng.below(8), d = 2 + rng.below(8);
    const auto f = testutil::random_matrix(slots, d, rng);
    const auto L = testutil::random_matrix(c, d, rng);
    const double tau = std::pow(10.0, rng.uniform(-3.0, 0.0));
    const auto S = model::local_similarity(f, L);
    const auto h = model::class_heatmap(S, tau);
    const auto agg = model::aggregate_local(S, h);
    for (std::size_t i = 0; i < c; ++i) {
      double total = 0.0, loop = 0.0;
      for (std::size_t j = 0; j < slots; ++j) {
        total += h(i, j);
        loop += h(i, j) * S(i, j);
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      worst_agg = std::max(worst_agg, std::abs(agg[i] - loop));
    }
    const double beta = rng.uniform(0.0, 8.0);
    const auto H = model::attended_features(h, f);
    const auto q = model::adapter_affinity(H, model::PrototypeMatrix{testutil::random_matrix(c, d, rng)}, beta);
    for (double v : q) {
      if (v < std::exp(-2.0 * beta) * (1.0 - 1e-12) || v > 1.0) ++affinity_out;
    }
    const auto off = model::combined_logits(q, agg, 0.0);
    if (std::memcmp(off.data(), agg.data(), sizeof(double) * agg.size()) != 0) ++alpha_mismatch;

    const std::size_t rc = 2 + rng.below(5);  // up to 6 classes
    std::vector<double> s(rc);
    for (double& v : s) v = rng.uniform(-1.0, 1.0);
    const auto y = testutil::random_labels(rc, rng);
    if (training::ranking_loss(s, y, 1.0) != oracle_ranking(s, y, 1.0)) ++ranking_mismatch;
  }
  const bool pass = worst_sum <= kHeatmapSumTol && worst_agg <= kAggregateTol && affinity_out == 0 &&
                    alpha_mismatch == 0 && ranking_mismatch == 0;
  return {pass, fmt("heatmap |sum-1| %.1e, aggregate vs loop %.1e, ", worst_sum, worst_agg) +
                    std::to_string(affinity_out) + " affinities out of range, " +
                    std::to_string(alpha_mismatch) + " alpha=0 mismatches, " +
                    std::to_string(ranking_mismatch) + " ranking mismatches (500 cases)"};
}

// --- 3 ---------------------------------------------------------------------

double oracle_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::map<std::size_t, double> by_rank;
  for (std::size_t p = 0; p < s.size(); ++p) {
    if (!y[p]) continue;
    std::size_t rank = 1, hits = 1;
    for (std::size_t q = 0; q < s.size(); ++q) {
      if (q != p && (s[q] > s[p] || (s[q] == s[p] && q < p))) {
        ++rank;
        hits += y[q];
      }
    }
    by_rank[rank] = static_cast<double>(hits) / static_cast<double>(rank);
  }
  double total = 0.0;
  for (const auto& [rank, precision] : by_rank) total += precision;
  return total / static_cast<double>(by_rank.size());
}

Outcome ap_oracle() {
  const double worked = *eval::average_precision(std::vector<double>{0.9, 0.8, 0.1},
                                                 std::vector<std::uint8_t>{1, 0, 1});
  Rng rng(77);
  std::size_t cases = 0, mismatches = 0;
  while (cases < kApCases) {
    const std::size_t len = 1 + rng.below(8);
    std::vector<double> s(len);
    for (double& v : s) v = static_cast<double>(rng.below(5)) / 4.0;
    const auto y = testutil::random_labels(len, rng);
    if (std::find(y.begin(), y.end(), 1) == y.end()) continue;
    ++cases;
    if (*eval::average_precision(s, y) != oracle_ap(s, y)) ++mismatches;
  }
  const bool pass = std::abs(worked - 5.0 / 6.0) <= kWorkedApTol && mismatches == 0;
  return {pass, fmt("worked example AP %.15f (5/6 = %.15f), ", worked, 5.0 / 6.0) + std::to_string(mismatches) +
                    " mismatches over " + std::to_string(cases) + " cases"};
}

// --- 4, 5, 6 ---------------------------------------------------------------

struct ToyRun {
  double untrained_map = 0.0;
  double trained_map = 0.0;
  double first_loss = 0.0, last_loss = 0.0;
  eval::ModalityGapReport gap;
  double seconds = 0.0;
};

double map_of(const training::Checkpoint& ck, const std::vector<encoders::FeatureSet>& test) {
  const eval::Predictor p(ck);
  std::vector<eval::ScoreRecord> records;
  for (std::size_t n = 0; n < test.size(); ++n) records.push_back({p.scores(test[n]), test[n].labels, n});
  return eval::mean_average_precision(records).map;
}

ToyRun toy_run(std::uint64_t seed, double gamma, double alpha, std::size_t multiplicity) {
  auto setup = toy::default_setup(seed);
  setup.config.hp.gamma = gamma;
  setup.config.hp.alpha = alpha;
  setup.multiplicity = multiplicity;
  const auto t0 = Clock::now();
  const auto data = toy::make_data(setup);
  const auto result = training::train(setup.config, data.text, data.image);
  ToyRun r;
  r.seconds = seconds_since(t0);
  r.untrained_map = map_of(training::initial_checkpoint(setup.config), data.test);
  r.trained_map = map_of(result.checkpoint, data.test);
  r.first_loss = result.epoch_losses.front();
  r.last_loss = result.epoch_losses.back();
  r.gap = eval::modality_gap_report(data.test, result.checkpoint);
  return r;
}

double mean_trained(const std::vector<ToyRun>& runs) {
  double total = 0.0;
  for (const auto& r : runs) total += r.trained_map;
  return total / static_cast<double>(runs.size());
}

// --- 7 ---------------------------------------------------------------------

Outcome determinism() {
  testutil::TempDir dir("acceptance");
  auto f = [&](const std::string& name) { return dir.file(name); };
  std::string captions;
  for (const auto& c : toy::make_captions(60, 5)) captions += c + "\n";
  testutil::write_file(f("captions.txt"), captions);
  std::string classes;
  for (const auto& c : toy::class_names()) classes += c + "\n";
  testutil::write_file(f("classes.txt"), classes);
  nlohmann::json cfg = {{"classes", toy::class_names()}, {"D", 64}, {"N_im", 16},
                        {"noise_sigma", 0.3},            {"learning_rate", 0.01},
                        {"epochs", 3},                   {"seed", 11}};
  testutil::write_file(f("config.json"), cfg.dump());

  auto run = [&](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) throw std::runtime_error(args[0] + " exited " + std::to_string(code) + ": " + err.str());
  };
  for (const std::string tag : {"a", "b"}) {
    run({"prepare", "--captions", f("captions.txt"), "--classes", f("classes.txt"), "--out",
         f(tag + ".jsonl")});
    run({"synth", "--corpus", f(tag + ".jsonl"), "--config", f("config.json"), "--out", f(tag + ".img")});
    run({"train", "--config", f("config.json"), "--text-features", f(tag + ".img.text"),
         "--image-features", f(tag + ".img"), "--out", f(tag + ".ckpt")});
    run({"eval", "--checkpoint", f(tag + ".ckpt"), "--features", f(tag + ".img"), "--out",
         f(tag + ".json")});
  }
  std::size_t compared = 0, differing = 0;
  for (const char* suffix : {".jsonl", ".img", ".img.text", ".ckpt", ".ckpt.loss.jsonl", ".json",
                             ".json.scores"}) {
    ++compared;
    const auto a = testutil::read_file(f(std::string("a") + suffix));
    if (a.empty() || a != testutil::read_file(f(std::string("b") + suffix))) ++differing;
  }
  return {differing == 0, std::to_string(compared - differing) + "/" + std::to_string(compared) +
                              " artifacts byte-identical across two pipeline runs"};
}

// --- 8 ---------------------------------------------------------------------

Outcome additivity() {
  std::size_t entries = 0, mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "additivity"));
    encoders::EncoderSpec spec;
    spec.seed = seed;
    spec.token_dim = 6;
    spec.feature_dim = 8;
    spec.image_grid = 4;
    spec.text_capacity = 8;
    const encoders::TextEncoder encoder(spec);
    const auto tokens = encoders::class_token_matrix({"a", "b", "c"}, spec);
    auto sample = [&](std::size_t slots) {
      return encoders::FeatureSet{l2_normalize(testutil::random_matrix(1, 8, rng).data()),
                                  l2_normalize_rows(testutil::random_matrix(slots, 8, rng)),
                                  {1, 0, static_cast<std::uint8_t>(rng.below(2))}};
    };
    const auto image = sample(4), text = sample(3);
    const training::LearnableParams params{testutil::random_matrix(2, 6, rng, 0.5),
                                           testutil::random_matrix(2, 6, rng, 0.5),
                                           testutil::random_matrix(3, 8, rng)};
    auto problem = [&](double gamma) {
      training::LossProblem p;
      p.class_tokens = &tokens;
      p.encoder = &encoder;
      p.hp.gamma = gamma;
      p.image_batch = {&image};
      p.text_batch = {&text};
      return p;
    };
    const double gamma = 0.5, lr = 0.1;
    const auto g_image = training::loss_and_grad(problem(1.0), params).grads.prototypes;
    const auto g_text = training::loss_and_grad(problem(0.0), params).grads.prototypes;
    auto updated = params;
    training::sgd_step(updated, training::loss_and_grad(problem(gamma), params).grads, lr);
    for (std::size_t i = 0; i < g_image.size(); ++i) {
      ++entries;
      const double expected = params.prototypes[i] - lr * (gamma * g_image[i] + (1.0 - gamma) * g_text[i]);
      if (updated.prototypes[i] != expected) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " of " + std::to_string(entries) +
                               " entries of A differ from the gamma-weighted branch sum (20 seeds, gamma 0.5)"};
}

}  // namespace

int main() {
  report(1, "gradient suite", guarded(gradient_suite));
  report(2, "formula oracles", guarded(formula_oracles));
  report(3, "AP/mAP oracle", guarded(ap_oracle));

  std::vector<ToyRun> base, no_image, no_adapter, single;
  Outcome toy_outcome{false, ""}, ablation{false, ""}, gap{false, ""};
  try {
    for (auto seed : kToySeeds) {
      base.push_back(toy_run(seed, 0.2, 1.0, 6));
      no_image.push_back(toy_run(seed, 0.0, 1.0, 6));
      no_adapter.push_back(toy_run(seed, 0.2, 0.0, 6));
      single.push_back(toy_run(seed, 0.2, 1.0, 1));
    }
    const auto& first = base.front();
    toy_outcome = {first.trained_map >= kTrainedMapMin && first.untrained_map <= kUntrainedMapMax &&
                       first.seconds < kToyBudgetSeconds && first.last_loss < first.first_loss,
                   fmt("trained mAP %.4f (>= 0.95), untrained %.4f (<= 0.60), loss %.3f -> %.3f, ",
                       first.trained_map, first.untrained_map, first.first_loss, first.last_loss) +
                       fmt("%.1f s", first.seconds)};

    const double m_base = mean_trained(base), m_gamma0 = mean_trained(no_image);
    const double m_alpha0 = mean_trained(no_adapter), m_k1 = mean_trained(single);
    ablation = {m_base >= m_gamma0 && m_base >= m_alpha0 && m_base >= m_k1,
                fmt("mean mAP over 5 seeds: default %.4f, gamma=0 %.4f, alpha=0 %.4f, K=1 %.4f",
                    m_base, m_gamma0, m_alpha0, m_k1)};

    std::size_t wider = 0;
    double raw = 0.0, attended = 0.0;
    for (const auto& r : base) {
      wider += r.gap.attended_cosine > r.gap.raw_cosine ? 1 : 0;
      raw += r.gap.raw_cosine / static_cast<double>(base.size());
      attended += r.gap.attended_cosine / static_cast<double>(base.size());
    }
    gap = {wider == base.size(), std::to_string(wider) + "/" + std::to_string(base.size()) +
                                     fmt(" seeds with attended > raw (mean attended %.4f, raw %.4f)",
                                         attended, raw)};
  } catch (const std::exception& e) {
    toy_outcome = ablation = gap = {false, std::string("exception: ") + e.what()};
  }
  report(4, "toy end-to-end learning", toy_outcome);
  report(5, "ablation directions", ablation);
  report(6, "modality gap direction", gap);
  report(7, "pipeline determinism", guarded(determinism));
  report(8, "shared-adapter additivity", guarded(additivity));
  std::printf("%d of 8 criteria failed\n", failures);
  return failures;
}
