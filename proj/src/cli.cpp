#include "t2ipal/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "t2ipal/config.hpp"
#include "t2ipal/corpus.hpp"
#include "t2ipal/encoders.hpp"
#include "t2ipal/errors.hpp"
#include "t2ipal/eval.hpp"
#include "t2ipal/rng.hpp"
#include "t2ipal/training.hpp"

namespace t2ipal::cli {

using nlohmann::ordered_json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("error writing " + path);
}

// `<artifact>.manifest.json`: the command, its inputs and the resolved settings.
void write_manifest(const std::string& artifact, const std::string& command, ordered_json body) {
  ordered_json manifest;
  manifest["command"] = command;
  for (auto& [key, value] : body.items()) manifest[key] = value;
  write_text(artifact + ".manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::uint8_t> labels_for(const corpus::CaptionRecord& rec, std::size_t num_classes,
                                     std::size_t line) {
  for (auto l : rec.labels) {
    if (l >= num_classes) {
      throw ConsistencyError("corpus record " + std::to_string(line) + " has label " +
                             std::to_string(l) + " but the config lists " +
                             std::to_string(num_classes) + " classes");
    }
  }
  return rec.multi_hot(num_classes);
}

config::RunConfig config_with_classes(const std::string& path) {
  auto cfg = config::load_config(path);
  if (cfg.train.class_names.empty()) {
    throw InvalidArgument("config " + path + " has no \"classes\" list");
  }
  return cfg;
}

// --- prepare ---------------------------------------------------------------

struct PrepareArgs {
  std::string captions, classes, synonyms, out;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  const auto classes = corpus::CategorySet::load(a.classes);
  corpus::SynonymMap synonyms;
  if (!a.synonyms.empty()) synonyms = corpus::load_synonyms(a.synonyms, classes);
  const auto filter = corpus::build_noun_filter(classes, synonyms);

  std::vector<corpus::CaptionRecord> kept;
  std::size_t rejected = 0;
  std::vector<std::size_t> frequency(classes.size(), 0);
  for (const auto& line : corpus::read_lines(a.captions)) {
    if (corpus::tokenize(line).empty()) continue;  // blank line
    if (auto rec = corpus::filter_caption(line, filter)) {
      for (auto l : rec->labels) ++frequency[l];
      kept.push_back(std::move(*rec));
    } else {
      ++rejected;
    }
  }
  corpus::write_corpus(kept, a.out);

  ordered_json stats;
  stats["kept"] = kept.size();
  stats["rejected"] = rejected;
  stats["per_class"] = ordered_json::object();
  for (std::size_t c = 0; c < classes.size(); ++c) stats["per_class"][classes.name(c)] = frequency[c];
  out << stats.dump(2) << "\n";

  ordered_json body;
  body["inputs"] = {{"captions", a.captions}, {"classes", a.classes}, {"synonyms", a.synonyms}};
  body["classes"] = classes.names();
  body["stats"] = stats;
  write_manifest(a.out, "prepare", std::move(body));
  return kExitOk;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string corpus, config, out, text_out;
  std::size_t multiplicity = 6;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto cfg = config_with_classes(a.config);
  if (a.multiplicity == 0) throw InvalidArgument("--multiplicity must be >= 1");
  const auto records = corpus::load_corpus(a.corpus);
  const auto& names = cfg.train.class_names;
  const std::size_t num_classes = names.size();

  const auto spec = cfg.train.encoder_spec();
  const encoders::TextEncoder encoder(spec);
  const auto directions = encoders::make_class_directions(spec, encoder, names);
  const auto filter = corpus::build_noun_filter(cfg.categories(), cfg.synonym_map());
  const Tensor class_tokens = encoders::class_token_matrix(names, spec);

  Rng rng(derive_seed(cfg.train.seed, "synthesis"));
  std::vector<encoders::FeatureSet> images;
  std::vector<encoders::FeatureSet> texts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto labels = labels_for(records[i], num_classes, i + 1);
    for (std::size_t k = 0; k < a.multiplicity; ++k) {
      images.push_back(encoders::synth_image_features(labels, spec, directions, rng));
    }
    auto text = encoder.encode_text(
        encoders::caption_tokens(filter.canonical_tokens(records[i].text), class_tokens, spec));
    text.labels = labels;
    texts.push_back(std::move(text));
  }
  encoders::pad_locals(texts, encoder);

  const std::string text_out = a.text_out.empty() ? a.out + ".text" : a.text_out;
  encoders::write_feature_file(images, a.out);
  encoders::write_feature_file(texts, text_out);

  ordered_json summary;
  summary["captions"] = records.size();
  summary["image_samples"] = images.size();
  summary["text_samples"] = texts.size();
  summary["image_features"] = a.out;
  summary["text_features"] = text_out;
  out << summary.dump(2) << "\n";

  ordered_json body;
  body["inputs"] = {{"corpus", a.corpus}, {"config", a.config}};
  body["multiplicity"] = a.multiplicity;
  body["outputs"] = {a.out, text_out};
  body["config"] = config::to_json(cfg);
  write_manifest(a.out, "synth", std::move(body));
  return kExitOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, text_features, image_features, out;
  double gamma = 0, alpha = 0, beta = 0, eta = 0, tau = 0, learning_rate = 0;
  std::size_t epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
  CLI::Option *gamma_opt = nullptr, *alpha_opt = nullptr, *beta_opt = nullptr,
              *eta_opt = nullptr, *tau_opt = nullptr, *lr_opt = nullptr, *epochs_opt = nullptr,
              *batch_opt = nullptr, *seed_opt = nullptr;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto cfg = config_with_classes(a.config);
  auto& t = cfg.train;
  if (a.gamma_opt->count()) t.hp.gamma = a.gamma;
  if (a.alpha_opt->count()) t.hp.alpha = a.alpha;
  if (a.beta_opt->count()) t.hp.beta = a.beta;
  if (a.eta_opt->count()) t.hp.eta = a.eta;
  if (a.tau_opt->count()) t.hp.tau = a.tau;
  if (a.lr_opt->count()) t.learning_rate = a.learning_rate;
  if (a.epochs_opt->count()) t.epochs = a.epochs;
  if (a.batch_opt->count()) t.batch_size = a.batch_size;
  if (a.seed_opt->count()) t.seed = a.seed;
  t.validate();

  // A branch with zero weight is never read, so its file may be absent.
  std::vector<encoders::FeatureSet> texts, images;
  if (t.hp.gamma > 0.0) {
    if (a.image_features.empty()) throw InvalidArgument("gamma > 0 requires --image-features");
    images = encoders::read_feature_file(a.image_features);
  }
  if (t.hp.gamma < 1.0) {
    if (a.text_features.empty()) throw InvalidArgument("gamma < 1 requires --text-features");
    texts = encoders::read_feature_file(a.text_features);
  }

  const auto result = training::train(t, texts, images);
  training::save_checkpoint(result.checkpoint, a.out);

  std::ostringstream log;
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    ordered_json line;
    line["epoch"] = e + 1;
    line["loss"] = result.epoch_losses[e];
    log << line.dump() << "\n";
  }
  const std::string log_path = a.out + ".loss.jsonl";
  write_text(log_path, log.str());

  ordered_json summary;
  summary["epochs"] = result.checkpoint.epochs_completed;
  summary["final_loss"] = result.checkpoint.final_loss;
  summary["checkpoint"] = a.out;
  summary["loss_log"] = log_path;
  out << summary.dump(2) << "\n";

  ordered_json body;
  body["inputs"] = {{"config", a.config},
                    {"text_features", t.hp.gamma < 1.0 ? a.text_features : ""},
                    {"image_features", t.hp.gamma > 0.0 ? a.image_features : ""}};
  body["outputs"] = {a.out, log_path};
  body["config"] = config::to_json(cfg);
  write_manifest(a.out, "train", std::move(body));
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, features, out;
  double fusion_weight = 0.5;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = training::load_checkpoint(a.checkpoint);
  const auto features = encoders::read_feature_file(a.features);
  const eval::Predictor predictor(ckpt, a.fusion_weight);

  std::vector<eval::ScoreRecord> records;
  records.reserve(features.size());
  for (std::size_t n = 0; n < features.size(); ++n) {
    if (features[n].labels.size() != ckpt.num_classes()) {
      throw ConsistencyError("feature file has " + std::to_string(features[n].labels.size()) +
                             " classes, checkpoint has " + std::to_string(ckpt.num_classes()));
    }
    records.push_back({predictor.scores(features[n]), features[n].labels, n});
  }
  const auto report = eval::mean_average_precision(records);
  const auto doc = eval::report_to_json(report, ckpt.class_names);
  write_text(a.out, doc.dump(2) + "\n");
  const std::string scores_path = a.out + ".scores";
  eval::write_score_file(records, scores_path);

  out << std::fixed << std::setprecision(4) << "mAP " << report.map << " over "
      << report.samples << " samples\n";

  ordered_json body;
  body["inputs"] = {{"checkpoint", a.checkpoint}, {"features", a.features}};
  body["outputs"] = {a.out, scores_path};
  body["fusion_weight"] = a.fusion_weight;
  body["classes"] = ckpt.class_names;
  body["hyperparameters"] = {{"gamma", ckpt.hp.gamma}, {"alpha", ckpt.hp.alpha},
                             {"beta", ckpt.hp.beta},   {"eta", ckpt.hp.eta},
                             {"tau", ckpt.hp.tau}};
  write_manifest(a.out, "eval", std::move(body));
  return kExitOk;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::string config, out;
  std::size_t seeds = 20;
  bool inject_wrong_sign = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto cfg = a.config.empty() ? config::RunConfig{} : config::load_config(a.config);
  if (a.seeds == 0) throw InvalidArgument("--seeds must be >= 1");
  training::GradCheckOptions options;
  options.base_seed = cfg.train.seed;
  options.flip_analytic_sign = a.inject_wrong_sign;
  const auto rows =
      training::gradient_suite(cfg.train.hp, cfg.train.ranking_form, a.seeds, options);

  bool all_pass = true;
  out << std::left << std::setw(16) << "tensor" << std::setw(8) << "seeds" << std::setw(8)
      << "passed" << std::setw(14) << "max_rel" << std::setw(14) << "max_abs" << "status\n";
  ordered_json table = ordered_json::array();
  for (const auto& r : rows) {
    all_pass = all_pass && r.pass();
    out << std::left << std::setw(16) << r.tensor << std::setw(8) << r.seeds << std::setw(8)
        << r.passed << std::setw(14) << std::scientific << std::setprecision(3)
        << r.max_relative_error << std::setw(14) << r.max_abs_error << (r.pass() ? "PASS" : "FAIL")
        << "\n";
    table.push_back({{"tensor", r.tensor},
                     {"seeds", r.seeds},
                     {"passed", r.passed},
                     {"max_relative_error", r.max_relative_error},
                     {"max_abs_error", r.max_abs_error},
                     {"pass", r.pass()}});
  }
  if (!a.out.empty()) {
    ordered_json doc;
    doc["rtol"] = options.rtol;
    doc["atol"] = options.atol;
    doc["rows"] = table;
    doc["pass"] = all_pass;
    write_text(a.out, doc.dump(2) + "\n");
    ordered_json body;
    body["inputs"] = {{"config", a.config}};
    body["seeds"] = a.seeds;
    body["config"] = config::to_json(cfg);
    write_manifest(a.out, "gradcheck", std::move(body));
  }
  return all_pass ? kExitOk : kExitFailure;
}

// --- fuse ------------------------------------------------------------------

struct FuseArgs {
  std::string a, b, out;
  double weight = 0.5;
};

int cmd_fuse(const FuseArgs& f, std::ostream& out) {
  const auto a = eval::read_score_file(f.a);
  const auto b = eval::read_score_file(f.b);
  if (a.size() != b.size()) {
    throw ConsistencyError("score files hold " + std::to_string(a.size()) + " and " +
                           std::to_string(b.size()) + " samples");
  }
  if (!(f.weight >= 0.0 && f.weight <= 1.0)) throw InvalidArgument("--weight must lie in [0, 1]");
  std::vector<eval::ScoreRecord> fused;
  fused.reserve(a.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    if (a[n].scores.size() != b[n].scores.size()) {
      throw ConsistencyError("score files disagree on the class count");
    }
    if (a[n].labels != b[n].labels) {
      throw ConsistencyError("score files disagree on the labels of sample " + std::to_string(n));
    }
    fused.push_back({eval::fuse_scores(a[n].scores, b[n].scores, f.weight), a[n].labels, n});
  }
  eval::write_score_file(fused, f.out);
  out << "fused " << fused.size() << " samples\n";

  ordered_json body;
  body["inputs"] = {{"a", f.a}, {"b", f.b}};
  body["weight"] = f.weight;
  body["outputs"] = {f.out};
  write_manifest(f.out, "fuse", std::move(body));
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"T2I-PAL engine: corpus prep, feature synthesis, training, evaluation"};
  app.name("t2ipal");
  app.require_subcommand(1);

  PrepareArgs prepare;
  auto* p = app.add_subcommand("prepare", "Filter captions into a labelled corpus");
  p->add_option("--captions", prepare.captions, "Caption text file, one per line")->required();
  p->add_option("--classes", prepare.classes, "Class names, one per line")->required();
  p->add_option("--synonyms", prepare.synonyms, "surface<TAB>class lines");
  p->add_option("--out", prepare.out, "Corpus JSONL to write")->required();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Encode a corpus into text and surrogate-image features");
  s->add_option("--corpus", synth.corpus)->required();
  s->add_option("--config", synth.config)->required();
  s->add_option("--multiplicity", synth.multiplicity, "Image samples per caption")
      ->capture_default_str();
  s->add_option("--out", synth.out, "Image feature file")->required();
  s->add_option("--text-out", synth.text_out, "Text feature file (default: <out>.text)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Learn prompts and the prototype adapter");
  t->add_option("--config", train.config)->required();
  t->add_option("--text-features", train.text_features);
  t->add_option("--image-features", train.image_features);
  t->add_option("--out", train.out, "Checkpoint to write")->required();
  train.gamma_opt = t->add_option("--gamma", train.gamma);
  train.alpha_opt = t->add_option("--alpha", train.alpha);
  train.beta_opt = t->add_option("--beta", train.beta);
  train.eta_opt = t->add_option("--eta", train.eta);
  train.tau_opt = t->add_option("--tau", train.tau);
  train.lr_opt = t->add_option("--learning-rate", train.learning_rate);
  train.epochs_opt = t->add_option("--epochs", train.epochs);
  train.batch_opt = t->add_option("--batch-size", train.batch_size);
  train.seed_opt = t->add_option("--seed", train.seed);

  EvalArgs evaluate;
  auto* e = app.add_subcommand("eval", "Score features with a checkpoint and report mAP");
  e->add_option("--checkpoint", evaluate.checkpoint)->required();
  e->add_option("--features", evaluate.features)->required();
  e->add_option("--out", evaluate.out, "Report JSON; raw scores go to <out>.scores")->required();
  e->add_option("--fusion-weight", evaluate.fusion_weight, "Share of the global score")
      ->capture_default_str();

  GradcheckArgs gradcheck;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  g->add_option("--config", gradcheck.config);
  g->add_option("--seeds", gradcheck.seeds)->capture_default_str();
  g->add_option("--out", gradcheck.out, "Optional JSON table");
  g->add_flag("--inject-wrong-sign", gradcheck.inject_wrong_sign)->group("");

  FuseArgs fuse;
  auto* f = app.add_subcommand("fuse", "Weighted fusion of two raw score files");
  f->add_option("--a", fuse.a)->required();
  f->add_option("--b", fuse.b)->required();
  f->add_option("--weight", fuse.weight)->capture_default_str();
  f->add_option("--out", fuse.out)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) return app.exit(ex, out, err);
    err << "t2ipal: " << ex.what() << "\n";
    return kExitIo;
  }

  try {
    if (*p) return cmd_prepare(prepare, out);
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(train, out);
    if (*e) return cmd_eval(evaluate, out);
    if (*g) return cmd_gradcheck(gradcheck, out);
    if (*f) return cmd_fuse(fuse, out);
  } catch (const IoError& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitIo;
  } catch (const FormatError& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitIo;
  } catch (const ParseError& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitIo;
  } catch (const InvalidArgument& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitSemantic;
  } catch (const ConsistencyError& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitSemantic;
  } catch (const DegenerateInput& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitSemantic;
  } catch (const std::exception& ex) {
    err << "t2ipal: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace t2ipal::cli
