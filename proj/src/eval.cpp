#include "t2ipal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "t2ipal/binary_io.hpp"
#include "t2ipal/errors.hpp"
#include "t2ipal/numerics.hpp"

namespace t2ipal::eval {

Predictor::Predictor(const training::Checkpoint& ckpt, double global_weight)
    : num_classes_(ckpt.num_classes()),
      spec_(ckpt.encoder),
      hp_(ckpt.hp),
      prototypes_{ckpt.params.prototypes},
      global_weight_(global_weight) {
  if (!(global_weight >= 0.0 && global_weight <= 1.0)) {
    throw InvalidArgument("fusion weight must lie in [0, 1]");
  }
  const encoders::TextEncoder encoder(spec_);
  embeddings_ = model::encode_class_embeddings(ckpt.prompts(), encoder);
}

model::SimilarityBundle Predictor::bundle(const encoders::FeatureSet& features) const {
  if (features.global.size() != spec_.feature_dim || features.local.cols() != spec_.feature_dim) {
    throw ConsistencyError("feature width " + std::to_string(features.global.size()) +
                           " does not match checkpoint D = " + std::to_string(spec_.feature_dim));
  }
  if (!features.labels.empty() && features.labels.size() != num_classes_) {
    throw ConsistencyError("sample has " + std::to_string(features.labels.size()) +
                           " labels, checkpoint has " + std::to_string(num_classes_) + " classes");
  }
  return model::forward_branch(features, embeddings_, prototypes_, hp_);
}

std::vector<double> Predictor::scores(const encoders::FeatureSet& features) const {
  const auto b = bundle(features);
  std::vector<double> out(num_classes_);
  for (std::size_t i = 0; i < num_classes_; ++i) {
    out[i] = global_weight_ * b.s[i] + (1.0 - global_weight_) * b.s_combined[i];
  }
  return out;
}

std::vector<double> infer(const encoders::FeatureSet& features, const training::Checkpoint& ckpt,
                          double global_weight) {
  return Predictor(ckpt, global_weight).scores(features);
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels,
                                        std::span<const std::uint64_t> ids) {
  if (scores.size() != labels.size() || (!ids.empty() && ids.size() != scores.size())) {
    throw InvalidArgument("average_precision: scores, labels and ids must have equal length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) { return ids.empty() ? std::uint64_t{i} : ids[i]; };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return key(a) < key(b);
  });
  std::size_t hits = 0;
  double total = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!labels[order[rank]]) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) return std::nullopt;
  return total / static_cast<double>(hits);
}

EvalReport mean_average_precision(const std::vector<ScoreRecord>& records) {
  if (records.empty()) throw InvalidArgument("mean_average_precision: no records");
  const std::size_t num_classes = records.front().scores.size();
  for (const auto& r : records) {
    if (r.scores.size() != num_classes || r.labels.size() != num_classes) {
      throw InvalidArgument("mean_average_precision: records disagree on the class count");
    }
  }
  EvalReport report;
  report.samples = records.size();
  std::vector<double> column(records.size());
  std::vector<std::uint8_t> truth(records.size());
  std::vector<std::uint64_t> ids(records.size());
  for (std::size_t n = 0; n < records.size(); ++n) ids[n] = records[n].id;
  double total = 0.0;
  std::size_t eligible = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t positives = 0;
    for (std::size_t n = 0; n < records.size(); ++n) {
      column[n] = records[n].scores[c];
      truth[n] = records[n].labels[c];
      positives += truth[n] ? 1 : 0;
    }
    auto ap = average_precision(column, truth, ids);
    report.per_class_ap.push_back(ap);
    report.positives.push_back(positives);
    if (ap) {
      total += *ap;
      ++eligible;
    } else {
      report.excluded.push_back(c);
    }
  }
  if (eligible == 0) throw InvalidArgument("mean_average_precision: no class has a positive sample");
  report.map = total / static_cast<double>(eligible);
  return report;
}

nlohmann::ordered_json report_to_json(const EvalReport& report,
                                      const std::vector<std::string>& class_names) {
  if (class_names.size() != report.per_class_ap.size()) {
    throw InvalidArgument("report_to_json: class name count does not match the report");
  }
  nlohmann::ordered_json out;
  out["map"] = report.map;
  out["per_class"] = nlohmann::ordered_json::array();
  out["excluded"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (report.per_class_ap[c]) {
      nlohmann::ordered_json entry;
      entry["name"] = class_names[c];
      entry["ap"] = *report.per_class_ap[c];
      entry["positives"] = report.positives[c];
      out["per_class"].push_back(std::move(entry));
    } else {
      out["excluded"].push_back(class_names[c]);
    }
  }
  out["samples"] = report.samples;
  out["metric"] = "all-points average precision";
  return out;
}

std::vector<double> min_max_normalize(std::span<const double> v) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  const double range = *hi - *lo;
  if (range > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  }
  return out;
}

std::vector<double> fuse_scores(std::span<const double> a, std::span<const double> b, double w) {
  if (a.size() != b.size()) throw InvalidArgument("fuse_scores: length mismatch");
  if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("fuse_scores: weight must lie in [0, 1]");
  auto na = min_max_normalize(a);
  const auto nb = min_max_normalize(b);
  for (std::size_t i = 0; i < na.size(); ++i) na[i] = w * na[i] + (1.0 - w) * nb[i];
  return na;
}

ModalityGapReport modality_gap_report(const std::vector<encoders::FeatureSet>& features,
                                      const training::Checkpoint& ckpt) {
  if (features.empty()) throw InvalidArgument("modality_gap_report: no samples");
  const Predictor predictor(ckpt);
  const Tensor& G = predictor.embeddings().global;
  ModalityGapReport report;
  double raw_total = 0.0, attended_total = 0.0;
  for (const auto& f : features) {
    if (f.labels.size() != G.rows()) {
      throw ConsistencyError("modality_gap_report: sample label count does not match checkpoint");
    }
    const auto b = predictor.bundle(f);
    double raw_best = -2.0, attended_best = -2.0;
    for (std::size_t i = 0; i < G.rows(); ++i) {
      if (!f.labels[i]) continue;
      raw_best = std::max(raw_best, cosine(f.global, G.row(i)));
      attended_best = std::max(attended_best, cosine(b.H.row(i), G.row(i)));
    }
    if (raw_best < -1.5) continue;  // unlabeled sample
    raw_total += raw_best;
    attended_total += attended_best;
    ++report.samples;
  }
  if (report.samples == 0) throw InvalidArgument("modality_gap_report: no labeled samples");
  report.raw_cosine = raw_total / static_cast<double>(report.samples);
  report.attended_cosine = attended_total / static_cast<double>(report.samples);
  return report;
}

namespace {
constexpr std::string_view kScoreMagic = "T2IS";
constexpr std::uint16_t kScoreVersion = 1;
}  // namespace

void write_score_file(const std::vector<ScoreRecord>& records, const std::filesystem::path& path) {
  const std::size_t num_classes = records.empty() ? 0 : records.front().scores.size();
  binary::ByteWriter w;
  w.bytes(kScoreMagic);
  w.u16(kScoreVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(num_classes));
  for (const auto& r : records) {
    if (r.scores.size() != num_classes || r.labels.size() != num_classes) {
      throw InvalidArgument("write_score_file: records disagree on the class count");
    }
    for (auto l : r.labels) w.u8(l);
    for (double s : r.scores) w.f64(s);
  }
  w.save(path);
}

std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path) {
  auto r = binary::ByteReader::from_file(path);
  if (r.bytes(kScoreMagic.size(), "magic") != kScoreMagic) {
    throw FormatError("bad magic, expected \"T2IS\"", 0);
  }
  const std::size_t version_at = r.offset();
  if (r.u16("version") != kScoreVersion) throw FormatError("unsupported version", version_at);
  const std::uint32_t count = r.u32("n_samples");
  const std::uint32_t num_classes = r.u32("C");
  std::vector<ScoreRecord> records;
  for (std::uint32_t n = 0; n < count; ++n) {
    ScoreRecord rec{std::vector<double>(num_classes), std::vector<std::uint8_t>(num_classes), n};
    for (auto& l : rec.labels) {
      const std::size_t at = r.offset();
      l = r.u8("labels");
      if (l > 1) throw FormatError("label byte must be 0 or 1", at);
    }
    for (double& s : rec.scores) s = r.f64("scores");
    records.push_back(std::move(rec));
  }
  r.expect_end();
  return records;
}

}  // namespace t2ipal::eval
