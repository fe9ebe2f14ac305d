#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "t2ipal/encoders.hpp"
#include "t2ipal/model.hpp"
#include "t2ipal/training.hpp"

namespace t2ipal::eval {

struct ScoreRecord {
  std::vector<double> scores;        // C
  std::vector<std::uint8_t> labels;  // C
  std::uint64_t id = 0;              // tie-break key for ranking

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// Test-time scorer built from a checkpoint. Class embeddings are encoded once.
class Predictor {
 public:
  // `global_weight` is the share of s in the final score; s̃′ gets the rest.
  explicit Predictor(const training::Checkpoint& ckpt, double global_weight = 0.5);

  model::SimilarityBundle bundle(const encoders::FeatureSet& features) const;
  std::vector<double> scores(const encoders::FeatureSet& features) const;
  const model::ClassEmbeddings& embeddings() const noexcept { return embeddings_; }

 private:
  std::size_t num_classes_;
  encoders::EncoderSpec spec_;
  model::HyperParams hp_;
  model::ClassEmbeddings embeddings_;
  model::PrototypeMatrix prototypes_;
  double global_weight_;
};

std::vector<double> infer(const encoders::FeatureSet& features, const training::Checkpoint& ckpt,
                          double global_weight = 0.5);

/// All-points AP of one class. Samples are ranked by descending score, ties
/// by ascending id (or position when `ids` is empty). Empty when there are
/// no positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels,
                                        std::span<const std::uint64_t> ids = {});

struct EvalReport {
  std::vector<std::optional<double>> per_class_ap;  // empty entries are excluded classes
  std::vector<std::size_t> positives;
  std::vector<std::size_t> excluded;
  double map = 0.0;
  std::size_t samples = 0;
};

/// Mean AP over classes with at least one positive. Throws InvalidArgument
/// when no class qualifies or records disagree on C.
EvalReport mean_average_precision(const std::vector<ScoreRecord>& records);

nlohmann::ordered_json report_to_json(const EvalReport& report,
                                      const std::vector<std::string>& class_names);

/// Min-max normalises each input to [0, 1] (constant vectors map to 0),
/// then returns w·a + (1−w)·b.
std::vector<double> fuse_scores(std::span<const double> a, std::span<const double> b, double w);
std::vector<double> min_max_normalize(std::span<const double> v);

struct ModalityGapReport {
  double raw_cosine = 0.0;       // mean over samples of max over true labels cos(f_g, G_i)
  double attended_cosine = 0.0;  // same with the attended feature H_i in place of f_g
  std::size_t samples = 0;
};

ModalityGapReport modality_gap_report(const std::vector<encoders::FeatureSet>& features,
                                      const training::Checkpoint& ckpt);

/// Raw score file ("T2IS", version 1): u32 n, u32 C, then per record C label
/// bytes and C float64 scores.
void write_score_file(const std::vector<ScoreRecord>& records, const std::filesystem::path& path);
std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path);

}  // namespace t2ipal::eval
