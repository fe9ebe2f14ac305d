#include <limits>
#include <string>

#include "t2ipal/binary_io.hpp"
#include "t2ipal/encoders.hpp"
#include "t2ipal/errors.hpp"

namespace t2ipal::encoders {

namespace {

constexpr std::string_view kMagic = "T2IF";
constexpr std::uint16_t kVersion = 1;

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidArgument(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string encode_feature_file(const std::vector<FeatureSet>& samples) {
  std::size_t num_classes = 0, dim = 0, slots = 0;
  if (!samples.empty()) {
    num_classes = samples.front().labels.size();
    dim = samples.front().global.size();
    slots = samples.front().local.rows();
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.labels.size() != num_classes || s.global.size() != dim || s.local.rows() != slots ||
        s.local.cols() != dim) {
      throw ConsistencyError("sample " + std::to_string(i) +
                             " does not share C/D/N with the first sample");
    }
  }
  binary::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u32(checked_u32(samples.size(), "n_samples"));
  w.u32(checked_u32(num_classes, "C"));
  w.u32(checked_u32(dim, "D"));
  w.u32(checked_u32(slots, "N"));
  for (const auto& s : samples) {
    for (auto l : s.labels) {
      if (l > 1) throw InvalidArgument("labels must be 0/1");
      w.u8(l);
    }
    for (double v : s.global) w.f32(static_cast<float>(v));
    for (double v : s.local.data()) w.f32(static_cast<float>(v));
  }
  return w.buffer();
}

std::vector<FeatureSet> decode_feature_file(std::string bytes) {
  binary::ByteReader r(std::move(bytes));
  const std::string magic = r.bytes(kMagic.size(), "magic");
  if (magic != kMagic) throw FormatError("bad magic, expected \"T2IF\"", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("n_samples");
  const std::uint32_t num_classes = r.u32("C");
  const std::size_t dim_at = r.offset();
  const std::uint32_t dim = r.u32("D");
  const std::uint32_t slots = r.u32("N");
  if (count > 0 && (num_classes == 0 || dim == 0 || slots == 0)) {
    throw FormatError("zero C, D or N with a non-empty sample list", dim_at);
  }
  const std::size_t per_sample =
      num_classes + 4ULL * dim + 4ULL * static_cast<std::size_t>(slots) * dim;
  if (count > 0 && r.remaining() / per_sample < count) {
    throw FormatError("truncated file: header declares " + std::to_string(count) +
                          " samples but only " + std::to_string(r.remaining() / per_sample) +
                          " complete payloads follow",
                      r.offset() + (r.remaining() / per_sample) * per_sample);
  }
  std::vector<FeatureSet> samples;
  samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureSet s{std::vector<double>(dim), Tensor::matrix(slots, dim),
                 std::vector<std::uint8_t>(num_classes)};
    for (auto& l : s.labels) {
      const std::size_t at = r.offset();
      l = r.u8("labels");
      if (l > 1) throw FormatError("label byte must be 0 or 1", at);
    }
    for (double& v : s.global) v = r.f32("global feature");
    for (double& v : s.local.data()) v = r.f32("local features");
    samples.push_back(std::move(s));
  }
  r.expect_end();
  return samples;
}

void write_feature_file(const std::vector<FeatureSet>& samples, const std::filesystem::path& path) {
  binary::ByteWriter w;
  w.bytes(encode_feature_file(samples));
  w.save(path);
}

std::vector<FeatureSet> read_feature_file(const std::filesystem::path& path) {
  auto reader = binary::ByteReader::from_file(path);
  return decode_feature_file(reader.bytes(reader.remaining(), "file"));
}

}  // namespace t2ipal::encoders
