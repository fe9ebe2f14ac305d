#include <limits>
#include <string>

#include "t2ipal/binary_io.hpp"
#include "t2ipal/corpus.hpp"
#include "t2ipal/errors.hpp"
#include "t2ipal/training.hpp"

namespace t2ipal::training {

namespace {

constexpr std::string_view kMagic = "T2IC";
constexpr std::uint16_t kVersion = 1;

void write_floats(binary::ByteWriter& w, const Tensor& t) {
  for (double v : t.data()) w.f32(static_cast<float>(v));
}

Tensor read_floats(binary::ByteReader& r, std::size_t rows, std::size_t cols, const char* what) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = r.f32(what);
  return t;
}

std::uint32_t as_u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidArgument("checkpoint dimension does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const std::size_t num_classes = ckpt.num_classes();
  const std::size_t dim = ckpt.encoder.feature_dim;
  const std::size_t token_dim = ckpt.encoder.token_dim;
  const std::size_t context = ckpt.context_length();
  require_shape(ckpt.params.global_context, context, token_dim, "global_context");
  require_shape(ckpt.params.local_context, context, token_dim, "local_context");
  require_shape(ckpt.params.prototypes, num_classes, dim, "prototypes");

  binary::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u32(as_u32(num_classes));
  w.u32(as_u32(dim));
  w.u32(as_u32(token_dim));
  w.u32(as_u32(context));
  w.u32(as_u32(ckpt.encoder.image_grid));
  w.u32(as_u32(ckpt.encoder.text_capacity));
  w.u64(ckpt.encoder.seed);
  w.f64(ckpt.hp.gamma);
  w.f64(ckpt.hp.alpha);
  w.f64(ckpt.hp.beta);
  w.f64(ckpt.hp.eta);
  w.f64(ckpt.hp.tau);
  write_floats(w, ckpt.params.global_context);
  write_floats(w, ckpt.params.local_context);
  write_floats(w, ckpt.params.prototypes);
  w.u32(as_u32(ckpt.class_names.size()));
  for (const auto& name : ckpt.class_names) {
    w.u32(as_u32(name.size()));
    w.bytes(name);
  }
  // Run metadata trailer.
  w.u32(ckpt.epochs_completed);
  w.f64(ckpt.final_loss);
  return w.buffer();
}

Checkpoint decode_checkpoint(std::string bytes) {
  binary::ByteReader r(std::move(bytes));
  if (r.bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError("bad magic, expected \"T2IC\"", 0);
  }
  const std::size_t version_at = r.offset();
  const auto version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  }
  const std::size_t dims_at = r.offset();
  const std::uint32_t num_classes = r.u32("C");
  const std::uint32_t dim = r.u32("D");
  const std::uint32_t token_dim = r.u32("D_tok");
  const std::uint32_t context = r.u32("M");
  const std::uint32_t image_grid = r.u32("N_im");
  const std::uint32_t text_capacity = r.u32("N_te");
  if (num_classes < 2 || dim == 0 || token_dim == 0 || context == 0 || image_grid == 0 ||
      text_capacity == 0) {
    throw FormatError("invalid dimensions (C must be >= 2, others >= 1)", dims_at);
  }

  Checkpoint ckpt;
  ckpt.encoder.feature_dim = dim;
  ckpt.encoder.token_dim = token_dim;
  ckpt.encoder.image_grid = image_grid;
  ckpt.encoder.text_capacity = text_capacity;
  ckpt.encoder.seed = r.u64("encoder seed");
  const std::size_t hp_at = r.offset();
  ckpt.hp.gamma = r.f64("gamma");
  ckpt.hp.alpha = r.f64("alpha");
  ckpt.hp.beta = r.f64("beta");
  ckpt.hp.eta = r.f64("eta");
  ckpt.hp.tau = r.f64("tau");
  try {
    ckpt.hp.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid hyperparameters: ") + e.what(), hp_at);
  }
  ckpt.params.global_context = read_floats(r, context, token_dim, "global_context");
  ckpt.params.local_context = read_floats(r, context, token_dim, "local_context");
  ckpt.params.prototypes = read_floats(r, num_classes, dim, "prototypes");

  const std::size_t names_at = r.offset();
  const std::uint32_t name_count = r.u32("class name count");
  if (name_count != num_classes) {
    throw ConsistencyError("checkpoint header declares C = " + std::to_string(num_classes) +
                           " but lists " + std::to_string(name_count) +
                           " class names (at byte offset " + std::to_string(names_at) + ")");
  }
  for (std::uint32_t i = 0; i < name_count; ++i) {
    const std::uint32_t len = r.u32("class name length");
    ckpt.class_names.push_back(r.bytes(len, "class name"));
  }
  try {
    corpus::CategorySet check(ckpt.class_names);
  } catch (const InvalidArgument& e) {
    throw ConsistencyError(std::string("checkpoint class names: ") + e.what());
  }
  ckpt.epochs_completed = r.u32("epochs completed");
  ckpt.final_loss = r.f64("final loss");
  r.expect_end();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  binary::ByteWriter w;
  w.bytes(encode_checkpoint(ckpt));
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto reader = binary::ByteReader::from_file(path);
  return decode_checkpoint(reader.bytes(reader.remaining(), "file"));
}

}  // namespace t2ipal::training
