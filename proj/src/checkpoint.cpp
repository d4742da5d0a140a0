#include "spdnet/checkpoint.hpp"

#include "binary_io.hpp"
#include "spdnet/errors.hpp"

#include <fstream>
#include <iterator>

namespace spdnet {

namespace detail {

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path + " for reading");
  return Bytes(std::istreambuf_iterator<char>(in),
               std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

}  // namespace detail

namespace {

using detail::ByteReader;
using detail::ByteWriter;

void write_config(ByteWriter& w, const NetworkConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.backbone.size()));
  for (const auto& [d_in, d_out] : c.backbone) {
    w.u32(static_cast<std::uint32_t>(d_in));
    w.u32(static_cast<std::uint32_t>(d_out));
  }
  w.u32(static_cast<std::uint32_t>(c.depth));
  w.u32(static_cast<std::uint32_t>(c.smae_up));
  w.u32(static_cast<std::uint32_t>(c.smae_down));
  w.f64(c.eps);
  w.f64(c.lambda1);
  w.f64(c.lambda2);
  w.u32(static_cast<std::uint32_t>(c.attention));
  w.u32(static_cast<std::uint32_t>(c.classes));
  w.u32(static_cast<std::uint32_t>(c.lem_grad));
  w.u32(static_cast<std::uint32_t>(c.smx_grad));
  w.u32(static_cast<std::uint32_t>(c.phi));
  w.u32(c.strict_degenerate ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(c.batch_reduction));
}

template <typename Enum>
Enum read_enum(ByteReader& r, const char* field, std::uint32_t count) {
  const std::size_t at = r.offset();
  const std::uint32_t v = r.u32(field);
  if (v >= count) {
    throw FormatError(std::string("invalid value for ") + field, at);
  }
  return static_cast<Enum>(v);
}

NetworkConfig read_config(ByteReader& r) {
  NetworkConfig c;
  const std::uint32_t n = r.u32("backbone size");
  if (n == 0 || n > 1024) {
    throw FormatError("implausible backbone size", r.offset() - 4);
  }
  c.backbone.clear();
  for (std::uint32_t k = 0; k < n; ++k) {
    const int d_in = static_cast<int>(r.u32("backbone d_in"));
    const int d_out = static_cast<int>(r.u32("backbone d_out"));
    c.backbone.emplace_back(d_in, d_out);
  }
  c.depth = static_cast<int>(r.u32("depth"));
  c.smae_up = static_cast<int>(r.u32("smae_up"));
  c.smae_down = static_cast<int>(r.u32("smae_down"));
  c.eps = r.f64("eps");
  c.lambda1 = r.f64("lambda1");
  c.lambda2 = r.f64("lambda2");
  c.attention = read_enum<AttentionMode>(r, "attention", 3);
  c.classes = static_cast<int>(r.u32("classes"));
  c.lem_grad = read_enum<GradMode>(r, "lem_grad", 2);
  c.smx_grad = read_enum<GradMode>(r, "smx_grad", 2);
  c.phi = read_enum<PhiVariant>(r, "phi", 2);
  c.strict_degenerate = read_enum<int>(r, "strict_degenerate", 2) != 0;
  c.batch_reduction = read_enum<BatchReduction>(r, "batch_reduction", 2);
  return c;
}

Matrix read_tensor(ByteReader& r, Eigen::Index rows, Eigen::Index cols,
                   const char* field) {
  const std::size_t at = r.offset();
  const std::uint32_t rr = r.u32(field);
  const std::uint32_t cc = r.u32(field);
  if (rr != rows || cc != cols) {
    throw FormatError(std::string("unexpected shape for ") + field, at);
  }
  return r.row_major(rows, cols, field);
}

StiefelParam read_stiefel(ByteReader& r, int rows, int cols,
                          const char* field) {
  const std::size_t at = r.offset();
  Matrix m = read_tensor(r, rows, cols, field);
  try {
    return StiefelParam(m);
  } catch (const PreconditionError& e) {
    throw FormatError(std::string(field) + ": " + e.what(), at);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_model(const NetworkConfig& config,
                                       const ModelState& state) {
  config.validate();
  check_state(state, config);
  ByteWriter w;
  w.magic("SPDM");
  w.u32(kModelFormatVersion);
  write_config(w, config);
  for (const auto& b : state.backbone) w.matrix(b.matrix());
  for (const auto& p : state.smae) {
    w.matrix(p.down.matrix());
    w.matrix(p.up.matrix());
  }
  for (const auto& h : state.heads) {
    w.matrix(h.weight);
    w.matrix(h.bias);
  }
  return w.take();
}

Checkpoint decode_model(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.magic("SPDM", "model file");
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " +
                          std::to_string(version),
                      4);
  }
  const std::size_t config_at = r.offset();
  Checkpoint ck;
  ck.config = read_config(r);
  try {
    ck.config.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(),
                      config_at);
  }
  const NetworkConfig& c = ck.config;
  for (const auto& [d_in, d_out] : c.backbone) {
    ck.state.backbone.push_back(read_stiefel(r, d_in, d_out, "backbone weight"));
  }
  for (int e = 0; e < c.depth; ++e) {
    SmaeParams p;
    p.down = read_stiefel(r, c.smae_up, c.smae_down, "SMAE down-map");
    p.up = read_stiefel(r, c.smae_up, c.smae_down, "SMAE up-map");
    ck.state.smae.push_back(std::move(p));
  }
  for (int e = 0; e < c.depth; ++e) {
    ClassifierHead h;
    h.weight = read_tensor(r, c.classes, c.head_inputs(), "classifier weight");
    h.bias = read_tensor(r, c.classes, 1, "classifier bias");
    ck.state.heads.push_back(std::move(h));
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after model data", r.offset());
  }
  return ck;
}

void save_model(const std::string& path, const NetworkConfig& config,
                const ModelState& state) {
  detail::write_file(path, encode_model(config, state));
}

Checkpoint load_model(const std::string& path) {
  return decode_model(detail::read_file(path));
}

}  // namespace spdnet
