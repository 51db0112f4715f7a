#include "repr_robust/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "repr_robust/error.hpp"
#include "repr_robust/parallel.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

Tensor RepresentationModel::evaluate(const Tensor& x) const {
  const bool single = x.rank() == 1;
  Graph g;
  const Var in = g.constant(single ? x.reshaped({1, x.size()}) : x);
  Tensor out = forward(g, in).value();
  return single ? out.reshaped({out.size()}) : out;
}

Tensor RepresentationModel::evaluate_rows(const Tensor& x, std::size_t workers) const {
  if (x.rank() != 2) throw ShapeError("evaluate_rows: expected [n, d], got " + to_string(x.shape()));
  constexpr std::size_t kBlock = 64;
  const std::size_t n = x.dim(0), d = x.dim(1), k = representation_dim();
  Tensor out({n, k});
  parallel_for(workers, (n + kBlock - 1) / kBlock, [&](std::size_t b) {
    const std::size_t lo = b * kBlock, hi = std::min(n, lo + kBlock);
    std::vector<double> rows(x.values().begin() + static_cast<std::ptrdiff_t>(lo * d),
                             x.values().begin() + static_cast<std::ptrdiff_t>(hi * d));
    const Tensor r = evaluate(Tensor({hi - lo, d}, std::move(rows)));
    std::copy(r.values().begin(), r.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(lo * k));
  });
  return out;
}

std::string to_string(Architecture a) { return a == Architecture::Mlp ? "mlp" : "cnn"; }

Architecture parse_architecture(const std::string& s) {
  if (s == "mlp") return Architecture::Mlp;
  if (s == "cnn") return Architecture::Cnn;
  throw DomainError("unknown architecture '" + s + "' (expected mlp or cnn)");
}

void EncoderSpec::validate() const {
  if (input_side == 0) throw DomainError("encoder spec: input_side must be >= 1");
  if (channels != 1 && channels != 3) throw DomainError("encoder spec: channels must be 1 or 3");
  if (representation_dim < 2) throw DomainError("encoder spec: representation_dim must be >= 2");
  for (std::size_t h : hidden) {
    if (h == 0) throw DomainError("encoder spec: layer sizes must be >= 1");
  }
  if (architecture == Architecture::Cnn) {
    if (hidden.empty()) throw DomainError("encoder spec: cnn needs at least one conv block");
    if (input_side % (std::size_t{1} << hidden.size()) != 0) {
      throw DomainError("encoder spec: input_side " + std::to_string(input_side) +
                        " not divisible by 2^" + std::to_string(hidden.size()));
    }
  }
}

void to_json(nlohmann::json& j, const EncoderSpec& s) {
  j = nlohmann::json{{"architecture", to_string(s.architecture)},
                     {"input_side", s.input_side},
                     {"channels", s.channels},
                     {"hidden", s.hidden},
                     {"representation_dim", s.representation_dim},
                     {"normalize_output", s.normalize_output},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
  EncoderSpec d;
  s.architecture = parse_architecture(j.value("architecture", to_string(d.architecture)));
  s.input_side = j.value("input_side", d.input_side);
  s.channels = j.value("channels", d.channels);
  s.hidden = j.value("hidden", d.hidden);
  s.representation_dim = j.value("representation_dim", d.representation_dim);
  s.normalize_output = j.value("normalize_output", d.normalize_output);
  s.seed = j.value("seed", d.seed);
}

std::vector<ParameterBlock> parameter_layout(const EncoderSpec& spec) {
  spec.validate();
  std::vector<ParameterBlock> blocks;
  std::size_t offset = 0;
  auto push = [&](std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, bool bias) {
    const std::size_t n = shape_size(shape);
    blocks.push_back({std::move(name), std::move(shape), offset, fan_in, fan_out, bias});
    offset += n;
  };

  std::size_t features = spec.input_size();
  if (spec.architecture == Architecture::Mlp) {
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
      const std::size_t w = spec.hidden[l];
      push("dense" + std::to_string(l) + ".weight", {features, w}, features, w, false);
      push("dense" + std::to_string(l) + ".bias", {w}, features, w, true);
      features = w;
    }
  } else {
    constexpr std::size_t k = 3;
    std::size_t in_ch = spec.channels;
    std::size_t side = spec.input_side;
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
      const std::size_t out_ch = spec.hidden[l];
      push("conv" + std::to_string(l) + ".weight", {out_ch, in_ch, k, k}, in_ch * k * k,
           out_ch * k * k, false);
      push("conv" + std::to_string(l) + ".bias", {out_ch}, in_ch * k * k, out_ch * k * k, true);
      in_ch = out_ch;
      side /= 2;
    }
    features = in_ch * side * side;
  }
  push("head.weight", {features, spec.representation_dim}, features, spec.representation_dim, false);
  push("head.bias", {spec.representation_dim}, features, spec.representation_dim, true);
  return blocks;
}

std::size_t parameter_count(const EncoderSpec& spec) {
  const auto layout = parameter_layout(spec);
  const auto& last = layout.back();
  return last.offset + shape_size(last.shape);
}

Encoder::Encoder(EncoderSpec spec) : spec_(std::move(spec)), layout_(parameter_layout(spec_)) {
  parameters_.assign(parameter_count(spec_), 0.0);
  Rng rng(derive_seed(spec_.seed, "encoder-init"));
  for (const auto& b : layout_) {
    if (b.bias) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(b.fan_in + b.fan_out));
    for (std::size_t i = 0; i < shape_size(b.shape); ++i) {
      parameters_[b.offset + i] = rng.uniform(-limit, limit);
    }
  }
}

Encoder::Encoder(EncoderSpec spec, std::vector<double> parameters)
    : spec_(std::move(spec)), layout_(parameter_layout(spec_)), parameters_(std::move(parameters)) {
  if (parameters_.size() != parameter_count(spec_)) {
    throw DomainError("encoder: spec needs " + std::to_string(parameter_count(spec_)) +
                      " parameters, got " + std::to_string(parameters_.size()));
  }
}

std::vector<Var> Encoder::bind(Graph& g, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(layout_.size());
  for (const auto& b : layout_) {
    const auto first = parameters_.begin() + static_cast<std::ptrdiff_t>(b.offset);
    Tensor t(b.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(shape_size(b.shape))));
    vars.push_back(trainable ? g.leaf(std::move(t)) : g.constant(std::move(t)));
  }
  return vars;
}

void Encoder::check_input(const Tensor& x) const {
  const std::size_t n = input_size();
  const bool ok = (x.rank() == 1 && x.size() == n) || (x.rank() == 2 && x.dim(1) == n);
  if (!ok) {
    throw ShapeError("encode: input shape " + to_string(x.shape()) + " does not match image size " +
                     std::to_string(n));
  }
  for (double v : x.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("encode: input value " + std::to_string(v) + " outside [0,1]; clip first");
    }
  }
}

Var Encoder::forward(Graph& g, const Var& x) const {
  const auto bound = bind(g, false);
  return forward(g, x, bound);
}

Var Encoder::forward(Graph& g, const Var& x, std::span<const Var> bound) const {
  check_input(x.value());
  const std::size_t batch = x.value().rank() == 1 ? 1 : x.value().dim(0);
  Var h = x.value().rank() == 1 ? reshape(x, {1, input_size()}) : x;
  std::size_t p = 0;
  if (spec_.architecture == Architecture::Mlp) {
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l, p += 2) {
      h = relu(add_bias(matmul(h, bound[p]), bound[p + 1]));
    }
  } else {
    h = reshape(h, {batch, spec_.channels, spec_.input_side, spec_.input_side});
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l, p += 2) {
      h = avg_pool2(relu(conv2d(h, bound[p], bound[p + 1])));
    }
    h = reshape(h, {batch, h.size() / batch});
  }
  (void)g;
  h = add_bias(matmul(h, bound[p]), bound[p + 1]);
  if (spec_.normalize_output) h = normalize_rows(h);
  return h;
}

std::vector<double> Encoder::gather_gradient(const Graph& g, std::span<const Var> bound) const {
  std::vector<double> out(parameters_.size(), 0.0);
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const Tensor gr = g.grad(bound[i]);
    std::copy(gr.data().begin(), gr.data().end(), out.begin() + static_cast<std::ptrdiff_t>(layout_[i].offset));
  }
  return out;
}

Tensor Encoder::encode(const Tensor& x) const {
  check_input(x);
  return evaluate(x);
}

std::uint64_t Encoder::fingerprint() const {
  const std::string header = nlohmann::json(spec_).dump();
  std::uint64_t h = fnv1a64(header);
  for (double v : parameters_) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// --- checkpoint ------------------------------------------------------------

EncoderCheckpoint EncoderCheckpoint::from(const Encoder& encoder, nlohmann::json provenance) {
  EncoderCheckpoint c;
  c.spec = encoder.spec();
  c.parameters.assign(encoder.parameters().begin(), encoder.parameters().end());
  c.provenance = provenance.is_null() ? nlohmann::json::object() : std::move(provenance);
  return c;
}

Encoder EncoderCheckpoint::encoder() const { return Encoder(spec, parameters); }

void save_checkpoint(const std::filesystem::path& path, const EncoderCheckpoint& checkpoint) {
  if (checkpoint.parameters.size() != parameter_count(checkpoint.spec)) {
    throw FormatError(FormatError::Kind::CountMismatch,
                      "save_checkpoint: parameter count does not match spec");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for writing");
  const std::string header =
      nlohmann::json{{"spec", checkpoint.spec}, {"provenance", checkpoint.provenance}}.dump();
  os.write("URRE", 4);
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::write_le<std::uint64_t>(os, checkpoint.parameters.size());
  detail::write_doubles(os, checkpoint.parameters.data(), checkpoint.parameters.size());
  for (const auto& s : checkpoint.sections) {
    if (s.tag.size() != 4) throw FormatError(FormatError::Kind::BadHeader, "section tag must be 4 bytes");
    os.write(s.tag.data(), 4);
    detail::write_le<std::uint64_t>(os, s.payload.size());
    os.write(reinterpret_cast<const char*>(s.payload.data()), static_cast<std::streamsize>(s.payload.size()));
  }
  if (!os) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

EncoderCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  const std::string magic = detail::read_bytes(is, 4, "magic");
  if (magic != "URRE") throw FormatError(FormatError::Kind::BadMagic, path.string() + " is not an encoder checkpoint");
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::BadVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = detail::read_le<std::uint64_t>(is, "header length");
  if (header_len > detail::remaining(is)) throw FormatError(FormatError::Kind::Truncated, "truncated header");
  const std::string header = detail::read_bytes(is, header_len, "header");

  EncoderCheckpoint c;
  try {
    const auto j = nlohmann::json::parse(header);
    c.spec = j.at("spec").get<EncoderSpec>();
    c.provenance = j.value("provenance", nlohmann::json::object());
    c.spec.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("checkpoint header: ") + e.what());
  } catch (const DomainError& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("checkpoint header: ") + e.what());
  }

  const auto count = detail::read_le<std::uint64_t>(is, "parameter count");
  const std::size_t expected = parameter_count(c.spec);
  if (count != expected) {
    throw FormatError(FormatError::Kind::CountMismatch,
                      "checkpoint stores " + std::to_string(count) + " parameters, spec needs " +
                          std::to_string(expected));
  }
  if (count * sizeof(double) > detail::remaining(is)) {
    throw FormatError(FormatError::Kind::Truncated, "truncated parameter block");
  }
  c.parameters = detail::read_doubles(is, count, "parameters");

  while (is.peek() != std::char_traits<char>::eof()) {
    CheckpointSection s;
    s.tag = detail::read_bytes(is, 4, "section tag");
    const auto len = detail::read_le<std::uint64_t>(is, "section length");
    if (len > detail::remaining(is)) throw FormatError(FormatError::Kind::Truncated, "truncated section " + s.tag);
    const std::string bytes = detail::read_bytes(is, len, "section payload");
    s.payload.assign(bytes.begin(), bytes.end());
    c.sections.push_back(std::move(s));
  }
  return c;
}

}  // namespace repr_robust
