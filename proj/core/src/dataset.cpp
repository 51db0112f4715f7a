#include "repr_robust/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "binary_io.hpp"
#include "repr_robust/error.hpp"
#include "repr_robust/parallel.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

void SynthSpec::validate() const {
  if (side < 2) throw DomainError("synth: side must be at least 2");
  if (channels < 1) throw DomainError("synth: channels must be positive");
  if (classes < 2) throw DomainError("synth: need at least 2 classes");
  if (samples_per_class < 1) throw DomainError("synth: samples_per_class must be positive");
  if (!(noise >= 0.0 && noise <= 1.0)) throw DomainError("synth: noise must lie in [0,1]");
  if (!patterns.empty() && patterns.size() != classes) {
    throw DomainError("synth: " + std::to_string(patterns.size()) + " patterns for " + std::to_string(classes) +
                      " classes");
  }
}

std::vector<ClassPattern> SynthSpec::resolved_patterns() const {
  if (!patterns.empty()) return patterns;
  Rng rng(derive_seed(seed, "patterns"));
  const double turn = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tilt = rng.uniform(0.0, std::numbers::pi);
  std::vector<ClassPattern> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double share = static_cast<double>(c) / static_cast<double>(classes);
    const double a = turn + 2.0 * std::numbers::pi * share;
    out[c].center_x = 0.5 + 0.22 * std::cos(a);
    out[c].center_y = 0.5 + 0.22 * std::sin(a);
    out[c].orientation = tilt + std::numbers::pi * share;
    out[c].frequency = 0.30 + 0.15 * share;
  }
  return out;
}

SynthSpec reference_synth_spec() { return SynthSpec{}; }

void to_json(nlohmann::json& j, const ClassPattern& p) {
  j = {{"center_x", p.center_x}, {"center_y", p.center_y}, {"orientation", p.orientation}, {"frequency", p.frequency}};
}

void from_json(const nlohmann::json& j, ClassPattern& p) {
  p.center_x = j.at("center_x").get<double>();
  p.center_y = j.at("center_y").get<double>();
  p.orientation = j.at("orientation").get<double>();
  p.frequency = j.at("frequency").get<double>();
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"side", s.side},   {"channels", s.channels}, {"classes", s.classes}, {"samples_per_class", s.samples_per_class},
       {"noise", s.noise}, {"seed", s.seed},         {"patterns", s.patterns}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  const SynthSpec d;
  s.side = j.value("side", d.side);
  s.channels = j.value("channels", d.channels);
  s.classes = j.value("classes", d.classes);
  s.samples_per_class = j.value("samples_per_class", d.samples_per_class);
  s.noise = j.value("noise", d.noise);
  s.seed = j.value("seed", d.seed);
  s.patterns = j.value("patterns", std::vector<ClassPattern>{});
}

namespace {

// Renders one sample into `out`. With noise 0 no random numbers are drawn.
void render(const SynthSpec& spec, const ClassPattern& p, std::uint64_t stream, std::span<double> out) {
  const double side = static_cast<double>(spec.side);
  Rng rng(stream);
  double cx = p.center_x, cy = p.center_y, phase = 0.0;
  if (spec.noise > 0.0) {
    cx += spec.noise * rng.normal();
    cy += spec.noise * rng.normal();
    phase = std::numbers::pi * std::min(1.0, 10.0 * spec.noise) * rng.uniform(-1.0, 1.0);
  }
  const double width = kBlobWidth * side;
  const double kx = 2.0 * std::numbers::pi * p.frequency * std::cos(p.orientation);
  const double ky = 2.0 * std::numbers::pi * p.frequency * std::sin(p.orientation);
  const std::size_t plane = spec.side * spec.side;
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    const double channel_phase = phase + static_cast<double>(ch) * std::numbers::pi / 3.0;
    for (std::size_t r = 0; r < spec.side; ++r) {
      for (std::size_t c = 0; c < spec.side; ++c) {
        const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
        const double dx = x - cx * side, dy = y - cy * side;
        const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        const double texture = std::sin(kx * x + ky * y + channel_phase);
        out[ch * plane + r * spec.side + c] = kBaseLevel + kBlobAmplitude * blob + kTextureAmplitude * texture;
      }
    }
  }
  if (spec.noise > 0.0) {
    for (double& v : out) v += spec.noise * rng.uniform(-1.0, 1.0);
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

Dataset generate(const SynthSpec& spec, std::size_t workers) {
  spec.validate();
  const auto patterns = spec.resolved_patterns();
  const std::size_t n = spec.classes * spec.samples_per_class;
  Dataset d;
  d.images = Tensor({n, spec.image_size()});
  d.labels.resize(n);
  d.ids.resize(n);
  d.classes = spec.classes;
  d.side = spec.side;
  d.channels = spec.channels;
  parallel_for(workers, n, [&](std::size_t i) {
    const std::size_t c = i / spec.samples_per_class;
    d.labels[i] = c;
    d.ids[i] = i;
    render(spec, patterns[c], derive_seed(spec.seed, "sample", i), d.images.row_span(i));
  });
  return d;
}

Tensor class_prototype(const SynthSpec& spec, std::size_t c) {
  spec.validate();
  if (c >= spec.classes) throw DomainError("synth: class " + std::to_string(c) + " out of range");
  SynthSpec clean = spec;
  clean.noise = 0.0;
  Tensor out({spec.image_size()});
  render(clean, spec.resolved_patterns()[c], 0, out.data());
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& positions) const {
  Dataset out;
  out.classes = classes;
  out.side = side;
  out.channels = channels;
  const std::size_t dim = images.dim(1);
  out.images = Tensor({positions.size(), dim});
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const std::size_t p = positions[k];
    if (p >= size()) throw DomainError("dataset: position " + std::to_string(p) + " out of range");
    std::copy_n(images.row_span(p).begin(), dim, out.images.row_span(k).begin());
    out.labels.push_back(labels[p]);
    out.ids.push_back(ids[p]);
  }
  return out;
}

std::vector<std::size_t> Dataset::positions_of_class(std::size_t c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == c) out.push_back(i);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DomainError("split: fraction must lie in (0,1), got " + std::to_string(train_fraction));
  }
  std::vector<std::size_t> train, eval;
  for (std::size_t c = 0; c < data.classes; ++c) {
    auto members = data.positions_of_class(c);
    Rng rng(derive_seed(seed, "split", c));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const auto take = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    eval.insert(eval.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
  return {data.subset(train), data.subset(eval)};
}

void save_dataset(const std::filesystem::path& path, const Dataset& data, const nlohmann::json& provenance) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for writing");
  const std::string header = nlohmann::json{{"classes", data.classes},
                                            {"side", data.side},
                                            {"channels", data.channels},
                                            {"provenance", provenance}}
                                 .dump();
  os.write("URDS", 4);
  detail::write_le<std::uint32_t>(os, kDatasetVersion);
  detail::write_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  const std::uint64_t n = data.size(), dim = n ? data.images.dim(1) : 0;
  detail::write_le<std::uint64_t>(os, n);
  detail::write_le<std::uint64_t>(os, dim);
  detail::write_doubles(os, data.images.values().data(), n * dim);
  for (auto l : data.labels) detail::write_le<std::uint64_t>(os, l);
  for (auto i : data.ids) detail::write_le<std::uint64_t>(os, i);
  if (!os) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  if (detail::read_bytes(is, 4, "magic") != "URDS") {
    throw FormatError(FormatError::Kind::BadMagic, path.string() + " is not a dataset file");
  }
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kDatasetVersion) {
    throw FormatError(FormatError::Kind::BadVersion, "unsupported dataset version " + std::to_string(version));
  }
  const auto header_len = detail::read_le<std::uint64_t>(is, "header length");
  if (header_len > detail::remaining(is)) throw FormatError(FormatError::Kind::Truncated, "truncated header");
  Dataset d;
  try {
    const auto j = nlohmann::json::parse(detail::read_bytes(is, header_len, "header"));
    d.classes = j.at("classes").get<std::size_t>();
    d.side = j.at("side").get<std::size_t>();
    d.channels = j.at("channels").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("dataset header: ") + e.what());
  }
  const auto n = detail::read_le<std::uint64_t>(is, "sample count");
  const auto dim = detail::read_le<std::uint64_t>(is, "image size");
  if (n && dim != d.side * d.side * d.channels) {
    throw FormatError(FormatError::Kind::CountMismatch, "dataset image size does not match its header");
  }
  if ((n * dim + 2 * n) * 8 != detail::remaining(is)) {
    throw FormatError(FormatError::Kind::Truncated, "dataset payload has the wrong length");
  }
  d.images = Tensor({n, dim}, detail::read_doubles(is, n * dim, "pixels"));
  d.labels.resize(n);
  d.ids.resize(n);
  for (auto& l : d.labels) {
    l = detail::read_le<std::uint64_t>(is, "labels");
    if (l >= d.classes) throw FormatError(FormatError::Kind::BadHeader, "label out of range");
  }
  for (auto& i : d.ids) i = detail::read_le<std::uint64_t>(is, "ids");
  return d;
}

}  // namespace repr_robust
