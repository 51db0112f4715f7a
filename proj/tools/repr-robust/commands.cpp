#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "repr_robust/attack.hpp"
#include "repr_robust/certification.hpp"
#include "repr_robust/dataset.hpp"
#include "repr_robust/encoder.hpp"
#include "repr_robust/impersonation.hpp"
#include "repr_robust/measures.hpp"
#include "repr_robust/probe.hpp"
#include "repr_robust/random.hpp"
#include "repr_robust/report.hpp"
#include "repr_robust/training.hpp"

namespace repr_robust::cli {

using json = nlohmann::json;

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "pretrain", "advtrain", "attack", "measure",
                                              "certify",  "probe",    "impersonate", "report"};
  return names;
}

namespace {

std::uint64_t module_seed(std::uint64_t seed, const std::string& command, const std::string& section) {
  return derive_seed(seed, command + "/" + section);
}

// --- configuration ------------------------------------------------------------

void merge_checked(json& into, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config " + (where.empty() ? "root" : where) + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!into.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = into[key];
    if (slot.is_object() && !slot.empty() && value.is_object()) merge_checked(slot, value, path);
    else slot = value;
  }
}

json dataset_defaults() {
  return {{"spec", reference_synth_spec()},
          {"train_fraction", 0.75},
          {"split_seed", 7},
          {"train_path", ""},
          {"eval_path", ""}};
}

json defaults_for(const std::string& command, const json& user) {
  json d = {{"seed", 0}};
  if (command != "report") d["dataset"] = dataset_defaults();
  const bool uses_encoder = command != "gen-data" && command != "pretrain" && command != "report";
  if (uses_encoder) {
    d["checkpoint"] = "";
    d["encoder_id"] = "";
  }
  if (command == "pretrain") {
    EncoderSpec e;
    e.representation_dim = 32;
    e.normalize_output = true;
    d["encoder"] = e;
    d["train"] = TrainConfig{};
    d["encoder_id"] = "standard";
  } else if (command == "advtrain") {
    TrainConfig t;
    t.epochs = 10;
    t.adversarial = AdversarialMode::Targeted;
    d["train"] = t;
  } else if (command == "attack") {
    d["method"] = "u-pgd";
    d["attack"] = AttackConfig{};
    d["samples"] = 64;
    d["dump"] = false;
  } else if (command == "measure") {
    d["measure"] = {
        {"divergence", "l2"},
        {"distribution_samples", 256},
        {"breakaway", {{"enabled", true}, {"samples", 128}, {"attack", default_breakaway_attack()}}},
        {"overlap", {{"enabled", true}, {"pairs", 64}, {"attack", default_overlap_attack()}}},
        {"universal",
         {{"enabled", true},
          {"samples", 128},
          {"alpha", 0.001},
          {"epsilons", {0.05, 0.10}},
          {"iterations", {5, 10}},
          {"seed", 0}}},
        {"relative", {{"enabled", true}, {"samples", 128}, {"attack", default_overlap_attack()}}},
        {"distribution_seed", 0},
        {"sample_seed", 0}};
  } else if (command == "certify") {
    const std::string kind = user.is_object() ? user.value("kind", std::string("classifier")) : "classifier";
    d["kind"] = "classifier";
    d["samples"] = kind == "center" ? 10 : 50;
    d["smoothing"] = kind == "center" ? default_center_smoothing() : default_classifier_smoothing();
    d["distribution_samples"] = 256;
    d["curve_points"] = 51;
    d["sample_seed"] = 0;
    d["distribution_seed"] = 0;
  } else if (command == "probe") {
    d["probe"] = ProbeConfig{};
  } else if (command == "impersonate") {
    d["class_pairs"] = json::array({json::array({0, 1})});
    d["iterations"] = json::array({5});
    d["attack"] = default_impersonation_attack();
    d["dump"] = false;
  } else if (command == "report") {
    d["inputs"] = json::array();
  }
  return d;
}

}  // namespace

json resolve_config(const std::string& command, const json& user, std::uint64_t seed) {
  if (std::find(command_names().begin(), command_names().end(), command) == command_names().end()) {
    throw ConfigError("unknown command '" + command + "'");
  }
  json c = defaults_for(command, user);
  json u = user.is_null() ? json::object() : user;
  if (u.is_object()) u.erase("command");  // a manifest may be fed back as a config
  merge_checked(c, u, "");
  c["seed"] = seed;
  c["command"] = command;
  try {
    if (c.contains("dataset")) c["dataset"]["spec"] = c["dataset"]["spec"].get<SynthSpec>();
    if (command == "pretrain") {
      EncoderSpec e = c["encoder"].get<EncoderSpec>();
      e.seed = module_seed(seed, command, "encoder");
      e.validate();
      c["encoder"] = e;
    }
    if (command == "pretrain" || command == "advtrain") {
      TrainConfig t = c["train"].get<TrainConfig>();
      t.seed = module_seed(seed, command, "train");
      t.attack.seed = module_seed(seed, command, "train-attack");
      t.validate();
      c["train"] = t;
      if (c["encoder_id"].get<std::string>().empty()) c["encoder_id"] = to_string(t.adversarial);
    }
    if (command == "attack") {
      AttackConfig a = c["attack"].get<AttackConfig>();
      a.seed = module_seed(seed, command, "attack");
      a.validate();
      c["attack"] = a;
      const auto m = c["method"].get<std::string>();
      if (m != "u-pgd" && m != "u-fgsm" && m != "batch-info-nce") {
        throw ConfigError("unknown attack method '" + m + "' (expected u-pgd, u-fgsm or batch-info-nce)");
      }
    }
    if (command == "measure") {
      json& m = c["measure"];
      const Divergence d{parse_divergence_kind(m["divergence"].get<std::string>())};
      for (const char* s : {"breakaway", "overlap", "relative"}) {
        AttackConfig a = m[s]["attack"].get<AttackConfig>();
        a.divergence = d;
        a.seed = module_seed(seed, command, s);
        a.validate();
        m[s]["attack"] = a;
      }
      if (m["breakaway"]["attack"]["mode"] != "untargeted") throw ConfigError("measure.breakaway.attack must be untargeted");
      if (m["overlap"]["attack"]["mode"] != "targeted") throw ConfigError("measure.overlap.attack must be targeted");
      if (m["relative"]["attack"]["mode"] != "targeted") throw ConfigError("measure.relative.attack must be targeted");
      m["universal"]["seed"] = module_seed(seed, command, "universal");
      m["distribution_seed"] = module_seed(seed, command, "distribution");
      m["sample_seed"] = module_seed(seed, command, "samples");
    }
    if (command == "certify") {
      const auto kind = c["kind"].get<std::string>();
      if (kind != "classifier" && kind != "center") throw ConfigError("certify kind must be classifier or center");
      SmoothingConfig s = c["smoothing"].get<SmoothingConfig>();
      s.seed = module_seed(seed, command, "smoothing");
      s.validate();
      c["smoothing"] = s;
      c["sample_seed"] = module_seed(seed, command, "samples");
      c["distribution_seed"] = module_seed(seed, command, "distribution");
    }
    if (command == "probe") {
      ProbeConfig p = c["probe"].get<ProbeConfig>();
      p.seed = module_seed(seed, command, "probe");
      c["probe"] = p;
    }
    if (command == "impersonate") {
      AttackConfig a = c["attack"].get<AttackConfig>();
      a.seed = module_seed(seed, command, "attack");
      a.validate();
      if (a.mode != AttackMode::Targeted) throw ConfigError("impersonate.attack must be targeted");
      c["attack"] = a;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

namespace {

std::size_t capped(const json& requested, std::size_t limit) {
  return std::min(requested.get<std::size_t>(), limit);
}

// --- artifacts ----------------------------------------------------------------------

void write_text(const std::filesystem::path& out, const std::string& name, const std::string& text) {
  std::ofstream os(out / name, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::Io, "cannot write " + (out / name).string());
  os << text;
}

void write_json(const std::filesystem::path& out, const std::string& name, const json& j) {
  write_text(out, name, j.dump(2) + "\n");
}

void write_doubles(const std::filesystem::path& out, const std::string& name, const Tensor& t) {
  std::ofstream os(out / name, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::Io, "cannot write " + (out / name).string());
  os.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

struct Split {
  Dataset train, eval;
};

Split load_data(const json& c, std::size_t workers) {
  const json& d = c.at("dataset");
  const auto train_path = d.at("train_path").get<std::string>();
  const auto eval_path = d.at("eval_path").get<std::string>();
  if (!train_path.empty() || !eval_path.empty()) {
    if (train_path.empty() || eval_path.empty()) throw ConfigError("dataset needs both train_path and eval_path");
    return {load_dataset(train_path), load_dataset(eval_path)};
  }
  const Dataset all = generate(d.at("spec").get<SynthSpec>(), workers);
  auto [train, eval] = split(all, d.at("train_fraction").get<double>(), d.at("split_seed").get<std::uint64_t>());
  return {std::move(train), std::move(eval)};
}

LinearProbe probe_from(const EncoderCheckpoint& ck, ProbeVariant v) {
  try {
    return find_probe(ck, v);
  } catch (const DomainError& e) {
    throw ConfigError(std::string(e.what()) + "; run `repr-robust probe` on this checkpoint first");
  }
}

EncoderCheckpoint load_encoder_checkpoint(const json& c) {
  const auto path = c.at("checkpoint").get<std::string>();
  if (path.empty()) throw ConfigError("this command needs a checkpoint (--checkpoint or \"checkpoint\")");
  return load_checkpoint(path);
}

std::string encoder_id(const json& c) {
  const auto id = c.at("encoder_id").get<std::string>();
  if (!id.empty()) return id;
  return std::filesystem::path(c.at("checkpoint").get<std::string>()).parent_path().filename().string();
}

void check_fit(const Encoder& f, const Dataset& d) {
  if (d.images.dim(1) != f.input_size()) {
    throw ConfigError("encoder expects " + std::to_string(f.input_size()) + " pixels, dataset has " +
                      std::to_string(d.images.dim(1)));
  }
}

std::string csv_header(std::initializer_list<const char*> cols) {
  std::string s;
  for (const char* c : cols) s += (s.empty() ? "" : ",") + std::string(c);
  return s + "\n";
}

// --- commands -----------------------------------------------------------------------

json cmd_gen_data(const json& c, const Invocation& inv) {
  const SynthSpec spec = c.at("dataset").at("spec").get<SynthSpec>();
  const Dataset all = generate(spec, inv.workers);
  const auto [train, eval] =
      split(all, c["dataset"]["train_fraction"].get<double>(), c["dataset"]["split_seed"].get<std::uint64_t>());
  save_dataset(inv.out / "dataset.urds", all, {{"spec", spec}});
  save_dataset(inv.out / "train.urds", train, {{"spec", spec}, {"part", "train"}});
  save_dataset(inv.out / "eval.urds", eval, {{"spec", spec}, {"part", "eval"}});
  return {{"samples", all.size()},
          {"train", train.size()},
          {"eval", eval.size()},
          {"fingerprint", fingerprint(all.images)},
          {"patterns", spec.resolved_patterns()}};
}

json cmd_train(const json& c, const Invocation& inv, bool adversarial) {
  const Split data = load_data(c, inv.workers);
  const TrainConfig cfg = c.at("train").get<TrainConfig>();
  TrainState state = adversarial ? state_from_checkpoint(load_encoder_checkpoint(c), cfg)
                                 : initial_state(Encoder(c.at("encoder").get<EncoderSpec>()), cfg);
  check_fit(state.query, data.train);
  const auto log = train(state, data.train, cfg);
  json provenance = training_provenance(cfg, log);
  provenance["encoder_id"] = c.at("encoder_id");
  if (adversarial) provenance["resumed_from"] = c.at("checkpoint");
  save_checkpoint(inv.out / "encoder.urre", to_checkpoint(state, provenance));
  write_text(inv.out, "loss_log.csv", loss_log_csv(log));
  return {{"encoder_id", c.at("encoder_id")},
          {"final_loss", log.back().mean_loss},
          {"epochs_done", state.epochs_done},
          {"encoder_fingerprint", state.query.fingerprint()}};
}

json cmd_attack(const json& c, const Invocation& inv) {
  const Split data = load_data(c, inv.workers);
  const Encoder f = load_encoder_checkpoint(c).encoder();
  check_fit(f, data.eval);
  const AttackConfig cfg = c.at("attack").get<AttackConfig>();
  const auto count = capped(c.at("samples").get<std::size_t>(), data.eval.size());
  const auto idx = sample_indices(data.eval.size(), count, derive_seed(cfg.seed, "samples"));
  const Dataset x = data.eval.subset(idx);
  const Tensor clean = f.evaluate_rows(x.images, inv.workers);
  Tensor targets(clean.shape());
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(clean.row_span((i + 1) % count).begin(), clean.dim(1), targets.row_span(i).begin());
  }
  const bool targeted = cfg.mode == AttackMode::Targeted;
  const auto method = c.at("method").get<std::string>();
  Tensor adv;
  if (method == "u-pgd") adv = u_pgd_batch(f, x.images, cfg, targeted ? &targets : nullptr).adversarial;
  else if (method == "u-fgsm") adv = u_fgsm_batch(f, x.images, cfg, targeted ? &targets : nullptr).adversarial;
  else {
    Graph g;
    const Tensor keys = normalize_rows(g.constant(clean)).value();
    adv = loss_attack_batch(f, x.images, plugins::batch_info_nce(keys, 0.2), cfg).adversarial;
  }
  const Tensor reps = f.evaluate_rows(adv, inv.workers);
  std::ostringstream csv;
  csv.precision(17);
  csv << csv_header({"row", "id", "divergence_to_clean", "divergence_to_target", "linf"});
  std::vector<double> moved;
  for (std::size_t i = 0; i < count; ++i) {
    double linf = 0;
    for (std::size_t t = 0; t < adv.dim(1); ++t) linf = std::max(linf, std::abs(adv.at(i, t) - x.images.at(i, t)));
    const double to_clean = divergence(cfg.divergence, reps.row_span(i), clean.row_span(i));
    const double to_target = divergence(cfg.divergence, reps.row_span(i), targets.row_span(i));
    moved.push_back(to_clean);
    csv << i << ',' << x.ids[i] << ',' << format_number(to_clean) << ',' << format_number(to_target) << ','
        << format_number(linf) << '\n';
  }
  write_text(inv.out, "attack.csv", csv.str());
  if (c.at("dump").get<bool>()) write_doubles(inv.out, "attacked.f64", adv);
  return {{"encoder_id", encoder_id(c)}, {"samples", count}, {"median_divergence_to_clean", median(moved)}};
}

json cmd_measure(const json& c, const Invocation& inv) {
  const Split data = load_data(c, inv.workers);
  const Encoder f = load_encoder_checkpoint(c).encoder();
  check_fit(f, data.eval);
  const json& m = c.at("measure");
  const Divergence d{parse_divergence_kind(m.at("divergence").get<std::string>())};
  const Tensor& images = data.eval.images;
  const std::size_t n = images.dim(0);
  const auto sample_seed = m.at("sample_seed").get<std::uint64_t>();
  RunMeasures report{encoder_id(c), to_string(d.kind), {}};
  json results = {{"encoder_id", report.encoder_id}, {"evaluation_samples", n}};

  if (m["breakaway"]["enabled"].get<bool>()) {
    const auto eval = sample_indices(n, capped(m["breakaway"]["samples"], n),
                                     derive_seed(sample_seed, "breakaway"));
    const auto r = breakaway_and_nearest_neighbor(f, images, eval, m["breakaway"]["attack"].get<AttackConfig>(),
                                                  inv.workers);
    results["breakaway"] = r;
    report.values["breakaway_risk"] = r.breakaway.estimate;
    report.values["nn_accuracy"] = r.nearest_neighbor.estimate;
  }
  if (m["overlap"]["enabled"].get<bool>()) {
    const auto pairs = sample_disjoint_pairs(n, capped(m["overlap"]["pairs"], n / 2),
                                             derive_seed(sample_seed, "overlap"));
    const auto r = overlap_risk_and_margins(f, images, pairs, m["overlap"]["attack"].get<AttackConfig>(), inv.workers);
    results["overlap"] = r;
    report.values["overlap_risk"] = r.risk.estimate;
    if (r.median_margin) report.values["median_margin"] = *r.median_margin;
    std::ostringstream csv;
    csv << csv_header({"i", "j", "to_other", "to_self", "clean", "margin"});
    for (const auto& mr : r.margins) {
      csv << mr.i << ',' << mr.j << ',' << format_number(mr.to_other) << ',' << format_number(mr.to_self) << ','
          << format_number(mr.clean) << ',' << format_number(mr.margin) << '\n';
    }
    write_text(inv.out, "margins.csv", csv.str());
  }
  const bool universal = m["universal"]["enabled"].get<bool>();
  if (universal) {
    const auto dist = build_divergence_distribution(
        f, images, capped(m["distribution_samples"], n), d, m["distribution_seed"], inv.workers);
    const auto eval = sample_indices(n, capped(m["universal"]["samples"], n),
                                     derive_seed(sample_seed, "universal"));
    std::ostringstream curve, values;
    curve << csv_header({"epsilon", "iterations", "median_universal_quantile"});
    values << csv_header({"epsilon", "iterations", "sample", "universal_quantile"});
    json summaries = json::array();
    for (double eps : m["universal"]["epsilons"].get<std::vector<double>>()) {
      for (int it : m["universal"]["iterations"].get<std::vector<int>>()) {
        AttackConfig a;
        a.epsilon = eps;
        a.alpha = m["universal"]["alpha"].get<double>();
        a.iterations = it;
        a.divergence = d;
        a.seed = derive_seed(m["universal"]["seed"].get<std::uint64_t>(), format_number(eps), std::uint64_t(it));
        const auto q = universal_quantiles(f, images, eval, dist, a, inv.workers);
        summaries.push_back(q);
        const std::string setting = "eps=" + format_number(eps) + ",it=" + std::to_string(it);
        report.values["universal_quantile_median@" + setting] = q.median;
        curve << format_number(eps) << ',' << it << ',' << format_number(q.median) << '\n';
        for (std::size_t k = 0; k < q.values.size(); ++k) {
          values << format_number(eps) << ',' << it << ',' << eval[k] << ',' << format_number(q.values[k]) << '\n';
        }
      }
    }
    results["universal_quantiles"] = summaries;
    results["divergence_distribution"] = {{"sample_count", dist.sample_count},
                                          {"pairs", dist.values.size()},
                                          {"median", median(dist.values)}};
    write_text(inv.out, "universal_quantile_curve.csv", curve.str());
    write_text(inv.out, "universal_quantiles.csv", values.str());
  }
  if (m["relative"]["enabled"].get<bool>()) {
    const auto eval = sample_indices(n, capped(m["relative"]["samples"], n),
                                     derive_seed(sample_seed, "relative"));
    const auto q = relative_quantiles(f, images, eval, m["relative"]["attack"].get<AttackConfig>(), inv.workers);
    results["relative_quantiles"] = q;
    report.values["relative_quantile_median"] = q.median;
  }
  results["report"] = report;
  return results;
}

json cmd_certify(const json& c, const Invocation& inv) {
  const Split data = load_data(c, inv.workers);
  const EncoderCheckpoint ck = load_encoder_checkpoint(c);
  const Encoder f = ck.encoder();
  check_fit(f, data.eval);
  const SmoothingConfig cfg = c.at("smoothing").get<SmoothingConfig>();
  const std::size_t n = data.eval.size();
  const auto idx = sample_indices(n, capped(c.at("samples"), n), c.at("sample_seed"));
  const auto points = c.at("curve_points").get<std::size_t>();
  std::vector<CertificationResult> results;
  std::vector<int> labels;
  std::ostringstream rows;
  json out = {{"encoder_id", encoder_id(c)}, {"kind", c.at("kind")}, {"samples", idx.size()}};
  if (c.at("kind") == "classifier") {
    const LinearProbe probe = probe_from(ck, ProbeVariant::GaussianNoise);
    const auto g = probe_classifier(probe, f);
    rows << csv_header({"id", "label", "prediction", "abstain", "p_lower", "radius"});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      SmoothingConfig local = cfg;
      local.seed = derive_seed(cfg.seed, "sample", data.eval.ids[idx[k]]);
      results.push_back(certify_classifier(g, data.eval.images.row(idx[k]), local, data.eval.classes, inv.workers));
      labels.push_back(static_cast<int>(data.eval.labels[idx[k]]));
      const auto& r = results.back();
      rows << data.eval.ids[idx[k]] << ',' << labels.back() << ',' << r.prediction << ',' << (r.abstain ? 1 : 0) << ','
           << format_number(r.p_lower) << ',' << (r.radius ? format_number(*r.radius) : "") << '\n';
    }
    const double acr = average_certified_radius(results, labels);
    const auto grid = linear_grid(0.0, 1.0, points);
    std::ostringstream curve;
    curve << csv_header({"radius", "certified_accuracy"});
    for (const auto& p : certified_accuracy_curve(results, labels, grid)) {
      curve << format_number(p.x) << ',' << format_number(p.fraction) << '\n';
    }
    write_text(inv.out, "certified_accuracy.csv", curve.str());
    out["average_certified_radius"] = acr;
    out["report"] = RunMeasures{encoder_id(c), std::nullopt, {{"average_certified_radius", acr}}};
  } else {
    const auto dist = build_divergence_distribution(f, data.eval.images, capped(c["distribution_samples"], n),
                                                    Divergence{}, c["distribution_seed"], inv.workers);
    const auto map = clipped_encoder_map(f);
    rows << csv_header({"id", "abstain", "p_lower", "radius", "radius_quantile"});
    std::vector<double> radii;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      SmoothingConfig local = cfg;
      local.seed = derive_seed(cfg.seed, "sample", data.eval.ids[idx[k]]);
      results.push_back(center_smooth(map, data.eval.images.row(idx[k]), local, &dist, inv.workers));
      const auto& r = results.back();
      if (r.radius) radii.push_back(*r.radius);
      rows << data.eval.ids[idx[k]] << ',' << (r.abstain ? 1 : 0) << ',' << format_number(r.p_lower) << ','
           << (r.radius ? format_number(*r.radius) : "") << ','
           << (r.radius_quantile ? format_number(*r.radius_quantile) : "") << '\n';
    }
    std::ostringstream curve;
    curve << csv_header({"quantile", "certified_fraction"});
    for (const auto& p : certified_quantile_curve(results, linear_grid(0.0, 1.0, points))) {
      curve << format_number(p.x) << ',' << format_number(p.fraction) << '\n';
    }
    write_text(inv.out, "certified_quantile.csv", curve.str());
    out["median_radius"] = radii.empty() ? json(nullptr) : json(median(radii));
    out["certified"] = radii.size();
  }
  write_text(inv.out, "certificates.csv", rows.str());
  return out;
}

json cmd_probe(const json& c, const Invocation& inv) {
  const Split data = load_data(c, inv.workers);
  EncoderCheckpoint ck = load_encoder_checkpoint(c);
  const Encoder f = ck.encoder();
  check_fit(f, data.train);
  const ProbeConfig cfg = c.at("probe").get<ProbeConfig>();
  const LinearProbe standard = train_probe(f, data.train, ProbeVariant::Standard, cfg, inv.workers);
  const LinearProbe lowpass = train_probe(f, data.train, ProbeVariant::Lowpass, cfg, inv.workers);
  const LinearProbe noisy = train_probe(f, data.train, ProbeVariant::GaussianNoise, cfg, inv.workers);
  const ProbeAccuracy acc = probe_accuracy(standard, lowpass, f, data.eval, cfg, inv.workers);
  const double noisy_top1 = top_k_accuracy(noisy, f, data.eval, 1, ProbeVariant::GaussianNoise, cfg, inv.workers);
  for (const auto* p : {&standard, &lowpass, &noisy}) attach_probe(ck, *p);
  save_checkpoint(inv.out / "encoder.urre", ck);
  RunMeasures report{encoder_id(c), std::nullopt, {}};
  report.values = {{"standard_top1", acc.standard_top1}, {"standard_top5", acc.standard_top5},
                   {"lowpass_top1", acc.lowpass_top1},   {"lowpass_top5", acc.lowpass_top5},
                   {"lowpass_gap", acc.lowpass_gap}};
  return {{"encoder_id", report.encoder_id}, {"accuracy", acc}, {"gaussian_noise_top1", noisy_top1}, {"report", report}};
}

json cmd_impersonate(const json& c, const Invocation& inv) {
  const Split data = load_data(c, inv.workers);
  const EncoderCheckpoint ck = load_encoder_checkpoint(c);
  const Encoder f = ck.encoder();
  check_fit(f, data.eval);
  const LinearProbe probe = probe_from(ck, ProbeVariant::Standard);
  const CountingClassifier g([&](const Tensor& x) { return probe.predict(f.evaluate_rows(x, 1)); });
  const AttackConfig base = c.at("attack").get<AttackConfig>();
  RunMeasures report{encoder_id(c), to_string(base.divergence.kind), {}};
  json runs = json::array();
  std::string pairs_out;
  for (int iterations : c.at("iterations").get<std::vector<int>>()) {
    double total = 0;
    const auto class_pairs = c.at("class_pairs").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& cp : class_pairs) {
      if (cp.size() != 2 || cp[0] >= data.eval.classes || cp[1] >= data.eval.classes) {
        throw ConfigError("class_pairs entries must be two valid class indices");
      }
      AttackConfig a = base;
      a.iterations = iterations;
      a.seed = derive_seed(base.seed, "pair", cp[0] * 1000003 + cp[1]);
      const Dataset da = data.eval.subset(data.eval.positions_of_class(cp[0]));
      const Dataset db = data.eval.subset(data.eval.positions_of_class(cp[1]));
      const auto r = impersonate(f, g, da.images, cp[0], db.images, cp[1], a, inv.workers);
      total += r.average;
      runs.push_back(r);
      const std::string csv = pairs_csv(r);
      const std::string tag = std::to_string(iterations) + "," + std::to_string(cp[0]) + "," + std::to_string(cp[1]) + ",";
      std::istringstream lines(csv);
      std::string line;
      std::getline(lines, line);
      if (pairs_out.empty()) pairs_out = "iterations,class_a,class_b," + line + "\n";
      while (std::getline(lines, line)) pairs_out += tag + line + "\n";
      if (c.at("dump").get<bool>()) {
        const std::string stem = "attacked_it" + std::to_string(iterations) + "_" + std::to_string(cp[0]) + "_" +
                                 std::to_string(cp[1]);
        write_doubles(inv.out, stem + "_a_to_b.f64", r.attacked_a_to_b);
        write_doubles(inv.out, stem + "_b_to_a.f64", r.attacked_b_to_a);
      }
    }
    report.values["impersonation_rate@it=" + std::to_string(iterations)] = total / double(class_pairs.size());
  }
  write_text(inv.out, "impersonation_pairs.csv", pairs_out);
  return {{"encoder_id", report.encoder_id}, {"runs", runs}, {"report", report}};
}

json cmd_report(const json& c, const Invocation& inv) {
  std::vector<RunMeasures> runs;
  std::vector<std::string> sources;
  for (const auto& entry : c.at("inputs").get<std::vector<std::string>>()) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(entry)) {
      if (std::filesystem::exists(std::filesystem::path(entry) / "results.json")) {
        files.push_back(std::filesystem::path(entry) / "results.json");
      }
      std::vector<std::filesystem::path> nested;
      for (const auto& sub : std::filesystem::directory_iterator(entry)) {
        if (sub.is_directory() && std::filesystem::exists(sub.path() / "results.json")) {
          nested.push_back(sub.path() / "results.json");
        }
      }
      std::sort(nested.begin(), nested.end());
      files.insert(files.end(), nested.begin(), nested.end());
    } else {
      files.emplace_back(entry);
    }
    for (const auto& file : files) {
      std::ifstream is(file);
      if (!is) throw ConfigError("cannot read results file " + file.string());
      json j;
      try {
        j = json::parse(is);
      } catch (const json::exception& e) {
        throw ConfigError("malformed results file " + file.string() + ": " + e.what());
      }
      if (!j.contains("report")) continue;
      try {
        runs.push_back(j.at("report").get<RunMeasures>());
      } catch (const json::exception& e) {
        throw ConfigError("malformed report in " + file.string() + ": " + e.what());
      }
      sources.push_back(file.string());
    }
  }
  if (runs.empty()) throw ConfigError("report: no results.json with measures among the inputs");
  const Report r = build_report(runs);
  write_text(inv.out, "report.csv", wide_csv(r));
  write_text(inv.out, "report_long.csv", long_csv(r));
  return {{"encoders", r.encoders},
          {"columns", r.columns},
          {"divergence", r.divergence ? json(*r.divergence) : json(nullptr)},
          {"sources", sources}};
}

}  // namespace

json run(const Invocation& inv) {
  const json c = resolve_config(inv.command, inv.config, inv.seed);
  std::filesystem::create_directories(inv.out);
  write_json(inv.out, "manifest.json", c);
  json results;
  if (inv.command == "gen-data") results = cmd_gen_data(c, inv);
  else if (inv.command == "pretrain") results = cmd_train(c, inv, false);
  else if (inv.command == "advtrain") results = cmd_train(c, inv, true);
  else if (inv.command == "attack") results = cmd_attack(c, inv);
  else if (inv.command == "measure") results = cmd_measure(c, inv);
  else if (inv.command == "certify") results = cmd_certify(c, inv);
  else if (inv.command == "probe") results = cmd_probe(c, inv);
  else if (inv.command == "impersonate") results = cmd_impersonate(c, inv);
  else results = cmd_report(c, inv);
  results["command"] = inv.command;
  write_json(inv.out, "results.json", results);
  return results;
}

}  // namespace repr_robust::cli
