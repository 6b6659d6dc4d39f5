#include "siemmap/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "siemmap/error.hpp"
#include "siemmap/util.hpp"

namespace siemmap {

using nlohmann::json;

std::string_view semantics_name(MatchSemantics s) noexcept {
  return s == MatchSemantics::strict ? "strict" : "parent_lenient";
}

MatchSemantics parse_semantics(std::string_view name) {
  if (name == "strict") return MatchSemantics::strict;
  if (name == "parent_lenient" || name == "parent-lenient") return MatchSemantics::parent_lenient;
  throw Error(Errc::ConfigError, "unknown matching semantics '" + std::string(name) + "'",
              std::string(name));
}

namespace {

bool lenient_pair(const TechniqueId& g, const TechniqueId& p) {
  return g == p || p.parent() == g || g.parent() == p;
}

// Kuhn's augmenting-path search over the residual gold/prediction sets.
bool augment(std::size_t g, const std::vector<std::vector<std::size_t>>& adj,
             std::vector<int>& pred_owner, std::vector<char>& seen) {
  for (std::size_t p : adj[g]) {
    if (seen[p]) continue;
    seen[p] = 1;
    if (pred_owner[p] < 0 || augment(static_cast<std::size_t>(pred_owner[p]), adj, pred_owner, seen)) {
      pred_owner[p] = static_cast<int>(g);
      return true;
    }
  }
  return false;
}

}  // namespace

std::set<TechniqueId> match(const std::set<TechniqueId>& gold, const std::set<TechniqueId>& predicted,
                            MatchSemantics semantics) {
  std::set<TechniqueId> out;
  std::set_intersection(gold.begin(), gold.end(), predicted.begin(), predicted.end(),
                        std::inserter(out, out.end()));
  if (semantics == MatchSemantics::strict) return out;

  std::vector<TechniqueId> g_rest, p_rest;
  for (const auto& g : gold)
    if (!out.count(g)) g_rest.push_back(g);
  for (const auto& p : predicted)
    if (!out.count(p)) p_rest.push_back(p);

  std::vector<std::vector<std::size_t>> adj(g_rest.size());
  for (std::size_t i = 0; i < g_rest.size(); ++i)
    for (std::size_t j = 0; j < p_rest.size(); ++j)
      if (lenient_pair(g_rest[i], p_rest[j])) adj[i].push_back(j);

  std::vector<int> owner(p_rest.size(), -1);
  for (std::size_t i = 0; i < g_rest.size(); ++i) {
    std::vector<char> seen(p_rest.size(), 0);
    augment(i, adj, owner, seen);
  }
  for (int o : owner)
    if (o >= 0) out.insert(g_rest[static_cast<std::size_t>(o)]);
  return out;
}

SampleEval evaluate_sample(const std::set<TechniqueId>& gold, const std::set<TechniqueId>& predicted,
                           MatchSemantics semantics, std::string rule_id) {
  if (gold.empty()) throw Error(Errc::EmptyGold, "sample has no gold labels", rule_id);
  SampleEval s;
  s.rule_id = std::move(rule_id);
  s.gold = gold;
  s.predicted = predicted;
  const double hits = static_cast<double>(match(gold, predicted, semantics).size());
  s.recall = hits / static_cast<double>(gold.size());
  s.precision = predicted.empty() ? 0.0 : hits / static_cast<double>(predicted.size());
  return s;
}

double f1_score(double recall, double precision) noexcept {
  const double sum = recall + precision;
  return sum > 0.0 ? 2.0 * recall * precision / sum : 0.0;
}

EvalReport aggregate(std::vector<SampleEval> samples, std::string config_fingerprint) {
  if (samples.empty()) throw Error(Errc::EmptySamples, "nothing to aggregate", config_fingerprint);
  EvalReport r;
  const double n = static_cast<double>(samples.size());
  double total_gold = 0.0;
  for (const auto& s : samples) total_gold += static_cast<double>(s.gold.size());
  double sr = 0, sp = 0, wr = 0, wp = 0;
  for (const auto& s : samples) {
    sr += s.recall;
    sp += s.precision;
    const double w = static_cast<double>(s.gold.size()) / total_gold;
    wr += w * s.recall;
    wp += w * s.precision;
  }
  r.ar = sr / n;
  r.ap = sp / n;
  r.war = wr;
  r.wap = wp;
  r.f1 = f1_score(r.ar, r.ap);
  r.samples = std::move(samples);
  r.config_fingerprint = std::move(config_fingerprint);
  return r;
}

std::string make_fingerprint(const std::map<std::string, std::string>& fields) {
  std::string out;
  for (const auto& [k, v] : fields) {
    if (!out.empty()) out += ';';
    out += k + '=' + v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policies

KPolicy KPolicy::fixed(std::size_t k) {
  if (k == 0) throw Error(Errc::ConfigError, "k must be positive");
  return {Kind::fixed, k, 0.0};
}

KPolicy KPolicy::dynamic(double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(Errc::ConfigError, "threshold must lie in [0, 1]");
  }
  return {Kind::dynamic, 0, threshold};
}

std::string KPolicy::label() const {
  return kind == Kind::fixed ? std::to_string(k) : "dynamic-k";
}

namespace {

std::string fmt_real(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string format_k_policy(const KPolicy& p) {
  return p.kind == KPolicy::Kind::fixed ? "fixed:" + std::to_string(p.k)
                                        : "dynamic:" + fmt_real(p.threshold);
}

KPolicy parse_k_policy(std::string_view text) {
  const std::string t(trim(text));
  auto bad = [&] {
    return Error(Errc::ConfigError, "bad k policy '" + t + "' (want K, fixed:K or dynamic:T)", t);
  };
  std::string_view body = t;
  bool dynamic = false;
  if (body.starts_with("fixed:")) {
    body.remove_prefix(6);
  } else if (body.starts_with("dynamic:")) {
    body.remove_prefix(8);
    dynamic = true;
  }
  if (body.empty()) throw bad();
  if (dynamic) {
    double v = 0;
    auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc() || p != body.data() + body.size()) throw bad();
    return KPolicy::dynamic(v);
  }
  std::size_t k = 0;
  auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), k);
  if (ec != std::errc() || p != body.data() + body.size()) throw bad();
  return KPolicy::fixed(k);
}

std::set<TechniqueId> apply_policy(const std::vector<ScoredCandidate>& scored, const KPolicy& policy) {
  std::vector<const ScoredCandidate*> ranked;
  for (const auto& s : scored)
    if (s.confidence) ranked.push_back(&s);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) {
    if (*a->confidence != *b->confidence) return *a->confidence > *b->confidence;
    return a->id < b->id;
  });
  std::set<TechniqueId> out;
  for (const auto* s : ranked) {
    if (policy.kind == KPolicy::Kind::fixed) {
      if (out.size() >= policy.k) break;
    } else if (*s->confidence < policy.threshold) {
      break;
    }
    out.insert(s->id);
  }
  return out;
}

GoldMap gold_map(const std::vector<SiemRule>& rules) {
  GoldMap g;
  for (const auto& r : rules) g[r.id] = r.gold_labels;
  return g;
}

EvalReport evaluate_results(const std::vector<MappingResult>& results, const GoldMap& gold,
                            MatchSemantics semantics, const std::optional<KPolicy>& policy,
                            std::string config_fingerprint) {
  std::vector<SampleEval> samples;
  std::vector<SkippedRule> skipped;
  for (const auto& r : results) {
    if (r.failure) {
      skipped.push_back({r.rule_id, r.failure->stage + ": " + r.failure->message});
      continue;
    }
    auto g = gold.find(r.rule_id);
    if (g == gold.end() || g->second.empty()) {
      skipped.push_back({r.rule_id, "no gold labels"});
      continue;
    }
    std::set<TechniqueId> pred;
    if (policy) {
      pred = apply_policy(r.scored, *policy);
    } else {
      for (const auto& rec : r.recommendations) pred.insert(rec.id);
    }
    samples.push_back(evaluate_sample(g->second, pred, semantics, r.rule_id));
  }
  if (samples.empty()) {
    throw Error(Errc::EmptySamples, "no rule produced a usable result (" +
                                        std::to_string(skipped.size()) + " skipped)",
                config_fingerprint);
  }
  EvalReport rep = aggregate(std::move(samples), std::move(config_fingerprint));
  rep.skipped = std::move(skipped);
  return rep;
}

std::vector<SweepPoint> sweep_k(const std::vector<MappingResult>& results, const GoldMap& gold,
                                const std::vector<KPolicy>& policies, MatchSemantics semantics,
                                const std::map<std::string, std::string>& fingerprint) {
  for (const auto& r : results) {
    if (r.ok() && !r.candidates.empty() && r.scored.empty()) {
      throw Error(Errc::MissingScores, "result for " + r.rule_id + " carries no candidate scores",
                  r.rule_id);
    }
  }
  std::vector<SweepPoint> out;
  for (const auto& p : policies) {
    auto fields = fingerprint;
    fields["policy"] = format_k_policy(p);
    fields["semantics"] = std::string(semantics_name(semantics));
    out.push_back({p, evaluate_results(results, gold, semantics, p, make_fingerprint(fields))});
  }
  return out;
}

std::vector<KPolicy> default_sweep_policies(double threshold) {
  std::vector<KPolicy> out;
  for (std::size_t k = 1; k <= 13; k += 2) out.push_back(KPolicy::fixed(k));
  out.push_back(KPolicy::dynamic(threshold));
  return out;
}

std::vector<AblationRun> run_ablation(const std::vector<SiemRule>& rules, const PipelineDeps& deps,
                                      const PipelineConfig& config,
                                      const std::vector<AblationMode>& modes,
                                      MatchSemantics semantics, unsigned concurrency,
                                      const std::map<std::string, std::string>& fingerprint) {
  const GoldMap gold = gold_map(rules);
  std::vector<AblationRun> out;
  for (AblationMode mode : modes) {
    PipelineConfig cfg = config;
    cfg.mode = mode;
    auto results = run_corpus(rules, deps, cfg, concurrency);
    const bool any_ok = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.ok(); });
    if (!any_ok) {
      std::string why = results.empty() ? "empty corpus" : results.front().failure->message;
      throw Error(Errc::StageFailed,
                  "every rule failed in mode " + std::string(mode_name(mode)) + ": " + why,
                  std::string(mode_name(mode)));
    }
    auto fields = fingerprint;
    fields["mode"] = std::string(mode_name(mode));
    fields["policy"] = format_k_policy(KPolicy::dynamic(config.threshold));
    fields["semantics"] = std::string(semantics_name(semantics));
    EvalReport rep = evaluate_results(results, gold, semantics, std::nullopt, make_fingerprint(fields));
    out.push_back({mode, std::move(rep), std::move(results)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

std::string_view format_name(ReportFormat f) noexcept {
  switch (f) {
    case ReportFormat::structured: return "structured";
    case ReportFormat::tabular: return "tabular";
    case ReportFormat::human: return "human";
  }
  return "human";
}

ReportFormat parse_format(std::string_view name) {
  if (name == "structured" || name == "json") return ReportFormat::structured;
  if (name == "tabular" || name == "csv") return ReportFormat::tabular;
  if (name == "human" || name == "table") return ReportFormat::human;
  throw Error(Errc::ConfigError, "unknown report format '" + std::string(name) + "'",
              std::string(name));
}

namespace {

json id_list(const std::set<TechniqueId>& ids) {
  json a = json::array();
  for (const auto& id : ids) a.push_back(id.str());
  return a;
}

std::set<TechniqueId> id_set(const json& a) {
  std::set<TechniqueId> out;
  for (const auto& v : a) out.insert(TechniqueId::parse(v.get<std::string>()));
  return out;
}

std::string joined(const std::set<TechniqueId>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ' ';
    out += id.str();
  }
  return out;
}

// "0.75 (0.724)"
std::string pair_cell(double plain, double weighted) {
  return fmt_real(plain, "%.3f") + " (" + fmt_real(weighted, "%.3f") + ")";
}

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << cells[c];
      if (c + 1 < cells.size()) out << std::string(width[c] - cells[c].size() + 2, ' ');
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << '\n';
  for (const auto& row : rows) line(row);
  return out.str();
}

}  // namespace

json report_to_json(const EvalReport& r) {
  json samples = json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"rule_id", s.rule_id},
                       {"gold", id_list(s.gold)},
                       {"predicted", id_list(s.predicted)},
                       {"recall", s.recall},
                       {"precision", s.precision}});
  }
  json skipped = json::array();
  for (const auto& s : r.skipped) skipped.push_back({{"rule_id", s.rule_id}, {"reason", s.reason}});
  return {{"ar", r.ar},   {"ap", r.ap},           {"war", r.war},
          {"wap", r.wap}, {"f1", r.f1},           {"config_fingerprint", r.config_fingerprint},
          {"samples", samples}, {"skipped", skipped}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.ar = j.at("ar").get<double>();
    r.ap = j.at("ap").get<double>();
    r.war = j.at("war").get<double>();
    r.wap = j.at("wap").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.config_fingerprint = j.value("config_fingerprint", "");
    for (const auto& s : j.at("samples")) {
      r.samples.push_back({s.at("rule_id").get<std::string>(), id_set(s.at("gold")),
                           id_set(s.at("predicted")), s.at("recall").get<double>(),
                           s.at("precision").get<double>()});
    }
    for (const auto& s : j.value("skipped", json::array())) {
      r.skipped.push_back({s.at("rule_id").get<std::string>(), s.at("reason").get<std::string>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedDocument, std::string("bad report: ") + e.what());
  }
}

json sweep_to_json(const std::vector<SweepPoint>& sweep) {
  json points = json::array();
  for (const auto& p : sweep) {
    points.push_back({{"policy", format_k_policy(p.policy)},
                      {"label", p.policy.label()},
                      {"report", report_to_json(p.report)}});
  }
  return {{"points", points}};
}

std::vector<SweepPoint> sweep_from_json(const json& j) {
  std::vector<SweepPoint> out;
  try {
    for (const auto& p : j.at("points")) {
      out.push_back({parse_k_policy(p.at("policy").get<std::string>()), report_from_json(p.at("report"))});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedDocument, std::string("bad sweep: ") + e.what());
  }
  return out;
}

json ablation_to_json(const std::vector<AblationRun>& runs) {
  json rows = json::array();
  for (const auto& r : runs) {
    rows.push_back({{"mode", mode_name(r.mode)},
                    {"label", mode_label(r.mode)},
                    {"report", report_to_json(r.report)}});
  }
  return {{"modes", rows}};
}

std::string emit_report(const EvalReport& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::structured: return report_to_json(r).dump(2) + "\n";
    case ReportFormat::tabular: {
      std::string out = "rule_id,gold,predicted,recall,precision\n";
      for (const auto& s : r.samples) {
        out += s.rule_id + ',' + joined(s.gold) + ',' + joined(s.predicted) + ',' +
               fmt_real(s.recall, "%.6f") + ',' + fmt_real(s.precision, "%.6f") + '\n';
      }
      return out;
    }
    case ReportFormat::human: {
      std::string out = render_table({"AR (WAR)", "AP (WAP)", "F1", "samples", "skipped"},
                                     {{pair_cell(r.ar, r.war), pair_cell(r.ap, r.wap),
                                       fmt_real(r.f1, "%.3f"), std::to_string(r.samples.size()),
                                       std::to_string(r.skipped.size())}});
      for (const auto& s : r.skipped) out += "skipped " + s.rule_id + ": " + s.reason + '\n';
      return out;
    }
  }
  return {};
}

std::string emit_sweep(const std::vector<SweepPoint>& sweep, ReportFormat format) {
  switch (format) {
    case ReportFormat::structured: return sweep_to_json(sweep).dump(2) + "\n";
    case ReportFormat::tabular: {
      std::string out = "k,policy,ar,war,ap,wap,f1,samples,skipped\n";
      for (const auto& p : sweep) {
        const auto& r = p.report;
        out += p.policy.label() + ',' + format_k_policy(p.policy) + ',' + fmt_real(r.ar, "%.6f") +
               ',' + fmt_real(r.war, "%.6f") + ',' + fmt_real(r.ap, "%.6f") + ',' +
               fmt_real(r.wap, "%.6f") + ',' + fmt_real(r.f1, "%.6f") + ',' +
               std::to_string(r.samples.size()) + ',' + std::to_string(r.skipped.size()) + '\n';
      }
      return out;
    }
    case ReportFormat::human: {
      std::vector<std::vector<std::string>> rows;
      for (const auto& p : sweep) {
        rows.push_back({p.policy.label(), pair_cell(p.report.ar, p.report.war),
                        pair_cell(p.report.ap, p.report.wap), fmt_real(p.report.f1, "%.3f")});
      }
      return render_table({"k", "AR (WAR)", "AP (WAP)", "F1"}, rows);
    }
  }
  return {};
}

std::string emit_ablation(const std::vector<AblationRun>& runs, ReportFormat format) {
  switch (format) {
    case ReportFormat::structured: return ablation_to_json(runs).dump(2) + "\n";
    case ReportFormat::tabular: {
      std::string out = "mode,ar,war,ap,wap,f1,samples,skipped\n";
      for (const auto& run : runs) {
        const auto& r = run.report;
        out += std::string(mode_name(run.mode)) + ',' + fmt_real(r.ar, "%.6f") + ',' +
               fmt_real(r.war, "%.6f") + ',' + fmt_real(r.ap, "%.6f") + ',' +
               fmt_real(r.wap, "%.6f") + ',' + fmt_real(r.f1, "%.6f") + ',' +
               std::to_string(r.samples.size()) + ',' + std::to_string(r.skipped.size()) + '\n';
      }
      return out;
    }
    case ReportFormat::human: {
      std::vector<std::vector<std::string>> rows;
      for (const auto& run : runs) {
        rows.push_back({std::string(mode_label(run.mode)), pair_cell(run.report.ar, run.report.war),
                        pair_cell(run.report.ap, run.report.wap)});
      }
      return render_table({"Scenario", "AR (WAR)", "AP (WAP)"}, rows);
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

json manifest_body(const ExperimentManifest& m) {
  return {{"command", m.command},       {"corpus_hash", m.corpus_hash}, {"kb_version", m.kb_version},
          {"backend_id", m.backend_id}, {"mode", m.mode},               {"policy", m.policy},
          {"semantics", m.semantics},   {"params", m.params},           {"outputs", m.outputs}};
}

}  // namespace

json manifest_to_json(const ExperimentManifest& m) {
  json j = manifest_body(m);
  j["created_at"] = m.created_at;
  j["manifest_hash"] = manifest_hash(m);
  return j;
}

ExperimentManifest manifest_from_json(const json& j) {
  try {
    ExperimentManifest m;
    m.command = j.at("command").get<std::string>();
    m.corpus_hash = j.at("corpus_hash").get<std::string>();
    m.kb_version = j.at("kb_version").get<std::string>();
    m.backend_id = j.at("backend_id").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    m.policy = j.at("policy").get<std::string>();
    m.semantics = j.at("semantics").get<std::string>();
    m.params = j.value("params", std::map<std::string, std::string>{});
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    m.created_at = j.value("created_at", "");
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedDocument, std::string("bad manifest: ") + e.what());
  }
}

std::string manifest_hash(const ExperimentManifest& m) { return sha256_hex(manifest_body(m).dump()); }

}  // namespace siemmap
