#include "siemmap/rule_corpus.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <variant>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "siemmap/error.hpp"

namespace siemmap {

std::string_view domain_name(RuleDomain d) noexcept {
  switch (d) {
    case RuleDomain::endpoint: return "endpoint";
    case RuleDomain::network: return "network";
    case RuleDomain::application: return "application";
    case RuleDomain::cloud: return "cloud";
    case RuleDomain::web: return "web";
    case RuleDomain::other: return "other";
  }
  return "other";
}

RuleDomain parse_domain(std::string_view name) noexcept {
  const std::string n = to_lower(trim(name));
  if (n == "endpoint") return RuleDomain::endpoint;
  if (n == "network") return RuleDomain::network;
  if (n == "application") return RuleDomain::application;
  if (n == "cloud") return RuleDomain::cloud;
  if (n == "web") return RuleDomain::web;
  return RuleDomain::other;
}

namespace {

std::optional<std::string> scalar(const YAML::Node& node, const char* key) {
  const YAML::Node child = node[key];
  if (!child || !child.IsScalar()) return std::nullopt;
  return child.as<std::string>();
}

std::optional<Date> date_field(const YAML::Node& doc, const char* key) {
  auto raw = scalar(doc, key);
  if (!raw || trim(*raw).empty()) return std::nullopt;
  auto date = parse_date(*raw);
  if (!date) {
    throw Error(Errc::MalformedDocument, std::string("field '") + key + "' is not a date: " + *raw,
                *raw);
  }
  return date;
}

}  // namespace

SiemRule parse_rule_file(std::string_view raw) {
  YAML::Node doc;
  try {
    doc = YAML::Load(std::string(raw));
  } catch (const YAML::Exception& e) {
    throw Error(Errc::MalformedDocument, std::string("unparseable rule document: ") + e.what());
  }
  if (!doc.IsMap()) throw Error(Errc::MalformedDocument, "rule document is not a mapping");

  SiemRule rule;
  try {
    auto name = scalar(doc, "name");
    if (!name || trim(*name).empty()) throw Error(Errc::MissingField, "rule has no name", "name");
    auto search = scalar(doc, "search");
    if (!search || trim(*search).empty()) {
      throw Error(Errc::MissingField, "rule '" + *name + "' has no search", "search");
    }
    rule.name = *name;
    rule.search = *search;
    rule.id = scalar(doc, "id").value_or("");
    rule.created = date_field(doc, "date");
    rule.modified = date_field(doc, "modified");
    if (!rule.modified) rule.modified = date_field(doc, "updated");
    if (rule.created && rule.modified && *rule.modified < *rule.created) {
      throw Error(Errc::MalformedDocument, "rule '" + rule.name + "' modified before created");
    }

    if (const YAML::Node tags = doc["tags"]; tags && tags.IsMap()) {
      if (auto dom = scalar(tags, "security_domain")) rule.domain = parse_domain(*dom);
      const YAML::Node labels = tags["mitre_attack_id"];
      if (labels && labels.IsSequence()) {
        for (const auto& item : labels) {
          const std::string label = item.IsScalar() ? item.as<std::string>() : std::string{};
          auto id = TechniqueId::try_parse(label);
          if (!id) throw Error(Errc::InvalidLabel, "invalid ATT&CK label '" + label + "'", label);
          rule.gold_labels.insert(*id);
        }
      } else if (labels && labels.IsScalar()) {
        const std::string label = labels.as<std::string>();
        auto id = TechniqueId::try_parse(label);
        if (!id) throw Error(Errc::InvalidLabel, "invalid ATT&CK label '" + label + "'", label);
        rule.gold_labels.insert(*id);
      }
    }
  } catch (const YAML::Exception& e) {
    throw Error(Errc::MalformedDocument, std::string("unexpected rule layout: ") + e.what());
  }
  return rule;
}

std::string serialize_rule(const SiemRule& rule) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << rule.name;
  out << YAML::Key << "id" << YAML::Value << YAML::DoubleQuoted << rule.id;
  if (rule.created) out << YAML::Key << "date" << YAML::Value << format_date(*rule.created);
  if (rule.modified) out << YAML::Key << "modified" << YAML::Value << format_date(*rule.modified);
  out << YAML::Key << "search" << YAML::Value << YAML::DoubleQuoted << rule.search;
  out << YAML::Key << "tags" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mitre_attack_id" << YAML::Value << YAML::BeginSeq;
  for (const auto& id : rule.gold_labels) out << id.str();
  out << YAML::EndSeq;
  out << YAML::Key << "security_domain" << YAML::Value << std::string(domain_name(rule.domain));
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

bool passes(const SiemRule& rule, const CorpusFilter& filter) {
  const bool recent = (rule.created && *rule.created >= filter.cutoff_date) ||
                      (rule.modified && *rule.modified >= filter.cutoff_date);
  if (!recent) return false;
  if (filter.domain && rule.domain != *filter.domain) return false;
  if (filter.require_labels && rule.gold_labels.empty()) return false;
  return true;
}

Corpus build_corpus(const std::filesystem::path& root, const CorpusFilter& filter,
                    const CorpusOptions& options) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(Errc::IoError, "corpus root is not a readable directory: " + root.string(),
                root.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".yml" || ext == ".yaml") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  using Outcome = std::variant<SiemRule, Error>;
  std::vector<std::optional<Outcome>> outcomes(files.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < files.size(); i = next++) {
      try {
        SiemRule rule = parse_rule_file(read_file(files[i]));
        if (rule.id.empty()) rule.id = files[i].stem().string();
        outcomes[i].emplace(std::move(rule));
      } catch (const Error& e) {
        outcomes[i].emplace(e);
      }
    }
  };
  unsigned width = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  width = std::min<unsigned>(width, std::max<std::size_t>(files.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < width; ++t) pool.emplace_back(worker);
  }

  Corpus corpus;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (auto* err = std::get_if<Error>(&*outcomes[i])) {
      if (!options.skip_invalid) {
        throw Error(err->code(), files[i].string() + ": " + err->what(), files[i].string());
      }
      corpus.skipped.push_back({files[i], err->what()});
      continue;
    }
    auto& rule = std::get<SiemRule>(*outcomes[i]);
    if (passes(rule, filter)) corpus.rules.push_back(std::move(rule));
  }
  std::stable_sort(corpus.rules.begin(), corpus.rules.end(),
                   [](const SiemRule& a, const SiemRule& b) { return a.id < b.id; });
  if (corpus.rules.empty()) {
    throw Error(Errc::EmptyCorpus, "no rules under " + root.string() + " pass the filter",
                root.string());
  }
  return corpus;
}

LabelDistribution label_distribution(const std::vector<SiemRule>& corpus) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "label distribution of an empty corpus");
  LabelDistribution dist;
  for (const auto& rule : corpus) ++dist.histogram[rule.gold_labels.size()];
  return dist;
}

std::string corpus_manifest(const std::vector<SiemRule>& corpus) {
  std::string out;
  for (const auto& rule : corpus) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& id : rule.gold_labels) labels.push_back(id.str());
    nlohmann::json rec = {
        {"id", rule.id},
        {"name", rule.name},
        {"domain", domain_name(rule.domain)},
        {"created", rule.created ? nlohmann::json(format_date(*rule.created)) : nlohmann::json()},
        {"modified", rule.modified ? nlohmann::json(format_date(*rule.modified)) : nlohmann::json()},
        {"labels", labels},
        {"search_sha256", sha256_hex(rule.search)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::string corpus_hash(const std::vector<SiemRule>& corpus) {
  return sha256_hex(corpus_manifest(corpus));
}

}  // namespace siemmap
