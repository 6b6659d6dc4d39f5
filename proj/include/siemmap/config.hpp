#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "siemmap/evaluator.hpp"
#include "siemmap/gateway.hpp"
#include "siemmap/pipeline.hpp"
#include "siemmap/rule_corpus.hpp"
#include "siemmap/transport.hpp"

namespace siemmap {

/// Everything a command needs. Built from defaults, then a JSON config
/// file, then command-line flags, each layer overriding the previous one.
struct RunConfig {
  std::string backend = "mock";  // mock | remote | local
  std::string model = "gpt-4-turbo";
  std::string base_url;          // empty: per-backend default
  std::string api_key_env = "OPENAI_API_KEY";
  std::string embedder = "hash";  // hash | remote
  std::string embedding_model = "text-embedding-3-small";
  std::string search = "auto";    // auto | fixtures | live | none
  std::string search_endpoint = "http://127.0.0.1:8888/search";

  std::filesystem::path kb_path;      // STIX bundle or KB snapshot
  std::filesystem::path index_path;   // optional prebuilt index
  std::filesystem::path corpus_root;
  std::filesystem::path fixtures;
  std::filesystem::path cache_dir;

  Date cutoff = CorpusFilter{}.cutoff_date;
  std::optional<RuleDomain> domain;
  AblationMode mode = AblationMode::with_context;
  KPolicy k_policy = KPolicy::dynamic(0.8);
  std::size_t recommend_k = 11;
  std::size_t retrieval_k = 5;
  MatchSemantics semantics = MatchSemantics::strict;
  ConfidenceMethod confidence = ConfidenceMethod::model;
  unsigned max_search_iterations = 3;
  unsigned concurrency = 1;
  CacheMode cache_mode = CacheMode::off;
  ReportFormat format = ReportFormat::human;
  double temperature = 0.0;
  std::uint64_t max_calls = 0;
  std::uint64_t max_tokens = 0;
};

/// Overlays the keys present in `j` onto `cfg`. Unknown keys and wrong
/// types throw Error(ConfigError).
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& cfg);

/// Pipeline settings implied by the run config. A fixed-k policy keeps
/// every scored candidate so the cut can be applied afterwards.
PipelineConfig pipeline_config(const RunConfig& cfg);

/// Re-derives `recommendations` from the scored candidates under `policy`.
void apply_policy(MappingResult& result, const KPolicy& policy);

/// Loads a STIX bundle or a KB snapshot, whichever `path` holds.
std::shared_ptr<const AttackKb> load_kb(const std::filesystem::path& path);

struct Session {
  RunConfig config;
  std::shared_ptr<const AttackKb> kb;
  PipelineDeps deps;
  std::string fixtures_hash;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Wires KB, index, gateway, caches and tools. `transport` carries every
/// network operation (HTTP by default); `env` reads the API key.
Session open_session(const RunConfig& cfg, std::shared_ptr<Transport> transport = nullptr,
                     EnvLookup env = {});

/// Manifest fields that determine a run's output. Cache mode and
/// concurrency are left out, so a replay reproduces the recording's hash.
ExperimentManifest make_manifest(const Session& s, const std::string& command,
                                 const std::string& corpus_hash);

}  // namespace siemmap
