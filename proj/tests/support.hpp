#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siemmap/config.hpp"
#include "siemmap/embedding.hpp"
#include "siemmap/vector_index.hpp"
#include "siemmap/rule_corpus.hpp"
#include "siemmap/technique_id.hpp"

namespace testsupport {

namespace fs = std::filesystem;

fs::path source_dir();
fs::path fixture(const std::string& rel);

// Removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

struct CliRun {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

CliRun run_cli(const std::string& args);

// Rule document in the upstream layout.
std::string rule_yaml(const std::string& id, const std::string& search,
                      const std::vector<std::string>& labels, const std::string& date,
                      const std::string& modified = {}, const std::string& domain = "endpoint");

// Session over the shipped ATT&CK excerpt and one of the fixture bundles.
siemmap::RunConfig fixture_config(const std::string& bundle_dir);

// Brute-force metrics written without the library's helpers: recall and
// precision counted by nested loops over plain string ids.
struct OracleMetrics {
  double ar = 0, ap = 0, war = 0, wap = 0;
};
OracleMetrics oracle_metrics(const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& samples);

std::set<siemmap::TechniqueId> ids(std::initializer_list<const char*> list);

// Random technique pool of `n` ids mixing techniques and sub-techniques.
std::vector<std::string> id_pool(std::mt19937& rng, std::size_t n);

// Exhaustive cosine ranking, score descending then id ascending.
std::vector<std::pair<std::string, double>> brute_force_topk(const std::vector<siemmap::IndexDocument>& docs,
                                                             const std::string& query, std::size_t k,
                                                             const siemmap::Embedder& embedder);

// Random short documents over a small vocabulary (repeats force ties).
std::vector<siemmap::IndexDocument> random_docs(std::mt19937& rng, std::size_t n);
std::string random_text(std::mt19937& rng);

}  // namespace testsupport
