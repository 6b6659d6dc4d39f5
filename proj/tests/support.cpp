#include "support.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sys/wait.h>

namespace testsupport {

fs::path source_dir() { return SIEMMAP_SOURCE_DIR; }

fs::path fixture(const std::string& rel) { return source_dir() / "fixtures" / rel; }

TempDir::TempDir() {
  static std::mt19937_64 rng{std::random_device{}()};
  for (;;) {
    char name[64];
    std::snprintf(name, sizeof name, "siemmap-test-%016llx", static_cast<unsigned long long>(rng()));
    path_ = fs::temp_directory_path() / name;
    if (fs::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SIEMMAP_CLI_PATH + "\" " + args + " 2>&1";
  CliRun run;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return run;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) run.output.append(buf.data(), n);
  const int status = pclose(pipe);
  run.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return run;
}

std::string rule_yaml(const std::string& id, const std::string& search,
                      const std::vector<std::string>& labels, const std::string& date,
                      const std::string& modified, const std::string& domain) {
  std::string y = "name: Rule " + id + "\nid: " + id + "\n";
  if (!date.empty()) y += "date: '" + date + "'\n";
  if (!modified.empty()) y += "modified: '" + modified + "'\n";
  y += "search: " + nlohmann::json(search).dump() + "\n";
  y += "tags:\n  security_domain: " + domain + "\n  mitre_attack_id:\n";
  for (const auto& l : labels) y += "  - " + l + "\n";
  return y;
}

siemmap::RunConfig fixture_config(const std::string& bundle_dir) {
  siemmap::RunConfig cfg;
  cfg.kb_path = fixture("attack-excerpt.json");
  cfg.fixtures = fixture(bundle_dir + "/fixtures.json");
  cfg.corpus_root = fixture(bundle_dir + "/rules");
  return cfg;
}

OracleMetrics oracle_metrics(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& samples) {
  OracleMetrics m;
  double total_gold = 0;
  for (const auto& s : samples) total_gold += static_cast<double>(s.first.size());
  for (const auto& [gold, pred] : samples) {
    std::size_t hit_gold = 0;
    for (const auto& g : gold) {
      for (const auto& p : pred) {
        if (g == p) {
          ++hit_gold;
          break;
        }
      }
    }
    std::size_t hit_pred = 0;
    for (const auto& p : pred) {
      for (const auto& g : gold) {
        if (g == p) {
          ++hit_pred;
          break;
        }
      }
    }
    const double r = static_cast<double>(hit_gold) / static_cast<double>(gold.size());
    const double p = pred.empty() ? 0.0 : static_cast<double>(hit_pred) / static_cast<double>(pred.size());
    m.ar += r;
    m.ap += p;
    m.war += r * static_cast<double>(gold.size());
    m.wap += p * static_cast<double>(gold.size());
  }
  const double n = static_cast<double>(samples.size());
  m.ar /= n;
  m.ap /= n;
  m.war /= total_gold;
  m.wap /= total_gold;
  return m;
}

std::set<siemmap::TechniqueId> ids(std::initializer_list<const char*> list) {
  std::set<siemmap::TechniqueId> out;
  for (const char* s : list) out.insert(siemmap::parse_technique_id(s));
  return out;
}

std::vector<std::string> id_pool(std::mt19937& rng, std::size_t n) {
  std::set<std::string> pool;
  std::uniform_int_distribution<int> base(1000, 1020);
  std::uniform_int_distribution<int> sub(0, 3);
  while (pool.size() < n) {
    char buf[16];
    const int s = sub(rng);
    if (s == 0) {
      std::snprintf(buf, sizeof buf, "T%04d", base(rng));
    } else {
      std::snprintf(buf, sizeof buf, "T%04d.%03d", base(rng), s);
    }
    pool.insert(buf);
  }
  return {pool.begin(), pool.end()};
}

std::vector<std::pair<std::string, double>> brute_force_topk(const std::vector<siemmap::IndexDocument>& docs,
                                                             const std::string& query, std::size_t k,
                                                             const siemmap::Embedder& embedder) {
  auto unit = [](std::vector<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n != 0) {
      for (double& x : v) x /= n;
    }
    return v;
  };
  const auto q = unit(siemmap::embed(query, embedder).values);
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& d : docs) {
    const auto v = unit(siemmap::embed(d.text, embedder).values);
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += q[i] * v[i];
    scored.emplace_back(d.doc_id, std::clamp(s, -1.0, 1.0));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::string random_text(std::mt19937& rng) {
  static const char* vocab[] = {"process", "creation", "registry", "logon", "kerberos", "ticket",
                                "powershell", "lsass", "memory", "dump", "network", "share",
                                "service", "account", "domain", "trust", "certificate", "file"};
  std::uniform_int_distribution<int> len(1, 4), word(0, std::size(vocab) - 1);
  std::string t;
  for (int i = len(rng); i > 0; --i) {
    if (!t.empty()) t += ' ';
    t += vocab[word(rng)];
  }
  return t;
}

std::vector<siemmap::IndexDocument> random_docs(std::mt19937& rng, std::size_t n) {
  std::vector<siemmap::IndexDocument> docs;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "D%04zu", (i * 7919) % 10007);
    docs.push_back({id, random_text(rng)});
  }
  return docs;
}

}  // namespace testsupport
