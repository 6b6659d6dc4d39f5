#include "siemmap/prompts.hpp"

namespace siemmap::prompts {

namespace {

constexpr const char* kAnalyst =
    "You are a cybersecurity specialist working in a security operations center. You analyze "
    "SIEM detection rules and relate them to adversary behavior described in the MITRE ATT&CK "
    "Enterprise framework.";

}  // namespace

const PromptTemplate& ioc_extract() {
  static const PromptTemplate t{
      kAnalyst,
      "Extract every indicator of compromise (IoC) that the SIEM rule below searches for: process "
      "names, file names, registry keys, IP addresses, ports, log sources, command-line arguments "
      "and anything else the rule matches on.",
      "Respond with a single JSON object. Keys are IoC types (for example processes, files, "
      "registry_keys, ip_addresses, ports, log_sources, commands); values are lists of strings "
      "copied from the rule. Use an empty object if the rule contains no IoCs. Do not add "
      "commentary."};
  return t;
}

const PromptTemplate& context_agent() {
  static const PromptTemplate t{
      std::string(kAnalyst) +
          " You can search the web to learn what an indicator is and how attackers use it.",
      "Gather background information about the indicator below. Work step by step: think about "
      "what you still need to know, search for it, read the observation, and repeat until you can "
      "summarize the indicator's role in an attack.",
      "Respond with one JSON object per turn. To search: {\"thought\": \"...\", \"action\": "
      "\"search\", \"query\": \"...\"}. To finish: {\"thought\": \"...\", \"action\": \"finish\", "
      "\"summary\": \"...\"}. The summary must be factual and at most five sentences."};
  return t;
}

const PromptTemplate& translate() {
  static const PromptTemplate t{
      kAnalyst,
      "Describe in plain English what the SIEM rule below detects: the data it reads, the "
      "conditions it matches and the attacker activity it is meant to catch.",
      "Respond with a JSON object {\"description\": \"...\"}. Use any contextual information "
      "provided about the rule's indicators. Do not restate the query syntax."};
  return t;
}

const PromptTemplate& anchor_query() {
  static const PromptTemplate t{
      std::string(kAnalyst) +
          " A vector database holds the ATT&CK data components and mitigations.",
      "Write a search query that will retrieve the ATT&CK data component or mitigation most "
      "relevant to the rule description below.",
      "Respond with a JSON object {\"query\": \"...\"}. Keep the query under 30 words."};
  return t;
}

const PromptTemplate& anchor_select() {
  static const PromptTemplate t{
      kAnalyst,
      "Compare the rule description with the retrieved ATT&CK documents and select the single "
      "data component or mitigation that is most relevant to the rule. Explain your reasoning "
      "step by step.",
      "Respond with a JSON object {\"doc_id\": \"...\", \"rationale\": \"...\"}. The doc_id must "
      "be one of the retrieved documents."};
  return t;
}

const PromptTemplate& recommend_agent() {
  static const PromptTemplate t{
      std::string(kAnalyst) +
          " You can search a local copy of the ATT&CK knowledge base by keyword.",
      "Propose the MITRE ATT&CK techniques and sub-techniques that are probably relevant to the "
      "rule description below. Use your own knowledge and the knowledge-base search tool.",
      "Respond with one JSON object per turn. To search: {\"thought\": \"...\", \"action\": "
      "\"search_kb\", \"query\": \"...\"}. To finish: {\"thought\": \"...\", \"action\": "
      "\"finish\", \"techniques\": [{\"id\": \"T1234.001\", \"name\": \"...\", \"description\": "
      "\"...\"}]}. Return at most the requested number of techniques, most probable first."};
  return t;
}

const PromptTemplate& compare() {
  static const PromptTemplate t{
      kAnalyst,
      "Compare the rule description with the ATT&CK technique below. Reason step by step about "
      "whether the behavior the rule detects is an instance of the technique.",
      "Respond with a JSON object {\"rationale\": \"...\"}. Reference concrete elements of the "
      "rule and of the technique description."};
  return t;
}

const PromptTemplate& score() {
  static const PromptTemplate t{
      kAnalyst,
      "Given the rule description and the reasoning that links it to an ATT&CK technique, rate "
      "how relevant the technique is to the rule.",
      "Respond with a JSON object {\"confidence\": <number between 0 and 1>}. 1 means the rule "
      "certainly detects the technique; 0 means it is unrelated."};
  return t;
}

}  // namespace siemmap::prompts
