#pragma once

#include "siemmap/prompt.hpp"

namespace siemmap::prompts {

// One template per model interaction. Each stage's Input section is
// assembled by the pipeline; the headings it uses ("SIEM rule:",
// "Rule description:", "Scratchpad:", ...) are stable so fixture tables
// can key on them.

const PromptTemplate& ioc_extract();
const PromptTemplate& context_agent();
const PromptTemplate& translate();
const PromptTemplate& anchor_query();
const PromptTemplate& anchor_select();
const PromptTemplate& recommend_agent();
const PromptTemplate& compare();
const PromptTemplate& score();

}  // namespace siemmap::prompts
