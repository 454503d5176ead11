#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "wwh/corpus.hpp"
#include "wwh/template_bank.hpp"

namespace wwh {

struct GeneratorConfig {
  std::size_t n_episodes = 100;
  std::size_t sessions_per_episode = 4;
  std::size_t turns_min = 10;
  std::size_t turns_max = 12;
  std::size_t personas_min = 4;  // initial pool; introductions add to it
  std::size_t personas_max = 6;
  std::size_t max_pr_per_session = 2;
  double two_pr_probability = 0.9;  // otherwise one personalized response
  double new_persona_rate = 0.15;   // per user turn
  double distractor_rate = 0.1;     // casual user turn that mentions a pooled topic
  double hard_probability = 0.8;    // hard vs soft grounding phrasing
  std::uint64_t seed = 1;
  std::string id_prefix;  // defaults to the corpus kind
  std::size_t threads = 1;
};

enum class CasualFlavor { Daily, Knowledge, Empathy };

std::string_view to_string(CasualFlavor f);
CasualFlavor parse_flavor(std::string_view s);

/// Template id of every emitted utterance, indexed [episode][session][turn].
/// Ids look like "topic/cooking/hard/1" or "casual/daily/pair/3/agent".
using TemplateTrace = std::vector<std::vector<std::vector<std::string>>>;

struct GeneratedCorpus {
  Corpus corpus;
  TemplateTrace trace;
};

/// Personalized multi-session corpus. Every output episode validates.
GeneratedCorpus generate_mspd(const GeneratorConfig& cfg, const TemplateBank& bank);

/// Non-personal corpus of one flavor: empty persona pools, CRTL agent turns.
GeneratedCorpus generate_casual(const GeneratorConfig& cfg, CasualFlavor flavor,
                                const TemplateBank& bank);

}  // namespace wwh
