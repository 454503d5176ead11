#include "wwh/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <thread>

#include "wwh/error.hpp"
#include "wwh/rng.hpp"

namespace wwh {

std::string_view to_string(CasualFlavor f) {
  switch (f) {
    case CasualFlavor::Daily: return "daily";
    case CasualFlavor::Knowledge: return "knowledge";
    case CasualFlavor::Empathy: return "empathy";
  }
  return "daily";
}

CasualFlavor parse_flavor(std::string_view s) {
  if (s == "daily") return CasualFlavor::Daily;
  if (s == "knowledge") return CasualFlavor::Knowledge;
  if (s == "empathy") return CasualFlavor::Empathy;
  throw ConfigError("unknown casual flavor '" + std::string(s) + "'");
}

namespace {

struct Utterance {
  std::string text;
  std::string template_id;
};

SlotBinding random_binding(Rng& rng, const SlotTable& slots, const std::set<std::string>& names) {
  SlotBinding b;
  for (const auto& n : names) {
    auto it = slots.find(n);
    if (it == slots.end() || it->second.empty()) throw ConfigError("slot {" + n + "} has no values");
    b[n] = rng.pick(it->second);
  }
  return b;
}

std::string episode_id(const std::string& prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%05zu", index);
  return prefix + buf;
}

Demographics random_demographics(Rng& rng, const CorpusHeader& h) {
  return {rng.pick(h.genders), rng.pick(h.age_bands)};
}

std::pair<Utterance, Utterance> casual_exchange(Rng& rng, const CasualFamily& fam) {
  const std::size_t i = rng.below(fam.pairs.size());
  const auto& pair = fam.pairs[i];
  const auto b = random_binding(rng, fam.slots, template_slots(pair.user));
  const std::string base = "casual/" + fam.name + "/pair/" + std::to_string(i);
  return {{fill_template(pair.user, b), base + "/user"}, {fill_template(pair.agent, b), base + "/agent"}};
}

/// A pooled persona attribute together with how it was rendered.
struct PoolEntry {
  PersonaAttribute attr;
  const Topic* topic = nullptr;
  SlotBinding binding;
};

PoolEntry make_attribute(Rng& rng, const Topic& topic, std::string id) {
  PoolEntry e;
  e.topic = &topic;
  const std::size_t t = rng.below(topic.persona_templates.size());
  const auto& tmpl = topic.persona_templates[t];
  e.binding = random_binding(rng, topic.slots, template_slots(tmpl));
  e.attr.id = std::move(id);
  e.attr.text = fill_template(tmpl, e.binding);
  return e;
}

Utterance cue_for(Rng& rng, const Topic& topic) {
  const std::size_t i = rng.below(topic.cue_templates.size());
  auto b = random_binding(rng, topic.slots, template_slots(topic.cue_templates[i]));
  return {fill_template(topic.cue_templates[i], b), "topic/" + topic.name + "/cue/" + std::to_string(i)};
}

Utterance grounded_response(Rng& rng, const PoolEntry& p, bool hard) {
  const auto& templates = hard ? p.topic->hard_templates : p.topic->soft_templates;
  const std::size_t i = rng.below(templates.size());
  return {fill_template(templates[i], p.binding, second_person(p.attr.text)),
          "topic/" + p.topic->name + (hard ? "/hard/" : "/soft/") + std::to_string(i)};
}

Utterance ack(Rng& rng, const CasualFamily& fam) {
  const std::size_t i = rng.below(fam.acks.size());
  return {fam.acks[i], "casual/" + fam.name + "/ack/" + std::to_string(i)};
}

struct EpisodeOut {
  Episode episode;
  std::vector<std::vector<std::string>> trace;
};

Turn user_turn(std::string text) { return Turn{.speaker = Speaker::User, .text = std::move(text)}; }

Turn agent_turn(std::string text, Rtl rtl) {
  return Turn{.speaker = Speaker::Agent, .text = std::move(text), .rtl = rtl};
}

EpisodeOut mspd_episode(const GeneratorConfig& cfg, const TemplateBank& bank, const CorpusHeader& header,
                        const std::vector<const CasualFamily*>& families, const CasualFamily& ack_family,
                        std::size_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  EpisodeOut out;
  Episode& ep = out.episode;
  ep.user_id = episode_id(cfg.id_prefix.empty() ? "mspd" : cfg.id_prefix, index);
  ep.demographics = random_demographics(rng, header);

  std::vector<const Topic*> topics;
  for (const auto& t : bank.topics()) topics.push_back(&t);
  rng.shuffle(topics);
  const auto n_initial = std::min<std::size_t>(
      topics.size(), static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(cfg.personas_min),
                                                          static_cast<std::int64_t>(cfg.personas_max))));
  std::vector<PoolEntry> pool;
  std::size_t next_topic = 0;
  auto new_id = [&] { return "p" + std::to_string(pool.size() + 1); };
  for (; next_topic < n_initial; ++next_topic) pool.push_back(make_attribute(rng, *topics[next_topic], new_id()));

  for (std::size_t s = 0; s < cfg.sessions_per_episode; ++s) {
    Session session;
    std::vector<std::string> trace;
    const auto n_turns = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(cfg.turns_min), static_cast<std::int64_t>(cfg.turns_max)));
    const std::size_t n_agent = n_turns / 2;
    std::size_t n_pr = rng.bernoulli(cfg.two_pr_probability) ? 2 : 1;
    n_pr = std::min({n_pr, cfg.max_pr_per_session, n_agent});
    const auto pr_list = rng.sample_indices(n_agent, n_pr);
    const std::set<std::size_t> pr_slots(pr_list.begin(), pr_list.end());
    std::set<std::string> grounded;

    for (std::size_t j = 0; 2 * j < n_turns; ++j) {
      const bool has_agent = 2 * j + 1 < n_turns;
      const std::size_t user_index = 2 * j;

      if (has_agent && pr_slots.count(j)) {
        std::vector<const PoolEntry*> candidates;
        for (const auto& p : pool) {
          if (!grounded.count(p.attr.id)) candidates.push_back(&p);
        }
        if (!candidates.empty()) {
          const PoolEntry& p = *rng.pick(candidates);
          grounded.insert(p.attr.id);
          const auto cue = cue_for(rng, *p.topic);
          const auto reply = grounded_response(rng, p, rng.bernoulli(cfg.hard_probability));
          session.turns.push_back(user_turn(cue.text));
          auto a = agent_turn(reply.text, Rtl::PRTL);
          a.grounded_persona_ids = {p.attr.id};
          session.turns.push_back(std::move(a));
          trace.push_back(cue.template_id);
          trace.push_back(reply.template_id);
          continue;
        }
      }

      if (next_topic < topics.size() && rng.bernoulli(cfg.new_persona_rate)) {
        PoolEntry p = make_attribute(rng, *topics[next_topic++], new_id());
        p.attr.source_turn = TurnLocation{s, user_index};
        auto u = user_turn(p.attr.text);
        u.introduces_persona_ids = {p.attr.id};
        session.turns.push_back(std::move(u));
        trace.push_back("topic/" + p.topic->name + "/persona");
        pool.push_back(std::move(p));
        if (has_agent) {
          const auto r = ack(rng, ack_family);
          session.turns.push_back(agent_turn(r.text, Rtl::CRTL));
          trace.push_back(r.template_id);
        }
      } else if (!pool.empty() && rng.bernoulli(cfg.distractor_rate)) {
        const auto cue = cue_for(rng, *rng.pick(pool).topic);
        session.turns.push_back(user_turn(cue.text));
        trace.push_back(cue.template_id + "/distractor");
        if (has_agent) {
          const auto r = ack(rng, ack_family);
          session.turns.push_back(agent_turn(r.text, Rtl::CRTL));
          trace.push_back(r.template_id);
        }
      } else {
        const auto [u, a] = casual_exchange(rng, *rng.pick(families));
        session.turns.push_back(user_turn(u.text));
        trace.push_back(u.template_id);
        if (has_agent) {
          session.turns.push_back(agent_turn(a.text, Rtl::CRTL));
          trace.push_back(a.template_id);
        }
      }
    }
    ep.sessions.push_back(std::move(session));
    out.trace.push_back(std::move(trace));
  }
  for (auto& p : pool) ep.persona_pool.push_back(std::move(p.attr));
  return out;
}

EpisodeOut casual_episode(const GeneratorConfig& cfg, const CasualFamily& fam, const CorpusHeader& header,
                          std::size_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  EpisodeOut out;
  Episode& ep = out.episode;
  ep.user_id = episode_id(cfg.id_prefix.empty() ? fam.name : cfg.id_prefix, index);
  ep.demographics = random_demographics(rng, header);
  for (std::size_t s = 0; s < cfg.sessions_per_episode; ++s) {
    Session session;
    std::vector<std::string> trace;
    const auto n_turns = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(cfg.turns_min), static_cast<std::int64_t>(cfg.turns_max)));
    for (std::size_t j = 0; 2 * j < n_turns; ++j) {
      const auto [u, a] = casual_exchange(rng, fam);
      session.turns.push_back(user_turn(u.text));
      trace.push_back(u.template_id);
      if (2 * j + 1 < n_turns) {
        session.turns.push_back(agent_turn(a.text, Rtl::CRTL));
        trace.push_back(a.template_id);
      }
    }
    ep.sessions.push_back(std::move(session));
    out.trace.push_back(std::move(trace));
  }
  return out;
}

template <typename MakeEpisode>
GeneratedCorpus run_episodes(const GeneratorConfig& cfg, CorpusHeader header, MakeEpisode make) {
  if (cfg.turns_min > cfg.turns_max || cfg.turns_min == 0) throw ConfigError("invalid turns range");
  if (cfg.personas_min > cfg.personas_max) throw ConfigError("invalid personas range");
  std::vector<EpisodeOut> outs(cfg.n_episodes);
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.n_episodes));
  if (threads == 1) {
    for (std::size_t i = 0; i < cfg.n_episodes; ++i) outs[i] = make(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < cfg.n_episodes; i += threads) outs[i] = make(i);
      });
    }
  }
  GeneratedCorpus g;
  g.corpus.header = std::move(header);
  for (auto& o : outs) {
    g.corpus.episodes.push_back(std::move(o.episode));
    g.trace.push_back(std::move(o.trace));
  }
  return g;
}

}  // namespace

GeneratedCorpus generate_mspd(const GeneratorConfig& cfg, const TemplateBank& bank) {
  bank.require_valid();
  if (bank.topics().empty()) throw ConfigError("template bank has no topics");
  std::vector<const CasualFamily*> families;
  const CasualFamily* ack_family = nullptr;
  for (const auto& f : bank.families()) {
    if (!f.pairs.empty()) families.push_back(&f);
    if (!ack_family && !f.acks.empty()) ack_family = &f;
  }
  if (families.empty() || !ack_family) throw ConfigError("template bank needs casual pairs and acks");
  CorpusHeader header;
  header.kind = "mspd";
  return run_episodes(cfg, header, [&](std::size_t i) {
    return mspd_episode(cfg, bank, header, families, *ack_family, i);
  });
}

GeneratedCorpus generate_casual(const GeneratorConfig& cfg, CasualFlavor flavor, const TemplateBank& bank) {
  bank.require_valid();
  const CasualFamily& fam = bank.family(to_string(flavor));
  if (fam.pairs.empty()) throw ConfigError("casual family " + fam.name + " has no pairs");
  CorpusHeader header;
  header.kind = std::string(to_string(flavor));
  return run_episodes(cfg, header, [&](std::size_t i) { return casual_episode(cfg, fam, header, i); });
}

}  // namespace wwh
