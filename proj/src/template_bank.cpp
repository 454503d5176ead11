#include "wwh/template_bank.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "wwh/error.hpp"
#include "wwh/rng.hpp"
#include "wwh/text.hpp"

namespace wwh {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, next == std::string_view::npos ? s.npos : next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + sep.size();
  }
  return out;
}

}  // namespace

std::set<std::string> template_slots(std::string_view tmpl) {
  std::set<std::string> out;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string_view::npos) {
    const auto end = tmpl.find('}', pos);
    if (end == std::string_view::npos) break;
    std::string name(tmpl.substr(pos + 1, end - pos - 1));
    if (name != "echo") out.insert(std::move(name));
    pos = end + 1;
  }
  return out;
}

std::string fill_template(std::string_view tmpl, const SlotBinding& binding, std::string_view echo) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw ConfigError("unterminated slot in '" + std::string(tmpl) + "'");
    out.append(tmpl.substr(pos, open - pos));
    const std::string name(tmpl.substr(open + 1, close - open - 1));
    if (name == "echo") {
      out.append(echo);
    } else {
      auto it = binding.find(name);
      if (it == binding.end()) throw ConfigError("unbound slot {" + name + "}");
      out.append(it->second);
    }
    pos = close + 1;
  }
  return out;
}

std::string second_person(std::string_view statement) {
  static const std::map<std::string, std::string> swap = {
      {"i", "you"},     {"me", "you"},   {"my", "your"},         {"mine", "yours"},
      {"myself", "yourself"}, {"am", "are"}, {"im", "youre"}, {"was", "were"}};
  auto toks = text::tokenize(statement);
  for (auto& t : toks) {
    if (auto it = swap.find(t); it != swap.end()) t = it->second;
  }
  return text::join(toks);
}

std::vector<SlotBinding> all_bindings(const SlotTable& slots, const std::set<std::string>& names) {
  std::vector<SlotBinding> out = {{}};
  for (const auto& name : names) {
    auto it = slots.find(name);
    if (it == slots.end()) throw ConfigError("unknown slot {" + name + "}");
    std::vector<SlotBinding> next;
    for (const auto& partial : out) {
      for (const auto& v : it->second) {
        auto b = partial;
        b[name] = v;
        next.push_back(std::move(b));
      }
    }
    out = std::move(next);
  }
  return out;
}

TemplateBank TemplateBank::parse_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse(in);
}

TemplateBank TemplateBank::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template bank " + path.string());
  return parse(in);
}

TemplateBank TemplateBank::parse(std::istream& in) {
  std::ostringstream raw;
  raw << in.rdbuf();
  const std::string bytes = raw.str();

  TemplateBank bank;
  bank.hash_ = fnv1a64(bytes);
  Topic* topic = nullptr;
  CasualFamily* family = nullptr;

  std::istringstream lines(bytes);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ParseError("unterminated section header", lineno);
      const auto parts = split(t.substr(1, t.size() - 2), " ");
      if (parts.size() != 2) throw ParseError("section must be [topic NAME] or [casual NAME]", lineno);
      if (parts[0] == "topic") {
        bank.topics_.push_back(Topic{.name = parts[1]});
        topic = &bank.topics_.back();
        family = nullptr;
      } else if (parts[0] == "casual") {
        bank.families_.push_back(CasualFamily{.name = parts[1]});
        family = &bank.families_.back();
        topic = nullptr;
      } else {
        throw ParseError("unknown section kind '" + parts[0] + "'", lineno);
      }
      continue;
    }
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw ParseError("expected 'key: value'", lineno);
    const std::string key = trim(std::string_view(t).substr(0, colon));
    const std::string value = trim(std::string_view(t).substr(colon + 1));
    if (!topic && !family) throw ParseError("entry outside a section", lineno);
    SlotTable& slots = topic ? topic->slots : family->slots;

    if (key.rfind("slot ", 0) == 0) {
      slots[trim(std::string_view(key).substr(5))] = split(value, "|");
    } else if (topic && key == "keywords") {
      topic->keywords = text::tokenize(value);
    } else if (topic && key == "persona") {
      topic->persona_templates.push_back(value);
    } else if (topic && key == "cue") {
      topic->cue_templates.push_back(value);
    } else if (topic && key == "hard") {
      topic->hard_templates.push_back(value);
    } else if (topic && key == "soft") {
      topic->soft_templates.push_back(value);
    } else if (family && key == "pair") {
      const auto sides = split(value, "=>");
      if (sides.size() != 2) throw ParseError("pair must be 'user => agent'", lineno);
      family->pairs.push_back({sides[0], sides[1]});
    } else if (family && key == "ack") {
      family->acks.push_back(value);
    } else {
      throw ParseError("unknown key '" + key + "'", lineno);
    }
  }
  for (const auto& tp : bank.topics_) {
    for (const auto& k : tp.keywords) bank.keyword_topic_.emplace(k, tp.name);
  }
  return bank;
}

const Topic& TemplateBank::topic(std::string_view name) const {
  for (const auto& t : topics_) {
    if (t.name == name) return t;
  }
  throw NotFoundError("no topic '" + std::string(name) + "' in template bank");
}

bool TemplateBank::has_family(std::string_view name) const {
  return std::any_of(families_.begin(), families_.end(),
                     [&](const CasualFamily& f) { return f.name == name; });
}

const CasualFamily& TemplateBank::family(std::string_view name) const {
  for (const auto& f : families_) {
    if (f.name == name) return f;
  }
  throw ConfigError("template bank has no casual family '" + std::string(name) + "'");
}

std::set<std::string> TemplateBank::topics_of(std::string_view str) const {
  std::set<std::string> out;
  for (const auto& tok : text::tokenize(str)) {
    if (auto it = keyword_topic_.find(tok); it != keyword_topic_.end()) out.insert(it->second);
  }
  return out;
}

std::vector<std::string> TemplateBank::lint() const {
  std::vector<std::string> problems;
  auto problem = [&](std::string p) { problems.push_back(std::move(p)); };

  std::map<std::string, std::string> owner;
  for (const auto& tp : topics_) {
    if (tp.keywords.empty()) problem("topic " + tp.name + ": no keywords");
    for (const auto& k : tp.keywords) {
      if (auto [it, fresh] = owner.emplace(k, tp.name); !fresh && it->second != tp.name) {
        problem("keyword '" + k + "' shared by topics " + it->second + " and " + tp.name);
      }
    }
  }
  auto mentions_other = [&](const std::string& rendered, const std::string& self) {
    for (const auto& t : topics_of(rendered)) {
      if (t != self) return t;
    }
    return std::string();
  };

  for (const auto& tp : topics_) {
    const std::string where = "topic " + tp.name;
    if (tp.persona_templates.empty()) problem(where + ": missing persona variant");
    if (tp.cue_templates.empty()) problem(where + ": missing cue variant");
    if (tp.hard_templates.empty()) problem(where + ": missing hard variant");
    if (tp.soft_templates.empty()) problem(where + ": missing soft variant");

    for (const auto& cue : tp.cue_templates) {
      for (const auto& b : all_bindings(tp.slots, template_slots(cue))) {
        const auto r = fill_template(cue, b);
        if (!topics_of(r).count(tp.name)) problem(where + ": cue '" + r + "' lacks a keyword");
        if (auto o = mentions_other(r, tp.name); !o.empty()) problem(where + ": cue mentions topic " + o);
      }
    }
    for (const auto& pt : tp.persona_templates) {
      const auto pslots = template_slots(pt);
      for (const auto& b : all_bindings(tp.slots, pslots)) {
        const auto persona = fill_template(pt, b);
        if (!topics_of(persona).count(tp.name)) {
          problem(where + ": persona '" + persona + "' lacks a keyword");
        }
        if (auto o = mentions_other(persona, tp.name); !o.empty()) {
          problem(where + ": persona mentions topic " + o);
        }
        const auto pset = text::content_word_set(persona);
        const auto echo = second_person(persona);
        auto check = [&](const std::string& tmpl, bool hard) {
          for (const auto& s : template_slots(tmpl)) {
            if (!pslots.count(s)) {
              problem(where + ": response slot {" + s + "} not bound by persona '" + pt + "'");
              return;
            }
          }
          const auto r = fill_template(tmpl, b, echo);
          const double j = text::jaccard(text::content_word_set(r), pset);
          if (hard && j < 0.5) {
            problem(where + ": hard '" + r + "' has jaccard " + std::to_string(j) + " < 0.5");
          }
          if (!hard && (j <= 0.0 || j >= 0.5)) {
            problem(where + ": soft '" + r + "' has jaccard " + std::to_string(j) + " outside (0, 0.5)");
          }
        };
        for (const auto& h : tp.hard_templates) check(h, true);
        for (const auto& s : tp.soft_templates) check(s, false);
      }
    }
  }

  for (const auto& f : families_) {
    const std::string where = "casual " + f.name;
    if (f.pairs.empty()) problem(where + ": no pairs");
    auto check_free = [&](const std::string& tmpl) {
      for (const auto& b : all_bindings(f.slots, template_slots(tmpl))) {
        const auto r = fill_template(tmpl, b);
        if (auto t = topics_of(r); !t.empty()) problem(where + ": '" + r + "' mentions topic " + *t.begin());
      }
    };
    for (const auto& p : f.pairs) {
      check_free(p.user);
      check_free(p.agent);
      for (const auto& s : template_slots(p.agent)) {
        if (!template_slots(p.user).count(s)) problem(where + ": agent slot {" + s + "} unbound by user side");
      }
    }
    for (const auto& a : f.acks) check_free(a);
  }
  return problems;
}

void TemplateBank::require_valid() const {
  const auto problems = lint();
  if (problems.empty()) return;
  std::string msg = "template bank invalid:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

}  // namespace wwh
