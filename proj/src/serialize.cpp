#include "wwh/serialize.hpp"

#include <algorithm>
#include <fstream>

#include "wwh/error.hpp"
#include "wwh/text.hpp"

namespace wwh {

using nlohmann::json;

std::size_t TrainingInstance::target_start() const {
  auto it = std::find(loss_mask.begin(), loss_mask.end(), true);
  return static_cast<std::size_t>(it - loss_mask.begin());
}

std::size_t TrainingInstance::masked_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
}

std::string normalize_text(std::string_view t) { return text::join(text::tokenize(t)); }

namespace {

int demo_token(const Vocabulary& vocab, const std::string& value) {
  auto words = text::tokenize(value);
  if (words.size() != 1) throw Error("demographic value '" + value + "' must be a single token");
  return vocab.id(words[0]);
}

std::vector<int> head_tokens(const Demographics& d, const std::vector<std::string>& persona,
                             const Vocabulary& vocab) {
  std::vector<int> ids = {tok::BOS, tok::DEMO, demo_token(vocab, d.gender), demo_token(vocab, d.age_band), tok::SEP};
  if (!persona.empty()) {
    ids.push_back(tok::PERSONA);
    for (const auto& a : persona) {
      auto w = vocab.encode(a);
      ids.insert(ids.end(), w.begin(), w.end());
      ids.push_back(tok::SEP);
    }
  }
  return ids;
}

void check_context(const DialogueContext& c) {
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Speaker want = i % 2 == 0 ? Speaker::User : Speaker::Agent;
    if (c[i].speaker != want) throw Error("context must alternate user/agent turns starting with a user turn");
  }
  if (!c.empty() && c.back().speaker != Speaker::User) throw Error("context must end with a user turn");
}

/// Appends head + the longest context suffix starting with a user turn such
/// that the total plus `tail` fits. Returns the number of dropped turns.
std::size_t assemble(std::vector<int>& out, const std::vector<int>& head, const DialogueContext& context,
                     const Vocabulary& vocab, std::size_t tail, std::size_t max_len) {
  std::vector<std::vector<int>> turns;
  turns.reserve(context.size());
  for (const auto& t : context) {
    std::vector<int> ids = {t.speaker == Speaker::User ? tok::USR : tok::AGT};
    auto w = vocab.encode(t.text);
    ids.insert(ids.end(), w.begin(), w.end());
    turns.push_back(std::move(ids));
  }
  std::size_t body = 0;
  for (const auto& t : turns) body += t.size();
  std::size_t start = 0;
  while (head.size() + body + tail > max_len) {
    if (start == turns.size()) {
      throw Error("instance does not fit in " + std::to_string(max_len) + " tokens even without context");
    }
    // Drop a user/agent pair, or the lone final user turn.
    std::size_t step = start + 1 < turns.size() ? 2 : 1;
    for (std::size_t i = 0; i < step; ++i) body -= turns[start + i].size();
    start += step;
  }
  out = head;
  for (std::size_t i = start; i < turns.size(); ++i) out.insert(out.end(), turns[i].begin(), turns[i].end());
  return start;
}

}  // namespace

TrainingInstance serialize(const DialogueInstance& x, const Vocabulary& vocab, const SerializeOptions& opts) {
  check_context(x.context);
  auto y = vocab.encode(x.response);
  if (y.empty()) throw Error("training response is empty");
  const std::size_t tail = 1 + (opts.emit_rtl ? 1 : 0) + y.size() + 1;

  TrainingInstance inst;
  inst.rtl = x.rtl;
  inst.meta.dropped_turns =
      assemble(inst.input_ids, head_tokens(x.demographics, x.persona, vocab), x.context, vocab, tail, opts.max_seq_len);
  inst.input_ids.push_back(tok::AGT);
  inst.loss_mask.assign(inst.input_ids.size(), false);
  if (opts.emit_rtl) inst.input_ids.push_back(x.rtl == Rtl::PRTL ? tok::PRTL : tok::CRTL);
  inst.input_ids.insert(inst.input_ids.end(), y.begin(), y.end());
  inst.input_ids.push_back(tok::EOS);
  inst.loss_mask.resize(inst.input_ids.size(), true);
  return inst;
}

std::vector<int> serialize_prompt(const Demographics& d, const std::vector<std::string>& persona,
                                  const DialogueContext& context, const Vocabulary& vocab, std::size_t max_seq_len,
                                  std::size_t reserve, std::optional<Rtl> forced) {
  check_context(context);
  std::vector<int> out;
  assemble(out, head_tokens(d, persona, vocab), context, vocab, 1 + reserve, max_seq_len);
  out.push_back(tok::AGT);
  if (forced) out.push_back(*forced == Rtl::PRTL ? tok::PRTL : tok::CRTL);
  return out;
}

DialogueInstance deserialize(const std::vector<int>& ids, const Vocabulary& vocab, bool expect_rtl) {
  std::size_t i = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("malformed instance at token " + std::to_string(i) + ": " + what, 0);
  };
  auto expect = [&](int t, const char* name) {
    if (i >= ids.size() || ids[i] != t) throw fail(std::string("expected ") + name);
    ++i;
  };
  auto words_until = [&](auto stop) {
    std::vector<int> w;
    while (i < ids.size() && !stop(ids[i])) {
      if (Vocabulary::is_special(ids[i]) && ids[i] != tok::UNK) throw fail("unexpected control token");
      w.push_back(ids[i++]);
    }
    return vocab.decode(w);
  };
  auto word = [&](const char* what) {
    if (i >= ids.size() || (Vocabulary::is_special(ids[i]) && ids[i] != tok::UNK)) throw fail(what);
    return vocab.token(ids[i++]);
  };

  DialogueInstance x;
  expect(tok::BOS, "<BOS>");
  expect(tok::DEMO, "<DEMO>");
  x.demographics.gender = word("gender token");
  x.demographics.age_band = word("age token");
  expect(tok::SEP, "<SEP>");
  if (i < ids.size() && ids[i] == tok::PERSONA) {
    ++i;
    do {
      x.persona.push_back(words_until([](int t) { return t == tok::SEP; }));
      expect(tok::SEP, "<SEP> after persona attribute");
    } while (i < ids.size() && ids[i] != tok::USR && ids[i] != tok::AGT);
  }
  const auto marker = [](int t) { return t == tok::USR || t == tok::AGT || t == tok::EOS; };
  while (true) {
    if (i >= ids.size()) throw fail("missing response");
    const int m = ids[i++];
    if (m != tok::USR && m != tok::AGT) throw fail("expected <USR> or <AGT>");
    if (m == tok::AGT && expect_rtl && i < ids.size() && (ids[i] == tok::PRTL || ids[i] == tok::CRTL)) {
      x.rtl = ids[i++] == tok::PRTL ? Rtl::PRTL : Rtl::CRTL;
      x.response = words_until(marker);
      expect(tok::EOS, "<EOS>");
      break;
    }
    std::string t = words_until(marker);
    if (i < ids.size() && ids[i] == tok::EOS) {
      if (expect_rtl || m != tok::AGT) throw fail("missing response type label");
      x.response = std::move(t);
      ++i;
      break;
    }
    x.context.push_back({m == tok::USR ? Speaker::User : Speaker::Agent, std::move(t)});
  }
  if (i != ids.size()) throw fail("trailing tokens after <EOS>");
  check_context(x.context);
  return x;
}

// ---------------------------------------------------------------------------

json to_json(const TrainingInstance& t) {
  json mask = json::array();
  for (bool b : t.loss_mask) mask.push_back(b ? 1 : 0);
  return json{{"input_ids", t.input_ids},
              {"loss_mask", std::move(mask)},
              {"rtl", to_string(t.rtl)},
              {"meta",
               {{"ref", to_json(t.meta.ref)},
                {"copy", t.meta.copy_index},
                {"kind", to_string(t.meta.kind)},
                {"persona_ids", t.meta.persona_ids},
                {"positive_positions", t.meta.positive_positions},
                {"dropped_turns", t.meta.dropped_turns}}}};
}

TrainingInstance training_instance_from_json(const json& j) {
  TrainingInstance t;
  t.input_ids = j.at("input_ids").get<std::vector<int>>();
  for (const auto& b : j.at("loss_mask")) t.loss_mask.push_back(b.get<int>() != 0);
  if (t.input_ids.size() != t.loss_mask.size()) throw SchemaError("input_ids and loss_mask lengths differ");
  t.rtl = parse_rtl(j.at("rtl").get<std::string>());
  const auto& m = j.at("meta");
  t.meta.ref = instance_ref_from_json(m.at("ref"));
  t.meta.copy_index = m.value("copy", std::size_t{0});
  t.meta.kind = parse_subset_kind(m.at("kind").get<std::string>());
  t.meta.persona_ids = m.value("persona_ids", std::vector<std::string>{});
  t.meta.positive_positions = m.value("positive_positions", std::vector<std::size_t>{});
  t.meta.dropped_turns = m.value("dropped_turns", std::size_t{0});
  return t;
}

void write_training_set(std::ostream& out, const TrainingSet& set) {
  const auto& h = set.header;
  json head = {{"record", "training_header"}, {"format", "wwh-train-v1"},   {"vocab_file", h.vocab_file},
               {"vocab_hash", h.vocab_hash},  {"idf_file", h.idf_file},     {"emit_rtl", h.emit_rtl},
               {"max_seq_len", h.max_seq_len}, {"k", h.k},                  {"count", set.instances.size()}};
  out << head.dump() << '\n';
  for (const auto& t : set.instances) out << to_json(t).dump() << '\n';
}

void save_training_set(const std::filesystem::path& path, const TrainingSet& set) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  write_training_set(f, set);
  if (!f) throw IoError("write failed for " + path.string());
}

TrainingSet read_training_set(std::istream& in) {
  TrainingSet set;
  std::string line;
  std::size_t n = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), n);
    }
    try {
      if (!have_header) {
        if (j.value("record", "") != "training_header" || j.value("format", "") != "wwh-train-v1") {
          throw ParseError("first line is not a training header", n);
        }
        auto& h = set.header;
        h.vocab_file = j.value("vocab_file", "");
        h.vocab_hash = j.value("vocab_hash", "");
        h.idf_file = j.value("idf_file", "");
        h.emit_rtl = j.value("emit_rtl", true);
        h.max_seq_len = j.value("max_seq_len", std::size_t{256});
        h.k = j.value("k", std::size_t{5});
        h.count = j.value("count", std::size_t{0});
        have_header = true;
        continue;
      }
      set.instances.push_back(training_instance_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad training record: ") + e.what(), n);
    }
  }
  if (!have_header) throw ParseError("missing training header", n);
  if (set.instances.size() != set.header.count) {
    throw SchemaError("training file declares " + std::to_string(set.header.count) + " records, found " +
                      std::to_string(set.instances.size()));
  }
  return set;
}

TrainingSet load_training_set(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return read_training_set(f);
}

}  // namespace wwh
