#include "wwh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "wwh/serialize.hpp"

namespace wwh {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'W', 'W', 'H', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

std::uint64_t param_checksum(const std::vector<double>& p) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  json h = {{"format", "wwh-checkpoint-v1"},
            {"config", to_json(c.config)},
            {"train", to_json(c.train)},
            {"emit_rtl", c.emit_rtl},
            {"step", c.step},
            {"vocab", c.vocab.tokens()},
            {"vocab_hash", hash_hex(c.vocab.hash())},
            {"idf", c.idf.to_json()},
            {"param_count", c.params.size()},
            {"param_checksum", hash_hex(param_checksum(c.params))}};
  const std::string header = h.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(kMagic, sizeof kMagic);
    const std::uint64_t len = header.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char*>(c.params.data()),
            static_cast<std::streamsize>(c.params.size() * sizeof(double)));
    if (!f) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!f.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError(path.string() + ": not a checkpoint", 0);
  }
  if (!f.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 30)) {
    throw ParseError(path.string() + ": bad header length", 0);
  }
  std::string header(len, '\0');
  if (!f.read(header.data(), static_cast<std::streamsize>(len))) throw ParseError(path.string() + ": truncated", 0);
  Checkpoint c;
  std::string want_sum;
  try {
    json h = json::parse(header);
    c.config = model_config_from_json(h.at("config"));
    c.train = train_config_from_json(h.at("train"));
    c.emit_rtl = h.at("emit_rtl").get<bool>();
    c.step = h.at("step").get<std::size_t>();
    c.vocab = Vocabulary::from_tokens(h.at("vocab").get<std::vector<std::string>>());
    if (hash_hex(c.vocab.hash()) != h.at("vocab_hash").get<std::string>()) {
      throw SchemaError(path.string() + ": vocabulary hash mismatch");
    }
    c.idf = IdfTable::from_json(h.at("idf"));
    c.params.resize(h.at("param_count").get<std::size_t>());
    want_sum = h.at("param_checksum").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what(), 0);
  }
  if (!f.read(reinterpret_cast<char*>(c.params.data()), static_cast<std::streamsize>(c.params.size() * sizeof(double)))) {
    throw ParseError(path.string() + ": truncated parameters", 0);
  }
  if (hash_hex(param_checksum(c.params)) != want_sum) throw ParseError(path.string() + ": parameter checksum mismatch", 0);
  if (c.config.vocab_size != c.vocab.size()) throw SchemaError(path.string() + ": vocab size differs from config");
  return c;
}

// ---------------------------------------------------------------------------

LanguageModel::LanguageModel(Checkpoint c) : ckpt_(std::move(c)), net_(ckpt_.config, ckpt_.params) {
  if (ckpt_.config.vocab_size != ckpt_.vocab.size()) throw SchemaError("checkpoint vocab size differs from config");
}

namespace {

int pick(const Eigen::Matrix<double, 1, Eigen::Dynamic>& lp, const std::vector<int>& allowed, const DecodeConfig& dc,
         Rng& rng) {
  if (dc.top_k == 0) {
    int best = allowed.front();
    for (int a : allowed) {
      if (lp(a) > lp(best)) best = a;
    }
    return best;
  }
  std::vector<int> cand = allowed;
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return lp(a) > lp(b); });
  cand.resize(std::min(cand.size(), dc.top_k));
  std::vector<double> w;
  const double t = dc.temperature > 0 ? dc.temperature : 1.0;
  for (int a : cand) w.push_back(std::exp((lp(a) - lp(cand.front())) / t));
  double total = 0;
  for (double x : w) total += x;
  double r = rng.uniform() * total;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    r -= w[i];
    if (r < 0) return cand[i];
  }
  return cand.back();
}

}  // namespace

Generation LanguageModel::generate_from(std::vector<int> prompt, std::optional<Rtl> force,
                                        const DecodeConfig& dc) const {
  if (prompt.empty() || prompt.back() != tok::AGT) throw Error("prompt must end with <AGT>");
  const std::size_t max_len = ckpt_.config.max_seq_len;
  if (prompt.size() + 1 > max_len) throw Error("prompt leaves no room for a response");
  Rng rng(dc.seed);
  Generation g;
  auto kv = net_.make_cache();
  auto lp = net_.prefill(prompt, kv);

  if (ckpt_.emit_rtl) {
    int label;
    if (force) {
      label = *force == Rtl::PRTL ? tok::PRTL : tok::CRTL;
      g.forced = true;
    } else {
      label = pick(lp, {tok::PRTL, tok::CRTL}, dc, rng);
    }
    g.rtl = label == tok::PRTL ? Rtl::PRTL : Rtl::CRTL;
    if (kv.len >= max_len) return g;
    lp = net_.step(label, kv);
  } else if (force) {
    throw Error("this model was trained without response type labels; cannot force one");
  }

  std::vector<int> allowed;
  allowed.push_back(tok::EOS);
  for (int i = tok::kNumSpecial; i < static_cast<int>(ckpt_.vocab.size()); ++i) allowed.push_back(i);
  while (g.ids.size() < dc.max_new_tokens) {
    const int next = pick(lp, allowed, dc, rng);
    g.token_logprobs.push_back(lp(next));
    if (next == tok::EOS) {
      g.hit_eos = true;
      break;
    }
    g.ids.push_back(next);
    if (kv.len >= max_len) break;
    lp = net_.step(next, kv);
  }
  g.text = ckpt_.vocab.decode(g.ids);
  return g;
}

Generation LanguageModel::generate(const Demographics& d, const std::vector<std::string>& persona,
                                   const DialogueContext& context, std::optional<Rtl> force,
                                   const DecodeConfig& dc) const {
  const std::size_t reserve = std::min<std::size_t>(dc.max_new_tokens + 1, ckpt_.config.max_seq_len / 4);
  return generate_from(serialize_prompt(d, persona, context, ckpt_.vocab, ckpt_.config.max_seq_len, reserve), force,
                       dc);
}

std::pair<double, double> LanguageModel::rtl_logprobs(const std::vector<int>& prompt) const {
  auto lp = net_.log_probs(prompt);
  const auto last = lp.rows() - 1;
  return {lp(last, tok::PRTL), lp(last, tok::CRTL)};
}

std::vector<double> LanguageModel::score(const std::vector<int>& ids, const std::vector<bool>& mask) const {
  if (mask.size() != ids.size()) throw Error("mask length differs from sequence length");
  auto lp = net_.log_probs(ids);
  std::vector<double> out;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    if (mask[t]) out.push_back(lp(static_cast<Eigen::Index>(t - 1), ids[t]));
  }
  return out;
}

}  // namespace wwh
