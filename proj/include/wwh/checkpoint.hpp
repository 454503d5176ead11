#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wwh/corpus.hpp"
#include "wwh/metrics.hpp"
#include "wwh/model.hpp"
#include "wwh/train.hpp"
#include "wwh/vocab.hpp"

namespace wwh {

/// Everything needed to decode and evaluate: the network, its vocabulary and
/// the IDF table of its training corpora.
struct Checkpoint {
  ModelConfig config;
  TrainConfig train;
  bool emit_rtl = true;
  Vocabulary vocab;
  IdfTable idf;
  std::size_t step = 0;
  std::vector<double> params;
};

/// Layout: the 8 bytes "WWHCKPT1", a little-endian u64 header length, a JSON
/// header (config, train config, emit_rtl, step, vocab tokens and hash, idf,
/// parameter count and checksum), then the parameters as little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);

/// Throws IoError, ParseError on a damaged file, or SchemaError when the
/// embedded vocabulary does not match its recorded hash.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct DecodeConfig {
  std::size_t max_new_tokens = 40;
  std::size_t top_k = 0;  // 0 = greedy
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct Generation {
  std::optional<Rtl> rtl;  // empty for models trained without labels
  bool forced = false;
  std::vector<int> ids;  // response tokens, without <EOS>
  std::string text;
  std::vector<double> token_logprobs;  // per emitted token incl. <EOS>, unrestricted distribution
  bool hit_eos = false;
};

/// A checkpoint bound to a double-precision network. Immutable after
/// construction; every method is safe to call from concurrent threads.
class LanguageModel {
 public:
  explicit LanguageModel(Checkpoint c);
  static LanguageModel load(const std::filesystem::path& path) { return LanguageModel(load_checkpoint(path)); }

  const Checkpoint& checkpoint() const { return ckpt_; }
  const Vocabulary& vocab() const { return ckpt_.vocab; }
  const Transformer<double>& net() const { return net_; }
  bool emit_rtl() const { return ckpt_.emit_rtl; }

  /// Decodes from a prompt ending in <AGT>. With `force` set the label slot
  /// is seeded; otherwise it is chosen among <PRTL>/<CRTL> only. Response
  /// tokens never include control tokens other than <EOS>.
  Generation generate_from(std::vector<int> prompt, std::optional<Rtl> force, const DecodeConfig& dc = {}) const;

  Generation generate(const Demographics& d, const std::vector<std::string>& persona, const DialogueContext& context,
                      std::optional<Rtl> force, const DecodeConfig& dc = {}) const;

  /// log p(<PRTL>) and log p(<CRTL>) at the label slot.
  std::pair<double, double> rtl_logprobs(const std::vector<int>& prompt) const;

  /// Teacher-forced log-probs of the masked tokens, in order.
  std::vector<double> score(const std::vector<int>& ids, const std::vector<bool>& mask) const;

 private:
  Checkpoint ckpt_;
  Transformer<double> net_;
};

}  // namespace wwh
