#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wwh/augment.hpp"
#include "wwh/blend.hpp"
#include "wwh/metrics.hpp"
#include "wwh/serialize.hpp"
#include "wwh/template_bank.hpp"
#include "wwh/vocab.hpp"

namespace wwh {

/// The corpora behind a manifest, each file loaded once.
class SourceSet {
 public:
  static SourceSet load(const Manifest& m);

  /// Registers an in-memory corpus under a dataset id.
  void add(const std::string& dataset_id, std::shared_ptr<const Corpus> corpus);

  const Corpus& corpus(const std::string& dataset_id) const;
  const Episode& episode(const InstanceRef& ref) const;
  /// Distinct corpora in registration order.
  std::vector<std::shared_ptr<const Corpus>> corpora() const;

  /// Every utterance, persona text and declared demographic value.
  std::vector<std::string> vocabulary_texts() const;
  /// Every utterance and persona text, one document each.
  std::vector<std::string> idf_documents() const;

 private:
  struct Entry {
    std::shared_ptr<const Corpus> corpus;
    std::map<std::string, std::size_t> episode_index;
  };
  std::map<std::string, Entry> by_id_;
  std::vector<std::shared_ptr<const Corpus>> order_;
};

/// (d, rho, c, rtl, y) for one agent turn.
DialogueInstance make_instance(const Episode& ep, std::size_t session, std::size_t turn, const PersonaSubset& rho);

struct PipelineOptions {
  AugmentConfig augment;
  SerializeOptions serialize;
};

/// Augments and serializes every manifest instance in manifest order. Repeated
/// references get increasing copy indices and hence fresh negative draws.
/// Other users' attributes from every personalized source serve as fallback
/// negatives.
TrainingSet build_training_set(const Manifest& m, const SourceSet& sources, const TemplateBank& lexicon,
                               const Vocabulary& vocab, const PipelineOptions& opts);

/// An unshuffled manifest listing every agent turn of a corpus once.
Manifest corpus_manifest(const std::filesystem::path& path, const Corpus& corpus, const std::string& dataset_id);

}  // namespace wwh
