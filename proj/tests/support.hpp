#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "wwh/pipeline.hpp"
#include "wwh/synth.hpp"
#include "wwh/template_bank.hpp"

namespace wwh::testing {

inline const TemplateBank& bank() {
  static const TemplateBank b = TemplateBank::load(std::string(WWH_DATA_DIR) + "/template_bank.txt");
  return b;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "wwh") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Corpus mspd_corpus(std::size_t n, std::uint64_t seed, const std::string& prefix = "u") {
  GeneratorConfig g;
  g.n_episodes = n;
  g.seed = seed;
  g.id_prefix = prefix;
  return generate_mspd(g, bank()).corpus;
}

inline Corpus casual_corpus(std::size_t n, std::uint64_t seed, CasualFlavor f = CasualFlavor::Daily) {
  GeneratorConfig g;
  g.n_episodes = n;
  g.seed = seed;
  return generate_casual(g, f, bank()).corpus;
}

/// A small in-memory pipeline: one personalized and one casual corpus with
/// the vocabulary and IDF table built over both.
struct MiniWorld {
  std::shared_ptr<const Corpus> mspd;
  std::shared_ptr<const Corpus> casual;
  SourceSet sources;
  Vocabulary vocab;
  IdfTable idf;

  MiniWorld(std::size_t n_mspd = 12, std::size_t n_casual = 6, std::uint64_t seed = 5)
      : mspd(std::make_shared<const Corpus>(mspd_corpus(n_mspd, seed))),
        casual(std::make_shared<const Corpus>(casual_corpus(n_casual, seed + 1))) {
    sources.add("mspd_pr", mspd);
    sources.add("mspd_npr", mspd);
    sources.add("casual", casual);
    vocab = Vocabulary::build(sources.vocabulary_texts());
    idf = IdfTable::build(sources.idf_documents());
  }

  /// Manifest over every agent turn of both corpora, in corpus order.
  Manifest manifest() const {
    Manifest m;
    auto [pr, npr] = split_mspd(mspd->episodes);
    ManifestSource a, b, c;
    a.source = {"mspd_pr", "mspd.jsonl", 1.0, "pr"};
    a.corpus_kind = "mspd";
    b.source = {"mspd_npr", "mspd.jsonl", 1.0, "npr"};
    b.corpus_kind = "mspd";
    c.source = {"casual", "casual.jsonl", 1.0, "all"};
    c.corpus_kind = casual->header.kind;
    m.sources = {a, b, c};
    m.instances = pr;
    m.instances.insert(m.instances.end(), npr.begin(), npr.end());
    auto cas = agent_instances(casual->episodes, "casual");
    m.instances.insert(m.instances.end(), cas.begin(), cas.end());
    return m;
  }

  TrainingSet training_set(std::size_t k = 5, bool emit_rtl = true, std::size_t max_len = 256) const {
    PipelineOptions po;
    po.augment.k = k;
    po.serialize.emit_rtl = emit_rtl;
    po.serialize.max_seq_len = max_len;
    return build_training_set(manifest(), sources, bank(), vocab, po);
  }
};

}  // namespace wwh::testing
