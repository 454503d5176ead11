#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wwh/augment.hpp"
#include "wwh/checkpoint.hpp"
#include "wwh/metrics.hpp"
#include "wwh/serialize.hpp"
#include "wwh/synth.hpp"

namespace wwh {

/// exp(mean masked NLL) through the batched training forward. Throws Error
/// on an empty set or a vocabulary mismatch.
double perplexity(const LanguageModel& model, const TrainingSet& set);

/// exp(-mean of score() over every masked token): the independent path.
double perplexity_from_scores(const LanguageModel& model, const TrainingSet& set);

/// Throws SchemaError when the set was serialized with another vocabulary or
/// label mode.
void check_compatible(const LanguageModel& model, const TrainingSet& set);

struct RtlAccuracy {
  std::size_t prtl_total = 0, prtl_correct = 0;
  std::size_t crtl_total = 0, crtl_correct = 0;
  double prtl() const { return prtl_total ? static_cast<double>(prtl_correct) / static_cast<double>(prtl_total) : 0; }
  double crtl() const { return crtl_total ? static_cast<double>(crtl_correct) / static_cast<double>(crtl_total) : 0; }
};

/// Free-decodes the label slot of every instance (or forces `force`) and
/// compares it with the gold label. Throws Error when a class is empty.
RtlAccuracy rtl_accuracy(const LanguageModel& model, const TrainingSet& set, std::optional<Rtl> force = std::nullopt);

struct GroundingCounts {
  std::size_t hard = 0, soft = 0, non_personalized = 0;
};

struct EvalReport {
  std::string name;
  double ppl = 0;
  double f1 = 0;
  double f1_positive_only = 0;  // against the ground-truth attributes only
  double p_cover = 0;
  std::optional<RtlAccuracy> rtl;  // absent for models without labels
  GroundingCounts grounding;
  std::size_t n_instances = 0;
  std::size_t prtl_emitted = 0;
};

nlohmann::json to_json(const EvalReport& r);

struct EvalOptions {
  DecodeConfig decode;
  double tau_hard = kHardGroundingThreshold;
};

/// Per-instance generation result kept for inspection.
struct EvalItem {
  std::string response;
  std::optional<Rtl> rtl;
  Rtl gold = Rtl::CRTL;
  double f1 = 0;
  double p_cover = 0;
  GroundingJudgment grounding;
};

/// PPL over the set, then one free decode per instance for F1, P-Cover,
/// label accuracy and grounding counts. Models without labels get their
/// label inferred as PRTL when the response shares a content word with some
/// attribute.
EvalReport evaluate(const LanguageModel& model, const TrainingSet& set, const EvalOptions& opts = {},
                    std::vector<EvalItem>* items = nullptr);

/// Aligned-column table, one row per report.
std::string format_report_table(const std::vector<EvalReport>& rows);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::string name;
  double w_casual = 0, w_pr = 0, w_npr = 0;  // 0 drops the dataset
  std::size_t k = 5;
  bool emit_rtl = true;
};

struct SweepSpec {
  GeneratorConfig mspd;                // training personalized corpus
  GeneratorConfig casual;              // per flavor; the three flavors are merged
  GeneratorConfig eval;                // held-out personalized corpus
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;               // k is overridden per row
  std::uint64_t blend_seed = 1;
  std::size_t max_seq_len = 256;
  EvalOptions eval_options;
  std::vector<SweepRow> rows;
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j);
SweepSpec load_sweep_spec(const std::filesystem::path& path);

struct SweepResult {
  std::vector<EvalReport> reports;
  std::vector<double> seconds;  // wall time per row
};

/// Generates the corpora once, then per row: blend, augment, train, evaluate.
/// Artifacts go to out_dir/<row name>/, plus sweep.jsonl and sweep.txt.
/// `log` receives progress lines when given.
SweepResult run_sweep(const SweepSpec& spec, const TemplateBank& bank, const std::filesystem::path& out_dir,
                      std::ostream* log = nullptr);

}  // namespace wwh
