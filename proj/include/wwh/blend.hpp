#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wwh/corpus.hpp"

namespace wwh {

/// One trainable (context, response) pair: an agent turn of a loaded corpus.
struct InstanceRef {
  std::string dataset_id;
  std::string episode_id;
  std::size_t session_index = 0;
  std::size_t turn_index = 0;

  bool operator==(const InstanceRef&) const = default;
  auto operator<=>(const InstanceRef&) const = default;
  std::uint64_t hash() const;
};

/// Agent turns of a personalized corpus split by response type:
/// first = PRTL turns (personalized), second = CRTL turns.
std::pair<std::vector<InstanceRef>, std::vector<InstanceRef>> split_mspd(
    const std::vector<Episode>& episodes, const std::string& pr_dataset_id = "mspd_pr",
    const std::string& npr_dataset_id = "mspd_npr");

/// Every agent turn, in corpus order.
std::vector<InstanceRef> agent_instances(const std::vector<Episode>& episodes, const std::string& dataset_id);

struct BlendEntry {
  std::string dataset_id;
  double weight = 1.0;
  std::size_t available = 0;
};

struct BlendSpec {
  std::vector<BlendEntry> entries;
  /// ||D||: every available instance across participating datasets.
  std::size_t total_pool() const;
};

enum class SamplingMode { Oversample, Undersample, Exact };
std::string_view to_string(SamplingMode m);
SamplingMode parse_sampling_mode(std::string_view s);

struct PlannedDataset {
  std::string dataset_id;
  double weight = 0;
  std::size_t available = 0;
  std::size_t target = 0;
  SamplingMode mode = SamplingMode::Exact;
};

struct BlendPlan {
  std::vector<PlannedDataset> datasets;
  std::size_t total = 0;
};

/// Resolves per-dataset training sizes w_i / sum(w) * ||D||. Each quota is
/// rounded half-to-even, then a largest-remainder pass adds or removes single
/// units so the sizes sum to ||D|| exactly. Arithmetic is exact over the
/// binary values of the weights. Throws ConfigError on an empty spec or a
/// non-positive / non-finite weight.
BlendPlan resolve_plan(const BlendSpec& spec);

/// Draws each dataset's target: without replacement when undersampling,
/// floor(target/available) full copies plus a remainder sample without
/// replacement when oversampling. The result is shuffled globally.
std::vector<InstanceRef> materialize(const BlendPlan& plan,
                                     const std::map<std::string, std::vector<InstanceRef>>& pools,
                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files

/// One row of a blend spec file: `dataset_id path weight [all|pr|npr]`.
struct BlendSource {
  std::string dataset_id;
  std::filesystem::path path;
  double weight = 1.0;
  std::string part = "all";
};

std::vector<BlendSource> parse_blend_spec(std::istream& in, const std::filesystem::path& base_dir = {});
std::vector<BlendSource> load_blend_spec(const std::filesystem::path& path);

struct ManifestSource {
  BlendSource source;
  std::string corpus_kind;
  PlannedDataset planned;
};

/// Line-delimited blend output. The header line records the sources, the
/// resolved plan, the seed and the shuffle policy.
struct Manifest {
  std::uint64_t seed = 0;
  std::string shuffle = "global";
  std::vector<ManifestSource> sources;
  std::vector<InstanceRef> instances;
};

/// Loads every source corpus, splits it by `part`, resolves and materializes.
Manifest build_manifest(const std::vector<BlendSource>& sources, std::uint64_t seed);

void write_manifest(std::ostream& out, const Manifest& m);
void save_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(std::istream& in);
Manifest load_manifest(const std::filesystem::path& path);

nlohmann::json to_json(const InstanceRef& r);
InstanceRef instance_ref_from_json(const nlohmann::json& j);

}  // namespace wwh
