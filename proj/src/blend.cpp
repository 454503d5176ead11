#include "wwh/blend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/multiprecision/cpp_int.hpp>

#include "wwh/error.hpp"
#include "wwh/rng.hpp"

namespace wwh {

using nlohmann::json;
using boost::multiprecision::cpp_int;

std::uint64_t InstanceRef::hash() const {
  std::uint64_t h = fnv1a64(dataset_id);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(episode_id, h);
  h = derive_seed(h, session_index);
  return derive_seed(h, turn_index);
}

std::pair<std::vector<InstanceRef>, std::vector<InstanceRef>> split_mspd(const std::vector<Episode>& episodes,
                                                                         const std::string& pr_dataset_id,
                                                                         const std::string& npr_dataset_id) {
  std::vector<InstanceRef> pr, npr;
  for (const auto& e : episodes) {
    for (std::size_t s = 0; s < e.sessions.size(); ++s) {
      const auto& turns = e.sessions[s].turns;
      for (std::size_t t = 0; t < turns.size(); ++t) {
        if (turns[t].speaker != Speaker::Agent) continue;
        if (turns[t].rtl == Rtl::PRTL) {
          pr.push_back({pr_dataset_id, e.user_id, s, t});
        } else {
          npr.push_back({npr_dataset_id, e.user_id, s, t});
        }
      }
    }
  }
  return {std::move(pr), std::move(npr)};
}

std::vector<InstanceRef> agent_instances(const std::vector<Episode>& episodes, const std::string& dataset_id) {
  std::vector<InstanceRef> out;
  for (const auto& e : episodes) {
    for (std::size_t s = 0; s < e.sessions.size(); ++s) {
      const auto& turns = e.sessions[s].turns;
      for (std::size_t t = 0; t < turns.size(); ++t) {
        if (turns[t].speaker == Speaker::Agent) out.push_back({dataset_id, e.user_id, s, t});
      }
    }
  }
  return out;
}

std::size_t BlendSpec::total_pool() const {
  std::size_t total = 0;
  for (const auto& e : entries) total += e.available;
  return total;
}

std::string_view to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::Oversample: return "oversample";
    case SamplingMode::Undersample: return "undersample";
    case SamplingMode::Exact: return "exact";
  }
  return "exact";
}

SamplingMode parse_sampling_mode(std::string_view s) {
  if (s == "oversample") return SamplingMode::Oversample;
  if (s == "undersample") return SamplingMode::Undersample;
  if (s == "exact") return SamplingMode::Exact;
  throw ParseError("unknown sampling mode '" + std::string(s) + "'", 0);
}

namespace {

// A finite positive double as mantissa * 2^exponent with an integer mantissa.
struct Dyadic {
  std::int64_t mantissa;
  int exponent;
};

Dyadic to_dyadic(double w) {
  int e = 0;
  const double f = std::frexp(w, &e);
  return {static_cast<std::int64_t>(std::ldexp(f, 53)), e - 53};
}

}  // namespace

BlendPlan resolve_plan(const BlendSpec& spec) {
  if (spec.entries.empty()) throw ConfigError("blend spec is empty");
  for (const auto& e : spec.entries) {
    if (!std::isfinite(e.weight) || e.weight <= 0.0) {
      throw ConfigError("dataset " + e.dataset_id + ": weight must be positive and finite");
    }
  }
  const std::size_t n = spec.entries.size();
  std::vector<Dyadic> dy(n);
  int min_exp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dy[i] = to_dyadic(spec.entries[i].weight);
    min_exp = i ? std::min(min_exp, dy[i].exponent) : dy[i].exponent;
  }
  std::vector<cpp_int> scaled(n);
  cpp_int sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = cpp_int(dy[i].mantissa) << (dy[i].exponent - min_exp);
    sum += scaled[i];
  }

  const cpp_int total = spec.total_pool();
  std::vector<cpp_int> base(n), residual(n);
  cpp_int assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const cpp_int num = total * scaled[i];
    cpp_int q = num / sum;
    const cpp_int r = num % sum;
    const cpp_int twice = 2 * r;
    if (twice > sum || (twice == sum && (q & 1) != 0)) q += 1;
    base[i] = q;
    residual[i] = num - q * sum;  // (quota - base) * sum
    assigned += q;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const cpp_int diff = total - assigned;
  if (diff > 0) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return residual[a] > residual[b]; });
    for (std::size_t k = 0; k < diff.convert_to<std::size_t>(); ++k) base[order[k]] += 1;
  } else if (diff < 0) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return residual[a] < residual[b]; });
    const cpp_int need = -diff;
    for (std::size_t k = 0; k < need.convert_to<std::size_t>(); ++k) base[order[k]] -= 1;
  }

  BlendPlan plan;
  plan.total = spec.total_pool();
  for (std::size_t i = 0; i < n; ++i) {
    PlannedDataset d;
    d.dataset_id = spec.entries[i].dataset_id;
    d.weight = spec.entries[i].weight;
    d.available = spec.entries[i].available;
    d.target = base[i].convert_to<std::size_t>();
    d.mode = d.target > d.available   ? SamplingMode::Oversample
             : d.target < d.available ? SamplingMode::Undersample
                                      : SamplingMode::Exact;
    plan.datasets.push_back(std::move(d));
  }
  return plan;
}

std::vector<InstanceRef> materialize(const BlendPlan& plan,
                                     const std::map<std::string, std::vector<InstanceRef>>& pools,
                                     std::uint64_t seed) {
  std::vector<InstanceRef> out;
  out.reserve(plan.total);
  for (const auto& d : plan.datasets) {
    if (d.target == 0) continue;
    auto it = pools.find(d.dataset_id);
    if (it == pools.end() || it->second.empty()) {
      throw ConfigError("dataset " + d.dataset_id + " has no instances but target size " +
                        std::to_string(d.target));
    }
    const auto& pool = it->second;
    Rng rng(derive_seed(seed, fnv1a64(d.dataset_id)));
    const std::size_t copies = d.target / pool.size();
    const std::size_t remainder = d.target % pool.size();
    for (std::size_t c = 0; c < copies; ++c) out.insert(out.end(), pool.begin(), pool.end());
    for (std::size_t i : rng.sample_indices(pool.size(), remainder)) out.push_back(pool[i]);
  }
  Rng shuffler(derive_seed(seed, fnv1a64("global-shuffle")));
  shuffler.shuffle(out);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<BlendSource> parse_blend_spec(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<BlendSource> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::vector<std::string> cols;
    for (std::string c; fields >> c;) cols.push_back(c);
    if (cols.empty()) continue;
    if (cols.size() < 3 || cols.size() > 4) {
      throw ParseError("expected 'dataset_id path weight [all|pr|npr]'", lineno);
    }
    BlendSource s;
    s.dataset_id = cols[0];
    s.path = cols[1];
    if (s.path.is_relative() && !base_dir.empty()) s.path = base_dir / s.path;
    try {
      std::size_t used = 0;
      s.weight = std::stod(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("weight '" + cols[2] + "' is not a number", lineno);
    }
    if (cols.size() == 4) s.part = cols[3];
    if (s.part != "all" && s.part != "pr" && s.part != "npr") {
      throw ParseError("part must be all, pr or npr", lineno);
    }
    rows.push_back(std::move(s));
  }
  return rows;
}

std::vector<BlendSource> load_blend_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open blend spec " + path.string());
  return parse_blend_spec(in, path.parent_path());
}

Manifest build_manifest(const std::vector<BlendSource>& sources, std::uint64_t seed) {
  std::map<std::filesystem::path, Corpus> loaded;
  std::map<std::string, std::vector<InstanceRef>> pools;
  Manifest m;
  m.seed = seed;
  BlendSpec spec;
  for (const auto& src : sources) {
    if (pools.count(src.dataset_id)) throw ConfigError("duplicate dataset id " + src.dataset_id);
    auto it = loaded.find(src.path);
    if (it == loaded.end()) it = loaded.emplace(src.path, load_corpus(src.path)).first;
    const Corpus& corpus = it->second;
    std::vector<InstanceRef> inst;
    if (src.part == "all") {
      inst = agent_instances(corpus.episodes, src.dataset_id);
    } else {
      auto [pr, npr] = split_mspd(corpus.episodes, src.dataset_id, src.dataset_id);
      inst = src.part == "pr" ? std::move(pr) : std::move(npr);
    }
    spec.entries.push_back({src.dataset_id, src.weight, inst.size()});
    m.sources.push_back({src, corpus.header.kind, {}});
    pools.emplace(src.dataset_id, std::move(inst));
  }
  const BlendPlan plan = resolve_plan(spec);
  for (std::size_t i = 0; i < plan.datasets.size(); ++i) m.sources[i].planned = plan.datasets[i];
  m.instances = materialize(plan, pools, seed);
  return m;
}

json to_json(const InstanceRef& r) {
  return {{"dataset_id", r.dataset_id},
          {"episode_id", r.episode_id},
          {"session_index", r.session_index},
          {"turn_index", r.turn_index}};
}

InstanceRef instance_ref_from_json(const json& j) {
  return {j.at("dataset_id").get<std::string>(), j.at("episode_id").get<std::string>(),
          j.at("session_index").get<std::size_t>(), j.at("turn_index").get<std::size_t>()};
}

void write_manifest(std::ostream& out, const Manifest& m) {
  json sources = json::array();
  std::size_t total = 0;
  for (const auto& s : m.sources) {
    total += s.planned.available;
    sources.push_back({{"dataset_id", s.source.dataset_id},
                       {"path", s.source.path.string()},
                       {"part", s.source.part},
                       {"corpus_kind", s.corpus_kind},
                       {"weight", s.source.weight},
                       {"available", s.planned.available},
                       {"target", s.planned.target},
                       {"mode", to_string(s.planned.mode)}});
  }
  json header = {{"record", "manifest_header"},
                 {"format", "wwh-manifest-v1"},
                 {"seed", m.seed},
                 {"shuffle", m.shuffle},
                 {"total_pool", total},
                 {"sources", sources}};
  out << header.dump() << '\n';
  for (const auto& r : m.instances) out << to_json(r).dump() << '\n';
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  write_manifest(out, m);
}

Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (!have_header) {
        if (j.value("record", "") != "manifest_header") throw ParseError("missing manifest header", lineno);
        m.seed = j.at("seed").get<std::uint64_t>();
        m.shuffle = j.value("shuffle", "global");
        for (const auto& s : j.at("sources")) {
          ManifestSource ms;
          ms.source.dataset_id = s.at("dataset_id").get<std::string>();
          ms.source.path = s.at("path").get<std::string>();
          ms.source.part = s.value("part", "all");
          ms.source.weight = s.at("weight").get<double>();
          ms.corpus_kind = s.value("corpus_kind", "");
          ms.planned = {ms.source.dataset_id, ms.source.weight, s.at("available").get<std::size_t>(),
                        s.at("target").get<std::size_t>(), parse_sampling_mode(s.at("mode").get<std::string>())};
          m.sources.push_back(std::move(ms));
        }
        have_header = true;
      } else {
        m.instances.push_back(instance_ref_from_json(j));
      }
    } catch (const json::exception& ex) {
      throw ParseError(std::string("malformed manifest record: ") + ex.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("empty manifest", 0);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return read_manifest(in);
}

}  // namespace wwh
