#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "distortbench/classifier.hpp"
#include "distortbench/config.hpp"
#include "distortbench/generator.hpp"
#include "distortbench/remote.hpp"
#include "distortbench/split_io.hpp"

namespace distortbench {

inline std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any call is rethrown after all threads join.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Resolves `toy:<weights>` or `remote` to a classifier backend. The remote
/// endpoint falls back to DISTORTBENCH_ENDPOINT when `endpoint` is empty.
inline std::shared_ptr<Classifier> open_victim(const std::string& victim, std::string endpoint,
                                               std::optional<Shape> shape = std::nullopt) {
  if (victim.rfind("toy:", 0) == 0) {
    return std::make_shared<ToyLinearModel>(load_toy_model(victim.substr(4), shape));
  }
  if (victim == "remote") {
    if (endpoint.empty()) {
      if (const char* env = std::getenv("DISTORTBENCH_ENDPOINT")) endpoint = env;
    }
    if (endpoint.empty()) throw UsageError("remote victim needs --endpoint or DISTORTBENCH_ENDPOINT");
    return std::make_shared<RemoteClassifier>(Endpoint::parse(endpoint));
  }
  throw UsageError("victim must be toy:<weights-file> or remote, got '" + victim + "'");
}

/// Episodes in inference mode, one per sample, results in sample order.
/// Episode seeds depend only on the sample index, so the worker count does
/// not change any result.
inline std::vector<EpisodeResult> run_inference(const Dataset& data, const RunConfig& config, DqnAgent& agent,
                                                const ClassifierHandle& victim, std::size_t workers) {
  std::vector<EpisodeResult> out(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    out[i] = run_episode(data[i].image, data[i].label, data[i].index, config, agent, victim, false);
  });
  return out;
}

struct TrainingReport {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  std::uint64_t updates = 0;
  std::uint64_t evaluations = 0;
  double mean_l2 = 0.0;
};

/// Online training: sequential episodes over `epochs` passes of the data. A
/// pass uses fresh episode seeds so distortion masks differ across passes.
inline TrainingReport train_agent(const Dataset& data, const RunConfig& config, DqnAgent& agent,
                                  const ClassifierHandle& victim, std::size_t epochs) {
  TrainingReport rep;
  double l2_sum = 0.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    RunConfig pass = config;
    pass.seed = e == 0 ? config.seed : derive_seed({config.seed, 0x7a1aULL, e});
    for (const auto& s : data) {
      const EpisodeResult r = run_episode(s.image, s.label, s.index, pass, agent, victim, true);
      if (r.reason == Termination::Skipped) continue;
      ++rep.episodes;
      rep.evaluations += r.queries.evaluations;
      if (r.success) {
        ++rep.successes;
        l2_sum += r.l2;
      }
    }
  }
  rep.updates = agent.updates();
  if (rep.successes > 0) rep.mean_l2 = l2_sum / static_cast<double>(rep.successes);
  return rep;
}

inline std::string filters_label(const std::vector<FilterId>& filters) {
  std::string s;
  for (FilterId f : filters) {
    if (!s.empty()) s += '+';
    s += filter_name(f);
  }
  return s;
}

/// Generates one split: inference episodes, severity levels, files, manifest.
inline SplitManifest generate_split(const Dataset& data, const RunConfig& config, DqnAgent& agent,
                                    const ClassifierHandle& victim, std::size_t workers,
                                    const std::filesystem::path& out_dir, std::vector<EpisodeResult>* results = nullptr) {
  std::vector<EpisodeResult> episodes = run_inference(data, config, agent, victim, workers);
  std::vector<SplitEntry> entries(episodes.size());
  parallel_for(episodes.size(), workers,
               [&](std::size_t i) { entries[i] = prepare_entry(episodes[i], config, victim); });
  const std::string victim_name = config.victim_id.empty() ? victim.id() : config.victim_id;
  SplitManifest m = write_split(std::move(entries), out_dir, victim_name, filters_label(config.filters),
                                hex64(config_hash(config)));
  if (results != nullptr) *results = std::move(episodes);
  return m;
}

}  // namespace distortbench
