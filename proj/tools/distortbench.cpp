// distortbench command line: generate, train-agent, calibrate, evaluate,
// transfer, sensitivity-map, serve-toy, plus make-toy / make-dataset helpers.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 run finished but
// some episodes lost their transport.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "distortbench/distortbench.hpp"

namespace fs = std::filesystem;
using namespace distortbench;
using nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

struct CommonOptions {
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  std::size_t workers = 0;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string endpoint;
  std::string victim;
  std::string dataset;
  std::string agent;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_out = true) {
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)");
  cmd->add_option("--workers", o.workers, "worker threads (default: hardware concurrency)");
  auto* out = cmd->add_option("--out", o.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--endpoint", o.endpoint, "host:port of a remote victim (or DISTORTBENCH_ENDPOINT)");
  cmd->add_option("--victim", o.victim, "toy:<weights-file> or remote");
  cmd->add_option("--dataset", o.dataset, "dataset directory or synthetic:<count>");
}

RunConfig resolve(const CommonOptions& o) {
  std::vector<std::string> overrides = o.sets;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (!o.endpoint.empty()) overrides.push_back("endpoint=" + o.endpoint);
  if (!o.victim.empty()) overrides.push_back("victim=" + o.victim);
  if (!o.dataset.empty()) overrides.push_back("dataset=" + o.dataset);
  if (!o.agent.empty()) overrides.push_back("agent=" + o.agent);
  std::optional<fs::path> file;
  if (o.config_file) file = *o.config_file;
  return resolve_config(file, overrides);
}

std::size_t workers_of(const CommonOptions& o) { return o.workers ? o.workers : default_workers(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

/// resolved_config.txt and config_hash.txt; every run leaves both.
void write_run_header(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text(dir / "resolved_config.txt", dump_config(cfg));
  write_text(dir / "config_hash.txt", hex64(config_hash(cfg)) + "\n");
}

void write_summary(const fs::path& dir, ordered_json summary) {
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

ClassifierHandle open_handle(const std::string& victim, const RunConfig& cfg) {
  if (victim.empty()) throw UsageError("no victim: pass --victim or set victim in the config");
  return ClassifierHandle(open_victim(victim, cfg.endpoint, cfg.image_shape), cfg.max_batch);
}

/// Directory dataset, or `synthetic:<count>` images labelled by the victim.
Dataset load_dataset(const RunConfig& cfg, const ClassifierHandle& victim) {
  if (cfg.dataset.empty()) throw UsageError("no dataset: pass --dataset or set dataset in the config");
  if (cfg.dataset.rfind("synthetic:", 0) == 0) {
    const std::size_t n = detail::parse_uint("dataset", cfg.dataset.substr(10));
    Dataset ds = synthetic_images(cfg.image_shape, n, derive_seed({cfg.seed, 0xda7aULL}));
    label_by_victim(ds, victim);
    return ds;
  }
  Dataset ds = load_dataset_dir(cfg.dataset);
  if (ds.empty()) throw UsageError("dataset " + cfg.dataset + " is empty");
  return ds;
}

/// A remote victim only learns its class count from its first reply.
std::size_t probe_classes(const ClassifierHandle& victim, const Dataset& ds) {
  if (victim.num_classes() == 0) victim.predict_one(ds.front().image);
  return victim.num_classes();
}

DqnAgent load_or_make_agent(const RunConfig& cfg, std::size_t num_classes) {
  DqnAgent fresh = make_agent(cfg, num_classes);
  if (cfg.agent.empty()) {
    std::cerr << "note: no agent checkpoint given, using an untrained network\n";
    return fresh;
  }
  Checkpoint ck = load_checkpoint(cfg.agent);
  if (ck.net.dims().input != fresh.state_dim()) {
    throw UsageError("agent " + cfg.agent + " expects state size " + std::to_string(ck.net.dims().input) +
                     " but this config produces " + std::to_string(fresh.state_dim()));
  }
  AgentConfig ac = cfg.agent_config;
  ac.seed = derive_seed({cfg.seed, 0xa6e47ULL});
  return DqnAgent(std::move(ck.net), ActionSpace(cfg.filters), ac);
}

ordered_json stats_json(const AttackStats& s) {
  return {{"attempted", s.attempted},       {"succeeded", s.succeeded},
          {"skipped", s.skipped},           {"asr", s.asr},
          {"avg_l2", s.avg_l2},             {"max_l2", s.max_l2},
          {"avg_evaluations", s.avg_evaluations}, {"avg_batches", s.avg_batches},
          {"avg_steps", s.avg_steps}};
}

// SVG ----------------------------------------------------------------------

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Line chart of y in [0, 1] against severity, one polyline per series.
std::string line_chart(const std::string& title, const std::vector<double>& xs,
                       const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double w = 480, h = 320, l = 50, r = 130, t = 30, b = 40;
  const double x0 = xs.front(), x1 = xs.size() > 1 ? xs.back() : xs.front() + 1;
  auto px = [&](double x) { return l + (x - x0) / (x1 - x0) * (w - l - r); };
  auto py = [&](double y) { return h - b - y * (h - t - b); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<text x=\"" << l << "\" y=\"18\" font-size=\"13\">" << svg_escape(title) << "</text>\n";
  s << "<line x1=\"" << l << "\" y1=\"" << py(0) << "\" x2=\"" << w - r << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << l << "\" y1=\"" << py(0) << "\" x2=\"" << l << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  for (double y : {0.0, 0.5, 1.0}) {
    s << "<text x=\"" << l - 30 << "\" y=\"" << py(y) + 4 << "\" font-size=\"10\">" << y << "</text>\n";
  }
  for (double x : xs) {
    s << "<text x=\"" << px(x) - 4 << "\" y=\"" << h - b + 15 << "\" font-size=\"10\">" << x << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colors[i % 6];
    s << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
    for (std::size_t k = 0; k < xs.size(); ++k) s << px(xs[k]) << ',' << py(series[i].second[k]) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << w - r + 8 << "\" y=\"" << t + 14 * (i + 1) << "\" font-size=\"11\" fill=\"" << c << "\">"
      << svg_escape(series[i].first) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// Heatmap of accuracies in [0, 1]; darker is lower.
std::string heatmap(const TransferMatrix& tm) {
  const double cell = 60, l = 120, t = 40;
  const double w = l + cell * double(tm.models.size()) + 20, h = t + cell * double(tm.victims.size()) + 20;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  for (std::size_t j = 0; j < tm.models.size(); ++j) {
    s << "<text x=\"" << l + cell * double(j) + 4 << "\" y=\"" << t - 8 << "\" font-size=\"10\">"
      << svg_escape(tm.models[j]) << "</text>\n";
  }
  for (std::size_t i = 0; i < tm.victims.size(); ++i) {
    s << "<text x=\"4\" y=\"" << t + cell * double(i) + cell / 2 << "\" font-size=\"10\">" << svg_escape(tm.victims[i])
      << "</text>\n";
    for (std::size_t j = 0; j < tm.models.size(); ++j) {
      const double a = tm.accuracy[i][j];
      const int g = static_cast<int>(std::lround(255 * a));
      s << "<rect x=\"" << l + cell * double(j) << "\" y=\"" << t + cell * double(i) << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"rgb(" << g << ',' << g << ",255)\" stroke=\"white\"/>\n";
      s << "<text x=\"" << l + cell * double(j) + 14 << "\" y=\"" << t + cell * double(i) + cell / 2 + 4
        << "\" font-size=\"12\">" << detail::fmt_double(std::round(a * 1000) / 1000) << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

// Subcommands -----------------------------------------------------------------

int cmd_make_toy(std::size_t classes, const std::string& shape_text, std::uint64_t seed, double scale,
                 const std::string& out) {
  RunConfig tmp;
  set_config_value(tmp, "image_shape", shape_text);
  const std::size_t d = tmp.image_shape.size();
  Rng rng(derive_seed({seed, 0x70ffULL}));
  std::vector<double> w(classes * d), b(classes);
  for (double& x : w) x = scale * rng.normal() / std::sqrt(double(d));
  for (double& x : b) x = 0.1 * rng.normal();
  save_toy_model(out, ToyLinearModel(classes, d, std::move(w), std::move(b), tmp.image_shape));
  std::cout << "wrote " << out << " (" << classes << " classes, input " << to_string(tmp.image_shape) << ")\n";
  return 0;
}

int cmd_make_dataset(const CommonOptions& o, std::size_t count) {
  const RunConfig cfg = resolve(o);
  const ClassifierHandle victim = open_handle(cfg.victim, cfg);
  Dataset ds = synthetic_images(cfg.image_shape, count, derive_seed({cfg.seed, 0xda7aULL}));
  label_by_victim(ds, victim);
  save_dataset_dir(o.out, ds);
  std::cout << "wrote " << ds.size() << " samples to " << o.out << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  write_run_header(out, cfg);
  const ClassifierHandle victim = open_handle(cfg.victim, cfg);
  const Dataset ds = load_dataset(cfg, victim);
  DqnAgent agent = make_agent(cfg, probe_classes(victim, ds));
  const auto start = std::chrono::steady_clock::now();
  const TrainingReport rep = train_agent(ds, cfg, agent, victim, cfg.train_epochs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_checkpoint(out / "agent.dbagt", agent.network(), config_hash(cfg));
  write_summary(out, {{"command", "train-agent"},
                      {"config_hash", hex64(config_hash(cfg))},
                      {"episodes", rep.episodes},
                      {"successes", rep.successes},
                      {"updates", rep.updates},
                      {"evaluations", rep.evaluations},
                      {"mean_l2", rep.mean_l2},
                      {"seconds", secs},
                      {"checkpoint", (out / "agent.dbagt").string()}});
  std::cout << "trained " << rep.episodes << " episodes, " << rep.successes << " successes, " << rep.updates
            << " updates -> " << (out / "agent.dbagt").string() << "\n";
  return 0;
}

int cmd_generate(const CommonOptions& o) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  write_run_header(out, cfg);
  const ClassifierHandle victim = open_handle(cfg.victim, cfg);
  const Dataset ds = load_dataset(cfg, victim);
  DqnAgent agent = load_or_make_agent(cfg, probe_classes(victim, ds));
  std::vector<EpisodeResult> results;
  const SplitManifest m = generate_split(ds, cfg, agent, victim, workers_of(o), out, &results);
  std::size_t lost = 0;
  for (const auto& r : results) lost += r.reason == Termination::FailedTransport;
  const AttackStats st = attack_stats(m);
  write_summary(out, {{"command", "generate"},
                      {"config_hash", m.config_hash},
                      {"victim", m.victim},
                      {"filter", m.filter},
                      {"stats", stats_json(st)},
                      {"mean_level_l2", mean_level_l2(m)},
                      {"failed_transport", lost}});
  std::cout << "generated " << st.succeeded << "/" << st.attempted << " (asr " << st.asr << ", avg L2 " << st.avg_l2
            << ") into " << out.string() << "\n";
  if (lost > 0) {
    std::cerr << lost << " episode(s) failed on transport\n";
    return kExitPartial;
  }
  return 0;
}

int cmd_calibrate(const CommonOptions& o, const std::string& filter_text, double target, std::size_t samples) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  write_run_header(out, cfg);
  Dataset ds;
  if (cfg.dataset.rfind("synthetic:", 0) == 0) {
    ds = synthetic_images(cfg.image_shape, detail::parse_uint("dataset", cfg.dataset.substr(10)),
                          derive_seed({cfg.seed, 0xda7aULL}));
  } else if (!cfg.dataset.empty()) {
    ds = load_dataset_dir(cfg.dataset);
  } else {
    throw UsageError("no dataset: pass --dataset or set dataset in the config");
  }
  FilterId filter;
  try {
    filter = parse_filter(filter_text);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  std::vector<ImageTensor> images;
  for (std::size_t i = 0; i < std::min(samples, ds.size()); ++i) images.push_back(ds[i].image);
  if (images.empty()) throw UsageError("calibrate: dataset has no images");
  const PatchGrid grid = partition_patches(images.front().shape(), cfg.patch_size);
  const FilterParams p = calibrate(filter, images, grid, target, cfg.filter_params, cfg.seed);
  const double achieved = mean_application_l2(filter, p, images, grid, cfg.seed);
  std::string key, value;
  switch (filter) {
    case FilterId::GaussianNoise: key = "noise_sigma"; value = detail::fmt_double(p.noise_sigma); break;
    case FilterId::Brightness: key = "brightness_delta"; value = detail::fmt_double(p.brightness_delta); break;
    case FilterId::GaussianBlur: key = "blur_sigma"; value = detail::fmt_double(p.blur_sigma); break;
    case FilterId::DeadPixel: key = "deadpixel_fraction"; value = detail::fmt_double(p.deadpixel_fraction); break;
    case FilterId::Custom: key = "custom_intensity"; value = detail::fmt_double(p.custom_intensity); break;
  }
  write_summary(out, {{"command", "calibrate"},
                      {"filter", std::string(filter_name(filter))},
                      {"target_epsilon0", target},
                      {"achieved_mean_l2", achieved},
                      {"relative_error", std::abs(achieved - target) / target},
                      {"samples", images.size()},
                      {"parameter", key},
                      {"value", value}});
  std::cout << key << " = " << value << "\n";
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::vector<std::string>& splits, const std::string& model,
                 const std::vector<double>& reference_l2) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  write_run_header(out, cfg);
  const ClassifierHandle clf = open_handle(model.empty() ? cfg.victim : model, cfg);
  const Dataset ds = load_dataset(cfg, clf);
  std::vector<SplitManifest> manifests;
  for (const auto& s : splits) manifests.push_back(read_manifest(s));
  const auto common = intersect_manifests(manifests);
  std::vector<std::size_t> ds_idx;
  for (const auto& s : ds) ds_idx.push_back(s.index);
  const auto indices = intersect_indices({common, ds_idx});
  if (indices.empty()) throw UsageError("evaluate: splits and dataset share no sample indices");

  std::vector<ErrorTable> tables;
  for (const auto& m : manifests) tables.push_back(error_rates(m, ds, clf, indices));
  std::ostringstream csv;
  csv << "corruption,severity,clean_error,corrupt_error\n";
  std::vector<std::pair<std::string, std::vector<double>>> series;
  ordered_json per = ordered_json::array();
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    const auto& t = tables[i];
    const std::string name = manifests[i].filter + "@" + manifests[i].victim;
    for (std::size_t s = 0; s < t.severities(); ++s) {
      csv << name << ',' << s + 1 << ',' << detail::fmt_double(t.clean[s]) << ',' << detail::fmt_double(t.corrupt[s])
          << '\n';
    }
    series.emplace_back(name, t.corrupt);
    const auto sum = aggregate(t);
    ordered_json entry = {{"corruption", name},
                          {"split", splits[i]},
                          {"ce_corrupt", sum.ce_corrupt},
                          {"ce_corrupt_raw_sum", sum.ce_corrupt_raw_sum},
                          {"accuracy_corrupt", sum.accuracy_corrupt},
                          {"ce_degradation", sum.ce_degradation},
                          {"ce_degradation_raw_sum", sum.ce_degradation_raw_sum},
                          {"attack", stats_json(attack_stats(manifests[i]))}};
    if (!reference_l2.empty()) {
      ordered_json checks = ordered_json::array();
      for (const auto& v : l2_match_check(manifests[i], reference_l2)) {
        checks.push_back({{"level", v.level},
                          {"ours", v.ours},
                          {"reference", v.reference},
                          {"relative_gap", v.relative_gap},
                          {"reference_excess", v.reference_excess},
                          {"verdict", v.verdict}});
      }
      entry["l2_match"] = checks;
    }
    per.push_back(entry);
  }
  const auto overall = aggregate(tables.front(), tables);
  write_text(out / "errors.csv", csv.str());
  std::vector<double> xs;
  for (std::size_t s = 0; s < tables.front().severities(); ++s) xs.push_back(double(s + 1));
  write_text(out / "errors.svg", line_chart("corrupt error vs severity (" + clf.id() + ")", xs, series));
  write_summary(out, {{"command", "evaluate"},
                      {"config_hash", hex64(config_hash(cfg))},
                      {"model", clf.id()},
                      {"samples", indices.size()},
                      {"clean_error", tables.front().clean.front()},
                      {"mce", overall.mce},
                      {"corruptions", per}});
  std::cout << "mCE " << overall.mce << " over " << indices.size() << " samples; wrote " << (out / "errors.csv").string()
            << "\n";
  return 0;
}

std::pair<std::string, std::string> split_pair(const std::string& text, const char* what) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError(std::string(what) + " must be NAME=VALUE, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

int cmd_transfer(const CommonOptions& o, const std::vector<std::string>& splits, const std::vector<std::string>& models,
                 std::size_t level) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  write_run_header(out, cfg);
  std::vector<std::string> order;
  std::map<std::string, std::vector<SplitManifest>> by_name;
  for (const auto& s : splits) {
    auto [name, dir] = split_pair(s, "--split");
    if (!by_name.count(name)) order.push_back(name);
    by_name[name].push_back(read_manifest(dir));
  }
  std::map<std::string, std::string> model_of;
  for (const auto& m : models) {
    auto [name, spec] = split_pair(m, "--model");
    model_of[name] = spec;
  }
  std::vector<std::vector<SplitManifest>> groups;
  std::vector<ClassifierHandle> handles;
  for (const auto& name : order) {
    if (!model_of.count(name)) throw UsageError("transfer: no --model given for victim '" + name + "'");
    groups.push_back(by_name[name]);
    handles.emplace_back(open_victim(model_of[name], cfg.endpoint, cfg.image_shape), cfg.max_batch);
  }
  TransferMatrix tm = transfer_matrix(groups, handles, level);
  tm.victims = order;
  tm.models = order;
  std::ostringstream csv;
  csv << "victim";
  for (const auto& m : tm.models) csv << ',' << m;
  csv << '\n';
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < tm.victims.size(); ++i) {
    csv << tm.victims[i];
    for (double a : tm.accuracy[i]) csv << ',' << detail::fmt_double(a);
    csv << '\n';
    rows.push_back(tm.accuracy[i]);
  }
  write_text(out / "transfer.csv", csv.str());
  write_text(out / "transfer.svg", heatmap(tm));
  write_summary(out, {{"command", "transfer"},
                      {"config_hash", hex64(config_hash(cfg))},
                      {"level", level},
                      {"samples", tm.indices.size()},
                      {"victims", tm.victims},
                      {"accuracy", rows}});
  std::cout << "transfer matrix over " << tm.indices.size() << " samples -> " << (out / "transfer.csv").string() << "\n";
  return 0;
}

int cmd_sensitivity_map(const CommonOptions& o, std::size_t index) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  write_run_header(out, cfg);
  const ClassifierHandle victim = open_handle(cfg.victim, cfg);
  const Dataset ds = load_dataset(cfg, victim);
  const auto it = std::find_if(ds.begin(), ds.end(), [&](const Sample& s) { return s.index == index; });
  if (it == ds.end()) throw UsageError("sensitivity-map: no sample with index " + std::to_string(index));
  const std::size_t tracked = cfg.mode == AttackMode::Untargeted ? it->label : cfg.target_class.value();
  const PatchGrid grid = partition_patches(it->image.shape(), cfg.patch_size);
  const DistortionLedger ledger(it->image, grid, cfg.filter_params, derive_seed({cfg.seed, index}));
  const SensitivityLists lists = scan(ledger, cfg.filters, tracked, cfg.mode, victim);
  std::ostringstream csv;
  csv << "row,col,filter,direction,delta_p\n";
  auto emit = [&](const SensitivityEntry& e) {
    csv << e.patch_id / grid.cols() << ',' << e.patch_id % grid.cols() << ',' << filter_name(e.filter) << ','
        << (e.direction == Direction::Add ? "add" : "remove") << ',' << detail::fmt_double(e.delta_p) << '\n';
  };
  for (const auto& e : lists.list_plus) emit(e);
  for (const auto& e : lists.list_minus) emit(e);
  write_text(out / "sensitivity.csv", csv.str());
  write_summary(out, {{"command", "sensitivity-map"},
                      {"config_hash", hex64(config_hash(cfg))},
                      {"index", index},
                      {"tracked_class", tracked},
                      {"candidates", lists.list_plus.size() + lists.list_minus.size()},
                      {"evaluations", victim.queries().evaluations}});
  std::cout << "wrote " << (out / "sensitivity.csv").string() << "\n";
  return 0;
}

std::atomic<bool> g_stop{false};

int cmd_serve_toy(const std::string& weights, const std::string& host, std::uint16_t port, std::size_t max_batch,
                  std::uint64_t frames) {
  auto model = std::make_shared<ToyLinearModel>(load_toy_model(weights));
  ClassifierServer server(model, port, host, max_batch);
  std::cout << "listening on " << server.endpoint().str() << std::endl;
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop.load() && (frames == 0 || server.frames_served() < frames)) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  server.stop();
  std::cout << "served " << server.frames_served() << " frames" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distortbench: adversarial distortion benchmark generator"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string filter_text;
  double target = 0;
  std::size_t samples = 16, count = 100, classes = 10, index = 0, level = 1, max_batch = kDefaultMaxBatch;
  std::vector<std::string> splits, models;
  std::vector<double> reference_l2;
  std::string model, weights, host = "127.0.0.1", shape_text = "3x32x32", out_file;
  std::uint16_t port = 0;
  std::uint64_t frames = 0, seed = 0;
  double scale = 4.0;

  auto* generate = app.add_subcommand("generate", "generate a multi-severity split against a victim");
  add_common(generate, common);
  generate->add_option("--agent", common.agent, "trained agent checkpoint");

  auto* train = app.add_subcommand("train-agent", "train the DQN agent against a victim");
  add_common(train, common);

  auto* calib = app.add_subcommand("calibrate", "fit a filter intensity to a target per-application L2");
  add_common(calib, common);
  calib->add_option("--filter", filter_text, "filter name")->required();
  calib->add_option("--target", target, "target mean L2 of one application")->required();
  calib->add_option("--samples", samples, "images used from the dataset");

  auto* evaluate = app.add_subcommand("evaluate", "error rates of a model on generated splits");
  add_common(evaluate, common);
  evaluate->add_option("--split", splits, "split directory (repeatable, one per corruption)")->required();
  evaluate->add_option("--model", model, "model to evaluate (default: the victim)");
  evaluate->add_option("--reference-l2", reference_l2, "per-level reference mean L2 for the match check")
      ->delimiter(',');

  auto* transfer = app.add_subcommand("transfer", "cross-model accuracy on each victim's splits");
  add_common(transfer, common);
  transfer->add_option("--split", splits, "NAME=DIR (repeatable)")->required();
  transfer->add_option("--model", models, "NAME=toy:<file>|remote (repeatable)")->required();
  transfer->add_option("--level", level, "severity level (1-based)");

  auto* smap = app.add_subcommand("sensitivity-map", "per-patch sensitivity of one clean sample");
  add_common(smap, common);
  smap->add_option("--index", index, "sample index")->required();

  auto* serve = app.add_subcommand("serve-toy", "serve a toy linear model over the wire protocol");
  serve->add_option("--weights", weights, "toy weight file")->required();
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (0 picks a free one)");
  serve->add_option("--max-batch", max_batch, "largest accepted batch");
  serve->add_option("--frames", frames, "exit after serving this many frames (0 = run until signalled)");

  auto* make_toy = app.add_subcommand("make-toy", "write random toy linear weights");
  make_toy->add_option("--classes", classes, "class count");
  make_toy->add_option("--shape", shape_text, "CxHxW");
  make_toy->add_option("--seed", seed, "seed");
  make_toy->add_option("--scale", scale, "weight scale");
  make_toy->add_option("--out", out_file, "output file")->required();

  auto* make_ds = app.add_subcommand("make-dataset", "write a synthetic dataset labelled by a victim");
  add_common(make_ds, common);
  make_ds->add_option("--count", count, "sample count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(common);
    if (*train) return cmd_train(common);
    if (*calib) return cmd_calibrate(common, filter_text, target, samples);
    if (*evaluate) return cmd_evaluate(common, splits, model, reference_l2);
    if (*transfer) return cmd_transfer(common, splits, models, level);
    if (*smap) return cmd_sensitivity_map(common, index);
    if (*serve) return cmd_serve_toy(weights, host, port, max_batch, frames);
    if (*make_toy) return cmd_make_toy(classes, shape_text, seed, scale, out_file);
    if (*make_ds) return cmd_make_dataset(common, count);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
