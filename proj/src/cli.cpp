#include "pcq/cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include "CLI11.hpp"
#include "json.hpp"

#include "pcq/cloud_io.hpp"
#include "pcq/config.hpp"
#include "pcq/metrics.hpp"
#include "pcq/oracle.hpp"
#include "pcq/scorer.hpp"
#include "pcq/synthesis.hpp"

namespace pcq::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Table = std::vector<std::vector<std::string>>;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::string> out;
};

KeyValueConfig load_config(const std::string& path, const Overrides& o) {
  auto kv = KeyValueConfig::load(path);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.threshold) kv.set("threshold", fmt::format("{}", *o.threshold));
  if (o.out) kv.set("out", *o.out);
  return kv;
}

fs::path prepare_out(const KeyValueConfig& kv) {
  const fs::path out = kv.require("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", out.string(), ec.message()));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(fmt::format("cannot write {}", path.string()));
  f << text;
  if (!f) throw IoError(fmt::format("short write to {}", path.string()));
}

/// Echo of the resolved config, written next to every run's outputs.
void echo_config(const KeyValueConfig& kv, const fs::path& out, std::ostream& os) {
  write_text(out / "config.resolved.txt", kv.dump());
  os << "# resolved config\n" << kv.dump();
}

json config_json(const KeyValueConfig& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv.values()) j[k] = v;
  return j;
}

std::string fixed(double v, int digits = 6) {
  return std::isfinite(v) ? fmt::format("{:.{}f}", v, digits) : std::string("nan");
}

void emit_table(const Table& t, const fs::path& out, const std::string& stem, std::ostream& os) {
  write_text(out / (stem + ".csv"), to_csv(t));
  const auto text = aligned(t);
  write_text(out / (stem + ".txt"), text);
  os << text;
}

// ---------------------------------------------------------------------------

int cmd_build_dataset(const KeyValueConfig& kv, std::ostream& os) {
  std::set<std::string> allowed = BuildConfig::keys();
  kv.reject_unknown(allowed);
  const auto config = BuildConfig::from(kv);
  const auto out = prepare_out(kv);
  const auto summary = build_dataset(config, out);
  echo_config(kv, out, os);
  os << fmt::format("samples {} (train {}, test {}) from {} scenes -> {}\n", summary.samples, summary.train,
                    summary.test, summary.scenes, (out / "manifest.jsonl").string());
  return kExitOk;
}

int cmd_train(const KeyValueConfig& kv, std::ostream& os) {
  kv.reject_unknown({"dataset", "batch", "epochs", "learning_rate", "beta1", "beta2", "epsilon", "delta", "seed",
                     "out", "resume"});
  if (kv.has("resume")) throw ConfigError("resume is not supported; start a fresh run");
  TrainConfig tc;
  tc.batch = static_cast<std::size_t>(kv.get_int("batch", static_cast<long long>(tc.batch)));
  const auto epochs = kv.get_int("epochs", static_cast<long long>(tc.epochs));
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  tc.epochs = static_cast<std::size_t>(epochs);
  tc.learning_rate = kv.get_double("learning_rate", tc.learning_rate);
  tc.beta1 = kv.get_double("beta1", tc.beta1);
  tc.beta2 = kv.get_double("beta2", tc.beta2);
  tc.epsilon = kv.get_double("epsilon", tc.epsilon);
  tc.delta = kv.get_double("delta", tc.delta);
  tc.seed = kv.get_u64("seed", tc.seed);
  tc.validate();
  const fs::path dataset = kv.require("dataset");
  const auto out = prepare_out(kv);

  std::vector<PointCloud> clouds;
  std::vector<double> targets;
  for (const auto& item : load_corpus(dataset, "train")) {
    clouds.push_back(item.cloud);
    targets.push_back(*item.s_g);
  }
  if (clouds.empty()) throw Error(fmt::format("no training samples in {}", dataset.string()));
  echo_config(kv, out, os);

  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write train_log.jsonl");
  log << json{{"config", config_json(kv)}, {"samples", clouds.size()}}.dump() << '\n';
  const auto result = train(clouds, targets, tc, ScorerShape{}, [&](const EpochLog& e) {
    log << json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"wall_seconds", e.wall_seconds}}.dump() << '\n';
    log.flush();
    os << fmt::format("epoch {:>3}  loss {:.6f}  {:.1f}s\n", e.epoch, e.mean_loss, e.wall_seconds);
  });
  save_weights(out / "weights.pcqw", result.weights);
  os << fmt::format("trained on {} samples -> {}\n", clouds.size(), (out / "weights.pcqw").string());
  return kExitOk;
}

int cmd_filter(const KeyValueConfig& kv, std::ostream& os) {
  kv.reject_unknown({"weights", "clouds", "threshold", "batch", "split", "out"});
  const auto weights = load_weights(kv.require("weights"));
  const double threshold = kv.get_double("threshold", 0.5);
  const auto batch = kv.get_int("batch", 32);
  if (batch < 1) throw ConfigError("batch must be >= 1");
  const auto corpus = load_corpus(kv.require("clouds"), kv.get_string("split", "all"));
  const auto out = prepare_out(kv);
  echo_config(kv, out, os);

  std::vector<PointCloud> clouds;
  for (const auto& item : corpus) clouds.push_back(item.cloud);
  const auto reports = score_batch(weights, clouds, threshold, static_cast<std::size_t>(batch));

  std::ofstream accepted(out / "accepted.jsonl", std::ios::trunc);
  std::ofstream rejected(out / "rejected.jsonl", std::ios::trunc);
  if (!accepted || !rejected) throw IoError("cannot write filter manifests");
  Table t{{"id", "score", "verdict", "threshold", "latency_ms"}};
  std::size_t n_accepted = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const json line{{"id", corpus[i].id}, {"score", r.score}, {"verdict", r.accepted ? "accept" : "reject"},
                    {"threshold", r.threshold}, {"latency_ms", r.latency_ms}};
    (r.accepted ? accepted : rejected) << line.dump() << '\n';
    n_accepted += r.accepted;
    t.push_back({corpus[i].id, fixed(r.score), r.accepted ? "accept" : "reject", fixed(r.threshold, 3),
                 fixed(r.latency_ms, 3)});
  }
  write_text(out / "reports.csv", to_csv(t));
  write_text(out / "reports.txt", aligned(t));
  os << fmt::format("accepted {} of {} at threshold {}\n", n_accepted, reports.size(), threshold);
  return kExitOk;
}

int cmd_eval_mmd(const KeyValueConfig& kv, std::ostream& os) {
  kv.reject_unknown({"clouds", "bank", "oracle", "oracle_bank", "split", "category", "weights", "threshold", "out"});
  const fs::path clouds_dir = kv.require("clouds");
  const auto kind = parse_oracle_kind(kv.require("oracle"));
  const bool is_dataset = fs::exists(clouds_dir / "gt_bank");
  const fs::path bank_dir = kv.has("bank") ? fs::path(kv.get_string("bank", "")) : clouds_dir / "gt_bank";
  const auto reference = ShapeBank::load(bank_dir);
  if (reference.empty()) throw ConfigError("reference bank is empty");

  std::shared_ptr<const ShapeBank> oracle_bank;
  if (kind == OracleKind::retrieval) {
    const fs::path ob = kv.has("oracle_bank") ? fs::path(kv.get_string("oracle_bank", "")) : clouds_dir / "bank";
    oracle_bank = std::make_shared<const ShapeBank>(ShapeBank::load(ob));
  }
  const auto oracle = make_oracle(kind, oracle_bank);
  const auto corpus = load_corpus(clouds_dir, kv.get_string("split", is_dataset ? "test" : "all"));
  const std::optional<std::string> fallback_category =
      kv.has("category") ? std::optional(kv.get_string("category", "")) : std::nullopt;

  std::optional<ScorerWeights> weights;
  if (kv.has("weights")) weights = load_weights(kv.get_string("weights", ""));
  const double threshold = kv.get_double("threshold", 0.9);
  const auto out = prepare_out(kv);
  echo_config(kv, out, os);

  std::vector<double> distance(corpus.size());
  std::vector<std::string> category(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto cat = corpus[i].category ? corpus[i].category : fallback_category;
    if (!cat) throw ConfigError(fmt::format("no category for '{}'; set the category key", corpus[i].id));
    category[i] = *cat;
    distance[i] = mmd(oracle->complete(corpus[i].cloud), reference, *cat).distance;
  }
  std::vector<bool> accepted(corpus.size(), true);
  if (weights) {
    std::vector<PointCloud> clouds;
    for (const auto& item : corpus) clouds.push_back(item.cloud);
    const auto reports = score_batch(*weights, clouds, threshold);
    for (std::size_t i = 0; i < reports.size(); ++i) accepted[i] = reports[i].accepted;
  }

  std::set<std::string> categories(category.begin(), category.end());
  Table t{{"rows", "category", "count", "mean_mmd", "mean_mmd_x1e6"}};
  auto add_row = [&](const std::string& label, const std::string& cat, bool only_accepted) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if ((cat != "all" && category[i] != cat) || (only_accepted && !accepted[i])) continue;
      sum += distance[i];
      ++n;
    }
    const double mean = n ? sum / static_cast<double>(n) : std::nan("");
    t.push_back({label, cat, std::to_string(n), fixed(mean, 9), fixed(mean * 1e6, 1)});
  };
  const std::string filtered = fmt::format("accepted@{}", threshold);
  add_row("unfiltered", "all", false);
  if (weights) add_row(filtered, "all", true);
  for (const auto& cat : categories) {
    add_row("unfiltered", cat, false);
    if (weights) add_row(filtered, cat, true);
  }
  emit_table(t, out, "mmd", os);
  return kExitOk;
}

int cmd_bench(const KeyValueConfig& kv, std::ostream& os) {
  kv.reject_unknown({"weights", "runs", "warmup", "batches", "points", "seed", "out"});
  const auto seed = kv.get_u64("seed", 1);
  const auto weights = kv.has("weights") ? load_weights(kv.get_string("weights", "")) : init_weights(ScorerShape{}, seed);
  const auto runs = kv.get_int("runs", 50);
  const auto warmup = kv.get_int("warmup", 3);
  if (runs < 1 || warmup < 0) throw ConfigError("runs must be >= 1 and warmup >= 0");
  auto parse_sizes = [&](const std::string& key, const std::vector<std::string>& fallback) {
    std::vector<std::size_t> v;
    for (const auto& s : kv.get_list(key, fallback)) {
      long long x = 0;
      try {
        x = std::stoll(s);
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("{}: '{}' is not an integer", key, s));
      }
      if (x < 1) throw ConfigError(fmt::format("{} entries must be >= 1", key));
      v.push_back(static_cast<std::size_t>(x));
    }
    return v;
  };
  const auto batches = parse_sizes("batches", {"1", "4", "8", "16", "32"});
  const auto points = parse_sizes("points", {"128", "256", "512", "1024", "2048"});
  const auto out = prepare_out(kv);
  echo_config(kv, out, os);
  const auto machine = machine_identifier();
  os << "# machine: " << machine << '\n';
  write_text(out / "machine.txt", machine + '\n');

  const std::size_t max_batch = *std::max_element(batches.begin(), batches.end());
  const auto kinds = all_shape_kinds();
  Table t{{"batch", "points", "per_object_ms", "runs"}};
  for (auto n : points) {
    std::vector<PointCloud> pool;
    for (std::size_t i = 0; i < max_batch; ++i) {
      const auto shape = generate_shape(kinds[i % kinds.size()], derive_seed(seed, i));
      pool.push_back(random_subsample(shape, n, derive_seed(seed, 1000 + i)));
    }
    for (auto b : batches) {
      const std::span<const PointCloud> batch(pool.data(), b);
      std::vector<double> per_object;
      for (long long r = 0; r < warmup + runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto reports = score_batch(weights, batch, 0.5, b);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (reports.size() != b) throw Error("bench: short batch");
        if (r >= warmup) per_object.push_back(ms / static_cast<double>(b));
      }
      std::nth_element(per_object.begin(), per_object.begin() + static_cast<std::ptrdiff_t>(per_object.size() / 2),
                       per_object.end());
      const double median = per_object[per_object.size() / 2];
      t.push_back({std::to_string(b), std::to_string(n), fixed(median, 3), std::to_string(runs)});
    }
  }
  emit_table(t, out, "bench", os);
  return kExitOk;
}

}  // namespace

std::vector<CorpusItem> load_corpus(const fs::path& dir, const std::string& split) {
  if (split != "train" && split != "test" && split != "all") {
    throw ConfigError(fmt::format("split must be train, test or all (got '{}')", split));
  }
  if (!fs::is_directory(dir)) throw IoError(fmt::format("{} is not a directory", dir.string()));
  std::vector<CorpusItem> items;
  const auto manifest = dir / "manifest.jsonl";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      CorpusItem item;
      if (j.contains("shape_kind")) {
        const auto r = parse_manifest_line(line);
        if (split != "all" && r.split != split) continue;
        item.id = r.id;
        item.category = std::string(to_string(r.shape_kind));
        item.s_g = r.label.s_g;
        item.cloud = io::read_cloud(dir / r.p_r);
      } else {
        item.id = j.at("id").get<std::string>();
        item.category = j.at("category").get<std::string>();
        item.cloud = io::read_cloud(dir / j.at("file").get<std::string>());
      }
      item.cloud.set_id(item.id);
      items.push_back(std::move(item));
    }
    return items;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pcq" || ext == ".xyz")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    CorpusItem item;
    item.cloud = io::read_cloud(f);
    item.id = f.stem().string();
    item.cloud.set_id(item.id);
    items.push_back(std::move(item));
  }
  return items;
}

std::string aligned(const Table& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string s;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      line += fmt::format("{:<{}}", row[c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    s += line + '\n';
  }
  return s;
}

std::string to_csv(const Table& rows) {
  std::string s;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) s += ',';
      const bool quote = row[c].find_first_of(",\"\n") != std::string::npos;
      if (!quote) {
        s += row[c];
        continue;
      }
      s += '"';
      for (char ch : row[c]) s += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      s += '"';
    }
    s += '\n';
  }
  return s;
}

std::string machine_identifier() {
  char host[256] = {0};
  if (gethostname(host, sizeof(host) - 1) != 0) host[0] = '\0';
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  return fmt::format("host={}; cpu={}; threads={}; compiler=g++ {}", host, cpu, std::thread::hardware_concurrency(),
                     __VERSION__);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-cloud crop quality: dataset synthesis, scorer training, filtering and evaluation", "pcq"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides o;
  bool resume = false;
  std::map<std::string, int (*)(const KeyValueConfig&, std::ostream&)> commands{
      {"build-dataset", cmd_build_dataset}, {"train", cmd_train}, {"filter", cmd_filter},
      {"eval-mmd", cmd_eval_mmd},           {"bench", cmd_bench}};
  const std::map<std::string, std::string> help{
      {"build-dataset", "Synthesize a labeled crop dataset"},
      {"train", "Train the scorer on a dataset's train split"},
      {"filter", "Score clouds and split them by a threshold"},
      {"eval-mmd", "Minimal matching distance before and after filtering"},
      {"bench", "Per-object inference latency over batch sizes and point counts"}};
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "key = value config file")->required();
    sub->add_option("--seed", o.seed, "Override the seed key");
    sub->add_option("--threshold", o.threshold, "Override the threshold key");
    sub->add_option("--out", o.out, "Override the out key");
    sub->add_flag("--resume", resume, "Not supported; rejected");
  }

  std::vector<const char*> argv{"pcq"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (resume) throw ConfigError("--resume is not supported; start a fresh run");
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) return fn(load_config(config_path, o), out);
    }
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace pcq::cli
