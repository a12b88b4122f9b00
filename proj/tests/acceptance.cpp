// Acceptance run: one PASS/FAIL line per criterion. Exits 0 once every
// criterion has been evaluated; with --strict, any FAIL makes it exit 1.
//
// usage: pcq_acceptance [--strict] [work_dir]

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "pcq/cli.hpp"
#include "pcq/cloud_io.hpp"
#include "pcq/metrics.hpp"
#include "pcq/scorer.hpp"
#include "pcq/synthesis.hpp"
#include "support/oracles.hpp"

using namespace pcq;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> v;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) v.push_back(l);
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& row) {
  std::vector<std::string> cells;
  std::stringstream s(row);
  for (std::string c; std::getline(s, c, ',');) cells.push_back(c);
  return cells;
}

void run_pcq(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw Error(fmt::format("pcq {} exited {}: {}", args.front(), code, err.str()));
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

double batch_loss(Params<double>& w, std::size_t block, std::size_t index, double x,
                  std::span<const PreparedCloud<double>* const> batch, std::span<const double> targets) {
  double& slot = w.blocks()[block][index];
  const double saved = slot;
  slot = x;
  const double loss = loss_and_gradient<double>(w, batch, targets, 2.0, nullptr);
  slot = saved;
  return loss;
}

// 1. Central differences (h = 1e-5) on the production network, a sample of
// entries per parameter block. A mismatch is attributed to a ReLU or
// max-pool kink inside [x - h, x + h] only when the two one-sided
// differences disagree and a central difference at h = 1e-7 agrees.
Verdict gradients() {
  const auto t0 = Clock::now();
  const ScorerShape shape;
  const double h = 1e-5;
  Rng rng(2024);
  std::size_t checked = 0, kinks = 0, bad = 0;
  double worst_smooth = 0.0;
  for (int c = 0; c < 5; ++c) {
    const auto cloud = testing::random_cloud(16 + rng.below(49), rng.next());
    const auto prepared = prepare<double>(cloud, shape);
    const std::vector<const PreparedCloud<double>*> batch{&prepared};
    const std::vector<double> target{rng.uniform(0.0, 1.0)};
    auto w = testing::random_params(shape, rng.next());
    Params<double> g;
    loss_and_gradient<double>(w, batch, target, 2.0, &g);
    const auto gb = g.blocks();
    for (std::size_t b = 0; b < gb.size(); ++b) {
      // Largest-magnitude entries plus a few at random.
      std::vector<std::size_t> order(gb[b].size());
      std::iota(order.begin(), order.end(), 0);
      const std::size_t top = std::min<std::size_t>(4, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                        [&](auto x, auto y) { return std::abs(gb[b][x]) > std::abs(gb[b][y]); });
      std::vector<std::size_t> picks(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top));
      for (int k = 0; k < 4; ++k) picks.push_back(rng.below(gb[b].size()));
      for (auto i : picks) {
        ++checked;
        const double x = w.blocks()[b][i];
        const double analytic = gb[b][i];
        const double num = testing::numeric_partial(w, b, i, batch, target, 2.0, h);
        if (testing::gradient_close(analytic, num, 1e-4, 1e-9)) {
          const double scale = std::max(std::abs(analytic), std::abs(num));
          if (scale > 1e-9) worst_smooth = std::max(worst_smooth, std::abs(analytic - num) / scale);
          continue;
        }
        const double f0 = batch_loss(w, b, i, x, batch, target);
        const double right = (batch_loss(w, b, i, x + h, batch, target) - f0) / h;
        const double left = (f0 - batch_loss(w, b, i, x - h, batch, target)) / h;
        const bool kinked = !testing::gradient_close(left, right, 1e-4, 1e-9);
        const double fine = testing::numeric_partial(w, b, i, batch, target, 2.0, 1e-7);
        if (kinked && testing::gradient_close(analytic, fine, 1e-4, 1e-9)) {
          ++kinks;
        } else {
          ++bad;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 60.0,
          fmt::format("{} entries over 16 blocks x 5 clouds: {} within 1e-4 (worst rel {:.2e}), {} straddle a kink "
                      "at h=1e-5 and match at h=1e-7, {} mismatches, {:.1f}s",
                      checked, checked - kinks - bad, worst_smooth, kinks, bad, secs)};
}

// 2. Accelerated Chamfer against a double loop; MMD against exhaustive min.
Verdict metric_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(7);
  double worst = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    const auto a = testing::random_cloud(1 + rng.below(2048), rng.next(), rng.uniform(0.1, 3.0));
    const auto b = testing::random_cloud(1 + rng.below(2048), rng.next(), rng.uniform(0.1, 3.0));
    const double fast = chamfer(a, b);
    const double slow = testing::naive_chamfer(a, b);
    worst = std::max(worst, std::abs(fast - slow) / std::max(std::abs(slow), 1e-300));
  }
  bool mmd_ok = true;
  ShapeBank bank(256);
  std::vector<PointCloud> entries;
  for (int i = 0; i < 10; ++i) {
    entries.push_back(testing::random_cloud(256, 500 + i, 0.5 + 0.1 * i));
    bank.add("e" + std::to_string(i), "k", entries.back());
  }
  for (int q = 0; q < 20; ++q) {
    const auto query = testing::random_cloud(300, 900 + q);
    std::size_t arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const double d = chamfer(query, entries[i]);
      if (d < best) {
        best = d;
        arg = i;
      }
    }
    const auto r = mmd(query, bank, "k");
    const auto [naive_arg, naive_best] = testing::naive_min_match(query, entries);
    mmd_ok &= r.distance == best && r.matched_index == arg && naive_arg == arg &&
              std::abs(naive_best - best) <= 1e-9 * naive_best;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && mmd_ok && secs < 300.0,
          fmt::format("1000 pairs worst rel {:.2e}, mmd exact {}, {:.1f}s", worst, mmd_ok ? "yes" : "no", secs)};
}

// 3. Labels of the standard corpus.
Verdict label_contract(const fs::path& data) {
  const auto records = read_manifest(data);
  bool in_range = true, clean_one = true;
  std::vector<double> clean, ground;
  for (const auto& r : records) {
    in_range &= r.label.s_g >= 0.0 && r.label.s_g <= 1.0;
    if (r.clean) clean_one &= r.label.s_g == 1.0;
    // A clean crop carries neither ground nor clutter points.
    if (r.ground_fraction == 0.0 && r.clutter_fraction == 0.0) clean.push_back(r.label.s_g);
    if (r.ground_fraction >= 0.5) ground.push_back(r.label.s_g);
  }
  const double mc = median(clean), mg = median(ground);
  return {records.size() == 500 && in_range && clean_one && !ground.empty() && mg <= mc - 0.2,
          fmt::format("{} samples, in range {}, clean == 1 {}, median clean {:.3f} (n={}) vs ground>=50% {:.3f} (n={})",
                      records.size(), in_range, clean_one, mc, clean.size(), mg, ground.size())};
}

// 4. Default training run.
Verdict learnability(const fs::path& data, const fs::path& model, double train_seconds) {
  const auto log = lines(model / "train_log.jsonl");
  if (log.size() < 13) return {false, "training log is short"};
  const double first = nlohmann::json::parse(log[1]).at("mean_loss").get<double>();
  const double last = nlohmann::json::parse(log[12]).at("mean_loss").get<double>();

  const auto weights = load_weights(model / "weights.pcqw");
  const auto test = cli::load_corpus(data, "test");
  std::vector<PointCloud> clouds;
  std::vector<double> scores;
  std::vector<bool> positive;
  for (const auto& item : test) {
    if (*item.s_g >= 0.8 || *item.s_g <= 0.4) {
      clouds.push_back(item.cloud);
      positive.push_back(*item.s_g >= 0.8);
    }
  }
  for (const auto& r : score_batch(weights, clouds, 0.5)) scores.push_back(r.score);
  const double auc = roc_auc(scores, positive);
  const auto pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  return {last < 0.5 * first && auc >= 0.85 && train_seconds < 600.0,
          fmt::format("loss {:.5f} -> {:.5f} (ratio {:.3f}), test AUC {:.3f} ({} pos / {} neg), {:.0f}s", first,
                      last, last / first, auc, pos, positive.size() - pos, train_seconds)};
}

// 5. MMD before and after gating at 0.9.
Verdict mmd_direction(const fs::path& root, const fs::path& data, const fs::path& model) {
  write(root / "mmd.cfg", "clouds = " + data.string() + "\noracle = retrieval\nweights = " +
                              (model / "weights.pcqw").string() + "\nthreshold = 0.9\n");
  run_pcq({"eval-mmd", "--config", (root / "mmd.cfg").string(), "--out", (root / "mmd").string()});
  std::map<std::string, std::vector<std::string>> rows;
  for (const auto& l : lines(root / "mmd" / "mmd.csv")) {
    const auto cells = split_csv(l);
    if (cells.size() >= 4 && cells[1] == "all") rows[cells[0]] = cells;
  }
  const auto& before = rows["unfiltered"];
  const auto& after = rows["accepted@0.9"];
  if (before.empty() || after.empty()) return {false, "mmd.csv lacks the overall rows"};
  const auto n0 = std::stoul(before[2]), n1 = std::stoul(after[2]);
  if (n1 == 0) return {false, fmt::format("no cloud accepted out of {}", n0)};
  const double m0 = std::stod(before[3]), m1 = std::stod(after[3]);
  return {m1 <= m0 && n1 < n0,
          fmt::format("mean MMD {:.6f} ({} clouds) -> {:.6f} ({} accepted)", m0, n0, m1, n1)};
}

// 6. Latency grid at batch 1 and 32.
Verdict latency(const fs::path& root, const fs::path& model) {
  write(root / "bench.cfg", "weights = " + (model / "weights.pcqw").string() +
                                "\nruns = 50\nwarmup = 3\nbatches = 1,32\npoints = 128,256,512,1024,2048\n");
  run_pcq({"bench", "--config", (root / "bench.cfg").string(), "--out", (root / "bench").string()});
  std::map<std::pair<std::size_t, std::size_t>, double> ms;
  const auto rows = lines(root / "bench" / "bench.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c = split_csv(rows[i]);
    ms[{std::stoul(c[0]), std::stoul(c[1])}] = std::stod(c[2]);
  }
  bool amortized = true;
  std::string grid;
  for (std::size_t n : {128, 256, 512, 1024, 2048}) {
    amortized &= ms.at({32, n}) < ms.at({1, n});
    grid += fmt::format(" {}:{:.2f}/{:.2f}", n, ms.at({1, n}), ms.at({32, n}));
  }
  const double at2048 = ms.at({32, 2048});
  return {amortized && at2048 <= 10.0,
          fmt::format("b32 < b1 at every size {}, {:.2f} ms/object at 2048 x b32 (limit 10); b1/b32 ms:{}",
                      amortized ? "yes" : "no", at2048, grid)};
}

// 7. Two builds and two trainings with one seed.
Verdict determinism(const fs::path& root, const fs::path& data, const fs::path& model) {
  run_pcq({"build-dataset", "--config", (root / "build.cfg").string(), "--out", (root / "data2").string()});
  const bool same_manifest = slurp(data / "manifest.jsonl") == slurp(root / "data2" / "manifest.jsonl");
  bool same_clouds = true;
  for (const auto& r : read_manifest(data)) {
    for (const auto& f : {r.p, r.p_o, r.p_r, r.p_g}) same_clouds &= slurp(data / f) == slurp(root / "data2" / f);
  }
  write(root / "train_short.cfg", "dataset = " + data.string() + "\nepochs = 2\n");
  run_pcq({"train", "--config", (root / "train_short.cfg").string(), "--out", (root / "model_a").string()});
  run_pcq({"train", "--config", (root / "train_short.cfg").string(), "--out", (root / "model_b").string()});
  const bool same_weights = slurp(root / "model_a" / "weights.pcqw") == slurp(root / "model_b" / "weights.pcqw");
  (void)model;
  return {same_manifest && same_clouds && same_weights,
          fmt::format("manifest {}, clouds {}, weights (2 epochs) {}", same_manifest ? "identical" : "DIFFER",
                      same_clouds ? "identical" : "DIFFER", same_weights ? "identical" : "DIFFER")};
}

// 8. File formats.
Verdict round_trips(const fs::path& root, const fs::path& model) {
  bool clouds_ok = true;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto c = testing::random_cloud(1 + s * 97, s, 10.0);
    io::write_pcq(root / "rt.pcq", c);
    io::write_xyz(root / "rt.xyz", c);
    clouds_ok &= io::read_pcq(root / "rt.pcq") == c && io::read_cloud(root / "rt.xyz") == c;
  }
  const auto w = load_weights(model / "weights.pcqw");
  save_weights(root / "rt.pcqw", w);
  const bool weights_ok = slurp(root / "rt.pcqw") == slurp(model / "weights.pcqw") &&
                          encode_weights(load_weights(root / "rt.pcqw")) == encode_weights(w);

  auto bytes = encode_weights(w);
  int rejected = 0;
  const int flips = 16;
  Rng rng(11);
  for (int k = 0; k < flips; ++k) {
    auto bad = bytes;
    bad[rng.below(bad.size())] ^= static_cast<char>(1 + rng.below(255));
    try {
      (void)decode_weights(bad);
    } catch (const ChecksumError&) {
      ++rejected;
    }
  }
  return {clouds_ok && weights_ok && rejected == flips,
          fmt::format("clouds bit-exact {}, weights bit-exact {}, corrupted files rejected {}/{}", clouds_ok,
                      weights_ok, rejected, flips)};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  fs::path root = fs::temp_directory_path() / "pcq_acceptance";
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--strict") {
      strict = true;
    } else {
      root = argv[i];
    }
  }
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path data = root / "data", model = root / "model";

  std::vector<std::pair<int, Verdict>> results;
  bool errored = false;
  auto report = [&](int id, const std::function<Verdict()>& f) {
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
      errored = true;
    }
    std::cout << fmt::format("criterion {}: {}  {}", id, v.pass ? "PASS" : "FAIL", v.detail) << std::endl;
    results.emplace_back(id, v);
  };

  report(1, gradients);
  report(2, metric_equivalence);

  write(root / "build.cfg", "samples = 500\noracle = retrieval\nseed = 1\n");
  const auto tb = Clock::now();
  run_pcq({"build-dataset", "--config", (root / "build.cfg").string(), "--out", data.string()});
  std::cout << fmt::format("# standard corpus built in {:.1f}s", seconds_since(tb)) << std::endl;
  report(3, [&] { return label_contract(data); });

  write(root / "train.cfg", "dataset = " + data.string() + "\n");
  const auto tt = Clock::now();
  run_pcq({"train", "--config", (root / "train.cfg").string(), "--out", model.string()});
  const double train_seconds = seconds_since(tt);
  report(4, [&] { return learnability(data, model, train_seconds); });
  report(5, [&] { return mmd_direction(root, data, model); });
  report(6, [&] { return latency(root, model); });
  report(7, [&] { return determinism(root, data, model); });
  report(8, [&] { return round_trips(root, model); });

  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second.pass; });
  std::cout << fmt::format("{} of {} criteria pass", results.size() - failed, results.size()) << std::endl;
  if (errored) return 2;
  return strict && failed > 0 ? 1 : 0;
}
