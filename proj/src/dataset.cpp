#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include "json.hpp"

#include "pcq/cloud_io.hpp"
#include "pcq/parallel.hpp"
#include "pcq/synthesis.hpp"

namespace pcq {
namespace {

using ordered_json = nlohmann::ordered_json;

enum SeedTag : std::uint64_t {
  kTagScene = 1,
  kTagShape = 2,
  kTagSplit = 3,
  kTagBank = 4,
  kTagRender = 5,
  kTagAugment = 6,
  kTagRois = 7,
};

struct ScenePlan {
  std::size_t index = 0;
  ShapeKind kind = ShapeKind::box;
  std::uint64_t scene_seed = 0;
  std::uint64_t shape_seed = 0;
  bool test = false;
  bool clean = false;
  SceneSpec spec;
};

struct SceneSample {
  SampleRecord record;
  PointCloud p_r;
};

struct SceneOutput {
  PointCloud p, p_o, p_g;
  std::vector<SceneSample> samples;
};

ScenePlan plan_scene(const BuildConfig& config, std::size_t index) {
  ScenePlan plan;
  plan.index = index;
  plan.scene_seed = derive_seed(derive_seed(config.seed, kTagScene), index);
  plan.shape_seed = derive_seed(derive_seed(config.seed, kTagShape), index);
  plan.test = Rng(derive_seed(derive_seed(config.seed, kTagSplit), index)).uniform() < config.test_fraction;

  Rng rng(plan.scene_seed);
  plan.kind = config.kinds[static_cast<std::size_t>(rng.below(config.kinds.size()))];
  plan.clean = rng.uniform() < config.clean_fraction;

  SceneSpec& spec = plan.spec;
  spec.seed = derive_seed(plan.scene_seed, kTagAugment);
  spec.yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
  spec.translation = Vec3(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(-0.5, 0.5));
  spec.scale = rng.uniform(0.8, 1.2);
  const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double elevation = rng.uniform(5.0, 40.0) * std::numbers::pi / 180.0;
  spec.view = Vec3(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                   std::sin(elevation));
  spec.ground = rng.uniform() < config.ground_probability;
  spec.ground_height = rng.uniform(-0.02, 0.02);
  // Relative extent; scaled by the object footprint once the shape exists.
  spec.ground_half_extent = rng.uniform(config.ground_half_extent_min, config.ground_half_extent_max);
  spec.clutter_count = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.clutter_max) + 1));
  spec.noise_sigma = rng.uniform(0.0, config.noise_sigma_max);
  spec.target_count = 128 + static_cast<std::size_t>(rng.below(2048 - 128 + 1));
  return plan;
}

SceneOutput run_scene(const BuildConfig& config, const ScenePlan& plan, const ShapeBank& bank,
                      const CompletionOracle& oracle) {
  SceneOutput out;
  out.p_g = generate_shape(plan.kind, plan.shape_seed);
  out.p = render_partial(out.p_g, plan.spec.view, derive_seed(plan.scene_seed, kTagRender));

  const Aabb model_box = bounds(out.p_g);
  SceneSpec spec = plan.spec;
  spec.ground_half_extent *= spec.scale * (0.5 * model_box.extent()).head<2>().norm();
  const AugmentedScene scene = augment(out.p, spec, bank, model_box);
  out.p_o = scene.cloud;

  const auto rois = propose_rois(scene, config.rois_per_scene, derive_seed(plan.scene_seed, kTagRois), config.jitter);
  const std::string scene_name = fmt::format("scene{:05}", plan.index);

  for (std::size_t rank = 0; rank < rois.size(); ++rank) {
    SceneSample sample;
    SampleRecord& r = sample.record;
    r.clean = plan.clean && rank == 0;
    std::vector<std::uint32_t> kept;
    if (r.clean) {
      sample.p_r = out.p;
    } else {
      sample.p_r = rois[rank].crop(scene.cloud, &kept);
      if (sample.p_r.size() < config.min_crop_points) continue;
    }
    std::size_t ground = 0, clutter = 0;
    for (auto i : kept) {
      ground += scene.sources[i] == PointSource::ground;
      clutter += scene.sources[i] == PointSource::clutter;
    }
    const double n = static_cast<double>(sample.p_r.size());
    r.ground_fraction = static_cast<double>(ground) / n;
    r.clutter_fraction = static_cast<double>(clutter) / n;
    r.n_points = sample.p_r.size();
    r.id = fmt::format("{}_r{}", scene_name, rank);
    r.split = plan.test ? "test" : "train";
    r.shape_kind = plan.kind;
    r.shape_seed = plan.shape_seed;
    r.seed = plan.scene_seed;
    r.scene = plan.index;
    r.roi_rank = static_cast<int>(rank);
    r.confidence = r.clean ? 1.0 : rois[rank].confidence;
    r.p = fmt::format("clouds/{}_p.pcq", scene_name);
    r.p_o = fmt::format("clouds/{}_po.pcq", scene_name);
    r.p_g = fmt::format("clouds/{}_pg.pcq", scene_name);
    r.p_r = fmt::format("clouds/{}_pr.pcq", r.id);
    try {
      r.label = label_group(out.p, sample.p_r, out.p_g, oracle);
    } catch (const Error& e) {
      throw Error(fmt::format("sample {}: {}", r.id, e.what()));
    }
    out.samples.push_back(std::move(sample));
  }
  return out;
}

}  // namespace

const std::set<std::string>& BuildConfig::keys() {
  static const std::set<std::string> keys{
      "samples", "seed", "oracle", "bank", "bank_per_kind", "kinds", "test_fraction", "rois_per_scene",
      "clean_fraction", "ground_probability", "ground_extent_min", "ground_extent_max", "clutter_max",
      "noise_sigma_max", "jitter", "min_crop_points", "threads", "out"};
  return keys;
}

BuildConfig BuildConfig::from(const KeyValueConfig& kv) {
  kv.reject_unknown(keys());
  BuildConfig c;
  c.oracle = parse_oracle_kind(kv.require("oracle"));
  c.samples = static_cast<std::size_t>(kv.get_int("samples", static_cast<long long>(c.samples)));
  c.seed = kv.get_u64("seed", c.seed);
  if (kv.has("bank")) c.bank_path = kv.get_string("bank", "");
  c.bank_per_kind = static_cast<std::size_t>(kv.get_int("bank_per_kind", static_cast<long long>(c.bank_per_kind)));
  if (kv.has("kinds")) {
    c.kinds.clear();
    for (const auto& name : kv.get_list("kinds", {})) c.kinds.push_back(parse_shape_kind(name));
  }
  c.test_fraction = kv.get_double("test_fraction", c.test_fraction);
  c.rois_per_scene = static_cast<std::size_t>(kv.get_int("rois_per_scene", static_cast<long long>(c.rois_per_scene)));
  c.clean_fraction = kv.get_double("clean_fraction", c.clean_fraction);
  c.ground_probability = kv.get_double("ground_probability", c.ground_probability);
  c.ground_half_extent_min = kv.get_double("ground_extent_min", c.ground_half_extent_min);
  c.ground_half_extent_max = kv.get_double("ground_extent_max", c.ground_half_extent_max);
  c.clutter_max = static_cast<int>(kv.get_int("clutter_max", c.clutter_max));
  c.noise_sigma_max = kv.get_double("noise_sigma_max", c.noise_sigma_max);
  c.jitter = kv.get_double("jitter", c.jitter);
  c.min_crop_points = static_cast<std::size_t>(kv.get_int("min_crop_points", static_cast<long long>(c.min_crop_points)));
  c.threads = static_cast<unsigned>(kv.get_int("threads", c.threads));
  c.validate();
  return c;
}

void BuildConfig::validate() const {
  if (samples == 0) throw ConfigError("samples must be >= 1");
  if (kinds.empty()) throw ConfigError("kinds must not be empty");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  if (rois_per_scene == 0) throw ConfigError("rois_per_scene must be >= 1");
  if (!(clean_fraction >= 0.0 && clean_fraction <= 1.0)) throw ConfigError("clean_fraction must lie in [0, 1]");
  if (!(ground_probability >= 0.0 && ground_probability <= 1.0)) {
    throw ConfigError("ground_probability must lie in [0, 1]");
  }
  if (!(ground_half_extent_min > 0.0 && ground_half_extent_min <= ground_half_extent_max)) {
    throw ConfigError("ground extent range must be positive and ordered");
  }
  if (clutter_max < 0) throw ConfigError("clutter_max must be >= 0");
  if (!(noise_sigma_max >= 0.0)) throw ConfigError("noise_sigma_max must be >= 0");
  if (!(jitter >= 0.0 && jitter <= 1.0)) throw ConfigError("jitter must lie in [0, 1]");
  if (!bank_path && bank_per_kind == 0) throw ConfigError("bank_per_kind must be >= 1 when no bank is given");
  if (min_crop_points == 0) throw ConfigError("min_crop_points must be >= 1");
}

std::string manifest_line(const SampleRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["split"] = r.split;
  j["shape_kind"] = std::string(to_string(r.shape_kind));
  j["shape_seed"] = r.shape_seed;
  j["seed"] = r.seed;
  j["scene"] = r.scene;
  j["roi_rank"] = r.roi_rank;
  j["confidence"] = r.confidence;
  j["clean"] = r.clean;
  j["p"] = r.p;
  j["p_o"] = r.p_o;
  j["p_r"] = r.p_r;
  j["p_g"] = r.p_g;
  j["s_g"] = r.label.s_g;
  j["s_plus"] = r.label.s_plus;
  j["s_minus"] = r.label.s_minus;
  // JSON has no infinity; null marks s_minus == 0 < s_plus.
  j["raw_ratio"] = std::isfinite(r.label.raw_ratio) ? ordered_json(r.label.raw_ratio) : ordered_json(nullptr);
  j["n_points"] = r.n_points;
  j["ground_fraction"] = r.ground_fraction;
  j["clutter_fraction"] = r.clutter_fraction;
  return j.dump();
}

SampleRecord parse_manifest_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.shape_kind = parse_shape_kind(j.at("shape_kind").get<std::string>());
  r.shape_seed = j.at("shape_seed").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.scene = j.at("scene").get<std::size_t>();
  r.roi_rank = j.at("roi_rank").get<int>();
  r.confidence = j.at("confidence").get<double>();
  r.clean = j.at("clean").get<bool>();
  r.p = j.at("p").get<std::string>();
  r.p_o = j.at("p_o").get<std::string>();
  r.p_r = j.at("p_r").get<std::string>();
  r.p_g = j.at("p_g").get<std::string>();
  r.label.s_g = j.at("s_g").get<double>();
  r.label.s_plus = j.at("s_plus").get<double>();
  r.label.s_minus = j.at("s_minus").get<double>();
  const auto& ratio = j.at("raw_ratio");
  r.label.raw_ratio = ratio.is_null() ? std::numeric_limits<double>::infinity() : ratio.get<double>();
  r.n_points = j.at("n_points").get<std::size_t>();
  r.ground_fraction = j.at("ground_fraction").get<double>();
  r.clutter_fraction = j.at("clutter_fraction").get<double>();
  return r;
}

std::vector<SampleRecord> read_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<SampleRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) records.push_back(parse_manifest_line(line));
  }
  return records;
}

DatasetSummary build_dataset(const BuildConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "clouds", ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));

  std::shared_ptr<const ShapeBank> bank;
  if (config.bank_path) {
    bank = std::make_shared<const ShapeBank>(ShapeBank::load(*config.bank_path));
  } else {
    auto generated = generate_bank(config.kinds, config.bank_per_kind, derive_seed(config.seed, kTagBank));
    generated.save(out_dir / "bank");
    bank = std::make_shared<const ShapeBank>(std::move(generated));
  }
  const auto oracle = make_oracle(config.oracle, bank);

  std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError(fmt::format("cannot write {}", (out_dir / "manifest.jsonl").string()));

  ShapeBank gt_bank;
  DatasetSummary summary;
  const std::size_t batch = std::max<std::size_t>(8, 2 * std::max(1U, std::thread::hardware_concurrency()));
  const std::size_t scene_limit = 100 * config.samples + 100;
  std::size_t next_scene = 0;

  while (summary.samples < config.samples) {
    if (next_scene >= scene_limit) throw Error("crops keep coming back empty; check the jitter and crop settings");
    std::vector<SceneOutput> outputs(batch);
    std::vector<ScenePlan> plans(batch);
    parallel_for(
        batch,
        [&](std::size_t i) {
          plans[i] = plan_scene(config, next_scene + i);
          outputs[i] = run_scene(config, plans[i], *bank, *oracle);
        },
        config.threads);
    next_scene += batch;

    for (std::size_t i = 0; i < batch && summary.samples < config.samples; ++i) {
      auto& output = outputs[i];
      if (output.samples.empty()) continue;
      const auto& first = output.samples.front().record;
      io::write_pcq(out_dir / first.p, output.p);
      io::write_pcq(out_dir / first.p_o, output.p_o);
      io::write_pcq(out_dir / first.p_g, output.p_g);
      if (!plans[i].test) {
        gt_bank.add(fmt::format("scene{:05}", plans[i].index), std::string(to_string(plans[i].kind)), output.p_g);
      }
      ++summary.scenes;
      for (auto& sample : output.samples) {
        if (summary.samples == config.samples) break;
        io::write_pcq(out_dir / sample.record.p_r, sample.p_r);
        manifest << manifest_line(sample.record) << '\n';
        ++summary.samples;
        (sample.record.split == "test" ? summary.test : summary.train) += 1;
      }
    }
  }
  gt_bank.save(out_dir / "gt_bank");
  if (!manifest) throw IoError("failed writing manifest");
  return summary;
}

}  // namespace pcq
