#include "mvlat/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace mvlat {

using nlohmann::json;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& context) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + context);
  }
}

MaskSpec parse_mask(const json& obj) {
  check_keys(obj, {"target", "ratio", "seed"}, "loss.mask");
  MaskSpec mask;
  const std::string target = obj.value("target", "private");
  if (target == "private") {
    mask.target = MaskSpec::Target::Private;
  } else if (target == "shared") {
    mask.target = MaskSpec::Target::Shared;
  } else {
    throw ConfigError("config: mask target must be 'private' or 'shared'");
  }
  mask.ratio = obj.at("ratio").get<double>();
  if (mask.ratio < 0.0 || mask.ratio > 1.0) {
    throw ConfigError("config: mask ratio must be in [0, 1]");
  }
  mask.seed.value = obj.value("seed", 0ULL);
  return mask;
}

json dump_mask(const MaskSpec& mask) {
  return json{{"target", mask.target == MaskSpec::Target::Private ? "private" : "shared"},
              {"ratio", mask.ratio},
              {"seed", mask.seed.value}};
}

LossConfig parse_loss(const json& obj) {
  check_keys(obj, {"use_rec", "cos_mode", "cos_level", "mask", "epsilon"}, "loss");
  LossConfig loss;
  loss.use_rec = obj.value("use_rec", true);
  const std::string mode = obj.value("cos_mode", "none");
  if (mode == "none") {
    loss.cos_mode = CosMode::None;
  } else if (mode == "plus") {
    loss.cos_mode = CosMode::Plus;
  } else if (mode == "minus") {
    loss.cos_mode = CosMode::Minus;
  } else {
    throw ConfigError("config: cos_mode must be none|plus|minus");
  }
  const std::string level = obj.value("cos_level", "sample");
  if (level == "sample") {
    loss.cos_level = CosLevel::Sample;
  } else if (level == "batch") {
    loss.cos_level = CosLevel::Batch;
  } else {
    throw ConfigError("config: cos_level must be sample|batch");
  }
  loss.epsilon = obj.value("epsilon", 1e-7);
  if (obj.contains("mask")) loss.mask = parse_mask(obj["mask"]);
  return loss;
}

json dump_loss(const LossConfig& loss) {
  json obj{{"use_rec", loss.use_rec},
           {"cos_mode", loss.cos_mode == CosMode::None
                            ? "none"
                            : (loss.cos_mode == CosMode::Plus ? "plus" : "minus")},
           {"cos_level", loss.cos_level == CosLevel::Sample ? "sample" : "batch"},
           {"epsilon", loss.epsilon}};
  if (loss.mask) obj["mask"] = dump_mask(*loss.mask);
  return obj;
}

SynthSpec parse_synth(const json& obj) {
  check_keys(obj,
             {"n_sensors", "n_sources", "d", "n_frames", "clips_per_sensor",
              "max_labels_per_clip", "noise_sigma", "seed"},
             "dataset.synthetic");
  SynthSpec spec;
  spec.n_sensors = obj.value("n_sensors", spec.n_sensors);
  spec.n_sources = obj.value("n_sources", spec.n_sources);
  spec.d = obj.value("d", spec.d);
  spec.n_frames = obj.value("n_frames", spec.n_frames);
  spec.clips_per_sensor = obj.value("clips_per_sensor", spec.clips_per_sensor);
  spec.max_labels_per_clip = obj.value("max_labels_per_clip", spec.max_labels_per_clip);
  spec.noise_sigma = obj.value("noise_sigma", spec.noise_sigma);
  spec.seed.value = obj.value("seed", 0ULL);
  return spec;
}

json dump_synth(const SynthSpec& spec) {
  return json{{"n_sensors", spec.n_sensors},
              {"n_sources", spec.n_sources},
              {"d", spec.d},
              {"n_frames", spec.n_frames},
              {"clips_per_sensor", spec.clips_per_sensor},
              {"max_labels_per_clip", spec.max_labels_per_clip},
              {"noise_sigma", spec.noise_sigma},
              {"seed", spec.seed.value}};
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  check_keys(root, {"version", "dataset", "split", "model", "train", "probe",
                    "suite", "out_dir"},
             "top level");

  ExperimentConfig cfg;
  if (!root.contains("version")) throw ConfigError("config: missing 'version'");
  if (!root["version"].is_number_integer()) {
    throw ConfigError("config: 'version' must be an integer");
  }
  cfg.version = root["version"].get<int>();
  if (cfg.version != 1) throw ConfigError("config: unsupported version");
  if (!root.contains("dataset")) throw ConfigError("config: missing 'dataset'");

  if (root.contains("dataset")) {
    const json& ds = root["dataset"];
    check_keys(ds, {"synthetic", "manifest", "data_dir"}, "dataset");
    if (ds.contains("synthetic")) cfg.synthetic = parse_synth(ds["synthetic"]);
    cfg.manifest_path = ds.value("manifest", "");
    cfg.data_dir = ds.value("data_dir", "");
    if (cfg.synthetic && !cfg.manifest_path.empty()) {
      throw ConfigError("config: dataset takes either 'synthetic' or 'manifest', not both");
    }
    if (!cfg.synthetic && cfg.manifest_path.empty()) {
      throw ConfigError("config: dataset needs 'synthetic' or 'manifest'");
    }
    if (cfg.synthetic && cfg.data_dir.empty()) {
      throw ConfigError("config: synthetic dataset needs 'data_dir'");
    }
  } else {
    throw ConfigError("config: missing 'dataset'");
  }

  if (root.contains("split")) {
    const json& sp = root["split"];
    check_keys(sp, {"ratios", "seed", "pairs_train", "pairs_val", "pair_seed",
                    "downstream_seed"},
               "split");
    if (sp.contains("ratios")) {
      const auto ratios = sp["ratios"].get<std::vector<double>>();
      if (ratios.size() != 3) throw ConfigError("config: split.ratios needs 3 values");
      cfg.split_ratios = {ratios[0], ratios[1], ratios[2]};
    }
    cfg.split_seed.value = sp.value("seed", cfg.split_seed.value);
    cfg.pairs_train = sp.value("pairs_train", cfg.pairs_train);
    cfg.pairs_val = sp.value("pairs_val", cfg.pairs_val);
    cfg.pair_seed.value = sp.value("pair_seed", cfg.pair_seed.value);
    cfg.downstream_seed.value = sp.value("downstream_seed", cfg.downstream_seed.value);
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    check_keys(m, {"hidden_sizes", "activation", "seed"}, "model");
    if (m.contains("hidden_sizes")) {
      cfg.hidden_sizes = m["hidden_sizes"].get<std::vector<int>>();
    }
    cfg.activation = m.value("activation", cfg.activation);
    cfg.model_seed.value = m.value("seed", cfg.model_seed.value);
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, {"method", "epochs", "batch_size", "learning_rate",
                   "weight_decay", "seed", "loss"},
               "train");
    cfg.train.method = method_from_name(t.value("method", "multiview"));
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.seed.value = t.value("seed", cfg.train.seed.value);
    if (t.contains("loss")) cfg.train.loss = parse_loss(t["loss"]);
  }

  if (root.contains("probe")) {
    const json& p = root["probe"];
    check_keys(p, {"hidden_width", "epochs", "learning_rate", "batch_size", "seed"},
               "probe");
    cfg.probe.hidden_width = p.value("hidden_width", cfg.probe.hidden_width);
    cfg.probe.epochs = p.value("epochs", cfg.probe.epochs);
    cfg.probe.learning_rate = p.value("learning_rate", cfg.probe.learning_rate);
    cfg.probe.batch_size = p.value("batch_size", cfg.probe.batch_size);
    cfg.probe.seed.value = p.value("seed", cfg.probe.seed.value);
  }

  if (root.contains("suite")) {
    const json& s = root["suite"];
    check_keys(s, {"baselines", "variants"}, "suite");
    cfg.suite_baselines = s.value("baselines", true);
    if (s.contains("variants")) {
      for (const json& v : s["variants"]) {
        check_keys(v, {"name", "loss"}, "suite.variants[]");
        SuiteVariant variant;
        variant.name = v.at("name").get<std::string>();
        variant.loss = parse_loss(v.at("loss"));
        cfg.suite.push_back(std::move(variant));
      }
    }
  }

  cfg.out_dir = root.value("out_dir", cfg.out_dir);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string dump_config(const ExperimentConfig& cfg) {
  json root;
  root["version"] = cfg.version;
  json ds;
  if (cfg.synthetic) ds["synthetic"] = dump_synth(*cfg.synthetic);
  if (!cfg.manifest_path.empty()) ds["manifest"] = cfg.manifest_path;
  if (!cfg.data_dir.empty()) ds["data_dir"] = cfg.data_dir;
  root["dataset"] = ds;
  root["split"] = json{{"ratios", cfg.split_ratios},
                       {"seed", cfg.split_seed.value},
                       {"pairs_train", cfg.pairs_train},
                       {"pairs_val", cfg.pairs_val},
                       {"pair_seed", cfg.pair_seed.value},
                       {"downstream_seed", cfg.downstream_seed.value}};
  root["model"] = json{{"hidden_sizes", cfg.hidden_sizes},
                       {"activation", cfg.activation},
                       {"seed", cfg.model_seed.value}};
  root["train"] = json{{"method", method_name(cfg.train.method)},
                       {"epochs", cfg.train.epochs},
                       {"batch_size", cfg.train.batch_size},
                       {"learning_rate", cfg.train.learning_rate},
                       {"weight_decay", cfg.train.weight_decay},
                       {"seed", cfg.train.seed.value},
                       {"loss", dump_loss(cfg.train.loss)}};
  root["probe"] = json{{"hidden_width", cfg.probe.hidden_width},
                       {"epochs", cfg.probe.epochs},
                       {"learning_rate", cfg.probe.learning_rate},
                       {"batch_size", cfg.probe.batch_size},
                       {"seed", cfg.probe.seed.value}};
  if (!cfg.suite.empty() || !cfg.suite_baselines) {
    json variants = json::array();
    for (const auto& v : cfg.suite) {
      variants.push_back(json{{"name", v.name}, {"loss", dump_loss(v.loss)}});
    }
    root["suite"] = json{{"baselines", cfg.suite_baselines}, {"variants", variants}};
  }
  root["out_dir"] = cfg.out_dir;
  return root.dump(2);
}

std::uint64_t model_digest(const ExperimentConfig& cfg) {
  const json obj{{"hidden_sizes", cfg.hidden_sizes},
                 {"activation", cfg.activation},
                 {"model_seed", cfg.model_seed.value},
                 {"method", method_name(cfg.train.method)},
                 {"loss", dump_loss(cfg.train.loss)}};
  const std::string canon = obj.dump();
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char c : canon) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string loss_objective_name(const LossConfig& loss) {
  std::string name = loss.use_rec ? "rec" : "";
  if (loss.cos_mode != CosMode::None) {
    if (!name.empty()) name += "+";
    name += loss.cos_mode == CosMode::Plus ? "cos_plus" : "cos_minus";
    name += loss.cos_level == CosLevel::Sample ? "_sample" : "_batch";
  }
  if (loss.mask && loss.mask->ratio > 0.0) {
    if (!name.empty()) name += "+";
    name += std::string("mask_") +
            (loss.mask->target == MaskSpec::Target::Private ? "zp" : "zs") +
            "_r" + std::to_string(loss.mask->ratio).substr(0, 4);
  }
  return name.empty() ? "n/a" : name;
}

}  // namespace mvlat
