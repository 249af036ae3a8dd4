#include "mvlat/runner.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "mvlat/rng.hpp"

namespace mvlat::runner {

namespace fs = std::filesystem;

std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot digest missing file: " + path);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

namespace {

std::string manifest_path_of(const ExperimentConfig& cfg) {
  if (!cfg.manifest_path.empty()) return cfg.manifest_path;
  return (fs::path(cfg.data_dir) / "manifest.jsonl").string();
}

void ensure_layout(const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "records");
  fs::create_directories(fs::path(out_dir) / "reports");
}

void write_snapshot(const ExperimentConfig& cfg) {
  std::ofstream out(fs::path(cfg.out_dir) / "config.snapshot");
  if (!out) throw IoError("cannot write config snapshot under " + cfg.out_dir);
  out << dump_config(cfg) << "\n";
}

EncoderConfig encoder_config(const ExperimentConfig& cfg, int d) {
  EncoderConfig enc;
  enc.d_in = d;
  enc.hidden_sizes = cfg.hidden_sizes;
  enc.activation = cfg.activation;
  enc.seed = cfg.model_seed;
  return enc;
}

DecoderConfig decoder_config(const ExperimentConfig& cfg, int d) {
  DecoderConfig dec;
  dec.d_in = d;
  dec.hidden_sizes = cfg.hidden_sizes;
  dec.activation = cfg.activation;
  dec.seed.value = splitmix64(cfg.model_seed.value ^ 0x646563ULL);
  return dec;
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (const char c : name) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
               ? c
               : '_';
  }
  return out;
}

}  // namespace

Pipeline prepare(const ExperimentConfig& cfg) {
  Pipeline pipe;
  const std::string manifest = manifest_path_of(cfg);
  pipe.manifest = load_manifest(manifest);
  if (pipe.manifest.empty()) throw ValueError("manifest is empty: " + manifest);
  pipe.latent_root = fs::path(manifest).parent_path().string();

  pipe.plan = split_sensors(pipe.manifest, cfg.split_ratios, cfg.split_seed);
  pipe.pairs_train = make_pairs(pipe.manifest, pipe.plan.train_sensors,
                                cfg.pairs_train, cfg.pair_seed, pipe.latent_root);
  pipe.pairs_val = make_pairs(pipe.manifest, pipe.plan.val_sensors, cfg.pairs_val,
                              RngSeed{splitmix64(cfg.pair_seed.value ^ 0x76616cULL)},
                              pipe.latent_root);
  pipe.d = static_cast<int>(pipe.pairs_train.front().view1.d());

  std::vector<ClipRecord> downstream_records;
  for (const auto& rec : pipe.manifest) {
    if (std::find(pipe.plan.test_sensors.begin(), pipe.plan.test_sensors.end(),
                  rec.sensor_id) != pipe.plan.test_sensors.end()) {
      downstream_records.push_back(rec);
    }
  }
  pipe.downstream = stratified_downstream_split(downstream_records, cfg.downstream_seed);
  return pipe;
}

std::uint64_t cmd_synth(const ExperimentConfig& cfg) {
  if (!cfg.synthetic) throw ConfigError("synth: config has no synthetic dataset spec");
  const SynthDataset ds = generate(*cfg.synthetic);
  write_dataset(ds, cfg.data_dir);
  // digest over manifest + latents in manifest order
  std::uint64_t hash = file_digest((fs::path(cfg.data_dir) / "manifest.jsonl").string());
  for (const auto& rec : ds.manifest) {
    hash ^= file_digest((fs::path(cfg.data_dir) / rec.latent_path).string());
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string cmd_train(const ExperimentConfig& cfg) {
  ensure_layout(cfg.out_dir);
  write_snapshot(cfg);
  const Pipeline pipe = prepare(cfg);
  TrainResult result = train(encoder_config(cfg, pipe.d), decoder_config(cfg, pipe.d),
                             pipe.pairs_train, pipe.pairs_val, cfg.train);
  result.checkpoint.config_digest = model_digest(cfg);
  const std::string name = method_name(cfg.train.method);
  const std::string ckpt_path =
      (fs::path(cfg.out_dir) / "checkpoints" / (name + ".mvck")).string();
  save_checkpoint(ckpt_path, result.checkpoint);
  save_train_record(
      (fs::path(cfg.out_dir) / "records" / (name + ".jsonl")).string(),
      result.record, result.checkpoint.config_digest);
  return ckpt_path;
}

std::string cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  ensure_layout(cfg.out_dir);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.method != "pretrained_only" && ckpt.config_digest != model_digest(cfg)) {
    throw ConfigError("eval: checkpoint digest does not match the config's model section");
  }
  const Pipeline pipe = prepare(cfg);
  const EvalReport report = evaluate(ckpt, pipe.downstream, pipe.latent_root, cfg.probe);
  const std::string name = sanitize(fs::path(checkpoint_path).stem().string());
  const std::string report_path =
      (fs::path(cfg.out_dir) / "reports" / (name + ".eval.json")).string();
  save_eval_report(report_path, report);

  MethodReport mr{ckpt.method, loss_objective_name(cfg.train.loss), report, 0.0};
  std::vector<MethodReport> methods{mr};
  const StrategyReport strat = strategy_report(methods, {});
  std::ofstream scatter(fs::path(cfg.out_dir) / "reports" / (name + ".scatter.csv"));
  scatter << strat.scatter_csv;
  return report_path;
}

std::vector<std::string> cmd_suite(const ExperimentConfig& cfg, int parallel) {
  ensure_layout(cfg.out_dir);
  write_snapshot(cfg);
  const Pipeline pipe = prepare(cfg);
  const auto enc = encoder_config(cfg, pipe.d);
  const auto dec = decoder_config(cfg, pipe.d);

  struct Member {
    std::string name;
    std::string objective;
    Method method;
    LossConfig loss;
    bool needs_training = true;
  };
  std::vector<Member> members;
  for (const auto& variant : cfg.suite) {
    members.push_back({variant.name, loss_objective_name(variant.loss),
                       Method::Multiview, variant.loss, true});
  }
  if (cfg.suite_baselines) {
    members.push_back({"pretrained_only", "n/a", Method::Multiview, {}, false});
    members.push_back({"singleview_ae", "rec", Method::SingleviewAe, {}, true});
    members.push_back({"contrastive", "infonce", Method::Contrastive, {}, true});
    members.push_back(
        {"supervised_source", "bce", Method::SupervisedSource, {}, true});
    members.push_back(
        {"supervised_sensor", "ce", Method::SupervisedSensor, {}, true});
  }

  struct Outcome {
    bool ok = false;
    std::string error;
    MethodReport report;
    bool is_baseline = false;
  };
  std::vector<Outcome> outcomes(members.size());

  const auto run_member = [&](std::size_t idx) {
    const Member& member = members[idx];
    Outcome& outcome = outcomes[idx];
    outcome.is_baseline = member.name == "pretrained_only" ||
                          member.method != Method::Multiview;
    try {
      ExperimentConfig member_cfg = cfg;
      member_cfg.train.method = member.method;
      member_cfg.train.loss = member.loss;
      // member seeds derive from the master seed and the member name
      std::uint64_t name_hash = 0xcbf29ce484222325ULL;
      for (const char c : member.name) {
        name_hash ^= static_cast<unsigned char>(c);
        name_hash *= 0x100000001b3ULL;
      }
      member_cfg.train.seed.value = splitmix64(cfg.train.seed.value ^ name_hash);

      Checkpoint ckpt;
      TrainRecord record;
      double seconds = 0.0;
      if (member.needs_training) {
        const auto started = std::chrono::steady_clock::now();
        TrainResult result =
            train(enc, dec, pipe.pairs_train, pipe.pairs_val, member_cfg.train);
        seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                started)
                      .count();
        ckpt = std::move(result.checkpoint);
        record = std::move(result.record);
      } else {
        ckpt.method = "pretrained_only";
        ckpt.d = pipe.d;
      }
      ckpt.config_digest = model_digest(member_cfg);

      const std::string safe = sanitize(member.name);
      save_checkpoint(
          (fs::path(cfg.out_dir) / "checkpoints" / (safe + ".mvck")).string(), ckpt);
      if (member.needs_training) {
        save_train_record(
            (fs::path(cfg.out_dir) / "records" / (safe + ".jsonl")).string(),
            record, ckpt.config_digest);
      }
      EvalReport report = evaluate(ckpt, pipe.downstream, pipe.latent_root, cfg.probe);
      report.config_digest = ckpt.config_digest;
      save_eval_report(
          (fs::path(cfg.out_dir) / "reports" / (safe + ".eval.json")).string(),
          report);
      outcome.report = {member.name, member.objective, report, seconds};
      outcome.ok = true;
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
  };

  if (parallel <= 1) {
    for (std::size_t i = 0; i < members.size(); ++i) run_member(i);
  } else {
    std::size_t next = 0;
    std::mutex mu;
    const auto worker = [&]() {
      for (;;) {
        std::size_t idx;
        {
          std::lock_guard lock(mu);
          if (next >= members.size()) return;
          idx = next++;
        }
        run_member(idx);
      }
    };
    std::vector<std::thread> threads;
    for (int i = 0; i < parallel; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<MethodReport> method_reports, baseline_reports;
  std::vector<std::string> failed;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (!outcomes[i].ok) {
      failed.push_back(members[i].name + ": " + outcomes[i].error);
      continue;
    }
    (outcomes[i].is_baseline ? baseline_reports : method_reports)
        .push_back(outcomes[i].report);
  }
  if (!method_reports.empty() || !baseline_reports.empty()) {
    const StrategyReport strat = strategy_report(method_reports, baseline_reports);
    std::ofstream table(fs::path(cfg.out_dir) / "reports" / "comparison.csv");
    table << strat.table_csv;
    std::ofstream scatter(fs::path(cfg.out_dir) / "reports" / "scatter.csv");
    scatter << strat.scatter_csv;
    std::ofstream ref(fs::path(cfg.out_dir) / "reports" / "reference.json");
    ref << "{\n  \"reference_source\": " << strat.reference_source
        << ",\n  \"reference_sensor\": " << strat.reference_sensor << "\n}\n";
  }
  if (!failed.empty()) {
    std::ofstream report(fs::path(cfg.out_dir) / "reports" / "failures.txt");
    for (const auto& f : failed) report << f << "\n";
  }
  return failed;
}

}  // namespace mvlat::runner
