#include <doctest.h>

#include <filesystem>
#include <set>

#include "mvlat/ingest.hpp"
#include "mvlat/synthdata.hpp"

using namespace mvlat;

namespace {
SynthSpec small_spec() {
  SynthSpec spec;
  spec.n_sensors = 4;
  spec.n_sources = 5;
  spec.d = 16;
  spec.n_frames = 6;
  spec.clips_per_sensor = 10;
  spec.max_labels_per_clip = 3;
  spec.noise_sigma = 0.05;
  spec.seed = RngSeed{11};
  return spec;
}
}  // namespace

TEST_CASE("validate_spec rejects out-of-range fields") {
  SynthSpec spec = small_spec();
  CHECK_NOTHROW(validate_spec(spec));

  spec.n_sensors = 0;
  CHECK_THROWS_AS(validate_spec(spec), ValueError);
  spec = small_spec();
  spec.d = 15;  // odd
  CHECK_THROWS_AS(validate_spec(spec), ValueError);
  spec = small_spec();
  spec.noise_sigma = -0.1;
  CHECK_THROWS_AS(validate_spec(spec), ValueError);
  spec = small_spec();
  spec.max_labels_per_clip = 6;  // more labels than sources
  CHECK_THROWS_AS(validate_spec(spec), ValueError);
  spec = small_spec();
  spec.clips_per_sensor = 1;  // pairing needs two clips per sensor
  CHECK_THROWS_AS(validate_spec(spec), ValueError);
}

TEST_CASE("generate produces a consistent dataset") {
  const SynthSpec spec = small_spec();
  const SynthDataset ds = generate(spec);

  CHECK(ds.manifest.size() == 40);
  CHECK(ds.latents.size() == 40);
  CHECK(ds.sensor_prototypes.rows() == 4);
  CHECK(ds.sensor_prototypes.cols() == 16);
  CHECK(ds.source_prototypes.rows() == 5);

  for (int k = 0; k < 4; ++k) {
    CHECK(ds.sensor_prototypes.row(k).norm() == doctest::Approx(1.0f).epsilon(1e-5));
  }
  for (int l = 0; l < 5; ++l) {
    CHECK(ds.source_prototypes.row(l).norm() == doctest::Approx(1.0f).epsilon(1e-5));
  }

  std::set<std::string> clip_ids;
  std::map<std::string, int> per_sensor;
  for (const auto& rec : ds.manifest) {
    CHECK(clip_ids.insert(rec.clip_id).second);
    ++per_sensor[rec.sensor_id];
    CHECK(rec.source_labels.size() >= 1);
    CHECK(rec.source_labels.size() <= 3);
    CHECK(std::is_sorted(rec.source_labels.begin(), rec.source_labels.end()));
    const auto& lat = ds.latents.at(rec.clip_id);
    CHECK(lat.n_frames() == 6);
    CHECK(lat.d() == 16);
    CHECK_NOTHROW(validate_embedding(lat));
  }
  CHECK(per_sensor.size() == 4);
  for (const auto& [sensor, count] : per_sensor) CHECK(count == 10);
}

TEST_CASE("generation is deterministic in the seed") {
  const SynthSpec spec = small_spec();
  const SynthDataset a = generate(spec);
  const SynthDataset b = generate(spec);
  CHECK(a.sensor_prototypes == b.sensor_prototypes);
  for (const auto& [id, lat] : a.latents) {
    CHECK(lat.values == b.latents.at(id).values);
  }

  SynthSpec other = spec;
  other.seed = RngSeed{12};
  const SynthDataset c = generate(other);
  CHECK(a.latents.begin()->second.values != c.latents.begin()->second.values);
}

TEST_CASE("zero noise reduces frames to the factor sum") {
  SynthSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  const SynthDataset ds = generate(spec);
  for (const auto& rec : ds.manifest) {
    const auto& lat = ds.latents.at(rec.clip_id);
    // all frames of a clip are identical without noise
    for (Eigen::Index t = 1; t < lat.n_frames(); ++t) {
      CHECK(lat.values.row(t) == lat.values.row(0));
    }
    // frame equals sensor prototype + sum of labelled source prototypes
    int k = -1;
    for (int s = 0; s < spec.n_sensors; ++s) {
      if (sensor_name(s) == rec.sensor_id) k = s;
    }
    REQUIRE(k >= 0);
    Vector expected = ds.sensor_prototypes.row(k);
    for (const auto& label : rec.source_labels) {
      for (int l = 0; l < spec.n_sources; ++l) {
        if (source_name(l) == label) expected += ds.source_prototypes.row(l);
      }
    }
    CHECK((lat.values.row(0).transpose() - expected).norm() < 1e-5f);
  }
}

TEST_CASE("linear recoverability on clean data is near perfect") {
  SynthSpec spec = small_spec();
  spec.clips_per_sensor = 40;
  spec.noise_sigma = 0.01;
  const auto r = recoverability_check(generate(spec));
  CHECK(r.sensor_acc >= 0.98);
  CHECK(r.source_jaccard >= 0.95);
}

TEST_CASE("write_dataset round trips through the manifest loader") {
  const auto dir = std::filesystem::temp_directory_path() / "mvlat_synth_rt";
  std::filesystem::remove_all(dir);
  const SynthDataset ds = generate(small_spec());
  write_dataset(ds, dir.string());

  const auto records = load_manifest((dir / "manifest.jsonl").string());
  CHECK(records.size() == ds.manifest.size());
  for (const auto& rec : records) {
    const auto lat = load_latent((dir / rec.latent_path).string(), rec.clip_id);
    CHECK(lat.values == ds.latents.at(rec.clip_id).values);
  }
  std::filesystem::remove_all(dir);
}
