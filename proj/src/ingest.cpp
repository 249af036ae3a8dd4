#include "mvlat/ingest.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "mvlat/rng.hpp"

namespace mvlat {

using nlohmann::json;

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  return static_cast<std::uint32_t>(buf[0]) |
         (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

constexpr std::uint32_t kLatentVersion = 1;

}  // namespace

std::vector<ClipRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest not found: " + path);
  std::vector<ClipRecord> records;
  std::set<std::string> clip_ids;
  std::set<std::pair<std::string, int>> keys;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("manifest " + path + ":" + std::to_string(lineno) +
                    ": parse error: " + e.what());
    }
    ClipRecord rec;
    try {
      rec.clip_id = obj.at("clip_id").get<std::string>();
      rec.sensor_id = obj.at("sensor_id").get<std::string>();
      rec.segment_index = obj.at("segment_index").get<int>();
      rec.latent_path = obj.at("latent_path").get<std::string>();
      if (obj.contains("source_labels")) {
        rec.source_labels = obj["source_labels"].get<std::vector<std::string>>();
      }
    } catch (const json::exception& e) {
      throw IoError("manifest " + path + ":" + std::to_string(lineno) +
                    ": bad record: " + e.what());
    }
    if (!clip_ids.insert(rec.clip_id).second) {
      throw IoError("manifest " + path + ":" + std::to_string(lineno) +
                    ": duplicate clip_id '" + rec.clip_id + "'");
    }
    if (!keys.insert({rec.sensor_id, rec.segment_index}).second) {
      throw IoError("manifest " + path + ":" + std::to_string(lineno) +
                    ": duplicate (sensor_id, segment_index) = (" +
                    rec.sensor_id + ", " + std::to_string(rec.segment_index) + ")");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_manifest(const std::string& path, const std::vector<ClipRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& rec : records) {
    json obj{{"clip_id", rec.clip_id},
             {"sensor_id", rec.sensor_id},
             {"segment_index", rec.segment_index},
             {"latent_path", rec.latent_path}};
    if (!rec.source_labels.empty()) obj["source_labels"] = rec.source_labels;
    out << obj.dump() << "\n";
  }
}

EmbeddingMatrix load_latent(const std::string& path, const std::string& clip_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("latent file not found: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MVLT", 4) != 0) {
    throw IoError("latent file " + path + ": bad magic");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kLatentVersion) {
    throw IoError("latent file " + path + ": unsupported version " +
                  std::to_string(version));
  }
  const std::uint32_t n_frames = read_u32(in);
  const std::uint32_t d = read_u32(in);
  EmbeddingMatrix m;
  m.clip_id = clip_id;
  m.values.resize(n_frames, d);
  std::vector<float> row(d);
  for (std::uint32_t r = 0; r < n_frames; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(float) * d));
    if (!in) {
      throw IoError("latent file " + path + ": declared (" +
                    std::to_string(n_frames) + ", " + std::to_string(d) +
                    ") but data is short");
    }
    for (std::uint32_t c = 0; c < d; ++c) m.values(r, c) = row[c];
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw IoError("latent file " + path + ": trailing bytes beyond declared shape");
  }
  validate_embedding(m);
  return m;
}

void save_latent(const std::string& path, const EmbeddingMatrix& m) {
  validate_embedding(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write latent file: " + path);
  out.write("MVLT", 4);
  write_u32(out, kLatentVersion);
  write_u32(out, static_cast<std::uint32_t>(m.n_frames()));
  write_u32(out, static_cast<std::uint32_t>(m.d()));
  std::vector<float> row(static_cast<std::size_t>(m.d()));
  for (Eigen::Index r = 0; r < m.n_frames(); ++r) {
    for (Eigen::Index c = 0; c < m.d(); ++c) row[static_cast<std::size_t>(c)] = m.values(r, c);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(sizeof(float) * row.size()));
  }
}

std::vector<ViewPair> make_pairs(const std::vector<ClipRecord>& records,
                                 const std::vector<std::string>& split_sensors,
                                 std::size_t n_pairs, RngSeed seed,
                                 const std::string& latent_root) {
  std::map<std::string, std::vector<const ClipRecord*>> by_sensor;
  for (const auto& rec : records) by_sensor[rec.sensor_id].push_back(&rec);
  for (const auto& sensor : split_sensors) {
    auto it = by_sensor.find(sensor);
    const std::size_t count = it == by_sensor.end() ? 0 : it->second.size();
    if (count < 2) {
      throw ValueError("sensor '" + sensor + "' has " + std::to_string(count) +
                       " clips; pairing needs at least 2");
    }
  }
  const auto resolve = [&](const std::string& p) {
    if (latent_root.empty()) return p;
    return (std::filesystem::path(latent_root) / p).string();
  };
  Rng rng(seed);
  std::vector<ViewPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto& sensor = split_sensors[rng.below(split_sensors.size())];
    const auto& clips = by_sensor[sensor];
    const std::size_t a = rng.below(clips.size());
    std::size_t b = rng.below(clips.size() - 1);
    if (b >= a) ++b;
    ViewPair pair;
    pair.shared_key = sensor;
    pair.rec1 = *clips[a];
    pair.rec2 = *clips[b];
    pair.view1 = load_latent(resolve(pair.rec1.latent_path), pair.rec1.clip_id);
    pair.view2 = load_latent(resolve(pair.rec2.latent_path), pair.rec2.clip_id);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

SplitPlan split_sensors(const std::vector<ClipRecord>& records,
                        const std::array<double, 3>& ratios, RngSeed seed) {
  std::set<std::string> sensor_set;
  for (const auto& rec : records) sensor_set.insert(rec.sensor_id);
  std::vector<std::string> sensors(sensor_set.begin(), sensor_set.end());
  if (sensors.size() < 3) {
    throw ValueError("sensor-disjoint split needs at least 3 sensors, got " +
                     std::to_string(sensors.size()));
  }
  Rng rng(seed);
  rng.shuffle(sensors);

  for (const double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw ValueError("split ratios must be finite and non-negative");
    }
  }
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (total <= 0.0) throw ValueError("split ratios must sum to a positive value");
  const std::size_t n = sensors.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * ratios[static_cast<std::size_t>(i)] / total;
    counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(exact);
    remainders[static_cast<std::size_t>(i)] = exact - std::floor(exact);
    assigned += counts[static_cast<std::size_t>(i)];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (remainders[static_cast<std::size_t>(i)] > remainders[static_cast<std::size_t>(best)]) best = i;
    }
    ++counts[static_cast<std::size_t>(best)];
    remainders[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  // every split must be usable downstream
  for (int i = 0; i < 3; ++i) {
    if (counts[static_cast<std::size_t>(i)] == 0) {
      int donor = 0;
      for (int j = 1; j < 3; ++j) {
        if (counts[static_cast<std::size_t>(j)] > counts[static_cast<std::size_t>(donor)]) donor = j;
      }
      --counts[static_cast<std::size_t>(donor)];
      ++counts[static_cast<std::size_t>(i)];
    }
  }

  SplitPlan plan;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < counts[0]; ++i) plan.train_sensors.push_back(sensors[pos++]);
  for (std::size_t i = 0; i < counts[1]; ++i) plan.val_sensors.push_back(sensors[pos++]);
  for (std::size_t i = 0; i < counts[2]; ++i) plan.test_sensors.push_back(sensors[pos++]);
  return plan;
}

DownstreamSplit stratified_downstream_split(const std::vector<ClipRecord>& records,
                                            RngSeed seed) {
  std::map<std::string, std::vector<ClipRecord>> by_sensor;
  for (const auto& rec : records) by_sensor[rec.sensor_id].push_back(rec);
  for (const auto& [sensor, clips] : by_sensor) {
    if (clips.size() < 3) {
      throw ValueError("sensor '" + sensor + "' has fewer than 3 clips; cannot stratify");
    }
  }

  DownstreamSplit split;
  Rng rng(seed);
  for (auto& [sensor, clips] : by_sensor) {
    rng.shuffle(clips);
    const std::size_t n = clips.size();
    // largest-remainder 70/10/20 with one clip guaranteed per subset
    std::array<double, 3> ratios{0.7, 0.1, 0.2};
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
      const double exact = static_cast<double>(n) * ratios[static_cast<std::size_t>(i)];
      counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(exact);
      rem[static_cast<std::size_t>(i)] = exact - std::floor(exact);
      assigned += counts[static_cast<std::size_t>(i)];
    }
    while (assigned < n) {
      int best = 0;
      for (int i = 1; i < 3; ++i) {
        if (rem[static_cast<std::size_t>(i)] > rem[static_cast<std::size_t>(best)]) best = i;
      }
      ++counts[static_cast<std::size_t>(best)];
      rem[static_cast<std::size_t>(best)] = -1.0;
      ++assigned;
    }
    for (int i = 0; i < 3; ++i) {
      if (counts[static_cast<std::size_t>(i)] == 0) {
        int donor = 0;
        for (int j = 1; j < 3; ++j) {
          if (counts[static_cast<std::size_t>(j)] > counts[static_cast<std::size_t>(donor)]) donor = j;
        }
        --counts[static_cast<std::size_t>(donor)];
        ++counts[static_cast<std::size_t>(i)];
      }
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) split.train.push_back(clips[pos++]);
    for (std::size_t i = 0; i < counts[1]; ++i) split.val.push_back(clips[pos++]);
    for (std::size_t i = 0; i < counts[2]; ++i) split.test.push_back(clips[pos++]);
  }

  // every source label must be trainable: pull one carrier of each missing
  // label out of val/test
  std::set<std::string> train_labels;
  for (const auto& rec : split.train) {
    train_labels.insert(rec.source_labels.begin(), rec.source_labels.end());
  }
  std::set<std::string> all_labels;
  for (const auto& rec : records) {
    all_labels.insert(rec.source_labels.begin(), rec.source_labels.end());
  }
  for (const auto& label : all_labels) {
    if (train_labels.count(label)) continue;
    const auto pull = [&](std::vector<ClipRecord>& from) {
      for (std::size_t i = 0; i < from.size(); ++i) {
        const auto& labels = from[i].source_labels;
        if (std::find(labels.begin(), labels.end(), label) != labels.end()) {
          split.train.push_back(from[i]);
          train_labels.insert(labels.begin(), labels.end());
          from.erase(from.begin() + static_cast<std::ptrdiff_t>(i));
          return true;
        }
      }
      return false;
    };
    if (!pull(split.val)) pull(split.test);
  }
  return split;
}

}  // namespace mvlat
