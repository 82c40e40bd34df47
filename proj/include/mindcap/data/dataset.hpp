#pragma once

// On-disk dataset layout:
//
//   manifest.json            structured description (subjects, splits, files, seed)
//   {subject}/{split}.f32    little-endian float32 voxel rows, one row per trial,
//                            stimulus-major / repetition-minor
//   captions.jsonl           {"stimulus_id": ..., "captions": [5 strings]} per line
//   imgfeat.f32              ground-truth feature rows in manifest stimulus order
//   images/{id}.png          optional rendered 32x32 stimuli

#include "mindcap/core/png.hpp"
#include "mindcap/core/random.hpp"
#include "mindcap/data/world.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mindcap::data {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kAveragedRepetition = -1;

struct FmriSample {
  std::string subject_id;
  std::string stimulus_id;
  int repetition = 0;
  Vec voxels;
};

struct CaptionSet {
  std::string stimulus_id;
  std::vector<std::string> captions;
};

struct StimulusInfo {
  std::string id;
  Attributes attrs;
};

struct SubjectEntry {
  std::string id;
  int voxel_count = 0;
  std::vector<std::string> train, test;
  std::string train_file, test_file;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  WorldConfig world;
  int v_align = 0;
  int trials_per_stimulus = 1;
  std::vector<SubjectEntry> subjects;
  std::vector<StimulusInfo> stimuli;
  std::string captions_file = "captions.jsonl";
  std::string features_file = "imgfeat.f32";
  int feature_dim = 0;

  const SubjectEntry& subject(const std::string& id) const {
    for (const auto& s : subjects)
      if (s.id == id) return s;
    throw std::out_of_range("unknown subject " + id);
  }
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline json to_json(const DatasetManifest& m) {
  json j;
  j["format"] = "mindcap.dataset";
  j["version"] = 1;
  j["seed"] = m.seed;
  json w;
  w["colors"] = m.world.colors;
  w["objects"] = m.world.objects;
  w["contexts"] = m.world.contexts;
  w["attr_embed_dim"] = m.world.attr_embed_dim;
  w["obs_noise_std"] = m.world.obs_noise_std;
  w["smoothing"] = m.world.smoothing;
  w["seed"] = m.world.seed;
  j["world"] = w;
  j["v_align"] = m.v_align;
  j["trials_per_stimulus"] = m.trials_per_stimulus;
  j["layout"] = "stimulus-major, repetition-minor, float32 little-endian";
  json subs = json::array();
  for (const auto& s : m.subjects)
    subs.push_back({{"id", s.id},
                    {"voxel_count", s.voxel_count},
                    {"splits", {{"train", s.train}, {"test", s.test}}},
                    {"files", {{"train", s.train_file}, {"test", s.test_file}}}});
  j["subjects"] = subs;
  json st = json::array();
  for (const auto& s : m.stimuli)
    st.push_back({{"id", s.id}, {"color", s.attrs.color}, {"object", s.attrs.object}, {"context", s.attrs.context}});
  j["stimuli"] = st;
  j["captions"] = m.captions_file;
  j["image_features"] = m.features_file;
  j["feature_dim"] = m.feature_dim;
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  try {
    if (j.at("format") != "mindcap.dataset" || j.at("version") != 1)
      throw DatasetError("manifest schema mismatch: unsupported format/version");
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& w = j.at("world");
    m.world.colors = w.at("colors");
    m.world.objects = w.at("objects");
    m.world.contexts = w.at("contexts");
    m.world.attr_embed_dim = w.at("attr_embed_dim");
    m.world.obs_noise_std = w.at("obs_noise_std");
    m.world.smoothing = w.at("smoothing");
    m.world.seed = w.at("seed").get<std::uint64_t>();
    m.v_align = j.at("v_align");
    m.trials_per_stimulus = j.at("trials_per_stimulus");
    m.world.subjects.clear();
    for (const auto& s : j.at("subjects")) {
      SubjectEntry e;
      e.id = s.at("id");
      e.voxel_count = s.at("voxel_count");
      e.train = s.at("splits").at("train").get<std::vector<std::string>>();
      e.test = s.at("splits").at("test").get<std::vector<std::string>>();
      e.train_file = s.at("files").at("train");
      e.test_file = s.at("files").at("test");
      m.world.subjects.push_back({e.id, e.voxel_count});
      m.subjects.push_back(std::move(e));
    }
    for (const auto& s : j.at("stimuli"))
      m.stimuli.push_back({s.at("id"), {s.at("color"), s.at("object"), s.at("context")}});
    m.captions_file = j.at("captions");
    m.features_file = j.at("image_features");
    m.feature_dim = j.at("feature_dim");
    return m;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("manifest schema mismatch: ") + e.what());
  }
}

inline std::string stimulus_id(int combo) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "stim_%04d", combo);
  return buf;
}

inline void write_f32(const fs::path& path, const std::vector<Vec>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (const auto& r : rows)
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const float f = static_cast<float>(r(i));
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  if (!out) throw DatasetError("short write " + path.string());
}

inline std::vector<Vec> read_f32(const fs::path& path, size_t row_count, int width) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw DatasetError("missing file " + path.string());
  const std::uintmax_t expected = static_cast<std::uintmax_t>(row_count) * static_cast<std::uintmax_t>(width) * 4;
  if (size != expected)
    throw DatasetError("byte-length mismatch for " + path.string() + ": " + std::to_string(size) +
                       " bytes, expected " + std::to_string(expected));
  std::ifstream in(path, std::ios::binary);
  std::vector<float> buf(static_cast<size_t>(width));
  std::vector<Vec> rows;
  rows.reserve(row_count);
  for (size_t r = 0; r < row_count; ++r) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    Vec v(width);
    for (int i = 0; i < width; ++i) v(i) = buf[static_cast<size_t>(i)];
    rows.push_back(std::move(v));
  }
  return rows;
}

struct SynthConfig {
  WorldConfig world;
  int train_stimuli = 512;
  int test_stimuli = 128;
  int trials_per_stimulus = 3;
  int v_align = 512;
  bool write_images = false;
};

// Generates the dataset directory and returns its manifest. The test split is
// shared across subjects; each subject's training stimuli are an independent
// draw from the remaining combinations.
inline DatasetManifest make_synth(const SynthConfig& cfg, const fs::path& dir) {
  SynthWorld world(cfg.world);
  const int combos = world.combination_count();
  if (cfg.train_stimuli < 1 || cfg.test_stimuli < 1 || cfg.trials_per_stimulus < 1)
    throw DatasetError("stimulus and trial counts must be positive");
  if (cfg.train_stimuli + cfg.test_stimuli > combos)
    throw DatasetError("requested " + std::to_string(cfg.train_stimuli + cfg.test_stimuli) +
                       " stimuli but the world only has " + std::to_string(combos) + " attribute combinations");
  if (cfg.world.subjects.empty()) throw DatasetError("at least one subject is required");
  for (const auto& s : cfg.world.subjects)
    if (s.voxel_count > cfg.v_align)
      throw DatasetError("subject " + s.id + " has more voxels than v_align");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DatasetError("unwritable dataset path " + dir.string());

  DatasetManifest m;
  m.seed = cfg.world.seed;
  m.world = cfg.world;
  m.v_align = cfg.v_align;
  m.trials_per_stimulus = cfg.trials_per_stimulus;
  m.feature_dim = cfg.world.attr_embed_dim;

  Rng split_rng(derive_seed(cfg.world.seed, "splits"));
  const auto perm = permutation(split_rng, combos);
  std::vector<int> test(perm.begin(), perm.begin() + cfg.test_stimuli);
  std::vector<int> pool(perm.begin() + cfg.test_stimuli, perm.end());
  std::sort(test.begin(), test.end());

  std::set<int> used(test.begin(), test.end());
  for (const auto& s : cfg.world.subjects) {
    Rng srng(derive_seed(cfg.world.seed, "train_split/" + s.id));
    const auto p = permutation(srng, static_cast<int>(pool.size()));
    std::vector<int> train;
    for (int i = 0; i < cfg.train_stimuli; ++i) train.push_back(pool[static_cast<size_t>(p[static_cast<size_t>(i)])]);
    std::sort(train.begin(), train.end());
    used.insert(train.begin(), train.end());

    SubjectEntry e;
    e.id = s.id;
    e.voxel_count = s.voxel_count;
    for (int c : train) e.train.push_back(stimulus_id(c));
    for (int c : test) e.test.push_back(stimulus_id(c));
    e.train_file = s.id + "/train.f32";
    e.test_file = s.id + "/test.f32";
    fs::create_directories(dir / s.id);

    for (const auto& [split, ids, file] :
         {std::tuple{"train", std::cref(train), e.train_file}, std::tuple{"test", std::cref(test), e.test_file}}) {
      Rng trng(derive_seed(cfg.world.seed, std::string("trials/") + s.id + "/" + split));
      std::vector<Vec> rows;
      for (int c : ids.get())
        for (int r = 0; r < cfg.trials_per_stimulus; ++r) rows.push_back(world.fmri(s.id, world.attributes_of(c), trng));
      write_f32(dir / file, rows);
    }
    m.subjects.push_back(std::move(e));
  }

  std::vector<Vec> feats;
  std::ofstream caps(dir / m.captions_file, std::ios::trunc);
  if (!caps) throw DatasetError("cannot write captions file");
  for (int c : used) {
    const auto a = world.attributes_of(c);
    m.stimuli.push_back({stimulus_id(c), a});
    feats.push_back(world.features(a));
    caps << json{{"stimulus_id", stimulus_id(c)}, {"captions", world.captions(a)}}.dump() << "\n";
    if (cfg.write_images) {
      const Vec img = world.render(a);
      write_png_rgb(dir / "images" / (stimulus_id(c) + ".png"), img, kImageSize, kImageSize);
    }
  }
  write_f32(dir / m.features_file, feats);

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  mf << to_json(m).dump(2) << "\n";
  if (!mf) throw DatasetError("cannot write manifest");
  return m;
}

class Dataset {
 public:
  static Dataset load(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DatasetError("manifest not found in " + dir.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DatasetError(std::string("manifest schema mismatch: ") + e.what());
    }
    Dataset d;
    d.root_ = dir;
    d.manifest_ = manifest_from_json(j);
    d.validate_and_index();
    return d;
  }

  const DatasetManifest& manifest() const { return manifest_; }
  const fs::path& root() const { return root_; }
  SynthWorld world() const { return SynthWorld(manifest_.world); }

  // Trials in file order (stimulus-major, repetition-minor).
  std::vector<FmriSample> trials(const std::string& subject, const std::string& split) const {
    const auto& s = manifest_.subject(subject);
    const auto& ids = split == "train" ? s.train : s.test;
    if (split != "train" && split != "test") throw std::invalid_argument("split must be train or test");
    const auto rows = read_f32(root_ / (split == "train" ? s.train_file : s.test_file),
                               ids.size() * static_cast<size_t>(manifest_.trials_per_stimulus), s.voxel_count);
    std::vector<FmriSample> out;
    out.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      const size_t stim = i / static_cast<size_t>(manifest_.trials_per_stimulus);
      out.push_back({subject, ids[stim], static_cast<int>(i % static_cast<size_t>(manifest_.trials_per_stimulus)), rows[i]});
    }
    return out;
  }

  const CaptionSet& captions(const std::string& stimulus) const {
    auto it = captions_.find(stimulus);
    if (it == captions_.end()) throw DatasetError("missing caption for stimulus " + stimulus);
    return it->second;
  }

  const Vec& features(const std::string& stimulus) const {
    auto it = feature_index_.find(stimulus);
    if (it == feature_index_.end()) throw DatasetError("no image features for stimulus " + stimulus);
    return features_[it->second];
  }

  const Attributes& attributes(const std::string& stimulus) const {
    auto it = feature_index_.find(stimulus);
    if (it == feature_index_.end()) throw DatasetError("unknown stimulus " + stimulus);
    return manifest_.stimuli[it->second].attrs;
  }

  // Deterministic per-epoch visiting order.
  static std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch) {
    Rng rng(derive_seed(seed, "epoch/" + std::to_string(epoch)));
    return permutation(rng, n);
  }

 private:
  void validate_and_index() {
    const auto& m = manifest_;
    for (const auto& s : m.subjects) {
      std::set<std::string> tr(s.train.begin(), s.train.end());
      for (const auto& t : s.test)
        if (tr.count(t)) throw DatasetError("stimulus " + t + " appears in both splits of " + s.id);
      if (s.voxel_count > m.v_align) throw DatasetError("subject " + s.id + " exceeds v_align");
      for (const auto& [ids, file] : {std::pair{&s.train, s.train_file}, std::pair{&s.test, s.test_file}}) {
        std::error_code ec;
        const auto size = fs::file_size(root_ / file, ec);
        if (ec) throw DatasetError("missing file " + (root_ / file).string());
        const std::uintmax_t expected = static_cast<std::uintmax_t>(ids->size()) *
                                        static_cast<std::uintmax_t>(m.trials_per_stimulus) *
                                        static_cast<std::uintmax_t>(s.voxel_count) * 4;
        if (size != expected)
          throw DatasetError("byte-length mismatch for " + (root_ / file).string() + ": " + std::to_string(size) +
                             " bytes, expected " + std::to_string(expected));
      }
    }
    for (size_t i = 0; i < m.stimuli.size(); ++i) feature_index_[m.stimuli[i].id] = i;
    features_ = read_f32(root_ / m.features_file, m.stimuli.size(), m.feature_dim);

    std::ifstream in(root_ / m.captions_file);
    if (!in) throw DatasetError("missing captions file");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const auto j = json::parse(line);
        CaptionSet c{j.at("stimulus_id"), j.at("captions").get<std::vector<std::string>>()};
        if (c.captions.empty()) throw DatasetError("empty caption set for " + c.stimulus_id);
        captions_[c.stimulus_id] = std::move(c);
      } catch (const json::exception& e) {
        throw DatasetError(std::string("captions file schema mismatch: ") + e.what());
      }
    }
    for (const auto& s : m.subjects)
      for (const auto* ids : {&s.train, &s.test})
        for (const auto& id : *ids) {
          if (!captions_.count(id)) throw DatasetError("missing caption for stimulus " + id);
          if (!feature_index_.count(id)) throw DatasetError("no image features for stimulus " + id);
        }
  }

  fs::path root_;
  DatasetManifest manifest_;
  std::map<std::string, CaptionSet> captions_;
  std::map<std::string, size_t> feature_index_;
  std::vector<Vec> features_;
};

}  // namespace mindcap::data
