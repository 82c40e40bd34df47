#pragma once

// Run directory bookkeeping. Every stage declares its input and output paths
// (relative to the run root); stages.json records, per stage, a key over the
// stage parameters and input digests plus the digest of every output. A stage
// whose key and outputs still match is skipped; a recorded output whose bytes
// changed is reported as corruption of that stage's artifact.

#include "mindcap/core/digest.hpp"
#include "mindcap/core/log.hpp"
#include "mindcap/harness/config.hpp"
#include "mindcap/metrics/report.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mindcap::harness {

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// File digest, or for a directory the digest of its sorted (relative path,
// file digest) listing.
inline std::string path_digest(const fs::path& p) {
  if (fs::is_regular_file(p)) return file_digest(p);
  if (!fs::is_directory(p)) throw std::runtime_error("no artifact at " + p.string());
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) entries.emplace_back(fs::relative(e.path(), p).generic_string(), file_digest(e.path()));
  std::sort(entries.begin(), entries.end());
  Sha256 h;
  for (const auto& [name, d] : entries) h.update(name + "\n" + d + "\n");
  return h.hex();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

struct StageRecord {
  std::string name;
  bool executed = false;
  double seconds = 0.0;
  std::map<std::string, std::string> consumed, produced;

  json to_json() const {
    return {{"name", name}, {"executed", executed}, {"seconds", seconds}, {"consumed", consumed}, {"produced", produced}};
  }
  static StageRecord from_json(const json& j) {
    return {j.at("name"), j.at("executed"), j.at("seconds"),
            j.at("consumed").get<std::map<std::string, std::string>>(),
            j.at("produced").get<std::map<std::string, std::string>>()};
  }
};

class StageLedger {
 public:
  struct Entry {
    std::string key;
    std::map<std::string, std::string> outputs;
  };

  explicit StageLedger(fs::path file) : file_(std::move(file)) {
    if (!fs::exists(file_)) return;
    const json j = read_json_file(file_);
    for (const auto& [name, e] : j.at("stages").items())
      entries_[name] = {e.at("key"), e.at("outputs").get<std::map<std::string, std::string>>()};
  }

  const Entry* find(const std::string& stage) const {
    auto it = entries_.find(stage);
    return it == entries_.end() ? nullptr : &it->second;
  }

  // The stage that recorded `output`, with its digest.
  std::optional<std::pair<std::string, std::string>> producer(const std::string& output) const {
    for (const auto& [name, e] : entries_) {
      auto it = e.outputs.find(output);
      if (it != e.outputs.end()) return std::pair{name, it->second};
    }
    return std::nullopt;
  }

  void put(const std::string& stage, Entry e) {
    entries_[stage] = std::move(e);
    json j = {{"schema_version", 1}, {"stages", json::object()}};
    for (const auto& [name, en] : entries_) j["stages"][name] = {{"key", en.key}, {"outputs", en.outputs}};
    write_text_file(file_, j.dump(2) + "\n");
  }

 private:
  fs::path file_;
  std::map<std::string, Entry> entries_;
};

class Workspace {
 public:
  Workspace(fs::path root, ExperimentConfig cfg, bool deterministic = true)
      : root_(std::move(root)), cfg_(std::move(cfg)), deterministic_(deterministic), ledger_(root_ / "stages.json") {
    fs::create_directories(root_);
  }

  const fs::path& root() const { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  const ExperimentConfig& config() const { return cfg_; }
  bool deterministic() const { return deterministic_; }
  const std::vector<StageRecord>& records() const { return records_; }

  // Runs `body` unless the stage's recorded key and outputs are current.
  const StageRecord& stage(const std::string& name, const json& params, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs, const std::function<void()>& body) {
    StageRecord rec;
    rec.name = name;
    for (const auto& in : inputs) {
      if (!fs::exists(path(in))) throw StageError(name, "missing input '" + in + "'");
      const std::string d = path_digest(path(in));
      if (auto prod = ledger_.producer(in); prod && prod->second != d)
        throw StageError(prod->first, "digest mismatch for '" + in + "' (recorded " + prod->second.substr(0, 12) +
                                          ", found " + d.substr(0, 12) + "); the artifact was modified after it was produced");
      rec.consumed[in] = d;
    }
    const std::string key = sha256_hex(json{{"params", params}, {"inputs", rec.consumed}}.dump());

    if (const auto* e = ledger_.find(name); e && e->key == key) {
      bool present = true;
      for (const auto& out : outputs) present = present && fs::exists(path(out));
      if (present) {
        for (const auto& out : outputs) {
          const std::string d = path_digest(path(out));
          auto it = e->outputs.find(out);
          if (it == e->outputs.end() || it->second != d)
            throw StageError(name, "digest mismatch for '" + out + "'; the artifact was modified after it was produced");
        }
        rec.produced = e->outputs;
        log::info("stage ", name, ": up to date, skipped");
        records_.push_back(std::move(rec));
        return records_.back();
      }
    }

    log::info("stage ", name, ": running");
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& ex) {
      throw StageError(name, ex.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.executed = true;
    for (const auto& out : outputs) {
      if (!fs::exists(path(out))) throw StageError(name, "did not produce '" + out + "'");
      rec.produced[out] = path_digest(path(out));
    }
    ledger_.put(name, {key, rec.produced});
    log::info("stage ", name, ": done in ", rec.seconds, " s");
    records_.push_back(std::move(rec));
    return records_.back();
  }

 private:
  fs::path root_;
  ExperimentConfig cfg_;
  bool deterministic_;
  StageLedger ledger_;
  std::vector<StageRecord> records_;
};

struct RunRecord {
  std::string config_hash;
  std::string profile;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::vector<StageRecord> stages;
  std::map<std::string, metrics::MetricReport> reports;
  double wall_clock_seconds = 0.0;

  json to_json() const {
    json st = json::array(), rep = json::object();
    for (const auto& s : stages) st.push_back(s.to_json());
    for (const auto& [k, r] : reports) rep[k] = r.to_json();
    return {{"schema_version", 1},     {"config_hash", config_hash}, {"profile", profile},
            {"seed", seed},            {"deterministic", deterministic}, {"stages", st},
            {"reports", rep},          {"wall_clock_seconds", wall_clock_seconds}};
  }

  static RunRecord from_json(const json& j) {
    RunRecord r;
    r.config_hash = j.at("config_hash");
    r.profile = j.at("profile");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.deterministic = j.at("deterministic");
    for (const auto& s : j.at("stages")) r.stages.push_back(StageRecord::from_json(s));
    for (const auto& [k, v] : j.at("reports").items()) r.reports[k] = metrics::MetricReport::from_json(v);
    r.wall_clock_seconds = j.at("wall_clock_seconds");
    return r;
  }

  int executed_count() const {
    return static_cast<int>(std::count_if(stages.begin(), stages.end(), [](const StageRecord& s) { return s.executed; }));
  }
};

}  // namespace mindcap::harness
