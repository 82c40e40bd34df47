#pragma once

// Experiments layered on a finished pipeline run: the fMRI noise sweep, the
// component ablation table and the reconstruction condition table, plus the
// report renderer over one or more run records.

#include "mindcap/harness/pipeline.hpp"
#include "mindcap/harness/plot.hpp"

namespace mindcap::harness {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Fixed-width text table: first column left aligned, the rest right aligned.
inline std::string render_table(const std::string& title, const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> width(header.size(), 0);
  for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (size_t c = 0; c < cells.size(); ++c) {
      const std::string pad(width[c] - cells[c].size(), ' ');
      out += c == 0 ? cells[c] + pad : "  " + pad + cells[c];
    }
    return out + "\n";
  };
  size_t total = 0;
  for (size_t w : width) total += w + 2;
  std::string out = title + "\n" + line(header) + std::string(total - 2, '-') + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

// ------------------------------------------------------------ noise sweep

struct NoiseSweepRow {
  double coeff = 0.0;
  std::string metric;
  double value = 0.0;
};

inline std::string noise_sweep_csv(const std::vector<NoiseSweepRow>& rows) {
  std::string out = "coeff,metric,value\n";
  for (const auto& r : rows) out += format_double(r.coeff) + "," + r.metric + "," + format_double(r.value) + "\n";
  return out;
}

inline std::vector<NoiseSweepRow> read_noise_sweep_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "coeff,metric,value") throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<NoiseSweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw std::runtime_error(path.string() + ": malformed row " + line);
    rows.push_back({std::stod(line.substr(0, a)), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
  }
  return rows;
}

// Captions the test split with Gaussian noise of std coeff * mean|signal|
// added to each raw averaged test sample; coefficient 0 is the clean path.
inline metrics::MetricReport noisy_evaluation(Pipeline& p, const blm::BrainLanguageModel& model, double coeff) {
  const auto& cfg = p.config();
  std::function<data::FmriSample(const data::FmriSample&)> transform;
  const std::uint64_t base = derive_seed(cfg.stage_seed("noise"), format_double(coeff));
  if (coeff > 0.0)
    transform = [coeff, base](const data::FmriSample& raw) {
      return data::inject_noise(raw, coeff, derive_seed(base, raw.stimulus_id));
    };
  const auto ps = coeff > 0.0 ? data::prepare_subject(p.dataset(), cfg.blm_subject, cfg.bed.patch_size, transform)
                              : p.prepared(cfg.blm_subject);
  return p.evaluate(p.caption_with(model, ps));
}

inline void noise_sweep(Pipeline& p) {
  const auto& cfg = p.config();
  const json params = {{"coefficients", cfg.metrics.noise_coefficients},
                       {"seed", cfg.stage_seed("noise")},
                       {"permutations", cfg.metrics.permutations}};
  auto& ws = p.workspace();
  ws.stage("noise_sweep", params, {"data", "vlp.ckpt", "blm.ckpt"}, {"noise_sweep.csv", "noise_sweep.png"}, [&] {
    const auto model = p.load_blm("blm.ckpt");
    std::vector<double> coeffs{0.0};
    coeffs.insert(coeffs.end(), cfg.metrics.noise_coefficients.begin(), cfg.metrics.noise_coefficients.end());
    std::vector<NoiseSweepRow> rows;
    std::map<std::string, Series> series;
    for (double c : coeffs) {
      log::info("noise sweep: coefficient ", c);
      const auto rep = noisy_evaluation(p, model, c);
      for (const auto& m : metrics::text_metric_names()) {
        rows.push_back({c, m, rep.values.at(m)});
        auto& s = series[m];
        s.name = m;
        s.x.push_back(c);
        s.y.push_back(rep.values.at(m));
      }
    }
    write_text_file(ws.path("noise_sweep.csv"), noise_sweep_csv(rows));
    std::vector<Series> ordered;
    for (const auto& m : metrics::text_metric_names()) ordered.push_back(series.at(m));
    line_chart(ws.path("noise_sweep.png"), "caption metrics under fmri noise", "noise coefficient", ordered);
  });
}

// --------------------------------------------------------------- ablation

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "wo_ssbed", "wo_bt_former", "wo_lopt", "m1", "m3"};
  return v;
}

inline BlmVariant blm_variant(const std::string& name) {
  if (name == "full") return {name, true, "lm", 0};
  if (name == "wo_ssbed") return {name, false, "lm", 0};
  if (name == "wo_lopt") return {name, true, "feature_mse", 0};
  if (name == "m1") return {name, true, "lm", 1};
  if (name == "m3") return {name, true, "lm", 3};
  throw std::invalid_argument("unknown ablation variant '" + name + "'");
}

// Linear baseline: ridge from aligned fMRI to the flattened LM-prefix
// queries that the frozen stack produces for each training stimulus, then
// decoding through the frozen LM.
inline std::vector<CaptionRecord> linear_prefix_captions(Pipeline& p) {
  const auto& ds = p.dataset();
  const auto& st = p.stack();
  const auto& ps = p.prepared(p.config().blm_subject);
  const int k = st.query_count(), d = st.lm_dim();
  const int v_align = ds.manifest().v_align;
  recon::MatD x(static_cast<Eigen::Index>(ps.train.size()), v_align);
  recon::MatD z(static_cast<Eigen::Index>(ps.train.size()), static_cast<Eigen::Index>(k) * d);
  std::map<std::string, Eigen::RowVectorXd> target;
  std::vector<int> groups;
  std::map<std::string, int> gid;
  ag::NoGradGuard ng;
  for (size_t i = 0; i < ps.train.size(); ++i) {
    const auto& id = ps.train[i].stimulus_id;
    if (!target.count(id)) {
      const blm::Mat f = ds.features(id).transpose();
      const blm::Mat q = st.image_queries(f).value();
      Eigen::RowVectorXd flat(q.size());
      for (int r = 0; r < k; ++r) flat.segment(static_cast<Eigen::Index>(r) * d, d) = q.row(r);
      target[id] = flat;
    }
    x.row(static_cast<Eigen::Index>(i)) = data::unpatchify(ps.train[i].patches).transpose();
    z.row(static_cast<Eigen::Index>(i)) = target[id];
    groups.push_back(gid.emplace(id, static_cast<int>(gid.size())).first->second);
  }
  const auto sel = recon::fit_ridge_cv(x, z, groups);
  recon::MatD xt(static_cast<Eigen::Index>(ps.test.size()), v_align);
  for (size_t i = 0; i < ps.test.size(); ++i)
    xt.row(static_cast<Eigen::Index>(i)) = data::unpatchify(ps.test[i].patches).transpose();
  const recon::MatD pred = sel.map.predict(xt);
  blm::Mat q(static_cast<Eigen::Index>(ps.test.size()) * k, d);
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    for (int r = 0; r < k; ++r) q.row(i * k + r) = pred.row(i).segment(static_cast<Eigen::Index>(r) * d, d);
  const auto dp = Pipeline::default_decode(st);
  std::vector<CaptionRecord> out;
  const auto decoded = blm::decode(st.lm(), &q, k, static_cast<int>(ps.test.size()), dp);
  for (size_t i = 0; i < decoded.size(); ++i) out.push_back({ps.test[i].stimulus_id, st.vocab().detokenize(decoded[i].words)});
  return out;
}

inline std::string variant_dir(const std::string& name) { return "ablate/" + name; }

// Runs (or reuses) one variant and returns its caption report path.
inline std::string run_variant(Pipeline& p, const std::string& name) {
  if (name == "full") return "report.json";
  auto& ws = p.workspace();
  const std::string dir = variant_dir(name);
  if (name == "wo_bt_former") {
    ws.stage(dir + "/fit", {{"subject", p.config().blm_subject}, {"variant", name}}, {"data", "vlp.ckpt"},
             {dir + "/captions.jsonl"}, [&] {
               write_captions(ws.path(dir + "/captions.jsonl"), linear_prefix_captions(p),
                              Pipeline::default_decode(p.stack()));
             });
  } else {
    p.train_blm_variant(blm_variant(name), dir + "/blm.ckpt", dir + "/train");
    p.caption(dir + "/blm.ckpt", dir + "/captions.jsonl", dir + "/caption");
  }
  p.eval(dir + "/captions.jsonl", dir + "/report.json", dir + "/eval");
  return dir + "/report.json";
}

struct AblationTable {
  std::vector<std::string> variants;
  std::vector<std::map<std::string, double>> values;

  json to_json() const {
    json rows = json::array();
    for (size_t i = 0; i < variants.size(); ++i) rows.push_back({{"variant", variants[i]}, {"metrics", values[i]}});
    return {{"schema_version", 1}, {"columns", metrics::text_metric_names()}, {"rows", rows}};
  }

  std::string to_text() const {
    std::vector<std::string> header{"variant"};
    for (const auto& m : metrics::text_metric_names()) header.push_back(m);
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < variants.size(); ++i) {
      std::vector<std::string> r{variants[i]};
      for (const auto& m : metrics::text_metric_names()) r.push_back(format_fixed(values[i].at(m)));
      rows.push_back(r);
    }
    return render_table("captioning ablation (test split)", header, rows);
  }

  const std::map<std::string, double>& row(const std::string& variant) const {
    for (size_t i = 0; i < variants.size(); ++i)
      if (variants[i] == variant) return values[i];
    throw std::out_of_range("no ablation row '" + variant + "'");
  }
};

inline const std::vector<std::string>& recon_conditions() {
  static const std::vector<std::string> c{"sketch", "diffusion", "caption", "caption_shuffled", "caption_gt"};
  return c;
}

inline std::string recon_table_text(const metrics::MetricReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : recon_conditions())
    rows.push_back({c, format_fixed(r.values.at(c + "_two_way"), 2), format_fixed(r.values.at(c + "_pixcorr")),
                    format_fixed(r.values.at(c + "_ssim"))});
  return render_table("reconstruction conditions (test split)", {"condition", "two_way", "pixcorr", "ssim"}, rows);
}

inline json recon_table_json(const metrics::MetricReport& r) {
  json rows = json::array();
  for (const auto& c : recon_conditions())
    rows.push_back({{"condition", c},
                    {"two_way", r.values.at(c + "_two_way")},
                    {"pixcorr", r.values.at(c + "_pixcorr")},
                    {"ssim", r.values.at(c + "_ssim")}});
  return {{"schema_version", 1}, {"rows", rows}};
}

// Writes ablate/caption_ablation.{json,txt} and, when a reconstruction report
// exists, ablate/recon_conditions.{json,txt}.
inline AblationTable ablate(Pipeline& p, const std::vector<std::string>& variants) {
  for (const auto& v : variants)
    if (std::find(ablation_variants().begin(), ablation_variants().end(), v) == ablation_variants().end())
      throw std::invalid_argument("unknown ablation variant '" + v + "'");
  auto& ws = p.workspace();
  AblationTable t;
  for (const auto& v : variants) {
    const auto rep = metrics::MetricReport::from_json(read_json_file(ws.path(run_variant(p, v))));
    std::map<std::string, double> row;
    for (const auto& m : metrics::text_metric_names()) row[m] = rep.values.at(m);
    t.variants.push_back(v);
    t.values.push_back(row);
  }
  write_text_file(ws.path("ablate/caption_ablation.json"), t.to_json().dump(2) + "\n");
  write_text_file(ws.path("ablate/caption_ablation.txt"), t.to_text());
  if (fs::exists(ws.path("recon/recon_report.json"))) {
    const auto r = metrics::MetricReport::from_json(read_json_file(ws.path("recon/recon_report.json")));
    write_text_file(ws.path("ablate/recon_conditions.json"), recon_table_json(r).dump(2) + "\n");
    write_text_file(ws.path("ablate/recon_conditions.txt"), recon_table_text(r));
  }
  return t;
}

// ----------------------------------------------------------------- report

// Renders report.txt, report.json and report.png for one or more runs.
// Timings are left out so equal runs render identical bytes.
inline void render_report(const std::vector<RunRecord>& runs, const fs::path& out_dir) {
  if (runs.empty()) throw std::invalid_argument("report: at least one run record required");
  fs::create_directories(out_dir);
  json jr = json::array();
  for (const auto& r : runs) {
    json reports = json::object();
    for (const auto& [k, m] : r.reports) reports[k] = m.to_json();
    jr.push_back({{"config_hash", r.config_hash},
                  {"profile", r.profile},
                  {"seed", r.seed},
                  {"deterministic", r.deterministic},
                  {"reports", reports}});
  }
  write_text_file(out_dir / "report.json", json{{"schema_version", 1}, {"runs", jr}}.dump(2) + "\n");

  std::set<std::string> names;
  for (const auto& r : runs)
    if (r.reports.count("captions"))
      for (const auto& [k, v] : r.reports.at("captions").values) names.insert(k);
  std::vector<std::string> header{"metric"};
  for (size_t i = 0; i < runs.size(); ++i)
    header.push_back("run" + std::to_string(i + 1) + " " + runs[i].config_hash.substr(0, 8));
  std::vector<std::vector<std::string>> rows;
  for (const auto& n : names) {
    std::vector<std::string> row{n};
    for (const auto& r : runs) {
      const auto it = r.reports.find("captions");
      row.push_back(it != r.reports.end() && it->second.values.count(n) ? format_fixed(it->second.values.at(n)) : "-");
    }
    rows.push_back(row);
  }
  std::string text = render_table("caption metrics (test split)", header, rows);
  for (size_t i = 0; i < runs.size(); ++i)
    if (runs[i].reports.count("recon")) text += "\nrun" + std::to_string(i + 1) + " " + recon_table_text(runs[i].reports.at("recon"));
  write_text_file(out_dir / "report.txt", text);

  std::vector<std::string> groups;
  std::vector<std::vector<double>> values;
  for (size_t i = 0; i < runs.size(); ++i) {
    groups.push_back("run" + std::to_string(i + 1));
    std::vector<double> v;
    for (const auto& m : metrics::text_metric_names()) {
      const auto it = runs[i].reports.find("captions");
      v.push_back(it != runs[i].reports.end() && it->second.values.count(m) ? it->second.values.at(m) : 0.0);
    }
    values.push_back(v);
  }
  bar_chart(out_dir / "report.png", "caption metrics", metrics::text_metric_names(), groups, values);
}

}  // namespace mindcap::harness
