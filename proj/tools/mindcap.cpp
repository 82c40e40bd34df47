// mindcap: command-line front end for the desk pipeline.

#include "mindcap/harness/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace mindcap;
using namespace mindcap::harness;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = true;
  std::string out = "runs/desk";
  std::string log_level = "info";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config (profile defaults are used for missing keys)");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "global seed");
  app->add_flag("--deterministic,!--no-deterministic", c.deterministic, "deterministic mode (default on)");
  app->add_option("--out", c.out, "run directory");
  app->add_option("--log-level", c.log_level, "info|warn|quiet");
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::desk() : ExperimentConfig::load(c.config);
  if (c.seed_set) cfg.apply_seed(c.seed);
  cfg.validate();
  return cfg;
}

void set_log_level(const std::string& s) {
  if (s == "info") log::set_level(log::Level::info);
  else if (s == "warn") log::set_level(log::Level::warn);
  else if (s == "quiet") log::set_level(log::Level::quiet);
  else throw ConfigError("unknown log level " + s);
}

RunRecord run_until(const Common& c, const std::string& stage) {
  return run_pipeline(c.out, load_config(c), {c.deterministic, stage});
}

// Captions one test stimulus id, or one raw float32 fMRI vector for the
// captioning subject, and prints a JSON line.
void caption_one(const Common& c, const std::string& fmri) {
  run_until(c, "train_blm");
  Workspace ws(c.out, load_config(c), c.deterministic);
  Pipeline p(ws);
  const auto& cfg = p.config();
  const auto model = p.load_blm("blm.ckpt");
  const auto& ps = p.prepared(cfg.blm_subject);
  data::PatchSequence patches;
  std::string id = fmri;
  if (fs::is_regular_file(fmri)) {
    const int voxels = p.dataset().manifest().subject(cfg.blm_subject).voxel_count;
    const auto rows = data::read_f32(fmri, 1, voxels);
    data::FmriSample s{cfg.blm_subject, fs::path(fmri).stem().string(), data::kAveragedRepetition, rows.front()};
    patches = data::align_and_patchify(ps.stats.apply(s), p.dataset().manifest().v_align, cfg.bed.patch_size);
    id = s.stimulus_id;
  } else {
    auto it = std::find_if(ps.test.begin(), ps.test.end(), [&](const data::PreparedItem& t) { return t.stimulus_id == fmri; });
    if (it == ps.test.end()) throw std::invalid_argument("--fmri: '" + fmri + "' is neither a file nor a test stimulus id");
    patches = it->patches;
  }
  const auto caps = model.caption({&patches.patches}, model.decode_params());
  std::cout << json{{"stimulus_id", id}, {"caption", caps.front()}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mindcap: fMRI-to-caption desk pipeline"};
  app.require_subcommand(1);
  Common c;

  struct StageVerb {
    const char* verb;
    const char* stage;
    const char* help;
  };
  const std::vector<StageVerb> stage_verbs{
      {"make-synth", "make_synth", "generate the synthetic dataset"},
      {"pretrain-lm", "pretrain_lm", "pretrain the causal language model"},
      {"pretrain-vlp", "pretrain_vlp", "pretrain the vision-language stack"},
      {"pretrain", "pretrain_bed", "masked-autoencoder pretraining of the brain encoder"},
      {"train", "train_blm", "train the brain-language model"},
      {"eval", "eval", "evaluate captions on the test split"},
      {"run", "", "run every stage"}};
  std::map<CLI::App*, std::string> stage_of;
  for (const auto& v : stage_verbs) {
    auto* sub = app.add_subcommand(v.verb, v.help);
    add_common(sub, c);
    stage_of[sub] = v.stage;
  }

  auto* caption = app.add_subcommand("caption", "caption the test split, or one stimulus with --fmri");
  add_common(caption, c);
  std::string fmri;
  caption->add_option("--fmri", fmri, "test stimulus id or raw float32 fMRI file");

  auto* recon = app.add_subcommand("recon", "reconstruct test images");
  add_common(recon, c);
  std::string split = "test", recon_out;
  std::optional<double> strength;
  std::optional<int> steps;
  recon->add_option("--split", split, "split to reconstruct")->check(CLI::IsMember({"test"}));
  recon->add_option("--strength", strength, "diffusion strength in [0, 1]");
  recon->add_option("--steps", steps, "diffusion steps (must match the trained schedule)");
  recon->add_option("--recon-out", recon_out, "output directory (default <out>/recon)");

  auto* sweep = app.add_subcommand("noise-sweep", "caption metrics under injected fMRI noise");
  add_common(sweep, c);

  auto* ablate_cmd = app.add_subcommand("ablate", "component ablation table");
  add_common(ablate_cmd, c);
  std::vector<std::string> variants = ablation_variants();
  ablate_cmd->add_option("--variants", variants, "variants to run")->delimiter(',');

  auto* report = app.add_subcommand("report", "render tables and plots from run records");
  std::vector<std::string> runs;
  report->add_option("--runs", runs, "run directories")->required();
  add_common(report, c);

  CLI11_PARSE(app, argc, argv);

  try {
    set_log_level(c.log_level);
    auto* sub = app.get_subcommands().front();
    if (auto it = stage_of.find(sub); it != stage_of.end()) {
      const auto rec = run_until(c, it->second);
      std::cout << "run directory " << c.out << ": " << rec.executed_count() << " of " << rec.stages.size()
                << " stages executed\n";
      if (rec.reports.count("captions"))
        for (const auto& m : metrics::text_metric_names())
          std::cout << "  " << m << " " << format_fixed(rec.reports.at("captions").values.at(m)) << "\n";
    } else if (sub == caption) {
      if (fmri.empty()) run_until(c, "caption");
      else caption_one(c, fmri);
    } else if (sub == recon) {
      auto cfg = load_config(c);
      cfg.recon.enabled = true;
      if (steps && *steps != cfg.recon.diffusion_steps)
        throw ConfigError("--steps " + std::to_string(*steps) + " differs from the trained schedule (" +
                          std::to_string(cfg.recon.diffusion_steps) + " steps)");
      if (!strength && recon_out.empty()) {
        const auto rec = run_pipeline(c.out, cfg, {c.deterministic, "reconstruct"});
        std::cout << "wrote " << (fs::path(c.out) / "recon").string() << "\n" << recon_table_text(rec.reports.at("recon"));
      } else {
        // settings other than the configured ones go to their own directory
        // so the reconstruct stage outputs stay untouched
        run_pipeline(c.out, cfg, {c.deterministic, "train_denoiser"});
        Workspace ws(c.out, cfg, c.deterministic);
        Pipeline p(ws);
        ReconRequest req;
        req.params = p.recon_params();
        if (strength) req.params.strength = *strength;
        const fs::path dir = !recon_out.empty() ? fs::path(recon_out)
                                                 : ws.path("recon_runs/strength_" + format_fixed(req.params.strength, 2));
        const auto rep = p.run_reconstruction(req, dir);
        std::cout << "wrote " << dir.string() << "\n" << recon_table_text(rep);
      }
    } else if (sub == sweep) {
      const auto cfg = load_config(c);
      run_pipeline(c.out, cfg, {c.deterministic, "eval"});
      Workspace ws(c.out, cfg, c.deterministic);
      Pipeline p(ws);
      noise_sweep(p);
      std::cout << "wrote " << ws.path("noise_sweep.csv").string() << "\n";
    } else if (sub == ablate_cmd) {
      const auto cfg = load_config(c);
      run_pipeline(c.out, cfg, {c.deterministic, ""});
      Workspace ws(c.out, cfg, c.deterministic);
      Pipeline p(ws);
      std::cout << ablate(p, variants).to_text();
      if (fs::exists(ws.path("ablate/recon_conditions.txt"))) std::cout << read_text_file(ws.path("ablate/recon_conditions.txt"));
    } else if (sub == report) {
      std::vector<RunRecord> records;
      for (const auto& r : runs) records.push_back(RunRecord::from_json(read_json_file(fs::path(r) / "run_record.json")));
      const fs::path dir = report->count("--out") ? fs::path(c.out) : fs::path("report");
      render_report(records, dir);
      std::cout << read_text_file(dir / "report.txt");
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
