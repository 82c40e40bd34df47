#pragma once

// A seconds-scale configuration for exercising the harness end to end.

#include "mindcap/harness/config.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>

namespace mindcap::testing {

inline nlohmann::json tiny_overrides() {
  return nlohmann::json::parse(R"({
    "data": {"colors": 5, "objects": 8, "contexts": 6, "attr_embed_dim": 16,
             "subjects": [{"id": "subj01", "voxels": 80}, {"id": "subj02", "voxels": 72}],
             "train_stimuli": 48, "test_stimuli": 16, "trials_per_stimulus": 2, "v_align": 96},
    "bed": {"v_align": 96, "patch_size": 8, "token_dim": 16, "decoder_dim": 8, "encoder_depth": 2,
            "decoder_depth": 1, "head_count": 2, "epochs": 2, "warmup_epochs": 1, "batch_size": 8},
    "lm": {"dim": 16, "depth": 1, "heads": 2, "epochs": 2},
    "vlp": {"query_count": 2, "dim": 16, "depth": 1, "heads": 2, "epochs": 2},
    "blm": {"epochs": 1, "warmup_steps": 1, "batch_size": 8},
    "recon": {"latent_dim": 8,
              "denoiser": {"hidden": 16, "depth": 1, "heads": 2, "train_steps": 40, "batch_size": 16,
                           "warmup_steps": 5}},
    "metrics": {"permutations": 20}
  })");
}

inline harness::ExperimentConfig tiny_config() { return harness::ExperimentConfig::from_overrides(tiny_overrides()); }

// Fresh directory under the system temp path, private to this process.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mindcap_test_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mindcap::testing
