#pragma once

#include "polysed/capsnet.h"
#include "polysed/dsp.h"
#include "polysed/fusion.h"
#include "polysed/synth.h"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace polysed {

struct TfrSetup {
    std::string name;            // e.g. "logmel_64"
    std::string model = "desk";  // CapsNet preset
    TfrConfig tfr;

    friend bool operator==(const TfrSetup&, const TfrSetup&) = default;
};

struct TrainingSetup {
    std::size_t epochs = 100;
    std::size_t patience = 20;
    std::size_t batch_size = 8;
    double validation_fraction = 0.2;

    friend bool operator==(const TrainingSetup&, const TrainingSetup&) = default;
};

/// Everything needed to rerun an experiment from scratch.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    SynthSpec synth;              // num_clips is the dev split size
    std::size_t eval_clips = 20;
    std::vector<TfrSetup> tfrs;
    TrainingSetup training;
    std::size_t block_len = kWindowFrames;
    FusionGrid grid;
    std::filesystem::path output = "polysed_out";

    std::vector<std::string> vocabulary() const { return synth.vocabulary(); }
    const TfrSetup& tfr(const std::string& name) const;

    /// Three synthetic classes, logmel_64 + logmel_128, desk-sized CapsNets.
    static ExperimentConfig desk_defaults();

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses YAML. Unknown keys and bad values raise ConfigError with the line number.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace polysed
