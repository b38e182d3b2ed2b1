#pragma once

#include "polysed/capsnet.h"
#include "polysed/dsp.h"
#include "polysed/fusion.h"
#include "polysed/trainer.h"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace polysed {

// All binary formats are little-endian and start with a 4-byte magic and a
// u32 version. Readers reject unknown versions, truncation and trailing bytes
// with FormatError.

/// TFR archive "PSTF": u32 kind (0 stft, 1 logmel), u32 F, u32 C, u32 hop_ms,
/// u32 frame_len_ms, u32 n_fft, u32 n_mels, u64 frames, then frames*F*C
/// float32 values in (frame, bin, channel) order.
void save_tfr(const Tfr& tfr, const std::filesystem::path& path);
Tfr load_tfr(const std::filesystem::path& path);

struct Checkpoint {
    CapsNetConfig config;
    std::size_t num_bins = 0;
    std::size_t channels = 0;
    std::vector<std::string> vocabulary;
    std::string tfr;              // TFR name, e.g. "logmel_64"
    std::uint64_t seed = 0;
    TrainHistory history;
    ParameterMap parameters;
};

/// Checkpoint "PSCK": u64 header length, JSON header (config, vocabulary,
/// provenance, history), u32 count, then per parameter: u32 name length,
/// name, u32 rank, u64 dims, float64 values.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct PredictionFile {
    Tensor activity;                  // (frames, N)
    double hop_sec = 0.02;
    std::vector<std::string> labels;  // length N
};

/// Prediction matrix "PSPR": u64 frames, u32 N, f64 hop, N labels (u32
/// length + bytes), then frames*N float32 values, row-major.
void save_predictions(const PredictionFile& pred, const std::filesystem::path& path);
PredictionFile load_predictions(const std::filesystem::path& path);

/// FusionParams as JSON text with shortest round-trip decimals.
std::string format_fusion_params(const FusionParams& params);
FusionParams parse_fusion_params(const std::string& text);
void save_fusion_params(const FusionParams& params, const std::filesystem::path& path);
FusionParams load_fusion_params(const std::filesystem::path& path);

/// Rounds every value to the nearest float32, as a save/load cycle would.
Tensor to_float32_precision(const Tensor& t);

}  // namespace polysed
