#pragma once

#include "polysed/dsp.h"
#include "polysed/metrics.h"
#include "polysed/tensor.h"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace polysed {

/// Frame-level outputs of m models over the same frames, with ground truth.
struct PredictionSet {
    std::vector<Tensor> predictions;      // m matrices (T_total, N) in [0, 1]
    EventRoll truth;                      // (T_total, N)
    std::vector<std::size_t> clip_frames; // lengths of the concatenated clips; empty = one clip

    std::size_t models() const noexcept { return predictions.size(); }
    /// Throws DataError unless all matrices match the truth shape and m >= 1.
    void validate() const;
};

/// Candidate values for the bias and threshold search.
struct FusionGrid {
    double bias_min = -0.2;
    double bias_max = 0.2;
    double bias_step = 0.05;
    double eta_min = 0.05;
    double eta_max = 0.95;
    double eta_step = 0.05;
    std::size_t max_rounds = 10;

    std::vector<double> bias_values() const;
    std::vector<double> eta_values() const;

    friend bool operator==(const FusionGrid&, const FusionGrid&) = default;
};

struct FusionParams {
    std::vector<double> weights;     // w^k > 0, one per model
    std::vector<double> biases;      // b^k in [-1, 1]
    std::vector<double> thresholds;  // eta per event, in [0, 1]
    std::size_t block_len = kWindowFrames;
    FusionGrid grid;

    /// Throws DataError if sizes or ranges are off for m models and n events.
    void validate(std::size_t models, std::size_t events) const;

    friend bool operator==(const FusionParams&, const FusionParams&) = default;
};

/// w^k = 1 / MSE(y_hat^k, y) over all frames and events; an MSE of 0 counts as 1e-12.
std::vector<double> mse_weights(const PredictionSet& set);

/// Weighted mean of bias-corrected predictions, clamped to [0, 1].
Tensor fuse(std::span<const Tensor> predictions, const FusionParams& params);

/// active(t, e) = fused(t, e) >= eta[e].
EventRoll threshold(const Tensor& fused, std::span<const double> eta, double hop_sec,
                    std::vector<std::string> labels = {});

struct FusionFit {
    FusionParams params;
    double fitted_er = 0.0;    // block-wise ER of the returned parameters
    double default_er = 0.0;   // same objective at b = 0, eta = 0.5
    std::size_t rounds = 0;
    std::vector<double> final_sweep_ers;  // every candidate scored in the last round
    std::vector<std::string> warnings;
};

/// Segment counts of threshold(fuse(set, params)) accumulated block by block:
/// each clip is cut into blocks of params.block_len frames and one-second
/// segments restart at every block boundary.
SegmentTally block_counts(const PredictionSet& set, const FusionParams& params,
                          double segment_sec = 1.0);

/// Weights from mse_weights(), then coordinate search over the grid for each
/// b^k and each eta_e minimizing the block-wise ER. Sweeps repeat until no
/// value changes or grid.max_rounds is reached. Ties go to the lowest grid index.
FusionFit fit_fusion(const PredictionSet& set, std::size_t block_len = kWindowFrames,
                     const FusionGrid& grid = {});

}  // namespace polysed
