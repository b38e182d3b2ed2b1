#include "polysed/fusion.h"

#include "polysed/errors.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace polysed {

namespace {

std::vector<double> grid_values(double lo, double hi, double step, const char* what) {
    if (!(step > 0.0) || hi < lo) {
        throw ConfigError(std::string("fusion grid: invalid ") + what + " range");
    }
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        // Snap to 1e-9 so 0.05 * 3 reads back as 0.15.
        values[i] = std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9;
    }
    return values;
}

std::vector<std::size_t> clip_lengths(const PredictionSet& set) {
    if (set.clip_frames.empty()) {
        return {set.truth.frames()};
    }
    return set.clip_frames;
}

}  // namespace

void PredictionSet::validate() const {
    if (predictions.empty()) {
        throw DataError("prediction set: no models");
    }
    const Shape expected{truth.frames(), truth.events()};
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        if (predictions[k].shape() != expected) {
            throw DataError("prediction set: model " + std::to_string(k) + " has shape " +
                            to_string(predictions[k].shape()) + ", truth is " + to_string(expected));
        }
    }
    if (!clip_frames.empty()) {
        std::size_t total = 0;
        for (const auto n : clip_frames) {
            total += n;
        }
        if (total != truth.frames()) {
            throw DataError("prediction set: clip lengths sum to " + std::to_string(total) +
                            ", truth has " + std::to_string(truth.frames()) + " frames");
        }
    }
}

std::vector<double> FusionGrid::bias_values() const {
    return grid_values(bias_min, bias_max, bias_step, "bias");
}

std::vector<double> FusionGrid::eta_values() const {
    return grid_values(eta_min, eta_max, eta_step, "threshold");
}

void FusionParams::validate(std::size_t models, std::size_t events) const {
    if (weights.size() != models || biases.size() != models) {
        throw DataError("fusion params: " + std::to_string(weights.size()) + " weights and " +
                        std::to_string(biases.size()) + " biases for " + std::to_string(models) +
                        " models");
    }
    if (thresholds.size() != events) {
        throw DataError("fusion params: " + std::to_string(thresholds.size()) +
                        " thresholds for " + std::to_string(events) + " events");
    }
    for (const double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw DataError("fusion params: weights must be positive and finite");
        }
    }
    for (const double b : biases) {
        if (!(b >= -1.0 && b <= 1.0)) {
            throw DataError("fusion params: biases must lie in [-1, 1]");
        }
    }
    for (const double eta : thresholds) {
        if (!(eta >= 0.0 && eta <= 1.0)) {
            throw DataError("fusion params: thresholds must lie in [0, 1]");
        }
    }
    if (block_len == 0) {
        throw DataError("fusion params: block length must be positive");
    }
}

std::vector<double> mse_weights(const PredictionSet& set) {
    set.validate();
    std::vector<double> weights;
    const std::size_t n = set.truth.frames() * set.truth.events();
    for (const Tensor& pred : set.predictions) {
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pred[i] - static_cast<double>(set.truth.cells()[i]);
            sq += d * d;
        }
        const double mse = n > 0 ? sq / static_cast<double>(n) : 0.0;
        weights.push_back(1.0 / std::max(mse, 1e-12));
    }
    return weights;
}

Tensor fuse(std::span<const Tensor> predictions, const FusionParams& params) {
    if (predictions.empty()) {
        throw DataError("fuse: no predictions");
    }
    const Shape& shape = predictions[0].shape();
    if (params.weights.size() != predictions.size() || params.biases.size() != predictions.size()) {
        throw DataError("fuse: parameters are for " + std::to_string(params.weights.size()) +
                        " models, got " + std::to_string(predictions.size()));
    }
    double total_weight = 0.0;
    for (const double w : params.weights) {
        if (!(w > 0.0)) {
            throw DataError("fuse: weights must be positive");
        }
        total_weight += w;
    }
    for (const Tensor& p : predictions) {
        if (p.shape() != shape) {
            throw DataError("fuse: prediction shapes differ");
        }
    }
    // Normalized up front so a single model passes through unchanged.
    std::vector<double> share(params.weights.size());
    for (std::size_t k = 0; k < share.size(); ++k) {
        share[k] = params.weights[k] / total_weight;
    }
    Tensor out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < predictions.size(); ++k) {
            acc += share[k] * (predictions[k][i] - params.biases[k]);
        }
        out[i] = std::clamp(acc, 0.0, 1.0);
    }
    return out;
}

EventRoll threshold(const Tensor& fused, std::span<const double> eta, double hop_sec,
                    std::vector<std::string> labels) {
    if (fused.rank() != 2 || fused.dim(1) != eta.size()) {
        throw DataError("threshold: expected (T," + std::to_string(eta.size()) +
                        ") activity, got " + to_string(fused.shape()));
    }
    const std::size_t frames = fused.dim(0);
    const std::size_t events = fused.dim(1);
    EventRoll roll(frames, events, hop_sec, std::move(labels));
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t e = 0; e < events; ++e) {
            roll.set(t, e, fused[t * events + e] >= eta[e]);
        }
    }
    return roll;
}

namespace {

/// Segment layout of a PredictionSet for block-wise scoring, built once per fit.
struct BlockLayout {
    std::vector<std::size_t> segment_of;  // per frame
    std::size_t segments = 0;
    std::vector<std::uint8_t> ref_active; // segments x events

    BlockLayout(const PredictionSet& set, std::size_t block_len, double segment_sec) {
        const std::size_t per = frames_per_segment(set.truth.hop(), segment_sec);
        const std::size_t events = set.truth.events();
        segment_of.resize(set.truth.frames());
        std::size_t frame = 0;
        for (const std::size_t len : clip_lengths(set)) {
            for (std::size_t block = 0; block < len; block += block_len) {
                const std::size_t end = std::min(block + block_len, len);
                for (std::size_t t = block; t < end; ++t) {
                    segment_of[frame + t] = segments + (t - block) / per;
                }
                segments += (end - block + per - 1) / per;
            }
            frame += len;
        }
        ref_active.assign(segments * events, 0);
        for (std::size_t t = 0; t < set.truth.frames(); ++t) {
            for (std::size_t e = 0; e < events; ++e) {
                if (set.truth.active(t, e)) {
                    ref_active[segment_of[t] * events + e] = 1;
                }
            }
        }
    }

    SegmentTally count(const PredictionSet& set, const FusionParams& params) const {
        const std::size_t events = set.truth.events();
        const std::size_t models = set.models();
        double total_weight = 0.0;
        for (const double w : params.weights) {
            total_weight += w;
        }
        std::vector<double> share(models);
        for (std::size_t k = 0; k < models; ++k) {
            share[k] = params.weights[k] / total_weight;
        }
        std::vector<std::uint8_t> est(segments * events, 0);
        for (std::size_t t = 0; t < set.truth.frames(); ++t) {
            const std::size_t s = segment_of[t];
            for (std::size_t e = 0; e < events; ++e) {
                std::uint8_t& cell = est[s * events + e];
                if (cell) {
                    continue;
                }
                const std::size_t i = t * events + e;
                double acc = 0.0;
                for (std::size_t k = 0; k < models; ++k) {
                    acc += share[k] * (set.predictions[k][i] - params.biases[k]);
                }
                cell = std::clamp(acc, 0.0, 1.0) >= params.thresholds[e];
            }
        }
        SegmentTally total;
        for (std::size_t s = 0; s < segments; ++s) {
            long fn = 0;
            long fp = 0;
            long n = 0;
            for (std::size_t e = 0; e < events; ++e) {
                const bool r = ref_active[s * events + e] != 0;
                const bool p = est[s * events + e] != 0;
                n += r;
                fn += r && !p;
                fp += p && !r;
            }
            const long sub = std::min(fn, fp);
            total.substitutions += sub;
            total.deletions += fn - sub;
            total.insertions += fp - sub;
            total.reference += n;
        }
        return total;
    }
};

}  // namespace

SegmentTally block_counts(const PredictionSet& set, const FusionParams& params, double segment_sec) {
    set.validate();
    params.validate(set.models(), set.truth.events());
    return BlockLayout(set, params.block_len, segment_sec).count(set, params);
}

FusionFit fit_fusion(const PredictionSet& set, std::size_t block_len, const FusionGrid& grid) {
    set.validate();
    if (block_len == 0) {
        throw ConfigError("fit_fusion: block length must be positive");
    }
    const std::size_t models = set.models();
    const std::size_t events = set.truth.events();

    FusionFit fit;
    fit.params.weights = mse_weights(set);
    fit.params.biases.assign(models, 0.0);
    fit.params.thresholds.assign(events, 0.5);
    fit.params.block_len = block_len;
    fit.params.grid = grid;

    const BlockLayout layout(set, block_len, 1.0);
    const auto score = [&](const FusionParams& p) {
        const SegmentTally t = layout.count(set, p);
        return t.reference > 0 ? error_rate(t) : 0.0;
    };

    bool any_reference = false;
    for (const auto cell : set.truth.cells()) {
        any_reference = any_reference || cell != 0;
    }
    if (!any_reference) {
        fit.warnings.push_back("fit_fusion: ground truth is silent; returning default biases and thresholds");
        return fit;
    }

    const std::vector<double> bias_grid = grid.bias_values();
    const std::vector<double> eta_grid = grid.eta_values();
    fit.default_er = score(fit.params);
    fit.fitted_er = fit.default_er;

    // One coordinate: try every grid value, keep the first minimizer.
    const auto sweep = [&](double& slot, const std::vector<double>& candidates) {
        const double before = slot;
        double best_er = std::numeric_limits<double>::infinity();
        double best = before;
        for (const double value : candidates) {
            slot = value;
            const double er = score(fit.params);
            fit.final_sweep_ers.push_back(er);
            if (er < best_er) {
                best_er = er;
                best = value;
            }
        }
        slot = best;
        fit.fitted_er = best_er;
        return best != before;
    };

    for (std::size_t round = 1; round <= grid.max_rounds; ++round) {
        fit.rounds = round;
        fit.final_sweep_ers.clear();
        bool changed = false;
        for (std::size_t k = 0; k < models; ++k) {
            changed = sweep(fit.params.biases[k], bias_grid) || changed;
        }
        for (std::size_t e = 0; e < events; ++e) {
            changed = sweep(fit.params.thresholds[e], eta_grid) || changed;
        }
        if (!changed) {
            break;
        }
    }
    return fit;
}

}  // namespace polysed
