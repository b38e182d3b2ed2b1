#pragma once

#include "polysed/adadelta.h"
#include "polysed/capsnet.h"
#include "polysed/dsp.h"
#include "polysed/metrics.h"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace polysed {

/// One (256, F, C) input with its (256, N) binary target and frame mask.
struct TrainingWindow {
    Tensor values;
    Tensor target;
    std::vector<double> mask;
};

/// A whole clip used for validation: its windows and frame-level truth.
struct ValidationClip {
    std::vector<TfrWindow> windows;
    EventRoll truth;
};

struct EpochRecord {
    std::size_t epoch = 0;          // 1-based
    double train_loss = 0.0;        // mean batch loss
    double validation_er = std::numeric_limits<double>::quiet_NaN();
    double monitored = 0.0;         // validation ER, or train loss if there is no validation truth
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_value = std::numeric_limits<double>::infinity();
    bool stopped_early = false;
};

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Feeds the next epoch's value; returns true if it is a new best.
    bool update(double value);
    bool should_stop() const noexcept { return since_best_ >= patience_ && epochs_ > 0; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    double best() const noexcept { return best_; }

private:
    std::size_t patience_;
    std::size_t epochs_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t patience = 20;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    AdaDeltaOptions optimizer;
    double threshold = 0.5;
    double segment_sec = 1.0;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Builds training windows from a clip's TFR and (frames, N) truth roll.
std::vector<TrainingWindow> make_training_windows(const Tfr& tfr, const EventRoll& truth);

/// Activity (total_frames, N) for a whole clip, stitched from its windows.
Tensor predict_clip(const CapsNetModel& model, std::span<const TfrWindow> windows,
                    std::size_t total_frames);

/// Mini-batch AdaDelta on the binary cross-entropy loss with early stopping.
/// Gradients are averaged over each batch. On return the model holds the
/// parameters of the best epoch. Throws NumericError naming the epoch and
/// batch if the loss or a gradient stops being finite.
TrainHistory train_model(CapsNetModel& model, std::span<const TrainingWindow> train,
                         std::span<const ValidationClip> validation, const TrainOptions& options);

}  // namespace polysed
