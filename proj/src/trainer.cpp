#include "polysed/trainer.h"

#include "polysed/errors.h"
#include "polysed/rng.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace polysed {

bool EarlyStopping::update(double value) {
    ++epochs_;
    if (value < best_) {
        best_ = value;
        best_epoch_ = epochs_;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

std::vector<TrainingWindow> make_training_windows(const Tfr& tfr, const EventRoll& truth) {
    if (truth.frames() != tfr.num_frames()) {
        throw DataError("training windows: TFR has " + std::to_string(tfr.num_frames()) +
                        " frames, truth has " + std::to_string(truth.frames()));
    }
    const std::size_t events = truth.events();
    std::vector<TrainingWindow> out;
    for (TfrWindow& w : window_tfr(tfr)) {
        TrainingWindow tw;
        tw.target = Tensor({kWindowFrames, events});
        for (std::size_t t = 0; t < w.valid_frames; ++t) {
            for (std::size_t e = 0; e < events; ++e) {
                tw.target[t * events + e] = truth.active(w.start_frame + t, e) ? 1.0 : 0.0;
            }
        }
        tw.mask = w.mask();
        tw.values = std::move(w.values);
        out.push_back(std::move(tw));
    }
    return out;
}

Tensor predict_clip(const CapsNetModel& model, std::span<const TfrWindow> windows,
                    std::size_t total_frames) {
    const std::size_t events = model.config().n_events;
    Tensor out({total_frames, events});
    for (const TfrWindow& w : windows) {
        if (w.start_frame + w.valid_frames > total_frames) {
            throw ShapeError("predict_clip: window runs past the clip end");
        }
        const Tensor activity = model.predict(w.values);
        std::copy_n(activity.data(), w.valid_frames * events, out.data() + w.start_frame * events);
    }
    return out;
}

namespace {

void check_window(const CapsNetModel& model, const TrainingWindow& w) {
    const Shape in{kWindowFrames, model.num_bins(), model.channels()};
    const Shape out{kWindowFrames, model.config().n_events};
    if (w.values.shape() != in || w.target.shape() != out || w.mask.size() != kWindowFrames) {
        throw ShapeError("train: window " + to_string(w.values.shape()) + " / target " +
                         to_string(w.target.shape()) + " does not fit model input " +
                         to_string(in) + " / output " + to_string(out));
    }
}

EpochRecord validate_epoch(const CapsNetModel& model, std::span<const ValidationClip> clips,
                           const TrainOptions& options) {
    EpochRecord rec;
    if (clips.empty()) {
        return rec;
    }
    SegmentTally total;
    for (const ValidationClip& clip : clips) {
        const Tensor activity = predict_clip(model, clip.windows, clip.truth.frames());
        EventRoll est(clip.truth.frames(), clip.truth.events(), clip.truth.hop(), clip.truth.labels());
        for (std::size_t i = 0; i < activity.size(); ++i) {
            est.set(i / clip.truth.events(), i % clip.truth.events(), activity[i] >= options.threshold);
        }
        total += segment_counts(clip.truth, est, options.segment_sec).totals();
    }
    if (total.reference > 0) {
        rec.validation_er = error_rate(total);
    }
    return rec;
}

}  // namespace

TrainHistory train_model(CapsNetModel& model, std::span<const TrainingWindow> train,
                         std::span<const ValidationClip> validation, const TrainOptions& options) {
    if (train.empty()) {
        throw DataError("train: no training windows");
    }
    if (options.batch_size == 0) {
        throw ConfigError("train: batch size must be positive");
    }
    for (const TrainingWindow& w : train) {
        check_window(model, w);
    }

    const SeededRng root(options.seed);
    SeededRng shuffle_rng = root.fork("shuffle");
    SeededRng dropout_rng = root.fork("dropout");
    AdaDeltaState optimizer(options.optimizer);
    EarlyStopping stopper(options.patience);
    ParameterMap best_params = model.parameters();
    TrainHistory history;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(start + options.batch_size, order.size());
            const std::string where =
                "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1);
            std::map<std::string, Tensor> grads;
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const TrainingWindow& w = train[order[i]];
                Tape tape;
                ForwardPass pass;
                Var loss;
                Gradients g;
                try {
                    pass = model.forward(tape, w.values, true, &dropout_rng);
                    loss = detection_loss(pass.activity, w.target, w.mask,
                                          model.config().l2_weight, pass.parameters);
                    g = tape.backward(loss);
                } catch (const NumericError& e) {
                    throw NumericError("train: non-finite value at " + where + ": " + e.what());
                }
                batch_loss += loss.value().item();
                for (auto& [name, grad] : g.by_name) {
                    auto it = grads.find(name);
                    if (it == grads.end()) {
                        grads.emplace(name, std::move(grad));
                    } else {
                        for (std::size_t k = 0; k < grad.size(); ++k) {
                            it->second[k] += grad[k];
                        }
                    }
                }
            }
            const double count = static_cast<double>(end - start);
            for (auto& [name, grad] : grads) {
                for (double& v : grad.values()) {
                    v /= count;
                }
            }
            batch_loss /= count;
            if (!std::isfinite(batch_loss)) {
                throw NumericError("train: loss is not finite at " + where);
            }
            try {
                adadelta_step(model.parameters(), grads, optimizer);
            } catch (const NumericError& e) {
                throw NumericError("train: " + std::string(e.what()) + " at " + where);
            }
            loss_sum += batch_loss;
            ++batches;
        }

        EpochRecord rec = validate_epoch(model, validation, options);
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        rec.monitored = std::isnan(rec.validation_er) ? rec.train_loss : rec.validation_er;
        if (stopper.update(rec.monitored)) {
            best_params = model.parameters();
        }
        history.epochs.push_back(rec);
        if (options.on_epoch) {
            options.on_epoch(rec);
        }
        if (stopper.should_stop()) {
            history.stopped_early = epoch < options.epochs;
            break;
        }
    }

    history.best_epoch = stopper.best_epoch();
    history.best_value = stopper.best();
    model.parameters() = std::move(best_params);
    return history;
}

}  // namespace polysed
