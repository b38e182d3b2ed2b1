#include "polysed/cli.h"

#include "polysed/annotation.h"
#include "polysed/archive.h"
#include "polysed/errors.h"
#include "polysed/experiment.h"
#include "polysed/rng.h"
#include "polysed/synth.h"
#include "polysed/trainer.h"
#include "polysed/wav.h"

#include "CLI11.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace polysed::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSplits = {"dev", "eval"};

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::size_t jobs = 1;
    bool verbose = false;
    std::vector<std::string> tfrs;    // empty = all in config
    std::string split;                // empty = subcommand default
};

/// Where each artifact of a run lives under the output directory.
struct Layout {
    fs::path root;

    fs::path data(const std::string& split) const { return root / "data" / split; }
    fs::path vocabulary() const { return root / "data" / "vocabulary.txt"; }
    fs::path features(const std::string& tfr, const std::string& split) const {
        return root / "features" / tfr / split;
    }
    fs::path model(const std::string& tfr) const { return root / "models" / (tfr + ".ckpt"); }
    fs::path predictions(const std::string& tfr, const std::string& split) const {
        return root / "predictions" / tfr / split;
    }
    fs::path fusion_params() const { return root / "fusion" / "params.json"; }
    fs::path fused(const std::string& split) const { return root / "fusion" / split; }
    fs::path report() const { return root / "report.tsv"; }
};

/// Exclusive advisory lock on <out>/.polysed.lock for the lifetime of the object.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) {
        fs::create_directories(dir);
        const fs::path path = dir / ".polysed.lock";
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) {
            throw DataError("cannot open lock file " + path.string());
        }
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw Error("output directory " + dir.string() + " is locked by another polysed process");
        }
    }
    ~DirLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

struct Context {
    ExperimentConfig config;
    Layout layout;
    Options opts;
    std::ostream& out;
    std::ostream& err;
    std::mutex print_mutex;

    std::vector<std::string> vocabulary() const { return config.vocabulary(); }

    std::vector<const TfrSetup*> selected_tfrs() const {
        std::vector<const TfrSetup*> list;
        if (opts.tfrs.empty()) {
            for (const auto& t : config.tfrs) {
                list.push_back(&t);
            }
        } else {
            for (const auto& name : opts.tfrs) {
                list.push_back(&config.tfr(name));
            }
        }
        return list;
    }

    std::vector<std::string> splits(const std::string& fallback_all) const {
        const std::string s = opts.split.empty() ? fallback_all : opts.split;
        if (s == "all") {
            return kSplits;
        }
        if (std::find(kSplits.begin(), kSplits.end(), s) == kSplits.end()) {
            throw ConfigError("unknown split '" + s + "', expected dev, eval or all");
        }
        return {s};
    }

    std::uint64_t stage_seed(const std::string& stage) const {
        return SeededRng::derive_seed(config.seed, stage);
    }

    void log(const std::string& line) {
        if (opts.verbose) {
            const std::lock_guard lock(print_mutex);
            err << line << '\n';
        }
    }
    void print(const std::string& line) {
        const std::lock_guard lock(print_mutex);
        out << line << '\n';
    }
};

/// Clip ids of a split: stems of the files with `extension`, sorted.
std::vector<std::string> list_clips(const fs::path& dir, const std::string& extension) {
    if (!fs::is_directory(dir)) {
        throw DataError("missing directory " + dir.string());
    }
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const fs::path& p = entry.path();
        const std::string name = p.filename().string();
        if (entry.is_regular_file() && name.size() > extension.size() &&
            name.compare(name.size() - extension.size(), extension.size(), extension) == 0) {
            ids.push_back(name.substr(0, name.size() - extension.size()));
        }
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) {
        throw DataError("no " + extension + " files in " + dir.string());
    }
    return ids;
}

EventRoll load_truth(Context& ctx, const std::string& split, const std::string& id, std::size_t frames,
                     double hop) {
    const auto vocab = ctx.vocabulary();
    const Annotation ann = read_annotations(ctx.layout.data(split) / (id + ".tsv"), &vocab);
    std::vector<std::string> warnings;
    EventRoll roll = annotation_to_roll(ann, hop, frames, vocab, &warnings);
    for (const auto& w : warnings) {
        ctx.log("warning: " + split + "/" + id + ": " + w);
    }
    return roll;
}

void check_labels(const std::vector<std::string>& found, const std::vector<std::string>& vocab,
                  const std::string& where) {
    for (const auto& label : found) {
        if (std::find(vocab.begin(), vocab.end(), label) == vocab.end()) {
            throw DataError(where + ": label '" + label + "' is not in the configured vocabulary");
        }
    }
    for (const auto& label : vocab) {
        if (std::find(found.begin(), found.end(), label) == found.end()) {
            throw DataError(where + ": configured label '" + label + "' is missing");
        }
    }
    if (found != vocab) {
        throw DataError(where + ": labels are in a different order than the configured vocabulary");
    }
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string tally_line(const std::string& system, const SegmentTally& t) {
    return system + "\tER=" + fmt("%.4f", error_rate(t)) + "\tS=" + std::to_string(t.substitutions) +
           "\tD=" + std::to_string(t.deletions) + "\tI=" + std::to_string(t.insertions) +
           "\tN=" + std::to_string(t.reference);
}

std::string fused_name(const ExperimentConfig& cfg) {
    std::string name;
    for (const auto& t : cfg.tfrs) {
        name += (name.empty() ? "" : "+") + t.name;
    }
    return name;
}

// ---- synth -----------------------------------------------------------------

void cmd_synth(Context& ctx) {
    for (const auto& split : ctx.splits("all")) {
        SynthSpec spec = ctx.config.synth;
        spec.seed = ctx.stage_seed("synth/" + split);
        spec.num_clips = split == "dev" ? ctx.config.synth.num_clips : ctx.config.eval_clips;
        const fs::path dir = ctx.layout.data(split);
        fs::create_directories(dir);
        for (std::size_t i = 0; i < spec.num_clips; ++i) {
            const SynthClip clip = synthesize_clip(spec, i);
            write_wav(clip.audio, dir / (clip.id + ".wav"));
            write_annotations(clip.annotation, dir / (clip.id + ".tsv"));
        }
        ctx.print("synth\t" + split + "\tclips=" + std::to_string(spec.num_clips));
    }
    std::ofstream vocab(ctx.layout.vocabulary(), std::ios::binary | std::ios::trunc);
    for (const auto& label : ctx.vocabulary()) {
        vocab << label << '\n';
    }
}

// ---- extract ---------------------------------------------------------------

void cmd_extract(Context& ctx) {
    for (const TfrSetup* tfr : ctx.selected_tfrs()) {
        for (const auto& split : ctx.splits("all")) {
            const fs::path src = ctx.layout.data(split);
            const fs::path dst = ctx.layout.features(tfr->name, split);
            fs::create_directories(dst);
            const auto ids = list_clips(src, ".wav");
            for (const auto& id : ids) {
                const AudioClip clip = read_wav(src / (id + ".wav"));
                save_tfr(extract_tfr(clip, tfr->tfr), dst / (id + ".tfr"));
            }
            ctx.print("extract\t" + tfr->name + "\t" + split + "\tclips=" + std::to_string(ids.size()));
        }
    }
}

// ---- train -----------------------------------------------------------------

struct DevData {
    std::vector<TrainingWindow> train;
    std::vector<ValidationClip> validation;
};

/// Seeded validation subset of the dev clip ids, the same for every TFR.
std::vector<std::string> validation_ids(const Context& ctx, std::vector<std::string> ids) {
    SeededRng rng(ctx.stage_seed("validation"));
    rng.shuffle(std::span<std::string>(ids));
    const auto n = static_cast<std::size_t>(
        std::llround(ctx.config.training.validation_fraction * static_cast<double>(ids.size())));
    ids.resize(std::min(n, ids.size() > 0 ? ids.size() - 1 : 0));
    std::sort(ids.begin(), ids.end());
    return ids;
}

DevData load_dev(Context& ctx, const TfrSetup& tfr) {
    const fs::path dir = ctx.layout.features(tfr.name, "dev");
    const auto ids = list_clips(dir, ".tfr");
    const auto held_out = validation_ids(ctx, ids);
    DevData data;
    for (const auto& id : ids) {
        const Tfr features = load_tfr(dir / (id + ".tfr"));
        if (features.config.name() != tfr.name) {
            throw DataError(dir.string() + "/" + id + ".tfr holds " + features.config.name() +
                            ", expected " + tfr.name);
        }
        const EventRoll truth =
            load_truth(ctx, "dev", id, features.num_frames(), features.config.hop_seconds());
        if (std::binary_search(held_out.begin(), held_out.end(), id)) {
            data.validation.push_back({window_tfr(features, id), truth});
        } else {
            for (auto& w : make_training_windows(features, truth)) {
                data.train.push_back(std::move(w));
            }
        }
    }
    return data;
}

void train_one(Context& ctx, const TfrSetup& tfr) {
    const DevData data = load_dev(ctx, tfr);
    const std::size_t events = ctx.vocabulary().size();
    const CapsNetConfig net = CapsNetConfig::preset(tfr.model, events);
    const std::size_t bins = data.train.front().values.dim(1);
    const std::size_t channels = data.train.front().values.dim(2);
    SeededRng init(ctx.stage_seed("init/" + tfr.name));
    CapsNetModel model(net, bins, channels, init);

    TrainOptions options;
    options.epochs = ctx.config.training.epochs;
    options.patience = ctx.config.training.patience;
    options.batch_size = ctx.config.training.batch_size;
    options.seed = ctx.stage_seed("train/" + tfr.name);
    options.on_epoch = [&](const EpochRecord& r) {
        ctx.log("train " + tfr.name + " epoch " + std::to_string(r.epoch) + " loss " +
                fmt("%.5f", r.train_loss) + " validation_er " + fmt("%.4f", r.validation_er));
    };
    const TrainHistory history = train_model(model, data.train, data.validation, options);

    Checkpoint ckpt;
    ckpt.config = net;
    ckpt.num_bins = bins;
    ckpt.channels = channels;
    ckpt.vocabulary = ctx.vocabulary();
    ckpt.tfr = tfr.name;
    ckpt.seed = ctx.config.seed;
    ckpt.history = history;
    ckpt.parameters = model.parameters();
    fs::create_directories(ctx.layout.model(tfr.name).parent_path());
    save_checkpoint(ckpt, ctx.layout.model(tfr.name));
    ctx.print("train\t" + tfr.name + "\tepochs=" + std::to_string(history.epochs.size()) +
              "\tbest_epoch=" + std::to_string(history.best_epoch) +
              "\tbest_validation=" + fmt("%.4f", history.best_value));
}

void cmd_train(Context& ctx) {
    const auto tfrs = ctx.selected_tfrs();
    const std::size_t jobs = std::clamp<std::size_t>(ctx.opts.jobs, 1, tfrs.size());
    if (jobs == 1) {
        for (const TfrSetup* t : tfrs) {
            train_one(ctx, *t);
        }
        return;
    }
    // One thread per model; each model is trained exactly as it would be alone.
    std::vector<std::exception_ptr> errors(tfrs.size());
    std::size_t next = 0;
    std::mutex queue;
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t i = 0;
                {
                    const std::lock_guard lock(queue);
                    if (next >= tfrs.size()) {
                        return;
                    }
                    i = next++;
                }
                try {
                    train_one(ctx, *tfrs[i]);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

// ---- predict ---------------------------------------------------------------

CapsNetModel load_model(Context& ctx, const TfrSetup& tfr) {
    const fs::path path = ctx.layout.model(tfr.name);
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.tfr != tfr.name) {
        throw DataError(path.string() + " was trained on " + ckpt.tfr + ", expected " + tfr.name);
    }
    check_labels(ckpt.vocabulary, ctx.vocabulary(), path.string());
    return CapsNetModel(ckpt.config, ckpt.num_bins, ckpt.channels, std::move(ckpt.parameters));
}

void cmd_predict(Context& ctx) {
    for (const TfrSetup* tfr : ctx.selected_tfrs()) {
        const CapsNetModel model = load_model(ctx, *tfr);
        for (const auto& split : ctx.splits("all")) {
            const fs::path src = ctx.layout.features(tfr->name, split);
            const fs::path dst = ctx.layout.predictions(tfr->name, split);
            fs::create_directories(dst);
            const auto ids = list_clips(src, ".tfr");
            for (const auto& id : ids) {
                const Tfr features = load_tfr(src / (id + ".tfr"));
                if (features.num_bins() != model.num_bins() || features.num_channels() != model.channels()) {
                    throw ShapeError(src.string() + "/" + id + ".tfr has " +
                                     std::to_string(features.num_bins()) + " bins and " +
                                     std::to_string(features.num_channels()) + " channels, model expects " +
                                     std::to_string(model.num_bins()) + " and " +
                                     std::to_string(model.channels()));
                }
                PredictionFile pred;
                pred.activity = predict_clip(model, window_tfr(features, id), features.num_frames());
                pred.hop_sec = features.config.hop_seconds();
                pred.labels = ctx.vocabulary();
                save_predictions(pred, dst / (id + ".pred"));
            }
            ctx.print("predict\t" + tfr->name + "\t" + split + "\tclips=" + std::to_string(ids.size()));
        }
    }
}

// ---- fusion ----------------------------------------------------------------

/// Per-TFR predictions and truth of one split, clip by clip.
struct SplitPredictions {
    std::vector<std::string> ids;
    std::vector<std::vector<PredictionFile>> per_clip;  // [clip][tfr]
    std::vector<EventRoll> truth;                       // [clip]
};

SplitPredictions load_split(Context& ctx, const std::string& split) {
    SplitPredictions sp;
    const auto& tfrs = ctx.config.tfrs;
    sp.ids = list_clips(ctx.layout.predictions(tfrs.front().name, split), ".pred");
    const auto vocab = ctx.vocabulary();
    for (const auto& id : sp.ids) {
        std::vector<PredictionFile> preds;
        for (const auto& tfr : tfrs) {
            const fs::path path = ctx.layout.predictions(tfr.name, split) / (id + ".pred");
            PredictionFile p = load_predictions(path);
            check_labels(p.labels, vocab, path.string());
            if (!preds.empty() && (p.activity.shape() != preds.front().activity.shape() ||
                                   p.hop_sec != preds.front().hop_sec)) {
                throw DataError(path.string() + ": frame count or hop differs from " + tfrs.front().name);
            }
            preds.push_back(std::move(p));
        }
        sp.truth.push_back(load_truth(ctx, split, id, preds.front().activity.dim(0), preds.front().hop_sec));
        sp.per_clip.push_back(std::move(preds));
    }
    return sp;
}

PredictionSet to_prediction_set(const SplitPredictions& sp) {
    PredictionSet set;
    const std::size_t models = sp.per_clip.front().size();
    const std::size_t events = sp.truth.front().events();
    std::size_t total = 0;
    for (const auto& roll : sp.truth) {
        total += roll.frames();
        set.clip_frames.push_back(roll.frames());
    }
    for (std::size_t k = 0; k < models; ++k) {
        Tensor all({total, events});
        std::size_t offset = 0;
        for (const auto& clip : sp.per_clip) {
            const Tensor& a = clip[k].activity;
            std::copy(a.data(), a.data() + a.size(), all.data() + offset);
            offset += a.size();
        }
        set.predictions.push_back(std::move(all));
    }
    set.truth = EventRoll(0, events, sp.truth.front().hop(), sp.truth.front().labels());
    for (const auto& roll : sp.truth) {
        set.truth.append(roll);
    }
    return set;
}

void cmd_fuse_fit(Context& ctx) {
    const SplitPredictions sp = load_split(ctx, "dev");
    const PredictionSet set = to_prediction_set(sp);
    const FusionFit fit = fit_fusion(set, ctx.config.block_len, ctx.config.grid);
    for (const auto& w : fit.warnings) {
        ctx.err << "polysed: warning: " << w << '\n';
    }
    fs::create_directories(ctx.layout.fusion_params().parent_path());
    save_fusion_params(fit.params, ctx.layout.fusion_params());
    for (std::size_t k = 0; k < ctx.config.tfrs.size(); ++k) {
        PredictionSet one{{set.predictions[k]}, set.truth, set.clip_frames};
        FusionParams single;
        single.weights = {1.0};
        single.biases = {0.0};
        single.thresholds.assign(set.truth.events(), 0.5);
        single.block_len = ctx.config.block_len;
        const SegmentTally t = block_counts(one, single);
        ctx.print("fuse-fit\t" + ctx.config.tfrs[k].name + "\tblock_ER=" +
                  fmt("%.4f", t.reference > 0 ? error_rate(t) : 0.0));
    }
    ctx.print("fuse-fit\t" + fused_name(ctx.config) + "\tblock_ER=" + fmt("%.4f", fit.fitted_er) +
              "\tdefault_ER=" + fmt("%.4f", fit.default_er) + "\trounds=" + std::to_string(fit.rounds));
}

Tensor fuse_clip(const std::vector<PredictionFile>& preds, const FusionParams& params) {
    std::vector<Tensor> mats;
    for (const auto& p : preds) {
        mats.push_back(p.activity);
    }
    return fuse(mats, params);
}

FusionParams load_params_for(Context& ctx) {
    const FusionParams params = load_fusion_params(ctx.layout.fusion_params());
    params.validate(ctx.config.tfrs.size(), ctx.vocabulary().size());
    return params;
}

void cmd_fuse_apply(Context& ctx) {
    const FusionParams params = load_params_for(ctx);
    for (const auto& split : ctx.splits("all")) {
        const SplitPredictions sp = load_split(ctx, split);
        const fs::path dst = ctx.layout.fused(split);
        fs::create_directories(dst);
        for (std::size_t c = 0; c < sp.ids.size(); ++c) {
            PredictionFile fused;
            fused.activity = fuse_clip(sp.per_clip[c], params);
            fused.hop_sec = sp.per_clip[c].front().hop_sec;
            fused.labels = ctx.vocabulary();
            save_predictions(fused, dst / (sp.ids[c] + ".pred"));
            const EventRoll roll = threshold(fused.activity, params.thresholds, fused.hop_sec, fused.labels);
            write_annotations(roll_to_annotation(roll), dst / (sp.ids[c] + ".tsv"));
        }
        ctx.print("fuse-apply\t" + split + "\tclips=" + std::to_string(sp.ids.size()));
    }
}

// ---- eval / report -----------------------------------------------------------

/// Segment tallies per single TFR (threshold 0.5) and for the fused system,
/// recomputed from the stored prediction files.
std::vector<SystemScore> score_split(Context& ctx, const std::string& split) {
    const SplitPredictions sp = load_split(ctx, split);
    const FusionParams params = load_params_for(ctx);
    const std::size_t models = ctx.config.tfrs.size();
    const std::vector<double> half(ctx.vocabulary().size(), 0.5);
    std::vector<SegmentTally> single(models);
    SegmentTally fused;
    for (std::size_t c = 0; c < sp.ids.size(); ++c) {
        const EventRoll& truth = sp.truth[c];
        for (std::size_t k = 0; k < models; ++k) {
            const EventRoll est = threshold(sp.per_clip[c][k].activity, half, truth.hop());
            single[k] += segment_counts(truth, est).totals();
        }
        const EventRoll est = threshold(fuse_clip(sp.per_clip[c], params), params.thresholds, truth.hop());
        fused += segment_counts(truth, est).totals();
    }
    std::vector<SystemScore> scores;
    for (std::size_t k = 0; k < models; ++k) {
        scores.push_back({ctx.config.tfrs[k].name, split, single[k]});
    }
    scores.push_back({fused_name(ctx.config), split, fused});
    return scores;
}

void cmd_eval(Context& ctx) {
    for (const auto& split : ctx.splits("eval")) {
        for (const auto& s : score_split(ctx, split)) {
            ctx.print("eval\t" + split + "\t" + tally_line(s.system, s.totals));
        }
    }
}

void cmd_report(Context& ctx) {
    std::vector<SystemScore> scores;
    for (const auto& split : ctx.splits("eval")) {
        for (auto& s : score_split(ctx, split)) {
            scores.push_back(std::move(s));
        }
    }
    const std::string table = format_report(scores);
    std::ofstream f(ctx.layout.report(), std::ios::binary | std::ios::trunc);
    f << table;
    ctx.out << table;
}

// ---- driver ----------------------------------------------------------------

struct Failure {
    int code;
    const char* kind;
};

Failure classify(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return {numeric_error, "numeric"};
    if (dynamic_cast<const DataError*>(&e)) return {data_error, "data"};
    if (dynamic_cast<const ConfigError*>(&e)) return {usage_error, "config"};
    if (dynamic_cast<const ShapeError*>(&e)) return {usage_error, "shape"};
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return {data_error, "data"};
    return {usage_error, "usage"};
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Options opts;
    CLI::App app{"Polyphonic sound event detection with capsule networks and multi-TFR fusion", "polysed"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.add_option("--config", opts.config_path, "YAML experiment config (defaults: desk recipe)");
    app.add_option("--seed", opts.seed, "Top-level seed, overrides the config");
    app.add_option("--out", opts.out_dir, "Output directory, overrides the config");
    app.add_option("--jobs", opts.jobs, "Parallel training jobs")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", opts.verbose, "Progress messages on stderr");

    using Handler = void (*)(Context&);
    const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
        {"synth", "Generate the synthetic dev and eval corpora", cmd_synth},
        {"extract", "Compute TFR archives from WAV files", cmd_extract},
        {"train", "Train one CapsNet per TFR", cmd_train},
        {"predict", "Write frame-level predictions per TFR", cmd_predict},
        {"fuse-fit", "Fit fusion weights, biases and thresholds on the dev split", cmd_fuse_fit},
        {"fuse-apply", "Write fused predictions and annotations", cmd_fuse_apply},
        {"eval", "Segment-based error rates of single and fused systems", cmd_eval},
        {"report", "Error-rate table for all systems", cmd_report},
    };
    Handler handler = nullptr;
    for (const auto& [name, help, fn] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        const std::string n = name;
        if (n == "extract" || n == "train" || n == "predict") {
            sub->add_option("--tfr", opts.tfrs, "Restrict to these TFRs (e.g. logmel_64)");
        }
        if (n != "train" && n != "fuse-fit") {
            sub->add_option("--split", opts.split, "dev, eval or all");
        }
        sub->callback([&handler, f = fn] { handler = f; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "polysed: error code=" << usage_error << " kind=usage: " << one_line(e.what()) << '\n';
        return usage_error;
    }

    try {
        ExperimentConfig config = opts.config_path.empty() ? ExperimentConfig::desk_defaults()
                                                           : load_experiment_config(opts.config_path);
        if (opts.seed) {
            config.seed = *opts.seed;
        }
        if (!opts.out_dir.empty()) {
            config.output = opts.out_dir;
        }
        Context ctx{config, Layout{config.output}, opts, out, err, {}};
        const DirLock lock(ctx.layout.root);
        handler(ctx);
        return ok;
    } catch (const std::exception& e) {
        const Failure f = classify(e);
        err << "polysed: error code=" << f.code << " kind=" << f.kind << ": " << one_line(e.what()) << '\n';
        return f.code;
    }
}

}  // namespace polysed::cli
