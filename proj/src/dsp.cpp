#include "polysed/dsp.h"

#include "polysed/errors.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

namespace polysed {

namespace {

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};

struct PlanDestroy {
    void operator()(fftw_plan_s* p) const {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(p);
    }
};

/// Real-to-complex transform of a fixed size with owned buffers.
class RealFft {
public:
    explicit RealFft(std::size_t n)
        : n_(n),
          in_(fftw_alloc_real(n)),
          out_(fftw_alloc_complex(n / 2 + 1)) {
        std::lock_guard lock(planner_mutex());
        plan_.reset(fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE));
        if (!plan_) {
            throw Error("fft: planning failed for size " + std::to_string(n));
        }
    }

    double* input() { return in_.get(); }

    void magnitude(double* dst) {
        fftw_execute(plan_.get());
        for (std::size_t k = 0; k <= n_ / 2; ++k) {
            dst[k] = std::hypot(out_.get()[k][0], out_.get()[k][1]);
        }
    }

private:
    std::size_t n_;
    std::unique_ptr<double, FftwFree> in_;
    std::unique_ptr<fftw_complex, FftwFree> out_;
    std::unique_ptr<fftw_plan_s, PlanDestroy> plan_;
};

std::vector<double> periodic_hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                    static_cast<double>(n));
    }
    return w;
}

void check_clip(const AudioClip& clip, const char* op) {
    if (clip.channels.empty() || clip.num_samples() == 0) {
        throw DataError(std::string(op) + ": empty clip");
    }
    if (clip.channels.size() > 2) {
        throw DataError(std::string(op) + ": expected 1 or 2 channels, got " +
                        std::to_string(clip.channels.size()));
    }
    for (const auto& ch : clip.channels) {
        if (ch.size() != clip.num_samples()) {
            throw DataError(std::string(op) + ": channels differ in length");
        }
    }
}

}  // namespace

TfrConfig TfrConfig::stft(int n_fft) {
    TfrConfig cfg;
    cfg.kind = TfrKind::stft;
    cfg.n_fft = n_fft;
    cfg.n_mels = 0;
    return cfg;
}

TfrConfig TfrConfig::logmel(int n_mels) {
    TfrConfig cfg;
    cfg.kind = TfrKind::logmel;
    cfg.n_fft = 1024;
    cfg.n_mels = n_mels;
    return cfg;
}

TfrConfig TfrConfig::parse(const std::string& name) {
    const auto sep = name.find('_');
    if (sep == std::string::npos) {
        throw ConfigError("unknown TFR '" + name + "' (expected stft_<n_fft> or logmel_<n>)");
    }
    const std::string kind = name.substr(0, sep);
    const std::string scale = name.substr(sep + 1);
    int value = 0;
    try {
        std::size_t used = 0;
        value = std::stoi(scale, &used);
        if (used != scale.size() || value <= 0) {
            throw std::invalid_argument(scale);
        }
    } catch (const std::exception&) {
        throw ConfigError("TFR '" + name + "' has an invalid scale '" + scale + "'");
    }
    if (kind == "stft") {
        if (value < 2 || (value & (value - 1)) != 0) {
            throw ConfigError("TFR '" + name + "': n_fft must be a power of two");
        }
        if (static_cast<std::size_t>(value) < 640) {
            throw ConfigError("TFR '" + name + "': n_fft must cover the 640-sample frame");
        }
        return stft(value);
    }
    if (kind == "logmel") {
        return logmel(value);
    }
    throw ConfigError("unknown TFR kind '" + kind + "' in '" + name + "'");
}

std::string TfrConfig::name() const {
    return kind == TfrKind::stft ? "stft_" + std::to_string(n_fft) : "logmel_" + std::to_string(n_mels);
}

std::size_t TfrConfig::num_bins() const {
    return kind == TfrKind::stft ? static_cast<std::size_t>(n_fft / 2 + 1)
                                 : static_cast<std::size_t>(n_mels);
}

std::size_t TfrConfig::frame_len_samples(int sample_rate) const {
    return static_cast<std::size_t>(frame_len_ms) * static_cast<std::size_t>(sample_rate) / 1000;
}

std::size_t TfrConfig::hop_samples(int sample_rate) const {
    return static_cast<std::size_t>(hop_ms) * static_cast<std::size_t>(sample_rate) / 1000;
}

std::vector<double> Tfr::frame_times() const {
    std::vector<double> times(num_frames());
    for (std::size_t t = 0; t < times.size(); ++t) {
        times[t] = static_cast<double>(t) * config.hop_seconds();
    }
    return times;
}

std::vector<double> TfrWindow::mask() const {
    std::vector<double> m(values.rank() > 0 ? values.dim(0) : 0, 0.0);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(std::min(valid_frames, m.size())), 1.0);
    return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

AudioClip normalize(const AudioClip& clip) {
    check_clip(clip, "normalize");
    double peak = 0.0;
    for (const auto& ch : clip.channels) {
        for (const double s : ch) {
            if (!std::isfinite(s)) {
                throw DataError("normalize: non-finite sample");
            }
            peak = std::max(peak, std::abs(s));
        }
    }
    AudioClip out = clip;
    if (peak == 0.0) {
        return out;
    }
    for (auto& ch : out.channels) {
        for (double& s : ch) {
            s /= peak;
        }
    }
    return out;
}

AudioClip to_binaural(const AudioClip& clip) {
    check_clip(clip, "to_binaural");
    AudioClip out = clip;
    if (out.channels.size() == 1) {
        out.channels.push_back(out.channels[0]);
    }
    return out;
}

Tfr stft_magnitude(const AudioClip& clip, const TfrConfig& cfg) {
    check_clip(clip, "stft");
    if (clip.sample_rate != kSampleRate) {
        throw DataError("stft: sample rate " + std::to_string(clip.sample_rate) +
                        " Hz, expected " + std::to_string(kSampleRate));
    }
    const std::size_t frame_len = cfg.frame_len_samples(clip.sample_rate);
    const std::size_t hop = cfg.hop_samples(clip.sample_rate);
    const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
    if (n_fft < frame_len) {
        throw ConfigError("stft: n_fft " + std::to_string(n_fft) + " shorter than the frame (" +
                          std::to_string(frame_len) + " samples)");
    }
    const std::size_t n = clip.num_samples();
    if (n < frame_len) {
        throw DataError("stft: clip has " + std::to_string(n) + " samples, one frame needs " +
                        std::to_string(frame_len));
    }
    const std::size_t frames = 1 + (n - frame_len) / hop;
    const std::size_t bins = n_fft / 2 + 1;
    const std::size_t channels = clip.num_channels();
    const std::vector<double> window = periodic_hann(frame_len);

    Tfr out;
    out.config = cfg;
    out.config.kind = TfrKind::stft;
    out.values = Tensor(Shape{frames, bins, channels});
    RealFft fft(n_fft);
    std::vector<double> mag(bins);
    for (std::size_t c = 0; c < channels; ++c) {
        const auto& samples = clip.channels[c];
        for (std::size_t t = 0; t < frames; ++t) {
            double* in = fft.input();
            const std::size_t start = t * hop;
            for (std::size_t i = 0; i < frame_len; ++i) {
                in[i] = samples[start + i] * window[i];
            }
            std::fill(in + frame_len, in + n_fft, 0.0);
            fft.magnitude(mag.data());
            double* dst = out.values.data() + t * bins * channels + c;
            for (std::size_t k = 0; k < bins; ++k) {
                dst[k * channels] = mag[k];
            }
        }
    }
    return out;
}

MelFilterbank build_mel_filterbank(std::size_t n, std::size_t n_fft, int sample_rate) {
    const std::size_t bins = n_fft / 2 + 1;
    if (n < 1) {
        throw ConfigError("mel filterbank: need at least one filter");
    }
    if (n > bins) {
        throw ConfigError("mel filterbank: " + std::to_string(n) + " filters exceed " +
                          std::to_string(bins) + " FFT bins");
    }
    const double nyquist = sample_rate / 2.0;
    const double mel_max = hz_to_mel(nyquist);
    std::vector<double> edges(n + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n + 1));
    }
    edges.front() = 0.0;
    edges.back() = nyquist;

    MelFilterbank fb;
    fb.weights = Tensor(Shape{n, bins});
    fb.lower_hz.resize(n);
    fb.center_hz.resize(n);
    fb.upper_hz.resize(n);
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
    for (std::size_t m = 0; m < n; ++m) {
        const double lo = edges[m];
        const double mid = edges[m + 1];
        const double hi = edges[m + 2];
        fb.lower_hz[m] = lo;
        fb.center_hz[m] = mid;
        fb.upper_hz[m] = hi;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            const double rise = (f - lo) / (mid - lo);
            const double fall = (hi - f) / (hi - mid);
            fb.weights[m * bins + k] = std::max(0.0, std::min(rise, fall));
        }
    }
    return fb;
}

Tfr logmel(const AudioClip& clip, const TfrConfig& cfg) {
    if (cfg.kind != TfrKind::logmel) {
        throw ConfigError("logmel: config kind is not logmel");
    }
    if (cfg.n_mels < 1) {
        throw ConfigError("logmel: n_mels must be positive");
    }
    TfrConfig spec_cfg = cfg;
    spec_cfg.kind = TfrKind::stft;
    const Tfr spec = stft_magnitude(clip, spec_cfg);
    const MelFilterbank fb =
        build_mel_filterbank(static_cast<std::size_t>(cfg.n_mels), static_cast<std::size_t>(cfg.n_fft),
                             clip.sample_rate);

    const std::size_t frames = spec.num_frames();
    const std::size_t bins = spec.num_bins();
    const std::size_t channels = spec.num_channels();
    const std::size_t n = fb.num_filters();

    // Support of each triangle, so the product skips the zero tails.
    std::vector<std::size_t> first(n, bins);
    std::vector<std::size_t> last(n, 0);
    for (std::size_t m = 0; m < n; ++m) {
        for (std::size_t k = 0; k < bins; ++k) {
            if (fb.weights[m * bins + k] > 0.0) {
                first[m] = std::min(first[m], k);
                last[m] = k + 1;
            }
        }
    }

    Tfr out;
    out.config = cfg;
    out.values = Tensor(Shape{frames, n, channels});
    for (std::size_t t = 0; t < frames; ++t) {
        const double* src = spec.values.data() + t * bins * channels;
        double* dst = out.values.data() + t * n * channels;
        for (std::size_t m = 0; m < n; ++m) {
            for (std::size_t c = 0; c < channels; ++c) {
                double energy = 0.0;
                for (std::size_t k = first[m]; k < last[m]; ++k) {
                    energy += fb.weights[m * bins + k] * src[k * channels + c];
                }
                dst[m * channels + c] = std::log(energy + cfg.log_floor);
            }
        }
    }
    return out;
}

Tfr extract_tfr(const AudioClip& clip, const TfrConfig& cfg) {
    const AudioClip prepared = normalize(to_binaural(clip));
    return cfg.kind == TfrKind::stft ? stft_magnitude(prepared, cfg) : logmel(prepared, cfg);
}

std::vector<TfrWindow> window_tfr(const Tfr& tfr, const std::string& clip_id) {
    std::vector<TfrWindow> windows;
    const std::size_t frames = tfr.num_frames();
    if (frames == 0) {
        return windows;
    }
    const std::size_t row = tfr.num_bins() * tfr.num_channels();
    for (std::size_t start = 0; start < frames; start += kWindowFrames) {
        TfrWindow w;
        w.clip_id = clip_id;
        w.start_frame = start;
        w.valid_frames = std::min(kWindowFrames, frames - start);
        w.values = Tensor(Shape{kWindowFrames, tfr.num_bins(), tfr.num_channels()});
        const double* src = tfr.values.data() + start * row;
        std::copy(src, src + w.valid_frames * row, w.values.data());
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace polysed
