#include "polysed/synth.h"

#include "polysed/errors.h"
#include "polysed/rng.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace polysed {

namespace {

constexpr double kFadeSec = 0.02;
constexpr double kPeak = 0.9;
constexpr int kLayoutAttempts = 2000;
constexpr int kPlacementAttempts = 200;

struct Placed {
    std::size_t cls;
    long onset_ms;
    long offset_ms;
};

bool overlaps(const Placed& a, const Placed& b) {
    return a.onset_ms < b.offset_ms && b.onset_ms < a.offset_ms;
}

// Max number of events sounding at once.
std::size_t max_polyphony(const std::vector<Placed>& events) {
    std::vector<std::pair<long, int>> edges;
    for (const auto& e : events) {
        edges.emplace_back(e.onset_ms, 1);
        edges.emplace_back(e.offset_ms, -1);
    }
    std::sort(edges.begin(), edges.end());  // offsets (-1) sort before onsets at equal times
    long active = 0;
    long peak = 0;
    for (const auto& [t, d] : edges) {
        active += d;
        peak = std::max(peak, active);
    }
    return static_cast<std::size_t>(peak);
}

long uniform_ms(SeededRng& rng, double lo_sec, double hi_sec) {
    const auto lo = static_cast<long>(std::llround(lo_sec * 1000.0));
    const auto hi = static_cast<long>(std::llround(hi_sec * 1000.0));
    return lo + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::vector<Placed> layout_events(const SynthSpec& spec, SeededRng& rng) {
    const auto clip_ms = static_cast<long>(std::llround(spec.clip_sec * 1000.0));
    for (int attempt = 0; attempt < kLayoutAttempts; ++attempt) {
        std::vector<Placed> events;
        bool failed = false;
        for (std::size_t c = 0; c < spec.classes.size() && !failed; ++c) {
            const std::size_t count =
                spec.min_events_per_class +
                rng.below(spec.max_events_per_class - spec.min_events_per_class + 1);
            for (std::size_t k = 0; k < count && !failed; ++k) {
                bool placed = false;
                for (int tries = 0; tries < kPlacementAttempts && !placed; ++tries) {
                    const long dur = uniform_ms(rng, spec.min_event_sec, spec.max_event_sec);
                    if (dur > clip_ms) {
                        break;
                    }
                    const long onset = uniform_ms(rng, 0.0, static_cast<double>(clip_ms - dur) / 1000.0);
                    const Placed cand{c, onset, onset + dur};
                    bool ok = true;
                    for (const auto& e : events) {
                        if (e.cls == c && overlaps(e, cand)) {
                            ok = false;
                            break;
                        }
                    }
                    if (!ok) {
                        continue;
                    }
                    events.push_back(cand);
                    if (max_polyphony(events) > spec.polyphony) {
                        events.pop_back();
                        continue;
                    }
                    placed = true;
                }
                failed = !placed;
            }
        }
        if (failed) {
            continue;
        }
        std::size_t overlapping = 0;
        for (const auto& a : events) {
            for (const auto& b : events) {
                if (a.cls != b.cls && overlaps(a, b)) {
                    ++overlapping;
                    break;
                }
            }
        }
        if (static_cast<double>(overlapping) >= spec.min_overlap_fraction * static_cast<double>(events.size())) {
            std::sort(events.begin(), events.end(), [](const Placed& a, const Placed& b) {
                return a.onset_ms != b.onset_ms ? a.onset_ms < b.onset_ms : a.cls < b.cls;
            });
            return events;
        }
    }
    throw DataError("synth: no event layout satisfies polyphony " + std::to_string(spec.polyphony) +
                    " and the overlap requirement; lengthen clips or reduce events per class");
}

std::vector<double> render_source(const EventClass& cls, std::size_t n, SeededRng& rng) {
    std::vector<double> x(n);
    const double fs = kSampleRate;
    const double two_pi = 2.0 * std::numbers::pi;
    switch (cls.kind) {
    case SourceKind::tone: {
        const double f = rng.uniform(cls.low_hz, cls.high_hz);
        const double phase = rng.uniform(0.0, two_pi);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = std::sin(two_pi * f * static_cast<double>(i) / fs + phase);
        }
        break;
    }
    case SourceKind::chirp: {
        const double dur = static_cast<double>(n) / fs;
        const double rate = (cls.high_hz - cls.low_hz) / dur;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / fs;
            x[i] = std::sin(two_pi * (cls.low_hz * t + 0.5 * rate * t * t));
        }
        break;
    }
    case SourceKind::noise_burst: {
        // Band-pass biquad (constant 0 dB peak gain).
        const double f0 = std::sqrt(cls.low_hz * cls.high_hz);
        const double q = f0 / (cls.high_hz - cls.low_hz);
        const double w0 = two_pi * f0 / fs;
        const double alpha = std::sin(w0) / (2.0 * q);
        const double a0 = 1.0 + alpha;
        const double b0 = alpha / a0;
        const double b2 = -alpha / a0;
        const double a1 = -2.0 * std::cos(w0) / a0;
        const double a2 = (1.0 - alpha) / a0;
        double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double in = rng.normal();
            const double y = b0 * in + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = in;
            y2 = y1;
            y1 = y;
            x[i] = y;
        }
        break;
    }
    }
    double power = 0.0;
    for (const double v : x) {
        power += v * v;
    }
    const double rms = std::sqrt(power / static_cast<double>(std::max<std::size_t>(n, 1)));
    if (rms > 0.0) {
        for (double& v : x) {
            v /= rms;
        }
    }
    const auto fade = std::min(static_cast<std::size_t>(kFadeSec * fs), n / 2);
    for (std::size_t i = 0; i < fade; ++i) {
        const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(fade));
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
    return x;
}

}  // namespace

SynthSpec SynthSpec::desk(std::size_t num_clips, std::uint64_t seed) {
    SynthSpec s;
    s.classes = {{"alarm", SourceKind::tone, 400.0, 800.0},
                 {"chirp", SourceKind::chirp, 1200.0, 2400.0},
                 {"hiss", SourceKind::noise_burst, 3000.0, 5000.0}};
    s.num_clips = num_clips;
    s.snr_min_db = -10.0;
    s.snr_max_db = 0.0;
    s.seed = seed;
    return s;
}

void SynthSpec::validate() const {
    if (classes.empty()) {
        throw ConfigError("synth: at least one event class is required");
    }
    for (const auto& c : classes) {
        if (c.label.empty() || !(c.low_hz > 0.0) || !(c.high_hz > c.low_hz) ||
            c.high_hz >= kSampleRate / 2.0) {
            throw ConfigError("synth: class '" + c.label + "' needs 0 < low < high < 8000 Hz");
        }
    }
    for (std::size_t i = 0; i < classes.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (classes[i].label == classes[j].label) {
                throw ConfigError("synth: duplicate class label '" + classes[i].label + "'");
            }
        }
    }
    if (!(clip_sec > 0.0) || !(min_event_sec > 0.0) || max_event_sec < min_event_sec ||
        max_event_sec > clip_sec) {
        throw ConfigError("synth: need 0 < min_event_sec <= max_event_sec <= clip_sec");
    }
    if (min_events_per_class > max_events_per_class || max_events_per_class == 0) {
        throw ConfigError("synth: events per class range is empty");
    }
    if (polyphony == 0) {
        throw ConfigError("synth: polyphony must be at least 1");
    }
    if (polyphony < 2 && min_overlap_fraction > 0.0) {
        throw ConfigError("synth: overlapping events need polyphony of at least 2");
    }
    if (static_cast<double>(min_events_per_class) * min_event_sec > clip_sec ||
        static_cast<double>(min_events_per_class * classes.size()) * min_event_sec >
            static_cast<double>(polyphony) * clip_sec) {
        throw ConfigError("synth: the minimum number of events does not fit in a clip");
    }
    if (snr_max_db < snr_min_db) {
        throw ConfigError("synth: SNR range is empty");
    }
    if (!(min_overlap_fraction >= 0.0 && min_overlap_fraction <= 1.0)) {
        throw ConfigError("synth: overlap fraction must lie in [0, 1]");
    }
}

std::vector<std::string> SynthSpec::vocabulary() const {
    std::vector<std::string> v;
    for (const auto& c : classes) {
        v.push_back(c.label);
    }
    return v;
}

SynthClip synthesize_clip(const SynthSpec& spec, std::size_t index) {
    spec.validate();
    char id[32];
    std::snprintf(id, sizeof id, "clip_%04zu", index);
    SeededRng rng = SeededRng(spec.seed).fork(id);

    const std::vector<Placed> events = layout_events(spec, rng);
    const auto n = static_cast<std::size_t>(std::llround(spec.clip_sec * kSampleRate));
    std::vector<double> left(n, 0.0);
    std::vector<double> right(n, 0.0);
    std::vector<std::uint8_t> busy(n, 0);

    SynthClip clip;
    clip.id = id;
    for (const Placed& e : events) {
        const EventClass& cls = spec.classes[e.cls];
        const auto start = static_cast<std::size_t>(e.onset_ms) * kSampleRate / 1000;
        const auto stop = static_cast<std::size_t>(e.offset_ms) * kSampleRate / 1000;
        const std::vector<double> src = render_source(cls, stop - start, rng);
        const double gain = rng.uniform(0.5, 1.0);
        const double theta = rng.uniform(0.1, 0.9) * std::numbers::pi / 2.0;
        const double gl = gain * std::cos(theta);
        const double gr = gain * std::sin(theta);
        for (std::size_t i = 0; i < src.size(); ++i) {
            left[start + i] += gl * src[i];
            right[start + i] += gr * src[i];
            busy[start + i] = 1;
        }
        clip.annotation.events.push_back(
            {static_cast<double>(e.onset_ms) / 1000.0, static_cast<double>(e.offset_ms) / 1000.0, cls.label});
    }

    double signal_power = 0.0;
    std::size_t busy_samples = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (busy[i]) {
            signal_power += 0.5 * (left[i] * left[i] + right[i] * right[i]);
            ++busy_samples;
        }
    }
    signal_power = busy_samples > 0 ? signal_power / static_cast<double>(busy_samples) : 0.25;
    const double snr_db = rng.uniform(spec.snr_min_db, spec.snr_max_db);
    const double noise_std = std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        left[i] += noise_std * rng.normal();
        right[i] += noise_std * rng.normal();
        peak = std::max({peak, std::abs(left[i]), std::abs(right[i])});
    }
    if (peak > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            left[i] *= kPeak / peak;
            right[i] *= kPeak / peak;
        }
    }
    clip.audio.sample_rate = kSampleRate;
    clip.audio.channels = {std::move(left), std::move(right)};
    return clip;
}

std::vector<SynthClip> synthesize_dataset(const SynthSpec& spec) {
    spec.validate();
    std::vector<SynthClip> clips;
    clips.reserve(spec.num_clips);
    for (std::size_t i = 0; i < spec.num_clips; ++i) {
        clips.push_back(synthesize_clip(spec, i));
    }
    return clips;
}

}  // namespace polysed
