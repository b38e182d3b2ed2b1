#pragma once

#include "polysed/annotation.h"
#include "polysed/dsp.h"

#include <cstdint>
#include <string>
#include <vector>

namespace polysed {

enum class SourceKind { tone, chirp, noise_burst };

/// One sound class: a tone somewhere in [low, high], a linear chirp from low
/// to high, or band-pass filtered noise over [low, high].
struct EventClass {
    std::string label;
    SourceKind kind = SourceKind::tone;
    double low_hz = 400.0;
    double high_hz = 800.0;

    friend bool operator==(const EventClass&, const EventClass&) = default;
};

struct SynthSpec {
    std::vector<EventClass> classes;
    std::size_t num_clips = 60;
    double clip_sec = 10.0;
    std::size_t polyphony = 2;            // max simultaneous events
    std::size_t min_events_per_class = 1;
    std::size_t max_events_per_class = 3;
    double min_event_sec = 0.5;
    double max_event_sec = 2.5;
    double snr_min_db = 10.0;
    double snr_max_db = 20.0;
    double min_overlap_fraction = 0.3;    // share of events overlapping another class
    std::uint64_t seed = 0;

    /// Three classes (tone, chirp, noise burst) in background noise at -10 to 0 dB SNR.
    static SynthSpec desk(std::size_t num_clips, std::uint64_t seed);

    /// Throws ConfigError on impossible settings.
    void validate() const;
    std::vector<std::string> vocabulary() const;

    friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct SynthClip {
    std::string id;
    AudioClip audio;       // stereo, 16 kHz
    Annotation annotation; // onsets/offsets on the millisecond grid
};

/// Clip `index` of the corpus; depends only on (spec, index).
/// Throws DataError if no valid event layout is found.
SynthClip synthesize_clip(const SynthSpec& spec, std::size_t index);

std::vector<SynthClip> synthesize_dataset(const SynthSpec& spec);

}  // namespace polysed
