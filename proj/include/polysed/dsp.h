#pragma once

#include "polysed/tensor.h"

#include <cstddef>
#include <string>
#include <vector>

namespace polysed {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindowFrames = 256;

/// PCM audio, one vector per channel, samples nominally in [-1, 1].
struct AudioClip {
    std::vector<std::vector<double>> channels;
    int sample_rate = kSampleRate;

    std::size_t num_channels() const noexcept { return channels.size(); }
    std::size_t num_samples() const noexcept { return channels.empty() ? 0 : channels[0].size(); }
};

enum class TfrKind { stft, logmel };

struct TfrConfig {
    TfrKind kind = TfrKind::logmel;
    int frame_len_ms = 40;
    int hop_ms = 20;
    int n_fft = 1024;
    int n_mels = 64;
    double log_floor = 1e-10;

    static TfrConfig stft(int n_fft);
    static TfrConfig logmel(int n_mels);
    /// Parses "stft_<n_fft>" or "logmel_<n>".
    static TfrConfig parse(const std::string& name);

    std::string name() const;
    /// F: 1 + n_fft/2 for stft, n_mels for logmel.
    std::size_t num_bins() const;
    std::size_t frame_len_samples(int sample_rate = kSampleRate) const;
    std::size_t hop_samples(int sample_rate = kSampleRate) const;
    double hop_seconds() const { return hop_ms / 1000.0; }

    friend bool operator==(const TfrConfig&, const TfrConfig&) = default;
};

/// Time-frequency representation, values shaped (frames, F, C).
/// Frame t covers samples [t*hop, t*hop + frame_len).
struct Tfr {
    Tensor values;
    TfrConfig config;

    std::size_t num_frames() const { return values.rank() == 3 ? values.dim(0) : 0; }
    std::size_t num_bins() const { return values.dim(1); }
    std::size_t num_channels() const { return values.dim(2); }
    std::vector<double> frame_times() const;
};

/// Fixed-length slice of a Tfr, values shaped (256, F, C). Frames at or
/// beyond valid_frames are zero padding.
struct TfrWindow {
    Tensor values;
    std::string clip_id;
    std::size_t start_frame = 0;
    std::size_t valid_frames = 0;

    /// 1 for real frames, 0 for padding; length 256.
    std::vector<double> mask() const;
};

struct MelFilterbank {
    Tensor weights;                 // (n, 1 + n_fft/2), unit-peak triangles
    std::vector<double> lower_hz;   // per filter
    std::vector<double> center_hz;
    std::vector<double> upper_hz;

    std::size_t num_filters() const { return weights.dim(0); }
    std::size_t num_bins() const { return weights.dim(1); }
};

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Peak normalization with one factor shared by all channels.
/// Silent clips are returned unchanged.
AudioClip normalize(const AudioClip& clip);

/// Duplicates a mono clip into two channels; stereo passes through.
AudioClip to_binaural(const AudioClip& clip);

/// Hann-windowed 640-sample frames, zero-padded to n_fft, per-channel magnitude.
Tfr stft_magnitude(const AudioClip& clip, const TfrConfig& cfg);

MelFilterbank build_mel_filterbank(std::size_t n, std::size_t n_fft, int sample_rate);

/// log(filterbank * |STFT_1024| + floor).
Tfr logmel(const AudioClip& clip, const TfrConfig& cfg);

/// Pipeline front end: binaural conversion, normalization, then the TFR of cfg.kind.
Tfr extract_tfr(const AudioClip& clip, const TfrConfig& cfg);

/// Consecutive non-overlapping 256-frame windows; the tail window is zero padded.
std::vector<TfrWindow> window_tfr(const Tfr& tfr, const std::string& clip_id = {});

}  // namespace polysed
