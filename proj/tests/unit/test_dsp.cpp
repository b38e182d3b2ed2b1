#include "doctest.h"
#include "support.h"

#include "polysed/dsp.h"
#include "polysed/errors.h"

#include <cmath>
#include <complex>
#include <numbers>

using namespace polysed;

namespace {

AudioClip sine(double hz, double seconds, double amp = 0.5, std::size_t channels = 1) {
    const auto n = static_cast<std::size_t>(seconds * kSampleRate);
    AudioClip clip;
    clip.channels.assign(channels, std::vector<double>(n));
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            clip.channels[c][i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRate);
        }
    }
    return clip;
}

AudioClip noise(double seconds, std::uint64_t seed, std::size_t channels = 2) {
    SeededRng rng(seed);
    const auto n = static_cast<std::size_t>(seconds * kSampleRate);
    AudioClip clip;
    clip.channels.assign(channels, std::vector<double>(n));
    for (auto& ch : clip.channels) {
        for (double& v : ch) {
            v = rng.uniform(-0.5, 0.5);
        }
    }
    return clip;
}

// Frame t of channel c after the periodic Hann window, zero padded to n_fft.
std::vector<double> windowed_frame(const AudioClip& clip, std::size_t c, std::size_t t, std::size_t n_fft) {
    std::vector<double> x(n_fft, 0.0);
    for (std::size_t i = 0; i < 640; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / 640.0);
        x[i] = clip.channels[c][t * 320 + i] * w;
    }
    return x;
}

// O(n^2) DFT magnitude of bin k.
double dft_magnitude(const std::vector<double>& x, std::size_t k) {
    std::complex<double> acc = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double phase = -2.0 * std::numbers::pi * static_cast<double>(k * i % x.size()) / n;
        acc += x[i] * std::polar(1.0, phase);
    }
    return std::abs(acc);
}

}  // namespace

TEST_CASE("TFR names parse to configs with the expected bin counts") {
    CHECK(TfrConfig::parse("stft_1024").num_bins() == 513);
    CHECK(TfrConfig::parse("stft_2048").num_bins() == 1025);
    for (int n : {40, 64, 128, 256, 512}) {
        const TfrConfig cfg = TfrConfig::parse("logmel_" + std::to_string(n));
        CHECK(cfg.num_bins() == static_cast<std::size_t>(n));
        CHECK(cfg.name() == "logmel_" + std::to_string(n));
        CHECK(cfg.n_fft == 1024);
    }
    CHECK(TfrConfig::parse("stft_2048").name() == "stft_2048");
    CHECK_THROWS_AS(TfrConfig::parse("mfcc_40"), ConfigError);
    CHECK_THROWS_AS(TfrConfig::parse("logmel_x"), ConfigError);
    CHECK_THROWS_AS(TfrConfig::parse("stft_1000"), ConfigError);
    CHECK_THROWS_AS(TfrConfig::parse("stft_512"), ConfigError);
}

TEST_CASE("normalize scales by the shared peak") {
    AudioClip mono;
    mono.channels = {{0.5, -0.25}};
    const AudioClip m = normalize(mono);
    CHECK(m.channels[0][0] == 1.0);
    CHECK(m.channels[0][1] == -0.5);

    AudioClip stereo;
    stereo.channels = {{0.5, 0.1}, {0.25, -0.2}};
    const AudioClip s = normalize(stereo);
    CHECK(s.channels[0][0] == 1.0);
    CHECK(s.channels[1][0] == 0.5);
    CHECK(s.channels[1][1] == -0.4);

    AudioClip silent;
    silent.channels = {{0.0, 0.0, 0.0}};
    CHECK(normalize(silent).channels == silent.channels);

    AudioClip empty;
    CHECK_THROWS_AS(normalize(empty), DataError);
}

TEST_CASE("to_binaural duplicates mono") {
    AudioClip mono;
    mono.channels = {{0.1, 0.2}};
    const AudioClip b = to_binaural(mono);
    REQUIRE(b.num_channels() == 2);
    CHECK(b.channels[0] == b.channels[1]);
    AudioClip stereo;
    stereo.channels = {{0.1}, {0.2}};
    CHECK(to_binaural(stereo).channels == stereo.channels);
}

TEST_CASE("stft shapes and frame count") {
    const AudioClip clip = sine(1000.0, 10.0);
    const Tfr s1 = stft_magnitude(clip, TfrConfig::stft(1024));
    CHECK(s1.values.shape() == Shape{499, 513, 1});
    const Tfr s2 = stft_magnitude(to_binaural(clip), TfrConfig::stft(2048));
    CHECK(s2.values.shape() == Shape{499, 1025, 2});
    const auto times = s1.frame_times();
    CHECK(times[0] == 0.0);
    CHECK(times[10] == doctest::Approx(0.2));

    AudioClip short_clip;
    short_clip.channels = {std::vector<double>(639, 0.1)};
    CHECK_THROWS_AS(stft_magnitude(short_clip, TfrConfig::stft(1024)), DataError);
    AudioClip wrong_rate = clip;
    wrong_rate.sample_rate = 44100;
    CHECK_THROWS_AS(stft_magnitude(wrong_rate, TfrConfig::stft(1024)), DataError);
}

TEST_CASE("stft of silence is zero") {
    AudioClip clip;
    clip.channels = {std::vector<double>(4000, 0.0)};
    const Tfr s = stft_magnitude(clip, TfrConfig::stft(1024));
    CHECK(s.num_frames() == 11);
    for (const double v : s.values.values()) {
        REQUIRE(v == 0.0);
    }
}

TEST_CASE("1 kHz sine peaks at bin 64 and matches a direct DFT") {
    const AudioClip clip = sine(1000.0, 0.5);
    const Tfr s = stft_magnitude(clip, TfrConfig::stft(1024));
    for (std::size_t t = 0; t < s.num_frames(); ++t) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 513; ++k) {
            if (s.values.at({t, k, 0}) > s.values.at({t, best, 0})) {
                best = k;
            }
        }
        REQUIRE(best == 64);
    }
    for (std::size_t t : {std::size_t{0}, std::size_t{7}}) {
        const auto x = windowed_frame(clip, 0, t, 1024);
        for (std::size_t k = 0; k < 513; ++k) {
            // Absolute tolerance relative to the peak (~160 for this frame).
            REQUIRE(std::abs(s.values.at({t, k, 0}) - dft_magnitude(x, k)) < 1e-9);
        }
    }
}

TEST_CASE("stft energy satisfies Parseval") {
    const AudioClip clip = noise(0.2, 9, 1);
    for (int n_fft : {1024, 2048}) {
        const Tfr s = stft_magnitude(clip, TfrConfig::stft(n_fft));
        const std::size_t bins = s.num_bins();
        for (std::size_t t = 0; t < s.num_frames(); ++t) {
            const auto x = windowed_frame(clip, 0, t, static_cast<std::size_t>(n_fft));
            double time_energy = 0.0;
            for (const double v : x) {
                time_energy += v * v;
            }
            double freq_energy = 0.0;
            for (std::size_t k = 0; k < bins; ++k) {
                const double m = s.values.at({t, k, 0});
                freq_energy += (k == 0 || k == bins - 1 ? 1.0 : 2.0) * m * m;
            }
            REQUIRE(freq_energy / n_fft == doctest::Approx(time_energy).epsilon(1e-10));
        }
    }
}

TEST_CASE("HTK mel scale") {
    CHECK(hz_to_mel(0.0) == 0.0);
    CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)).epsilon(1e-14));
    CHECK(hz_to_mel(700.0) == doctest::Approx(781.17).epsilon(1e-5));
    for (double f : {0.0, 123.4, 1000.0, 7999.0}) {
        CHECK(mel_to_hz(hz_to_mel(f)) == doctest::Approx(f).epsilon(1e-12));
    }
}

TEST_CASE("mel filterbank triangles") {
    for (std::size_t n : {40, 64, 128, 256, 512}) {
        CAPTURE(n);
        const MelFilterbank fb = build_mel_filterbank(n, 1024, kSampleRate);
        REQUIRE(fb.weights.shape() == Shape{n, 513});
        // Centers equally spaced in mel between 0 and 8000 Hz.
        const double step = hz_to_mel(8000.0) / static_cast<double>(n + 1);
        for (std::size_t m = 0; m < n; ++m) {
            CHECK(hz_to_mel(fb.center_hz[m]) == doctest::Approx(step * static_cast<double>(m + 1)).epsilon(1e-9));
            CHECK(hz_to_mel(fb.lower_hz[m]) == doctest::Approx(step * static_cast<double>(m)).epsilon(1e-9).scale(1e-9));
            // Unimodal, zero outside (lower, upper).
            bool falling = false;
            for (std::size_t k = 0; k < 513; ++k) {
                const double w = fb.weights.at({m, k});
                const double f = static_cast<double>(k) * 16000.0 / 1024.0;
                REQUIRE(w >= 0.0);
                REQUIRE(w <= 1.0);
                if (f <= fb.lower_hz[m] || f >= fb.upper_hz[m]) {
                    REQUIRE(w == 0.0);
                }
                if (k > 0) {
                    const double prev = fb.weights.at({m, k - 1});
                    if (w < prev) {
                        falling = true;
                    }
                    if (falling) {
                        REQUIRE(w <= prev);
                    }
                }
            }
        }
    }
    CHECK_THROWS_AS(build_mel_filterbank(514, 1024, kSampleRate), ConfigError);
    CHECK_THROWS_AS(build_mel_filterbank(0, 1024, kSampleRate), ConfigError);
}

TEST_CASE("mel filterbank covers every interior bin for n <= 128") {
    for (std::size_t n : {40, 64, 128}) {
        const MelFilterbank fb = build_mel_filterbank(n, 1024, kSampleRate);
        for (std::size_t k = 1; k < 512; ++k) {
            double total = 0.0;
            for (std::size_t m = 0; m < n; ++m) {
                total += fb.weights.at({m, k});
            }
            CAPTURE(n);
            CAPTURE(k);
            REQUIRE(total > 0.0);
        }
    }
}

TEST_CASE("logmel equals log of filterbank times stft magnitude") {
    const AudioClip clip = noise(0.3, 4);
    const TfrConfig cfg = TfrConfig::logmel(64);
    const Tfr lm = logmel(clip, cfg);
    const Tfr s = stft_magnitude(clip, TfrConfig::stft(1024));
    const MelFilterbank fb = build_mel_filterbank(64, 1024, kSampleRate);
    REQUIRE(lm.values.shape() == Shape{s.num_frames(), 64, 2});
    for (std::size_t t = 0; t < s.num_frames(); ++t) {
        for (std::size_t m = 0; m < 64; ++m) {
            for (std::size_t c = 0; c < 2; ++c) {
                double e = 0.0;
                for (std::size_t k = 0; k < 513; ++k) {
                    e += fb.weights.at({m, k}) * s.values.at({t, k, c});
                }
                REQUIRE(lm.values.at({t, m, c}) == doctest::Approx(std::log(e + 1e-10)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("logmel of silence is log(floor) and grows with amplitude") {
    AudioClip silent;
    silent.channels = {std::vector<double>(2000, 0.0)};
    const Tfr floor_only = logmel(silent, TfrConfig::logmel(40));
    for (const double v : floor_only.values.values()) {
        REQUIRE(v == std::log(1e-10));
    }
    const AudioClip quiet = noise(0.2, 5);
    AudioClip loud = quiet;
    for (auto& ch : loud.channels) {
        for (double& v : ch) {
            v *= 2.0;
        }
    }
    for (int n : {64, 256}) {
        const Tfr a = logmel(quiet, TfrConfig::logmel(n));
        const Tfr b = logmel(loud, TfrConfig::logmel(n));
        CHECK(a.num_bins() == static_cast<std::size_t>(n));
        const MelFilterbank fb = build_mel_filterbank(static_cast<std::size_t>(n), 1024, kSampleRate);
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            const std::size_t m = (i / 2) % static_cast<std::size_t>(n);
            double row = 0.0;
            for (std::size_t k = 0; k < 513; ++k) {
                row += fb.weights.at({m, k});
            }
            if (row > 0.0) {
                REQUIRE(b.values[i] > a.values[i]);
            }
        }
    }
}

TEST_CASE("extract_tfr makes mono input binaural and normalized") {
    AudioClip mono = sine(440.0, 0.5, 0.25);
    AudioClip stereo = to_binaural(sine(440.0, 0.5, 1.0));
    const Tfr a = extract_tfr(mono, TfrConfig::logmel(40));
    const Tfr b = extract_tfr(stereo, TfrConfig::logmel(40));
    CHECK(a.num_channels() == 2);
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        REQUIRE(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-9));
    }
}

TEST_CASE("window_tfr slices 256-frame windows with a padded tail") {
    SeededRng rng(8);
    for (std::size_t frames : {std::size_t{512}, std::size_t{300}, std::size_t{256}, std::size_t{1}}) {
        CAPTURE(frames);
        Tfr tfr;
        tfr.values = test::random_tensor({frames, 3, 2}, rng);
        const auto windows = window_tfr(tfr, "c");
        const std::size_t expected = (frames + 255) / 256;
        REQUIRE(windows.size() == expected);
        std::size_t covered = 0;
        for (const auto& w : windows) {
            CHECK(w.values.shape() == Shape{256, 3, 2});
            CHECK(w.start_frame == covered);
            const auto mask = w.mask();
            for (std::size_t t = 0; t < 256; ++t) {
                CHECK(mask[t] == (t < w.valid_frames ? 1.0 : 0.0));
                for (std::size_t i = 0; i < 6; ++i) {
                    const double v = w.values[t * 6 + i];
                    if (t < w.valid_frames) {
                        REQUIRE(v == tfr.values[(w.start_frame + t) * 6 + i]);
                    } else {
                        REQUIRE(v == 0.0);
                    }
                }
            }
            covered += w.valid_frames;
        }
        CHECK(covered == frames);
    }
    Tfr tfr;
    tfr.values = Tensor({300, 2, 1});
    const auto w = window_tfr(tfr);
    CHECK(w[1].valid_frames == 44);
    CHECK(256 - w[1].valid_frames == 212);
}
