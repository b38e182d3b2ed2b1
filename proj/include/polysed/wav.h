#pragma once

#include "polysed/dsp.h"

#include <filesystem>

namespace polysed {

/// Reads a RIFF/WAVE file with 16-bit PCM samples, one or two channels,
/// recorded at 16 kHz. Samples are scaled by 1/32768.
/// Throws WavError (io, malformed, unsupported_format, wrong_sample_rate).
AudioClip read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM; samples are clipped to [-1, 32767/32768].
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

}  // namespace polysed
