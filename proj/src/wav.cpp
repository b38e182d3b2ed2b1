#include "polysed/wav.h"

#include "polysed/errors.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace polysed {

namespace {

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw WavError(WavError::Kind::io, "wav: cannot open " + path.string());
    }
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    const std::string where = "wav " + path.string() + ": ";
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw WavError(WavError::Kind::malformed, where + "not a RIFF/WAVE file");
    }

    bool have_fmt = false;
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t bits = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::size_t len = get_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (len > bytes.size() - body) {
            throw WavError(WavError::Kind::malformed, where + "chunk runs past end of file");
        }
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) {
                throw WavError(WavError::Kind::malformed, where + "fmt chunk too short");
            }
            format = get_u16(chunk + 8);
            channels = get_u16(chunk + 10);
            rate = get_u32(chunk + 12);
            bits = get_u16(chunk + 22);
            if (format == 0xFFFE && len >= 40) {
                format = get_u16(chunk + 8 + 24);  // sub-format GUID starts with the codec tag
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_len = len;
        }
        pos = body + len + (len & 1);
    }
    if (!have_fmt || data == nullptr) {
        throw WavError(WavError::Kind::malformed, where + "missing fmt or data chunk");
    }
    if (format != 1) {
        throw WavError(WavError::Kind::unsupported_format,
                       where + "codec " + std::to_string(format) + " is not integer PCM");
    }
    if (bits != 16) {
        throw WavError(WavError::Kind::unsupported_format,
                       where + std::to_string(bits) + "-bit samples, only 16-bit PCM is supported");
    }
    if (channels < 1 || channels > 2) {
        throw WavError(WavError::Kind::unsupported_format,
                       where + std::to_string(channels) + " channels, expected 1 or 2");
    }
    if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw WavError(WavError::Kind::wrong_sample_rate,
                       where + "sample rate " + std::to_string(rate) + " Hz, expected " +
                           std::to_string(kSampleRate) + " Hz");
    }
    const std::size_t frame_bytes = 2u * channels;
    if (data_len % frame_bytes != 0) {
        throw WavError(WavError::Kind::malformed, where + "data size is not a whole number of frames");
    }

    const std::size_t n = data_len / frame_bytes;
    AudioClip clip;
    clip.sample_rate = kSampleRate;
    clip.channels.assign(channels, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
            const auto raw = static_cast<std::int16_t>(get_u16(data + i * frame_bytes + 2 * c));
            clip.channels[c][i] = raw / 32768.0;
        }
    }
    return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
    const std::size_t channels = clip.num_channels();
    if (channels < 1 || channels > 2) {
        throw WavError(WavError::Kind::unsupported_format, "wav: can only write 1 or 2 channels");
    }
    if (clip.sample_rate != kSampleRate) {
        throw WavError(WavError::Kind::wrong_sample_rate,
                       "wav: sample rate " + std::to_string(clip.sample_rate) + " Hz, expected " +
                           std::to_string(kSampleRate) + " Hz");
    }
    const std::size_t n = clip.num_samples();
    for (const auto& ch : clip.channels) {
        if (ch.size() != n) {
            throw DataError("wav: channels have different lengths");
        }
    }
    const std::size_t data_len = n * channels * 2;
    std::vector<unsigned char> out;
    out.reserve(44 + data_len);
    put_tag(out, "RIFF");
    put_u32(out, static_cast<std::uint32_t>(36 + data_len));
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, static_cast<std::uint16_t>(channels));
    put_u32(out, kSampleRate);
    put_u32(out, static_cast<std::uint32_t>(kSampleRate * channels * 2));
    put_u16(out, static_cast<std::uint16_t>(channels * 2));
    put_u16(out, 16);
    put_tag(out, "data");
    put_u32(out, static_cast<std::uint32_t>(data_len));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double q = std::round(clip.channels[c][i] * 32768.0);
            const auto s = static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
            put_u16(out, static_cast<std::uint16_t>(s));
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw WavError(WavError::Kind::io, "wav: cannot write " + path.string());
    }
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw WavError(WavError::Kind::io, "wav: write failed for " + path.string());
    }
}

}  // namespace polysed
