#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace polysed {

/// Binary frame x event activity matrix.
class EventRoll {
public:
    EventRoll() = default;
    EventRoll(std::size_t frames, std::size_t events, double hop_sec,
              std::vector<std::string> labels = {});

    std::size_t frames() const noexcept { return frames_; }
    std::size_t events() const noexcept { return events_; }
    double hop() const noexcept { return hop_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    bool active(std::size_t t, std::size_t e) const { return cells_[t * events_ + e] != 0; }
    void set(std::size_t t, std::size_t e, bool on) { cells_[t * events_ + e] = on ? 1 : 0; }

    const std::vector<std::uint8_t>& cells() const noexcept { return cells_; }

    /// Rows [begin, end) as a new roll with the same hop and labels.
    EventRoll slice(std::size_t begin, std::size_t end) const;
    /// Appends the rows of another roll with equal width and hop.
    void append(const EventRoll& other);

    friend bool operator==(const EventRoll&, const EventRoll&) = default;

private:
    std::size_t frames_ = 0;
    std::size_t events_ = 0;
    double hop_ = 0.02;
    std::vector<std::string> labels_;
    std::vector<std::uint8_t> cells_;
};

struct SegmentTally {
    long substitutions = 0;
    long deletions = 0;
    long insertions = 0;
    long reference = 0;  // N(s): active ground-truth events

    SegmentTally& operator+=(const SegmentTally& o) {
        substitutions += o.substitutions;
        deletions += o.deletions;
        insertions += o.insertions;
        reference += o.reference;
        return *this;
    }
    friend bool operator==(const SegmentTally&, const SegmentTally&) = default;
};

struct SegmentCounts {
    std::vector<SegmentTally> segments;

    SegmentTally totals() const;
    void append(const SegmentCounts& other);
};

/// Per-segment substitutions, deletions and insertions.
///
/// An event is active in a segment when any of its frames there is active.
/// Per segment: S = min(FN, FP), D = FN - S, I = FP - S. The last segment may
/// be shorter than segment_sec. Throws DataError on shape or hop mismatch.
SegmentCounts segment_counts(const EventRoll& reference, const EventRoll& estimate,
                             double segment_sec = 1.0);

/// (sum S + sum D + sum I) / sum N. Throws NumericError when sum N == 0.
double error_rate(const SegmentCounts& counts);
double error_rate(const SegmentTally& totals);

/// Frames per segment for a hop, e.g. 50 at 20 ms hop and 1 s segments.
std::size_t frames_per_segment(double hop_sec, double segment_sec);

struct SystemScore {
    std::string system;   // e.g. "logmel_64" or "logmel_64+logmel_128"
    std::string scene;
    SegmentTally totals;
};

/// Table of ER and sum S/D/I/N per system, one column pair per scene plus
/// the average ER across scenes.
std::string format_report(const std::vector<SystemScore>& scores);

}  // namespace polysed
