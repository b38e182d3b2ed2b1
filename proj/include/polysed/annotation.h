#pragma once

#include "polysed/metrics.h"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace polysed {

struct AnnotatedEvent {
    double onset = 0.0;   // seconds
    double offset = 0.0;
    std::string label;

    friend bool operator==(const AnnotatedEvent&, const AnnotatedEvent&) = default;
};

/// Onset/offset/label triples of one clip; events may overlap.
struct Annotation {
    std::vector<AnnotatedEvent> events;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Parses "onset<TAB>offset<TAB>label" lines. Blank lines are ignored.
/// With a vocabulary, labels outside it raise AnnotationError(unknown_label).
Annotation parse_annotations(std::string_view text, const std::vector<std::string>* vocabulary = nullptr);
Annotation read_annotations(const std::filesystem::path& path,
                            const std::vector<std::string>* vocabulary = nullptr);

/// Lines sorted by onset, times with 3 decimals.
std::string format_annotations(const Annotation& annotation);
void write_annotations(const Annotation& annotation, const std::filesystem::path& path);

/// Frame t is active for an event when [t*hop, (t+1)*hop) overlaps it by at
/// least half a frame. Events reaching outside [0, frames*hop) are clipped
/// and a message is appended to `warnings`.
EventRoll annotation_to_roll(const Annotation& annotation, double hop_sec, std::size_t frames,
                             const std::vector<std::string>& vocabulary,
                             std::vector<std::string>* warnings = nullptr);

/// One event per run of active frames, spanning [start*hop, end*hop).
Annotation roll_to_annotation(const EventRoll& roll);

}  // namespace polysed
