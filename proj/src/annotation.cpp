#include "polysed/annotation.h"

#include "polysed/errors.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace polysed {

namespace {

double parse_time(std::string_view field, std::size_t line) {
    double value = 0.0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || end != field.data() + field.size() || !std::isfinite(value)) {
        throw AnnotationError(AnnotationError::Kind::parse,
                              "annotation line " + std::to_string(line) + ": bad time '" +
                                  std::string(field) + "'");
    }
    return value;
}

}  // namespace

Annotation parse_annotations(std::string_view text, const std::vector<std::string>* vocabulary) {
    Annotation ann;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        const std::size_t tab1 = line.find('\t');
        const std::size_t tab2 = tab1 == std::string_view::npos ? tab1 : line.find('\t', tab1 + 1);
        if (tab2 == std::string_view::npos || tab2 + 1 >= line.size()) {
            throw AnnotationError(AnnotationError::Kind::parse,
                                  "annotation line " + std::to_string(line_no) +
                                      ": expected onset<TAB>offset<TAB>label");
        }
        AnnotatedEvent ev;
        ev.onset = parse_time(line.substr(0, tab1), line_no);
        ev.offset = parse_time(line.substr(tab1 + 1, tab2 - tab1 - 1), line_no);
        ev.label = std::string(line.substr(tab2 + 1));
        if (ev.onset < 0.0 || ev.onset >= ev.offset) {
            throw AnnotationError(AnnotationError::Kind::ordering,
                                  "annotation line " + std::to_string(line_no) + ": onset " +
                                      std::string(line.substr(0, tab1)) + " is not before offset " +
                                      std::string(line.substr(tab1 + 1, tab2 - tab1 - 1)));
        }
        if (vocabulary != nullptr &&
            std::find(vocabulary->begin(), vocabulary->end(), ev.label) == vocabulary->end()) {
            throw AnnotationError(AnnotationError::Kind::unknown_label,
                                  "annotation line " + std::to_string(line_no) + ": unknown label '" +
                                      ev.label + "'");
        }
        ann.events.push_back(std::move(ev));
    }
    return ann;
}

Annotation read_annotations(const std::filesystem::path& path, const std::vector<std::string>* vocabulary) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw AnnotationError(AnnotationError::Kind::io, "annotation: cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_annotations(buf.str(), vocabulary);
    } catch (const AnnotationError& e) {
        throw AnnotationError(e.kind(), path.string() + ": " + e.what());
    }
}

std::string format_annotations(const Annotation& annotation) {
    std::vector<AnnotatedEvent> events = annotation.events;
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        if (a.onset != b.onset) {
            return a.onset < b.onset;
        }
        if (a.offset != b.offset) {
            return a.offset < b.offset;
        }
        return a.label < b.label;
    });
    std::string out;
    char buf[64];
    for (const auto& ev : events) {
        std::snprintf(buf, sizeof buf, "%.3f\t%.3f\t", ev.onset, ev.offset);
        out += buf;
        out += ev.label;
        out += '\n';
    }
    return out;
}

void write_annotations(const Annotation& annotation, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw AnnotationError(AnnotationError::Kind::io, "annotation: cannot write " + path.string());
    }
    out << format_annotations(annotation);
}

EventRoll annotation_to_roll(const Annotation& annotation, double hop_sec, std::size_t frames,
                             const std::vector<std::string>& vocabulary,
                             std::vector<std::string>* warnings) {
    if (!(hop_sec > 0.0)) {
        throw ConfigError("annotation_to_roll: hop must be positive");
    }
    EventRoll roll(frames, vocabulary.size(), hop_sec, vocabulary);
    const double clip_end = static_cast<double>(frames) * hop_sec;
    for (const auto& ev : annotation.events) {
        const auto it = std::find(vocabulary.begin(), vocabulary.end(), ev.label);
        if (it == vocabulary.end()) {
            throw AnnotationError(AnnotationError::Kind::unknown_label,
                                  "annotation_to_roll: label '" + ev.label + "' is not in the vocabulary");
        }
        const auto e = static_cast<std::size_t>(it - vocabulary.begin());
        double onset = ev.onset;
        double offset = ev.offset;
        if (onset < 0.0 || offset > clip_end + 1e-9) {
            if (warnings != nullptr) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "event %s [%.3f, %.3f) clipped to [0, %.3f)",
                              ev.label.c_str(), ev.onset, ev.offset, clip_end);
                warnings->emplace_back(buf);
            }
            onset = std::max(onset, 0.0);
            offset = std::min(offset, clip_end);
        }
        if (offset <= onset) {
            continue;
        }
        const auto first = static_cast<std::size_t>(std::max(0.0, std::floor(onset / hop_sec)));
        for (std::size_t t = first; t < frames; ++t) {
            const double lo = static_cast<double>(t) * hop_sec;
            if (lo >= offset) {
                break;
            }
            const double hi = lo + hop_sec;
            const double overlap = std::min(offset, hi) - std::max(onset, lo);
            if (overlap >= 0.5 * hop_sec - 1e-9) {
                roll.set(t, e, true);
            }
        }
    }
    return roll;
}

Annotation roll_to_annotation(const EventRoll& roll) {
    Annotation ann;
    const double hop = roll.hop();
    for (std::size_t e = 0; e < roll.events(); ++e) {
        const std::string label =
            e < roll.labels().size() ? roll.labels()[e] : "event_" + std::to_string(e);
        std::size_t t = 0;
        while (t < roll.frames()) {
            if (!roll.active(t, e)) {
                ++t;
                continue;
            }
            const std::size_t start = t;
            while (t < roll.frames() && roll.active(t, e)) {
                ++t;
            }
            ann.events.push_back({static_cast<double>(start) * hop, static_cast<double>(t) * hop, label});
        }
    }
    std::stable_sort(ann.events.begin(), ann.events.end(),
                     [](const auto& a, const auto& b) { return a.onset < b.onset; });
    return ann;
}

}  // namespace polysed
