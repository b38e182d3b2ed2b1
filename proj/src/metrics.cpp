#include "polysed/metrics.h"

#include "polysed/errors.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace polysed {

EventRoll::EventRoll(std::size_t frames, std::size_t events, double hop_sec,
                     std::vector<std::string> labels)
    : frames_(frames), events_(events), hop_(hop_sec), labels_(std::move(labels)),
      cells_(frames * events, 0) {
    if (!(hop_sec > 0.0)) {
        throw DataError("event roll: hop must be positive");
    }
    if (!labels_.empty() && labels_.size() != events) {
        throw DataError("event roll: " + std::to_string(labels_.size()) + " labels for " +
                        std::to_string(events) + " events");
    }
}

EventRoll EventRoll::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > frames_) {
        throw DataError("event roll: slice out of range");
    }
    EventRoll out(end - begin, events_, hop_, labels_);
    std::copy(cells_.begin() + static_cast<std::ptrdiff_t>(begin * events_),
              cells_.begin() + static_cast<std::ptrdiff_t>(end * events_), out.cells_.begin());
    return out;
}

void EventRoll::append(const EventRoll& other) {
    if (other.events_ != events_ || other.hop_ != hop_) {
        throw DataError("event roll: cannot append rolls of different width or hop");
    }
    cells_.insert(cells_.end(), other.cells_.begin(), other.cells_.end());
    frames_ += other.frames_;
}

SegmentTally SegmentCounts::totals() const {
    SegmentTally t;
    for (const auto& s : segments) {
        t += s;
    }
    return t;
}

void SegmentCounts::append(const SegmentCounts& other) {
    segments.insert(segments.end(), other.segments.begin(), other.segments.end());
}

std::size_t frames_per_segment(double hop_sec, double segment_sec) {
    if (!(hop_sec > 0.0) || !(segment_sec > 0.0)) {
        throw DataError("segments: hop and segment length must be positive");
    }
    const double ratio = segment_sec / hop_sec;
    const auto rounded = static_cast<std::size_t>(std::llround(ratio));
    if (rounded == 0 || std::abs(ratio - static_cast<double>(rounded)) > 1e-6 * ratio) {
        throw DataError("segments: segment length is not a whole number of frames");
    }
    return rounded;
}

SegmentCounts segment_counts(const EventRoll& reference, const EventRoll& estimate,
                             double segment_sec) {
    if (reference.hop() != estimate.hop()) {
        throw DataError("segment_counts: hop mismatch (" + std::to_string(reference.hop()) +
                        " vs " + std::to_string(estimate.hop()) + ")");
    }
    if (reference.frames() != estimate.frames() || reference.events() != estimate.events()) {
        throw DataError("segment_counts: shape mismatch " + std::to_string(reference.frames()) +
                        "x" + std::to_string(reference.events()) + " vs " +
                        std::to_string(estimate.frames()) + "x" +
                        std::to_string(estimate.events()));
    }
    const std::size_t per = frames_per_segment(reference.hop(), segment_sec);
    const std::size_t events = reference.events();
    SegmentCounts counts;
    std::vector<char> ref_on(events);
    std::vector<char> est_on(events);
    for (std::size_t begin = 0; begin < reference.frames(); begin += per) {
        const std::size_t end = std::min(begin + per, reference.frames());
        std::fill(ref_on.begin(), ref_on.end(), 0);
        std::fill(est_on.begin(), est_on.end(), 0);
        for (std::size_t t = begin; t < end; ++t) {
            for (std::size_t e = 0; e < events; ++e) {
                ref_on[e] |= static_cast<char>(reference.active(t, e));
                est_on[e] |= static_cast<char>(estimate.active(t, e));
            }
        }
        long fn = 0;
        long fp = 0;
        long n = 0;
        for (std::size_t e = 0; e < events; ++e) {
            n += ref_on[e];
            fn += ref_on[e] && !est_on[e];
            fp += est_on[e] && !ref_on[e];
        }
        SegmentTally s;
        s.substitutions = std::min(fn, fp);
        s.deletions = fn - s.substitutions;
        s.insertions = fp - s.substitutions;
        s.reference = n;
        counts.segments.push_back(s);
    }
    return counts;
}

double error_rate(const SegmentTally& t) {
    if (t.reference == 0) {
        throw NumericError("error rate undefined: reference has no active events");
    }
    return static_cast<double>(t.substitutions + t.deletions + t.insertions) /
           static_cast<double>(t.reference);
}

double error_rate(const SegmentCounts& counts) { return error_rate(counts.totals()); }

std::string format_report(const std::vector<SystemScore>& scores) {
    std::vector<std::string> systems;
    std::vector<std::string> scenes;
    std::map<std::pair<std::string, std::string>, SegmentTally> table;
    for (const auto& s : scores) {
        if (std::find(systems.begin(), systems.end(), s.system) == systems.end()) {
            systems.push_back(s.system);
        }
        if (std::find(scenes.begin(), scenes.end(), s.scene) == scenes.end()) {
            scenes.push_back(s.scene);
        }
        table[{s.system, s.scene}] += s.totals;
    }

    std::ostringstream out;
    out << "system";
    for (const auto& scene : scenes) {
        out << '\t' << scene << ".ER\t" << scene << ".S\t" << scene << ".D\t" << scene << ".I\t"
            << scene << ".N";
    }
    out << "\taverage.ER\n";
    char buf[32];
    for (const auto& system : systems) {
        out << system;
        double er_sum = 0.0;
        std::size_t er_count = 0;
        for (const auto& scene : scenes) {
            const auto it = table.find({system, scene});
            if (it == table.end()) {
                out << "\t-\t-\t-\t-\t-";
                continue;
            }
            const SegmentTally& t = it->second;
            if (t.reference > 0) {
                const double er = error_rate(t);
                er_sum += er;
                ++er_count;
                std::snprintf(buf, sizeof buf, "%.4f", er);
                out << '\t' << buf;
            } else {
                out << "\tnan";
            }
            out << '\t' << t.substitutions << '\t' << t.deletions << '\t' << t.insertions << '\t'
                << t.reference;
        }
        if (er_count > 0) {
            std::snprintf(buf, sizeof buf, "%.4f", er_sum / static_cast<double>(er_count));
            out << '\t' << buf << '\n';
        } else {
            out << "\tnan\n";
        }
    }
    return out.str();
}

}  // namespace polysed
