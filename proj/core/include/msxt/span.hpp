#pragma once

#include <cstddef>

namespace msxt {

// Inclusive frame-index interval [start, end]. start <= end always; a
// single-frame moment has start == end and length 1.
struct MomentSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    friend bool operator==(const MomentSpan& a, const MomentSpan& b) {
        return a.start == b.start && a.end == b.end;
    }
};

inline std::size_t span_length(const MomentSpan& s) { return s.end - s.start + 1; }

} // namespace msxt
