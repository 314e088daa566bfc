// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace vtw {

/// Token role inside a multimodal prompt. Order matches the prompt layout.
enum class SegmentType : std::uint8_t {
    System = 0,
    Vision = 1,
    Instruction = 2,
    Output = 3,
};

inline constexpr std::size_t kSegmentCount = 4;

inline constexpr std::array<SegmentType, kSegmentCount> kAllSegments = {
    SegmentType::System, SegmentType::Vision, SegmentType::Instruction, SegmentType::Output};

constexpr std::size_t segment_index(SegmentType s) { return static_cast<std::size_t>(s); }

constexpr std::string_view segment_name(SegmentType s) {
    switch (s) {
        case SegmentType::System: return "system";
        case SegmentType::Vision: return "vision";
        case SegmentType::Instruction: return "instruction";
        case SegmentType::Output: return "output";
    }
    return "unknown";
}

}  // namespace vtw
