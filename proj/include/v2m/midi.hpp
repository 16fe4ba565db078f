#pragma once

// Format-0 Standard MIDI File writer and a small reader for round trips.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "v2m/features.hpp"

namespace v2m::midi {

inline constexpr int kTicksPerQuarter = 480;
inline constexpr std::uint32_t kTempoMicros = 500000;  // 120 bpm
inline constexpr int kTicksPerSecond = 960;

struct TickNote {
  std::uint32_t on = 0;
  std::uint32_t off = 0;
  int pitch = 0;
  int velocity = 0;
  bool operator==(const TickNote&) const = default;
};

std::uint32_t seconds_to_ticks(double seconds);

// Sorted by (on, pitch). Same-pitch overlaps cut the earlier note at the later
// onset; notes that end up empty are dropped.
std::vector<TickNote> to_ticks(const std::vector<features::NoteEvent>& notes);

std::vector<std::uint8_t> render(const std::vector<features::NoteEvent>& notes);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

struct ParsedMidi {
  int format = 0;
  int ticks_per_quarter = 0;
  std::uint32_t tempo_micros = kTempoMicros;
  std::vector<TickNote> notes;  // sorted by (on, pitch)
};

// Throws ParseError on malformed input.
ParsedMidi parse(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace v2m::midi
