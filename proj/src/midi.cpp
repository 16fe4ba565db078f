#include "v2m/midi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

#include "v2m/error.hpp"

namespace v2m::midi {

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

void put_vlq(std::vector<std::uint8_t>& b, std::uint32_t v) {
  std::uint8_t tmp[5];
  int n = 0;
  tmp[n++] = v & 0x7f;
  while (v >>= 7) tmp[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7f));
  while (n) b.push_back(tmp[--n]);
}

struct TrackEvent {
  std::uint32_t tick;
  int kind;  // 0 = off, 1 = on
  int pitch;
  int velocity;
};

}  // namespace

std::uint32_t seconds_to_ticks(double seconds) {
  if (!(seconds >= 0.0)) throw RangeError("negative note time");
  return static_cast<std::uint32_t>(std::llround(seconds * kTicksPerSecond));
}

std::vector<TickNote> to_ticks(const std::vector<features::NoteEvent>& notes) {
  std::vector<TickNote> out;
  out.reserve(notes.size());
  for (const auto& n : notes) {
    features::validate(n);
    out.push_back({seconds_to_ticks(n.onset), seconds_to_ticks(n.onset + n.duration), n.pitch, n.velocity});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TickNote& a, const TickNote& b) { return std::tie(a.on, a.pitch) < std::tie(b.on, b.pitch); });
  std::map<int, std::size_t> last;  // pitch -> index of its latest note
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (auto it = last.find(out[i].pitch); it != last.end()) {
      auto& prev = out[it->second];
      prev.off = std::min(prev.off, out[i].on);
    }
    last[out[i].pitch] = i;
  }
  std::erase_if(out, [](const TickNote& n) { return n.off <= n.on; });
  return out;
}

std::vector<std::uint8_t> render(const std::vector<features::NoteEvent>& notes) {
  std::vector<TrackEvent> events;
  for (const auto& n : to_ticks(notes)) {
    events.push_back({n.on, 1, n.pitch, n.velocity});
    events.push_back({n.off, 0, n.pitch, 0});
  }
  std::sort(events.begin(), events.end(), [](const TrackEvent& a, const TrackEvent& b) {
    return std::tie(a.tick, a.kind, a.pitch) < std::tie(b.tick, b.kind, b.pitch);
  });

  std::vector<std::uint8_t> track;
  put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x51, 0x03});
  track.push_back(static_cast<std::uint8_t>(kTempoMicros >> 16));
  track.push_back(static_cast<std::uint8_t>(kTempoMicros >> 8));
  track.push_back(static_cast<std::uint8_t>(kTempoMicros));
  std::uint32_t now = 0;
  for (const auto& e : events) {
    put_vlq(track, e.tick - now);
    now = e.tick;
    track.push_back(e.kind ? 0x90 : 0x80);
    track.push_back(static_cast<std::uint8_t>(e.pitch));
    track.push_back(static_cast<std::uint8_t>(e.kind ? e.velocity : 0x40));
  }
  put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x2f, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, kTicksPerQuarter);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

namespace {

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t pos, std::size_t end) : b_(b), pos_(pos), end_(end) {}
  bool done() const { return pos_ >= end_; }
  std::size_t pos() const { return pos_; }
  std::uint8_t u8() {
    if (pos_ >= end_) throw ParseError("MIDI data truncated");
    return b_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= end_) throw ParseError("MIDI data truncated");
    return b_[pos_];
  }
  std::uint32_t u16() { return (std::uint32_t{u8()} << 8) | u8(); }
  std::uint32_t u32() { return (u16() << 16) | u16(); }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const auto c = u8();
      v = (v << 7) | (c & 0x7f);
      if (!(c & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    if (end_ - pos_ < n) throw ParseError("MIDI data truncated");
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace

ParsedMidi parse(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, 0, bytes.size());
  const auto expect_tag = [&](const char* tag) {
    for (int i = 0; i < 4; ++i)
      if (r.u8() != static_cast<std::uint8_t>(tag[i])) throw ParseError(std::string("expected chunk ") + tag);
  };
  expect_tag("MThd");
  if (r.u32() != 6) throw ParseError("unexpected MThd length");
  ParsedMidi out;
  out.format = static_cast<int>(r.u16());
  const auto ntracks = r.u16();
  const auto division = r.u16();
  if (division & 0x8000) throw ParseError("SMPTE time division is not supported");
  out.ticks_per_quarter = static_cast<int>(division);

  std::map<int, std::vector<TickNote>> open;  // pitch -> stack of sounding notes
  for (std::uint32_t tr = 0; tr < ntracks; ++tr) {
    expect_tag("MTrk");
    const auto len = r.u32();
    const auto start = r.pos();
    if (bytes.size() - start < len) throw ParseError("MTrk length exceeds file");
    Reader t(bytes, start, start + len);
    std::uint32_t now = 0;
    std::uint8_t status = 0;
    bool ended = false;
    while (!t.done() && !ended) {
      now += t.vlq();
      if (t.peek() & 0x80) status = t.u8();
      if (status == 0) throw ParseError("running status without a prior status byte");
      if (status == 0xff) {
        const auto type = t.u8();
        const auto n = t.vlq();
        if (type == 0x51 && n == 3) {
          out.tempo_micros = (std::uint32_t{t.u8()} << 16) | (std::uint32_t{t.u8()} << 8) | t.u8();
        } else {
          t.skip(n);
        }
        if (type == 0x2f) ended = true;
        status = 0;
        continue;
      }
      if (status == 0xf0 || status == 0xf7) {
        t.skip(t.vlq());
        status = 0;
        continue;
      }
      const int kind = status & 0xf0;
      const int a = t.u8();
      const int b = (kind == 0xc0 || kind == 0xd0) ? 0 : t.u8();
      if (kind == 0x90 && b > 0) {
        open[a].push_back({now, now, a, b});
      } else if (kind == 0x80 || (kind == 0x90 && b == 0)) {
        auto& stack = open[a];
        if (stack.empty()) throw ParseError("note-off without note-on for pitch " + std::to_string(a));
        auto n = stack.front();
        stack.erase(stack.begin());
        n.off = now;
        out.notes.push_back(n);
      }
    }
    if (!ended) throw ParseError("track without end-of-track event");
    r.skip(len);
  }
  for (const auto& [pitch, stack] : open)
    if (!stack.empty()) throw ParseError("note " + std::to_string(pitch) + " never released");
  std::stable_sort(out.notes.begin(), out.notes.end(), [](const TickNote& a, const TickNote& b) {
    return std::tie(a.on, a.pitch) < std::tie(b.on, b.pitch);
  });
  return out;
}

}  // namespace v2m::midi
