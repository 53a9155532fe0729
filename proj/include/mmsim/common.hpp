#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mmsim {

// Simulated time is integer nanoseconds throughout.
using Nanos = std::int64_t;
using Tokens = std::int64_t;
using Bytes = std::int64_t;

inline constexpr Nanos kNanosPerSecond = 1'000'000'000;

inline Nanos seconds_to_nanos(double s) {
  return static_cast<Nanos>(s * 1e9 + 0.5);
}

inline double nanos_to_seconds(Nanos ns) { return static_cast<double>(ns) * 1e-9; }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller passed an argument outside an operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class PackingError : public Error {
 public:
  using Error::Error;
};

// A restoration record or plan failed its integrity check.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant (cycle in a validated IR, negative residency, ...).
class InternalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class Modality { Text, Image, Video, Audio };

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Image: return "image";
    case Modality::Video: return "video";
    case Modality::Audio: return "audio";
  }
  return "?";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "text") return Modality::Text;
  if (s == "image") return Modality::Image;
  if (s == "video") return Modality::Video;
  if (s == "audio") return Modality::Audio;
  throw ConfigError("unknown modality '" + std::string(s) + "'");
}

}  // namespace mmsim
