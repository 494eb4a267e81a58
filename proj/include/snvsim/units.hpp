// units.hpp - unit conversion helpers
//
// Internally everything is SI (seconds, hertz, watts).  Config files and CLI
// surfaces use the lab-friendly units named in the key suffixes (ns, MHz, nW,
// uW, ms, us); conversion happens exactly once at the I/O boundary.
#pragma once

namespace snvsim::units {

inline constexpr double ns = 1e-9;   // seconds
inline constexpr double us = 1e-6;   // seconds
inline constexpr double ms = 1e-3;   // seconds

inline constexpr double kHz = 1e3;   // hertz
inline constexpr double MHz = 1e6;   // hertz
inline constexpr double GHz = 1e9;   // hertz
inline constexpr double THz = 1e12;  // hertz

inline constexpr double nW = 1e-9;   // watts
inline constexpr double uW = 1e-6;   // watts

}  // namespace snvsim::units
