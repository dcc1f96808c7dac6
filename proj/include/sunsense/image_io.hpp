#pragma once

#include <filesystem>

#include "sunsense/core.hpp"

namespace sunsense {

/// Loads a detector observation from disk. Dispatches on content:
/// PGM P5 (8/16-bit, 16-bit big-endian per the format spec) or a raw
/// 32-bit little-endian float grid with a one-line JSON sidecar
/// {"width":..,"height":..,"pitch":..} at <path>.json.
Image load_image(const std::filesystem::path& path);

Image load_pgm(const std::filesystem::path& path);
void save_pgm(const Image& img, const std::filesystem::path& path);

Image load_raw_float(const std::filesystem::path& path);
void save_raw_float(const Image& img, const std::filesystem::path& path);

/// Event CSV with header `pixel,t_us`; reset time on a leading
/// comment line `# reset_us=<value>`.
EventStream load_event_csv(const std::filesystem::path& path);
void save_event_csv(const EventStream& ev, const std::filesystem::path& path);

/// Profile CSV: one intensity per line for a 1xN image.
void save_profile_csv(const Image& profile, const std::filesystem::path& path);

} // namespace sunsense
