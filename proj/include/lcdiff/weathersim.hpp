#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcdiff/image.hpp"

namespace lcdiff::weathersim {

enum class WeatherKind { densefog, overcast, glare, rainstreaks, raindrops, puddles, rainfog };

const std::vector<WeatherKind>& all_kinds();
std::string kind_name(WeatherKind k);
WeatherKind kind_from_name(const std::string& name);  // throws on unknown kind

struct WeatherSpec {
    WeatherKind kind = WeatherKind::densefog;
    int severity = 3;  // 1..5
    std::uint64_t seed = 0;
};

// Continuous-intensity core (intensity 0 is the identity degradation);
// synthesize() maps severity 1..5 onto intensity severity/5.
Image apply_weather(const Image& clean, WeatherKind kind, double intensity, std::uint64_t seed);

Image synthesize(const Image& clean, const WeatherSpec& spec);

// Procedural 64x64-ish driving scene: sky, ground, road, buildings, cars,
// mild texture. Deterministic in (seed, h, w).
Image toy_scene(std::uint64_t seed, int h = 64, int w = 64);

struct DatasetEntry {
    std::string clean;    // path relative to the manifest file
    std::string degraded;
    std::string kind;
    int severity = 0;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    int version = 1;
    std::vector<DatasetEntry> entries;
};

// Degrades every PNG in clean_dir by every (kind, severity), writing PNGs
// under out_dir/degraded and a manifest at out_dir/manifest.json.
DatasetManifest build_dataset(const std::filesystem::path& clean_dir, const std::vector<WeatherKind>& kinds,
                              const std::vector<int>& severities, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Absolute path of an entry field that was stored relative to the manifest.
std::filesystem::path resolve(const std::filesystem::path& manifest_path, const std::string& rel);

}  // namespace lcdiff::weathersim
