#include "lcdiff/weathersim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lcdiff/rng.hpp"

namespace lcdiff::weathersim {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<WeatherKind>& all_kinds() {
    static const std::vector<WeatherKind> k = {WeatherKind::densefog,  WeatherKind::overcast,
                                               WeatherKind::glare,     WeatherKind::rainstreaks,
                                               WeatherKind::raindrops, WeatherKind::puddles,
                                               WeatherKind::rainfog};
    return k;
}

std::string kind_name(WeatherKind k) {
    switch (k) {
        case WeatherKind::densefog: return "densefog";
        case WeatherKind::overcast: return "overcast";
        case WeatherKind::glare: return "glare";
        case WeatherKind::rainstreaks: return "rainstreaks";
        case WeatherKind::raindrops: return "raindrops";
        case WeatherKind::puddles: return "puddles";
        case WeatherKind::rainfog: return "rainfog";
    }
    throw std::invalid_argument("kind_name: bad enum value");
}

WeatherKind kind_from_name(const std::string& name) {
    for (WeatherKind k : all_kinds())
        if (kind_name(k) == name) return k;
    throw std::invalid_argument("unknown weather kind: " + name);
}

namespace {

// Hash-based noise helpers: position-indexed so results are independent of
// evaluation order, which keeps every recipe bitwise deterministic.
double hash_noise(std::uint64_t seed, std::int64_t a, std::int64_t b) {
    std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL +
                                         static_cast<std::uint64_t>(b) * 0xC2B2AE3D27D4EB4FULL + 0x165667B1ULL);
    return Rng(s).uniform();
}

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Bilinear value noise on a lattice with the given cell size, two octaves.
double value_noise(std::uint64_t seed, double x, double y, double cell) {
    double total = 0.0, amp = 0.0;
    double c = cell, a = 1.0;
    for (int oct = 0; oct < 2; ++oct) {
        const double gx = x / c, gy = y / c;
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(gx));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(gy));
        const double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
        const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
        const std::uint64_t os = mix_seed(seed, static_cast<std::uint64_t>(oct) + 77);
        const double v00 = hash_noise(os, x0, y0), v10 = hash_noise(os, x0 + 1, y0);
        const double v01 = hash_noise(os, x0, y0 + 1), v11 = hash_noise(os, x0 + 1, y0 + 1);
        const double v = (v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy;
        total += a * v;
        amp += a;
        c *= 0.5;
        a *= 0.5;
    }
    return total / amp;
}

double luma(const Image& img, int y, int x) {
    return 0.299 * img.pix.at(y, x, 0) + 0.587 * img.pix.at(y, x, 1) + 0.114 * img.pix.at(y, x, 2);
}

Image densefog(const Image& in, double i, std::uint64_t) {
    if (i <= 0.0) return in;
    const int h = in.pix.dim(0), w = in.pix.dim(1);
    const double beta_f = 2.2 * i, airlight = 0.8;
    Image out = in;
    for (int y = 0; y < h; ++y) {
        const double depth = 1.0 - static_cast<double>(y) / (h - 1);  // far at the horizon
        const double tr = std::exp(-beta_f * depth);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.pix.at(y, x, c) = in.pix.at(y, x, c) * tr + airlight * (1.0 - tr);
    }
    return clamp01(out);
}

// One convex pull per pixel toward a fixed gray target (dimmed body, bright
// gray sky band), so the per-pixel error grows linearly with intensity.
Image overcast(const Image& in, double i, std::uint64_t) {
    if (i <= 0.0) return in;
    const int h = in.pix.dim(0), w = in.pix.dim(1);
    Image out = in;
    for (int y = 0; y < h; ++y) {
        const double sky = 1.0 - smoothstep(0.20 * h, 0.32 * h, static_cast<double>(y));
        const double wgt = (0.5 + 0.3 * sky) * i;
        for (int x = 0; x < w; ++x) {
            const double gray = (1.0 - sky) * 0.55 * luma(in, y, x) + sky * 0.74;
            for (int c = 0; c < 3; ++c)
                out.pix.at(y, x, c) = (1.0 - wgt) * in.pix.at(y, x, c) + wgt * gray;
        }
    }
    return clamp01(out);
}

Image glare(const Image& in, double i, std::uint64_t seed) {
    if (i <= 0.0) return in;
    const int h = in.pix.dim(0), w = in.pix.dim(1);
    Rng rng(mix_seed(seed, hash_str("glare")));
    const double cx = w * (0.2 + 0.6 * rng.uniform());
    const double cy = h * (0.05 + 0.2 * rng.uniform());
    const double sigma = 0.38 * std::min(h, w), amp = 0.85 * i;
    Image out = in;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double add = amp * std::exp(-r2 / (2.0 * sigma * sigma));
            for (int c = 0; c < 3; ++c) out.pix.at(y, x, c) += add;
        }
    return clamp01(out);
}

// Particle streaks. Severity only grows the particle count; each particle's
// geometry and brightness come from its own index-derived seed, so lower
// severities are exact prefixes of higher ones.
Image rainstreaks(const Image& in, double i, std::uint64_t seed) {
    if (i <= 0.0) return in;
    const int h = in.pix.dim(0), w = in.pix.dim(1);
    const int n_max = std::max(8, h * w / 70);
    const int n = static_cast<int>(std::lround(n_max * i));
    Tensor<double> bright({h, w});
    const std::uint64_t base = mix_seed(seed, hash_str("rainstreaks"));
    for (int j = 0; j < n; ++j) {
        Rng pr(mix_seed(base, static_cast<std::uint64_t>(j)));
        double px = pr.uniform() * w, py = pr.uniform() * h;
        const double len = 6.0 + 8.0 * pr.uniform();
        const double ang = (68.0 + 14.0 * pr.uniform()) * 3.14159265358979323846 / 180.0;
        const double b = 0.22 + 0.18 * pr.uniform();
        const double dx = std::cos(ang) * 0.5, dy = std::sin(ang) * 0.5;
        for (double s = 0.0; s < len; s += 0.5) {
            const int xi = static_cast<int>(std::lround(px)), yi = static_cast<int>(std::lround(py));
            if (xi >= 0 && xi < w && yi >= 0 && yi < h) bright.at(yi, xi) = std::max(bright.at(yi, xi), b);
            px += dx;
            py += dy;
        }
    }
    Image out = in;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.pix.at(y, x, c) += bright.at(y, x);
    return clamp01(out);
}

// Lens droplets on a jittered grid; one droplet per cell keeps the disks
// disjoint so higher severity strictly extends lower severity.
Image raindrops(const Image& in, double i, std::uint64_t seed) {
    if (i <= 0.0) return in;
    const int h = in.pix.dim(0), w = in.pix.dim(1);
    const int cell = 16;
    const int gx = std::max(1, w / cell), gy = std::max(1, h / cell);
    const int m_max = gx * gy - 2;
    const int m = static_cast<int>(std::lround(m_max * i));
    const double blend = std::min(0.9, 0.9 * i);
    const std::uint64_t base = mix_seed(seed, hash_str("raindrops"));
    Image out = in;
    for (int j = 0; j < m; ++j) {
        Rng dr(mix_seed(base, static_cast<std::uint64_t>(j)));
        const int cxi = j % gx, cyi = j / gx;
        const double cx = (cxi + 0.5) * cell + (dr.uniform() - 0.5) * 5.0;
        const double cy = (cyi + 0.5) * cell + (dr.uniform() - 0.5) * 5.0;
        const double rad = 2.5 + 3.0 * dr.uniform();
        const int sx = dr.uniform() < 0.5 ? -1 : 1, sy = dr.uniform() < 0.5 ? -1 : 1;
        const int ox = sx * (2 + static_cast<int>(dr.uniform() * 2.5));
        const int oy = sy * (2 + static_cast<int>(dr.uniform() * 2.5));
        for (int y = std::max(0, static_cast<int>(cy - rad)); y <= std::min(h - 1, static_cast<int>(cy + rad)); ++y)
            for (int x = std::max(0, static_cast<int>(cx - rad)); x <= std::min(w - 1, static_cast<int>(cx + rad));
                 ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                if (d2 > rad * rad) continue;
                const int ry = std::clamp(y + oy, 0, h - 1), rx = std::clamp(x + ox, 0, w - 1);
                for (int c = 0; c < 3; ++c) {
                    const double target = 0.62 * in.pix.at(ry, rx, c) + 0.38 * 0.88;  // refracted + bright film
                    out.pix.at(y, x, c) = (1.0 - blend) * in.pix.at(y, x, c) + blend * target;
                }
            }
    }
    return clamp01(out);
}

Image puddles(const Image& in, double i, std::uint64_t seed) {
    if (i <= 0.0) return in;
    const int h = in.pix.dim(0), w = in.pix.dim(1);
    const int band_top = static_cast<int>(0.72 * h);
    const double th = 1.0 - 0.55 * i;
    const std::uint64_t ns = mix_seed(seed, hash_str("puddles"));
    Image out = in;
    for (int y = band_top; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double p = value_noise(ns, x, y, 12.0);
            const double m = smoothstep(th, th + 0.12, p);
            if (m <= 0.0) continue;
            const int my = std::clamp(2 * band_top - y, 0, h - 1);  // mirrored reflection source
            const double wgt = 0.8 * m;
            for (int c = 0; c < 3; ++c) {
                const double target = 0.5 * in.pix.at(my, x, c) + 0.5 * 0.66;
                out.pix.at(y, x, c) = (1.0 - wgt) * in.pix.at(y, x, c) + wgt * target;
            }
        }
    return clamp01(out);
}

Image rainfog(const Image& in, double i, std::uint64_t seed) {
    if (i <= 0.0) return in;
    Image out = overcast(in, 0.45 * i, mix_seed(seed, hash_str("rf_overcast")));
    out = rainstreaks(out, 0.8 * i, mix_seed(seed, hash_str("rf_streaks")));
    out = puddles(out, 0.6 * i, mix_seed(seed, hash_str("rf_puddles")));
    out = raindrops(out, 0.4 * i, mix_seed(seed, hash_str("rf_drops")));
    out = densefog(out, 0.55 * i, mix_seed(seed, hash_str("rf_fog")));
    return out;
}

}  // namespace

Image apply_weather(const Image& clean, WeatherKind kind, double intensity, std::uint64_t seed) {
    validate_image(clean, "apply_weather");
    if (intensity < 0.0 || intensity > 1.0) throw std::invalid_argument("apply_weather: intensity outside [0,1]");
    switch (kind) {
        case WeatherKind::densefog: return densefog(clean, intensity, seed);
        case WeatherKind::overcast: return overcast(clean, intensity, seed);
        case WeatherKind::glare: return glare(clean, intensity, seed);
        case WeatherKind::rainstreaks: return rainstreaks(clean, intensity, seed);
        case WeatherKind::raindrops: return raindrops(clean, intensity, seed);
        case WeatherKind::puddles: return puddles(clean, intensity, seed);
        case WeatherKind::rainfog: return rainfog(clean, intensity, seed);
    }
    throw std::invalid_argument("apply_weather: unknown kind");
}

Image synthesize(const Image& clean, const WeatherSpec& spec) {
    if (spec.severity < 1 || spec.severity > 5)
        throw std::invalid_argument("synthesize: severity " + std::to_string(spec.severity) + " outside 1..5");
    return apply_weather(clean, spec.kind, spec.severity / 5.0, spec.seed);
}

Image toy_scene(std::uint64_t seed, int h, int w) {
    if (h < 16 || w < 16) throw std::invalid_argument("toy_scene: too small");
    Rng rng(mix_seed(seed, hash_str("toy_scene")));
    Image img;
    img.pix = Tensor<double>({h, w, 3});
    const int horizon = static_cast<int>(0.35 * h), road_top = static_cast<int>(0.8 * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double r, g, b;
            if (y < horizon) {
                const double t = static_cast<double>(y) / horizon;
                r = 0.62 + 0.10 * t;
                g = 0.66 + 0.06 * t;
                b = 0.74 - 0.04 * t;
            } else if (y < road_top) {
                const double t = static_cast<double>(y - horizon) / std::max(1, road_top - horizon);
                r = 0.42 - 0.08 * t;
                g = 0.40 - 0.07 * t;
                b = 0.37 - 0.06 * t;
            } else {
                r = 0.30;
                g = 0.30;
                b = 0.31;
            }
            img.pix.at(y, x, 0) = r;
            img.pix.at(y, x, 1) = g;
            img.pix.at(y, x, 2) = b;
        }
    const int nb = 3 + rng.uniform_int(0, 3);
    for (int j = 0; j < nb; ++j) {
        const int bw = 6 + rng.uniform_int(0, std::max(1, w / 6));
        const int x0 = rng.uniform_int(0, std::max(0, w - bw - 1));
        const int bh = static_cast<int>((0.25 + 0.45 * rng.uniform()) * horizon) + horizon / 2;
        const int y0 = std::max(0, horizon - bh);
        const double base = 0.28 + 0.3 * rng.uniform();
        const double dr = 0.24 * (rng.uniform() - 0.5), db = 0.24 * (rng.uniform() - 0.5);
        const int y1 = std::min(road_top, horizon + 4 + rng.uniform_int(0, 5));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < std::min(w, x0 + bw); ++x) {
                img.pix.at(y, x, 0) = base + dr;
                img.pix.at(y, x, 1) = base;
                img.pix.at(y, x, 2) = base + db;
            }
    }
    for (int j = 0; j < 2; ++j) {
        const int cw = 6 + rng.uniform_int(0, 4), ch = 3 + rng.uniform_int(0, 2);
        const int x0 = rng.uniform_int(0, std::max(0, w - cw - 1));
        const int y0 = road_top + rng.uniform_int(0, std::max(0, h - road_top - ch - 1));
        const double base = 0.3 + 0.35 * rng.uniform();
        const double dr = 0.3 * (rng.uniform() - 0.5), db = 0.3 * (rng.uniform() - 0.5);
        for (int y = y0; y < std::min(h, y0 + ch); ++y)
            for (int x = x0; x < std::min(w, x0 + cw); ++x) {
                img.pix.at(y, x, 0) = base + dr;
                img.pix.at(y, x, 1) = base;
                img.pix.at(y, x, 2) = base + db;
            }
    }
    const std::uint64_t tex = mix_seed(seed, hash_str("texture"));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double n = 0.04 * (hash_noise(tex, x, y) - 0.5);
            for (int c = 0; c < 3; ++c) img.pix.at(y, x, c) += n;
        }
    return clamp01(img);
}

DatasetManifest build_dataset(const fs::path& clean_dir, const std::vector<WeatherKind>& kinds,
                              const std::vector<int>& severities, std::uint64_t seed, const fs::path& out_dir) {
    std::vector<fs::path> cleans;
    if (fs::exists(clean_dir))
        for (const auto& e : fs::directory_iterator(clean_dir))
            if (e.path().extension() == ".png") cleans.push_back(e.path());
    if (cleans.empty()) throw std::invalid_argument("build_dataset: no PNG images in " + clean_dir.string());
    std::sort(cleans.begin(), cleans.end());
    if (kinds.empty() || severities.empty()) throw std::invalid_argument("build_dataset: empty kinds/severities");

    fs::create_directories(out_dir / "degraded");
    DatasetManifest m;
    for (const auto& cp : cleans) {
        const Image clean = load_png(cp);
        for (WeatherKind k : kinds)
            for (int sev : severities) {
                const std::string tag = cp.stem().string() + "__" + kind_name(k) + "_s" + std::to_string(sev);
                const std::uint64_t pseed = mix_seed(seed, hash_str(tag));
                WeatherSpec spec{k, sev, pseed};
                const Image deg = synthesize(clean, spec);
                const fs::path dp = out_dir / "degraded" / (tag + ".png");
                save_png(deg, dp);
                DatasetEntry e;
                e.clean = fs::relative(cp, out_dir).string();
                e.degraded = fs::relative(dp, out_dir).string();
                e.kind = kind_name(k);
                e.severity = sev;
                e.seed = pseed;
                m.entries.push_back(std::move(e));
            }
    }
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    json j;
    j["version"] = m.version;
    j["entries"] = json::array();
    for (const auto& e : m.entries)
        j["entries"].push_back({{"clean", e.clean},
                                {"degraded", e.degraded},
                                {"kind", e.kind},
                                {"severity", e.severity},
                                {"seed", e.seed}});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_manifest: cannot write " + path.string());
    f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path.string());
    json j = json::parse(f);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw std::runtime_error("load_manifest: unsupported version");
    for (const auto& je : j.at("entries")) {
        DatasetEntry e;
        e.clean = je.at("clean").get<std::string>();
        e.degraded = je.at("degraded").get<std::string>();
        e.kind = je.at("kind").get<std::string>();
        e.severity = je.at("severity").get<int>();
        e.seed = je.at("seed").get<std::uint64_t>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

fs::path resolve(const fs::path& manifest_path, const std::string& rel) {
    const fs::path p(rel);
    if (p.is_absolute()) return p;
    return manifest_path.parent_path() / p;
}

}  // namespace lcdiff::weathersim
