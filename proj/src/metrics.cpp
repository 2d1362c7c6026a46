#include "lcdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lcdiff::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

double psnr_map(const Tensor<double>& a, const Tensor<double>& b, double peak) {
    if (!a.same_shape(b))
        throw std::invalid_argument("psnr: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Image& a, const Image& b, double peak) { return psnr_map(a.pix, b.pix, peak); }

namespace {

constexpr int kWin = 11;

const std::vector<double>& gauss_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> g(kWin);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += g[static_cast<std::size_t>(i)];
        }
        for (auto& v : g) v /= sum;
        return g;
    }();
    return k;
}

// Separable valid-mode Gaussian filter of an h x w plane -> (h-10) x (w-10).
std::vector<double> blur_valid(const std::vector<double>& p, int h, int w) {
    const auto& k = gauss_kernel();
    const int wv = w - kWin + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * wv, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wv; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += k[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * wv + x] = acc;
        }
    const int hv = h - kWin + 1;
    std::vector<double> out(static_cast<std::size_t>(hv) * wv, 0.0);
    for (int y = 0; y < hv; ++y)
        for (int x = 0; x < wv; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * wv + x];
            out[static_cast<std::size_t>(y) * wv + x] = acc;
        }
    return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w, double peak) {
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = blur_valid(a, h, w);
    const auto mu_b = blur_valid(b, h, w);
    const auto m_aa = blur_valid(aa, h, w);
    const auto m_bb = blur_valid(bb, h, w);
    const auto m_ab = blur_valid(ab, h, w);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        sum += num / den;
    }
    return sum / static_cast<double>(mu_a.size());
}

}  // namespace

double ssim(const Tensor<double>& a, const Tensor<double>& b, double peak) {
    if (!a.same_shape(b))
        throw std::invalid_argument("ssim: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    if (a.ndim() != 2 && a.ndim() != 3)
        throw std::invalid_argument("ssim: expected a 2D or 3D map, got " + shape_str(a));
    const int h = a.dim(0), w = a.dim(1);
    if (h < kWin || w < kWin)
        throw std::invalid_argument("ssim: map " + shape_str(a) + " smaller than the 11x11 window");
    const int c = a.ndim() == 3 ? a.dim(2) : 1;
    std::vector<double> pa(static_cast<std::size_t>(h) * w), pb(pa.size());
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                pa[static_cast<std::size_t>(y) * w + x] = a[(static_cast<std::size_t>(y) * w + x) * c + ch];
                pb[static_cast<std::size_t>(y) * w + x] = b[(static_cast<std::size_t>(y) * w + x) * c + ch];
            }
        total += ssim_plane(pa, pb, h, w, peak);
    }
    return total / c;
}

double ssim(const Image& a, const Image& b, double peak) { return ssim(a.pix, b.pix, peak); }

const std::vector<double>& ssim_window() { return gauss_kernel(); }

MetricReport evaluate(const std::string& restored_dir, const std::string& clean_manifest) {
    std::ifstream in(clean_manifest);
    if (!in) throw std::runtime_error("evaluate: cannot open manifest " + clean_manifest);
    json m = json::parse(in);
    if (!m.contains("entries") || !m["entries"].is_array() || m["entries"].empty())
        throw std::runtime_error("evaluate: manifest has no entries");

    MetricReport rep;
    for (const auto& e : m["entries"]) {
        const std::string degraded = e.at("degraded").get<std::string>();
        const std::string clean = e.at("clean").get<std::string>();
        const std::string kind = e.value("kind", "unknown");
        const fs::path restored = fs::path(restored_dir) / fs::path(degraded).filename();
        // Manifest paths are stored relative to the manifest file itself.
        fs::path cpath(clean);
        if (cpath.is_relative()) cpath = fs::path(clean_manifest).parent_path() / cpath;
        if (!fs::exists(restored)) {
            rep.warnings.push_back("missing restored image: " + restored.string());
            continue;
        }
        if (!fs::exists(cpath)) {
            rep.warnings.push_back("missing clean image: " + cpath.string());
            continue;
        }
        const Image r = load_png(restored.string());
        const Image c = load_png(cpath.string());
        PairScore s;
        s.name = restored.filename().string();
        s.kind = kind;
        s.psnr_db = cap_psnr(psnr(r, c));
        s.ssim = ssim(r, c);
        rep.per_image.push_back(s);
    }
    if (rep.per_image.empty()) throw std::runtime_error("evaluate: no scorable pairs found");

    // Sort by name so aggregates and report bytes are order-independent.
    std::sort(rep.per_image.begin(), rep.per_image.end(),
              [](const PairScore& x, const PairScore& y) { return x.name < y.name; });
    for (const auto& s : rep.per_image) {
        rep.psnr_db += s.psnr_db;
        rep.ssim += s.ssim;
        auto& k = rep.per_kind[s.kind];
        k.psnr_db += s.psnr_db;
        k.ssim += s.ssim;
        k.n += 1;
    }
    rep.n_images = static_cast<int>(rep.per_image.size());
    rep.psnr_db /= rep.n_images;
    rep.ssim /= rep.n_images;
    for (auto& [_, k] : rep.per_kind) {
        k.psnr_db /= k.n;
        k.ssim /= k.n;
    }
    return rep;
}

std::string report_to_json(const MetricReport& r) {
    json j;
    j["overall"] = {{"psnr", r.psnr_db}, {"ssim", r.ssim}};
    json pk = json::object();
    for (const auto& [kind, k] : r.per_kind)
        pk[kind] = {{"psnr", k.psnr_db}, {"ssim", k.ssim}, {"n", k.n}};
    j["per_kind"] = pk;
    j["n_images"] = r.n_images;
    json imgs = json::array();
    for (const auto& s : r.per_image)
        imgs.push_back({{"name", s.name}, {"kind", s.kind}, {"psnr", s.psnr_db}, {"ssim", s.ssim}});
    j["per_image"] = imgs;
    j["warnings"] = r.warnings;
    return j.dump(2) + "\n";
}

std::string report_to_text(const MetricReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "kind            n    PSNR(dB)   SSIM\n";
    for (const auto& [kind, k] : r.per_kind)
        os << std::left << std::setw(15) << kind << std::right << std::setw(3) << k.n
           << std::setw(11) << k.psnr_db << std::setw(8) << k.ssim << "\n";
    os << std::left << std::setw(15) << "overall" << std::right << std::setw(3) << r.n_images
       << std::setw(11) << r.psnr_db << std::setw(8) << r.ssim << "\n";
    for (const auto& wmsg : r.warnings) os << "warning: " << wmsg << "\n";
    return os.str();
}

}  // namespace lcdiff::metrics
