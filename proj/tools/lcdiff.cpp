// lcdiff: batch CLI over the restoration pipeline.
//
// Subcommands: synth, train-lcdn, train-lgdm, restore, eval, swap-exp,
// ablate-k, plot. Exit codes: 0 success, 1 config/usage error, 2 missing
// file or checkpoint dependency, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lcdiff/colorlab.hpp"
#include "lcdiff/config.hpp"
#include "lcdiff/image.hpp"
#include "lcdiff/metrics.hpp"
#include "lcdiff/pipeline.hpp"
#include "lcdiff/schedule.hpp"
#include "lcdiff/train.hpp"
#include "lcdiff/weathersim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lcdiff;

namespace {

// A required input (checkpoint, manifest, image) that is absent. Exit 2.
struct dependency_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw dependency_error(what + " not found: " + p.string());
}

void require_ckpt(const fs::path& p, const std::string& what) {
    if (!is_checkpoint_dir(p)) throw dependency_error(what + " checkpoint missing at " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << s;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::string timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    localtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%d-%H%M%S");
    return os.str();
}

// ---------------------------------------------------------------- SVG plots

struct Series {
    std::string label;
    std::vector<double> x, y;
};

std::string fmt_num(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

// Minimal deterministic line chart; enough for loss curves and omega curves.
std::string svg_line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                           const std::vector<Series>& series, bool log_y = false) {
    const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double yv = log_y ? std::log10(std::max(s.y[i], 1e-12)) : s.y[i];
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, yv);
            ymax = std::max(ymax, yv);
        }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) {
        const double yv = log_y ? std::log10(std::max(y, 1e-12)) : y;
        return H - B - (yv - ymin) / (ymax - ymin) * (H - T - B);
    };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "' viewBox='0 0 "
       << W << " " << H << "'>\n";
    os << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-family='sans-serif' font-size='16'>"
       << title << "</text>\n";
    // axes + ticks
    os << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
       << "' stroke='black'/>\n";
    os << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
       << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        const double tx = px(fx), ty = H - B - (fy - ymin) / (ymax - ymin) * (H - T - B);
        os << "<line x1='" << tx << "' y1='" << H - B << "' x2='" << tx << "' y2='" << H - B + 5
           << "' stroke='black'/>\n";
        os << "<text x='" << tx << "' y='" << H - B + 20
           << "' text-anchor='middle' font-family='sans-serif' font-size='11'>" << fmt_num(fx)
           << "</text>\n";
        os << "<line x1='" << L - 5 << "' y1='" << ty << "' x2='" << L << "' y2='" << ty
           << "' stroke='black'/>\n";
        os << "<text x='" << L - 8 << "' y='" << ty + 4
           << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
           << fmt_num(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
    }
    os << "<text x='" << (L + W - R) / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-family='sans-serif' font-size='13'>" << xlabel << "</text>\n";
    os << "<text x='16' y='" << (T + H - B) / 2
       << "' text-anchor='middle' font-family='sans-serif' font-size='13' transform='rotate(-90 16 "
       << (T + H - B) / 2 << ")'>" << ylabel << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill='none' stroke='" << colors[si % 6] << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << px(s.x[i]) << "," << py(s.y[i]) << (i + 1 < s.x.size() ? " " : "");
        os << "'/>\n";
        if (!s.label.empty())
            os << "<text x='" << W - R - 8 << "' y='" << T + 16 + 16 * static_cast<double>(si)
               << "' text-anchor='end' font-family='sans-serif' font-size='12' fill='" << colors[si % 6]
               << "'>" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& ylabel,
                          const std::vector<std::string>& labels, const std::vector<double>& values) {
    const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 70;
    double ymax = 0.0;
    for (double v : values) ymax = std::max(ymax, v);
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.1;
    const double n = static_cast<double>(values.size());
    const double slot = (W - L - R) / std::max(n, 1.0);
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "' viewBox='0 0 "
       << W << " " << H << "'>\n<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-family='sans-serif' font-size='16'>"
       << title << "</text>\n";
    os << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
       << "' stroke='black'/>\n<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='"
       << H - B << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fy = ymax * i / 4.0;
        const double ty = H - B - fy / ymax * (H - T - B);
        os << "<line x1='" << L - 5 << "' y1='" << ty << "' x2='" << L << "' y2='" << ty
           << "' stroke='black'/>\n<text x='" << L - 8 << "' y='" << ty + 4
           << "' text-anchor='end' font-family='sans-serif' font-size='11'>" << fmt_num(fy) << "</text>\n";
    }
    os << "<text x='16' y='" << (T + H - B) / 2
       << "' text-anchor='middle' font-family='sans-serif' font-size='13' transform='rotate(-90 16 "
       << (T + H - B) / 2 << ")'>" << ylabel << "</text>\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = L + slot * (static_cast<double>(i) + 0.2);
        const double h = values[i] / ymax * (H - T - B);
        os << "<rect x='" << x << "' y='" << H - B - h << "' width='" << slot * 0.6 << "' height='" << h
           << "' fill='#1f77b4'/>\n";
        os << "<text x='" << x + slot * 0.3 << "' y='" << H - B - h - 5
           << "' text-anchor='middle' font-family='sans-serif' font-size='11'>" << fmt_num(values[i])
           << "</text>\n";
        os << "<text x='" << x + slot * 0.3 << "' y='" << H - B + 16
           << "' text-anchor='middle' font-family='sans-serif' font-size='11' transform='rotate(30 "
           << x + slot * 0.3 << " " << H - B + 16 << ")'>" << labels[i] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// ---------------------------------------------------------------- commands

fs::path default_manifest(const RunConfig& cfg, const std::string& given) {
    if (!given.empty()) return given;
    return fs::path(cfg.data_dir) / "manifest.json";
}

int cmd_synth(const RunConfig& cfg, const fs::path& run_dir) {
    const fs::path clean_dir = fs::path(cfg.data_dir) / "clean";
    fs::create_directories(clean_dir);
    for (int i = 0; i < cfg.n_scenes; ++i) {
        const Image scene = weathersim::toy_scene(mix_seed(cfg.seed, hash_str("scene_" + std::to_string(i))),
                                                  cfg.image_size, cfg.image_size);
        std::ostringstream name;
        name << "scene_" << std::setw(2) << std::setfill('0') << i << ".png";
        save_png(scene, (clean_dir / name.str()).string());
    }
    std::vector<weathersim::WeatherKind> kinds;
    for (const auto& k : cfg.effective_kinds()) kinds.push_back(weathersim::kind_from_name(k));
    const auto manifest = weathersim::build_dataset(clean_dir, kinds, cfg.severities, cfg.seed, cfg.data_dir);

    json j;
    j["config_hash"] = config_hash_hex(cfg);
    j["n_scenes"] = cfg.n_scenes;
    j["n_pairs"] = manifest.entries.size();
    j["manifest"] = (fs::path(cfg.data_dir) / "manifest.json").string();
    write_json(run_dir / "synth.json", j);
    std::cout << "synthesized " << cfg.n_scenes << " scenes, " << manifest.entries.size()
              << " degraded pairs\nmanifest: " << (fs::path(cfg.data_dir) / "manifest.json").string() << "\n";
    return 0;
}

int cmd_train_lcdn(const RunConfig& cfg, const fs::path& run_dir, const std::string& manifest_opt) {
    const fs::path manifest = default_manifest(cfg, manifest_opt);
    require_file(manifest, "dataset manifest");
    const auto res = train_lcdn(manifest, cfg, run_dir);
    std::vector<double> xs, ys;
    for (const auto& p : res.history) {
        xs.push_back(static_cast<double>(p.step));
        ys.push_back(p.loss);
    }
    write_text(run_dir / "lcdn-loss.svg",
               svg_line_chart("LCDN training loss", "step", "L_res", {{"", xs, ys}}, true));
    std::cout << "lcdn: initial loss " << res.initial_loss << ", final loss " << res.final_loss
              << "\ncheckpoint: " << res.ckpt_dir.string() << "\n";
    return 0;
}

int cmd_train_lgdm(const RunConfig& cfg, const fs::path& run_dir, const std::string& manifest_opt,
                   const std::string& lcdn_ckpt) {
    const fs::path manifest = default_manifest(cfg, manifest_opt);
    require_file(manifest, "dataset manifest");
    require_ckpt(lcdn_ckpt, "lcdn");
    const auto res = train_lgdm(manifest, lcdn_ckpt, cfg, run_dir);
    std::vector<double> xs, ys;
    for (const auto& p : res.history) {
        xs.push_back(static_cast<double>(p.step));
        ys.push_back(p.loss);
    }
    write_text(run_dir / "lgdm-loss.svg",
               svg_line_chart("LGDM training loss", "step", "L_denoise + L_dts", {{"", xs, ys}}, true));
    std::cout << "lgdm: final loss " << (ys.empty() ? 0.0 : ys.back()) << "\ncheckpoint: "
              << res.ckpt_dir.string() << " (ema inside)\n";
    return 0;
}

int cmd_restore(const RunConfig& cfg, const fs::path& run_dir, const std::string& input,
                const std::string& manifest_opt, const std::string& lcdn_ckpt,
                const std::string& lgdm_ckpt) {
    require_ckpt(lcdn_ckpt, "lcdn");
    LcdnRuntime lcdn_rt(cfg);
    lcdn_rt.load(lcdn_ckpt);
    std::unique_ptr<LgdmRuntime> lgdm_rt;
    if (!lgdm_ckpt.empty()) {
        require_ckpt(lgdm_ckpt, "lgdm");
        lgdm_rt = std::make_unique<LgdmRuntime>(cfg);
        lgdm_rt->load(lgdm_ckpt);
    }
    const int tau = cfg.effective_tau();

    std::vector<fs::path> inputs;
    if (!input.empty()) {
        require_file(input, "input image");
        inputs.emplace_back(input);
    } else {
        const fs::path manifest = default_manifest(cfg, manifest_opt);
        require_file(manifest, "dataset manifest");
        for (const auto& e : weathersim::load_manifest(manifest).entries)
            inputs.push_back(weathersim::resolve(manifest, e.degraded));
    }
    const fs::path out = run_dir / "restored";
    fs::create_directories(out);
    for (const auto& p : inputs) {
        require_file(p, "degraded image");
        const Image deg = load_png(p.string());
        const Image res = restore_image(deg, lcdn_rt, lgdm_rt.get(), tau, cfg.ddim_steps, cfg.eta_ddim,
                                        mix_seed(cfg.seed, hash_str(p.filename().string())));
        save_png(res, (out / p.filename()).string());
    }
    std::cout << "restored " << inputs.size() << " image(s) -> " << out.string() << "\n"
              << "mode: " << (lgdm_rt && tau > 0 ? "lcdn+lgdm tau=" + std::to_string(tau) : "lcdn only")
              << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& run_dir, const std::string& restored,
             const std::string& manifest_opt) {
    const fs::path manifest = default_manifest(cfg, manifest_opt);
    require_file(manifest, "dataset manifest");
    require_file(restored, "restored directory");
    auto rep = metrics::evaluate(restored, manifest.string());
    json j = json::parse(metrics::report_to_json(rep));
    j["config_hash"] = config_hash_hex(cfg);
    write_json(run_dir / "report.json", j);
    write_text(run_dir / "report.txt", metrics::report_to_text(rep));
    std::cout << metrics::report_to_text(rep);
    return 0;
}

int cmd_swap_exp(const RunConfig& cfg, const fs::path& run_dir, const std::string& manifest_opt) {
    const fs::path manifest = default_manifest(cfg, manifest_opt);
    require_file(manifest, "dataset manifest");
    const auto m = weathersim::load_manifest(manifest);

    json rows = json::array();
    std::map<std::string, std::array<double, 4>> kind_acc;  // dy, dcb, dcr, n
    int wins = 0;
    std::ostringstream table;
    table << std::fixed << std::setprecision(3);
    table << "pair                          kind         sev  PSNR(clean-Y)  PSNR(deg-Y)  clean-Y wins\n";
    for (const auto& e : m.entries) {
        const Image clean = load_png(weathersim::resolve(manifest, e.clean).string());
        const Image deg = load_png(weathersim::resolve(manifest, e.degraded).string());
        const auto cycc = colorlab::rgb_to_ycbcr(clean);
        const auto dycc = colorlab::rgb_to_ycbcr(deg);
        // (clean chroma + degraded Y, degraded chroma + clean Y)
        const auto [deg_y_hybrid, clean_y_hybrid] = colorlab::swap_luminance(cycc, dycc);
        const double psnr_clean_y = metrics::cap_psnr(metrics::psnr(colorlab::ycbcr_to_rgb(clean_y_hybrid), clean));
        const double psnr_deg_y = metrics::cap_psnr(metrics::psnr(colorlab::ycbcr_to_rgb(deg_y_hybrid), clean));

        double dy = 0, dcb = 0, dcr = 0;
        const int h = clean.height(), w = clean.width();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                dy += std::abs(cycc.lum.at(y, x, 0) - dycc.lum.at(y, x, 0));
                dcb += std::abs(cycc.chrom.at(y, x, 0) - dycc.chrom.at(y, x, 0));
                dcr += std::abs(cycc.chrom.at(y, x, 1) - dycc.chrom.at(y, x, 1));
            }
        const double n = static_cast<double>(h) * w;
        dy /= n;
        dcb /= n;
        dcr /= n;
        const bool win = psnr_clean_y > psnr_deg_y;
        wins += win ? 1 : 0;
        auto& acc = kind_acc[e.kind];
        acc[0] += dy;
        acc[1] += dcb;
        acc[2] += dcr;
        acc[3] += 1.0;

        const std::string name = fs::path(e.degraded).stem().string();
        rows.push_back({{"name", name},
                        {"kind", e.kind},
                        {"severity", e.severity},
                        {"psnr_clean_y", psnr_clean_y},
                        {"psnr_deg_y", psnr_deg_y},
                        {"mean_abs_dy", dy},
                        {"mean_abs_dcb", dcb},
                        {"mean_abs_dcr", dcr},
                        {"clean_y_wins", win}});
        table << std::left << std::setw(30) << name << std::setw(13) << e.kind << std::right
              << std::setw(3) << e.severity << std::setw(15) << psnr_clean_y << std::setw(13) << psnr_deg_y
              << std::setw(14) << (win ? "yes" : "NO") << "\n";
    }

    json per_kind = json::object();
    std::ostringstream dom;
    dom << std::fixed << std::setprecision(4);
    dom << "\nkind         mean|dY|   mean|dCb|+|dCr|   luminance-dominant\n";
    for (const auto& [kind, acc] : kind_acc) {
        const double dy = acc[0] / acc[3], dc = (acc[1] + acc[2]) / acc[3];
        per_kind[kind] = {{"mean_abs_dy", dy}, {"mean_abs_dchroma", dc}, {"dominant", dy > dc}};
        dom << std::left << std::setw(12) << kind << std::right << std::setw(9) << dy << std::setw(18) << dc
            << std::setw(21) << (dy > dc ? "yes" : "NO") << "\n";
    }

    json j;
    j["config_hash"] = config_hash_hex(cfg);
    j["n_pairs"] = m.entries.size();
    j["clean_y_wins"] = wins;
    j["rows"] = rows;
    j["per_kind"] = per_kind;
    write_json(run_dir / "swap-exp.json", j);
    const std::string txt = table.str() + dom.str() +
                            "\nclean-Y hybrid wins " + std::to_string(wins) + "/" +
                            std::to_string(m.entries.size()) + " pairs\n";
    write_text(run_dir / "swap-exp.txt", txt);
    std::cout << txt;
    return 0;
}

int cmd_ablate_k(RunConfig cfg, const fs::path& run_dir, const std::string& manifest_opt,
                 const std::string& lcdn_ckpt, const std::vector<double>& ks) {
    const fs::path manifest = default_manifest(cfg, manifest_opt);
    require_file(manifest, "dataset manifest");
    require_ckpt(lcdn_ckpt, "lcdn");
    const auto m = weathersim::load_manifest(manifest);
    const int tau = cfg.effective_tau();

    LcdnRuntime lcdn_rt(cfg);
    lcdn_rt.load(lcdn_ckpt);

    json j;
    j["ks"] = ks;
    j["rows"] = json::array();
    std::vector<Series> omega_curves;
    std::vector<std::string> bar_labels;
    std::vector<double> bar_psnr, bar_ssim;
    std::ostringstream table;
    table << std::fixed << std::setprecision(3);
    table << "    k   PSNR(dB)    SSIM\n";
    for (double k : ks) {
        RunConfig ck = cfg;
        ck.dts_k = k;
        std::ostringstream kdir;
        kdir << "k" << std::setprecision(3) << k;
        const fs::path sub = run_dir / kdir.str();
        const auto res = train_lgdm(manifest, lcdn_ckpt, ck, sub);

        LgdmRuntime lgdm_rt(ck);
        lgdm_rt.load(res.ckpt_dir);
        const fs::path out = sub / "restored";
        fs::create_directories(out);
        for (const auto& e : m.entries) {
            const fs::path p = weathersim::resolve(manifest, e.degraded);
            const Image deg = load_png(p.string());
            const Image r = restore_image(deg, lcdn_rt, &lgdm_rt, tau, ck.ddim_steps, ck.eta_ddim,
                                          mix_seed(ck.seed, hash_str(p.filename().string())));
            save_png(r, (out / p.filename()).string());
        }
        const auto rep = metrics::evaluate(out.string(), manifest.string());
        j["rows"].push_back({{"k", k}, {"psnr", rep.psnr_db}, {"ssim", rep.ssim}});
        table << std::setw(5) << fmt_num(k) << std::setw(11) << rep.psnr_db << std::setw(8) << rep.ssim << "\n";
        bar_labels.push_back("k=" + fmt_num(k));
        bar_psnr.push_back(rep.psnr_db);
        bar_ssim.push_back(rep.ssim);

        Series s;
        s.label = "k=" + fmt_num(k);
        for (int t = 0; t <= cfg.T; t += std::max(1, cfg.T / 64)) {
            s.x.push_back(static_cast<double>(t));
            s.y.push_back(lgdm::omega(static_cast<double>(t), static_cast<double>(cfg.T), k));
        }
        omega_curves.push_back(std::move(s));
    }

    json oc = json::array();
    for (const auto& s : omega_curves) oc.push_back({{"label", s.label}, {"t", s.x}, {"omega", s.y}});
    j["omega_curves"] = oc;
    j["config_hash"] = config_hash_hex(cfg);
    write_json(run_dir / "ablate.json", j);
    write_text(run_dir / "ablate.txt", table.str());
    write_text(run_dir / "ablate-psnr.svg", svg_bar_chart("PSNR vs k", "PSNR (dB)", bar_labels, bar_psnr));
    write_text(run_dir / "ablate-ssim.svg", svg_bar_chart("SSIM vs k", "SSIM", bar_labels, bar_ssim));
    write_text(run_dir / "omega.svg",
               svg_line_chart("omega_t = exp(-k t / T)", "t", "omega", omega_curves));
    std::cout << table.str() << "artifacts: " << (run_dir / "ablate.json").string() << "\n";
    return 0;
}

int cmd_plot(const RunConfig&, const fs::path& run_dir, const std::vector<std::string>& histories,
             const std::vector<std::string>& reports) {
    if (histories.empty() && reports.empty())
        throw std::invalid_argument("plot: pass --history and/or --report files");
    std::vector<std::string> written;
    for (const auto& hp : histories) {
        require_file(hp, "history file");
        std::ifstream f(hp);
        const json h = json::parse(f);
        Series s;
        for (const auto& p : h.at("points")) {
            s.x.push_back(p.at("step").get<double>());
            s.y.push_back(p.at("loss").get<double>());
        }
        const std::string label = h.value("label", fs::path(hp).stem().string());
        const fs::path out = run_dir / (label + "-loss.svg");
        write_text(out, svg_line_chart(label + " training loss", "step", "loss", {s}, true));
        written.push_back(out.string());
    }
    for (const auto& rp : reports) {
        require_file(rp, "report file");
        std::ifstream f(rp);
        const json r = json::parse(f);
        std::vector<std::string> labels;
        std::vector<double> psnr, ssim;
        for (const auto& [kind, v] : r.at("per_kind").items()) {
            labels.push_back(kind);
            psnr.push_back(v.at("psnr").get<double>());
            ssim.push_back(v.at("ssim").get<double>());
        }
        labels.push_back("overall");
        psnr.push_back(r.at("overall").at("psnr").get<double>());
        ssim.push_back(r.at("overall").at("ssim").get<double>());
        const std::string stem = fs::path(rp).stem().string();
        const fs::path p1 = run_dir / (stem + "-psnr.svg"), p2 = run_dir / (stem + "-ssim.svg");
        write_text(p1, svg_bar_chart("PSNR by kind", "PSNR (dB)", labels, psnr));
        write_text(p2, svg_bar_chart("SSIM by kind", "SSIM", labels, ssim));
        written.push_back(p1.string());
        written.push_back(p2.string());
    }
    for (const auto& w : written) std::cout << "wrote " << w << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lcdiff: luminance-chroma decomposition + diffusion adverse-weather restoration"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML run configuration");
    app.allow_config_extras(CLI::config_extras_mode::error);

    RunConfig cfg;
    bind_config(app, cfg);
    std::string out_root = "runs";
    std::string run_name;
    app.add_option("--out", out_root, "output root directory (env LCDIFF_OUT overrides)");
    app.add_option("--run-name", run_name, "fixed run directory name (default: <confighash8>-<timestamp>)");

    auto* synth = app.add_subcommand("synth", "synthesize toy scenes and weather-degraded pairs");

    std::string manifest_opt, lcdn_ckpt, lgdm_ckpt, input, restored_dir;
    int steps_override = 0;
    double k_override = 0.0;

    auto* tl = app.add_subcommand("train-lcdn", "train the coarse restorer");
    tl->add_option("--manifest", manifest_opt, "dataset manifest (default <data-dir>/manifest.json)");
    auto* tl_steps = tl->add_option("--steps", steps_override, "override lcdn training steps");

    auto* tg = app.add_subcommand("train-lgdm", "train the diffusion refiner against a frozen lcdn");
    tg->add_option("--manifest", manifest_opt, "dataset manifest");
    tg->add_option("--lcdn-ckpt", lcdn_ckpt, "lcdn checkpoint directory")->required();
    auto* tg_steps = tg->add_option("--steps", steps_override, "override lgdm training steps");
    auto* tg_k = tg->add_option("--k", k_override, "override the dts weight k");

    auto* rs = app.add_subcommand("restore", "restore one image or every manifest pair");
    rs->add_option("--input", input, "single degraded png (default: all manifest pairs)");
    rs->add_option("--manifest", manifest_opt, "dataset manifest");
    rs->add_option("--lcdn-ckpt", lcdn_ckpt, "lcdn checkpoint directory")->required();
    rs->add_option("--lgdm-ckpt", lgdm_ckpt, "lgdm checkpoint directory (omit for lcdn-only)");

    auto* ev = app.add_subcommand("eval", "score restored images against manifest cleans");
    ev->add_option("--restored", restored_dir, "directory of restored pngs")->required();
    ev->add_option("--manifest", manifest_opt, "dataset manifest");

    auto* sw = app.add_subcommand("swap-exp", "luminance-swap hybrids: which channel carries the weather?");
    sw->add_option("--manifest", manifest_opt, "dataset manifest");

    std::vector<double> ks{0, 1, 3, 5, 7};
    auto* ab = app.add_subcommand("ablate-k", "sweep the dts weight k, train+restore+eval per value");
    ab->add_option("--manifest", manifest_opt, "dataset manifest");
    ab->add_option("--lcdn-ckpt", lcdn_ckpt, "lcdn checkpoint directory")->required();
    ab->add_option("--ks", ks, "k values to sweep");
    auto* ab_steps = ab->add_option("--steps", steps_override, "override lgdm steps per k");

    std::vector<std::string> histories, reports;
    auto* pl = app.add_subcommand("plot", "render loss curves / metric bars to svg");
    pl->add_option("--history", histories, "training history json files");
    pl->add_option("--report", reports, "eval report json files");

    for (auto* sub : {synth, tl, tg, rs, ev, sw, ab, pl}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (tl_steps->count()) cfg.lcdn_steps = steps_override;
        if (tg_steps->count() || ab_steps->count()) cfg.lgdm_steps = steps_override;
        if (tg_k->count()) cfg.dts_k = k_override;
        cfg.validate();

        if (const char* env = std::getenv("LCDIFF_OUT")) out_root = env;
        const std::string dir_name =
            run_name.empty() ? config_hash_hex(cfg).substr(0, 8) + "-" + timestamp() : run_name;
        const fs::path run_dir = fs::path(out_root) / dir_name;
        fs::create_directories(run_dir);
        std::cout << "run dir: " << run_dir.string() << "\n";

        if (app.got_subcommand(synth)) return cmd_synth(cfg, run_dir);
        if (app.got_subcommand(tl)) return cmd_train_lcdn(cfg, run_dir, manifest_opt);
        if (app.got_subcommand(tg)) return cmd_train_lgdm(cfg, run_dir, manifest_opt, lcdn_ckpt);
        if (app.got_subcommand(rs)) return cmd_restore(cfg, run_dir, input, manifest_opt, lcdn_ckpt, lgdm_ckpt);
        if (app.got_subcommand(ev)) return cmd_eval(cfg, run_dir, restored_dir, manifest_opt);
        if (app.got_subcommand(sw)) return cmd_swap_exp(cfg, run_dir, manifest_opt);
        if (app.got_subcommand(ab)) return cmd_ablate_k(cfg, run_dir, manifest_opt, lcdn_ckpt, ks);
        if (app.got_subcommand(pl)) return cmd_plot(cfg, run_dir, histories, reports);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const dependency_error& e) {
        std::cerr << "missing dependency: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
