#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <system_error>

#include "lcdiff/image.hpp"
#include "lcdiff/rng.hpp"

namespace testutil {

// Unique scratch directory, removed on scope exit.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            auto p = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directories(p, ec)) {
                path = p;
                return;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline lcdiff::Image random_image(lcdiff::Rng& rng, int h, int w) {
    lcdiff::Image img;
    img.pix = lcdiff::Tensor<double>({h, w, 3});
    for (std::size_t i = 0; i < img.pix.size(); ++i) img.pix[i] = rng.uniform();
    return img;
}

template <typename T>
lcdiff::Tensor<T> random_tensor(lcdiff::Rng& rng, std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
    lcdiff::Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace testutil
