#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lcdiff/freqlab.hpp"
#include "lcdiff/rng.hpp"
#include "lcdiff/tensor.hpp"

namespace lcdiff {

// Training-time failure (NaN loss, divergent activations). CLI maps it to exit 3.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace ad {

// Named parameter collection. Owns values and gradient accumulators; networks
// hold indices into a store so one optimizer can drive several subnetworks.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    int add(const std::string& name, Tensor<T> init) {
        for (const auto& e : entries_)
            if (e.name == name) throw std::invalid_argument("ParamStore: duplicate name " + name);
        entries_.push_back(Entry{name, std::move(init), {}});
        auto& e = entries_.back();
        e.grad = Tensor<T>(e.value.shape());
        return static_cast<int>(entries_.size()) - 1;
    }

    Entry& at(int i) { return entries_[static_cast<std::size_t>(i)]; }
    const Entry& at(int i) const { return entries_[static_cast<std::size_t>(i)]; }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

    bool values_finite() const {
        for (const auto& e : entries_)
            if (!all_finite(e.value)) return false;
        return true;
    }

private:
    std::vector<Entry> entries_;
};

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first touch during backward
    std::function<void()> back;
    bool needs_grad = false;

    Tensor<T>& g() {
        if (grad.empty()) grad = Tensor<T>(val.shape());
        return grad;
    }
};

// Dynamic tape: nodes are appended in topological order, so reverse creation
// order is a valid backward schedule. One tape per training step / forward call.
template <typename T>
class Tape {
public:
    using Ref = Node<T>*;

    Ref constant(Tensor<T> v) { return make(std::move(v), false); }

    Ref input(Tensor<T> v) { return make(std::move(v), true); }

    Ref param(typename ParamStore<T>::Entry& e) {
        Ref n = make(e.value, true);
        hooks_.push_back({&e, n});
        return n;
    }

    void backward(Ref loss) {
        if (loss->val.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        loss->g()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>* n = it->get();
            if (n->needs_grad && n->back && !n->grad.empty()) n->back();
        }
        for (auto& h : hooks_)
            if (!h.node->grad.empty()) h.entry->grad += h.node->grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- elementwise ----

    Ref add(Ref a, Ref b) { return binary(a, b, Bin::Add); }
    Ref sub(Ref a, Ref b) { return binary(a, b, Bin::Sub); }
    Ref mul(Ref a, Ref b) { return binary(a, b, Bin::Mul); }
    Ref div(Ref a, Ref b) { return binary(a, b, Bin::Div); }

    Ref scale(Ref a, double s) {
        Tensor<T> v(a->val.shape());
        const T ts = static_cast<T>(s);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] * ts;
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, ts] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i] * ts;
        };
        return n;
    }

    Ref add_scalar(Ref a, double s) {
        Tensor<T> v(a->val.shape());
        const T ts = static_cast<T>(s);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] + ts;
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i];
        };
        return n;
    }

    Ref relu(Ref a) {
        Tensor<T> v(a->val.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] > T(0) ? a->val[i] : T(0);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (a->val[i] > T(0)) ga[i] += n->grad[i];
        };
        return n;
    }

    Ref sigmoid(Ref a) {
        Tensor<T> v(a->val.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(1) / (T(1) + std::exp(-a->val[i]));
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const T s = n->val[i];
                ga[i] += n->grad[i] * s * (T(1) - s);
            }
        };
        return n;
    }

    Ref silu(Ref a) { return mul(a, sigmoid(a)); }

    Ref abs(Ref a) {
        Tensor<T> v(a->val.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(a->val[i]);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                if (a->val[i] > T(0)) ga[i] += n->grad[i];
                else if (a->val[i] < T(0)) ga[i] -= n->grad[i];
            }
        };
        return n;
    }

    Ref clamp(Ref a, double lo, double hi) {
        Tensor<T> v(a->val.shape());
        const T tlo = static_cast<T>(lo), thi = static_cast<T>(hi);
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = a->val[i] < tlo ? tlo : (a->val[i] > thi ? thi : a->val[i]);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, tlo, thi] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (a->val[i] > tlo && a->val[i] < thi) ga[i] += n->grad[i];
        };
        return n;
    }

    // Per-position LayerNorm across channels with per-channel affine:
    // y = gamma_c * (x - mu) / sqrt(var + eps) + beta_c. Keeps the residual
    // stream bounded so gated blocks cannot amplify run-away activations.
    Ref layer_norm(Ref x, Ref gamma, Ref beta, double eps = 1e-5) {
        const int h = x->val.dim(0), w = x->val.dim(1), c = x->val.dim(2);
        if (gamma->val.size() != static_cast<std::size_t>(c) || beta->val.size() != gamma->val.size())
            throw std::invalid_argument("layer_norm: affine size does not match channels");
        Tensor<T> v({h, w, c});
        Tensor<T> xhat({h, w, c});
        Tensor<T> istd({h, w, 1});
        const T te = static_cast<T>(eps);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const T* xp = &x->val.at(y, xx, 0);
                T mu = 0;
                for (int ch = 0; ch < c; ++ch) mu += xp[ch];
                mu /= static_cast<T>(c);
                T var = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const T d = xp[ch] - mu;
                    var += d * d;
                }
                var /= static_cast<T>(c);
                const T is = T(1) / std::sqrt(var + te);
                istd.at(y, xx, 0) = is;
                T* vp = &v.at(y, xx, 0);
                T* hp = &xhat.at(y, xx, 0);
                for (int ch = 0; ch < c; ++ch) {
                    hp[ch] = (xp[ch] - mu) * is;
                    vp[ch] = gamma->val[static_cast<std::size_t>(ch)] * hp[ch] +
                             beta->val[static_cast<std::size_t>(ch)];
                }
            }
        Ref n = make(std::move(v), x->needs_grad || gamma->needs_grad || beta->needs_grad);
        if (n->needs_grad) {
            auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
            auto si = std::make_shared<Tensor<T>>(std::move(istd));
            n->back = [n, x, gamma, beta, xh, si, h, w, c] {
                Tensor<T>* gx = x->needs_grad ? &x->g() : nullptr;
                Tensor<T>* gg = gamma->needs_grad ? &gamma->g() : nullptr;
                Tensor<T>* gb = beta->needs_grad ? &beta->g() : nullptr;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const T* gp = &n->grad.at(y, xx, 0);
                        const T* hp = &xh->at(y, xx, 0);
                        if (gg)
                            for (int ch = 0; ch < c; ++ch)
                                (*gg)[static_cast<std::size_t>(ch)] += gp[ch] * hp[ch];
                        if (gb)
                            for (int ch = 0; ch < c; ++ch) (*gb)[static_cast<std::size_t>(ch)] += gp[ch];
                        if (gx) {
                            T mg = 0, mgh = 0;
                            for (int ch = 0; ch < c; ++ch) {
                                const T gy = gp[ch] * gamma->val[static_cast<std::size_t>(ch)];
                                mg += gy;
                                mgh += gy * hp[ch];
                            }
                            mg /= static_cast<T>(c);
                            mgh /= static_cast<T>(c);
                            const T is = si->at(y, xx, 0);
                            T* gxp = &gx->at(y, xx, 0);
                            for (int ch = 0; ch < c; ++ch) {
                                const T gy = gp[ch] * gamma->val[static_cast<std::size_t>(ch)];
                                gxp[ch] += (gy - mg - hp[ch] * mgh) * is;
                            }
                        }
                    }
            };
        }
        return n;
    }

    // ---- reductions / shape ----

    Ref mean_all(Ref a) {
        Tensor<T> v({1});
        T acc = 0;
        for (std::size_t i = 0; i < a->val.size(); ++i) acc += a->val[i];
        v[0] = acc / static_cast<T>(a->val.size());
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a] {
            auto& ga = a->g();
            const T s = n->grad[0] / static_cast<T>(ga.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        };
        return n;
    }

    Ref reshape(Ref a, std::vector<int> shape) {
        Tensor<T> v = Tensor<T>::from(shape, std::vector<T>(a->val.data(), a->val.data() + a->val.size()));
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a] {
            auto& ga = a->g();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i];
        };
        return n;
    }

    // {H,W,C} -> {C, H*W}; rows are channel tokens, columns flattened space.
    Ref channels_to_rows(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        Tensor<T> v({c, h * w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) v.at(ch, y * w + x) = a->val.at(y, x, ch);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c] {
            auto& ga = a->g();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < c; ++ch) ga.at(y, x, ch) += n->grad.at(ch, y * w + x);
        };
        return n;
    }

    Ref rows_to_channels(Ref a, int h, int w) {
        const int c = a->val.dim(0);
        if (a->val.dim(1) != h * w)
            throw std::invalid_argument("rows_to_channels: column count does not match h*w");
        Tensor<T> v({h, w, c});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) v.at(y, x, ch) = a->val.at(ch, y * w + x);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c] {
            auto& ga = a->g();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < c; ++ch) ga.at(ch, y * w + x) += n->grad.at(y, x, ch);
        };
        return n;
    }

    Ref concat_c(Ref a, Ref b) {
        const int h = a->val.dim(0), w = a->val.dim(1), ca = a->val.dim(2), cb = b->val.dim(2);
        if (b->val.dim(0) != h || b->val.dim(1) != w)
            throw std::invalid_argument("concat_c: spatial dims differ");
        Tensor<T> v({h, w, ca + cb});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                for (int ch = 0; ch < ca; ++ch) v.at(y, x, ch) = a->val.at(y, x, ch);
                for (int ch = 0; ch < cb; ++ch) v.at(y, x, ca + ch) = b->val.at(y, x, ch);
            }
        Ref n = make(std::move(v), a->needs_grad || b->needs_grad);
        if (n->needs_grad) n->back = [n, a, b, h, w, ca, cb] {
            if (a->needs_grad) {
                auto& ga = a->g();
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        for (int ch = 0; ch < ca; ++ch) ga.at(y, x, ch) += n->grad.at(y, x, ch);
            }
            if (b->needs_grad) {
                auto& gb = b->g();
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        for (int ch = 0; ch < cb; ++ch) gb.at(y, x, ch) += n->grad.at(y, x, ca + ch);
            }
        };
        return n;
    }

    Ref slice_c(Ref a, int c0, int c1) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        if (!(0 <= c0 && c0 < c1 && c1 <= c)) throw std::invalid_argument("slice_c: bad channel range");
        Tensor<T> v({h, w, c1 - c0});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = c0; ch < c1; ++ch) v.at(y, x, ch - c0) = a->val.at(y, x, ch);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c0, c1] {
            auto& ga = a->g();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = c0; ch < c1; ++ch) ga.at(y, x, ch) += n->grad.at(y, x, ch - c0);
        };
        return n;
    }

    // ---- pooling / resampling ----

    Ref channel_max(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        Tensor<T> v({h, w, 1});
        auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int best = 0;
                T bv = a->val.at(y, x, 0);
                for (int ch = 1; ch < c; ++ch)
                    if (a->val.at(y, x, ch) > bv) {
                        bv = a->val.at(y, x, ch);
                        best = ch;
                    }
                v.at(y, x, 0) = bv;
                (*arg)[static_cast<std::size_t>(y) * w + x] = best;
            }
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, arg, h, w] {
            auto& ga = a->g();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    ga.at(y, x, (*arg)[static_cast<std::size_t>(y) * w + x]) += n->grad.at(y, x, 0);
        };
        return n;
    }

    Ref channel_mean(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        Tensor<T> v({h, w, 1});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T acc = 0;
                for (int ch = 0; ch < c; ++ch) acc += a->val.at(y, x, ch);
                v.at(y, x, 0) = acc / static_cast<T>(c);
            }
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c] {
            auto& ga = a->g();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const T s = n->grad.at(y, x, 0) / static_cast<T>(c);
                    for (int ch = 0; ch < c; ++ch) ga.at(y, x, ch) += s;
                }
        };
        return n;
    }

    Ref global_avg_pool(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        Tensor<T> v({1, 1, c});
        for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) acc += a->val.at(y, x, ch);
            v.at(0, 0, ch) = acc / static_cast<T>(h * w);
        }
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c] {
            auto& ga = a->g();
            for (int ch = 0; ch < c; ++ch) {
                const T s = n->grad.at(0, 0, ch) / static_cast<T>(h * w);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) ga.at(y, x, ch) += s;
            }
        };
        return n;
    }

    Ref global_max_pool(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        Tensor<T> v({1, 1, c});
        auto arg = std::make_shared<std::vector<std::pair<int, int>>>(static_cast<std::size_t>(c));
        for (int ch = 0; ch < c; ++ch) {
            T bv = a->val.at(0, 0, ch);
            int by = 0, bx = 0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (a->val.at(y, x, ch) > bv) {
                        bv = a->val.at(y, x, ch);
                        by = y;
                        bx = x;
                    }
            v.at(0, 0, ch) = bv;
            (*arg)[static_cast<std::size_t>(ch)] = {by, bx};
        }
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, arg, c] {
            auto& ga = a->g();
            for (int ch = 0; ch < c; ++ch) {
                auto [y, x] = (*arg)[static_cast<std::size_t>(ch)];
                ga.at(y, x, ch) += n->grad.at(0, 0, ch);
            }
        };
        return n;
    }

    Ref avg_pool2(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd dims");
        Tensor<T> v({h / 2, w / 2, c});
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x)
                for (int ch = 0; ch < c; ++ch)
                    v.at(y, x, ch) = (a->val.at(2 * y, 2 * x, ch) + a->val.at(2 * y, 2 * x + 1, ch) +
                                      a->val.at(2 * y + 1, 2 * x, ch) + a->val.at(2 * y + 1, 2 * x + 1, ch)) /
                                     T(4);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c] {
            auto& ga = a->g();
            for (int y = 0; y < h / 2; ++y)
                for (int x = 0; x < w / 2; ++x)
                    for (int ch = 0; ch < c; ++ch) {
                        const T s = n->grad.at(y, x, ch) / T(4);
                        ga.at(2 * y, 2 * x, ch) += s;
                        ga.at(2 * y, 2 * x + 1, ch) += s;
                        ga.at(2 * y + 1, 2 * x, ch) += s;
                        ga.at(2 * y + 1, 2 * x + 1, ch) += s;
                    }
        };
        return n;
    }

    Ref upsample_nearest2(Ref a) {
        const int h = a->val.dim(0), w = a->val.dim(1), c = a->val.dim(2);
        Tensor<T> v({2 * h, 2 * w, c});
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
                for (int ch = 0; ch < c; ++ch) v.at(y, x, ch) = a->val.at(y / 2, x / 2, ch);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, h, w, c] {
            auto& ga = a->g();
            for (int y = 0; y < 2 * h; ++y)
                for (int x = 0; x < 2 * w; ++x)
                    for (int ch = 0; ch < c; ++ch) ga.at(y / 2, x / 2, ch) += n->grad.at(y, x, ch);
        };
        return n;
    }

    // ---- convolutions ----

    // x {H,W,Cin}, w {Kh,Kw,Cin,Cout}, optional bias {Cout}; stride 1, zero
    // padding "same" (odd kernels).
    Ref conv2d(Ref x, Ref w, Ref b = nullptr) {
        const int h = x->val.dim(0), ww = x->val.dim(1), ci = x->val.dim(2);
        const int kh = w->val.dim(0), kw = w->val.dim(1), co = w->val.dim(3);
        if (w->val.dim(2) != ci)
            throw std::invalid_argument("conv2d: weight Cin " + std::to_string(w->val.dim(2)) +
                                        " does not match input C " + std::to_string(ci));
        if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernels must be odd");
        const int ph = kh / 2, pw = kw / 2;
        Tensor<T> v({h, ww, co});
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < ww; ++xx) {
                T* op = &v.at(y, xx, 0);
                if (b) {
                    const T* bp = b->val.data();
                    for (int k = 0; k < co; ++k) op[k] = bp[k];
                }
                for (int ky = 0; ky < kh; ++ky) {
                    const int yi = y + ky - ph;
                    if (yi < 0 || yi >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int xi = xx + kx - pw;
                        if (xi < 0 || xi >= ww) continue;
                        const T* xp = &x->val.at(yi, xi, 0);
                        for (int c = 0; c < ci; ++c) {
                            const T xv = xp[c];
                            const T* wp = &w->val.at(ky, kx, c, 0);
                            for (int k = 0; k < co; ++k) op[k] += xv * wp[k];
                        }
                    }
                }
            }
        Ref n = make(std::move(v), x->needs_grad || w->needs_grad || (b && b->needs_grad));
        if (n->needs_grad) n->back = [n, x, w, b, h, ww, ci, kh, kw, co, ph, pw] {
            Tensor<T>* gx = x->needs_grad ? &x->g() : nullptr;
            Tensor<T>* gw = w->needs_grad ? &w->g() : nullptr;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < ww; ++xx) {
                    const T* gp = &n->grad.at(y, xx, 0);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int yi = y + ky - ph;
                        if (yi < 0 || yi >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xi = xx + kx - pw;
                            if (xi < 0 || xi >= ww) continue;
                            const T* xp = &x->val.at(yi, xi, 0);
                            T* gxp = gx ? &gx->at(yi, xi, 0) : nullptr;
                            for (int c = 0; c < ci; ++c) {
                                const T* wp = &w->val.at(ky, kx, c, 0);
                                T acc = 0;
                                if (gw) {
                                    T* gwp = &gw->at(ky, kx, c, 0);
                                    const T xv = xp[c];
                                    for (int k = 0; k < co; ++k) {
                                        acc += gp[k] * wp[k];
                                        gwp[k] += xv * gp[k];
                                    }
                                } else {
                                    for (int k = 0; k < co; ++k) acc += gp[k] * wp[k];
                                }
                                if (gxp) gxp[c] += acc;
                            }
                        }
                    }
                }
            if (b && b->needs_grad) {
                auto& gb = b->g();
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < ww; ++xx) {
                        const T* gp = &n->grad.at(y, xx, 0);
                        for (int k = 0; k < co; ++k) gb[static_cast<std::size_t>(k)] += gp[k];
                    }
            }
        };
        return n;
    }

    // Depthwise conv: x {H,W,C}, w {Kh,Kw,C}, optional bias {C}; same padding.
    Ref dwconv2d(Ref x, Ref w, Ref b = nullptr) {
        const int h = x->val.dim(0), ww = x->val.dim(1), c = x->val.dim(2);
        const int kh = w->val.dim(0), kw = w->val.dim(1);
        if (w->val.dim(2) != c) throw std::invalid_argument("dwconv2d: channel mismatch");
        if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("dwconv2d: kernels must be odd");
        const int ph = kh / 2, pw = kw / 2;
        Tensor<T> v({h, ww, c});
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < ww; ++xx) {
                T* op = &v.at(y, xx, 0);
                if (b)
                    for (int k = 0; k < c; ++k) op[k] = b->val[static_cast<std::size_t>(k)];
                for (int ky = 0; ky < kh; ++ky) {
                    const int yi = y + ky - ph;
                    if (yi < 0 || yi >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int xi = xx + kx - pw;
                        if (xi < 0 || xi >= ww) continue;
                        const T* xp = &x->val.at(yi, xi, 0);
                        const T* wp = &w->val.at(ky, kx, 0);
                        for (int k = 0; k < c; ++k) op[k] += xp[k] * wp[k];
                    }
                }
            }
        Ref n = make(std::move(v), x->needs_grad || w->needs_grad || (b && b->needs_grad));
        if (n->needs_grad) n->back = [n, x, w, b, h, ww, c, kh, kw, ph, pw] {
            Tensor<T>* gx = x->needs_grad ? &x->g() : nullptr;
            Tensor<T>* gw = w->needs_grad ? &w->g() : nullptr;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < ww; ++xx) {
                    const T* gp = &n->grad.at(y, xx, 0);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int yi = y + ky - ph;
                        if (yi < 0 || yi >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xi = xx + kx - pw;
                            if (xi < 0 || xi >= ww) continue;
                            const T* xp = &x->val.at(yi, xi, 0);
                            const T* wp = &w->val.at(ky, kx, 0);
                            if (gx) {
                                T* gxp = &gx->at(yi, xi, 0);
                                for (int k = 0; k < c; ++k) gxp[k] += gp[k] * wp[k];
                            }
                            if (gw) {
                                T* gwp = &gw->at(ky, kx, 0);
                                for (int k = 0; k < c; ++k) gwp[k] += gp[k] * xp[k];
                            }
                        }
                    }
                }
            if (b && b->needs_grad) {
                auto& gb = b->g();
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < ww; ++xx) {
                        const T* gp = &n->grad.at(y, xx, 0);
                        for (int k = 0; k < c; ++k) gb[static_cast<std::size_t>(k)] += gp[k];
                    }
            }
        };
        return n;
    }

    // Separable valid-mode filter with a fixed 1D kernel applied to rows then
    // columns of each channel (the SSIM Gaussian window).
    Ref sep_filter_valid(Ref x, const std::vector<T>& k1d) {
        const int h = x->val.dim(0), w = x->val.dim(1), c = x->val.dim(2);
        const int kn = static_cast<int>(k1d.size());
        if (h < kn || w < kn) throw std::invalid_argument("sep_filter_valid: map smaller than kernel");
        const int wv = w - kn + 1, hv = h - kn + 1;
        Tensor<T> rows({h, wv, c});
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wv; ++xx)
                for (int ch = 0; ch < c; ++ch) {
                    T acc = 0;
                    for (int i = 0; i < kn; ++i) acc += k1d[static_cast<std::size_t>(i)] * x->val.at(y, xx + i, ch);
                    rows.at(y, xx, ch) = acc;
                }
        Tensor<T> v({hv, wv, c});
        for (int y = 0; y < hv; ++y)
            for (int xx = 0; xx < wv; ++xx)
                for (int ch = 0; ch < c; ++ch) {
                    T acc = 0;
                    for (int i = 0; i < kn; ++i) acc += k1d[static_cast<std::size_t>(i)] * rows.at(y + i, xx, ch);
                    v.at(y, xx, ch) = acc;
                }
        Ref n = make(std::move(v), x->needs_grad);
        if (n->needs_grad) n->back = [n, x, k1d, h, w, c, kn, hv, wv] {
            auto& gx = x->g();
            Tensor<T> grows({h, wv, c});
            for (int y = 0; y < hv; ++y)
                for (int xx = 0; xx < wv; ++xx)
                    for (int ch = 0; ch < c; ++ch) {
                        const T g = n->grad.at(y, xx, ch);
                        for (int i = 0; i < kn; ++i) grows.at(y + i, xx, ch) += k1d[static_cast<std::size_t>(i)] * g;
                    }
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wv; ++xx)
                    for (int ch = 0; ch < c; ++ch) {
                        const T g = grows.at(y, xx, ch);
                        for (int i = 0; i < kn; ++i) gx.at(y, xx + i, ch) += k1d[static_cast<std::size_t>(i)] * g;
                    }
        };
        return n;
    }

    // ---- matrices / attention ----

    Ref matmul(Ref a, Ref b) {
        const int m = a->val.dim(0), k = a->val.dim(1), n2 = b->val.dim(1);
        if (b->val.dim(0) != k) throw std::invalid_argument("matmul: inner dims differ");
        Tensor<T> v({m, n2});
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const T av = a->val.at(i, kk);
                const T* bp = &b->val.at(kk, 0);
                T* vp = &v.at(i, 0);
                for (int j = 0; j < n2; ++j) vp[j] += av * bp[j];
            }
        Ref n = make(std::move(v), a->needs_grad || b->needs_grad);
        if (n->needs_grad) n->back = [n, a, b, m, k, n2] {
            if (a->needs_grad) {
                auto& ga = a->g();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const T* gp = &n->grad.at(i, 0);
                        const T* bp = &b->val.at(kk, 0);
                        T acc = 0;
                        for (int j = 0; j < n2; ++j) acc += gp[j] * bp[j];
                        ga.at(i, kk) += acc;
                    }
            }
            if (b->needs_grad) {
                auto& gb = b->g();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const T av = a->val.at(i, kk);
                        const T* gp = &n->grad.at(i, 0);
                        T* gbp = &gb.at(kk, 0);
                        for (int j = 0; j < n2; ++j) gbp[j] += av * gp[j];
                    }
            }
        };
        return n;
    }

    Ref transpose(Ref a) {
        const int m = a->val.dim(0), k = a->val.dim(1);
        Tensor<T> v({k, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) v.at(j, i) = a->val.at(i, j);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, m, k] {
            auto& ga = a->g();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j) ga.at(i, j) += n->grad.at(j, i);
        };
        return n;
    }

    Ref softmax_rows(Ref a) {
        const int m = a->val.dim(0), k = a->val.dim(1);
        Tensor<T> v({m, k});
        for (int i = 0; i < m; ++i) {
            T mx = a->val.at(i, 0);
            for (int j = 1; j < k; ++j) mx = std::max(mx, a->val.at(i, j));
            T sum = 0;
            for (int j = 0; j < k; ++j) {
                const T e = std::exp(a->val.at(i, j) - mx);
                v.at(i, j) = e;
                sum += e;
            }
            for (int j = 0; j < k; ++j) v.at(i, j) /= sum;
        }
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, m, k] {
            auto& ga = a->g();
            for (int i = 0; i < m; ++i) {
                T dot = 0;
                for (int j = 0; j < k; ++j) dot += n->grad.at(i, j) * n->val.at(i, j);
                for (int j = 0; j < k; ++j) ga.at(i, j) += n->val.at(i, j) * (n->grad.at(i, j) - dot);
            }
        };
        return n;
    }

    // ---- spectral / wavelet ----

    // F^-1(M . F x) per channel. Self-adjoint, so the backward pass reuses the
    // forward kernel on the incoming gradient.
    Ref mask_filter(Ref a, const freqlab::SpectralMaskPair& masks, bool low) {
        Tensor<T> v = freqlab::mask_filter(a->val, masks, low);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, masks, low] {
            Tensor<T> gg = freqlab::mask_filter(n->grad, masks, low);
            a->g() += gg;
        };
        return n;
    }

    enum class HaarBand { LL, LH, HL, HH };

    Ref haar_band(Ref a, HaarBand band) {
        auto bands = freqlab::haar_dwt(a->val);
        Tensor<T> v = band == HaarBand::LL   ? std::move(bands.ll)
                      : band == HaarBand::LH ? std::move(bands.lh)
                      : band == HaarBand::HL ? std::move(bands.hl)
                                             : std::move(bands.hh);
        Ref n = make(std::move(v), a->needs_grad);
        if (n->needs_grad) n->back = [n, a, band] {
            // orthonormal transform: adjoint of band extraction embeds the
            // gradient as that band and inverts
            freqlab::WaveletBandsT<T> gb{Tensor<T>(n->grad.shape()), Tensor<T>(n->grad.shape()),
                                         Tensor<T>(n->grad.shape()), Tensor<T>(n->grad.shape())};
            (band == HaarBand::LL   ? gb.ll
             : band == HaarBand::LH ? gb.lh
             : band == HaarBand::HL ? gb.hl
                                    : gb.hh) = n->grad;
            Tensor<T> gg = freqlab::haar_idwt(gb);
            a->g() += gg;
        };
        return n;
    }

    // mean over bins of |Re dF| + |Im dF| where dF = F(a) - F(b), per channel.
    Ref spectrum_l1(Ref a, Ref b) {
        if (!a->val.same_shape(b->val)) throw std::invalid_argument("spectrum_l1: shape mismatch");
        const int h = a->val.dim(0), w = a->val.dim(1);
        const int c = a->val.ndim() == 3 ? a->val.dim(2) : 1;
        auto signs = std::make_shared<std::vector<std::complex<T>>>(static_cast<std::size_t>(h) * w * c);
        std::vector<std::complex<T>> fa(static_cast<std::size_t>(h) * w), fb(fa.size());
        T total = 0;
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    fa[i] = std::complex<T>(a->val[(i)*c + ch], 0);
                    fb[i] = std::complex<T>(b->val[(i)*c + ch], 0);
                }
            fft::transform_2d(fa.data(), h, w, false);
            fft::transform_2d(fb.data(), h, w, false);
            for (std::size_t i = 0; i < fa.size(); ++i) {
                const T dre = fa[i].real() - fb[i].real();
                const T dim = fa[i].imag() - fb[i].imag();
                total += std::abs(dre) + std::abs(dim);
                (*signs)[i * c + ch] = std::complex<T>(dre > T(0) ? T(1) : (dre < T(0) ? T(-1) : T(0)),
                                                       dim > T(0) ? T(1) : (dim < T(0) ? T(-1) : T(0)));
            }
        }
        const std::size_t numel = static_cast<std::size_t>(h) * w * c;
        Tensor<T> v({1});
        v[0] = total / static_cast<T>(numel);
        Ref n = make(std::move(v), a->needs_grad || b->needs_grad);
        if (n->needs_grad) n->back = [n, a, b, signs, h, w, c, numel] {
            std::vector<std::complex<T>> s(static_cast<std::size_t>(h) * w);
            const T scl = n->grad[0] * static_cast<T>(h) * static_cast<T>(w) / static_cast<T>(numel);
            for (int ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < s.size(); ++i) s[i] = (*signs)[i * c + ch];
                fft::transform_2d(s.data(), h, w, true);
                if (a->needs_grad) {
                    auto& ga = a->g();
                    for (std::size_t i = 0; i < s.size(); ++i) ga[i * c + ch] += scl * s[i].real();
                }
                if (b->needs_grad) {
                    auto& gb = b->g();
                    for (std::size_t i = 0; i < s.size(); ++i) gb[i * c + ch] -= scl * s[i].real();
                }
            }
        };
        return n;
    }

    // ---- composite conveniences ----

    Ref mse(Ref a, Ref b) {
        Ref d = sub(a, b);
        return mean_all(mul(d, d));
    }

    Ref l1(Ref a, Ref b) { return mean_all(abs(sub(a, b))); }

private:
    enum class Bin { Add, Sub, Mul, Div };

    // b broadcasts against a: equal shape, scalar {1}, or per-dim 1s.
    static bool bcast_compatible(const Tensor<T>& a, const Tensor<T>& b) {
        if (b.size() == 1) return true;
        if (a.ndim() != b.ndim()) return false;
        for (int i = 0; i < a.ndim(); ++i)
            if (b.dim(i) != a.dim(i) && b.dim(i) != 1) return false;
        return true;
    }

    static std::vector<std::size_t> bcast_strides(const Tensor<T>& a, const Tensor<T>& b) {
        // stride of b along each a-dim (0 where broadcast)
        std::vector<std::size_t> st(static_cast<std::size_t>(a.ndim()), 0);
        if (b.size() == 1) return st;
        std::size_t s = 1;
        for (int i = a.ndim() - 1; i >= 0; --i) {
            st[static_cast<std::size_t>(i)] = (b.dim(i) == 1) ? 0 : s;
            s *= static_cast<std::size_t>(b.dim(i));
        }
        return st;
    }

    Ref binary(Ref a, Ref b, Bin op) {
        if (!bcast_compatible(a->val, b->val))
            throw std::invalid_argument("elementwise op: shape mismatch " + shape_str(a->val) + " vs " +
                                        shape_str(b->val));
        const bool same = a->val.same_shape(b->val);
        Tensor<T> v(a->val.shape());
        if (same) {
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = apply(op, a->val[i], b->val[i]);
        } else {
            iterate(a->val, b->val, [&](std::size_t ia, std::size_t ib) {
                v[ia] = apply(op, a->val[ia], b->val[ib]);
            });
        }
        Ref n = make(std::move(v), a->needs_grad || b->needs_grad);
        if (!n->needs_grad) return n;
        n->back = [n, a, b, op, same] {
            auto dd = [&](std::size_t ia, std::size_t ib) {
                const T g = n->grad[ia];
                switch (op) {
                    case Bin::Add:
                        if (a->needs_grad) a->g()[ia] += g;
                        if (b->needs_grad) b->g()[ib] += g;
                        break;
                    case Bin::Sub:
                        if (a->needs_grad) a->g()[ia] += g;
                        if (b->needs_grad) b->g()[ib] -= g;
                        break;
                    case Bin::Mul:
                        if (a->needs_grad) a->g()[ia] += g * b->val[ib];
                        if (b->needs_grad) b->g()[ib] += g * a->val[ia];
                        break;
                    case Bin::Div:
                        if (a->needs_grad) a->g()[ia] += g / b->val[ib];
                        if (b->needs_grad) b->g()[ib] -= g * a->val[ia] / (b->val[ib] * b->val[ib]);
                        break;
                }
            };
            if (same) {
                for (std::size_t i = 0; i < n->grad.size(); ++i) dd(i, i);
            } else {
                iterate(a->val, b->val, dd);
            }
        };
        return n;
    }

    static T apply(Bin op, T x, T y) {
        switch (op) {
            case Bin::Add: return x + y;
            case Bin::Sub: return x - y;
            case Bin::Mul: return x * y;
            case Bin::Div: return x / y;
        }
        return T(0);
    }

    template <typename F>
    static void iterate(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
        const auto bst = bcast_strides(a, b);
        const int nd = a.ndim();
        std::vector<int> idx(static_cast<std::size_t>(nd), 0);
        const std::size_t total = a.size();
        std::size_t ib = 0;
        for (std::size_t ia = 0; ia < total; ++ia) {
            f(ia, ib);
            for (int d = nd - 1; d >= 0; --d) {
                idx[static_cast<std::size_t>(d)]++;
                ib += bst[static_cast<std::size_t>(d)];
                if (idx[static_cast<std::size_t>(d)] < a.dim(d)) break;
                ib -= bst[static_cast<std::size_t>(d)] * static_cast<std::size_t>(a.dim(d));
                idx[static_cast<std::size_t>(d)] = 0;
            }
        }
    }

    Ref make(Tensor<T> v, bool needs_grad) {
        nodes_.push_back(std::make_unique<Node<T>>());
        Node<T>* n = nodes_.back().get();
        n->val = std::move(v);
        n->needs_grad = needs_grad;
        return n;
    }

    struct Hook {
        typename ParamStore<T>::Entry* entry;
        Node<T>* node;
    };

    std::vector<std::unique_ptr<Node<T>>> nodes_;
    std::vector<Hook> hooks_;
};

// Weight initializers.
template <typename T>
Tensor<T> conv_init(int kh, int kw, int ci, int co, Rng& rng) {
    Tensor<T> w({kh, kw, ci, co});
    const double std = std::sqrt(2.0 / (kh * kw * ci));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal() * std);
    return w;
}

template <typename T>
Tensor<T> dwconv_init(int kh, int kw, int c, Rng& rng) {
    Tensor<T> w({kh, kw, c});
    const double std = std::sqrt(2.0 / (kh * kw));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal() * std);
    return w;
}

}  // namespace ad
}  // namespace lcdiff
