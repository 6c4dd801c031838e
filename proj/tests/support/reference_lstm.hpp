#pragma once

// Standalone layer-norm LSTM cell used as an oracle. Deliberately avoids the
// library's Eigen views: plain loops over the flat parameter buffer with its
// own offset arithmetic, so a layout or indexing bug in the library cannot
// cancel out here.

#include <cmath>
#include <cstddef>
#include <vector>

namespace refcell {

struct Offsets {
    std::size_t embeddings, w_h, w_x, b, ln_g_h, ln_b_h, ln_g_x, ln_b_x, w_y, b_y;

    Offsets(int tokens, int hidden, int embed) {
        const std::size_t T = static_cast<std::size_t>(tokens);
        const std::size_t H = static_cast<std::size_t>(hidden);
        const std::size_t E = static_cast<std::size_t>(embed);
        embeddings = 0;
        w_h = embeddings + T * E;
        w_x = w_h + 4 * H * H;
        b = w_x + 4 * H * E;
        ln_g_h = b + 4 * H;
        ln_b_h = ln_g_h + 4 * H;
        ln_g_x = ln_b_h + 4 * H;
        ln_b_x = ln_g_x + 4 * H;
        w_y = ln_b_x + 4 * H;
        b_y = w_y + T * H;
    }
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Normalizes over the whole block with population variance and epsilon 1e-5
// inside the square root.
inline std::vector<double> layer_norm(const std::vector<double>& x, const double* gain,
                                      const double* bias) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = gain[j] * (x[j] - mean) * inv + bias[j];
    return out;
}

struct RefState {
    std::vector<double> h, c;
};

// One plain LSTM step: pre = LN(W_h h) + LN(W_x x_token) + b with gate rows
// ordered (f, i, o, g); c' = s(f) c + s(i) tanh(g); h' = s(o) tanh(c').
inline RefState lstm_step(const std::vector<double>& flat, int tokens, int hidden,
                          int embed, const RefState& state, int token) {
    const Offsets at(tokens, hidden, embed);
    const std::size_t H = static_cast<std::size_t>(hidden);
    const std::size_t E = static_cast<std::size_t>(embed);
    const double* p = flat.data();

    std::vector<double> rec(4 * H, 0.0), inp(4 * H, 0.0);
    for (std::size_t j = 0; j < 4 * H; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < H; ++k) acc += p[at.w_h + j * H + k] * state.h[k];
        rec[j] = acc;
        acc = 0.0;
        for (std::size_t k = 0; k < E; ++k) {
            acc += p[at.w_x + j * E + k] * p[at.embeddings + static_cast<std::size_t>(token) * E + k];
        }
        inp[j] = acc;
    }
    const std::vector<double> nrec = layer_norm(rec, p + at.ln_g_h, p + at.ln_b_h);
    const std::vector<double> ninp = layer_norm(inp, p + at.ln_g_x, p + at.ln_b_x);
    std::vector<double> pre(4 * H);
    for (std::size_t j = 0; j < 4 * H; ++j) pre[j] = nrec[j] + ninp[j] + p[at.b + j];

    RefState out;
    out.c.resize(H);
    out.h.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        out.c[k] = sigmoid(pre[k]) * state.c[k] + sigmoid(pre[H + k]) * std::tanh(pre[3 * H + k]);
        out.h[k] = sigmoid(pre[2 * H + k]) * std::tanh(out.c[k]);
    }
    return out;
}

// Log-softmax of W_y h + b_y, accumulated in long double.
inline std::vector<double> log_probs(const std::vector<double>& flat, int tokens,
                                     int hidden, int embed,
                                     const std::vector<double>& h) {
    const Offsets at(tokens, hidden, embed);
    const std::size_t T = static_cast<std::size_t>(tokens);
    const std::size_t H = static_cast<std::size_t>(hidden);
    const double* p = flat.data();

    std::vector<long double> logits(T);
    for (std::size_t t = 0; t < T; ++t) {
        long double acc = p[at.b_y + t];
        for (std::size_t k = 0; k < H; ++k) acc += static_cast<long double>(p[at.w_y + t * H + k]) * h[k];
        logits[t] = acc;
    }
    long double m = logits[0];
    for (long double v : logits) m = std::max(m, v);
    long double sum = 0.0L;
    for (long double v : logits) sum += std::exp(v - m);
    const long double lse = m + std::log(sum);
    std::vector<double> out(T);
    for (std::size_t t = 0; t < T; ++t) out[t] = static_cast<double>(logits[t] - lse);
    return out;
}

}  // namespace refcell
