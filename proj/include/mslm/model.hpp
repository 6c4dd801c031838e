#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "mslm/errors.hpp"
#include "mslm/rng.hpp"

namespace mslm {

using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelSizes {
    std::int32_t tokens = 0;
    std::int32_t hidden = 0;
    std::int32_t embed = 0;

    bool operator==(const ModelSizes&) const = default;
};

// Flat-buffer offsets for every parameter tensor, in the fixed order used by
// the checkpoint format, the optimizer, and the gradient checker. Gate rows
// within 4H blocks are ordered (f, i, o, g).
struct ParamLayout {
    std::int64_t embeddings, w_h, w_x, b, ln_g_h, ln_b_h, ln_g_x, ln_b_x, w_y, b_y, total;

    explicit ParamLayout(const ModelSizes& s) {
        if (s.tokens < 1 || s.hidden < 1 || s.embed < 1) {
            throw DataError("model sizes must be at least 1");
        }
        const std::int64_t T = s.tokens, H = s.hidden, E = s.embed;
        std::int64_t at = 0;
        embeddings = at;
        at += T * E;
        w_h = at;
        at += 4 * H * H;
        w_x = at;
        at += 4 * H * E;
        b = at;
        at += 4 * H;
        ln_g_h = at;
        at += 4 * H;
        ln_b_h = at;
        at += 4 * H;
        ln_g_x = at;
        at += 4 * H;
        ln_b_x = at;
        at += 4 * H;
        w_y = at;
        at += T * H;
        b_y = at;
        at += T;
        total = at;
    }
};

// Named Eigen views over one flat buffer; works for parameters and for
// same-shaped gradient accumulators.
template <bool Const>
struct TensorViewT {
    using Mat = std::conditional_t<Const, Eigen::Map<const RowMat>, Eigen::Map<RowMat>>;
    using Col = std::conditional_t<Const, Eigen::Map<const Vec>, Eigen::Map<Vec>>;
    using Ptr = std::conditional_t<Const, const double*, double*>;

    Mat embeddings, w_h, w_x, w_y;
    Col b, ln_g_h, ln_b_h, ln_g_x, ln_b_x, b_y;

    TensorViewT(Ptr base, const ModelSizes& s, const ParamLayout& l)
        : embeddings(base + l.embeddings, s.tokens, s.embed),
          w_h(base + l.w_h, 4 * s.hidden, s.hidden),
          w_x(base + l.w_x, 4 * s.hidden, s.embed),
          w_y(base + l.w_y, s.tokens, s.hidden),
          b(base + l.b, 4 * s.hidden),
          ln_g_h(base + l.ln_g_h, 4 * s.hidden),
          ln_b_h(base + l.ln_b_h, 4 * s.hidden),
          ln_g_x(base + l.ln_g_x, 4 * s.hidden),
          ln_b_x(base + l.ln_b_x, 4 * s.hidden),
          b_y(base + l.b_y, s.tokens) {}
};

using TensorView = TensorViewT<false>;
using ConstTensorView = TensorViewT<true>;

struct ModelParams {
    ModelSizes sizes;
    ParamLayout layout;
    std::vector<double> data;

    explicit ModelParams(const ModelSizes& s)
        : sizes(s), layout(s), data(static_cast<std::size_t>(layout.total), 0.0) {}

    TensorView view() { return TensorView(data.data(), sizes, layout); }
    ConstTensorView view() const { return ConstTensorView(data.data(), sizes, layout); }
};

struct State {
    Vec h, c;

    static State zero(std::int32_t hidden) {
        State s;
        s.h = Vec::Zero(hidden);
        s.c = Vec::Zero(hidden);
        return s;
    }
};

inline constexpr double kLayerNormEpsilon = 1e-5;

// y = gain .* (x - mean) / sqrt(var + eps) + bias, mean/var taken over the
// whole block (population variance).
inline Vec layer_norm(const Vec& x, const Eigen::Ref<const Vec>& gain,
                      const Eigen::Ref<const Vec>& bias) {
    const double n = static_cast<double>(x.size());
    const double mean = x.sum() / n;
    Vec centered = x.array() - mean;
    const double var = centered.squaredNorm() / n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    return (gain.array() * centered.array() * inv + bias.array()).matrix();
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// One arc's contribution to the step that ends at its end position:
// pre-activations from the layer-normalized recurrent and input streams plus
// bias, and the cell-state term sigma(f) .* c_start + sigma(i) .* tanh(g).
struct ArcResult {
    Vec pre;        // 4H, blocks (f, i, o, g)
    Vec c_contrib;  // H
};

inline ArcResult arc_gates(const ModelParams& params, const State& start,
                           std::int32_t token) {
    const auto v = params.view();
    const std::int32_t H = params.sizes.hidden;
    Vec rec = v.w_h * start.h;
    Vec inp = v.w_x * v.embeddings.row(token).transpose();
    ArcResult out;
    out.pre = layer_norm(rec, v.ln_g_h, v.ln_b_h) + layer_norm(inp, v.ln_g_x, v.ln_b_x) +
              v.b;
    out.c_contrib.resize(H);
    for (std::int32_t k = 0; k < H; ++k) {
        out.c_contrib[k] = sigmoid(out.pre[k]) * start.c[k] +
                           sigmoid(out.pre[H + k]) * std::tanh(out.pre[3 * H + k]);
    }
    return out;
}

// Average the cell contributions and the output-gate pre-activations of all
// arcs ending at one position, then gate: h = sigma(o_mean) .* tanh(c_mean).
// Results must arrive in ascending token id so the summation order is pinned.
inline State fuse_step(const ModelParams& params, const std::vector<ArcResult>& arcs) {
    if (arcs.empty()) throw DataError("fuse_step needs at least one arc result");
    const std::int32_t H = params.sizes.hidden;
    Vec c = Vec::Zero(H);
    Vec o = Vec::Zero(H);
    for (const ArcResult& a : arcs) {
        c += a.c_contrib;
        o += a.pre.segment(2 * H, H);
    }
    const double inv_n = 1.0 / static_cast<double>(arcs.size());
    c *= inv_n;
    o *= inv_n;
    State out;
    out.c = c;
    out.h.resize(H);
    for (std::int32_t k = 0; k < H; ++k) out.h[k] = sigmoid(o[k]) * std::tanh(c[k]);
    return out;
}

// Log-probabilities over all tokens: log-softmax of W_y h + b_y, stabilized
// by max subtraction.
inline Vec output_distribution(const ModelParams& params, const Vec& h) {
    const auto v = params.view();
    Vec logits = v.w_y * h + v.b_y;
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return (logits.array() - lse).matrix();
}

// Weights uniform in +-1/sqrt(fan_in), forget-gate bias 1, layer-norm gains
// 1 and biases 0. Each tensor draws from its own named stream, so layouts
// can evolve without reshuffling the others.
inline ModelParams init_params(const ModelSizes& sizes, std::uint64_t seed) {
    ModelParams params(sizes);
    auto v = params.view();
    const std::int32_t H = sizes.hidden;

    auto fill = [&](Eigen::Ref<RowMat> m, const char* stream, double fan_in) {
        Rng rng(seed, stream);
        const double a = 1.0 / std::sqrt(fan_in);
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.next_symmetric(a);
        }
    };
    fill(v.embeddings, "init/embeddings", sizes.embed);
    fill(v.w_h, "init/w_h", sizes.hidden);
    fill(v.w_x, "init/w_x", sizes.embed);
    fill(v.w_y, "init/w_y", sizes.hidden);

    v.b.setZero();
    v.b.segment(0, H).setOnes();  // forget block
    v.ln_g_h.setOnes();
    v.ln_b_h.setZero();
    v.ln_g_x.setOnes();
    v.ln_b_x.setZero();
    v.b_y.setZero();
    return params;
}

// Self-describing parameter block IO: ascii header line, then each tensor as
// row-major 64-bit little-endian floats in layout order. Reused by the
// trainer checkpoint, which appends optimizer state after this block.
inline void write_param_block(std::ostream& out, const ModelParams& params) {
    out << "params tokens=" << params.sizes.tokens << " hidden=" << params.sizes.hidden
        << " embed=" << params.sizes.embed << '\n';
    out.write(reinterpret_cast<const char*>(params.data.data()),
              static_cast<std::streamsize>(params.data.size() * sizeof(double)));
}

inline ModelParams read_param_block(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(origin + ": missing parameter header");
    ModelSizes sizes;
    if (std::sscanf(line.c_str(), "params tokens=%d hidden=%d embed=%d", &sizes.tokens,
                    &sizes.hidden, &sizes.embed) != 3) {
        throw DataError(origin + ": malformed parameter header");
    }
    ModelParams params(sizes);
    in.read(reinterpret_cast<char*>(params.data.data()),
            static_cast<std::streamsize>(params.data.size() * sizeof(double)));
    if (!in) throw DataError(origin + ": truncated parameter block");
    return params;
}

}  // namespace mslm
