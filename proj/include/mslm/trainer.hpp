#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mslm/dictionary.hpp"
#include "mslm/errors.hpp"
#include "mslm/lattice.hpp"
#include "mslm/model.hpp"

namespace mslm {

// States and path-sum margins carried into a window from the text to its
// left. Covers positions [position+1-size() .. position]; margins are the
// log path sums rebased so margins.back() is 0 at the anchor position.
struct StateContext {
    std::size_t position = 0;
    std::vector<State> states;
    std::vector<double> margins;

    static StateContext initial(std::int32_t hidden) {
        StateContext ctx;
        ctx.states.push_back(State::zero(hidden));
        ctx.margins.push_back(0.0);
        return ctx;
    }

    std::size_t first() const { return position + 1 - states.size(); }
};

// Everything the forward pass over one window computes: hidden states and
// log path sums for states [first..end], and the token log-distribution at
// every state that can start an arc ([first..end)). Memory grows with the
// window length and the context span only, never with the arc count.
struct ForwardTrace {
    std::size_t first = 0, begin = 0, end = 0;
    std::vector<State> states;      // indexed by state - first
    std::vector<double> log_alpha;  // same indexing; log_alpha at begin == margins.back()
    RowMat log_probs;               // row s-first = log distribution at state s
    double window_ll = 0.0;         // log_alpha[end] - log_alpha[begin]

    const State& state_at(std::size_t s) const { return states[s - first]; }
    double alpha_at(std::size_t s) const { return log_alpha[s - first]; }
    auto lp_at(std::size_t s) const { return log_probs.row(static_cast<Eigen::Index>(s - first)); }

    std::size_t memory_elements() const {
        return states.size() * 2 * static_cast<std::size_t>(states.front().h.size()) +
               log_alpha.size() +
               static_cast<std::size_t>(log_probs.rows()) *
                   static_cast<std::size_t>(log_probs.cols());
    }
};

// Marginal log-likelihood of the window's symbols given the carried context:
// log_alpha recursion over all arcs in log space. Hidden states are
// deterministic (arc-averaged) and independent of the path sums.
inline ForwardTrace forward_ll(const Lattice& lat, const ModelParams& params,
                               const StateContext& ctx) {
    if (ctx.states.empty() || ctx.states.size() != ctx.margins.size()) {
        throw DataError("state context must carry matching states and margins");
    }
    if (ctx.position != lat.begin) {
        throw DataError("state context anchored at position " + std::to_string(ctx.position) +
                        " but window starts at " + std::to_string(lat.begin));
    }
    const std::int32_t T = params.sizes.tokens;
    ForwardTrace trace;
    trace.first = ctx.first();
    trace.begin = lat.begin;
    trace.end = lat.end;
    trace.states = ctx.states;
    trace.log_alpha = ctx.margins;
    trace.states.resize(ctx.states.size() + lat.n());
    trace.log_alpha.resize(ctx.margins.size() + lat.n());
    trace.log_probs.resize(static_cast<Eigen::Index>(lat.end - trace.first), T);

    for (std::size_t s = trace.first; s < std::min(trace.begin + 1, trace.end); ++s) {
        trace.log_probs.row(static_cast<Eigen::Index>(s - trace.first)) =
            output_distribution(params, trace.state_at(s).h).transpose();
    }

    std::vector<double> zs;
    std::vector<ArcResult> results;
    for (std::size_t t = lat.begin; t < lat.end; ++t) {
        zs.clear();
        results.clear();
        for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a) {
            if (a->start < trace.first) {
                throw DataError("carried context too short for an arc at position " +
                                std::to_string(t));
            }
            zs.push_back(trace.lp_at(a->start)[a->token] + trace.alpha_at(a->start));
            results.push_back(arc_gates(params, trace.state_at(a->start), a->token));
        }
        const double m = *std::max_element(zs.begin(), zs.end());
        double sum = 0.0;
        for (double z : zs) sum += std::exp(z - m);
        trace.log_alpha[t + 1 - trace.first] = m + std::log(sum);
        trace.states[t + 1 - trace.first] = fuse_step(params, results);

        const State& st = trace.state_at(t + 1);
        if (!std::isfinite(trace.alpha_at(t + 1)) || !st.h.allFinite() || !st.c.allFinite()) {
            throw NumericError("non-finite forward value at position " + std::to_string(t));
        }
        if (t + 1 < lat.end) {
            trace.log_probs.row(static_cast<Eigen::Index>(t + 1 - trace.first)) =
                output_distribution(params, st.h).transpose();
        }
    }
    trace.window_ll = trace.alpha_at(trace.end) - trace.alpha_at(trace.begin);
    return trace;
}

// Gradient of window_ll with respect to every parameter, plus the gradients
// flowing into the carried context (states and margins, aligned with
// positions [first..begin]). The training loop discards the context
// gradients — that is the truncation in truncated backpropagation.
struct BackwardResult {
    ModelParams grads;
    std::vector<State> state_grads;
    std::vector<double> margin_grads;

    explicit BackwardResult(const ModelSizes& sizes) : grads(sizes) {}
};

namespace detail {

// d/dx of y = gain .* (x - mean)/sqrt(var + eps) + bias given the adjoint of
// y, recomputed normalized values xhat, and the inverse standard deviation.
inline Vec layer_norm_backward(const Vec& dy, const Eigen::Ref<const Vec>& gain,
                               const Vec& xhat, double inv) {
    const double n = static_cast<double>(dy.size());
    Vec dxhat = dy.array() * gain.array();
    const double mean_dxhat = dxhat.sum() / n;
    const double mean_proj = dxhat.dot(xhat) / n;
    return (inv * (dxhat.array() - mean_dxhat - xhat.array() * mean_proj)).matrix();
}

struct NormCache {
    Vec xhat;
    double inv;
};

inline NormCache normalize(const Vec& x) {
    const double n = static_cast<double>(x.size());
    const double mean = x.sum() / n;
    Vec centered = x.array() - mean;
    const double var = centered.squaredNorm() / n;
    NormCache out;
    out.inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    out.xhat = centered * out.inv;
    return out;
}

}  // namespace detail

inline BackwardResult backward(const ForwardTrace& trace, const Lattice& lat,
                               const ModelParams& params) {
    const std::int32_t T = params.sizes.tokens;
    const std::int32_t H = params.sizes.hidden;
    BackwardResult out(params.sizes);
    auto g = out.grads.view();
    const auto v = params.view();

    const std::size_t first = trace.first;
    const std::size_t span = trace.end - first;  // states first..end -> span+1 of them
    std::vector<double> dalpha(span + 1, 0.0);
    std::vector<Vec> dh(span + 1, Vec::Zero(H)), dc(span + 1, Vec::Zero(H));
    RowMat dlp = RowMat::Zero(static_cast<Eigen::Index>(span), T);
    dalpha[span] = 1.0;  // objective is log_alpha at the window end

    // Softmax backward at one state: consumes the accumulated distribution
    // adjoint and pushes into W_y, b_y, and the state's hidden adjoint.
    auto flush_state = [&](std::size_t s) {
        const auto row = dlp.row(static_cast<Eigen::Index>(s - first));
        if ((row.array() == 0.0).all()) return;
        const double total = row.sum();
        Vec dlogits = row.transpose() - trace.lp_at(s).transpose().array().exp().matrix() * total;
        g.w_y.noalias() += dlogits * trace.state_at(s).h.transpose();
        g.b_y += dlogits;
        dh[s - first].noalias() += v.w_y.transpose() * dlogits;
    };

    std::vector<ArcResult> results;
    for (std::size_t t = trace.end; t-- > trace.begin;) {
        // Path-sum backward: each arc's weight is its posterior share.
        const double dnext = dalpha[t + 1 - first];
        for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a) {
            const double z = trace.lp_at(a->start)[a->token] + trace.alpha_at(a->start);
            const double gamma = dnext * std::exp(z - trace.alpha_at(t + 1));
            dalpha[a->start - first] += gamma;
            dlp(static_cast<Eigen::Index>(a->start - first), a->token) += gamma;
        }
        if (t + 1 < trace.end) flush_state(t + 1);

        // Fuse backward: distribute the state adjoint over this position's arcs.
        const std::size_t n_arcs = lat.arc_count(t);
        results.clear();
        Vec o_mean = Vec::Zero(H);
        for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a) {
            results.push_back(arc_gates(params, trace.state_at(a->start), a->token));
            o_mean += results.back().pre.segment(2 * H, H);
        }
        o_mean /= static_cast<double>(n_arcs);

        const Vec& c_t = trace.state_at(t + 1).c;
        const Vec& dh_t = dh[t + 1 - first];
        const Vec& dc_t = dc[t + 1 - first];
        Vec do_mean(H), dc_total(H);
        for (std::int32_t k = 0; k < H; ++k) {
            const double so = sigmoid(o_mean[k]);
            const double th = std::tanh(c_t[k]);
            do_mean[k] = dh_t[k] * th * so * (1.0 - so);
            dc_total[k] = dc_t[k] + dh_t[k] * so * (1.0 - th * th);
        }
        const double inv_n = 1.0 / static_cast<double>(n_arcs);
        Vec dc_contrib = dc_total * inv_n;
        Vec do_block = do_mean * inv_n;

        std::size_t idx = 0;
        for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a, ++idx) {
            const ArcResult& r = results[idx];
            const State& start = trace.state_at(a->start);
            Vec dpre(4 * H);
            for (std::int32_t k = 0; k < H; ++k) {
                const double sf = sigmoid(r.pre[k]);
                const double si = sigmoid(r.pre[H + k]);
                const double tg = std::tanh(r.pre[3 * H + k]);
                dpre[k] = dc_contrib[k] * start.c[k] * sf * (1.0 - sf);
                dpre[H + k] = dc_contrib[k] * tg * si * (1.0 - si);
                dpre[2 * H + k] = do_block[k];
                dpre[3 * H + k] = dc_contrib[k] * si * (1.0 - tg * tg);
                dc[a->start - first][k] += dc_contrib[k] * sf;
            }
            g.b += dpre;

            Vec rec = v.w_h * start.h;
            detail::NormCache nh = detail::normalize(rec);
            g.ln_g_h += (dpre.array() * nh.xhat.array()).matrix();
            g.ln_b_h += dpre;
            Vec drec = detail::layer_norm_backward(dpre, v.ln_g_h, nh.xhat, nh.inv);
            g.w_h.noalias() += drec * start.h.transpose();
            dh[a->start - first].noalias() += v.w_h.transpose() * drec;

            Vec emb = v.embeddings.row(a->token).transpose();
            Vec inp = v.w_x * emb;
            detail::NormCache nx = detail::normalize(inp);
            g.ln_g_x += (dpre.array() * nx.xhat.array()).matrix();
            g.ln_b_x += dpre;
            Vec dinp = detail::layer_norm_backward(dpre, v.ln_g_x, nx.xhat, nx.inv);
            g.w_x.noalias() += dinp * emb.transpose();
            g.embeddings.row(a->token).noalias() += (v.w_x.transpose() * dinp).transpose();
        }
    }

    for (std::size_t s = first; s <= trace.begin && s < trace.end; ++s) flush_state(s);

    const std::size_t carried = trace.begin - first + 1;
    out.state_grads.reserve(carried);
    out.margin_grads.reserve(carried);
    for (std::size_t s = first; s <= trace.begin; ++s) {
        State sg;
        sg.h = dh[s - first];
        sg.c = dc[s - first];
        out.state_grads.push_back(std::move(sg));
        out.margin_grads.push_back(dalpha[s - first]);
    }
    out.margin_grads.back() -= 1.0;  // window_ll subtracts the anchor margin

    for (double d : out.grads.data) {
        if (!std::isfinite(d)) throw NumericError("non-finite gradient in backward pass");
    }
    return out;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int32_t window = 400;
    std::int32_t streams = 2;
    std::int32_t hidden = 64;
    std::int32_t embed = 32;
    double clip_norm = 1.0;
    std::int64_t updates = 0;
    std::int64_t eval_every = 100;
    std::uint64_t seed = 1;
    std::string precision = "f64";

    void validate() const {
        if (learning_rate <= 0.0) throw DataError("learning rate must be positive");
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
            throw DataError("Adam betas must lie strictly between 0 and 1");
        }
        if (epsilon <= 0.0) throw DataError("Adam epsilon must be positive");
        if (window < 1) throw DataError("window length must be positive");
        if (streams < 1) throw DataError("stream count must be positive");
        if (hidden < 1 || embed < 1) throw DataError("hidden and embedding sizes must be positive");
        if (clip_norm <= 0.0) throw DataError("clip norm must be positive");
        if (updates < 0) throw DataError("update count must be non-negative");
        if (eval_every < 1) throw DataError("eval cadence must be positive");
        if (precision != "f64") {
            throw DataError("precision '" + precision + "' is not supported; this build is f64");
        }
    }
};

struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;

    static AdamState zero(const ParamLayout& layout) {
        AdamState s;
        s.m.assign(static_cast<std::size_t>(layout.total), 0.0);
        s.v.assign(static_cast<std::size_t>(layout.total), 0.0);
        return s;
    }
};

// Bias-corrected Adam with global-norm clipping applied to the loss gradient
// before the moment update. The gradient buffer is scaled in place.
inline void adam_step(ModelParams& params, ModelParams& grads, AdamState& moments,
                      const TrainConfig& cfg) {
    if (grads.data.size() != params.data.size() || moments.m.size() != params.data.size()) {
        throw DataError("optimizer buffers do not match the parameter layout");
    }
    double sq = 0.0;
    for (double d : grads.data) sq += d * d;
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) {
        const double scale = cfg.clip_norm / norm;
        for (double& d : grads.data) d *= scale;
    }
    moments.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(moments.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(moments.step));
    for (std::size_t i = 0; i < params.data.size(); ++i) {
        const double gi = grads.data[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * gi;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double mhat = moments.m[i] / bc1;
        const double vhat = moments.v[i] / bc2;
        params.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

struct Checkpoint {
    ModelParams params;
    AdamState moments;

    explicit Checkpoint(const ModelSizes& sizes)
        : params(sizes), moments(AdamState::zero(params.layout)) {}
    explicit Checkpoint(ModelParams p) : params(std::move(p)) {
        moments = AdamState::zero(params.layout);
    }
};

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    write_param_block(out, ckpt.params);
    out << "adam step=" << ckpt.moments.step << '\n';
    out.write(reinterpret_cast<const char*>(ckpt.moments.m.data()),
              static_cast<std::streamsize>(ckpt.moments.m.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(ckpt.moments.v.data()),
              static_cast<std::streamsize>(ckpt.moments.v.size() * sizeof(double)));
}

inline Checkpoint load_checkpoint(std::istream& in, const std::string& origin) {
    Checkpoint ckpt(read_param_block(in, origin));
    std::string line;
    if (!std::getline(in, line)) throw DataError(origin + ": missing optimizer header");
    long long step = 0;
    if (std::sscanf(line.c_str(), "adam step=%lld", &step) != 1) {
        throw DataError(origin + ": malformed optimizer header");
    }
    ckpt.moments.step = step;
    const std::streamsize bytes =
        static_cast<std::streamsize>(ckpt.moments.m.size() * sizeof(double));
    in.read(reinterpret_cast<char*>(ckpt.moments.m.data()), bytes);
    in.read(reinterpret_cast<char*>(ckpt.moments.v.data()), bytes);
    if (!in) throw DataError(origin + ": truncated optimizer state");
    return ckpt;
}

// Exact full-sequence bits per character: windowed forward passes whose
// carried margins make the chained recursion identical to one long pass.
inline double evaluate_bpc(const std::vector<std::int32_t>& ids, const TokenMatcher& matcher,
                           const ModelParams& params, std::int32_t window = 512) {
    if (ids.empty()) throw DataError("cannot evaluate an empty sequence");
    if (window < 1) throw DataError("window length must be positive");
    StateContext ctx = StateContext::initial(params.sizes.hidden);
    double total_ll = 0.0;
    const std::size_t l_max = static_cast<std::size_t>(matcher.l_max());
    for (std::size_t b = 0; b < ids.size(); b += static_cast<std::size_t>(window)) {
        const std::size_t e = std::min(ids.size(), b + static_cast<std::size_t>(window));
        Lattice lat = build_lattice(ids, b, e, matcher);
        ForwardTrace trace = forward_ll(lat, params, ctx);
        total_ll += trace.window_ll;

        ctx.position = e;
        ctx.states.clear();
        ctx.margins.clear();
        const std::size_t from = e + 1 >= l_max ? e + 1 - l_max : 0;
        for (std::size_t s = std::max(from, trace.first); s <= e; ++s) {
            ctx.states.push_back(trace.state_at(s));
            ctx.margins.push_back(trace.alpha_at(s) - trace.alpha_at(e));
        }
    }
    return -total_ll / (static_cast<double>(ids.size()) * std::log(2.0));
}

inline double evaluate_bpc(const std::vector<std::int32_t>& ids, const Dictionary& dict,
                           const ModelParams& params, std::int32_t window = 512) {
    return evaluate_bpc(ids, TokenMatcher(dict), params, window);
}

struct CurveRecord {
    std::int64_t update = 0;
    std::string split;
    double bpc = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<CurveRecord> curve;

    explicit TrainResult(const ModelSizes& sizes) : checkpoint(sizes) {}
};

// Truncated backpropagation through time over parallel streams: the corpus
// is cut into equal contiguous chunks processed lock-step in windows; the
// trailing states of each window carry into the next as constants. Streams
// that reach their end restart from a fresh initial state.
inline TrainResult train(const std::vector<std::int32_t>& train_ids,
                         const std::vector<std::int32_t>& valid_ids, const Dictionary& dict,
                         const TrainConfig& cfg,
                         const Checkpoint* resume = nullptr,
                         const std::function<void(const CurveRecord&)>& on_record = {}) {
    cfg.validate();
    const ModelSizes sizes{static_cast<std::int32_t>(dict.tokens.size()), cfg.hidden,
                           cfg.embed};
    const std::size_t chunk = train_ids.size() / static_cast<std::size_t>(cfg.streams);
    if (chunk < 1) throw DataError("training corpus shorter than the stream count");

    TrainResult result(sizes);
    if (resume != nullptr) {
        if (!(resume->params.sizes == sizes)) {
            throw DataError("checkpoint sizes do not match the dictionary and config");
        }
        result.checkpoint = *resume;
    } else {
        result.checkpoint.params = init_params(sizes, cfg.seed);
    }
    ModelParams& params = result.checkpoint.params;
    AdamState& moments = result.checkpoint.moments;

    const TokenMatcher matcher(dict);
    const std::size_t l_max = static_cast<std::size_t>(matcher.l_max());

    std::vector<std::vector<std::int32_t>> stream_ids(static_cast<std::size_t>(cfg.streams));
    std::vector<std::size_t> pos(static_cast<std::size_t>(cfg.streams), 0);
    std::vector<StateContext> ctx(static_cast<std::size_t>(cfg.streams));
    for (std::int32_t s = 0; s < cfg.streams; ++s) {
        const std::size_t b = static_cast<std::size_t>(s) * chunk;
        stream_ids[static_cast<std::size_t>(s)].assign(train_ids.begin() + static_cast<std::ptrdiff_t>(b),
                                                       train_ids.begin() + static_cast<std::ptrdiff_t>(b + chunk));
        ctx[static_cast<std::size_t>(s)] = StateContext::initial(cfg.hidden);
    }

    ModelParams grads(sizes);
    double bpc_accum = 0.0;
    std::int64_t bpc_count = 0;
    const std::int64_t last = moments.step + cfg.updates;

    while (moments.step < last) {
        const std::int64_t update = moments.step + 1;
        std::fill(grads.data.begin(), grads.data.end(), 0.0);
        double nll = 0.0;
        std::size_t symbols = 0;

        for (std::size_t s = 0; s < static_cast<std::size_t>(cfg.streams); ++s) {
            if (pos[s] >= chunk) {
                pos[s] = 0;
                ctx[s] = StateContext::initial(cfg.hidden);
            }
            const std::size_t b = pos[s];
            const std::size_t e = std::min(chunk, b + static_cast<std::size_t>(cfg.window));
            Lattice lat = build_lattice(stream_ids[s], b, e, matcher);
            ForwardTrace trace;
            try {
                trace = forward_ll(lat, params, ctx[s]);
            } catch (const NumericError& err) {
                throw NumericError("update " + std::to_string(update) + ": " + err.what());
            }
            nll += -trace.window_ll;
            symbols += e - b;
            BackwardResult bw = backward(trace, lat, params);
            for (std::size_t i = 0; i < grads.data.size(); ++i) grads.data[i] += bw.grads.data[i];

            ctx[s].position = e;
            ctx[s].states.clear();
            ctx[s].margins.clear();
            const std::size_t from = e + 1 >= l_max ? e + 1 - l_max : 0;
            for (std::size_t p = std::max(from, trace.first); p <= e; ++p) {
                ctx[s].states.push_back(trace.state_at(p));
                ctx[s].margins.push_back(trace.alpha_at(p) - trace.alpha_at(e));
            }
            pos[s] = e;
        }

        // Descent direction for mean per-symbol negative log-likelihood.
        const double scale = -1.0 / static_cast<double>(symbols);
        for (double& d : grads.data) d *= scale;
        adam_step(params, grads, moments, cfg);

        const double train_bpc = nll / (static_cast<double>(symbols) * std::log(2.0));
        if (!std::isfinite(train_bpc)) {
            throw NumericError("update " + std::to_string(update) + ": non-finite training loss");
        }
        bpc_accum += train_bpc;
        bpc_count += 1;

        if (update % cfg.eval_every == 0 || update == last) {
            result.curve.push_back({update, "train", bpc_accum / static_cast<double>(bpc_count)});
            if (on_record) on_record(result.curve.back());
            bpc_accum = 0.0;
            bpc_count = 0;
            if (!valid_ids.empty()) {
                result.curve.push_back(
                    {update, "valid", evaluate_bpc(valid_ids, matcher, params, cfg.window)});
                if (on_record) on_record(result.curve.back());
            }
            if (update == last) break;
        }
    }
    return result;
}

inline void write_curve(std::ostream& out, const std::vector<CurveRecord>& curve) {
    out << "update,split,bpc\n";
    char buf[64];
    for (const CurveRecord& r : curve) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.bpc);
        out << r.update << ',' << r.split << ',' << buf << '\n';
    }
}

}  // namespace mslm
