#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mslm/dictionary.hpp"
#include "mslm/errors.hpp"
#include "mslm/lattice.hpp"
#include "mslm/model.hpp"
#include "mslm/rng.hpp"
#include "mslm/trainer.hpp"

namespace mslm {

struct SampleConfig {
    std::uint64_t seed = 1;
    std::int64_t max_symbols = 1;
    double temperature = 1.0;      // logit divisor
    std::string prompt;            // conditioning text, not counted in max_symbols
    std::string marker = "\xc2\xb7";  // token boundary glyph, Table-style interpunct

    void validate() const {
        if (max_symbols < 1) throw DataError("sample length must be at least 1 symbol");
        if (!(temperature > 0.0)) throw DataError("temperature must be positive");
    }
};

struct SampleResult {
    std::string marked;                // token texts joined by the marker
    std::string text;                  // plain sampled symbols
    std::vector<std::int32_t> tokens;  // sampled ids; the last may be cut short
    bool truncated = false;            // final token trimmed to fit the budget
};

// State after consuming a prompt with the full arc-averaged forward pass, so
// conditioning sees text exactly the way training did.
inline State condition_on(const ModelParams& params, const Dictionary& dict,
                          const std::string& prompt) {
    if (prompt.empty()) return State::zero(params.sizes.hidden);
    std::vector<std::int32_t> ids;
    ids.reserve(prompt.size());
    for (char c : prompt) {
        const std::int32_t id = dict.alphabet.id_of(c);
        if (id < 0) {
            throw DataError(std::string("prompt character '") + c +
                            "' is not in the dictionary alphabet");
        }
        ids.push_back(id);
    }
    const TokenMatcher matcher(dict);
    Lattice lat = build_lattice(ids, 0, ids.size(), matcher);
    ForwardTrace trace =
        forward_ll(lat, params, StateContext::initial(params.sizes.hidden));
    return trace.state_at(ids.size());
}

// Ancestral sampling of one token path: draw from the (temperature-scaled)
// output distribution, emit the token's symbols, advance through that single
// arc. The sampler realizes one segmentation, so no arc averaging happens.
inline SampleResult sample(const ModelParams& params, const Dictionary& dict,
                           const SampleConfig& cfg) {
    cfg.validate();
    if (params.sizes.tokens != dict.size()) {
        throw DataError("checkpoint is for " + std::to_string(params.sizes.tokens) +
                        " tokens but the dictionary has " + std::to_string(dict.size()));
    }
    const auto T = static_cast<std::size_t>(dict.size());
    State state = condition_on(params, dict, cfg.prompt);
    Rng rng(cfg.seed, "sample");

    SampleResult out;
    std::int64_t emitted = 0;
    std::vector<double> probs(T);
    while (emitted < cfg.max_symbols) {
        Vec logp = output_distribution(params, state.h);
        if (cfg.temperature != 1.0) {
            logp /= cfg.temperature;
            const double m = logp.maxCoeff();
            const double lse = m + std::log((logp.array() - m).exp().sum());
            logp.array() -= lse;
        }
        for (std::size_t t = 0; t < T; ++t) probs[t] = std::exp(logp[static_cast<Eigen::Index>(t)]);

        const double u = rng.next_double();
        double cum = 0.0;
        std::size_t pick = T - 1;  // rounding fallback: the last token
        for (std::size_t t = 0; t < T; ++t) {
            cum += probs[t];
            if (u < cum) {
                pick = t;
                break;
            }
        }

        const std::string piece = dict.render(static_cast<std::int32_t>(pick));
        out.tokens.push_back(static_cast<std::int32_t>(pick));
        const std::int64_t room = cfg.max_symbols - emitted;
        if (static_cast<std::int64_t>(piece.size()) > room) {
            out.text += piece.substr(0, static_cast<std::size_t>(room));
            out.truncated = true;
            emitted = cfg.max_symbols;
            break;
        }
        out.text += piece;
        emitted += static_cast<std::int64_t>(piece.size());
        if (emitted >= cfg.max_symbols) break;
        state = fuse_step(params, {arc_gates(params, state, static_cast<std::int32_t>(pick))});
    }

    for (std::size_t i = 0; i < out.tokens.size(); ++i) {
        if (i > 0) out.marked += cfg.marker;
        std::string piece = dict.render(out.tokens[i]);
        if (out.truncated && i + 1 == out.tokens.size()) {
            std::size_t earlier = 0;
            for (std::size_t j = 0; j + 1 < out.tokens.size(); ++j) {
                earlier += dict.tokens[static_cast<std::size_t>(out.tokens[j])].symbols.size();
            }
            piece = piece.substr(0, out.text.size() - earlier);
        }
        out.marked += piece;
    }
    return out;
}

}  // namespace mslm
