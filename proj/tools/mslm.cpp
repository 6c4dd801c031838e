#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mslm/config.hpp"
#include "mslm/corpus.hpp"
#include "mslm/dictcoder.hpp"
#include "mslm/dictionary.hpp"
#include "mslm/errors.hpp"
#include "mslm/lattice.hpp"
#include "mslm/model.hpp"
#include "mslm/sampler.hpp"
#include "mslm/trainer.hpp"

namespace {

using namespace mslm;

std::string printable(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x20 && u < 0x7f) return std::string(1, c);
    char buf[8];
    std::snprintf(buf, sizeof(buf), "\\x%02x", u);
    return buf;
}

// Re-encode a corpus with the dictionary's alphabet so symbol ids agree with
// the token definitions regardless of first-occurrence order in this file.
SymbolSequence remap_to(const SymbolSequence& seq, const Alphabet& alphabet) {
    SymbolSequence out;
    out.alphabet = alphabet;
    out.ids.reserve(seq.ids.size());
    for (std::int32_t id : seq.ids) {
        const char c = seq.alphabet.symbol(id);
        const std::int32_t m = alphabet.id_of(c);
        if (m < 0) {
            throw DataError("corpus symbol '" + printable(c) +
                            "' is not in the dictionary alphabet");
        }
        out.ids.push_back(m);
    }
    return out;
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint file: " + path);
    return load_checkpoint(in, path);
}

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint file: " + path);
    save_checkpoint(out, ckpt);
    if (!out) throw DataError("failed writing checkpoint file: " + path);
}

void require_compatible(const Dictionary& dict, const ModelParams& params) {
    if (params.sizes.tokens != dict.size()) {
        throw DataError("checkpoint is for " + std::to_string(params.sizes.tokens) +
                        " tokens but the dictionary has " + std::to_string(dict.size()));
    }
}

// ---------------------------------------------------------------- learn-dict

struct LearnDictOpts {
    std::string input;
    std::string policy = "raw";
    std::string output;
    std::int32_t t_max = 0;
    bool no_removal = false;
    std::int32_t top = 20;
};

void cmd_learn_dict(const LearnDictOpts& o) {
    const SymbolSequence seq = load_corpus(o.input, parse_policy(o.policy));
    LearnReport report;
    const Dictionary dict = learn_dictionary(seq, o.t_max, !o.no_removal, &report);
    save_dictionary(dict, o.output);

    std::printf("dictionary: %d tokens (alphabet %d, bound %d)\n", dict.size(),
                dict.alphabet.size(), o.t_max);
    std::printf("composite tokens: %d\n", dict.size() - dict.alphabet.size());
    const double ratio = report.symbols == 0
                             ? 0.0
                             : static_cast<double>(report.spans) /
                                   static_cast<double>(report.symbols);
    std::printf("compression: %lld tokens / %lld symbols = %.4f tokens per symbol\n",
                static_cast<long long>(report.spans), static_cast<long long>(report.symbols),
                ratio);

    std::vector<std::int32_t> order(static_cast<std::size_t>(dict.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        return report.counts[static_cast<std::size_t>(a)] >
               report.counts[static_cast<std::size_t>(b)];
    });
    const std::int32_t k = std::min(o.top, dict.size());
    std::printf("rank      count  token\n");
    for (std::int32_t i = 0; i < k; ++i) {
        const std::int32_t id = order[static_cast<std::size_t>(i)];
        std::printf("%4d %10lld  %s\n", i + 1,
                    static_cast<long long>(report.counts[static_cast<std::size_t>(id)]),
                    dict.render_display(id).c_str());
    }
    std::printf("wrote %s\n", o.output.c_str());
}

// ---------------------------------------------------------------- dict-stats

struct DictStatsOpts {
    std::string dict;
};

void cmd_dict_stats(const DictStatsOpts& o) {
    const Dictionary dict = load_dictionary(o.dict);
    std::printf("tokens: %d\n", dict.size());
    std::printf("alphabet: %d\n", dict.alphabet.size());
    std::printf("bound: %d\n", dict.t_max);
    std::printf("composite tokens: %d\n", dict.size() - dict.alphabet.size());

    std::map<std::size_t, std::int32_t> by_length;
    std::int32_t longest = 0;
    for (const Token& tok : dict.tokens) {
        ++by_length[tok.symbols.size()];
        if (tok.symbols.size() > dict.tokens[static_cast<std::size_t>(longest)].symbols.size()) {
            longest = tok.id;
        }
    }
    std::printf("longest token: %s (%zu symbols)\n", dict.render_display(longest).c_str(),
                dict.tokens[static_cast<std::size_t>(longest)].symbols.size());
    std::printf("token length histogram:\n");
    for (const auto& [len, n] : by_length) std::printf("  %zu: %d\n", len, n);
}

// ------------------------------------------------------------- lattice-stats

struct LatticeStatsOpts {
    std::string input;
    std::string policy = "raw";
    std::string dict;
    std::string csv;
};

void cmd_lattice_stats(const LatticeStatsOpts& o) {
    const Dictionary dict = load_dictionary(o.dict);
    const SymbolSequence seq = remap_to(load_corpus(o.input, parse_policy(o.policy)),
                                        dict.alphabet);
    const TokenMatcher matcher(dict);

    std::ofstream csv;
    if (!o.csv.empty()) {
        csv.open(o.csv, std::ios::binary);
        if (!csv) throw DataError("cannot write csv file: " + o.csv);
        csv << "position,arc_count\n";
    }

    ArcStats stats;
    const std::size_t step = std::size_t{1} << 20;
    for (std::size_t w = 0; w < seq.ids.size(); w += step) {
        const Lattice lat =
            build_lattice(seq.ids, w, std::min(seq.ids.size(), w + step), matcher);
        stats.add(lat);
        if (csv.is_open()) {
            for (std::size_t t = lat.begin; t < lat.end; ++t) {
                csv << t << ',' << lat.arc_count(t) << '\n';
            }
        }
    }
    if (csv.is_open() && !csv) throw DataError("failed writing csv file: " + o.csv);

    std::printf("positions: %zu\n", stats.positions());
    std::printf("arcs: %zu\n", stats.arcs());
    std::printf("mean arcs per position: %.4f\n", stats.mean());
    std::printf("max span: %zu\n", stats.max_span());
    std::printf("arc count histogram:\n");
    for (const auto& [arcs, positions] : stats.histogram()) {
        std::printf("  %zu: %zu\n", arcs, positions);
    }
}

// --------------------------------------------------------------------- train

struct TrainOpts {
    std::string config;
    std::string input;
    std::string policy = "raw";
    std::string dict;
    std::string checkpoint;
    std::string curve;
    std::string resume;
    TrainConfig cfg;
    double valid_fraction = 0.05;
    double test_fraction = 0.05;
    bool quiet = false;
    std::map<std::string, CLI::Option*> opt;
};

// Settings file keys mirror the long flags; explicit flags win over the file.
void apply_config_file(TrainOpts& o) {
    const ConfigFile file = parse_config(o.config);
    file.ensure_known({"input", "policy", "dict", "checkpoint", "curve", "resume",
                       "updates", "window", "streams", "hidden", "embed", "learning_rate",
                       "beta1", "beta2", "epsilon", "clip_norm", "eval_every", "seed",
                       "precision", "valid_fraction", "test_fraction"});

    const auto flagged = [&](const char* key) { return o.opt.at(key)->count() > 0; };
    const auto str = [&](const char* key, std::string& target) {
        if (!flagged(key)) {
            if (auto v = file.get_string(key)) target = *v;
        }
    };
    const auto f64 = [&](const char* key, double& target) {
        if (!flagged(key)) {
            if (auto v = file.get_f64(key)) target = *v;
        }
    };
    const auto i32 = [&](const char* key, std::int32_t& target) {
        if (!flagged(key)) {
            if (auto v = file.get_i64(key)) target = static_cast<std::int32_t>(*v);
        }
    };
    const auto i64 = [&](const char* key, std::int64_t& target) {
        if (!flagged(key)) {
            if (auto v = file.get_i64(key)) target = *v;
        }
    };

    str("input", o.input);
    str("policy", o.policy);
    str("dict", o.dict);
    str("checkpoint", o.checkpoint);
    str("curve", o.curve);
    str("resume", o.resume);
    i64("updates", o.cfg.updates);
    i32("window", o.cfg.window);
    i32("streams", o.cfg.streams);
    i32("hidden", o.cfg.hidden);
    i32("embed", o.cfg.embed);
    f64("learning_rate", o.cfg.learning_rate);
    f64("beta1", o.cfg.beta1);
    f64("beta2", o.cfg.beta2);
    f64("epsilon", o.cfg.epsilon);
    f64("clip_norm", o.cfg.clip_norm);
    i64("eval_every", o.cfg.eval_every);
    if (!flagged("seed")) {
        if (auto v = file.get_u64("seed")) o.cfg.seed = *v;
    }
    str("precision", o.cfg.precision);
    f64("valid_fraction", o.valid_fraction);
    f64("test_fraction", o.test_fraction);
}

void cmd_train(TrainOpts& o) {
    if (!o.config.empty()) apply_config_file(o);
    if (o.input.empty()) throw UsageError("train needs --input (or the config key input)");
    if (o.checkpoint.empty()) {
        throw UsageError("train needs --checkpoint (or the config key checkpoint)");
    }
    if (o.valid_fraction < 0.0 || o.test_fraction < 0.0 ||
        o.valid_fraction + o.test_fraction >= 1.0) {
        throw DataError("split fractions must be non-negative and leave room for training");
    }

    Dictionary dict;
    SymbolSequence seq;
    if (!o.dict.empty()) {
        dict = load_dictionary(o.dict);
        seq = remap_to(load_corpus(o.input, parse_policy(o.policy)), dict.alphabet);
    } else {
        // No dictionary: the character model, every symbol its own token.
        seq = load_corpus(o.input, parse_policy(o.policy));
        dict = base_dictionary(seq.alphabet, seq.alphabet.size());
    }

    const auto ranges =
        split(seq, {1.0 - o.valid_fraction - o.test_fraction, o.valid_fraction,
                    o.test_fraction});
    const std::vector<std::int32_t> train_ids(
        seq.ids.begin() + static_cast<std::ptrdiff_t>(ranges[0].begin),
        seq.ids.begin() + static_cast<std::ptrdiff_t>(ranges[0].end));
    const std::vector<std::int32_t> valid_ids(
        seq.ids.begin() + static_cast<std::ptrdiff_t>(ranges[1].begin),
        seq.ids.begin() + static_cast<std::ptrdiff_t>(ranges[1].end));

    std::optional<Checkpoint> resume;
    if (!o.resume.empty()) resume = read_checkpoint_file(o.resume);

    const auto progress = [&](const CurveRecord& r) {
        if (!o.quiet) {
            std::fprintf(stderr, "update %lld %s bpc %.4f\n", static_cast<long long>(r.update),
                         r.split.c_str(), r.bpc);
        }
    };
    const TrainResult result = train(train_ids, valid_ids, dict, o.cfg,
                                     resume ? &*resume : nullptr, progress);

    write_checkpoint_file(o.checkpoint, result.checkpoint);
    if (!o.curve.empty()) {
        std::ofstream out(o.curve, std::ios::binary);
        if (!out) throw DataError("cannot write curve file: " + o.curve);
        write_curve(out, result.curve);
        if (!out) throw DataError("failed writing curve file: " + o.curve);
    }

    std::printf("updates: %lld\n", static_cast<long long>(result.checkpoint.moments.step));
    for (auto it = result.curve.rbegin(); it != result.curve.rend(); ++it) {
        if (it->split == "valid") {
            std::printf("final valid bpc: %.4f\n", it->bpc);
            break;
        }
    }
    std::printf("checkpoint: %s\n", o.checkpoint.c_str());
    if (!o.curve.empty()) std::printf("curve: %s\n", o.curve.c_str());
}

// ---------------------------------------------------------------------- eval

struct EvalOpts {
    std::string input;
    std::string policy = "raw";
    std::string dict;
    std::string checkpoint;
    std::string split_name = "all";
    double valid_fraction = 0.05;
    double test_fraction = 0.05;
    std::int32_t window = 512;
};

void cmd_eval(const EvalOpts& o) {
    const Checkpoint ckpt = read_checkpoint_file(o.checkpoint);

    Dictionary dict;
    SymbolSequence seq;
    if (!o.dict.empty()) {
        dict = load_dictionary(o.dict);
        seq = remap_to(load_corpus(o.input, parse_policy(o.policy)), dict.alphabet);
    } else {
        seq = load_corpus(o.input, parse_policy(o.policy));
        dict = base_dictionary(seq.alphabet, seq.alphabet.size());
    }
    require_compatible(dict, ckpt.params);

    SplitRange range{0, seq.ids.size()};
    if (o.split_name != "all") {
        const auto ranges =
            split(seq, {1.0 - o.valid_fraction - o.test_fraction, o.valid_fraction,
                        o.test_fraction});
        if (o.split_name == "train") {
            range = ranges[0];
        } else if (o.split_name == "valid") {
            range = ranges[1];
        } else if (o.split_name == "test") {
            range = ranges[2];
        } else {
            throw UsageError("unknown split '" + o.split_name +
                             "' (expected train, valid, test, or all)");
        }
    }
    const std::vector<std::int32_t> ids(
        seq.ids.begin() + static_cast<std::ptrdiff_t>(range.begin),
        seq.ids.begin() + static_cast<std::ptrdiff_t>(range.end));
    const double bpc = evaluate_bpc(ids, dict, ckpt.params, o.window);
    std::printf("%.4f\n", bpc);
}

// -------------------------------------------------------------------- sample

struct SampleOpts {
    std::string dict;
    std::string checkpoint;
    SampleConfig cfg;
};

void cmd_sample(SampleOpts& o) {
    const Dictionary dict = load_dictionary(o.dict);
    const Checkpoint ckpt = read_checkpoint_file(o.checkpoint);
    require_compatible(dict, ckpt.params);
    const SampleResult result = sample(ckpt.params, dict, o.cfg);
    std::printf("%s\n", result.marked.c_str());
    if (result.truncated) {
        std::fprintf(stderr, "note: final token truncated at the symbol budget\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multiscale sequence modeling over token lattices"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "cap worker threads")->check(CLI::PositiveNumber);

    LearnDictOpts ld;
    auto* ld_cmd = app.add_subcommand(
        "learn-dict", "learn a token dictionary by pair merging with reversal");
    ld_cmd->fallthrough();
    ld_cmd->add_option("--input", ld.input, "corpus file")->required();
    ld_cmd->add_option("--policy", ld.policy, "normalization policy: raw or text8");
    ld_cmd->add_option("--t-max", ld.t_max, "token bound (>= alphabet size)")->required();
    ld_cmd->add_option("--output", ld.output, "dictionary file to write")->required();
    ld_cmd->add_flag("--no-removal", ld.no_removal, "disable merge reversal");
    ld_cmd->add_option("--top", ld.top, "tokens to list in the report");

    DictStatsOpts ds;
    auto* ds_cmd = app.add_subcommand("dict-stats", "describe a dictionary file");
    ds_cmd->fallthrough();
    ds_cmd->add_option("--dict", ds.dict, "dictionary file")->required();

    LatticeStatsOpts ls;
    auto* ls_cmd =
        app.add_subcommand("lattice-stats", "arc statistics of a corpus under a dictionary");
    ls_cmd->fallthrough();
    ls_cmd->add_option("--input", ls.input, "corpus file")->required();
    ls_cmd->add_option("--policy", ls.policy, "normalization policy: raw or text8");
    ls_cmd->add_option("--dict", ls.dict, "dictionary file")->required();
    ls_cmd->add_option("--csv", ls.csv, "write per-position arc counts here");

    TrainOpts tr;
    auto* tr_cmd = app.add_subcommand("train", "train a model on a corpus");
    tr_cmd->fallthrough();
    tr_cmd->add_option("--config", tr.config, "settings file (flags win over it)");
    tr.opt["input"] = tr_cmd->add_option("--input", tr.input, "corpus file");
    tr.opt["policy"] =
        tr_cmd->add_option("--policy", tr.policy, "normalization policy: raw or text8");
    tr.opt["dict"] = tr_cmd->add_option("--dict", tr.dict,
                                        "dictionary file (omit for the character model)");
    tr.opt["checkpoint"] =
        tr_cmd->add_option("--checkpoint", tr.checkpoint, "checkpoint file to write");
    tr.opt["curve"] = tr_cmd->add_option("--curve", tr.curve, "loss curve csv to write");
    tr.opt["resume"] = tr_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
    tr.opt["updates"] = tr_cmd->add_option("--updates", tr.cfg.updates, "optimizer updates");
    tr.opt["window"] = tr_cmd->add_option("--window", tr.cfg.window, "window length");
    tr.opt["streams"] = tr_cmd->add_option("--streams", tr.cfg.streams, "parallel streams");
    tr.opt["hidden"] = tr_cmd->add_option("--hidden", tr.cfg.hidden, "hidden size");
    tr.opt["embed"] = tr_cmd->add_option("--embed", tr.cfg.embed, "embedding size");
    tr.opt["learning_rate"] =
        tr_cmd->add_option("--learning-rate", tr.cfg.learning_rate, "Adam learning rate");
    tr.opt["beta1"] = tr_cmd->add_option("--beta1", tr.cfg.beta1, "Adam beta1");
    tr.opt["beta2"] = tr_cmd->add_option("--beta2", tr.cfg.beta2, "Adam beta2");
    tr.opt["epsilon"] = tr_cmd->add_option("--epsilon", tr.cfg.epsilon, "Adam epsilon");
    tr.opt["clip_norm"] =
        tr_cmd->add_option("--clip-norm", tr.cfg.clip_norm, "global gradient norm cap");
    tr.opt["eval_every"] =
        tr_cmd->add_option("--eval-every", tr.cfg.eval_every, "updates between curve rows");
    tr.opt["seed"] = tr_cmd->add_option("--seed", tr.cfg.seed, "random seed");
    tr.opt["precision"] = tr_cmd->add_option("--precision", tr.cfg.precision, "f64");
    tr.opt["valid_fraction"] =
        tr_cmd->add_option("--valid-fraction", tr.valid_fraction, "validation fraction");
    tr.opt["test_fraction"] =
        tr_cmd->add_option("--test-fraction", tr.test_fraction, "held-out test fraction");
    tr_cmd->add_flag("--quiet", tr.quiet, "suppress progress lines");

    EvalOpts ev;
    auto* ev_cmd = app.add_subcommand("eval", "bits per character of a checkpoint");
    ev_cmd->fallthrough();
    ev_cmd->add_option("--input", ev.input, "corpus file")->required();
    ev_cmd->add_option("--policy", ev.policy, "normalization policy: raw or text8");
    ev_cmd->add_option("--dict", ev.dict, "dictionary file (omit for the character model)");
    ev_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    ev_cmd->add_option("--split", ev.split_name, "train, valid, test, or all");
    ev_cmd->add_option("--valid-fraction", ev.valid_fraction, "validation fraction");
    ev_cmd->add_option("--test-fraction", ev.test_fraction, "held-out test fraction");
    ev_cmd->add_option("--window", ev.window, "evaluation window length");

    SampleOpts sm;
    auto* sm_cmd = app.add_subcommand("sample", "draw text from a checkpoint");
    sm_cmd->fallthrough();
    sm_cmd->add_option("--dict", sm.dict, "dictionary file")->required();
    sm_cmd->add_option("--checkpoint", sm.checkpoint, "checkpoint file")->required();
    sm_cmd->add_option("--length", sm.cfg.max_symbols, "symbols to draw");
    sm_cmd->add_option("--seed", sm.cfg.seed, "random seed");
    sm_cmd->add_option("--temperature", sm.cfg.temperature, "logit divisor");
    sm_cmd->add_option("--prompt", sm.cfg.prompt, "conditioning text");
    sm_cmd->add_option("--marker", sm.cfg.marker, "token boundary marker");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    Eigen::setNbThreads(threads);
    try {
        if (ld_cmd->parsed()) {
            cmd_learn_dict(ld);
        } else if (ds_cmd->parsed()) {
            cmd_dict_stats(ds);
        } else if (ls_cmd->parsed()) {
            cmd_lattice_stats(ls);
        } else if (tr_cmd->parsed()) {
            cmd_train(tr);
        } else if (ev_cmd->parsed()) {
            cmd_eval(ev);
        } else if (sm_cmd->parsed()) {
            cmd_sample(sm);
        }
        return 0;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "mslm: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "mslm: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "mslm: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mslm: %s\n", e.what());
        return 2;
    }
}
