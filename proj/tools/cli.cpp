#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fragmix/binary_io.hpp"
#include "fragmix/config.hpp"
#include "fragmix/dataset.hpp"
#include "fragmix/geometry.hpp"
#include "fragmix/mixer.hpp"
#include "fragmix/msm.hpp"
#include "fragmix/profile.hpp"
#include "fragmix/synth.hpp"
#include "fragmix/training.hpp"
#include "fragmix/workflows.hpp"

namespace fragmix::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t env_seed(std::uint64_t seed) {
    if (const char* s = std::getenv("FRAGMIX_SEED"); s && *s) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (*end != '\0') throw ConfigError(std::string("FRAGMIX_SEED is not an integer: ") + s);
        return v;
    }
    return seed;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        char* end = nullptr;
        const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
        if (*end != '\0' || v == 0) throw UsageError(std::string("bad ") + what + " entry '" + item + "'");
        out.push_back(static_cast<T>(v));
    }
    if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
    return out;
}

// ---- gen ----

struct GenArgs {
    std::string system;
    std::size_t frames = 0;
    std::size_t trajs = 1;
    std::string out;
    std::uint64_t seed = 0;
    double dt = 0.0;
    std::size_t steps_per_frame = 0;
    double frame_interval_ns = 0.0;
    double barrier = 3.0;
    double theta = 1.0;
    double sigma = 1.0;
    double stay = 0.9;
    double oracle_lag = 0.0;
    std::size_t oracle_bins = 400;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    if (a.frames == 0) throw UsageError("--frames must be at least 1");
    if (a.trajs == 0) throw UsageError("--trajs must be at least 1");
    synth::SystemSpec spec;
    spec.kind = synth::parse_system(a.system);
    spec.seed = env_seed(a.seed);
    spec.double_well.barrier = a.barrier;
    spec.ou.theta = a.theta;
    spec.ou.sigma = a.sigma;
    spec.chain.stay = a.stay;
    switch (spec.kind) {
        case synth::SystemKind::ou: spec.dt = 1e-2; spec.steps_per_frame = 10; break;
        case synth::SystemKind::double_well: spec.dt = 1e-3; spec.steps_per_frame = 20; break;
        case synth::SystemKind::toy_polymer: spec.dt = 1e-2; spec.steps_per_frame = 20; break;
        case synth::SystemKind::chain2: spec.dt = 1.0; spec.steps_per_frame = 1; break;
    }
    if (a.dt > 0) spec.dt = a.dt;
    if (a.steps_per_frame > 0) spec.steps_per_frame = a.steps_per_frame;
    spec.validate();
    const double interval = a.frame_interval_ns > 0 ? a.frame_interval_ns : spec.frame_time();
    const fs::path manifest = synth::generate(spec, a.frames, a.trajs, a.out, interval);
    out << "manifest=" << manifest.string() << "\n";
    if (a.oracle_lag > 0) {
        // Lag given in frames; the oracle works in integrator time.
        const auto spectrum = synth::oracle_timescales(spec, a.oracle_lag * spec.frame_time(), a.oracle_bins);
        synth::write_oracle_csv(fs::path(a.out) / "oracle.csv", spectrum);
        if (!spectrum.timescales.empty()) out << "oracle_t2=" << fmt(spectrum.timescales.front()) << "\n";
    }
    return 0;
}

// ---- featurize ----

struct FeaturizeArgs {
    std::string in;
    std::string out;
    std::size_t hidden = 16;
    std::uint64_t featurizer_seed = 7;
};

int cmd_featurize(const FeaturizeArgs& a, std::ostream& out) {
    if (a.hidden < geometry::kDescriptorCount) {
        throw ConfigError("--hidden " + std::to_string(a.hidden) + " is below the " +
                          std::to_string(geometry::kDescriptorCount) + " residue descriptors");
    }
    const pipeline::Manifest src = pipeline::read_manifest(a.in);
    if (src.kind != "positions") throw ConfigError("featurize needs a positions manifest");
    const fs::path in_dir = fs::absolute(a.in).parent_path();
    fs::create_directories(a.out);
    const fs::path out_dir = fs::absolute(a.out);
    geometry::FeaturizerConfig fc;
    fc.hidden = a.hidden;
    fc.seed = a.featurizer_seed;
    const geometry::ResidueFeaturizer featurizer(fc);
    pipeline::Manifest dst = src;
    dst.kind = "tokens";
    dst.trajectories.clear();
    for (const auto& e : src.trajectories) {
        const auto pos = pipeline::read_position_file(in_dir / e.file);
        const auto tokens = geometry::featurize_series(featurizer, pos.topology, pos.positions, pos.frames);
        const std::string name = fs::path(e.file).stem().string() + ".g2vtok";
        geometry::write_token_file(out_dir / name, tokens);
        dst.trajectories.push_back({name, pos.frames, fs::relative(in_dir / e.file, out_dir).generic_string()});
    }
    pipeline::write_manifest(out_dir / "manifest.txt", dst);
    out << "manifest=" << (fs::path(a.out) / "manifest.txt").string() << "\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string objective = "vamp";
    std::string config;
    std::string data;
    std::string out;
    std::string cache;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    if (a.objective != "vamp" && a.objective != "spib") throw UsageError("--objective must be vamp or spib");
    config::RunConfig cfg = a.config.empty() ? config::RunConfig::parse("") : config::RunConfig::load(a.config);
    cfg.apply_environment();
    pipeline::ExperimentConfig e = cfg.experiment();
    std::unique_ptr<geometry::TokenCache> cache;
    if (!a.cache.empty()) cache = std::make_unique<geometry::TokenCache>(a.cache);
    const auto data = pipeline::load_dataset(a.data, cfg.dataset_options(), cache.get());
    e.lag_frames = data.lag_frames(cfg.lag_ns());
    fs::create_directories(a.out);
    const fs::path dir(a.out);

    auto vamp = pipeline::VampModel::create(e, data);
    const auto run = pipeline::train_vamp(vamp, data, e);
    for (const auto& w : run.warnings) err << "warning: " << w << "\n";
    const std::string prefix = a.objective == "vamp" ? "" : "vamp_";
    pipeline::save_checkpoint(dir / (prefix + "checkpoint.fmx"), cfg.text(), vamp.store);
    pipeline::write_score_csv(dir / (prefix + "scores.csv"), run.train.curve);
    if (a.objective == "vamp") {
        out << "lag_frames=" << e.lag_frames << "\n";
        out << "best_val=" << fmt(run.train.best_val) << "\n";
        return 0;
    }

    const auto features = vamp.all_features(data, e.eval_chunk);
    const auto init = pipeline::kmeans_labels(features, e.vamp_outputs, e.spib_initial_states, derive_seed(e.seed, 0x6B));
    if (!init.warning.empty()) err << "warning: " << init.warning << "\n";
    auto spib = pipeline::SpibModel::create(e, data, init.states);
    const auto srun = pipeline::train_spib(spib, data, e, init.labels);
    pipeline::save_checkpoint(dir / "checkpoint.fmx", cfg.text(), spib.store);
    pipeline::write_score_csv(dir / "scores.csv", srun.train.curve);
    msm::write_labels(dir / "labels.txt", srun.labels);
    out << "lag_frames=" << e.lag_frames << "\n";
    out << "vamp_best_val=" << fmt(run.train.best_val) << "\n";
    out << "states=" << srun.states << " refinements=" << srun.refinements
        << " converged=" << (srun.converged ? 1 : 0) << "\n";
    out << "best_val=" << fmt(srun.train.best_val) << "\n";
    return 0;
}

// ---- profile ----

struct ProfileArgs {
    std::string sizes = "128,214,592";
    std::string windows = "1,2,4,6";
    std::string ops = "gcn";
    std::size_t batch = 4;
    std::size_t hidden = 16;
    std::size_t layers = 3;
    std::size_t heads = 4;
    std::string attention = "blockwise";
    std::size_t block = 64;
    std::size_t warmup = 2;
    std::size_t repeats = 5;
    std::uint64_t seed = 0;
    bool counts_only = false;
    std::string out;
};

int cmd_profile(const ProfileArgs& a, std::ostream& out) {
    pipeline::ProfileOptions o;
    o.sizes = parse_list<std::size_t>(a.sizes, "size");
    o.windows = parse_list<std::size_t>(a.windows, "window");
    o.operators.clear();
    std::stringstream ss(a.ops);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) o.operators.push_back(tmm::parse_operator(item));
    }
    if (o.operators.empty()) throw UsageError("empty operator list");
    if (a.batch < 2) throw UsageError("--batch must be at least 2");
    if (a.repeats < 5 || a.warmup < 2) throw UsageError("profiling needs at least 2 warmups and 5 timed steps");
    o.batch = a.batch;
    o.hidden = a.hidden;
    o.mixer.hidden = a.hidden;
    o.mixer.layers = a.layers;
    o.mixer.heads = a.heads;
    o.mixer.path = mixer::parse_path(a.attention);
    o.mixer.block = a.block;
    o.mixer.validate();
    if (a.hidden % 2 != 0) throw ConfigError("positional encoding needs an even --hidden");
    o.warmup = a.warmup;
    o.repeats = a.repeats;
    o.seed = env_seed(a.seed);
    o.counts_only = a.counts_only;
    const auto rows = pipeline::profile(o);
    pipeline::write_profile_csv(a.out, rows);
    out << "rows=" << rows.size() << "\n";
    return 0;
}

// ---- msm ----

struct MsmArgs {
    std::string labels;
    std::size_t lag = 0;
    std::size_t states = 0;
    double frame_interval_ns = 1.0;
    std::uint64_t min_count = 1;
    std::string out;
};

int cmd_msm(const MsmArgs& a, std::ostream& out) {
    if (a.lag < 1) throw UsageError("--lag must be at least 1");
    if (!(a.frame_interval_ns > 0)) throw UsageError("--frame-interval-ns must be positive");
    const auto labels = msm::read_labels(a.labels);
    const std::size_t inferred = msm::state_count(labels);
    const std::size_t states = a.states ? a.states : inferred;
    if (states < inferred) throw ConfigError("--states is smaller than the largest label + 1");
    const auto model = msm::build_msm(labels, states, a.lag);
    out << "states=" << states << " lag=" << a.lag << "\n";
    out << "counts\n";
    for (std::size_t i = 0; i < states; ++i) {
        for (std::size_t j = 0; j < states; ++j) out << (j ? " " : "") << model.counts.at(i, j);
        out << "\n";
    }
    out << "transition\n";
    for (std::size_t i = 0; i < states; ++i) {
        for (std::size_t j = 0; j < states; ++j) out << (j ? " " : "") << fmt(model.transition.at(i, j));
        out << (model.transition.zero_row[i] ? " # no outgoing counts" : "") << "\n";
    }
    const auto ts = msm::implied_timescales(model.transition, static_cast<double>(a.lag) * a.frame_interval_ns);
    out << "timescales_ns";
    for (double t : ts) out << " " << fmt(t);
    out << "\n";
    if (!a.out.empty()) {
        msm::write_msm_csv(a.out + "_edges.csv", a.out + "_nodes.csv", model, a.frame_interval_ns, a.min_count);
        std::ofstream f(a.out + "_timescales.csv", std::ios::binary);
        f << "rank,timescale_ns\n";
        for (std::size_t i = 0; i < ts.size(); ++i) f << i + 2 << "," << fmt(ts[i]) << "\n";
        if (!f) throw io::IoError("failed writing " + a.out + "_timescales.csv");
    }
    return 0;
}

// ---- attn ----

struct AttnArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string cache;
    std::size_t frames = 64;
};

int cmd_attn(const AttnArgs& a, std::ostream& out) {
    if (a.frames < 1) throw UsageError("--frames must be at least 1");
    const auto ckpt = pipeline::read_checkpoint(a.checkpoint);
    auto cfg = config::RunConfig::parse(ckpt.config_text, a.checkpoint + " (embedded config)");
    cfg.set("attention", "naive");
    pipeline::ExperimentConfig e = cfg.experiment();
    std::unique_ptr<geometry::TokenCache> cache;
    if (!a.cache.empty()) cache = std::make_unique<geometry::TokenCache>(a.cache);
    const auto data = pipeline::load_dataset(a.data, cfg.dataset_options(), cache.get());

    const bool is_vamp = std::any_of(ckpt.parameters.begin(), ckpt.parameters.end(),
                                     [](const auto& p) { return p.first.rfind("vamp.", 0) == 0; });
    std::vector<pipeline::FrameRef> frames;
    const std::size_t total = data.total_frames();
    const std::size_t n = std::min(a.frames, total);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t g = i * total / n;
        std::uint32_t t = 0;
        while (g >= data.trajectories[t].frames()) g -= data.trajectories[t++].frames();
        frames.push_back({t, static_cast<std::uint32_t>(g)});
    }
    mixer::AttentionMap map;
    NoGradScope no_grad;
    if (is_vamp) {
        auto model = pipeline::VampModel::create(e, data);
        pipeline::load_parameters(ckpt, model.store);
        model.embedder.embed(model.store, data, frames, ForwardContext{}, &map);
    } else {
        auto model = pipeline::SpibModel::create(e, data, 2);
        pipeline::load_parameters(ckpt, model.store);
        model.embedder.embed(model.store, data, frames, ForwardContext{}, &map);
    }
    mixer::write_attention_csv(a.out, map);
    out << "layers=" << map.layers << " heads=" << map.heads << " fragments=" << map.fragments
        << " samples=" << map.batch << "\n";
    return 0;
}

std::string config_key_help() {
    std::string s = "Config keys (key=value, defaults shown):\n";
    for (const auto& k : config::known_keys()) {
        s += "  " + std::string(k.key) + "=" + k.default_value + "  " + k.help + "\n";
    }
    s += "Environment: FRAGMIX_SEED overrides seed, FRAGMIX_ISA=scalar|avx2 pins kernels.\n";
    return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"fragmix: token merging and mixing for molecular kinetics"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every command");

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate synthetic trajectories and a manifest");
    g->add_option("--system", gen.system, "ou, doublewell, polymer or chain2")->required();
    g->add_option("--frames", gen.frames, "Frames per trajectory")->required();
    g->add_option("--trajs", gen.trajs, "Number of trajectories");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--seed", gen.seed, "Seed (FRAGMIX_SEED overrides)");
    g->add_option("--dt", gen.dt, "Integrator step; 0 picks the system default");
    g->add_option("--steps-per-frame", gen.steps_per_frame, "Integrator steps per frame; 0 picks the default");
    g->add_option("--frame-interval-ns", gen.frame_interval_ns, "Manifest frame interval; 0 uses dt*steps");
    g->add_option("--barrier", gen.barrier, "Double-well barrier height (kT)");
    g->add_option("--theta", gen.theta, "OU relaxation rate");
    g->add_option("--sigma", gen.sigma, "OU noise amplitude");
    g->add_option("--stay", gen.stay, "chain2 probability of keeping the state");
    g->add_option("--oracle-lag", gen.oracle_lag, "Also write oracle.csv at this lag in frames; 0 skips");
    g->add_option("--oracle-bins", gen.oracle_bins, "Grid bins (or dihedral sectors) for the oracle");

    FeaturizeArgs feat;
    auto* f = app.add_subcommand("featurize", "Turn a positions manifest into residue token files");
    f->add_option("--in", feat.in, "Positions manifest")->required();
    f->add_option("--out", feat.out, "Output directory")->required();
    f->add_option("--hidden", feat.hidden, "Token width H");
    f->add_option("--featurizer-seed", feat.featurizer_seed, "Projection seed");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a VAMP or SPIB model");
    t->add_option("--objective", train.objective, "vamp or spib");
    t->add_option("--config", train.config, "key=value config file; empty uses defaults");
    t->add_option("--data", train.data, "Manifest (positions or tokens)")->required();
    t->add_option("--out", train.out, "Output directory")->required();
    t->add_option("--cache", train.cache, "Token cache directory; empty keeps tokens in memory");
    t->footer(config_key_help());

    ProfileArgs prof;
    auto* p = app.add_subcommand("profile", "Time training steps across sizes, windows and operators");
    p->add_option("--sizes", prof.sizes, "Residue counts N, comma separated");
    p->add_option("--windows", prof.windows, "Windows w, comma separated");
    p->add_option("--ops", prof.ops, "Graph operators, comma separated");
    p->add_option("--batch", prof.batch, "Lagged pairs per step");
    p->add_option("--hidden", prof.hidden, "Token width H");
    p->add_option("--layers", prof.layers, "Transformer layers");
    p->add_option("--heads", prof.heads, "Attention heads");
    p->add_option("--attention", prof.attention, "blockwise or naive");
    p->add_option("--block", prof.block, "Attention block size");
    p->add_option("--warmup", prof.warmup, "Untimed steps first");
    p->add_option("--repeats", prof.repeats, "Timed steps (median reported)");
    p->add_option("--seed", prof.seed, "Seed (FRAGMIX_SEED overrides)");
    p->add_flag("--counts-only", prof.counts_only, "Skip timing; ms_per_step is written as 0");
    p->add_option("--out", prof.out, "CSV path")->required();

    MsmArgs msm_args;
    auto* m = app.add_subcommand("msm", "Build a Markov state model from label trajectories");
    m->add_option("--labels", msm_args.labels, "Label file, one trajectory per line")->required();
    m->add_option("--lag", msm_args.lag, "Lag in frames")->required();
    m->add_option("--states", msm_args.states, "State count; 0 infers max label + 1");
    m->add_option("--frame-interval-ns", msm_args.frame_interval_ns, "ns per frame");
    m->add_option("--min-count", msm_args.min_count, "Smallest count kept in the edge list");
    m->add_option("--out", msm_args.out, "Prefix for _edges.csv, _nodes.csv, _timescales.csv; empty prints only");

    AttnArgs attn;
    auto* at = app.add_subcommand("attn", "Export mean log attention weights from a checkpoint");
    at->add_option("--checkpoint", attn.checkpoint, "Checkpoint written by train")->required();
    at->add_option("--data", attn.data, "Manifest to evaluate on")->required();
    at->add_option("--out", attn.out, "CSV path")->required();
    at->add_option("--cache", attn.cache, "Token cache directory");
    at->add_option("--frames", attn.frames, "Frames sampled evenly across the data");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out);
        if (f->parsed()) return cmd_featurize(feat, out);
        if (t->parsed()) return cmd_train(train, out, err);
        if (p->parsed()) return cmd_profile(prof, out);
        if (m->parsed()) return cmd_msm(msm_args, out);
        if (at->parsed()) return cmd_attn(attn, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace fragmix::cli
