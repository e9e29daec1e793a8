#include "fragmix/profile.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "fragmix/binary_io.hpp"
#include "fragmix/memory.hpp"
#include "fragmix/model.hpp"
#include "fragmix/objectives.hpp"
#include "fragmix/ops.hpp"
#include "fragmix/training.hpp"

namespace fragmix::pipeline {

namespace {

// Random-walk chain with 3.8 length steps, one anchor per residue.
std::vector<geometry::Vec3> random_chain(std::size_t n, Rng& rng) {
    std::vector<geometry::Vec3> p(n, geometry::Vec3{0, 0, 0});
    for (std::size_t i = 1; i < n; ++i) {
        double d[3] = {rng.normal(), rng.normal(), rng.normal()};
        const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        for (int a = 0; a < 3; ++a) p[i][a] = p[i - 1][a] + 3.8 * d[a] / len;
    }
    return p;
}

}  // namespace

ProfileRow profile_one(std::size_t residues, std::size_t window, tmm::GraphOperator op,
                       const ProfileOptions& options) {
    ModelConfig cfg;
    cfg.mixer = options.mixer;
    cfg.tmm.op = op;
    cfg.tmm.window = window;
    cfg.tmm.cutoff = options.cutoff;
    cfg.set_hidden(options.hidden);

    Rng rng(derive_seed(options.seed, residues * 131 + window * 7 + static_cast<std::size_t>(op)));
    ParameterStore store;
    const std::vector<std::uint8_t> ligand(residues, 0);
    const FragmentMixerModel model = FragmentMixerModel::create(store, cfg, residues, ligand, rng);
    const auto head = objectives::VampHead::create(store, "vamp", options.hidden, options.outputs, rng);

    const std::size_t samples = 2 * options.batch;
    // The chain depends on N only, so every window and operator sees the same graph.
    Rng chain_rng(derive_seed(options.seed, residues));
    const auto graph =
        tmm::repeat_graph(geometry::radius_graph(random_chain(residues, chain_rng), options.cutoff), samples);
    Tensor tokens = Tensor::zeros({samples * residues, options.hidden});
    {
        // Per-sample offset plus per-residue noise; pure noise averages away in
        // the pooling and leaves the VAMP covariance singular.
        auto t = tokens.mutable_data();
        std::vector<double> offset(options.hidden);
        for (std::size_t s = 0; s < samples; ++s) {
            for (double& o : offset) o = rng.normal();
            for (std::size_t r = 0; r < residues; ++r)
                for (std::size_t h = 0; h < options.hidden; ++h)
                    t[(s * residues + r) * options.hidden + h] = offset[h] + rng.normal();
        }
    }
    std::vector<std::int64_t> first(options.batch), second(options.batch);
    std::iota(first.begin(), first.end(), 0);
    std::iota(second.begin(), second.end(), static_cast<std::int64_t>(options.batch));

    Adam adam(AdamConfig{1e-4});
    ProfileRow row;
    row.residues = residues;
    row.window = window;
    row.op = op;
    row.fragments = model.fragments();
    row.pair_count = static_cast<std::uint64_t>(row.fragments) * row.fragments;

    auto step = [&](std::uint64_t index) {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            mixer::reset_pair_evaluations();
            const ForwardContext ctx{true, options.seed, index};
            const Tensor f = head(store, model.embed_tokens(store, tokens, graph, samples, ctx));
            row.pair_evaluations = mixer::pair_evaluations();
            loss = ops::neg(objectives::vamp2_score(ops::gather_rows(f, first), ops::gather_rows(f, second)));
        }
        store.zero_grad();
        tape.backward(loss);
        adam.step(store);
        store.zero_grad();
    };

    {
        memory::PeakScope peak;
        step(0);
        row.peak_bytes = peak.peak_above_baseline();
    }
    if (options.counts_only) return row;
    for (std::size_t i = 1; i < options.warmup; ++i) step(i);
    std::vector<double> ms;
    for (std::size_t i = 0; i < std::max<std::size_t>(options.repeats, 1); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        step(options.warmup + i);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    row.ms_per_step = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
    return row;
}

std::vector<ProfileRow> profile(const ProfileOptions& options) {
    if (options.batch < 2) throw ConfigError("profile batch must be at least 2 pairs");
    std::vector<ProfileRow> rows;
    for (auto op : options.operators)
        for (std::size_t n : options.sizes)
            for (std::size_t w : options.windows) rows.push_back(profile_one(n, w, op, options));
    return rows;
}

void write_profile_csv(const std::filesystem::path& path, std::span<const ProfileRow> rows) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw io::IoError("cannot write " + path.string());
    std::fprintf(f, "N,w,operator,ms_per_step,peak_bytes,pair_count\n");
    for (const ProfileRow& r : rows) {
        const auto name = tmm::operator_name(r.op);
        std::fprintf(f, "%zu,%zu,%.*s,%.6f,%zu,%llu\n", r.residues, r.window, static_cast<int>(name.size()),
                     name.data(), r.ms_per_step, r.peak_bytes, static_cast<unsigned long long>(r.pair_count));
    }
    if (std::fclose(f) != 0) throw io::IoError("failed writing " + path.string());
}

}  // namespace fragmix::pipeline
