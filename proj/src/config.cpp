#include "fragmix/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fragmix/binary_io.hpp"

namespace fragmix::config {

const std::vector<KeyInfo>& known_keys() {
    static const std::vector<KeyInfo> keys{
        {"seed", "0", "seed for every random stream"},
        {"hidden", "16", "token width H shared by featurizer, merging and mixer"},
        {"featurizer_seed", "7", "seed of the featurizer projection"},
        {"cutoff", "10", "radius-graph cutoff between anchors"},
        {"stride", "1", "keep every stride-th frame"},
        {"standardize_tokens", "1", "zero-mean unit-variance token channels after loading"},
        {"lag_ns", "1", "lag time in ns"},
        {"operator", "gcn", "graph operator: gcn, gc, rggc, tag"},
        {"window", "1", "merging window w"},
        {"tag_hops", "2", "hops K of the tag operator"},
        {"layers", "3", "transformer layers"},
        {"heads", "4", "attention heads"},
        {"mlp_ratio", "2", "MLP width multiple"},
        {"dropout", "0.1", "dropout rate in attention and MLP"},
        {"attention", "blockwise", "attention path: blockwise or naive"},
        {"block", "64", "blockwise attention block size"},
        {"positional_encoding", "1", "add sinusoidal fragment positions"},
        {"vamp_outputs", "2", "VAMP head outputs k"},
        {"batch_size", "1000", "lagged pairs per step"},
        {"vamp_learning_rate", "5e-4", "Adam step size for VAMP"},
        {"spib_learning_rate", "2e-4", "Adam step size for SPIB"},
        {"max_epochs", "100", "VAMP epoch limit"},
        {"spib_max_epochs", "100", "SPIB epoch limit"},
        {"validation_interval", "50", "steps between validation evaluations"},
        {"validation_patience", "10", "evaluations without improvement before stopping"},
        {"training_patience", "1000", "steps without a new best training score before stopping"},
        {"validation_fraction", "0.2", "share of units held out"},
        {"split_mode", "trajectory", "trajectory or temporal"},
        {"split_fragments", "2", "fragments per trajectory for temporal splits"},
        {"spib_latent", "2", "SPIB latent dimension"},
        {"spib_pseudo_inputs", "10", "VampPrior pseudo-inputs"},
        {"spib_beta", "0.01", "weight of the KL term"},
        {"spib_initial_states", "100", "k-means states for the initial labels"},
        {"spib_refine_every", "5", "epochs between label refinements"},
        {"spib_max_refinements", "5", "refinement limit"},
        {"spib_refine_tolerance", "0.01", "stop once fewer labels than this share change"},
        {"eval_chunk", "1000", "frames per evaluation forward pass"},
    };
    return keys;
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

bool known(const std::string& key) {
    for (const auto& k : known_keys())
        if (key == k.key) return true;
    return false;
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : known_keys()) values_[k.key] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
    RunConfig c;
    c.text_ = text;
    std::istringstream in(text);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (!known(key)) throw ConfigError(source + ":" + std::to_string(n) + ": unknown key '" + key + "'");
        c.values_[key] = trim(t.substr(eq + 1));
    }
    c.experiment();  // surfaces contradictions before any compute
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io::IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError(key + ": expected 0/1, got '" + v + "'");
}

void RunConfig::apply_environment() {
    if (const char* s = std::getenv("FRAGMIX_SEED"); s && *s) {
        values_["seed"] = s;
        get_u64("seed");
    }
}

pipeline::ExperimentConfig RunConfig::experiment() const {
    pipeline::ExperimentConfig e;
    e.seed = get_u64("seed");
    auto& m = e.model;
    m.tmm.op = tmm::parse_operator(get("operator"));
    m.tmm.window = get_size("window");
    m.tmm.tag_hops = get_size("tag_hops");
    m.tmm.cutoff = get_double("cutoff");
    m.mixer.layers = get_size("layers");
    m.mixer.heads = get_size("heads");
    m.mixer.mlp_ratio = get_size("mlp_ratio");
    m.mixer.dropout = get_double("dropout");
    m.mixer.path = mixer::parse_path(get("attention"));
    m.mixer.block = get_size("block");
    m.positional_encoding = get_bool("positional_encoding");
    m.set_hidden(get_size("hidden"));
    m.validate();

    e.vamp_outputs = get_size("vamp_outputs");
    if (e.vamp_outputs < 1) throw ConfigError("vamp_outputs must be positive");
    auto train = [&](const char* lr, const char* epochs, std::uint64_t tag) {
        pipeline::TrainConfig t;
        t.batch_size = get_size("batch_size");
        t.learning_rate = get_double(lr);
        t.max_epochs = get_size(epochs);
        t.validation_interval = get_size("validation_interval");
        t.validation_patience = get_size("validation_patience");
        t.training_patience = get_size("training_patience");
        t.seed = derive_seed(e.seed, tag);
        t.validate();
        return t;
    };
    e.vamp_train = train("vamp_learning_rate", "max_epochs", 0x7A4D);
    e.spib_train = train("spib_learning_rate", "spib_max_epochs", 0x5B1B);

    e.split.validation_fraction = get_double("validation_fraction");
    e.split.mode = pipeline::parse_split_mode(get("split_mode"));
    e.split.fragments = get_size("split_fragments");
    e.split.seed = derive_seed(e.seed, 0x5917);
    if (!(e.split.validation_fraction > 0.0 && e.split.validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0, 1)");
    }

    e.spib.latent = get_size("spib_latent");
    e.spib.pseudo_inputs = get_size("spib_pseudo_inputs");
    e.spib.beta = get_double("spib_beta");
    e.spib.hidden = m.hidden();
    e.spib.validate();
    e.spib_initial_states = get_size("spib_initial_states");
    e.refine_every = get_size("spib_refine_every");
    e.max_refinements = get_size("spib_max_refinements");
    e.refine_tolerance = get_double("spib_refine_tolerance");
    e.eval_chunk = get_size("eval_chunk");
    if (e.spib_initial_states < 1 || e.refine_every < 1 || e.eval_chunk < 1) {
        throw ConfigError("spib_initial_states, spib_refine_every and eval_chunk must be positive");
    }
    if (!(lag_ns() > 0.0)) throw ConfigError("lag_ns must be positive");
    if (get_size("stride") < 1) throw ConfigError("stride must be positive");
    return e;
}

pipeline::DatasetOptions RunConfig::dataset_options() const {
    pipeline::DatasetOptions d;
    d.featurizer.hidden = get_size("hidden");
    d.featurizer.seed = get_u64("featurizer_seed");
    d.cutoff = get_double("cutoff");
    d.stride = get_size("stride");
    d.standardize = get_bool("standardize_tokens");
    return d;
}

}  // namespace fragmix::config
