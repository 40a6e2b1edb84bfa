#include "cryoquery/config.hpp"

#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "cryoquery/errors.hpp"
#include "cryoquery/threading.hpp"

namespace cq::cfg {

namespace {

struct KeyDef {
    const char* key;
    const char* def;
};

// Section order defines the echo layout.
const std::vector<KeyDef>& key_defs() {
    static const std::vector<KeyDef> defs = {
        {"run.seed", "0"},
        {"run.threads", "0"},  // 0 -> hardware
        {"run.deterministic", "true"},
        {"run.out", "out"},

        {"dataset.stack", ""},
        {"dataset.metadata", ""},
        {"dataset.initial_poses", ""},

        {"model.n_queries", "64"},
        {"model.token_dim", "64"},
        {"model.blocks", "3"},
        {"model.ffn_hidden", "0"},
        {"model.density_hidden", "0"},
        {"model.value_source", "queries"},  // queries | keys
        {"model.positivity", "false"},
        {"model.levels", "16"},
        {"model.features_per_level", "2"},
        {"model.log2_hashmap", "15"},
        {"model.base_resolution", "16"},
        {"model.max_resolution", "0"},
        {"model.head_hidden", "16"},
        {"model.encoder_layers", "10"},
        {"model.encoder_width", "128"},
        {"model.dz", "16"},
        {"model.translation_range", "10"},

        {"train.batch", "8"},
        {"train.pretrain_batch", "64"},
        {"train.depth_steps", "0"},
        {"train.pretrain_epochs", "200"},
        {"train.epochs", "20"},
        {"train.lr_tables", "1e-2"},
        {"train.lr_model", "1e-4"},
        {"train.lr_orient_refine", "1e-5"},
        {"train.lr_orient_pretrain", "1e-4"},
        {"train.freeze_orientation", "false"},
        {"train.disable_deformation", "false"},
        {"train.disable_spatial_attention", "false"},
        {"train.pose_source", "encoder"},  // encoder | given

        {"simulate.volumes", ""},
        {"simulate.n_images", "1000"},
        {"simulate.snr", "inf"},
        {"simulate.ctf", "weak_phase"},  // weak_phase | gaussian | none
        {"simulate.defocus_min", "10000"},
        {"simulate.defocus_max", "20000"},
        {"simulate.cs", "2.7"},
        {"simulate.kv", "300"},
        {"simulate.amp_contrast", "0.1"},
        {"simulate.bfactor", "0"},
        {"simulate.translation_range", "10"},
        {"simulate.depth_steps", "0"},
        {"simulate.perturb_rot_sigma", "0"},
        {"simulate.perturb_trans", "0"},
    };
    return defs;
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    for (const auto& d : key_defs()) c.values_[d.key] = d.def;
    return c;
}

void RunConfig::require_known(const std::string& key) const {
    if (values_.find(key) == values_.end())
        throw ConfigError("unknown configuration key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::string line, section;
    long lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        require_known(key);
        values_[key] = value;
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    require_known(key);
    values_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
    require_known(key);
    return values_.at(key);
}

long RunConfig::integer(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected integer, got '" + s + "'");
    return v;
}

double RunConfig::real(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected number, got '" + s + "'");
    return v;
}

bool RunConfig::boolean(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + s + "'");
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    std::string section;
    for (const auto& d : key_defs()) {
        const std::string key = d.key;
        const std::string sec = key.substr(0, key.find('.'));
        if (sec != section) {
            if (!section.empty()) out << "\n";
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << key.substr(key.find('.') + 1) << " = " << values_.at(key) << "\n";
    }
    return out.str();
}

void RunConfig::write_echo(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << echo();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(echo()); }

ModelConfig RunConfig::model_config(int image_side) const {
    ModelConfig m;
    m.d = image_side;
    m.decoder.n_tokens = static_cast<int>(integer("model.n_queries"));
    m.decoder.token_dim = static_cast<int>(integer("model.token_dim"));
    m.decoder.blocks = static_cast<int>(integer("model.blocks"));
    m.decoder.ffn_hidden = static_cast<int>(integer("model.ffn_hidden"));
    m.decoder.density_hidden = static_cast<int>(integer("model.density_hidden"));
    const std::string vs = str("model.value_source");
    if (vs == "queries")
        m.decoder.value_from_keys = false;
    else if (vs == "keys")
        m.decoder.value_from_keys = true;
    else
        throw ConfigError("model.value_source must be 'queries' or 'keys'");
    m.decoder.positivity = boolean("model.positivity");
    m.decoder.spatial_attention = !boolean("train.disable_spatial_attention");
    m.grid.levels = static_cast<int>(integer("model.levels"));
    m.grid.features_per_level = static_cast<int>(integer("model.features_per_level"));
    m.grid.log2_table_size = static_cast<int>(integer("model.log2_hashmap"));
    m.grid.base_resolution = static_cast<int>(integer("model.base_resolution"));
    m.grid.max_resolution = static_cast<int>(integer("model.max_resolution"));
    m.grid.head_hidden = static_cast<int>(integer("model.head_hidden"));
    m.grid.head_out = m.grid.levels * m.grid.features_per_level;
    m.encoder_layers = static_cast<int>(integer("model.encoder_layers"));
    m.encoder_width = static_cast<int>(integer("model.encoder_width"));
    m.dz = static_cast<int>(integer("model.dz"));
    m.translation_range_px = real("model.translation_range");
    m.seed = static_cast<std::uint64_t>(integer("run.seed"));
    return m;
}

train::TrainConfig RunConfig::train_config() const {
    train::TrainConfig t;
    t.batch = static_cast<int>(integer("train.batch"));
    t.pretrain_batch = static_cast<int>(integer("train.pretrain_batch"));
    t.depth_steps = static_cast<int>(integer("train.depth_steps"));
    t.pretrain_epochs = static_cast<int>(integer("train.pretrain_epochs"));
    t.epochs = static_cast<int>(integer("train.epochs"));
    t.lr_tables = real("train.lr_tables");
    t.lr_model = real("train.lr_model");
    t.lr_orient_refine = real("train.lr_orient_refine");
    t.lr_orient_pretrain = real("train.lr_orient_pretrain");
    t.seed = static_cast<std::uint64_t>(integer("run.seed"));
    t.deterministic = boolean("run.deterministic");
    t.threads = static_cast<int>(integer("run.threads"));
    if (t.threads <= 0) t.threads = hardware_threads();
    t.freeze_orientation = boolean("train.freeze_orientation");
    t.disable_deformation = boolean("train.disable_deformation");
    const std::string ps = str("train.pose_source");
    if (ps == "encoder")
        t.pose_source = train::TrainConfig::PoseSource::encoder;
    else if (ps == "given")
        t.pose_source = train::TrainConfig::PoseSource::given;
    else
        throw ConfigError("train.pose_source must be 'encoder' or 'given'");
    return t;
}

img::SimulateSpec RunConfig::simulate_spec() const {
    img::SimulateSpec s;
    s.n_images = static_cast<int>(integer("simulate.n_images"));
    s.snr = real("simulate.snr");
    const std::string kind = str("simulate.ctf");
    if (kind == "weak_phase")
        s.ctf.kind = img::CtfKind::weak_phase;
    else if (kind == "gaussian")
        s.ctf.kind = img::CtfKind::gaussian;
    else if (kind == "none")
        s.ctf.kind = img::CtfKind::none;
    else
        throw ConfigError("simulate.ctf must be weak_phase, gaussian or none");
    s.ctf.defocus_min_A = real("simulate.defocus_min");
    s.ctf.defocus_max_A = real("simulate.defocus_max");
    s.ctf.cs_mm = real("simulate.cs");
    s.ctf.kv = real("simulate.kv");
    s.ctf.amp_contrast = real("simulate.amp_contrast");
    s.ctf.bfactor_A2 = real("simulate.bfactor");
    s.translation_range_px = real("simulate.translation_range");
    s.seed = static_cast<std::uint64_t>(integer("run.seed"));
    s.depth_steps = static_cast<int>(integer("simulate.depth_steps"));
    s.perturb_rot_sigma = real("simulate.perturb_rot_sigma");
    s.perturb_trans_px = real("simulate.perturb_trans");
    s.threads = static_cast<int>(integer("run.threads"));
    if (s.threads <= 0) s.threads = hardware_threads();
    return s;
}

}  // namespace cq::cfg
