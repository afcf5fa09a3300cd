#include "nlpinn/config.hpp"

#include "nlpinn/error.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace nlpinn {

using nlohmann::json;

nlohmann::json default_config_document() {
    const auto [lambda, mu] = lame_from_engineering(70.0, 0.3);
    return json{
        {"threads", std::max(1u, std::thread::hardware_concurrency())},
        {"grid", {{"nx", 21}, {"ny", 21}, {"width", 1.0}, {"height", 1.0}, {"layout", "nodes"}}},
        {"pddo", {{"stencil_halfwidth", 3}, {"delta_factor", 3.5}}},
        {"material",
         {{"units", "GPa"},
          {"lambda", lambda},
          {"mu", mu},
          {"sigma_y0", 0.1},
          {"hp", 0.5},
          {"trainable", json::array()},
          {"guess", json::object()}}},
        {"network",
         {{"hidden", {20, 20}},
          {"activation", "tanh"},
          {"seed", 1},
          {"shared_trunk", false},
          {"ad_pddo_mode", "per_slot"},
          {"scales", {{"displacement", 1e-3}, {"strain", 1e-3}, {"stress", 0.1}, {"length", 1.0}}}}},
        {"loss", {{"weights", json::object()}, {"equilibrium_terms", "dataset"}}},
        {"train",
         {{"epochs", 2000},
          {"batch_size", 64},
          {"lr_start", 5e-4},
          {"lr_end", 1e-6},
          {"shuffle", true},
          {"seed", 1},
          {"patience", 0},
          {"mode", "solve"},
          {"architecture", "local"},
          {"material_lr_scale", 1.0}}},
        {"data",
         {{"source", "generate"},
          {"generator", "elastic"},
          {"path", ""},
          {"sample_seed", 7},
          {"samples", json::object()},
          {"elastic", {{"kind", "harmonic_quadratic"}, {"amplitude", 1e-3}, {"gradient", {1.0, 0.0, 0.0, 0.0}}}},
          {"plastic",
           {{"amplitude", 0.02},
            {"width", 0.06},
            {"y0", 0.5},
            {"x0", 0.5},
            {"slope", 0.3},
            {"background_x", 4e-4},
            {"background_y", -6e-4}}}}},
        {"outputs", {{"directory", "out"}}},
    };
}

namespace {

// Objects whose keys are free-form (validated separately).
const std::set<std::string> kOpenMaps{"material.guess", "loss.weights", "data.samples"};

bool is_count(const json& v) { return v.is_number_integer() && v.get<std::int64_t>() >= 0; }

std::string type_name(const json& v) {
    if (v.is_boolean()) return "boolean";
    if (v.is_number_unsigned() || v.is_number_integer()) return "integer";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    if (v.is_object()) return "object";
    return "null";
}

void check_type(const json& def, const json& val, const std::string& path) {
    auto fail = [&](const std::string& expected) {
        throw ConfigError("key '" + path + "' expects " + expected + ", got " + type_name(val) + " (" +
                          val.dump() + ")");
    };
    if (def.is_boolean()) {
        if (!val.is_boolean()) fail("a boolean");
    } else if (def.is_number_unsigned() || def.is_number_integer()) {
        if (!is_count(val)) fail("a non-negative integer");
    } else if (def.is_number()) {
        if (!val.is_number()) fail("a number");
    } else if (def.is_string()) {
        if (!val.is_string()) fail("a string");
    } else if (def.is_array()) {
        if (!val.is_array()) fail("an array");
    } else if (def.is_object()) {
        if (!val.is_object()) fail("an object");
    }
}

void merge(json& base, const json& user, const std::string& prefix) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
        json& slot = base[it.key()];
        check_type(slot, it.value(), path);
        if (slot.is_object() && !kOpenMaps.count(path))
            merge(slot, it.value(), path);
        else
            slot = it.value();
    }
}

json parse_document(const std::string& text, const std::string& name) {
    // one set of seen keys per open object
    std::vector<std::set<std::string>> seen;
    std::string duplicate;
    json::parser_callback_t cb = [&](int /*depth*/, json::parse_event_t ev, json& parsed) {
        switch (ev) {
        case json::parse_event_t::object_start: seen.emplace_back(); break;
        case json::parse_event_t::object_end:
            if (!seen.empty()) seen.pop_back();
            break;
        case json::parse_event_t::key:
            if (!seen.empty() && !seen.back().insert(parsed.get<std::string>()).second && duplicate.empty())
                duplicate = parsed.get<std::string>();
            break;
        default: break;
        }
        return true;
    };
    json doc;
    try {
        doc = json::parse(text, cb, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(name + ": " + e.what());
    }
    if (!duplicate.empty()) throw ConfigError(name + ": duplicate key '" + duplicate + "'");
    if (!doc.is_object()) throw ConfigError(name + ": top level must be an object");
    return doc;
}

json override_document(const std::string& ov) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq), raw = ov.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;   // bare words are strings
    }
    json doc = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        parts.push_back(part);
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) doc = json{{*it, doc}};
    return doc;
}

double unit_factor(const std::string& units) {
    if (units == "GPa") return 1e9;
    if (units == "MPa") return 1e6;
    if (units == "Pa") return 1.0;
    throw ConfigError("key 'material.units' must be one of GPa, MPa, Pa");
}

template <typename F>
auto guarded(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const InvalidArgument& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

RunConfig extract(const json& d) {
    RunConfig c;
    c.resolved = d;
    c.threads = d["threads"].get<std::size_t>();
    if (c.threads == 0) throw ConfigError("key 'threads' must be at least 1");

    const auto& g = d["grid"];
    c.grid.nx = g["nx"].get<std::size_t>();
    c.grid.ny = g["ny"].get<std::size_t>();
    c.grid.width = g["width"].get<double>();
    c.grid.height = g["height"].get<double>();
    const auto layout = g["layout"].get<std::string>();
    if (layout == "nodes")
        c.grid.layout = GridLayout::nodes;
    else if (layout == "cell_centers")
        c.grid.layout = GridLayout::cell_centers;
    else
        throw ConfigError("key 'grid.layout' must be nodes or cell_centers");

    c.pddo.stencil_halfwidth = d["pddo"]["stencil_halfwidth"].get<std::size_t>();
    c.pddo.delta_factor = d["pddo"]["delta_factor"].get<double>();
    if (c.pddo.stencil_halfwidth < 1) throw ConfigError("key 'pddo.stencil_halfwidth' must be at least 1");
    if (!(c.pddo.delta_factor > 0.0)) throw ConfigError("key 'pddo.delta_factor' must be positive");

    const auto& m = d["material"];
    const double f = unit_factor(m["units"].get<std::string>());
    c.material.lambda = m["lambda"].get<double>() * f;
    c.material.mu = m["mu"].get<double>() * f;
    c.material.sigma_y0 = m["sigma_y0"].get<double>() * f;
    c.material.hp = m["hp"].get<double>() * f;
    for (const auto& t : m["trainable"]) {
        if (!t.is_string()) throw ConfigError("key 'material.trainable' expects an array of parameter names");
        const auto n = t.get<std::string>();
        if (n == "lambda") c.material.trainable.lambda = true;
        else if (n == "mu") c.material.trainable.mu = true;
        else if (n == "sigma_y0") c.material.trainable.sigma_y0 = true;
        else if (n == "hp") c.material.trainable.hp = true;
        else throw ConfigError("key 'material.trainable' names unknown parameter '" + n + "'");
    }
    guarded("material", [&] {
        validate(c.material);
        return 0;
    });
    c.guess = c.material;
    c.guess.lambda *= 0.5;
    c.guess.mu *= 0.5;
    c.guess.sigma_y0 *= 0.5;
    c.guess.hp *= 0.5;
    for (auto it = m["guess"].begin(); it != m["guess"].end(); ++it) {
        const std::string key = "material.guess." + it.key();
        if (!it.value().is_number()) throw ConfigError("key '" + key + "' expects a number");
        const double v = it.value().get<double>() * f;
        if (it.key() == "lambda") c.guess.lambda = v;
        else if (it.key() == "mu") c.guess.mu = v;
        else if (it.key() == "sigma_y0") c.guess.sigma_y0 = v;
        else if (it.key() == "hp") c.guess.hp = v;
        else throw ConfigError("unknown config key '" + key + "'");
    }

    const auto& n = d["network"];
    c.model.hidden.clear();
    for (const auto& w : n["hidden"]) {
        if (!is_count(w) || w.get<std::size_t>() == 0)
            throw ConfigError("key 'network.hidden' expects an array of positive integers");
        c.model.hidden.push_back(w.get<std::size_t>());
    }
    if (c.model.hidden.empty()) throw ConfigError("key 'network.hidden' needs at least one layer");
    c.model.activation = guarded("network.activation", [&] { return activation_from_string(n["activation"].get<std::string>()); });
    c.model.seed = n["seed"].get<std::uint64_t>();
    c.model.shared_trunk = n["shared_trunk"].get<bool>();
    c.model.ad_mode = guarded("network.ad_pddo_mode", [&] { return ad_pddo_mode_from_string(n["ad_pddo_mode"].get<std::string>()); });
    c.model.stencil_halfwidth = c.pddo.stencil_halfwidth;
    const auto& s = n["scales"];
    c.model.scales.displacement = s["displacement"].get<double>();
    c.model.scales.strain = s["strain"].get<double>();
    c.model.scales.stress = s["stress"].get<double>() * f;
    c.model.scales.length = s["length"].get<double>();
    for (const char* k : {"displacement", "strain", "stress", "length"})
        if (!(s[k].get<double>() > 0.0)) throw ConfigError(std::string("key 'network.scales.") + k + "' must be positive");

    const auto& l = d["loss"];
    const auto names = loss_term_names(true, true);
    for (auto it = l["weights"].begin(); it != l["weights"].end(); ++it) {
        const std::string key = "loss.weights." + it.key();
        if (std::find(names.begin(), names.end(), it.key()) == names.end())
            throw ConfigError("unknown config key '" + key + "'");
        if (!it.value().is_number() || !(it.value().get<double>() >= 0.0))
            throw ConfigError("key '" + key + "' expects a non-negative number");
        c.loss.weights[it.key()] = it.value().get<double>();
    }
    const auto eq = l["equilibrium_terms"].get<std::string>();
    if (eq == "dataset") c.loss.equilibrium_terms = EquilibriumSetting::from_dataset;
    else if (eq == "on") c.loss.equilibrium_terms = EquilibriumSetting::on;
    else if (eq == "off") c.loss.equilibrium_terms = EquilibriumSetting::off;
    else throw ConfigError("key 'loss.equilibrium_terms' must be dataset, on or off");

    const auto& t = d["train"];
    c.train.epochs = t["epochs"].get<std::size_t>();
    c.train.batch_size = t["batch_size"].get<std::size_t>();
    c.train.lr_start = t["lr_start"].get<double>();
    c.train.lr_end = t["lr_end"].get<double>();
    c.train.shuffle = t["shuffle"].get<bool>();
    c.train.seed = t["seed"].get<std::uint64_t>();
    c.train.patience = t["patience"].get<std::size_t>();
    c.train.mode = guarded("train.mode", [&] { return run_mode_from_string(t["mode"].get<std::string>()); });
    c.train.architecture = guarded("train.architecture", [&] { return architecture_from_string(t["architecture"].get<std::string>()); });
    c.train.material_lr_scale = t["material_lr_scale"].get<double>();
    c.train.threads = c.threads;
    c.model.architecture = c.train.architecture;
    guarded("train", [&] {
        validate(c.train);
        return 0;
    });

    const auto& dd = d["data"];
    const auto src = dd["source"].get<std::string>();
    if (src == "generate") c.data.source = DataSource::generate;
    else if (src == "file") c.data.source = DataSource::file;
    else throw ConfigError("key 'data.source' must be generate or file");
    const auto gen = dd["generator"].get<std::string>();
    if (gen == "elastic") c.data.generator = GeneratorKind::elastic;
    else if (gen == "plastic") c.data.generator = GeneratorKind::plastic;
    else throw ConfigError("key 'data.generator' must be elastic or plastic");
    c.data.path = dd["path"].get<std::string>();
    if (c.data.source == DataSource::file && c.data.path.empty())
        throw ConfigError("key 'data.path' is required when data.source is file");
    c.data.sample_seed = dd["sample_seed"].get<std::uint64_t>();
    for (auto it = dd["samples"].begin(); it != dd["samples"].end(); ++it) {
        const std::string key = "data.samples." + it.key();
        Channel ch;
        try {
            ch = channel_from_string(it.key());
        } catch (const InvalidArgument&) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        if (!is_count(it.value())) throw ConfigError("key '" + key + "' expects a non-negative integer");
        c.data.samples[index_of(ch)] = it.value().get<std::size_t>();
    }
    const auto& el = dd["elastic"];
    c.data.elastic.kind = guarded("data.elastic.kind", [&] { return elastic_kind_from_string(el["kind"].get<std::string>()); });
    c.data.elastic.amplitude = el["amplitude"].get<double>();
    if (el["gradient"].size() != 4) throw ConfigError("key 'data.elastic.gradient' expects 4 numbers");
    for (std::size_t i = 0; i < 4; ++i) {
        if (!el["gradient"][i].is_number()) throw ConfigError("key 'data.elastic.gradient' expects 4 numbers");
        c.data.elastic.gradient[i] = el["gradient"][i].get<double>();
    }
    const auto& pl = dd["plastic"];
    c.data.plastic.amplitude = pl["amplitude"].get<double>();
    c.data.plastic.width = pl["width"].get<double>();
    c.data.plastic.y0 = pl["y0"].get<double>();
    c.data.plastic.x0 = pl["x0"].get<double>();
    c.data.plastic.slope = pl["slope"].get<double>();
    c.data.plastic.background_x = pl["background_x"].get<double>();
    c.data.plastic.background_y = pl["background_y"].get<double>();
    if (!(c.data.plastic.width > 0.0)) throw ConfigError("key 'data.plastic.width' must be positive");

    c.output_dir = d["outputs"]["directory"].get<std::string>();
    return c;
}

} // namespace

MaterialParams RunConfig::initial_material() const {
    if (train.mode == RunMode::solve) return material;
    MaterialParams m = material;
    if (m.trainable.lambda) m.lambda = guess.lambda;
    if (m.trainable.mu) m.mu = guess.mu;
    if (m.trainable.sigma_y0) m.sigma_y0 = guess.sigma_y0;
    if (m.trainable.hp) m.hp = guess.hp;
    return m;
}

RunConfig resolve_config_text(const std::string& text, const std::vector<std::string>& overrides,
                              const std::string& source_name) {
    json doc = default_config_document();
    if (!text.empty()) merge(doc, parse_document(text, source_name), "");
    for (const auto& ov : overrides) merge(doc, override_document(ov), "");
    return extract(doc);
}

RunConfig resolve_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    RunConfig cfg = resolve_config_text(text, overrides, path.empty() ? "<defaults>" : path.string());
    if (cfg.data.source == DataSource::file && cfg.data.path.is_relative() && !path.empty())
        cfg.data.path = std::filesystem::absolute(path).parent_path() / cfg.data.path;
    if (cfg.data.source == DataSource::file) {
        cfg.data.path = std::filesystem::absolute(cfg.data.path).lexically_normal();
        cfg.resolved["data"]["path"] = cfg.data.path.string();
    }
    cfg.output_dir = std::filesystem::absolute(cfg.output_dir).lexically_normal();
    cfg.resolved["outputs"]["directory"] = cfg.output_dir.string();
    return cfg;
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "// nlpinn resolved config v1\n" << cfg.resolved.dump(2) << '\n';
}

} // namespace nlpinn
