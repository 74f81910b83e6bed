#include "foqus/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "default_config.hpp"

namespace foqus {

namespace {

using nlohmann::json;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Typed access to one JSON object, with errors naming the full key path.
class Section {
public:
    Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        if (!obj_.is_object())
            fail(path_, "expected an object");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& what)
    {
        throw ConfigError(path + ": " + what);
    }

    std::string at(const std::string& key) const { return path_ + "." + key; }

    void only(std::initializer_list<const char*> keys) const
    {
        for (const auto& [k, _] : obj_.items()) {
            bool known = false;
            for (const char* allowed : keys)
                known = known || k == allowed;
            if (!known)
                fail(at(k), "unknown key");
        }
    }

    const json* find(const std::string& key) const
    {
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void integer(const std::string& key, int& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_number_integer())
                fail(at(key), "expected an integer");
            const auto x = v->get<std::int64_t>();
            if (x < INT32_MIN || x > INT32_MAX)
                fail(at(key), "integer out of range");
            out = static_cast<int>(x);
        }
    }

    void unsigned_integer(const std::string& key, std::uint64_t& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_number_unsigned())
                fail(at(key), "expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }

    void real(const std::string& key, double& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_number())
                fail(at(key), "expected a number");
            out = v->get<double>();
        }
    }

    void boolean(const std::string& key, bool& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_boolean())
                fail(at(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    template <class F>
    void string(const std::string& key, F&& apply) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_string())
                fail(at(key), "expected a string");
            try {
                apply(v->get<std::string>());
            } catch (const std::invalid_argument& e) {
                fail(at(key), e.what());
            }
        }
    }

    template <class F>
    void array(const std::string& key, F&& each) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_array())
                fail(at(key), "expected an array");
            for (std::size_t k = 0; k < v->size(); ++k)
                each((*v)[k], at(key) + "[" + std::to_string(k) + "]");
        }
    }

    template <class F>
    void object(const std::string& key, F&& apply) const
    {
        if (const auto* v = find(key))
            apply(Section(*v, at(key)));
    }

private:
    const json& obj_;
    std::string path_;
};

double element_real(const json& v, const std::string& path)
{
    if (!v.is_number())
        Section::fail(path, "expected a number");
    return v.get<double>();
}

void read_model(const Section& s, ModelSpec& m)
{
    s.only({"arch", "front_end", "symbol_lag", "hidden", "conv1_channels", "conv2_channels", "kernel", "stride",
            "embedding_dim"});
    s.string("arch", [&](const std::string& v) { m.arch = parse_arch(v); });
    s.string("front_end", [&](const std::string& v) { m.front_end = parse_front_end(v); });
    s.integer("symbol_lag", m.symbol_lag);
    s.integer("hidden", m.hidden);
    s.integer("conv1_channels", m.conv1_channels);
    s.integer("conv2_channels", m.conv2_channels);
    s.integer("kernel", m.kernel);
    s.integer("stride", m.stride);
    s.integer("embedding_dim", m.embedding_dim);
}

void read_train(const Section& s, TrainConfig& t)
{
    s.only({"epochs", "batch_size", "learning_rate", "momentum", "shuffle"});
    s.integer("epochs", t.epochs);
    s.integer("batch_size", t.batch_size);
    s.real("learning_rate", t.learning_rate);
    s.real("momentum", t.momentum);
    s.boolean("shuffle", t.shuffle);
}

void read_dataset(const Section& s, ExperimentConfig& cfg)
{
    auto& d = cfg.dataset;
    s.only({"path", "classes", "snr_grid_db", "frames_per_class_per_snr", "frame_len", "samples_per_symbol",
            "train_fraction", "seed"});
    s.string("path", [&](const std::string& v) { cfg.dataset_path = v; });
    if (s.find("classes")) {
        d.classes.clear();
        s.array("classes", [&](const json& v, const std::string& path) {
            if (!v.is_string())
                Section::fail(path, "expected a class name");
            try {
                d.classes.push_back(parse_modulation(v.get<std::string>()));
            } catch (const std::invalid_argument& e) {
                Section::fail(path, e.what());
            }
        });
    }
    if (s.find("snr_grid_db")) {
        d.snr_grid_db.clear();
        s.array("snr_grid_db", [&](const json& v, const std::string& path) {
            if (!v.is_number_integer())
                Section::fail(path, "expected an integer");
            d.snr_grid_db.push_back(v.get<int>());
        });
    }
    s.integer("frames_per_class_per_snr", d.frames_per_class_per_snr);
    s.integer("frame_len", d.frame_len);
    s.integer("samples_per_symbol", d.samples_per_symbol);
    s.real("train_fraction", d.train_fraction);
    s.unsigned_integer("seed", d.seed);
}

json model_json(const ModelSpec& m)
{
    json j = json::object();
    j["arch"] = std::string(arch_name(m.arch));
    j["front_end"] = std::string(front_end_name(m.front_end));
    j["symbol_lag"] = m.symbol_lag;
    j["hidden"] = m.hidden;
    j["conv1_channels"] = m.conv1_channels;
    j["conv2_channels"] = m.conv2_channels;
    j["kernel"] = m.kernel;
    j["stride"] = m.stride;
    j["embedding_dim"] = m.embedding_dim;
    return j;
}

json train_json(const TrainConfig& t)
{
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"shuffle", t.shuffle}};
}

}  // namespace

void ExperimentConfig::validate() const
{
    if (!dataset_path)
        dataset.validate();
    if (rates.empty())
        throw std::invalid_argument("config.rates: at least one rate is required");
    for (std::size_t k = 0; k < rates.size(); ++k)
        if (!(rates[k] > 0.0 && rates[k] <= 1.0))
            throw std::invalid_argument("config.rates[" + std::to_string(k) + "]: rate must be in (0,1]");
    if (!(ablation_rate > 0.0 && ablation_rate <= 1.0))
        throw std::invalid_argument("config.ablation_rate: rate must be in (0,1]");
    if (std::set<double>(rates.begin(), rates.end()).size() != rates.size())
        throw std::invalid_argument("config.rates: duplicate rate");
    if (methods.empty())
        throw std::invalid_argument("config.methods: at least one method is required");
    if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size())
        throw std::invalid_argument("config.methods: duplicate method");
    if (repeats < 1)
        throw std::invalid_argument("config.repeats: must be >= 1");
    if (!std::isfinite(beta) || beta < 0.0)
        throw std::invalid_argument("config.beta: must be finite and >= 0");
    SelectionConfig sc;
    sc.tiers = tiers;
    try {
        sc.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("config.tiers: ") + e.what());
    }
    try {
        record.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("config.record: ") + e.what());
    }
    if (record.epochs < 2)
        throw std::invalid_argument("config.record.epochs: must be >= 2");
    try {
        retrain.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("config.retrain: ") + e.what());
    }
    if (!dataset_path) {
        for (auto [m, name] : {std::pair{select_model, "select_model"}, {eval_model, "eval_model"}}) {
            m.frame_len = dataset.frame_len;
            m.num_classes = static_cast<int>(dataset.classes.size());
            try {
                m.validate();
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(std::string("config.") + name + ": " + e.what());
            }
        }
    }
}

void bind_models(ExperimentConfig& cfg, const Dataset& d)
{
    for (auto* m : {&cfg.select_model, &cfg.eval_model}) {
        m->frame_len = d.frame_len;
        m->num_classes = static_cast<int>(d.num_classes());
        m->validate();
    }
}

ExperimentConfig parse_config(const std::string& text)
{
    json root;
    try {
        root = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    const Section s(root, "config");
    s.only({"dataset", "select_model", "eval_model", "record", "retrain", "methods", "rates", "repeats", "seed",
            "beta", "tiers", "class_balanced", "snr_stratified", "ablation_rate", "parallel_cells"});
    s.object("dataset", [&](const Section& d) { read_dataset(d, cfg); });
    s.object("select_model", [&](const Section& m) { read_model(m, cfg.select_model); });
    s.object("eval_model", [&](const Section& m) { read_model(m, cfg.eval_model); });
    s.object("record", [&](const Section& t) { read_train(t, cfg.record); });
    s.object("retrain", [&](const Section& t) { read_train(t, cfg.retrain); });
    if (s.find("methods")) {
        cfg.methods.clear();
        s.array("methods", [&](const json& v, const std::string& path) {
            if (!v.is_string())
                Section::fail(path, "expected a method name");
            try {
                cfg.methods.push_back(parse_method(v.get<std::string>()));
            } catch (const std::invalid_argument& e) {
                Section::fail(path, e.what());
            }
        });
    }
    if (s.find("rates")) {
        cfg.rates.clear();
        s.array("rates", [&](const json& v, const std::string& path) {
            const double r = element_real(v, path);
            if (!(r > 0.0 && r <= 1.0))
                Section::fail(path, "rate must be in (0,1]");
            cfg.rates.push_back(r);
        });
    }
    s.integer("repeats", cfg.repeats);
    s.unsigned_integer("seed", cfg.seed);
    s.real("beta", cfg.beta);
    if (s.find("tiers")) {
        std::vector<double> t;
        s.array("tiers", [&](const json& v, const std::string& path) { t.push_back(element_real(v, path)); });
        if (t.size() != 3)
            Section::fail(s.at("tiers"), "expected 3 proportions");
        std::copy(t.begin(), t.end(), cfg.tiers.begin());
    }
    s.boolean("class_balanced", cfg.class_balanced);
    s.boolean("snr_stratified", cfg.snr_stratified);
    s.real("ablation_rate", cfg.ablation_rate);
    s.boolean("parallel_cells", cfg.parallel_cells);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path_or_name)
{
    if (path_or_name == "default" && !std::filesystem::exists(path_or_name))
        return parse_config(default_config_text());
    std::ifstream in(path_or_name);
    if (!in)
        throw std::runtime_error("cannot open config " + path_or_name);
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path_or_name + ": " + e.what());
    }
}

std::string serialize_config(const ExperimentConfig& cfg)
{
    nlohmann::ordered_json j;
    nlohmann::ordered_json d;
    if (cfg.dataset_path)
        d["path"] = *cfg.dataset_path;
    d["classes"] = json::array();
    for (auto c : cfg.dataset.classes)
        d["classes"].push_back(std::string(modulation_name(c)));
    d["snr_grid_db"] = cfg.dataset.snr_grid_db;
    d["frames_per_class_per_snr"] = cfg.dataset.frames_per_class_per_snr;
    d["frame_len"] = cfg.dataset.frame_len;
    d["samples_per_symbol"] = cfg.dataset.samples_per_symbol;
    d["train_fraction"] = cfg.dataset.train_fraction;
    d["seed"] = cfg.dataset.seed;
    j["dataset"] = d;
    j["select_model"] = model_json(cfg.select_model);
    j["eval_model"] = model_json(cfg.eval_model);
    j["record"] = train_json(cfg.record);
    j["retrain"] = train_json(cfg.retrain);
    j["methods"] = json::array();
    for (auto m : cfg.methods)
        j["methods"].push_back(std::string(method_name(m)));
    j["rates"] = cfg.rates;
    j["repeats"] = cfg.repeats;
    j["seed"] = cfg.seed;
    j["beta"] = cfg.beta;
    j["tiers"] = cfg.tiers;
    j["class_balanced"] = cfg.class_balanced;
    j["snr_stratified"] = cfg.snr_stratified;
    j["ablation_rate"] = cfg.ablation_rate;
    j["parallel_cells"] = cfg.parallel_cells;
    return j.dump(2) + "\n";
}

const std::string& default_config_text()
{
    static const std::string text = detail::kDefaultConfigText;
    return text;
}

}  // namespace foqus
