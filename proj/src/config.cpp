#include "keyperm/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "keyperm/binary_io.hpp"
#include "keyperm/error.hpp"

namespace keyperm {

namespace {

namespace pt = boost::property_tree;

struct Section {
    std::string name;
    const pt::ptree* tree;
    std::string source;

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(source + ": [" + name + "] " + key + ": " + msg);
    }

    std::optional<std::string> str(const std::string& key) const {
        auto v = tree->get_optional<std::string>(key);
        if (!v) return std::nullopt;
        return *v;
    }

    std::optional<double> real(const std::string& key) const {
        auto v = str(key);
        if (!v) return std::nullopt;
        try {
            std::size_t used = 0;
            const double d = std::stod(*v, &used);
            if (used != v->size()) fail(key, "trailing characters in '" + *v + "'");
            return d;
        } catch (const std::logic_error&) {
            fail(key, "expected a number, got '" + *v + "'");
        }
    }

    std::optional<std::uint64_t> integer(const std::string& key) const {
        auto v = str(key);
        if (!v) return std::nullopt;
        std::uint64_t out = 0;
        auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc() || p != v->data() + v->size())
            fail(key, "expected a non-negative integer, got '" + *v + "'");
        return out;
    }

    std::optional<bool> boolean(const std::string& key) const {
        auto v = str(key);
        if (!v) return std::nullopt;
        if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
        if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
        fail(key, "expected a boolean, got '" + *v + "'");
    }

    template <typename T, typename Parse>
    std::optional<T> parsed(const std::string& key, Parse&& parse) const {
        auto v = str(key);
        if (!v) return std::nullopt;
        try {
            return parse(*v);
        } catch (const ConfigError& e) {
            fail(key, e.what());
        }
    }
};

template <typename T>
void set_if(std::optional<T> v, T& dst) {
    if (v) dst = *v;
}

template <typename T, typename U>
void set_cast(std::optional<U> v, T& dst) {
    if (v) dst = static_cast<T>(*v);
}

const std::map<std::string, std::set<std::string>>& allowed_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"run", {"seed", "dataset", "data_dir", "output_dir", "train_size", "val_size", "test_size"}},
        {"victim", {"arch", "mode", "key", "model", "epochs", "batch_size", "optimizer", "learning_rate", "momentum"}},
        {"attacker", {"knowledge", "surrogate_arch", "surrogate_model"}},
        {"attack", {"family", "norm", "mode", "target_rule", "epsilon", "kappa", "c_initial", "c_min", "c_max",
                    "c_steps", "iterations", "learning_rate", "abort_early", "tau_decrease", "max_rounds", "samples",
                    "seed", "batch"}},
        {"evaluate", {"preset", "cache_dir", "report"}},
    };
    return keys;
}

bool names_key_material(const std::string& key, const std::string& value) {
    const bool value_like = value.size() >= 5 && value.compare(value.size() - 5, 5, ".pkey") == 0;
    return key.find("key") != std::string::npos || value_like;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ": line " + std::to_string(e.line()) + ": " + e.message());
    }

    for (const auto& [name, sec] : tree) {
        if (sec.empty() && !sec.data().empty())
            throw ConfigError(source + ": '" + name + "' appears outside any section");
        auto it = allowed_keys().find(name);
        if (it == allowed_keys().end()) throw ConfigError(source + ": unknown section [" + name + "]");
        for (const auto& [key, value] : sec) {
            // the attacker never gets to name key material, whatever the spelling
            if (name == "attacker" && names_key_material(key, value.data()))
                throw ProtocolViolation(source + ": [attacker] " + key +
                                        ": attacker configuration may not reference key material");
            if (!it->second.count(key)) throw ConfigError(source + ": [" + name + "] unknown key '" + key + "'");
        }
    }

    auto section = [&](const std::string& name) {
        static const pt::ptree empty;
        auto child = tree.get_child_optional(name);
        return Section{name, child ? &*child : &empty, source};
    };

    RunConfig cfg;
    const Section run = section("run");
    set_if(run.integer("seed"), cfg.run.seed);
    set_if(run.str("dataset"), cfg.run.dataset);
    if (auto v = run.str("data_dir")) cfg.run.data_dir = *v;
    if (auto v = run.str("output_dir")) cfg.run.output_dir = *v;
    set_cast(run.integer("train_size"), cfg.run.sizes.train);
    set_cast(run.integer("val_size"), cfg.run.sizes.val);
    set_cast(run.integer("test_size"), cfg.run.sizes.test_head);

    const Section victim = section("victim");
    if (auto a = victim.parsed<Arch>("arch", [](const std::string& s) { return parse_arch(s); })) cfg.victim.arch = *a;
    if (auto m = victim.str("mode")) {
        if (*m == "defended") cfg.victim.defended = true;
        else if (*m == "classical") cfg.victim.defended = false;
        else victim.fail("mode", "expected classical or defended, got '" + *m + "'");
    }
    if (auto v = victim.str("key")) cfg.victim.key = *v;
    if (auto v = victim.str("model")) cfg.victim.model = *v;
    cfg.victim.train.seed = cfg.run.seed;
    set_cast(victim.integer("epochs"), cfg.victim.train.epochs);
    set_cast(victim.integer("batch_size"), cfg.victim.train.batch_size);
    if (auto o = victim.parsed<Optimizer>("optimizer", [](const std::string& s) { return parse_optimizer(s); }))
        cfg.victim.train.optimizer = *o;
    set_if(victim.real("learning_rate"), cfg.victim.train.learning_rate);
    set_if(victim.real("momentum"), cfg.victim.train.momentum);
    if (cfg.victim.key && !cfg.victim.defended)
        victim.fail("key", "a key file only makes sense with mode = defended");

    const Section attacker = section("attacker");
    if (auto k = attacker.parsed<Knowledge>("knowledge", [](const std::string& s) { return parse_knowledge(s); }))
        cfg.attacker.knowledge = *k;
    if (auto a = attacker.parsed<Arch>("surrogate_arch", [](const std::string& s) { return parse_arch(s); }))
        cfg.attacker.surrogate_arch = *a;
    if (auto v = attacker.str("surrogate_model")) cfg.attacker.surrogate_model = *v;

    const Section attack = section("attack");
    auto& spec = cfg.attack.spec;
    if (auto f = attack.parsed<AttackFamily>("family", [](const std::string& s) { return parse_attack_family(s); })) {
        if (*f == AttackFamily::cw) {
            const Norm n = attack.parsed<Norm>("norm", [](const std::string& s) { return parse_norm(s); })
                               .value_or(Norm::l2);
            spec = AttackSpec::cw_default(n);
        }
    } else if (attack.str("norm")) {
        attack.fail("norm", "only meaningful with family = cw");
    }
    if (auto m = attack.parsed<TargetMode>("mode", [](const std::string& s) { return parse_target_mode(s); }))
        spec.mode = *m;
    if (auto r = attack.parsed<TargetRule>("target_rule", [](const std::string& s) { return parse_target_rule(s); }))
        spec.target_rule = *r;
    set_if(attack.real("epsilon"), spec.epsilon);
    set_if(attack.real("kappa"), spec.kappa);
    set_if(attack.real("c_initial"), spec.c_search.initial);
    set_if(attack.real("c_min"), spec.c_search.min);
    set_if(attack.real("c_max"), spec.c_search.max);
    set_cast(attack.integer("c_steps"), spec.c_search.steps);
    set_cast(attack.integer("iterations"), spec.iterations);
    set_if(attack.real("learning_rate"), spec.learning_rate);
    set_if(attack.boolean("abort_early"), spec.abort_early);
    set_if(attack.real("tau_decrease"), spec.tau_decrease);
    set_cast(attack.integer("max_rounds"), spec.max_rounds);
    set_cast(attack.integer("samples"), cfg.attack.samples);
    set_if(attack.integer("seed"), cfg.attack.seed);
    if (auto v = attack.str("batch")) cfg.attack.batch = *v;
    try {
        spec.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": [attack] " + e.what());
    }

    const Section ev = section("evaluate");
    if (auto v = ev.str("preset")) cfg.evaluate.preset = *v;
    if (auto v = ev.str("cache_dir")) cfg.evaluate.cache_dir = *v;
    if (auto v = ev.str("report")) cfg.evaluate.report = *v;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    return parse_run_config(std::string(b.begin(), b.end()), path.string());
}

std::string RunConfig::echo() const {
    std::ostringstream o;
    o << "[run] seed=" << run.seed << " dataset=" << run.dataset << " train=" << run.sizes.train
      << " val=" << run.sizes.val << " test=" << run.sizes.test_head;
    o << " [victim] arch=" << to_string(victim.arch) << " mode=" << (victim.defended ? "defended" : "classical")
      << " epochs=" << victim.train.epochs << " batch=" << victim.train.batch_size
      << " optimizer=" << to_string(victim.train.optimizer);
    char buf[64];
    std::snprintf(buf, sizeof(buf), " lr=%.17g momentum=%.17g", victim.train.learning_rate, victim.train.momentum);
    o << buf;
    o << " [attacker] knowledge=" << to_string(attacker.knowledge);
    if (attacker.surrogate_arch) o << " surrogate_arch=" << to_string(*attacker.surrogate_arch);
    o << " [attack] " << attack.spec.echo() << " samples=" << attack.samples << " seed=" << attack.seed;
    return o.str();
}

}  // namespace keyperm
