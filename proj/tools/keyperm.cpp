// keyperm command-line front end: keygen, train, attack, evaluate, report.
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "keyperm/attacks.hpp"
#include "keyperm/config.hpp"
#include "keyperm/data.hpp"
#include "keyperm/defence.hpp"
#include "keyperm/error.hpp"
#include "keyperm/eval.hpp"
#include "keyperm/hash.hpp"
#include "keyperm/model_io.hpp"
#include "keyperm/train.hpp"

namespace fs = std::filesystem;
using namespace keyperm;

namespace {

enum ExitCode { ok = 0, generic = 1, config_error = 2, io_error = 3, invariant_failure = 4, protocol_violation = 5 };

struct Options {
    std::optional<std::string> config;
    std::optional<std::string> data_dir;
    std::optional<std::string> dataset;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> train_size, val_size, test_size;
    bool quiet = false;

    // keygen
    std::uint64_t key_seed = 0;
    std::size_t dim = 784;
    std::string key_out;
    bool force = false;

    // train
    std::optional<std::string> arch, mode, key;
    std::optional<std::size_t> epochs;

    // attack
    std::optional<std::string> model, family, norm, target_mode, target_rule;
    std::optional<double> epsilon, kappa, attack_lr, c_initial;
    std::optional<std::size_t> iterations, c_steps, max_rounds, samples;
    std::optional<std::uint64_t> attack_seed;

    // evaluate
    std::optional<std::string> preset, cache_dir, classical_model, defended_model, batch;

    // report
    std::string report_in;
    std::string format = "text";
};

void note(const Options& o, const std::string& msg) {
    if (!o.quiet) std::cerr << msg << std::endl;
}

RunConfig resolve_config(const Options& o) {
    RunConfig cfg = o.config ? load_run_config(*o.config) : RunConfig{};
    if (o.dataset) cfg.run.dataset = *o.dataset;
    if (o.out_dir) cfg.run.output_dir = *o.out_dir;
    if (o.seed) {
        cfg.run.seed = *o.seed;
        cfg.victim.train.seed = *o.seed;
    }
    if (o.train_size) cfg.run.sizes.train = *o.train_size;
    if (o.val_size) cfg.run.sizes.val = *o.val_size;
    if (o.test_size) cfg.run.sizes.test_head = *o.test_size;
    if (o.data_dir) cfg.run.data_dir = *o.data_dir;
    return cfg;
}

std::optional<fs::path> data_dir_of(const RunConfig& cfg) {
    if (cfg.run.dataset.rfind("synthetic", 0) == 0) return std::nullopt;
    return resolve_data_dir(cfg.run.data_dir);
}

std::string file_hash(const fs::path& p) {
    return sha256_hex(read_file(p)).substr(0, 16);
}

[[noreturn]] void missing_artifact(const std::string& what, const fs::path& p, const std::string& producer) {
    throw IoError(what + " '" + p.string() + "' not found; produce it with `keyperm " + producer + "`");
}

void require_file(const std::string& what, const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) missing_artifact(what, p, producer);
}

int cmd_keygen(const Options& o) {
    const SecretKey key = keygen(o.key_seed, o.dim);
    save_key_file(key, o.key_out, o.force);
    std::cout << "key " << o.key_out << " dim " << key.dim() << " sha256 " << sha256_hex(save_key(key)) << "\n";
    return ok;
}

int cmd_train(const Options& o) {
    RunConfig cfg = resolve_config(o);
    if (o.arch) cfg.victim.arch = parse_arch(*o.arch);
    if (o.mode) {
        if (*o.mode != "classical" && *o.mode != "defended")
            throw ConfigError("--mode must be classical or defended, got '" + *o.mode + "'");
        cfg.victim.defended = *o.mode == "defended";
    }
    if (o.key) cfg.victim.key = *o.key;
    if (o.epochs) cfg.victim.train.epochs = *o.epochs;
    cfg.victim.train.validate();

    std::optional<SecretKey> key;
    if (cfg.victim.defended) {
        if (!cfg.victim.key) throw ConfigError("defended training needs a key file (--key, or [victim] key)");
        require_file("key file", *cfg.victim.key, "keygen");
        key = load_key_file(*cfg.victim.key);
    }

    const DatasetSplits splits = load_splits(cfg.run.dataset, data_dir_of(cfg), cfg.run.sizes, cfg.run.seed);
    const std::size_t dim = splits.train.images.size() / splits.train.size();
    if (key && key->dim() != dim)
        throw ConfigError("key dimension " + std::to_string(key->dim()) + " does not match the " +
                          std::to_string(dim) + "-value inputs of dataset '" + cfg.run.dataset + "'");
    if (key) {
        const EntropyReport ent = key_entropy_report(*key, splits.train.images);
        note(o, ent.to_text());
        if (ent.violation) std::cerr << "warning: key entropy is below the data entropy estimate\n";
    }

    ModelRecipe recipe;
    recipe.arch = cfg.victim.arch;
    recipe.train = cfg.victim.train;
    recipe.data_fingerprint = splits.fingerprint;
    std::string content = recipe.echo();
    if (key) content += " key=" + sha256_hex(save_key(*key));
    const std::string stem = sha256_hex(content).substr(0, 12) + "-" +
                             (cfg.victim.defended ? "defended-" : "classical-") + to_string(recipe.arch);
    const fs::path model_path = cfg.run.output_dir / (stem + ".pclk");

    note(o, "training " + stem + " on " + std::to_string(splits.train.size()) + " samples");
    Network net = build_network(recipe.arch, derive_seed(recipe.train.seed, 100));
    std::ostringstream timing;
    TrainConfig tc = recipe.train;
    tc.on_epoch = [&](const EpochMetrics& m) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "epoch %zu train loss %.4f val error %.2f%% %.1f s", m.epoch, m.train_loss,
                      m.val_error, m.seconds);
        note(o, buf);
        timing << buf << "\n";
    };
    TrainResult res;
    if (key) {
        const LabeledDataset tr = apply_transform(*key, splits.train);
        const LabeledDataset va = apply_transform(*key, splits.val);
        res = train(net, tr, va.size() ? &va : nullptr, tc);
    } else {
        res = train(net, splits.train, splits.val.size() ? &splits.val : nullptr, tc);
    }
    save_model_file(net, model_path);
    const std::string metrics = format_metrics(res.history);
    write_file(cfg.run.output_dir / (stem + ".metrics.txt"),
               std::span(reinterpret_cast<const std::uint8_t*>(metrics.data()), metrics.size()));
    const std::string t = timing.str();
    write_file(cfg.run.output_dir / (stem + ".log"),
               std::span(reinterpret_cast<const std::uint8_t*>(t.data()), t.size()));

    double clean = 0.0;
    if (key) {
        const DefendedClassifier dc(*key, net);
        clean = classification_error(defended_classifier(dc), splits.test);
    } else {
        clean = classification_error(classical_classifier(net), splits.test);
    }
    std::printf("model %s\nsha256 %s\ntest error %.2f%% on %zu samples\n", model_path.c_str(),
                sha256_hex(save_model(net)).c_str(), clean, splits.test.size());
    return ok;
}

AttackSpec resolve_spec(const Options& o, AttackSpec spec) {
    if (o.family) {
        const AttackFamily f = parse_attack_family(*o.family);
        if (f != spec.family) {
            spec = f == AttackFamily::cw ? AttackSpec::cw_default(o.norm ? parse_norm(*o.norm) : Norm::l2)
                                         : AttackSpec::fgsm_default();
        }
    }
    if (o.norm) {
        if (spec.family != AttackFamily::cw) throw ConfigError("--norm only applies to the cw family");
        const Norm n = parse_norm(*o.norm);
        if (n != spec.norm) {
            const AttackSpec d = AttackSpec::cw_default(n);
            spec.norm = n;
            spec.c_search = d.c_search;
            spec.learning_rate = d.learning_rate;
        }
    }
    if (o.target_mode) spec.mode = parse_target_mode(*o.target_mode);
    if (o.target_rule) spec.target_rule = parse_target_rule(*o.target_rule);
    if (o.epsilon) spec.epsilon = *o.epsilon;
    if (o.kappa) spec.kappa = *o.kappa;
    if (o.attack_lr) spec.learning_rate = *o.attack_lr;
    if (o.c_initial) spec.c_search.initial = *o.c_initial;
    if (o.iterations) spec.iterations = *o.iterations;
    if (o.c_steps) spec.c_search.steps = *o.c_steps;
    if (o.max_rounds) spec.max_rounds = *o.max_rounds;
    spec.validate();
    return spec;
}

int cmd_attack(const Options& o) {
    // everything below runs as the attacker: any key access is a violation
    AttackerScope scope("keyperm attack");
    RunConfig cfg = resolve_config(o);
    AttackSpec spec = resolve_spec(o, cfg.attack.spec);
    const std::size_t samples = o.samples.value_or(cfg.attack.samples);
    const std::uint64_t seed = o.attack_seed.value_or(cfg.attack.seed);
    std::optional<fs::path> model_path = cfg.attacker.surrogate_model;
    if (o.model) model_path = *o.model;
    if (!model_path) throw ConfigError("attack needs a surrogate model (--model, or [attacker] surrogate_model)");
    require_file("surrogate model", *model_path, "train");
    const Network net = load_model_file(*model_path);
    if (cfg.attacker.surrogate_arch && *cfg.attacker.surrogate_arch != net.arch())
        throw ConfigError("surrogate model is " + to_string(net.arch()) + ", config names " +
                          to_string(*cfg.attacker.surrogate_arch));

    const DatasetSplits splits = load_splits(cfg.run.dataset, data_dir_of(cfg), cfg.run.sizes, cfg.run.seed);
    if (splits.test.images.size() / splits.test.size() != net.input_size())
        throw ConfigError("surrogate input " + shape_str(net.input_shape()) + " does not match dataset '" +
                          cfg.run.dataset + "'");
    const std::size_t n = samples == 0 ? splits.test.size() : samples;
    note(o, "attacking " + std::to_string(n) + " samples: " + spec.echo());
    const AdversarialBatch batch = run_attack_batch(net, splits.test, spec, n, seed, [&](std::size_t d, std::size_t t) {
        if (d % 50 == 0 || d == t) note(o, "  " + std::to_string(d) + "/" + std::to_string(t));
    });
    const Bytes bytes = save_adversarial_batch(batch);
    const std::string content = spec.echo() + " seed=" + std::to_string(seed) + " model=" + file_hash(*model_path) +
                                " data=" + splits.fingerprint + " n=" + std::to_string(n);
    std::string stem = sha256_hex(content).substr(0, 12) + "-" + to_string(spec.family);
    if (spec.family == AttackFamily::cw) stem += "-" + to_string(spec.norm);
    const fs::path out = cfg.attack.batch.value_or(cfg.run.output_dir / (stem + ".padv"));
    write_file(out, bytes);
    const DistortionNorms m = batch.mean_norms();
    std::printf("batch %s\nsamples %zu\nsuccess rate %.2f%%\nmean l0 %.4f l2 %.6f linf %.6f\n", out.c_str(),
                batch.records.size(), batch.success_rate(), m.l0, m.l2, m.linf);
    return ok;
}

void write_report(const EvalReport& rep, const fs::path& dir) {
    const std::string stem = rep.config_hash.substr(0, 12) + "-report";
    const std::string text = rep.to_text();
    const std::string json = rep.to_json();
    write_file(dir / (stem + ".txt"), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    write_file(dir / (stem + ".json"), std::span(reinterpret_cast<const std::uint8_t*>(json.data()), json.size()));
    std::cout << text << "\nreport " << (dir / (stem + ".json")).string() << "\n";
}

int cmd_evaluate(const Options& o) {
    RunConfig cfg = resolve_config(o);
    std::optional<std::string> preset = o.preset ? o.preset : cfg.evaluate.preset;
    std::optional<std::string> cache = o.cache_dir;
    if (!cache && cfg.evaluate.cache_dir) cache = cfg.evaluate.cache_dir->string();

    EvalReport rep;
    if (preset) {
        Table3Config t = preset_by_name(*preset);
        if (o.dataset) t.datasets = {*o.dataset};
        if (o.seed) t.train.seed = *o.seed;
        if (o.epochs) t.train.epochs = *o.epochs;
        const bool synthetic = std::all_of(t.datasets.begin(), t.datasets.end(),
                                           [](const std::string& d) { return d.rfind("synthetic", 0) == 0; });
        if (!synthetic) t.data_dir = resolve_data_dir(cfg.run.data_dir);
        if (cache) t.cache_dir = fs::path(*cache);
        t.log = [&](const std::string& s) { note(o, s); };
        rep = reproduce_table3(t);
    } else {
        std::optional<std::string> classical = o.classical_model;
        std::optional<std::string> defended = o.defended_model;
        if (!classical && !defended && cfg.victim.model) {
            (cfg.victim.defended ? defended : classical) = cfg.victim.model->string();
        }
        std::optional<fs::path> batch_path = cfg.attack.batch;
        if (o.batch) batch_path = *o.batch;
        if (!batch_path) throw ConfigError("evaluate needs --preset, or an adversarial batch (--batch) with victim models");
        if (!classical && !defended)
            throw ConfigError("evaluate needs --classical-model and/or --defended-model (or [victim] model)");
        require_file("adversarial batch", *batch_path, "attack");
        const AdversarialBatch batch = load_adversarial_batch(read_file(*batch_path));
        const DatasetSplits splits = load_splits(cfg.run.dataset, data_dir_of(cfg), cfg.run.sizes, cfg.run.seed);

        std::string hash_input = cfg.echo() + " data=" + splits.fingerprint + " batch=" + file_hash(*batch_path);
        const std::string attack = batch.spec.family == AttackFamily::fgsm
                                       ? std::string("FGSM")
                                       : "CW " + to_string(batch.spec.norm);
        auto add_cell = [&](const fs::path& model_path, bool is_defended) {
            require_file(is_defended ? "defended model" : "classical model", model_path, "train");
            const Network net = load_model_file(model_path);
            hash_input += " model=" + file_hash(model_path);
            EvalCell c;
            c.dataset = cfg.run.dataset;
            c.attack = attack;
            c.victim = is_defended ? "defended" : "classical";
            c.knowledge = to_string(cfg.attacker.knowledge);
            c.victim_arch = to_string(net.arch());
            c.train_seed = cfg.run.seed;
            c.attack_seed = cfg.attack.seed;
            c.spec_echo = batch.spec.echo();
            c.model_fingerprint = sha256_hex(save_model(net)).substr(0, 16);
            c.attack_success = batch.success_rate();
            std::optional<SecretKey> key;
            std::optional<DefendedClassifier> dc;
            if (is_defended) {
                std::optional<fs::path> key_path = cfg.victim.key;
                if (o.key) key_path = *o.key;
                if (!key_path) throw ConfigError("a defended victim needs its key file (--key, or [victim] key)");
                require_file("key file", *key_path, "keygen");
                key = load_key_file(*key_path);
                hash_input += " key=" + file_hash(*key_path);
                c.key_seed = key->seed();
                c.key_fingerprint = sha256_hex(save_key(*key)).substr(0, 16);
                dc.emplace(*key, net);
            }
            const BatchClassifier victim = dc ? defended_classifier(*dc) : classical_classifier(net);
            c.clean = classification_error(victim, splits.test);
            c.clean_n = splits.test.size();
            c.attacked = attacked_error(victim, batch);
            c.attacked_n = batch.records.size();
            rep.cells.push_back(std::move(c));
        };
        if (classical) add_cell(*classical, false);
        if (defended) add_cell(*defended, true);
        rep.preset = "artifacts";
        rep.scale = "test " + std::to_string(splits.test.size()) + ", batch " + std::to_string(batch.records.size());
        rep.config_hash = sha256_hex(hash_input).substr(0, 16);
        rep.invariants = check_invariants(rep.cells, 5.0, std::nullopt);
    }
    write_report(rep, cfg.run.output_dir);
    if (!rep.invariants_hold()) {
        std::cerr << "error: evaluation invariants failed\n";
        return invariant_failure;
    }
    return ok;
}

int cmd_report(const Options& o) {
    const Bytes b = read_file(o.report_in);
    const EvalReport rep = EvalReport::from_json(std::string(b.begin(), b.end()));
    if (o.format == "json")
        std::cout << rep.to_json();
    else if (o.format == "text")
        std::cout << rep.to_text();
    else
        throw ConfigError("--format must be text or json");
    return rep.invariants_hold() ? ok : invariant_failure;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("-c,--config", o.config, "run configuration file");
    sub->add_option("--data-dir", o.data_dir, std::string("dataset directory (default $") + kDataDirEnv + ")");
    sub->add_option("--dataset", o.dataset, "mnist, fashion-mnist, synthetic or synthetic-gaussians");
    sub->add_option("-o,--out-dir", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "global seed");
    sub->add_option("--train-size", o.train_size);
    sub->add_option("--val-size", o.val_size);
    sub->add_option("--test-size", o.test_size);
    sub->add_flag("-q,--quiet", o.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Secret-key permutation defence laboratory"};
    app.require_subcommand(1);
    Options o;

    auto* kg = app.add_subcommand("keygen", "generate a secret key file");
    kg->add_option("--seed", o.key_seed, "key seed")->required();
    kg->add_option("--dim", o.dim, "key dimension")->capture_default_str();
    kg->add_option("--out", o.key_out, "key file to write")->required();
    kg->add_flag("--force", o.force, "overwrite an existing key file");

    auto* tr = app.add_subcommand("train", "train a classical or defended classifier");
    add_common(tr, o);
    tr->add_option("--arch", o.arch, "fgsm-arch, cw-arch-small or cw-arch-large");
    tr->add_option("--mode", o.mode, "classical or defended");
    tr->add_option("--key", o.key, "key file (defended mode)");
    tr->add_option("--epochs", o.epochs);

    // no key option here on purpose
    auto* at = app.add_subcommand("attack", "craft adversarial examples against a surrogate model");
    add_common(at, o);
    at->add_option("--model", o.model, "surrogate model file");
    at->add_option("--family", o.family, "fgsm or cw");
    at->add_option("--norm", o.norm, "l0, l2 or linf (cw)");
    at->add_option("--target-mode", o.target_mode, "targeted or nontargeted");
    at->add_option("--target-rule", o.target_rule, "next or random");
    at->add_option("--epsilon", o.epsilon);
    at->add_option("--kappa", o.kappa);
    at->add_option("--lr", o.attack_lr, "cw optimizer learning rate");
    at->add_option("--c-initial", o.c_initial);
    at->add_option("--c-steps", o.c_steps);
    at->add_option("--iterations", o.iterations);
    at->add_option("--max-rounds", o.max_rounds);
    at->add_option("--samples", o.samples, "number of test-head samples (0 = all)");
    at->add_option("--attack-seed", o.attack_seed);

    auto* ev = app.add_subcommand("evaluate", "score victims on adversarial batches or run a table preset");
    add_common(ev, o);
    ev->add_option("--preset", o.preset, "desk, full or smoke");
    ev->add_option("--cache-dir", o.cache_dir, "model cache for presets");
    ev->add_option("--epochs", o.epochs);
    ev->add_option("--classical-model", o.classical_model);
    ev->add_option("--defended-model", o.defended_model);
    ev->add_option("--key", o.key, "key of the defended model");
    ev->add_option("--batch", o.batch, "adversarial batch file");

    auto* rp = app.add_subcommand("report", "render a stored evaluation report");
    rp->add_option("report", o.report_in, "report json")->required();
    rp->add_option("--format", o.format, "text or json")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config_error;
    }

    try {
        if (kg->parsed()) return cmd_keygen(o);
        if (tr->parsed()) return cmd_train(o);
        if (at->parsed()) return cmd_attack(o);
        if (ev->parsed()) return cmd_evaluate(o);
        if (rp->parsed()) return cmd_report(o);
    } catch (const ProtocolViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return protocol_violation;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return config_error;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return io_error;
    } catch (const InvariantError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return invariant_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return generic;
    }
    return generic;
}
