#include "keyperm/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

#include "keyperm/error.hpp"
#include "keyperm/hash.hpp"
#include "keyperm/model_io.hpp"
#include "keyperm/rng.hpp"

namespace keyperm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string short_hash(std::span<const std::uint8_t> bytes) {
    return sha256_hex(bytes).substr(0, 16);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

}  // namespace

std::string to_string(Knowledge k) { return k == Knowledge::gray_box ? "gray-box" : "black-box"; }
std::string to_string(VictimKind v) { return v == VictimKind::defended ? "defended" : "classical"; }

Knowledge parse_knowledge(const std::string& s) {
    if (s == "gray-box" || s == "graybox" || s == "gray") return Knowledge::gray_box;
    if (s == "black-box" || s == "blackbox" || s == "black") return Knowledge::black_box;
    throw ConfigError("unknown attacker knowledge '" + s + "' (expected gray-box or black-box)");
}

BatchClassifier classical_classifier(const Network& net) {
    return [&net](const Tensor& xs) { return decode_batch(net, xs); };
}

BatchClassifier defended_classifier(const DefendedClassifier& dc) {
    return [&dc](const Tensor& xs) { return dc.classify_batch(xs); };
}

double classification_error(const std::vector<std::size_t>& predicted, const std::vector<std::uint8_t>& labels) {
    if (labels.empty()) throw ConfigError("classification error of an empty dataset is undefined");
    if (predicted.size() != labels.size())
        throw InvariantError(std::to_string(predicted.size()) + " predictions for " + std::to_string(labels.size()) +
                             " labels");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i] ? 1 : 0;
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double classification_error(const BatchClassifier& model, const LabeledDataset& ds) {
    if (ds.size() == 0) throw ConfigError("classification error of an empty dataset is undefined");
    return classification_error(model(ds.images), ds.labels);
}

std::string ModelRecipe::echo() const {
    std::ostringstream o;
    o << "arch=" << to_string(arch) << " epochs=" << train.epochs << " batch=" << train.batch_size
      << " optimizer=" << to_string(train.optimizer) << " lr=" << fmt("%.17g", train.learning_rate)
      << " momentum=" << fmt("%.17g", train.momentum) << " beta1=" << fmt("%.17g", train.beta1)
      << " beta2=" << fmt("%.17g", train.beta2) << " eps=" << fmt("%.17g", train.adam_epsilon)
      << " seed=" << train.seed << " data=" << data_fingerprint;
    if (key_seed) o << " key_seed=" << *key_seed;
    return o.str();
}

std::string ModelRecipe::fingerprint() const {
    return sha256_hex(echo()).substr(0, 16);
}

Network obtain_model(const ModelRecipe& recipe, const LabeledDataset& train_set, const LabeledDataset& val_set,
                     const std::optional<std::filesystem::path>& cache_dir,
                     const std::function<void(const std::string&)>& log) {
    if (recipe.key_seed) require_defender_side("train a defended model");
    const std::string tag = (recipe.key_seed ? "defended-" : "classical-") + to_string(recipe.arch) + "-" +
                            recipe.fingerprint();
    std::optional<std::filesystem::path> cached;
    if (cache_dir) {
        cached = *cache_dir / (tag + ".pclk");
        if (std::filesystem::exists(*cached)) {
            if (log) log("model cache hit " + cached->string());
            return load_model_file(*cached);
        }
    }
    if (log) log("training " + tag + " (" + recipe.echo() + ")");
    Network net = build_network(recipe.arch, derive_seed(recipe.train.seed, 100));
    TrainConfig cfg = recipe.train;
    auto user_cb = cfg.on_epoch;
    cfg.on_epoch = [&](const EpochMetrics& m) {
        if (log)
            log("  epoch " + std::to_string(m.epoch) + " train loss " + fmt("%.4f", m.train_loss) + " val error " +
                fmt("%.2f%%", m.val_error) + " (" + fmt("%.0f s", m.seconds) + ")");
        if (user_cb) user_cb(m);
    };
    if (recipe.key_seed) {
        const SecretKey key = keygen(*recipe.key_seed, train_set.images.size() / train_set.size());
        const LabeledDataset tr = apply_transform(key, train_set);
        const LabeledDataset va = apply_transform(key, val_set);
        train(net, tr, va.size() ? &va : nullptr, cfg);
    } else {
        train(net, train_set, val_set.size() ? &val_set : nullptr, cfg);
    }
    if (cached) save_model_file(net, *cached);
    return net;
}

void ThreatScenario::validate() const {
    spec.validate();
    if (knowledge == Knowledge::gray_box && surrogate_arch != victim_arch)
        throw ConfigError("gray-box surrogate must share the victim architecture (" + to_string(victim_arch) +
                          "), got " + to_string(surrogate_arch));
}

TransferOutcome run_transfer_attack(const ThreatScenario& scenario, const Network& surrogate,
                                    const LabeledDataset& samples, const BatchClassifier& victim,
                                    const AttackerHook& hook) {
    scenario.validate();
    if (surrogate.arch() != scenario.surrogate_arch && surrogate.arch() != Arch::custom)
        throw ConfigError("surrogate network is " + to_string(surrogate.arch()) + ", scenario names " +
                          to_string(scenario.surrogate_arch));
    const std::size_t n = scenario.samples == 0 ? samples.size() : scenario.samples;
    TransferOutcome out;
    {
        AttackerScope scope("transfer attack on " + scenario.dataset);
        if (hook) hook();
        out.batch = run_attack_batch(surrogate, samples, scenario.spec, n, scenario.attack_seed);
    }
    out.n = out.batch.records.size();
    out.attacked_error = attacked_error(victim, out.batch);
    return out;
}

double attacked_error(const BatchClassifier& victim, const AdversarialBatch& batch) {
    if (batch.records.empty()) throw ConfigError("adversarial batch is empty");
    std::vector<std::uint8_t> labels;
    labels.reserve(batch.records.size());
    for (const auto& r : batch.records) labels.push_back(r.true_label);
    return classification_error(victim(batch.stacked()), labels);
}

bool EvalReport::invariants_hold() const {
    for (const auto& c : invariants)
        if (!c.passed) return false;
    return true;
}

const EvalCell* EvalReport::find(const std::string& dataset, const std::string& attack,
                                 const std::string& victim) const {
    for (const auto& c : cells)
        if (c.dataset == dataset && c.attack == attack && c.victim == victim) return &c;
    return nullptr;
}

std::string EvalReport::to_text() const {
    std::ostringstream o;
    o << "Classification error (%), sample count in parentheses\n";
    o << "preset " << preset << "; " << scale << "; config " << config_hash << "\n\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s | %-31s | %-31s\n", "Attack", "Classical classifier",
                  "Classifier on permuted data");
    o << line;
    std::snprintf(line, sizeof(line), "%-10s | %-15s %-15s | %-15s %-15s\n", "", "original", "attacked", "original",
                  "attacked");
    o << line;
    auto cell_str = [](const EvalCell* c, bool attacked) -> std::string {
        if (!c) return "-";
        char b[64];
        std::snprintf(b, sizeof(b), "%.2f (%zu)", attacked ? c->attacked : c->clean,
                      attacked ? c->attacked_n : c->clean_n);
        return b;
    };
    std::vector<std::string> datasets, attacks;
    for (const auto& c : cells) {
        if (std::find(datasets.begin(), datasets.end(), c.dataset) == datasets.end()) datasets.push_back(c.dataset);
        if (std::find(attacks.begin(), attacks.end(), c.attack) == attacks.end()) attacks.push_back(c.attack);
    }
    for (const auto& d : datasets) {
        o << "-- " << d << " --\n";
        for (const auto& a : attacks) {
            const EvalCell* cl = find(d, a, "classical");
            const EvalCell* df = find(d, a, "defended");
            if (!cl && !df) continue;
            std::snprintf(line, sizeof(line), "%-10s | %-15s %-15s | %-15s %-15s\n", a.c_str(),
                          cell_str(cl, false).c_str(), cell_str(cl, true).c_str(), cell_str(df, false).c_str(),
                          cell_str(df, true).c_str());
            o << line;
        }
    }
    if (!invariants.empty()) {
        o << "\ninvariants\n";
        for (const auto& c : invariants) o << "  [" << (c.passed ? "ok" : "FAIL") << "] " << c.name << ": " << c.detail << "\n";
    }
    return o.str();
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["preset"] = preset;
    j["scale"] = scale;
    j["config_hash"] = config_hash;
    j["seconds"] = seconds;
    auto& arr = j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : cells) {
        nlohmann::ordered_json r;
        r["dataset"] = c.dataset;
        r["attack"] = c.attack;
        r["victim"] = c.victim;
        r["knowledge"] = c.knowledge;
        r["surrogate"] = c.surrogate;
        r["victim_arch"] = c.victim_arch;
        r["clean"] = c.clean;
        r["clean_n"] = c.clean_n;
        r["attacked"] = c.attacked;
        r["attacked_n"] = c.attacked_n;
        r["attack_success"] = c.attack_success;
        r["seeds"] = {{"train", c.train_seed}, {"attack", c.attack_seed}};
        if (c.key_seed) r["seeds"]["key"] = *c.key_seed;
        r["spec"] = c.spec_echo;
        r["config_hash"] = config_hash;
        r["model_fingerprint"] = c.model_fingerprint;
        r["key_fingerprint"] = c.key_fingerprint;
        r["seconds"] = c.seconds;
        arr.push_back(std::move(r));
    }
    auto& inv = j["invariants"] = nlohmann::ordered_json::array();
    for (const auto& c : invariants) inv.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
    EvalReport rep;
    try {
        const auto j = nlohmann::json::parse(text);
        rep.preset = j.at("preset").get<std::string>();
        rep.scale = j.at("scale").get<std::string>();
        rep.config_hash = j.at("config_hash").get<std::string>();
        rep.seconds = j.value("seconds", 0.0);
        for (const auto& r : j.at("cells")) {
            EvalCell c;
            c.dataset = r.at("dataset").get<std::string>();
            c.attack = r.at("attack").get<std::string>();
            c.victim = r.at("victim").get<std::string>();
            c.knowledge = r.value("knowledge", "");
            c.surrogate = r.value("surrogate", "");
            c.victim_arch = r.value("victim_arch", "");
            c.clean = r.at("clean").get<double>();
            c.clean_n = r.at("clean_n").get<std::size_t>();
            c.attacked = r.at("attacked").get<double>();
            c.attacked_n = r.at("attacked_n").get<std::size_t>();
            c.attack_success = r.value("attack_success", 0.0);
            const auto& s = r.at("seeds");
            c.train_seed = s.at("train").get<std::uint64_t>();
            c.attack_seed = s.at("attack").get<std::uint64_t>();
            if (s.contains("key")) c.key_seed = s.at("key").get<std::uint64_t>();
            c.spec_echo = r.value("spec", "");
            c.model_fingerprint = r.value("model_fingerprint", "");
            c.key_fingerprint = r.value("key_fingerprint", "");
            c.seconds = r.value("seconds", 0.0);
            rep.cells.push_back(std::move(c));
        }
        if (j.contains("invariants"))
            for (const auto& r : j.at("invariants"))
                rep.invariants.push_back(
                    {r.at("name").get<std::string>(), r.at("passed").get<bool>(), r.at("detail").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed report json: ") + e.what(), 0);
    }
    return rep;
}

std::string Table3Config::echo() const {
    std::ostringstream o;
    o << "preset=" << preset << " datasets=";
    for (const auto& d : datasets) o << d << ",";
    o << " train=" << sizes.train << " val=" << sizes.val << " test=" << sizes.test_head << " epochs=" << train.epochs
      << " batch=" << train.batch_size << " optimizer=" << to_string(train.optimizer)
      << " lr=" << fmt("%.17g", train.learning_rate) << " seed=" << train.seed << " key_seed=" << key_seed
      << " attack_seed=" << attack_seed << " knowledge=" << to_string(knowledge)
      << " max_clean_cost=" << fmt("%.17g", max_clean_cost);
    if (min_gap) o << " min_gap=" << fmt("%.17g", *min_gap);
    for (const auto& r : rows)
        o << " | row=" << r.label << " arch=" << to_string(r.arch) << " samples=" << r.samples << " " << r.spec.echo();
    return o.str();
}

namespace {

Table3Row fgsm_row(std::size_t samples) {
    Table3Row r{"FGSM", Arch::fgsm, AttackSpec::fgsm_default(), samples};
    r.spec.mode = TargetMode::nontargeted;
    return r;
}

Table3Row cw_row(Norm norm, std::size_t samples) {
    const char* label = norm == Norm::l2 ? "CW l2" : norm == Norm::l0 ? "CW l0" : "CW linf";
    Table3Row r{label, Arch::cw_small, AttackSpec::cw_default(norm), samples};
    r.spec.mode = TargetMode::targeted;
    r.spec.target_rule = TargetRule::random;
    return r;
}

}  // namespace

Table3Config desk_preset() {
    Table3Config c;
    c.preset = "desk";
    c.sizes = {8000, 1000, 500};
    c.train.epochs = 3;

    Table3Row l2 = cw_row(Norm::l2, 500);
    l2.spec.iterations = 100;
    l2.spec.learning_rate = 5e-2;
    l2.spec.c_search = {1e-1, 1e-6, 1e10, 4};

    Table3Row l0 = cw_row(Norm::l0, 20);
    l0.spec.iterations = 100;
    l0.spec.learning_rate = 5e-2;
    l0.spec.c_search = {1e-1, 1e-3, 1e3, 0};
    l0.spec.max_rounds = 8;

    Table3Row linf = cw_row(Norm::linf, 20);
    linf.spec.iterations = 100;
    linf.spec.learning_rate = 5e-2;
    linf.spec.c_search = {1e-2, 1e-5, 20.0, 0};
    linf.spec.max_rounds = 8;

    c.rows = {l2, l0, linf, fgsm_row(500)};
    return c;
}

Table3Config full_preset() {
    Table3Config c;
    c.preset = "full";
    c.datasets = {"mnist", "fashion-mnist"};
    c.sizes = {55000, 5000, 1000};
    c.train.epochs = 10;
    c.min_gap = 40.0;
    c.rows = {cw_row(Norm::l2, 0), cw_row(Norm::l0, 0), cw_row(Norm::linf, 0), fgsm_row(0)};
    return c;
}

Table3Config smoke_preset() {
    Table3Config c;
    c.preset = "smoke";
    c.datasets = {"synthetic"};
    c.sizes = {400, 100, 40};
    c.train.epochs = 2;
    c.train.batch_size = 32;
    Table3Row l2 = cw_row(Norm::l2, 10);
    l2.spec.iterations = 30;
    l2.spec.learning_rate = 5e-2;
    l2.spec.c_search = {1e-1, 1e-6, 1e10, 2};
    Table3Row l0 = cw_row(Norm::l0, 3);
    l0.spec.iterations = 20;
    l0.spec.learning_rate = 5e-2;
    l0.spec.c_search = {1e-1, 1e-3, 1e2, 0};
    l0.spec.max_rounds = 2;
    Table3Row linf = cw_row(Norm::linf, 3);
    linf.spec.iterations = 20;
    linf.spec.c_search = {1e-2, 1e-5, 20.0, 0};
    linf.spec.max_rounds = 2;
    Table3Row fg = fgsm_row(40);
    fg.arch = Arch::cw_small;
    c.rows = {l2, l0, linf, fg};
    return c;
}

Table3Config preset_by_name(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "full") return full_preset();
    if (name == "smoke") return smoke_preset();
    throw ConfigError("unknown preset '" + name + "' (expected desk, full or smoke)");
}

std::string dataset_fingerprint(const LabeledDataset& ds) {
    ByteWriter w;
    w.u64_le(ds.size());
    for (auto d : ds.images.shape()) w.u64_le(d);
    for (double v : ds.images.values()) w.f64_le(v);
    for (auto l : ds.labels) w.u8(l);
    const Bytes b = w.take();
    return short_hash(b);
}

DatasetSplits load_splits(const std::string& dataset, const std::optional<std::filesystem::path>& data_dir,
                          const SplitSizes& sizes, std::uint64_t seed) {
    DatasetSplits s;
    if (dataset.rfind("synthetic", 0) == 0) {
        const auto kind = dataset == "synthetic-gaussians" ? SyntheticKind::two_gaussians : SyntheticKind::striped_digits;
        const LabeledDataset train_file = synthetic_dataset(derive_seed(seed, 10), sizes.train + sizes.val, kind);
        const LabeledDataset test_file = synthetic_dataset(derive_seed(seed, 11), sizes.test_head, kind);
        s.train = canonical_split(train_file, SplitKind::train, sizes);
        s.val = canonical_split(train_file, SplitKind::val, sizes);
        s.test = canonical_split(test_file, SplitKind::test_head, sizes);
    } else {
        if (!data_dir)
            throw ConfigError("no dataset directory for '" + dataset + "': pass --data-dir or set " +
                              std::string(kDataDirEnv));
        const IdxFiles tr = find_idx_files(*data_dir, dataset, true);
        const IdxFiles te = find_idx_files(*data_dir, dataset, false);
        const LabeledDataset train_file = load_idx(tr.images, tr.labels);
        const LabeledDataset test_file = load_idx(te.images, te.labels);
        if (sizes.train + sizes.val > train_file.size())
            throw ConfigError("split sizes " + std::to_string(sizes.train) + " + " + std::to_string(sizes.val) +
                              " exceed the " + std::to_string(train_file.size()) + "-sample training file");
        s.train = canonical_split(train_file, SplitKind::train, sizes);
        s.val = canonical_split(train_file, SplitKind::val, sizes);
        s.test = canonical_split(test_file, SplitKind::test_head, sizes);
    }
    s.fingerprint = dataset_fingerprint(s.train) + dataset_fingerprint(s.val) + dataset_fingerprint(s.test);
    return s;
}

std::vector<InvariantCheck> check_invariants(const std::vector<EvalCell>& cells, double max_clean_cost,
                                             std::optional<double> min_gap) {
    std::vector<InvariantCheck> out;
    for (const auto& cl : cells) {
        if (cl.victim != "classical") continue;
        const EvalCell* df = nullptr;
        for (const auto& c : cells)
            if (c.victim == "defended" && c.dataset == cl.dataset && c.attack == cl.attack) df = &c;
        if (!df) continue;
        const std::string where = cl.dataset + " " + cl.attack;
        out.push_back({where + ": defended attacked < classical attacked", df->attacked < cl.attacked,
                       fmt("%.2f", df->attacked) + " vs " + fmt("%.2f", cl.attacked)});
        out.push_back({where + ": clean cost <= " + fmt("%g", max_clean_cost), df->clean - cl.clean <= max_clean_cost,
                       fmt("%+.2f points", df->clean - cl.clean)});
        if (min_gap)
            out.push_back({where + ": attacked gap > " + fmt("%g", *min_gap), cl.attacked - df->attacked > *min_gap,
                           fmt("%.2f points", cl.attacked - df->attacked)});
    }
    return out;
}

EvalReport reproduce_table3(const Table3Config& cfg) {
    const auto t_start = Clock::now();
    if (cfg.rows.empty()) throw ConfigError("table needs at least one attack row");
    cfg.train.validate();
    for (const auto& r : cfg.rows) r.spec.validate();
    auto log = cfg.log ? cfg.log : [](const std::string&) {};

    EvalReport rep;
    rep.preset = cfg.preset;
    rep.scale = "train " + std::to_string(cfg.sizes.train) + " / val " + std::to_string(cfg.sizes.val) + " / test " +
                std::to_string(cfg.sizes.test_head) + ", " + std::to_string(cfg.train.epochs) + " epochs, " +
                to_string(cfg.knowledge);
    std::string hash_input = cfg.echo();

    for (const auto& dataset : cfg.datasets) {
        log("dataset " + dataset);
        const DatasetSplits splits = load_splits(dataset, cfg.data_dir, cfg.sizes, cfg.train.seed);
        hash_input += " " + dataset + "=" + splits.fingerprint;
        const std::size_t dim = splits.test.images.size() / splits.test.size();
        const SecretKey key = keygen(cfg.key_seed, dim);
        const std::string key_fp = short_hash(save_key(key));

        std::map<std::string, Network> models;
        auto model_for = [&](Arch arch, bool defended) -> const Network& {
            ModelRecipe recipe;
            recipe.arch = arch;
            recipe.train = cfg.train;
            recipe.train.on_epoch = {};
            recipe.data_fingerprint = splits.fingerprint;
            if (defended) recipe.key_seed = cfg.key_seed;
            const std::string id = recipe.fingerprint();
            auto it = models.find(id);
            if (it == models.end())
                it = models.emplace(id, obtain_model(recipe, splits.train, splits.val, cfg.cache_dir, log)).first;
            return it->second;
        };

        for (const auto& row : cfg.rows) {
            const Arch surrogate_arch = cfg.knowledge == Knowledge::gray_box
                                            ? row.arch
                                            : (row.arch == Arch::fgsm ? Arch::cw_small : Arch::fgsm);
            // the attacker replicates the public recipe without the key; for a
            // gray-box attacker that replica is the classical victim itself
            const Network* surrogate = nullptr;
            {
                AttackerScope scope("surrogate training");
                surrogate = &model_for(surrogate_arch, false);
            }
            const auto t_row = Clock::now();
            ThreatScenario sc;
            sc.knowledge = cfg.knowledge;
            sc.surrogate_arch = surrogate_arch;
            sc.spec = row.spec;
            sc.victim_arch = row.arch;
            sc.dataset = dataset;
            sc.samples = row.samples == 0 ? splits.test.size() : std::min(row.samples, splits.test.size());
            sc.attack_seed = cfg.attack_seed;
            log("attack " + row.label + " on " + std::to_string(sc.samples) + " samples");
            AdversarialBatch batch;
            {
                AttackerScope scope("attack generation");
                batch = run_attack_batch(*surrogate, splits.test, sc.spec, sc.samples, sc.attack_seed,
                                         [&](std::size_t done, std::size_t total) {
                                             if (done % 50 == 0 || done == total)
                                                 log("  " + std::to_string(done) + "/" + std::to_string(total));
                                         });
            }
            const double attack_seconds = seconds_since(t_row);

            for (VictimKind vk : {VictimKind::classical, VictimKind::defended}) {
                const auto t_cell = Clock::now();
                const bool defended = vk == VictimKind::defended;
                const Network& net = model_for(row.arch, defended);
                std::optional<DefendedClassifier> dc;
                if (defended) dc.emplace(key, net);
                const BatchClassifier victim = defended ? defended_classifier(*dc) : classical_classifier(net);
                EvalCell cell;
                cell.dataset = dataset;
                cell.attack = row.label;
                cell.victim = to_string(vk);
                cell.knowledge = to_string(cfg.knowledge);
                cell.surrogate = to_string(surrogate_arch);
                cell.victim_arch = to_string(row.arch);
                cell.clean = classification_error(victim, splits.test);
                cell.clean_n = splits.test.size();
                cell.attacked = attacked_error(victim, batch);
                cell.attacked_n = batch.records.size();
                cell.attack_success = batch.success_rate();
                cell.train_seed = cfg.train.seed;
                if (defended) {
                    cell.key_seed = cfg.key_seed;
                    cell.key_fingerprint = key_fp;
                }
                cell.attack_seed = cfg.attack_seed;
                cell.spec_echo = row.spec.echo();
                cell.model_fingerprint = short_hash(save_model(net));
                cell.seconds = seconds_since(t_cell) + attack_seconds;
                log("  " + cell.victim + ": clean " + fmt("%.2f", cell.clean) + " attacked " +
                    fmt("%.2f", cell.attacked));
                rep.cells.push_back(std::move(cell));
            }
        }
    }
    rep.config_hash = sha256_hex(hash_input).substr(0, 16);
    rep.invariants = check_invariants(rep.cells, cfg.max_clean_cost, cfg.min_gap);
    rep.seconds = seconds_since(t_start);
    return rep;
}

}  // namespace keyperm
