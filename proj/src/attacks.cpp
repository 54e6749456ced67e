#include "keyperm/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "keyperm/defence.hpp"
#include "keyperm/error.hpp"
#include "keyperm/rng.hpp"

namespace keyperm {

std::string to_string(AttackFamily f) { return f == AttackFamily::fgsm ? "fgsm" : "cw"; }

std::string to_string(Norm n) {
    switch (n) {
        case Norm::l0: return "l0";
        case Norm::l2: return "l2";
        case Norm::linf: return "linf";
    }
    return "?";
}

std::string to_string(TargetMode m) { return m == TargetMode::targeted ? "targeted" : "nontargeted"; }
std::string to_string(TargetRule r) { return r == TargetRule::next ? "next" : "random"; }

AttackFamily parse_attack_family(const std::string& s) {
    if (s == "fgsm") return AttackFamily::fgsm;
    if (s == "cw") return AttackFamily::cw;
    throw ConfigError("unknown attack family '" + s + "' (expected fgsm or cw)");
}

Norm parse_norm(const std::string& s) {
    if (s == "l0") return Norm::l0;
    if (s == "l2") return Norm::l2;
    if (s == "linf" || s == "inf") return Norm::linf;
    throw ConfigError("unknown norm '" + s + "' (expected l0, l2 or linf)");
}

TargetMode parse_target_mode(const std::string& s) {
    if (s == "targeted") return TargetMode::targeted;
    if (s == "nontargeted" || s == "untargeted") return TargetMode::nontargeted;
    throw ConfigError("unknown target mode '" + s + "' (expected targeted or nontargeted)");
}

TargetRule parse_target_rule(const std::string& s) {
    if (s == "next") return TargetRule::next;
    if (s == "random") return TargetRule::random;
    throw ConfigError("unknown target rule '" + s + "' (expected next or random)");
}

AttackSpec AttackSpec::fgsm_default() {
    return AttackSpec{};
}

AttackSpec AttackSpec::cw_default(Norm norm) {
    AttackSpec s;
    s.family = AttackFamily::cw;
    s.norm = norm;
    s.mode = TargetMode::targeted;
    switch (norm) {
        case Norm::l2:
            s.c_search = {1e-3, 1e-6, 1e10, 9};
            break;
        case Norm::linf:
            s.c_search = {1e-5, 1e-5, 20.0, 0};
            s.learning_rate = 5e-3;
            break;
        case Norm::l0:
            s.c_search = {1e-3, 1e-3, 2e6, 0};
            break;
    }
    return s;
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
    if (!(kappa >= 0.0)) throw ConfigError("kappa must be >= 0");
    if (family == AttackFamily::cw) {
        if (iterations == 0) throw ConfigError("CW iteration budget must be >= 1");
        if (!(c_search.min > 0.0 && c_search.min <= c_search.initial && c_search.initial <= c_search.max))
            throw ConfigError("CW c search needs 0 < min <= initial <= max");
        if (norm == Norm::l2 && c_search.steps == 0) throw ConfigError("CW l2 needs at least one c search step");
        if (!(learning_rate > 0.0)) throw ConfigError("CW learning rate must be positive");
        if (!(tau_decrease > 0.0 && tau_decrease < 1.0)) throw ConfigError("tau decrease factor must lie in (0, 1)");
    }
}

std::string AttackSpec::echo() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "family=%s norm=%s mode=%s target_rule=%s epsilon=%.17g kappa=%.17g c_initial=%.17g c_min=%.17g "
                  "c_max=%.17g c_steps=%zu iterations=%zu lr=%.17g abort_early=%d tau_decrease=%.17g max_rounds=%zu",
                  to_string(family).c_str(), to_string(norm).c_str(), to_string(mode).c_str(),
                  to_string(target_rule).c_str(), epsilon, kappa, c_search.initial, c_search.min, c_search.max,
                  c_search.steps, iterations, learning_rate, abort_early ? 1 : 0, tau_decrease, max_rounds);
    return buf;
}

AttackSpec AttackSpec::parse_echo(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed attack spec token '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    auto get = [&](const char* k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError(std::string("attack spec is missing '") + k + "'");
        return it->second;
    };
    AttackSpec s;
    try {
        s.family = parse_attack_family(get("family"));
        s.norm = parse_norm(get("norm"));
        s.mode = parse_target_mode(get("mode"));
        s.target_rule = parse_target_rule(get("target_rule"));
        s.epsilon = std::stod(get("epsilon"));
        s.kappa = std::stod(get("kappa"));
        s.c_search.initial = std::stod(get("c_initial"));
        s.c_search.min = std::stod(get("c_min"));
        s.c_search.max = std::stod(get("c_max"));
        s.c_search.steps = std::stoul(get("c_steps"));
        s.iterations = std::stoul(get("iterations"));
        s.learning_rate = std::stod(get("lr"));
        s.abort_early = get("abort_early") != "0";
        s.tau_decrease = std::stod(get("tau_decrease"));
        s.max_rounds = std::stoul(get("max_rounds"));
    } catch (const std::logic_error& e) {
        throw ConfigError(std::string("malformed attack spec value: ") + e.what());
    }
    return s;
}

double lp_norm(const Tensor& delta, Norm p) {
    double acc = 0.0;
    switch (p) {
        case Norm::l0:
            for (double v : delta.values()) acc += v != 0.0 ? 1.0 : 0.0;
            return acc;
        case Norm::l2:
            for (double v : delta.values()) acc += v * v;
            return std::sqrt(acc);
        case Norm::linf:
            for (double v : delta.values()) acc = std::max(acc, std::abs(v));
            return acc;
    }
    return acc;
}

DistortionNorms distortion(const Tensor& original, const Tensor& adversarial) {
    if (original.size() != adversarial.size())
        throw ConfigError("distortion between " + shape_str(original.shape()) + " and " + shape_str(adversarial.shape()));
    Tensor d(original.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = adversarial[i] - original[i];
    return {lp_norm(d, Norm::l0), lp_norm(d, Norm::l2), lp_norm(d, Norm::linf)};
}

double cw_objective_f(std::span<const double> logits, std::size_t target, double kappa) {
    if (logits.size() < 2) throw ConfigError("CW objective needs at least two logits");
    if (target >= logits.size())
        throw ConfigError("target " + std::to_string(target) + " out of range for " + std::to_string(logits.size()) +
                          " logits");
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.size(); ++j)
        if (j != target) other = std::max(other, logits[j]);
    return std::max(other - logits[target], -kappa);
}

namespace {

// value and d value / d logits for one row of logits
double objective_and_grad(const Objective& obj, std::span<const double> z, std::vector<double>& grad) {
    grad.assign(z.size(), 0.0);
    if (const auto* ce = std::get_if<CrossEntropyObjective>(&obj)) {
        grad = cross_entropy_grad(z, ce->label);
        return cross_entropy_loss(z, ce->label);
    }
    const auto& cw = std::get<CwObjective>(obj);
    const double f = cw_objective_f(z, cw.target, cw.kappa);
    std::size_t best = cw.target == 0 ? 1 : 0;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (j != cw.target && z[j] > z[best]) best = j;
    if (z[best] - z[cw.target] > -cw.kappa) {
        grad[best] = 1.0;
        grad[cw.target] = -1.0;
    }
    return f;
}

// Nudges a + step toward a until |result - a| <= |step| holds exactly.
double bounded_step(double a, double step, double lo, double hi) {
    double r = std::clamp(a + step, lo, hi);
    const double limit = std::abs(step);
    while (std::abs(r - a) > limit) r = std::nextafter(r, a);
    return r;
}

bool verify_target(const Network& net, const Tensor& x, std::size_t target, double kappa, std::size_t& achieved) {
    for (double v : x.values())
        if (!(v >= 0.0 && v <= 1.0)) return false;
    Encoding e = encode(net, x);
    achieved = argmax_low(e.probabilities.values());
    return achieved == target && cw_objective_f(e.logits.values(), target, kappa) <= -kappa;
}

class Adam {
public:
    Adam(std::size_t n, double lr) : m_(n, 0.0), v_(n, 0.0), lr_(lr) {}

    void step(std::vector<double>& w, const std::vector<double>& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[i] = 0.9 * m_[i] + 0.1 * g[i];
            v_[i] = 0.999 * v_[i] + 0.001 * g[i] * g[i];
            w[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + 1e-8);
        }
    }

private:
    std::vector<double> m_, v_;
    double lr_;
    std::uint64_t t_ = 0;
};

// Box constraint through x' = (tanh(w) + 1) / 2.
double to_tanh_space(double x) { return std::atanh((2.0 * x - 1.0) * 0.999999); }
double from_tanh_space(double w) { return 0.5 * (std::tanh(w) + 1.0); }
double tanh_space_slope(double w) {
    const double t = std::tanh(w);
    return 0.5 * (1.0 - t * t);
}

struct CwState {
    const Network& net;
    const Tensor& x;
    std::size_t target;
    const AttackSpec& spec;
    AdversarialResult result;
    // best-effort fallback: the evaluated point with the smallest f
    double best_effort_f = std::numeric_limits<double>::infinity();
    Tensor best_effort;

    GradientResult eval(const Tensor& xp) {
        ++result.iterations;
        GradientResult g = objective_gradient(net, xp, CwObjective{target, spec.kappa});
        if (g.value < best_effort_f) {
            best_effort_f = g.value;
            best_effort = xp;
        }
        return g;
    }

    bool hit(const GradientResult& g) const { return g.value <= -spec.kappa && argmax_low(g.logits.values()) == target; }
};

AdversarialResult finish(CwState& st, const std::optional<Tensor>& best) {
    AdversarialResult r = std::move(st.result);
    r.target = st.target;
    std::size_t achieved = 0;
    if (best && verify_target(st.net, *best, st.target, st.spec.kappa, achieved)) {
        r.adversarial_input = *best;
        r.success = true;
    } else {
        r.adversarial_input = st.best_effort.empty() ? st.x : st.best_effort;
        r.success = false;
        achieved = decode(st.net, r.adversarial_input);
    }
    r.achieved_class = achieved;
    r.distortion_norms = distortion(st.x, r.adversarial_input);
    return r;
}

AdversarialResult cw_l2(CwState& st) {
    const AttackSpec& spec = st.spec;
    const std::size_t n = st.x.size();
    std::vector<double> w0(n);
    for (std::size_t i = 0; i < n; ++i) w0[i] = to_tanh_space(st.x[i]);

    double lower = spec.c_search.min, upper = spec.c_search.max;
    bool have_upper = false;
    double c = spec.c_search.initial;
    double best_l2 = std::numeric_limits<double>::infinity();
    std::optional<Tensor> best;
    const std::size_t check_every = std::max<std::size_t>(1, spec.iterations / 10);

    Tensor xp(st.x.shape());
    std::vector<double> grad_w(n);
    for (std::size_t step = 0; step < spec.c_search.steps; ++step) {
        std::vector<double> w = w0;
        Adam opt(n, spec.learning_rate);
        double prev = std::numeric_limits<double>::infinity();
        bool found = false;
        for (std::size_t it = 0; it < spec.iterations; ++it) {
            for (std::size_t i = 0; i < n; ++i) xp[i] = from_tanh_space(w[i]);
            GradientResult g = st.eval(xp);
            double l2sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) l2sq += (xp[i] - st.x[i]) * (xp[i] - st.x[i]);
            const double loss = l2sq + c * g.value;
            if (st.hit(g)) {
                found = true;
                if (l2sq < best_l2) {
                    best_l2 = l2sq;
                    best = xp;
                }
            }
            if (spec.abort_early && it % check_every == 0) {
                if (loss > prev * 0.9999) break;
                prev = loss;
            }
            for (std::size_t i = 0; i < n; ++i)
                grad_w[i] = (2.0 * (xp[i] - st.x[i]) + c * g.gradient[i]) * tanh_space_slope(w[i]);
            opt.step(w, grad_w);
        }
        st.result.c_trace.push_back({c, found});
        if (found) {
            upper = std::min(upper, c);
            have_upper = true;
            c = 0.5 * (lower + upper);
        } else {
            lower = std::max(lower, c);
            c = have_upper ? 0.5 * (lower + upper) : std::min(c * 10.0, spec.c_search.max);
        }
    }
    return finish(st, best);
}

// One inner solve shared by the l0 and linf attacks: starting from `start`,
// minimise c f(x') + penalty(x') with c doubling until the first success.
// `free_mask` (l0) pins the frozen pixels to the original image.
struct InnerSolve {
    bool success = false;
    Tensor solution;
    Tensor gradient;  // d(total loss)/dx' at the solution
    double c = 0.0;
};

template <typename Penalty>
InnerSolve inner_solve(CwState& st, const Tensor& start, double c, const std::vector<char>* free_mask,
                       Penalty&& penalty) {
    const AttackSpec& spec = st.spec;
    const std::size_t n = st.x.size();
    Tensor xp(st.x.shape());
    std::vector<double> grad_w(n), pen_grad(n);
    while (c <= spec.c_search.max) {
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = to_tanh_space(start[i]);
        Adam opt(n, spec.learning_rate);
        bool found = false;
        for (std::size_t it = 0; it < spec.iterations; ++it) {
            for (std::size_t i = 0; i < n; ++i)
                xp[i] = (free_mask && !(*free_mask)[i]) ? st.x[i] : from_tanh_space(w[i]);
            GradientResult g = st.eval(xp);
            const double pen = penalty(xp, pen_grad);
            if (st.hit(g) && pen <= 1e-4 * c + 1e-12 * static_cast<double>(free_mask != nullptr)) {
                InnerSolve out;
                out.success = true;
                out.solution = xp;
                out.gradient = Tensor(xp.shape());
                for (std::size_t i = 0; i < n; ++i) out.gradient[i] = c * g.gradient[i] + pen_grad[i];
                out.c = c;
                found = true;
                st.result.c_trace.push_back({c, true});
                return out;
            }
            for (std::size_t i = 0; i < n; ++i) {
                const bool frozen = free_mask && !(*free_mask)[i];
                grad_w[i] = frozen ? 0.0 : (c * g.gradient[i] + pen_grad[i]) * tanh_space_slope(w[i]);
            }
            opt.step(w, grad_w);
        }
        st.result.c_trace.push_back({c, found});
        c *= 2.0;
    }
    return {};
}

AdversarialResult cw_linf(CwState& st) {
    const AttackSpec& spec = st.spec;
    const std::size_t n = st.x.size();
    double tau = 1.0;
    double c = spec.c_search.initial;
    Tensor prev = st.x;
    std::optional<Tensor> best;
    std::size_t rounds = 0;
    while (tau > 1.0 / 256.0 && (spec.max_rounds == 0 || rounds < spec.max_rounds)) {
        ++rounds;
        const double t = tau;
        auto penalty = [&](const Tensor& xp, std::vector<double>& g) {
            double p = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = xp[i] - st.x[i];
                const double excess = std::abs(d) - t;
                if (excess > 0.0) {
                    p += excess;
                    g[i] = d > 0.0 ? 1.0 : -1.0;
                } else {
                    g[i] = 0.0;
                }
            }
            return p;
        };
        InnerSolve s = inner_solve(st, prev, c, nullptr, penalty);
        if (!s.success) break;
        c = s.c;
        const double actual = lp_norm(Tensor(s.solution.shape(), [&] {
                                          std::vector<double> d(n);
                                          for (std::size_t i = 0; i < n; ++i) d[i] = s.solution[i] - st.x[i];
                                          return d;
                                      }()),
                                      Norm::linf);
        if (actual < tau) tau = actual;
        best = s.solution;
        prev = s.solution;
        tau *= spec.tau_decrease;
    }
    return finish(st, best);
}

AdversarialResult cw_l0(CwState& st) {
    const AttackSpec& spec = st.spec;
    const std::size_t n = st.x.size();
    std::vector<char> free_mask(n, 1);
    double c = spec.c_search.initial;
    Tensor prev = st.x;
    std::optional<Tensor> best;
    std::size_t rounds = 0;
    auto l2_penalty = [&](const Tensor& xp, std::vector<double>& g) {
        double p = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = xp[i] - st.x[i];
            p += d * d;
            g[i] = 2.0 * d;
        }
        return p;
    };
    while (spec.max_rounds == 0 || rounds < spec.max_rounds) {
        ++rounds;
        // success is judged on f alone here; the squared-l2 term is the
        // objective being traded off, not a constraint
        InnerSolve s;
        {
            const Tensor start = prev;
            double cc = c;
            while (cc <= spec.c_search.max) {
                s = inner_solve(st, start, cc, &free_mask, [&](const Tensor& xp, std::vector<double>& g) {
                    l2_penalty(xp, g);
                    return 0.0;
                });
                if (s.success) break;
                cc = spec.c_search.max * 2.0;
            }
        }
        if (!s.success) break;
        c = s.c;
        best = s.solution;
        prev = s.solution;

        std::size_t equal_count = 0;
        std::vector<double> total_change(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = std::abs(s.solution[i] - st.x[i]);
            if (d < 1e-4) ++equal_count;
            total_change[i] = d * std::abs(s.gradient[i]);
        }
        if (std::none_of(free_mask.begin(), free_mask.end(), [](char f) { return f != 0; })) break;
        std::vector<std::size_t> order = stable_argsort(total_change);
        std::size_t did = 0;
        for (std::size_t e : order) {
            if (!free_mask[e]) continue;
            ++did;
            free_mask[e] = 0;
            if (total_change[e] > 0.01) break;
            if (static_cast<double>(did) >= 0.3 * std::sqrt(static_cast<double>(equal_count))) break;
        }
        // frozen pixels snap back to the original values
        for (std::size_t i = 0; i < n; ++i)
            if (!free_mask[i]) prev[i] = st.x[i];
    }
    return finish(st, best);
}

}  // namespace

GradientResult objective_gradient(const Network& net, const Tensor& x, const Objective& objective) {
    ForwardPass pass = forward_traced(net, x, Mode::infer);
    std::vector<double> dz;
    GradientResult out;
    out.value = objective_and_grad(objective, pass.logits.values(), dz);
    out.logits = pass.logits.reshaped({net.classes()});
    Tensor grad_logits(pass.logits.shape(), std::move(dz));
    BackwardResult br = backward(net, pass, grad_logits, false);
    out.gradient = br.input_grad.reshaped(x.shape());
    return out;
}

Tensor input_gradient(const Network& net, const Tensor& x, const Objective& objective) {
    return objective_gradient(net, x, objective).gradient;
}

AdversarialResult fgsm(const Network& net, const Tensor& x, std::size_t label, const AttackSpec& spec,
                       std::optional<std::size_t> target) {
    if (!(spec.epsilon >= 0.0)) throw ConfigError("FGSM epsilon must be >= 0");
    const bool targeted = spec.mode == TargetMode::targeted;
    if (targeted && !target) throw ConfigError("targeted FGSM needs a target class");
    const std::size_t cls = targeted ? *target : label;
    Tensor g = input_gradient(net, x, CrossEntropyObjective{cls});
    const double dir = targeted ? -1.0 : 1.0;
    AdversarialResult r;
    r.adversarial_input = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        r.adversarial_input[i] = bounded_step(x[i], dir * spec.epsilon * s, 0.0, 1.0);
    }
    r.iterations = 1;
    r.achieved_class = decode(net, r.adversarial_input);
    r.success = targeted ? r.achieved_class == *target : r.achieved_class != label;
    if (targeted) r.target = target;
    r.distortion_norms = distortion(x, r.adversarial_input);
    return r;
}

AdversarialResult cw_attack(const Network& net, const Tensor& x, std::size_t target, const AttackSpec& spec) {
    spec.validate();
    if (target >= net.classes())
        throw ConfigError("target " + std::to_string(target) + " out of range for " + std::to_string(net.classes()) +
                          " classes");
    if (x.shape() != net.input_shape())
        throw ConfigError("CW attack expects one sample of shape " + shape_str(net.input_shape()));
    CwState st{net, x, target, spec, {}, std::numeric_limits<double>::infinity(), {}};

    // already the target with margin kappa: zero distortion is optimal
    std::size_t achieved = 0;
    st.result.iterations = 1;
    if (verify_target(net, x, target, spec.kappa, achieved)) return finish(st, x);

    switch (spec.norm) {
        case Norm::l2: return cw_l2(st);
        case Norm::linf: return cw_linf(st);
        case Norm::l0: return cw_l0(st);
    }
    throw ConfigError("unknown norm");
}

AdversarialResult cw_attack_nontargeted(const Network& net, const Tensor& x, std::size_t label, const AttackSpec& spec) {
    std::optional<AdversarialResult> best;
    std::optional<AdversarialResult> fallback;
    std::size_t spent = 0;
    for (std::size_t t = 0; t < net.classes(); ++t) {
        if (t == label) continue;
        AdversarialResult r = cw_attack(net, x, t, spec);
        spent += r.iterations;
        if (!r.success) {
            if (!fallback) fallback = std::move(r);
            continue;
        }
        const double norm = lp_norm(Tensor(x.shape(), [&] {
                                        std::vector<double> d(x.size());
                                        for (std::size_t i = 0; i < x.size(); ++i) d[i] = r.adversarial_input[i] - x[i];
                                        return d;
                                    }()),
                                    spec.norm);
        const double best_norm = best ? (spec.norm == Norm::l0   ? best->distortion_norms.l0
                                         : spec.norm == Norm::l2 ? best->distortion_norms.l2
                                                                 : best->distortion_norms.linf)
                                      : std::numeric_limits<double>::infinity();
        if (norm < best_norm) best = std::move(r);
    }
    AdversarialResult out = best ? std::move(*best) : std::move(*fallback);
    out.iterations = spent;
    out.success = out.achieved_class != label && best.has_value();
    return out;
}

std::size_t choose_target(TargetRule rule, std::size_t label, std::size_t classes, std::uint64_t seed,
                          std::uint64_t index) {
    if (classes < 2) throw ConfigError("target selection needs at least two classes");
    if (rule == TargetRule::next) return (label + 1) % classes;
    Rng rng(derive_seed(seed, index));
    const auto r = static_cast<std::size_t>(rng.below(classes - 1));
    return r >= label ? r + 1 : r;
}

double AdversarialBatch::success_rate() const {
    if (records.empty()) return 0.0;
    std::size_t s = 0;
    for (const auto& r : records) s += r.success ? 1 : 0;
    return 100.0 * static_cast<double>(s) / static_cast<double>(records.size());
}

DistortionNorms AdversarialBatch::mean_norms() const {
    DistortionNorms m;
    if (records.empty()) return m;
    for (const auto& r : records) {
        m.l0 += r.norms.l0;
        m.l2 += r.norms.l2;
        m.linf += r.norms.linf;
    }
    const auto n = static_cast<double>(records.size());
    return {m.l0 / n, m.l2 / n, m.linf / n};
}

Tensor AdversarialBatch::stacked() const {
    std::vector<Tensor> items;
    items.reserve(records.size());
    for (const auto& r : records) items.push_back(r.adversarial);
    return stack(items);
}

AdversarialBatch run_attack_batch(const Network& net, const LabeledDataset& ds, const AttackSpec& spec,
                                  std::size_t count, std::uint64_t seed, const AttackProgress& progress) {
    spec.validate();
    const std::size_t n = count == 0 ? ds.size() : count;
    if (n > ds.size())
        throw ConfigError("asked to attack " + std::to_string(n) + " samples of a " + std::to_string(ds.size()) +
                          "-sample split");
    AdversarialBatch batch;
    batch.spec = spec;
    batch.item_shape = net.input_shape();
    batch.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor x = ds.image(i);
        const std::size_t label = ds.labels[i];
        const bool targeted = spec.mode == TargetMode::targeted;
        const std::size_t target = targeted ? choose_target(spec.target_rule, label, net.classes(), seed, i) : 0;
        AdversarialResult r;
        if (spec.family == AttackFamily::fgsm)
            r = fgsm(net, x, label, spec, targeted ? std::optional<std::size_t>(target) : std::nullopt);
        else if (targeted)
            r = cw_attack(net, x, target, spec);
        else
            r = cw_attack_nontargeted(net, x, label, spec);
        AdversarialRecord rec;
        rec.index = i;
        rec.true_label = static_cast<std::uint8_t>(label);
        rec.target = targeted ? static_cast<std::int32_t>(target) : -1;
        rec.success = r.success;
        rec.norms = r.distortion_norms;
        rec.iterations = r.iterations;
        rec.adversarial = std::move(r.adversarial_input);
        batch.records.push_back(std::move(rec));
        if (progress) progress(i + 1, n);
    }
    return batch;
}

Bytes save_adversarial_batch(const AdversarialBatch& batch) {
    ByteWriter w;
    w.text("PADV");
    w.u32_le(kAdvFormatVersion);
    w.u64_le(batch.records.size());
    w.u32_le(static_cast<std::uint32_t>(batch.item_shape.size()));
    for (auto d : batch.item_shape) w.u32_le(static_cast<std::uint32_t>(d));
    w.string_le(batch.spec.echo());
    const std::size_t item = shape_size(batch.item_shape);
    for (const auto& r : batch.records) {
        if (r.adversarial.size() != item) throw ConfigError("adversarial record does not match the batch item shape");
        w.u64_le(r.index);
        w.u8(r.true_label);
        w.u32_le(static_cast<std::uint32_t>(r.target));
        w.u8(r.success ? 1 : 0);
        w.f64_le(r.norms.l0);
        w.f64_le(r.norms.l2);
        w.f64_le(r.norms.linf);
        w.u64_le(r.iterations);
        for (double v : r.adversarial.values()) w.f64_le(v);
    }
    return w.take();
}

AdversarialBatch load_adversarial_batch(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("PADV", "adversarial batch");
    const auto ver_at = r.offset();
    if (r.u32_le() != kAdvFormatVersion) throw FormatError("unsupported adversarial batch version", ver_at);
    const std::uint64_t count = r.u64_le();
    const auto rank_at = r.offset();
    const std::uint32_t rank = r.u32_le();
    if (rank == 0 || rank > 8) throw FormatError("invalid item rank " + std::to_string(rank), rank_at);
    AdversarialBatch b;
    b.item_shape.resize(rank);
    for (auto& d : b.item_shape) {
        const auto at = r.offset();
        d = r.u32_le();
        if (d == 0) throw FormatError("zero item dimension", at);
    }
    const auto spec_at = r.offset();
    try {
        b.spec = AttackSpec::parse_echo(r.string_le());
    } catch (const ConfigError& e) {
        throw FormatError(e.what(), spec_at);
    }
    const std::size_t item = shape_size(b.item_shape);
    const std::size_t record_bytes = 8 + 1 + 4 + 1 + 24 + 8 + 8 * item;
    if (count > r.remaining() / record_bytes)
        throw FormatError("header declares " + std::to_string(count) + " records, file is too short", r.offset());
    b.records.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        AdversarialRecord rec;
        rec.index = r.u64_le();
        rec.true_label = r.u8();
        rec.target = static_cast<std::int32_t>(r.u32_le());
        rec.success = r.u8() != 0;
        rec.norms.l0 = r.f64_le();
        rec.norms.l2 = r.f64_le();
        rec.norms.linf = r.f64_le();
        rec.iterations = r.u64_le();
        std::vector<double> v(item);
        for (auto& x : v) x = r.f64_le();
        rec.adversarial = Tensor(b.item_shape, std::move(v));
        b.records.push_back(std::move(rec));
    }
    r.expect_end("adversarial batch");
    return b;
}

}  // namespace keyperm
