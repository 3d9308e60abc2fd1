#pragma once

// Stored variational priors per learned class, their attention-weighted
// combination, and the KL regulariser of the total loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contrec/autodiff.hpp"
#include "contrec/model.hpp"
#include "contrec/util.hpp"

namespace contrec {

inline constexpr std::size_t kDefaultPriorsPerClass = 3;

// Sum_d [log(s2/s1) + (s1^2 + (m1 - m2)^2) / (2 s2^2) - 1/2]
inline double kl_gaussian(const GaussianLatent& q1, const GaussianLatent& q2) {
    validate(q1);
    validate(q2);
    if (q1.dim() != q2.dim()) {
        throw ad::ContractError("kl_gaussian: dimension mismatch " + std::to_string(q1.dim()) + " vs " + std::to_string(q2.dim()));
    }
    double kl = 0.0;
    for (std::size_t d = 0; d < q1.dim(); ++d) {
        const double s1 = q1.sigma[d], s2 = q2.sigma[d], dm = q1.mu[d] - q2.mu[d];
        kl += std::log(s2 / s1) + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5;
    }
    return std::max(kl, 0.0);
}

// KL of a tape latent against a fixed Gaussian, differentiable in (mu, log_sigma).
inline ad::Var kl_to_fixed(ad::Var mu, ad::Var log_sigma, const GaussianLatent& target) {
    validate(target);
    ad::Tape& tape = *mu.tape;
    const ad::Shape shape = tape.value(mu).shape();
    if (tape.value(mu).size() != target.dim()) throw ad::ContractError("kl_to_fixed: dimension mismatch");
    ad::Tensor m2(shape, target.mu), log_s2(shape), inv2(shape);
    for (std::size_t d = 0; d < target.dim(); ++d) {
        log_s2[d] = std::log(target.sigma[d]);
        inv2[d] = 1.0 / (2.0 * target.sigma[d] * target.sigma[d]);
    }
    ad::Var var1 = ad::exp(ad::scale(log_sigma, 2.0));
    ad::Var dm = ad::sub(mu, tape.constant(std::move(m2)));
    ad::Var quad = ad::mul(ad::add(var1, ad::square(dm)), tape.constant(std::move(inv2)));
    ad::Var terms = ad::add(ad::sub(tape.constant(std::move(log_s2)), log_sigma), quad);
    return ad::sum(ad::add_scalar(terms, -0.5));
}

// KL(q1 || q2) with both sides on the tape.
inline ad::Var kl_vars(ad::Var mu1, ad::Var log_s1, ad::Var mu2, ad::Var log_s2) {
    ad::Var quad = ad::add(ad::exp(ad::scale(log_s1, 2.0)), ad::square(ad::sub(mu1, mu2)));
    quad = ad::mul(quad, ad::scale(ad::exp(ad::scale(log_s2, -2.0)), 0.5));
    return ad::sum(ad::add_scalar(ad::add(ad::sub(log_s2, log_s1), quad), -0.5));
}

// ---- prior bank -----------------------------------------------------------

struct PriorEntry {
    std::size_t session = 0;
    std::string cls;
    std::size_t j = 0;
    GaussianLatent prior;

    friend bool operator==(const PriorEntry&, const PriorEntry&) = default;
};

struct PriorBank {
    std::vector<PriorEntry> entries;
    std::size_t m = kDefaultPriorsPerClass;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    friend bool operator==(const PriorBank&, const PriorBank&) = default;
};

struct AttentionWeights {
    std::vector<double> logits;
    std::vector<double> weights;

    std::size_t size() const { return weights.size(); }

    static AttentionWeights from_logits(std::vector<double> logits) {
        AttentionWeights a;
        a.weights = ad::softmax_values(logits);
        a.logits = std::move(logits);
        return a;
    }

    static AttentionWeights uniform(std::size_t n) { return from_logits(std::vector<double>(n, 0.0)); }

    friend bool operator==(const AttentionWeights&, const AttentionWeights&) = default;
};

enum class PriorCombination { Blend, Mixture };

inline PriorCombination parse_combination(const std::string& s) {
    if (s == "blend") return PriorCombination::Blend;
    if (s == "mixture") throw ConfigError("replay.prior_combination: 'mixture' is not implemented");
    throw ConfigError("replay.prior_combination: unknown value '" + s + "'");
}

// Lloyd's k-means on the posterior means. The first centre is a seeded pick,
// the rest are chosen farthest-first; ties go to the lowest index.
inline std::vector<GaussianLatent> distill_priors(const std::vector<GaussianLatent>& latents, std::size_t m, std::uint64_t seed,
                                                  std::size_t iterations = 50) {
    if (latents.empty()) throw ad::ContractError("distill_priors: no instances");
    if (m == 0) throw ConfigError("replay.m_priors must be >= 1");
    if (latents.size() < m) {
        std::cerr << "warning: distill_priors: only " << latents.size() << " instances, reducing m from " << m << "\n";
        m = latents.size();
    }
    const std::size_t n = latents.size(), dim = latents.front().dim();
    for (const auto& q : latents) {
        validate(q);
        if (q.dim() != dim) throw ad::ContractError("distill_priors: mixed latent dimensions");
    }
    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
        return s;
    };

    Rng rng(seed);
    std::vector<std::size_t> init{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
    while (init.size() < m) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (auto c : init) d = std::min(d, dist2(latents[i].mu, latents[c].mu));
            if (d > best_d) {
                best_d = d;
                best = i;
            }
        }
        init.push_back(best);
    }
    std::vector<std::vector<double>> centres;
    std::vector<std::vector<double>> sigmas;
    for (auto c : init) {
        centres.push_back(latents[c].mu);
        sigmas.push_back(latents[c].sigma);
    }

    std::vector<std::size_t> assign(n, 0);
    for (std::size_t it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < m; ++c) {
                const double d = dist2(latents[i].mu, centres[c]);
                if (d < best) {
                    best = d;
                    assign[i] = c;
                }
            }
        }
        for (std::size_t c = 0; c < m; ++c) {
            std::vector<double> mu(dim, 0.0), sg(dim, 0.0);
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] != c) continue;
                ++count;
                for (std::size_t d = 0; d < dim; ++d) {
                    mu[d] += latents[i].mu[d];
                    sg[d] += latents[i].sigma[d];
                }
            }
            if (count == 0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
                mu[d] /= static_cast<double>(count);
                sg[d] /= static_cast<double>(count);
            }
            centres[c] = std::move(mu);
            sigmas[c] = std::move(sg);
        }
    }
    std::vector<GaussianLatent> out;
    for (std::size_t c = 0; c < m; ++c) out.push_back({centres[c], sigmas[c]});
    return out;
}

inline void append_class_priors(PriorBank& bank, std::size_t session, const std::string& cls, const std::vector<GaussianLatent>& priors) {
    for (std::size_t j = 0; j < priors.size(); ++j) bank.entries.push_back({session, cls, j, priors[j]});
}

inline GaussianLatent combine_priors(const PriorBank& bank, const AttentionWeights& a) {
    if (bank.empty()) throw ad::ContractError("combine_priors: empty prior bank");
    if (a.size() != bank.size()) {
        throw ad::ContractError("combine_priors: " + std::to_string(a.size()) + " weights for " + std::to_string(bank.size()) + " priors");
    }
    const std::size_t dim = bank.entries.front().prior.dim();
    GaussianLatent q{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
    for (std::size_t e = 0; e < bank.size(); ++e) {
        const auto& p = bank.entries[e].prior;
        if (p.dim() != dim) throw ad::ContractError("combine_priors: mixed latent dimensions");
        for (std::size_t d = 0; d < dim; ++d) {
            q.mu[d] += a.weights[e] * p.mu[d];
            q.sigma[d] += a.weights[e] * p.sigma[d];
        }
    }
    return q;
}

struct AttentionFit {
    AttentionWeights weights;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> trajectory;  // objective after each step
};

struct AttentionFitOptions {
    std::size_t steps = 200;
    double step_size = 0.05;
    std::vector<double> init_logits;  // empty: zeros
};

namespace detail {

// Mean over targets of KL(target || blend(softmax(logits))), on a fresh tape.
inline double attention_objective(const PriorBank& bank, const std::vector<GaussianLatent>& targets, const std::vector<double>& logits,
                                  std::vector<double>* grad) {
    const std::size_t n = bank.size(), dim = bank.entries.front().prior.dim();
    ad::Tensor mus({n, dim}), sigmas({n, dim});
    for (std::size_t e = 0; e < n; ++e)
        for (std::size_t d = 0; d < dim; ++d) {
            mus[e * dim + d] = bank.entries[e].prior.mu[d];
            sigmas[e * dim + d] = bank.entries[e].prior.sigma[d];
        }
    ad::Tape tape;
    ad::Var lv = tape.variable(ad::Tensor({1, n}, logits));
    ad::Var w = ad::softmax(lv);
    ad::Var mu2 = ad::matmul(w, tape.constant(std::move(mus)));
    ad::Var log_s2 = ad::log(ad::matmul(w, tape.constant(std::move(sigmas))));
    ad::Var total;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const auto& q = targets[t];
        if (q.dim() != dim) throw ad::ContractError("fit_attention: target dimension mismatch");
        std::vector<double> ls(dim);
        for (std::size_t d = 0; d < dim; ++d) ls[d] = std::log(q.sigma[d]);
        ad::Var kl = kl_vars(tape.constant(ad::Tensor({1, dim}, q.mu)), tape.constant(ad::Tensor({1, dim}, ls)), mu2, log_s2);
        total = t == 0 ? kl : ad::add(total, kl);
    }
    ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(targets.size()));
    if (grad) {
        tape.backward(loss);
        const auto g = tape.grad(lv);
        grad->assign(g.data().begin(), g.data().end());
    }
    return tape.value(loss).item();
}

}  // namespace detail

// Gradient descent on the softmax logits. A step that would raise the
// objective is halved until it does not.
inline AttentionFit fit_attention(const PriorBank& bank, const std::vector<GaussianLatent>& targets, const AttentionFitOptions& opt = {}) {
    if (bank.empty()) throw ad::ContractError("fit_attention: empty prior bank");
    if (targets.empty()) throw ad::ContractError("fit_attention: no targets");
    for (const auto& q : targets) validate(q);
    std::vector<double> logits = opt.init_logits.empty() ? std::vector<double>(bank.size(), 0.0) : opt.init_logits;
    if (logits.size() != bank.size()) throw ad::ContractError("fit_attention: initial logits do not cover the bank");

    AttentionFit fit;
    std::vector<double> grad;
    double loss = detail::attention_objective(bank, targets, logits, &grad);
    fit.initial_loss = loss;
    for (std::size_t s = 0; s < opt.steps && bank.size() > 1; ++s) {
        double step = opt.step_size;
        for (int tries = 0; tries < 40; ++tries, step *= 0.5) {
            std::vector<double> trial = logits;
            for (std::size_t i = 0; i < trial.size(); ++i) trial[i] -= step * grad[i];
            std::vector<double> trial_grad;
            const double trial_loss = detail::attention_objective(bank, targets, trial, &trial_grad);
            if (trial_loss <= loss) {
                logits = std::move(trial);
                grad = std::move(trial_grad);
                loss = trial_loss;
                break;
            }
        }
        fit.trajectory.push_back(loss);
    }
    fit.final_loss = loss;
    fit.weights = AttentionWeights::from_logits(std::move(logits));
    return fit;
}

inline double prior_kl_term(const PriorBank& bank, const AttentionWeights& a, const GaussianLatent& q) {
    return kl_gaussian(q, combine_priors(bank, a));
}

inline ad::Var prior_kl_term(const PriorBank& bank, const AttentionWeights& a, const LatentVars& q) {
    return kl_to_fixed(q.mu, q.log_sigma, combine_priors(bank, a));
}

// ---- bank JSON --------------------------------------------------------------

namespace detail {

inline std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

inline std::string json_doubles(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += fmt_double(v[i]);
    }
    return out + "]";
}

}  // namespace detail

inline std::string encode_bank_json(const PriorBank& bank) {
    std::string out = "[";
    for (std::size_t e = 0; e < bank.size(); ++e) {
        const auto& p = bank.entries[e];
        out += e ? ",\n  " : "\n  ";
        out += "{\"session\": " + std::to_string(p.session) + ", \"class\": " + detail::json_string(p.cls) +
               ", \"j\": " + std::to_string(p.j) + ", \"mu\": " + detail::json_doubles(p.prior.mu) +
               ", \"sigma\": " + detail::json_doubles(p.prior.sigma) + "}";
    }
    out += bank.empty() ? "]\n" : "\n]\n";
    return out;
}

inline PriorBank decode_bank_json(const std::string& text, std::size_t m = kDefaultPriorsPerClass) {
    const auto js = nlohmann::json::parse(text);
    if (!js.is_array()) throw IoError("prior bank JSON must be an array");
    PriorBank bank;
    bank.m = m;
    for (const auto& e : js) {
        PriorEntry p;
        p.session = e.at("session").get<std::size_t>();
        p.cls = e.at("class").get<std::string>();
        p.j = e.at("j").get<std::size_t>();
        p.prior.mu = e.at("mu").get<std::vector<double>>();
        p.prior.sigma = e.at("sigma").get<std::vector<double>>();
        validate(p.prior);
        bank.entries.push_back(std::move(p));
    }
    return bank;
}

}  // namespace contrec
