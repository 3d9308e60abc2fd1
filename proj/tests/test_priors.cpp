#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "contrec/priors.hpp"
#include "support.hpp"

using namespace contrec;
using contrec::testing::quadrature_kl;
using contrec::testing::random_gaussian;

namespace {

GaussianLatent g1(double mu, double sigma) { return {{mu}, {sigma}}; }

PriorBank bank_of(const std::vector<GaussianLatent>& qs) {
    PriorBank b;
    for (std::size_t i = 0; i < qs.size(); ++i) b.entries.push_back({0, "c" + std::to_string(i), 0, qs[i]});
    return b;
}

}  // namespace

TEST(Kl, ClosedFormCases) {
    EXPECT_EQ(kl_gaussian(g1(0, 1), g1(0, 1)), 0.0);
    EXPECT_NEAR(kl_gaussian(g1(1, 1), g1(0, 1)), 0.5, 1e-15);
    EXPECT_NEAR(kl_gaussian(g1(0, 2), g1(0, 1)), std::log(0.5) + 2.0 - 0.5, 1e-15);
    EXPECT_NEAR(kl_gaussian(g1(0, 2), g1(0, 1)), 0.8069, 1e-4);
    EXPECT_THROW(kl_gaussian(g1(0, 1), GaussianLatent{{0, 0}, {1, 1}}), ad::ContractError);
    EXPECT_THROW(kl_gaussian(g1(0, 0), g1(0, 1)), ad::ContractError);
}

TEST(Kl, MatchesQuadrature) {
    Rng rng(1);
    std::uniform_real_distribution<double> um(-2, 2), us(0.3, 2.5);
    for (int i = 0; i < 50; ++i) {
        const double m1 = um(rng), s1 = us(rng), m2 = um(rng), s2 = us(rng);
        EXPECT_NEAR(kl_gaussian(g1(m1, s1), g1(m2, s2)), quadrature_kl(m1, s1, m2, s2), 1e-6);
    }
}

TEST(Kl, NonNegativeAndZeroOnIdentical) {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const auto a = random_gaussian(8, rng), b = random_gaussian(8, rng);
        EXPECT_GE(kl_gaussian(a, b), 0.0);
        EXPECT_EQ(kl_gaussian(a, a), 0.0);
    }
}

TEST(Kl, TapeVersionsAgreeWithClosedForm) {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const auto a = random_gaussian(6, rng), b = random_gaussian(6, rng);
        std::vector<double> la(6), lb(6);
        for (int d = 0; d < 6; ++d) {
            la[d] = std::log(a.sigma[d]);
            lb[d] = std::log(b.sigma[d]);
        }
        ad::Tape tape;
        ad::Var mu = tape.constant(ad::Tensor({1, 6}, a.mu)), ls = tape.constant(ad::Tensor({1, 6}, la));
        EXPECT_NEAR(tape.value(kl_to_fixed(mu, ls, b)).item(), kl_gaussian(a, b), 1e-12);
        ad::Var mu2 = tape.constant(ad::Tensor({1, 6}, b.mu)), ls2 = tape.constant(ad::Tensor({1, 6}, lb));
        EXPECT_NEAR(tape.value(kl_vars(mu, ls, mu2, ls2)).item(), kl_gaussian(a, b), 1e-12);
    }
}

TEST(Kl, GradientsPassFiniteDifferences) {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        std::vector<ad::Tensor> params;
        std::uniform_real_distribution<double> u(-1, 1);
        for (int k = 0; k < 4; ++k) {
            ad::Tensor t({1, 3});
            for (auto& v : t.data()) v = u(rng);
            params.push_back(t);
        }
        const auto r = ad::grad_check([](ad::Tape&, std::span<const ad::Var> p) { return kl_vars(p[0], p[1], p[2], p[3]); }, params);
        EXPECT_TRUE(r.passed) << r.worst;
    }
}

TEST(Distill, IdenticalInstancesGiveDuplicatePriors) {
    const GaussianLatent q{{0.5, -1.0}, {0.2, 0.7}};
    const auto priors = distill_priors(std::vector<GaussianLatent>(6, q), 3, 9);
    ASSERT_EQ(priors.size(), 3u);
    for (const auto& p : priors)
        for (std::size_t d = 0; d < 2; ++d) {
            EXPECT_NEAR(p.mu[d], q.mu[d], 1e-15);
            EXPECT_NEAR(p.sigma[d], q.sigma[d], 1e-15);
        }
}

TEST(Distill, RecoversBlobMeans) {
    Rng rng(5);
    std::normal_distribution<double> nd(0.0, 0.1);
    std::vector<GaussianLatent> latents;
    std::vector<double> mean_a(3, 0.0), mean_b(3, 0.0), sig_a(3, 0.0);
    for (int i = 0; i < 40; ++i) {
        const bool a = i % 2 == 0;
        GaussianLatent q;
        for (int d = 0; d < 3; ++d) {
            q.mu.push_back((a ? -5.0 : 5.0) + nd(rng));
            q.sigma.push_back(0.5 + 0.01 * i);
            (a ? mean_a : mean_b)[d] += q.mu[d] / 20.0;
            if (a) sig_a[d] += q.sigma[d] / 20.0;
        }
        latents.push_back(q);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto priors = distill_priors(latents, 2, seed);
        ASSERT_EQ(priors.size(), 2u);
        if (priors[0].mu[0] > 0) std::swap(priors[0], priors[1]);
        for (int d = 0; d < 3; ++d) {
            EXPECT_NEAR(priors[0].mu[d], mean_a[d], 1e-6);
            EXPECT_NEAR(priors[1].mu[d], mean_b[d], 1e-6);
            EXPECT_NEAR(priors[0].sigma[d], sig_a[d], 1e-6);
        }
        EXPECT_EQ(distill_priors(latents, 2, seed), distill_priors(latents, 2, seed));
    }
}

TEST(Distill, TooFewInstancesReducesM) {
    Rng rng(6);
    const std::vector<GaussianLatent> two{random_gaussian(4, rng), random_gaussian(4, rng)};
    EXPECT_EQ(distill_priors(two, 3, 1).size(), 2u);
    EXPECT_THROW(distill_priors({}, 3, 1), ad::ContractError);
    EXPECT_THROW(distill_priors(two, 0, 1), ConfigError);
}

TEST(Combine, ParameterBlend) {
    const PriorBank b = bank_of({g1(0, 1), g1(2, 3)});
    const auto q = combine_priors(b, AttentionWeights::uniform(2));
    EXPECT_DOUBLE_EQ(q.mu[0], 1.0);
    EXPECT_DOUBLE_EQ(q.sigma[0], 2.0);

    const PriorBank one = bank_of({g1(0.7, 0.4)});
    EXPECT_EQ(combine_priors(one, AttentionWeights::uniform(1)), g1(0.7, 0.4));

    const PriorBank same = bank_of({g1(0.3, 1.1), g1(0.3, 1.1), g1(0.3, 1.1)});
    const auto s = combine_priors(same, AttentionWeights::from_logits({0.2, -3.0, 1.7}));
    EXPECT_NEAR(s.mu[0], 0.3, 1e-15);
    EXPECT_NEAR(s.sigma[0], 1.1, 1e-15);

    EXPECT_THROW(combine_priors(PriorBank{}, AttentionWeights{}), ad::ContractError);
    EXPECT_THROW(combine_priors(b, AttentionWeights::uniform(3)), ad::ContractError);
}

TEST(Combine, AlwaysValidGaussian) {
    Rng rng(7);
    std::normal_distribution<double> nd(0.0, 5.0);
    for (int i = 0; i < 200; ++i) {
        std::vector<GaussianLatent> qs;
        std::vector<double> logits;
        for (int k = 0; k < 5; ++k) {
            qs.push_back(random_gaussian(4, rng, 3.0, 1e-3, 4.0));
            logits.push_back(nd(rng));
        }
        const auto a = AttentionWeights::from_logits(logits);
        double sum = 0.0;
        for (double w : a.weights) {
            EXPECT_GE(w, 0.0);
            sum += w;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_NO_THROW(validate(combine_priors(bank_of(qs), a)));
    }
}

TEST(Combine, MixtureIsNotImplemented) {
    EXPECT_EQ(parse_combination("blend"), PriorCombination::Blend);
    EXPECT_THROW(parse_combination("mixture"), ConfigError);
    EXPECT_THROW(parse_combination("other"), ConfigError);
}

TEST(Attention, FindsMatchingEntry) {
    Rng rng(8);
    const auto target = random_gaussian(8, rng);
    GaussianLatent far = target;
    for (auto& m : far.mu) m += 6.0;
    for (auto& s : far.sigma) s *= 3.0;
    const PriorBank bank = bank_of({far, target});
    const auto fit = fit_attention(bank, {target});
    EXPECT_GE(fit.weights.weights[1], 0.99);
    EXPECT_LE(fit.final_loss, fit.initial_loss);

    // The same optimum on an exhaustive 0.01 grid of the weight simplex.
    double best_w = 0.0, best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100; ++i) {
        const double w = i / 100.0;
        AttentionWeights a;
        a.weights = {1.0 - w, w};
        const double v = kl_gaussian(target, combine_priors(bank, a));
        if (v < best) {
            best = v;
            best_w = w;
        }
    }
    EXPECT_GE(best_w, 0.99);
}

TEST(Attention, SingleEntryBankHasUnitWeight) {
    Rng rng(9);
    const PriorBank bank = bank_of({random_gaussian(4, rng)});
    const auto fit = fit_attention(bank, {random_gaussian(4, rng), random_gaussian(4, rng)});
    EXPECT_EQ(fit.weights.weights, std::vector<double>{1.0});
}

TEST(Attention, ObjectiveNeverIncreases) {
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<GaussianLatent> entries, targets;
        for (int k = 0; k < 6; ++k) entries.push_back(random_gaussian(5, rng, 2.0));
        for (int k = 0; k < 8; ++k) targets.push_back(random_gaussian(5, rng, 2.0));
        AttentionFitOptions opt;
        opt.steps = 60;
        opt.step_size = 5.0;  // deliberately large so the step control matters
        const auto fit = fit_attention(bank_of(entries), targets, opt);
        double prev = fit.initial_loss;
        for (double v : fit.trajectory) {
            EXPECT_LE(v, prev);
            prev = v;
        }
        double sum = 0.0;
        for (double w : fit.weights.weights) sum += w;
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Attention, ShiftedInitialLogitsGiveIdenticalTrajectory) {
    // Adding a constant to every logit leaves the softmax, and with it every
    // gradient and step, unchanged; 0.5 and 0 are exact in binary.
    Rng rng(11);
    std::vector<GaussianLatent> entries, targets;
    for (int k = 0; k < 4; ++k) entries.push_back(random_gaussian(3, rng));
    for (int k = 0; k < 3; ++k) targets.push_back(random_gaussian(3, rng));
    AttentionFitOptions a, b;
    a.steps = b.steps = 50;
    b.init_logits.assign(4, 0.5);
    const auto fa = fit_attention(bank_of(entries), targets, a);
    const auto fb = fit_attention(bank_of(entries), targets, b);
    ASSERT_EQ(fa.trajectory.size(), fb.trajectory.size());
    for (std::size_t i = 0; i < fa.trajectory.size(); ++i) EXPECT_NEAR(fa.trajectory[i], fb.trajectory[i], 1e-12);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(fa.weights.weights[i], fb.weights.weights[i], 1e-12);
}

TEST(Attention, Errors) {
    Rng rng(12);
    EXPECT_THROW(fit_attention(PriorBank{}, {random_gaussian(2, rng)}), ad::ContractError);
    EXPECT_THROW(fit_attention(bank_of({random_gaussian(2, rng)}), {}), ad::ContractError);
}

TEST(PriorTerm, ZeroAtBlendAndNonNegative) {
    Rng rng(13);
    const PriorBank bank = bank_of({random_gaussian(4, rng), random_gaussian(4, rng)});
    const auto a = AttentionWeights::from_logits({0.3, -0.2});
    EXPECT_EQ(prior_kl_term(bank, a, combine_priors(bank, a)), 0.0);
    for (int i = 0; i < 100; ++i) EXPECT_GE(prior_kl_term(bank, a, random_gaussian(4, rng)), 0.0);
}

TEST(Bank, JsonRoundTripIsExact) {
    Rng rng(14);
    PriorBank bank;
    append_class_priors(bank, 0, "sphere", {random_gaussian(5, rng), random_gaussian(5, rng)});
    append_class_priors(bank, 1, "L-bracket", {random_gaussian(5, rng)});
    ASSERT_EQ(bank.size(), 3u);
    EXPECT_EQ(bank.entries[1].j, 1u);
    const std::string text = encode_bank_json(bank);
    const PriorBank back = decode_bank_json(text);
    EXPECT_EQ(back, bank);
    EXPECT_EQ(encode_bank_json(back), text);
    EXPECT_EQ(decode_bank_json(encode_bank_json(PriorBank{})).size(), 0u);
    EXPECT_THROW(decode_bank_json("{}"), IoError);
}
