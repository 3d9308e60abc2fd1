#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "contrec/autodiff.hpp"
#include "contrec/isosurface.hpp"
#include "contrec/model.hpp"
#include "contrec/priors.hpp"
#include "contrec/shapes.hpp"

namespace contrec::testing {

inline ModelConfig tiny_model_config() {
    ModelConfig c;
    c.image_size = 16;
    c.feature_dim = 8;
    c.latent_dim = 4;
    c.decoder_width = 8;
    c.decoder_depth = 2;
    c.point_embed = 4;
    c.latent_hidden = 8;
    return c;
}

// Random biases keep every relu pre-activation away from its kink, which a
// zero-initialised bias on a blank background would sit exactly on.
inline ReconModel jittered_model(const ModelConfig& cfg, std::uint64_t seed) {
    ReconModel m = init_model(cfg, seed);
    Rng rng(seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto* s : m.sets())
        for (std::size_t i = 0; i < s->size(); ++i) {
            const std::string& n = s->name(i);
            if (n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0 && n != "lat.ls.b")
                for (auto& v : s->at(i).data()) v = u(rng);
        }
    return m;
}

inline Image random_image(std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(size, size);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

inline PointSample random_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    PointSample s;
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) s.points.push_back(u(rng));
        s.occupancy.push_back(static_cast<std::uint8_t>(rng() & 1));
    }
    return s;
}

inline GaussianLatent random_gaussian(std::size_t dim, Rng& rng, double mu_scale = 1.0, double lo = 0.3, double hi = 2.0) {
    std::uniform_real_distribution<double> um(-mu_scale, mu_scale), us(lo, hi);
    GaussianLatent q;
    for (std::size_t d = 0; d < dim; ++d) {
        q.mu.push_back(um(rng));
        q.sigma.push_back(us(rng));
    }
    return q;
}

// Full training objective over every model parameter: BCE of a reparameterised
// reconstruction plus the KL to a fixed prior.
struct CompositeCase {
    ModelConfig config;
    std::vector<std::string> names;
    Image image;
    PointSample sample;
    std::vector<double> eps;
    GaussianLatent prior;
    double kl_weight = 0.5;

    ad::Objective objective() const {
        return [this](ad::Tape& tape, std::span<const ad::Var> p) {
            BoundModel m(tape, config, names, p);
            auto enc = encode_image(m, image);
            auto lat = encode_latent(m, enc.feature, &sample);
            ad::Var z = sample_latent(lat.mu, lat.log_sigma, eps);
            ad::Var bce = bce_loss(decode_occupancy(m, enc.feature, z, points_tensor(sample)), sample.occupancy);
            return ad::add(bce, ad::scale(kl_to_fixed(lat.mu, lat.log_sigma, prior), kl_weight));
        };
    }
};

inline CompositeCase composite_case(const ReconModel& model, std::uint64_t seed, std::size_t points = 4) {
    CompositeCase c;
    c.config = model.config;
    c.names = parameter_names(model);
    c.image = random_image(model.config.image_size, seed);
    c.sample = random_sample(points, seed + 1);
    Rng rng(seed + 2);
    c.eps = standard_normal(model.config.latent_dim, rng);
    c.prior = random_gaussian(model.config.latent_dim, rng);
    return c;
}

// Smooth occupancy made of a few random soft ellipsoids.
inline FieldFn blob_field(std::uint64_t seed, std::size_t blobs = 3) {
    Rng rng(seed);
    std::uniform_real_distribution<double> c(-0.2, 0.2), r(0.08, 0.25), sharp(10.0, 40.0);
    std::vector<std::array<double, 7>> b;
    for (std::size_t i = 0; i < blobs; ++i) b.push_back({c(rng), c(rng), c(rng), r(rng), r(rng), r(rng), sharp(rng)});
    return pointwise([b](const Point3& p) {
        double best = 0.0;
        for (const auto& e : b) {
            double d = 0.0;
            for (int a = 0; a < 3; ++a) d += (p[a] - e[a]) * (p[a] - e[a]) / (e[3 + a] * e[3 + a]);
            best = std::max(best, 1.0 / (1.0 + std::exp(e[6] * (std::sqrt(d) - 1.0))));
        }
        return best;
    });
}

// Composite Simpson integral of p log(p / q) over mu1 +- 14 sigma1.
inline double quadrature_kl(double m1, double s1, double m2, double s2) {
    auto logpdf = [](double x, double m, double s) { return -0.5 * std::log(2 * std::numbers::pi * s * s) - (x - m) * (x - m) / (2 * s * s); };
    const double a = m1 - 14 * s1, b = m1 + 14 * s1;
    const int n = 20000;
    const double h = (b - a) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = a + i * h;
        const double lp = logpdf(x, m1, s1);
        const double f = std::exp(lp) * (lp - logpdf(x, m2, s2));
        acc += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
    }
    return acc * h / 3.0;
}

inline FieldFn sphere_field(double radius = 0.3) {
    return pointwise([radius](const Point3& p) { return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) < radius ? 1.0 : 0.0; });
}

}  // namespace contrec::testing
