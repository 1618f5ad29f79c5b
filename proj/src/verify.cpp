#include "lipforge/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lipforge/parallel.hpp"
#include "lipforge/rng.hpp"

namespace lipforge::verify {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

DenseMatrix column(const Vector& v) {
    return DenseMatrix(v.size(), 1, std::vector<double>(v));
}

std::size_t argmax_index(const double* v, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (v[j] > v[best]) best = j;
    return best;
}

Vector softmax(const Vector& z) {
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    Vector p(z.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        p[j] = std::exp(z[j] - zmax);
        sum += p[j];
    }
    for (double& v : p) v /= sum;
    return p;
}

void require_certificates(const model::Model& m) {
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        if (m.layers[k].t.diag.empty()) {
            throw CertificateError("layer " + std::to_string(k) +
                                   " carries no scaling certificate; refresh the model first");
        }
    }
}

}  // namespace

double empirical_lipschitz(const model::Model& m, std::size_t pairs, std::uint64_t rng_seed) {
    if (pairs < 1) throw DomainError("empirical_lipschitz: pairs must be >= 1");
    require_certificates(m);
    const std::size_t dim = m.input_dim();
    static constexpr double kScales[3] = {1e-3, 1e-1, 1.0};

    const std::size_t block = 256;
    const std::size_t nblocks = (pairs + block - 1) / block;
    std::vector<double> block_max(nblocks, 0.0);

    parallel_for(nblocks, [&](std::size_t bi) {
        const std::size_t lo = bi * block;
        const std::size_t hi = std::min(pairs, lo + block);
        const std::size_t cnt = hi - lo;
        DenseMatrix xs(dim, 2 * cnt);
        Vector delta_norm(cnt, 0.0);
        for (std::size_t k = 0; k < cnt; ++k) {
            const std::size_t i = lo + k;
            Rng rng(mix_seed(rng_seed, i));
            const double scale = kScales[i % 3];
            double nd2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double x = rng.normal();
                const double delta = scale * rng.normal();
                xs(d, k) = x;
                xs(d, cnt + k) = x + delta;
                // Measure the realized input difference, not the intended
                // perturbation: x + delta - x rounds, and the ratio must use
                // the distance between the points actually fed forward.
                const double realized = xs(d, cnt + k) - xs(d, k);
                nd2 += realized * realized;
            }
            delta_norm[k] = std::sqrt(nd2);
        }
        const DenseMatrix ys = m.forward(xs);
        double local = 0.0;
        for (std::size_t k = 0; k < cnt; ++k) {
            if (delta_norm[k] == 0.0) continue;
            double out2 = 0.0;
            for (std::size_t r = 0; r < ys.rows(); ++r) {
                const double d = ys(r, k) - ys(r, cnt + k);
                out2 += d * d;
            }
            local = std::max(local, std::sqrt(out2) / delta_norm[k]);
        }
        block_max[bi] = local;
    });

    return *std::max_element(block_max.begin(), block_max.end());
}

LipschitzReport lipschitz_report(const model::Model& m, std::size_t pairs,
                                 std::uint64_t rng_seed) {
    require_certificates(m);
    LipschitzReport rep;
    rep.layer_bounds.assign(m.layers.size(), 1.0);
    double prod = 1.0;
    for (double b : rep.layer_bounds) prod *= b;
    rep.network_bound = prod;
    rep.empirical_max_ratio = empirical_lipschitz(m, pairs, rng_seed);
    rep.pairs_sampled = pairs;
    if (!(rep.empirical_max_ratio <= rep.network_bound * (1.0 + 1e-6))) {
        throw CertificateError("sampled Lipschitz ratio " +
                               std::to_string(rep.empirical_max_ratio) +
                               " exceeds the certified bound " +
                               std::to_string(rep.network_bound));
    }
    return rep;
}

double certified_radius(const Vector& logits, std::size_t true_label, double lip_bound) {
    if (!(lip_bound > 0.0)) throw DomainError("certified_radius: lip_bound must be positive");
    if (logits.size() < 2) throw DimensionError("certified_radius: need at least two logits");
    if (true_label >= logits.size()) {
        throw DimensionError("certified_radius: label out of range");
    }
    double best_other = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (j != true_label) best_other = std::max(best_other, logits[j]);
    }
    const double margin = logits[true_label] - best_other;
    return margin > 0.0 ? margin / (kSqrt2 * lip_bound) : 0.0;
}

CertReport certify_dataset(const model::Model& m, const DenseMatrix& inputs,
                           const std::vector<int>& labels, const Vector& radii) {
    require_certificates(m);
    if (labels.size() != inputs.cols()) {
        throw DimensionError("certify_dataset: label count does not match sample count");
    }
    const std::size_t classes = m.output_dim();
    for (int lab : labels) {
        if (lab < 0 || static_cast<std::size_t>(lab) >= classes) {
            throw DomainError("certify_dataset: label out of range");
        }
    }

    double lip = 1.0;
    for (std::size_t k = 0; k < m.layers.size(); ++k) lip *= 1.0;  // every form is certified 1-Lipschitz

    const std::size_t n = inputs.cols();
    CertReport rep;
    rep.per_sample.resize(n);
    rep.radii_grid = radii;

    const std::size_t block = 512;
    const std::size_t nblocks = (n + block - 1) / block;
    parallel_for(nblocks, [&](std::size_t bi) {
        const std::size_t lo = bi * block;
        const std::size_t hi = std::min(n, lo + block);
        DenseMatrix xs(inputs.rows(), hi - lo);
        for (std::size_t r = 0; r < inputs.rows(); ++r)
            for (std::size_t c = lo; c < hi; ++c) xs(r, c - lo) = inputs(r, c);
        const DenseMatrix logits = m.forward(xs);
        for (std::size_t c = lo; c < hi; ++c) {
            Vector z(classes);
            for (std::size_t r = 0; r < classes; ++r) z[r] = logits(r, c - lo);
            const std::size_t truth = static_cast<std::size_t>(labels[c]);
            const std::size_t pred = argmax_index(z.data(), classes);
            double best_other = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < classes; ++r) {
                if (r != truth) best_other = std::max(best_other, z[r]);
            }
            CertSample& s = rep.per_sample[c];
            s.true_label = labels[c];
            s.predicted_label = static_cast<int>(pred);
            s.margin = z[truth] - best_other;
            s.certified_radius = certified_radius(z, truth, lip);
        }
    });

    std::size_t correct = 0;
    for (const CertSample& s : rep.per_sample)
        if (s.predicted_label == s.true_label) ++correct;
    rep.natural_accuracy = n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);

    rep.certified_accuracy.assign(radii.size(), 0.0);
    for (std::size_t k = 0; k < radii.size(); ++k) {
        std::size_t cert = 0;
        for (const CertSample& s : rep.per_sample) {
            if (s.predicted_label == s.true_label && s.certified_radius > radii[k]) ++cert;
        }
        rep.certified_accuracy[k] = n == 0 ? 0.0 : static_cast<double>(cert) / static_cast<double>(n);
        if (rep.certified_accuracy[k] > rep.natural_accuracy) {
            throw CertificateError("certified accuracy exceeded natural accuracy");
        }
    }
    for (std::size_t a = 0; a < radii.size(); ++a) {
        for (std::size_t b = 0; b < radii.size(); ++b) {
            if (radii[a] <= radii[b] && rep.certified_accuracy[a] < rep.certified_accuracy[b]) {
                throw CertificateError("certified accuracy is not monotone in the radius");
            }
        }
    }
    return rep;
}

bool pgd_attack(const model::Model& m, const Vector& x, int true_label, double radius,
                std::size_t steps, std::uint64_t rng_seed, std::size_t restarts) {
    if (radius < 0.0) throw DomainError("pgd_attack: radius must be >= 0");
    if (x.size() != m.input_dim()) throw DimensionError("pgd_attack: sample dimension mismatch");
    const std::size_t classes = m.output_dim();
    if (true_label < 0 || static_cast<std::size_t>(true_label) >= classes) {
        throw DomainError("pgd_attack: label out of range");
    }
    require_certificates(m);
    const std::size_t truth = static_cast<std::size_t>(true_label);
    const std::size_t dim = x.size();

    auto logits_at = [&](const Vector& pt, std::vector<DenseMatrix>* cache) {
        const DenseMatrix out = cache ? m.forward_cached(column(pt), cache)
                                      : m.forward(column(pt));
        Vector z(classes);
        for (std::size_t r = 0; r < classes; ++r) z[r] = out(r, 0);
        return z;
    };
    auto misclassified = [&](const Vector& z) { return argmax_index(z.data(), classes) != truth; };

    {
        const Vector z0 = logits_at(x, nullptr);
        if (misclassified(z0)) return true;
        if (radius == 0.0 || steps == 0) return false;
    }

    const double step_size = 2.5 * radius / static_cast<double>(steps);
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        Vector delta(dim, 0.0);
        if (r > 0) {
            Rng rng(mix_seed(rng_seed, r));
            double nd2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                delta[d] = rng.normal();
                nd2 += delta[d] * delta[d];
            }
            const double nd = std::sqrt(nd2);
            const double target = radius * rng.uniform();  // interior start
            if (nd > 0.0) {
                for (double& v : delta) v *= target / nd;
            } else {
                std::fill(delta.begin(), delta.end(), 0.0);
            }
        }
        for (std::size_t s = 0; s < steps; ++s) {
            Vector pt(dim);
            for (std::size_t d = 0; d < dim; ++d) pt[d] = x[d] + delta[d];
            std::vector<DenseMatrix> cache;
            const Vector z = logits_at(pt, &cache);
            if (misclassified(z)) return true;

            // Ascent direction: gradient of softmax cross-entropy w.r.t. input.
            const Vector p = softmax(z);
            Vector g_logits(classes);
            for (std::size_t c = 0; c < classes; ++c) {
                g_logits[c] = p[c] - (c == truth ? 1.0 : 0.0);
            }
            const DenseMatrix g_in = m.input_gradient(cache, column(g_logits));
            double gn2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) gn2 += g_in(d, 0) * g_in(d, 0);
            const double gn = std::sqrt(gn2);
            if (gn == 0.0) break;  // flat point: this restart cannot move

            double nd2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                delta[d] += step_size * g_in(d, 0) / gn;
                nd2 += delta[d] * delta[d];
            }
            const double nd = std::sqrt(nd2);
            if (nd > radius) {
                for (double& v : delta) v *= radius / nd;
            }
        }
        Vector pt(dim);
        for (std::size_t d = 0; d < dim; ++d) pt[d] = x[d] + delta[d];
        if (misclassified(logits_at(pt, nullptr))) return true;
    }
    return false;
}

}  // namespace lipforge::verify
