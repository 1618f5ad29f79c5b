#pragma once

#include <cstdint>
#include <vector>

#include "lipforge/matrix.hpp"
#include "lipforge/model.hpp"

namespace lipforge::verify {

// Network-level Lipschitz accounting. Every layer form in this library is
// certified 1-Lipschitz at construction, so layer_bounds are all 1 and the
// network bound is their exact product. The factory asserts
// empirical_max_ratio <= network_bound * (1 + 1e-6) (CertificateError
// otherwise) so an instance is evidence, not just a record.
struct LipschitzReport {
    Vector layer_bounds;
    double network_bound = 1.0;
    double empirical_max_ratio = 0.0;
    std::size_t pairs_sampled = 0;
};

LipschitzReport lipschitz_report(const model::Model& m, std::size_t pairs,
                                 std::uint64_t rng_seed);

// Sampled lower bound on the true Lipschitz constant: max over `pairs`
// random (x, y = x + delta) of ||f(x)-f(y)|| / ||x-y||, with x standard
// Gaussian and delta Gaussian at scales {1e-3, 1e-1, 1} round-robin by pair
// index. Deterministic for a given seed regardless of thread count.
double empirical_lipschitz(const model::Model& m, std::size_t pairs, std::uint64_t rng_seed);

// radius = max(0, logit_true - max_{j != true} logit_j) / (sqrt(2) * lip_bound).
// Requires lip_bound > 0 (DomainError) and at least two logits.
double certified_radius(const Vector& logits, std::size_t true_label, double lip_bound);

struct CertSample {
    int true_label = 0;
    int predicted_label = 0;
    double margin = 0.0;            // logit_true - best other logit
    double certified_radius = 0.0;  // 0 when misclassified
};

// Invariants (asserted by certify_dataset): certified_accuracy is monotone
// non-increasing along increasing radii, and never exceeds natural accuracy.
struct CertReport {
    std::vector<CertSample> per_sample;
    Vector radii_grid;
    Vector certified_accuracy;  // aligned with radii_grid
    double natural_accuracy = 0.0;
};

// Runs the model over every sample (columns of inputs), computes margins and
// certified radii with the network bound from the model's certificates, and
// tabulates certified accuracy: the fraction with predicted == true and
// certified_radius > radius. Throws CertificateError when a layer has no
// refreshed scaling and DimensionError on label/sample mismatch.
CertReport certify_dataset(const model::Model& m, const DenseMatrix& inputs,
                           const std::vector<int>& labels, const Vector& radii);

// Projected gradient ascent on softmax cross-entropy within the l2 ball of
// `radius` around x. `restarts` tries: the first starts at the unperturbed
// point, later ones at random interior points. Step size 2.5 * radius / steps.
// Returns true iff some iterate misclassifies x's true label.
bool pgd_attack(const model::Model& m, const Vector& x, int true_label, double radius,
                std::size_t steps, std::uint64_t rng_seed, std::size_t restarts = 3);

}  // namespace lipforge::verify
