#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lipforge/matrix.hpp"
#include "lipforge/model.hpp"
#include "lipforge/verify.hpp"

namespace lipforge::trainer {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 128;
    double lr = 0.01;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double temperature = 0.25;
    double offset = 2.1213203435596424;  // 3/2 * sqrt(2)
    std::uint64_t seed = 0;
    // Piecewise-linear schedule: linear warmup over the first fraction of
    // steps, then linear decay to zero.
    double warmup_fraction = 0.1;

    // DomainError unless temperature > 0, offset >= 0, 0 <= beta{1,2} < 1,
    // batch_size >= 1, lr >= 0, warmup_fraction in [0, 1].
    void validate() const;
};

struct Dataset {
    DenseMatrix train_inputs;  // features x samples
    std::vector<int> train_labels;
    DenseMatrix test_inputs;
    std::vector<int> test_labels;
    std::size_t num_classes = 2;
};

// Cross-entropy with margin shaping: subtract `offset` from the true-class
// logit, divide by `temperature`, then softmax cross-entropy. Returns the
// loss and its gradient w.r.t. the ORIGINAL logits.
std::pair<double, Vector> margin_ce_loss(const Vector& logits, std::size_t label,
                                         double temperature, double offset);

// Two interleaved half-circles with Gaussian noise, one point per column,
// labels {0, 1}, exactly n/2 points per class, shuffled 80/20 train/test
// split. Deterministic per seed. Requires n even and >= 4.
Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed);

// `depth` residual layers (state dimension input_dim, hidden width `width`)
// followed by a linear head onto num_classes logits. Every layer uses the
// Gershgorin-weighted scaling with q initialized to ones; weights start
// orthogonal-ish (Gram-Schmidt on a Gaussian draw), biases at zero.
model::Model make_sll_net(std::size_t input_dim, std::size_t width, std::size_t depth,
                          std::size_t num_classes, std::uint64_t seed);

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double nat_acc = 0.0;
    double cert_acc = 0.0;  // certified accuracy at radius 0.1
};

struct TrainResult {
    std::vector<EpochStats> history;
};

// Learning-rate multiplier at `step` (1-based) of `total_steps` under the
// warmup-then-decay schedule. Exposed for tests.
double triangular_lr(std::size_t step, std::size_t total_steps, double warmup_fraction);

// Adaptive-moment training of W, b, and log q jointly (q stays positive
// structurally). The model must be a stack of residual layers with one final
// linear head, all using the q-weighted scaling; an optional leading linear
// lift is accepted. Every epoch ends with an eigen-direct feasibility
// re-assertion of each layer (FeasibilityError naming the layer on failure —
// that would indicate a gradient bug, since the scaling is feasible by
// construction for any W, q). `assert_every_step` extends the re-assertion
// to every optimizer step (slower; property tests use it).
TrainResult train(model::Model& m, const Dataset& data, const TrainConfig& cfg,
                  bool assert_every_step = false);

// Natural accuracy plus the certification report on the test split.
std::pair<double, verify::CertReport> evaluate(const model::Model& m, const Dataset& data,
                                               const Vector& radii);

}  // namespace lipforge::trainer
