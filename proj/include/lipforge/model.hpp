#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lipforge/layers.hpp"
#include "lipforge/matrix.hpp"
#include "lipforge/scaling.hpp"

namespace lipforge::model {

using layers::ActivationKind;
using layers::ConvKernel;
using layers::ConvShape;
using layers::GeneralLayerSpec;
using layers::WeightSpec;
using scaling::MarginPolicy;
using scaling::ScalingVector;

enum class LayerForm { Linear, Residual, General, Conv };

const char* form_name(LayerForm f);
LayerForm form_from_name(const std::string& name);

enum class TMethod { SN, AOL, SLL };

const char* t_method_name(TMethod m);
TMethod t_method_from_name(const std::string& name);

// One network layer: weights, the recipe for its scaling T, and caches built
// by refresh_scaling. Residual/conv layers map R^m -> R^m, linear layers
// R^n -> R^m, general layers R^m -> R^p.
struct Layer {
    LayerForm form = LayerForm::Residual;
    WeightSpec ws;
    Vector q;  // non-empty iff t_method == SLL
    ActivationKind act = ActivationKind::ReLU;
    bool has_activation = true;  // false for the linear form
    TMethod t_method = TMethod::AOL;

    // When non-empty, this diagonal is used verbatim instead of recomputing T
    // from t_method; its feasibility is established eigen-directly. Lets a
    // manifest pin (or corrupt, in tests) the scaling.
    Vector explicit_t;

    // Convolution metadata (form == Conv). ws.w holds the transpose of the
    // materialized convolution matrix so the residual forward applies the
    // convolution as W^T x.
    ConvKernel kernel;
    ConvShape in_shape;
    std::size_t padding = 0;
    std::size_t stride = 1;

    // Caches, valid after refresh_scaling.
    ScalingVector t;
    GeneralLayerSpec gspec;  // form == General only

    std::size_t in_dim() const;
    std::size_t out_dim() const;

    // Recomputes t (and the general-form spec) from the current parameters.
    void refresh_scaling(MarginPolicy policy = MarginPolicy::Auto);

    // Forward with the cached scaling. Throws CertificateError if
    // refresh_scaling has not been called since construction.
    DenseMatrix forward(const DenseMatrix& x) const;

    // Gradient of the loss w.r.t. this layer's input, given the gradient
    // w.r.t. its output. Uses the cached scaling.
    DenseMatrix input_backward(const DenseMatrix& x, const DenseMatrix& upstream) const;
};

struct Model {
    std::vector<Layer> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;

    // Validates the dimension chain (DimensionError on mismatch) and
    // recomputes every layer's scaling. Errors are prefixed "layer <k>: ".
    void refresh_scalings(MarginPolicy policy = MarginPolicy::Auto);

    DenseMatrix forward(const DenseMatrix& x) const;

    // Forward that also records the input seen by each layer (inputs->size()
    // == layers.size(); (*inputs)[k] feeds layers[k]).
    DenseMatrix forward_cached(const DenseMatrix& x, std::vector<DenseMatrix>* inputs) const;

    // Chains input_backward through all layers; `inputs` comes from
    // forward_cached on the same x, `logit_grad` is d loss / d output.
    DenseMatrix input_gradient(const std::vector<DenseMatrix>& inputs,
                               const DenseMatrix& logit_grad) const;
};

// Reads a manifest (JSON with a "layers" array; weight/bias/q paths are
// resolved relative to the manifest's directory), loads every referenced
// matrix, materializes convolutions, validates the dimension chain, and
// refreshes scalings under `policy`. Parse and schema problems raise
// ParseError; infeasible layers raise FeasibilityError naming the layer.
Model load_model(const std::filesystem::path& manifest_path,
                 MarginPolicy policy = MarginPolicy::Auto);

// Writes manifest.json plus one .mtx.txt file per tensor into `dir`
// (created if needed). load_model(save_model(m)) reproduces every parameter
// bit-for-bit thanks to round-trip float formatting.
void save_model(const Model& m, const std::filesystem::path& dir);

}  // namespace lipforge::model
