#include "lipforge/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <utility>

#include "lipforge/io.hpp"

namespace lipforge::model {

namespace {

using nlohmann::json;

Vector read_vector_file(const std::filesystem::path& path, const char* what) {
    const DenseMatrix m = read_matrix(path);
    if (m.rows() != 1 && m.cols() != 1) {
        throw ParseError(std::string(what) + " file " + path.string() +
                         " must be a single row or column, got " + std::to_string(m.rows()) +
                         "x" + std::to_string(m.cols()));
    }
    return Vector(m.data(), m.data() + m.size());
}

std::string layer_prefix(std::size_t index) {
    return "layer " + std::to_string(index) + ": ";
}

template <typename Fn>
auto with_layer_context(std::size_t index, Fn&& fn) {
    try {
        return fn();
    } catch (const ParseError& e) {
        throw ParseError(layer_prefix(index) + e.what());
    } catch (const FeasibilityError& e) {
        throw FeasibilityError(layer_prefix(index) + e.what());
    } catch (const LMIInfeasibleError& e) {
        throw LMIInfeasibleError(layer_prefix(index) + e.what());
    } catch (const CertificateError& e) {
        throw CertificateError(layer_prefix(index) + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(layer_prefix(index) + e.what());
    } catch (const DomainError& e) {
        throw DomainError(layer_prefix(index) + e.what());
    } catch (const ZeroColumnError& e) {
        throw ZeroColumnError(layer_prefix(index) + e.what());
    } catch (const ZeroWeightError& e) {
        throw ZeroWeightError(layer_prefix(index) + e.what());
    } catch (const ScaleError& e) {
        throw ScaleError(layer_prefix(index) + e.what());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(layer_prefix(index) + e.what(), e.last_estimate);
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& rel) {
    std::filesystem::path p(rel);
    return p.is_relative() ? base / p : p;
}

Layer parse_layer(const json& jl, const std::filesystem::path& base) {
    try {
        if (!jl.is_object()) throw ParseError("layer entry must be a JSON object");
        Layer layer;
        layer.form = form_from_name(jl.at("form").get<std::string>());
        layer.t_method = t_method_from_name(jl.at("t_method").get<std::string>());

        const json& jact = jl.at("activation");
        if (layer.form == LayerForm::Linear) {
            if (!jact.is_null()) {
                throw ParseError("linear layers take no activation (use null)");
            }
            layer.has_activation = false;
        } else {
            if (!jact.is_string()) {
                throw ParseError("activation must be one of relu/tanh/sigmoid");
            }
            layer.act = layers::activation_from_name(jact.get<std::string>());
            layer.has_activation = true;
        }

        const auto weights_path = resolve(base, jl.at("weights").get<std::string>());
        if (layer.form == LayerForm::Conv) {
            const auto& ks = jl.at("kernel_shape");
            const auto& is = jl.at("in_shape");
            if (!ks.is_array() || ks.size() != 4 || !is.is_array() || is.size() != 3) {
                throw ParseError("conv layers need kernel_shape [oc,ic,kh,kw] and in_shape [c,h,w]");
            }
            layer.kernel.oc = ks[0].get<std::size_t>();
            layer.kernel.ic = ks[1].get<std::size_t>();
            layer.kernel.kh = ks[2].get<std::size_t>();
            layer.kernel.kw = ks[3].get<std::size_t>();
            layer.in_shape.c = is[0].get<std::size_t>();
            layer.in_shape.h = is[1].get<std::size_t>();
            layer.in_shape.w = is[2].get<std::size_t>();
            layer.padding = jl.value("padding", std::size_t{0});
            layer.stride = jl.value("stride", std::size_t{1});
            if (layer.kernel.oc == 0 || layer.kernel.ic == 0 || layer.kernel.kh == 0 ||
                layer.kernel.kw == 0 || layer.in_shape.total() == 0) {
                throw ParseError("conv kernel_shape/in_shape entries must be positive");
            }
            const DenseMatrix stored = read_matrix(weights_path);
            const std::size_t per_oc = layer.kernel.ic * layer.kernel.kh * layer.kernel.kw;
            if (stored.rows() != layer.kernel.oc || stored.cols() != per_oc) {
                throw ParseError("conv weights file must be " + std::to_string(layer.kernel.oc) +
                                 "x" + std::to_string(per_oc) + " to match kernel_shape");
            }
            layer.kernel.data.assign(stored.data(), stored.data() + stored.size());
            layer.ws.w = transpose(layers::materialize_conv_matrix(layer.kernel, layer.in_shape,
                                                                   layer.padding, layer.stride));
        } else {
            layer.ws.w = read_matrix(weights_path);
        }

        layer.ws.b = read_vector_file(resolve(base, jl.at("bias").get<std::string>()), "bias");
        const std::size_t expected_b =
            layer.form == LayerForm::Linear ? layer.ws.w.rows() : layer.ws.w.cols();
        if (layer.ws.b.size() != expected_b) {
            throw DimensionError("bias length " + std::to_string(layer.ws.b.size()) +
                                 " does not match the layer (expected " +
                                 std::to_string(expected_b) + ")");
        }

        const json& jq = jl.at("q");
        if (layer.t_method == TMethod::SLL) {
            if (jq.is_null()) {
                layer.q.assign(layer.ws.w.cols(), 1.0);
            } else {
                layer.q = read_vector_file(resolve(base, jq.get<std::string>()), "q");
                if (layer.q.size() != layer.ws.w.cols()) {
                    throw DimensionError("q length " + std::to_string(layer.q.size()) +
                                         " does not match W columns " +
                                         std::to_string(layer.ws.w.cols()));
                }
            }
        } else if (!jq.is_null()) {
            throw ParseError("q is only meaningful with t_method sll (use null)");
        }

        if (jl.contains("t") && !jl["t"].is_null()) {
            layer.explicit_t = read_vector_file(resolve(base, jl["t"].get<std::string>()), "t");
        }
        return layer;
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest layer entry: ") + e.what());
    }
}

json layer_to_json(const Layer& layer, const std::filesystem::path& dir, std::size_t index) {
    const std::string stem = "layer" + std::to_string(index);
    json jl;
    jl["form"] = form_name(layer.form);
    jl["t_method"] = t_method_name(layer.t_method);
    jl["activation"] = layer.has_activation ? json(layers::activation_name(layer.act)) : json();

    if (layer.form == LayerForm::Conv) {
        const std::size_t per_oc = layer.kernel.ic * layer.kernel.kh * layer.kernel.kw;
        DenseMatrix stored(layer.kernel.oc, per_oc, std::vector<double>(layer.kernel.data));
        const std::string wname = stem + "_kernel.mtx.txt";
        write_matrix(dir / wname, stored);
        jl["weights"] = wname;
        jl["kernel_shape"] = {layer.kernel.oc, layer.kernel.ic, layer.kernel.kh, layer.kernel.kw};
        jl["in_shape"] = {layer.in_shape.c, layer.in_shape.h, layer.in_shape.w};
        jl["padding"] = layer.padding;
        jl["stride"] = layer.stride;
    } else {
        const std::string wname = stem + "_w.mtx.txt";
        write_matrix(dir / wname, layer.ws.w);
        jl["weights"] = wname;
    }

    const std::string bname = stem + "_b.mtx.txt";
    write_matrix(dir / bname, DenseMatrix(layer.ws.b.size(), 1, std::vector<double>(layer.ws.b)));
    jl["bias"] = bname;

    if (layer.t_method == TMethod::SLL && !layer.q.empty()) {
        const std::string qname = stem + "_q.mtx.txt";
        write_matrix(dir / qname, DenseMatrix(layer.q.size(), 1, std::vector<double>(layer.q)));
        jl["q"] = qname;
    } else {
        jl["q"] = json();
    }

    if (!layer.explicit_t.empty()) {
        const std::string tname = stem + "_t.mtx.txt";
        write_matrix(dir / tname,
                     DenseMatrix(layer.explicit_t.size(), 1, std::vector<double>(layer.explicit_t)));
        jl["t"] = tname;
    }
    return jl;
}

}  // namespace

const char* form_name(LayerForm f) {
    switch (f) {
        case LayerForm::Linear: return "linear";
        case LayerForm::Residual: return "residual";
        case LayerForm::General: return "general";
        case LayerForm::Conv: return "conv";
    }
    return "?";
}

LayerForm form_from_name(const std::string& name) {
    if (name == "linear") return LayerForm::Linear;
    if (name == "residual") return LayerForm::Residual;
    if (name == "general") return LayerForm::General;
    if (name == "conv") return LayerForm::Conv;
    throw ParseError("unknown layer form '" + name + "'");
}

const char* t_method_name(TMethod m) {
    switch (m) {
        case TMethod::SN: return "sn";
        case TMethod::AOL: return "aol";
        case TMethod::SLL: return "sll";
    }
    return "?";
}

TMethod t_method_from_name(const std::string& name) {
    if (name == "sn") return TMethod::SN;
    if (name == "aol") return TMethod::AOL;
    if (name == "sll") return TMethod::SLL;
    throw ParseError("unknown t_method '" + name + "'");
}

std::size_t Layer::in_dim() const {
    switch (form) {
        case LayerForm::Linear: return ws.w.cols();
        case LayerForm::Residual: return ws.w.rows();
        case LayerForm::General: return ws.w.rows();  // H is built as the identity
        case LayerForm::Conv: return in_shape.total();
    }
    return 0;
}

std::size_t Layer::out_dim() const {
    switch (form) {
        case LayerForm::Linear: return ws.w.rows();
        case LayerForm::Residual: return ws.w.rows();
        case LayerForm::General: return ws.w.rows();
        case LayerForm::Conv: return in_shape.total();
    }
    return 0;
}

void Layer::refresh_scaling(MarginPolicy policy) {
    if (!explicit_t.empty()) {
        if (explicit_t.size() != ws.w.cols()) {
            throw DimensionError("pinned T length " + std::to_string(explicit_t.size()) +
                                 " does not match W columns " + std::to_string(ws.w.cols()));
        }
        ScalingVector sv;
        sv.diag = explicit_t;
        sv.method = t_method == TMethod::SN    ? scaling::Method::SN
                    : t_method == TMethod::AOL ? scaling::Method::AOL
                                               : scaling::Method::SLL;
        sv.feasibility_margin = scaling::check_feasible(ws.w, sv);
        sv.margin_scale = std::max(1.0, frobenius_norm(gram(ws.w)));
        for (double v : sv.diag) sv.margin_scale = std::max(sv.margin_scale, std::fabs(v));
        if (!sv.feasible()) {
            throw FeasibilityError("pinned T is infeasible for W (margin " +
                                   std::to_string(sv.feasibility_margin) + ")");
        }
        t = std::move(sv);
    } else {
        switch (t_method) {
            case TMethod::SN: t = scaling::t_sn(ws.w, policy); break;
            case TMethod::AOL: t = scaling::t_aol(ws.w, policy); break;
            case TMethod::SLL: t = scaling::t_sll(ws.w, scaling::QVector(q), policy); break;
        }
    }
    if (form == LayerForm::General) {
        gspec = layers::general_from_residual(ws, t);
    }
}

DenseMatrix Layer::forward(const DenseMatrix& x) const {
    if (t.diag.empty()) {
        throw CertificateError("layer has no scaling certificate; call refresh_scaling first");
    }
    switch (form) {
        case LayerForm::Linear: return layers::linear_forward(ws, t, x);
        case LayerForm::Residual:
        case LayerForm::Conv: return layers::residual_forward(ws, t, act, x);
        case LayerForm::General: return layers::general_forward(gspec, act, x);
    }
    throw Error("unreachable layer form");
}

DenseMatrix Layer::input_backward(const DenseMatrix& x, const DenseMatrix& upstream) const {
    if (t.diag.empty()) {
        throw CertificateError("layer has no scaling certificate; call refresh_scaling first");
    }
    if (form == LayerForm::Linear) {
        Vector s(t.diag.size());
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::sqrt(t.diag[j]);
        return matmul(transpose(layers::col_div(ws.w, s)), upstream);
    }
    if (form == LayerForm::General) {
        const DenseMatrix z =
            layers::add_bias_rows(matmul(transpose(gspec.w), x), gspec.b);
        const DenseMatrix sp = layers::act_deriv(act, z);
        DenseMatrix g_z = matmul(transpose(gspec.g_mat), upstream);
        for (std::size_t i = 0; i < g_z.size(); ++i) g_z.data()[i] *= sp.data()[i];
        return add(matmul(transpose(gspec.h_mat), upstream), matmul(gspec.w, g_z));
    }
    // Residual and conv share h(x) = x - 2 W T^{-1} sigma(W^T x + b).
    const DenseMatrix z = layers::add_bias_rows(matmul(transpose(ws.w), x), ws.b);
    const DenseMatrix sp = layers::act_deriv(act, z);
    DenseMatrix g_z = scale(matmul(transpose(ws.w), upstream), -2.0);
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) g_z(i, j) = sp(i, j) * (g_z(i, j) / t.diag[i]);
    return add(upstream, matmul(ws.w, g_z));
}

std::size_t Model::input_dim() const {
    if (layers.empty()) throw DimensionError("model has no layers");
    return layers.front().in_dim();
}

std::size_t Model::output_dim() const {
    if (layers.empty()) throw DimensionError("model has no layers");
    return layers.back().out_dim();
}

void Model::refresh_scalings(MarginPolicy policy) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        with_layer_context(k, [&] { layers[k].refresh_scaling(policy); });
        if (k + 1 < layers.size() && layers[k].out_dim() != layers[k + 1].in_dim()) {
            throw DimensionError(layer_prefix(k + 1) + "expects input dimension " +
                                 std::to_string(layers[k + 1].in_dim()) +
                                 " but the previous layer outputs " +
                                 std::to_string(layers[k].out_dim()));
        }
    }
}

DenseMatrix Model::forward(const DenseMatrix& x) const {
    if (layers.empty()) throw DimensionError("model has no layers");
    DenseMatrix cur = x;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        cur = with_layer_context(k, [&] { return layers[k].forward(cur); });
    }
    return cur;
}

DenseMatrix Model::forward_cached(const DenseMatrix& x,
                                  std::vector<DenseMatrix>* inputs) const {
    if (layers.empty()) throw DimensionError("model has no layers");
    inputs->clear();
    inputs->reserve(layers.size());
    DenseMatrix cur = x;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        inputs->push_back(cur);
        cur = with_layer_context(k, [&] { return layers[k].forward(cur); });
    }
    return cur;
}

DenseMatrix Model::input_gradient(const std::vector<DenseMatrix>& inputs,
                                  const DenseMatrix& logit_grad) const {
    if (inputs.size() != layers.size()) {
        throw DimensionError("input cache length does not match layer count");
    }
    DenseMatrix grad = logit_grad;
    for (std::size_t k = layers.size(); k-- > 0;) {
        grad = with_layer_context(k, [&] { return layers[k].input_backward(inputs[k], grad); });
    }
    return grad;
}

Model load_model(const std::filesystem::path& manifest_path, MarginPolicy policy) {
    std::ifstream in(manifest_path);
    if (!in) throw ParseError("cannot open manifest " + manifest_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
        throw ParseError("manifest must be a JSON object with a 'layers' array");
    }
    const auto base = manifest_path.parent_path();
    Model m;
    const json& arr = doc["layers"];
    for (std::size_t idx = 0; idx < arr.size(); ++idx) {
        m.layers.push_back(with_layer_context(idx, [&] { return parse_layer(arr[idx], base); }));
    }
    if (m.layers.empty()) throw ParseError("manifest lists no layers");
    m.refresh_scalings(policy);
    return m;
}

void save_model(const Model& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json doc;
    doc["layers"] = json::array();
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        doc["layers"].push_back(layer_to_json(m.layers[k], dir, k));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << doc.dump(2) << "\n";
}

}  // namespace lipforge::model
