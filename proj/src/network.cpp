#include "gradeshi/network.hpp"

#include <algorithm>
#include <sstream>

namespace gradeshi {

template <typename T>
Network<T>::Network(Shape example_shape, std::size_t class_count)
    : example_shape_(example_shape), class_count_(class_count) {}

template <typename T>
int Network<T>::add(std::string name, std::unique_ptr<Layer<T>> layer, int unit, std::vector<int> inputs) {
    if (!layer) {
        throw ParameterError("cannot add a null layer");
    }
    if (find(name)) {
        throw ParameterError("duplicate node name '" + name + "'");
    }
    const int index = static_cast<int>(nodes_.size());
    if (inputs.empty()) {
        inputs.push_back(index - 1);
    }
    if (inputs.size() != layer->arity()) {
        throw ShapeError(name + ": " + std::string(to_string(layer->kind())) + " takes " +
                         std::to_string(layer->arity()) + " inputs");
    }
    for (int in : inputs) {
        if (in < kInput || in >= index) {
            throw ShapeError(name + ": input " + std::to_string(in) + " does not precede node " +
                             std::to_string(index));
        }
    }
    nodes_.push_back(Node<T>{std::move(name), std::move(layer), std::move(inputs), unit});
    grads_.emplace_back();
    return index;
}

template <typename T>
std::optional<std::size_t> Network<T>::find(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

template <typename T>
std::vector<std::pair<std::size_t, std::size_t>> Network<T>::skip_edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].layer->kind() == LayerKind::residual_add) {
            const int skip = nodes_[i].inputs.at(1);
            edges.emplace_back(skip < 0 ? 0 : static_cast<std::size_t>(skip), i);
        }
    }
    return edges;
}

template <typename T>
std::size_t Network<T>::unit_count() const {
    int top = -1;
    for (const auto& n : nodes_) {
        top = std::max(top, n.unit);
    }
    return static_cast<std::size_t>(top + 1);
}

template <typename T>
std::vector<Shape> Network<T>::node_shapes(std::size_t batch) const {
    Shape input = example_shape_;
    input.extents[0] = batch;
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        std::vector<Shape> in;
        for (int i : n.inputs) {
            in.push_back(i == kInput ? input : shapes[static_cast<std::size_t>(i)]);
        }
        Shape out;
        try {
            out = n.layer->output_shape(std::span<const Shape>(in));
        } catch (const ShapeError& e) {
            throw ShapeError(n.name + ": " + e.what());
        }
        for (std::size_t e : out.extents) {
            if (e == 0) {
                throw ShapeError(n.name + " produces empty shape " + out.str());
            }
        }
        shapes.push_back(out);
    }
    return shapes;
}

template <typename T>
void Network<T>::validate() const {
    if (nodes_.empty()) {
        throw ShapeError("network has no layers");
    }
    if (nodes_.back().layer->kind() != LayerKind::softmax) {
        throw ShapeError("final layer must be softmax, got " + std::string(to_string(nodes_.back().layer->kind())));
    }
    for (auto [src, dst] : skip_edges()) {
        if (src >= dst) {
            throw ShapeError("skip edge " + std::to_string(src) + " -> " + std::to_string(dst) + " points backwards");
        }
    }
    const auto shapes = node_shapes(1);
    if (shapes.back() != Shape::matrix(1, class_count_)) {
        throw ShapeError("network output " + shapes.back().str() + " is not (B, " + std::to_string(class_count_) +
                         ")");
    }
}

template <typename T>
BasicTensor<T> Network<T>::forward(const TensorT& x, Mode mode) {
    return std::move(run_forward(x, mode, false).back());
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::forward_trace(const TensorT& x, Mode mode) {
    return run_forward(x, mode, true);
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::run_forward(const TensorT& x, Mode mode, bool keep_all) {
    if (nodes_.empty()) {
        throw StateError("forward on an empty network");
    }
    if (x.shape().height() != example_shape_.height() || x.shape().width() != example_shape_.width() ||
        x.shape().channels() != example_shape_.channels()) {
        throw ShapeError("network expects (B," + std::to_string(example_shape_.height()) + "," +
                         std::to_string(example_shape_.width()) + "," + std::to_string(example_shape_.channels()) +
                         "), got " + x.shape().str());
    }
    // Release each activation once its last consumer has run.
    std::vector<std::size_t> last_use(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (int in : nodes_[i].inputs) {
            if (in >= 0) {
                last_use[static_cast<std::size_t>(in)] = i;
            }
        }
    }
    std::vector<TensorT> outputs(nodes_.size());
    std::vector<const TensorT*> args;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        auto& n = nodes_[i];
        args.clear();
        for (int in : n.inputs) {
            args.push_back(in == kInput ? &x : &outputs[static_cast<std::size_t>(in)]);
        }
        outputs[i] = n.layer->forward(std::span<const TensorT* const>(args), mode);
        for (int in : n.inputs) {
            if (!keep_all && in >= 0 && last_use[static_cast<std::size_t>(in)] == i) {
                outputs[static_cast<std::size_t>(in)] = TensorT();
            }
        }
    }
    return outputs;
}

template <typename T>
BasicTensor<T> Network<T>::backward(const TensorT& grad_output, bool want_input_grad) {
    if (nodes_.empty()) {
        throw StateError("backward on an empty network");
    }
    return backward_from(nodes_.size() - 1, grad_output, want_input_grad);
}

template <typename T>
BasicTensor<T> Network<T>::backward_from_logits(const TensorT& grad_logits, bool want_input_grad) {
    if (nodes_.empty() || nodes_.back().layer->kind() != LayerKind::softmax) {
        throw StateError("logit backward needs a network ending in softmax");
    }
    const int logits = nodes_.back().inputs.at(0);
    for (auto& g : grads_) {
        g.reset();
    }
    if (logits == kInput) {
        return grad_logits;
    }
    return backward_from(static_cast<std::size_t>(logits), grad_logits, want_input_grad);
}

template <typename T>
BasicTensor<T> Network<T>::backward_from(std::size_t start, TensorT grad, bool want_input_grad) {
    for (auto& g : grads_) {
        g.reset();
    }
    const std::size_t n = nodes_.size();
    // needs[i]: some node feeding (transitively) into i has trainable
    // parameters, so the gradient w.r.t. i's output must be propagated.
    std::vector<bool> needs(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& layer = *nodes_[i].layer;
        bool need = layer.trainable() && !layer.params().empty();
        for (int in : nodes_[i].inputs) {
            need = need || (in == kInput ? want_input_grad : needs[static_cast<std::size_t>(in)]);
        }
        needs[i] = need;
    }

    std::vector<std::optional<TensorT>> out_grad(n);
    out_grad[start] = std::move(grad);
    TensorT input_grad;
    for (std::size_t idx = start + 1; idx-- > 0;) {
        if (!out_grad[idx]) {
            continue;
        }
        auto& node = nodes_[idx];
        auto& layer = *node.layer;
        bool want_inputs = false;
        for (int in : node.inputs) {
            want_inputs = want_inputs || (in == kInput ? want_input_grad : needs[static_cast<std::size_t>(in)]);
        }
        const bool want_params = layer.trainable() && !layer.params().empty();
        if (!want_inputs && !want_params) {
            out_grad[idx].reset();
            continue;
        }
        LayerGrads<T> g = layer.backward(*out_grad[idx], want_inputs, want_params);
        out_grad[idx].reset();
        if (want_params) {
            grads_[idx] = std::move(g.params);
        }
        if (!want_inputs) {
            continue;
        }
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const int in = node.inputs[k];
            TensorT& gk = g.inputs.at(k);
            if (in == kInput) {
                input_grad = input_grad.empty() ? std::move(gk) : gradeshi::add(input_grad, gk);
                continue;
            }
            auto& slot = out_grad[static_cast<std::size_t>(in)];
            if (!needs[static_cast<std::size_t>(in)]) {
                continue;
            }
            if (slot) {
                *slot = gradeshi::add(*slot, gk);
            } else {
                slot = std::move(gk);
            }
        }
    }
    return input_grad;
}

template <typename T>
const ParamMap<T>* Network<T>::param_grads(std::size_t i) const {
    const auto& g = grads_.at(i);
    return g ? &*g : nullptr;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes_) {
        total += n.layer->parameter_count();
    }
    return total;
}

template <typename T>
std::map<std::string, BasicTensor<T>> Network<T>::state() const {
    std::map<std::string, TensorT> out;
    for (const auto& n : nodes_) {
        for (const auto& [k, v] : n.layer->params()) {
            out.emplace(n.name + "." + k, v);
        }
        for (const auto& [k, v] : n.layer->buffers()) {
            out.emplace(n.name + "." + k, v);
        }
    }
    return out;
}

template <typename T>
std::map<std::string, BasicTensor<T>> Network<T>::trainable_state() const {
    std::map<std::string, TensorT> out;
    for (const auto& n : nodes_) {
        if (!n.layer->trainable()) {
            continue;
        }
        for (const auto& [k, v] : n.layer->params()) {
            out.emplace(n.name + "." + k, v);
        }
    }
    return out;
}

template <typename T>
void Network<T>::load_state(const std::map<std::string, TensorT>& state) {
    std::size_t used = 0;
    for (auto& n : nodes_) {
        for (auto* map : {&n.layer->params(), &n.layer->buffers()}) {
            for (auto& [k, v] : *map) {
                const auto key = n.name + "." + k;
                auto it = state.find(key);
                if (it == state.end()) {
                    throw IntegrityError("state is missing tensor '" + key + "'");
                }
                if (it->second.shape() != v.shape()) {
                    throw IntegrityError("tensor '" + key + "' has shape " + it->second.shape().str() + ", expected " +
                                         v.shape().str());
                }
                v = it->second;
                ++used;
            }
        }
    }
    if (used != state.size()) {
        throw IntegrityError("state holds " + std::to_string(state.size() - used) + " tensors the network lacks");
    }
}

template <typename T>
std::string Network<T>::summary() const {
    std::ostringstream os;
    std::vector<Shape> shapes;
    try {
        shapes = node_shapes(1);
    } catch (const Error&) {
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        os << i << '\t' << n.name << '\t' << n.layer->describe();
        if (i < shapes.size()) {
            os << '\t' << shapes[i].str();
        }
        os << '\t' << (n.layer->trainable() ? "trainable" : "frozen") << '\n';
    }
    os << "parameters: " << parameter_count() << '\n';
    return os.str();
}

template class Network<float>;
template class Network<double>;

} // namespace gradeshi
