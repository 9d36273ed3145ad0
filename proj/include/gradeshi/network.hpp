#ifndef GRADESHI_NETWORK_HPP
#define GRADESHI_NETWORK_HPP

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradeshi/arch_config.hpp"
#include "gradeshi/layers.hpp"

namespace gradeshi {

template <typename T>
struct Node {
    std::string name;
    std::unique_ptr<Layer<T>> layer;
    // Producer node indices; Network::kInput refers to the network input.
    std::vector<int> inputs;
    // Trunk block index (0-based) used by block-granularity freezing, or
    // kHead for classifier-head nodes.
    int unit = -1;
};

// Nodes are stored in execution order; every input index precedes its
// consumer, which makes the list a topological order of the graph.
template <typename T>
class Network {
public:
    using TensorT = BasicTensor<T>;
    static constexpr int kInput = -1;
    static constexpr int kHead = -1;

    // example_shape is the per-example input (1, H, W, C).
    Network(Shape example_shape, std::size_t class_count);

    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    // Empty inputs means "the previous node" (or the network input for the
    // first node). Returns the new node's index.
    int add(std::string name, std::unique_ptr<Layer<T>> layer, int unit, std::vector<int> inputs = {});

    std::size_t size() const noexcept { return nodes_.size(); }
    Node<T>& node(std::size_t i) { return nodes_.at(i); }
    const Node<T>& node(std::size_t i) const { return nodes_.at(i); }
    Layer<T>& layer(std::size_t i) { return *nodes_.at(i).layer; }
    const Layer<T>& layer(std::size_t i) const { return *nodes_.at(i).layer; }
    std::optional<std::size_t> find(std::string_view name) const;

    const Shape& example_shape() const noexcept { return example_shape_; }
    std::size_t class_count() const noexcept { return class_count_; }

    // (source, residual-add) pairs for every skip link.
    std::vector<std::pair<std::size_t, std::size_t>> skip_edges() const;
    // Number of trunk blocks (largest unit index + 1).
    std::size_t unit_count() const;

    // Shape audit for a batch of the given size; throws ShapeError if any
    // intermediate extent is zero or an operand pairing is invalid.
    std::vector<Shape> node_shapes(std::size_t batch) const;

    // Graph invariants: inputs precede consumers, last node is a softmax
    // over class_count units, shapes check out.
    void validate() const;

    TensorT forward(const TensorT& x, Mode mode);
    // Same pass, keeping the output of every node (index-aligned with nodes).
    std::vector<TensorT> forward_trace(const TensorT& x, Mode mode);

    // Backward from dL/d(probabilities), through the final softmax.
    TensorT backward(const TensorT& grad_output, bool want_input_grad = false);
    // Backward from dL/d(logits), i.e. the fused softmax-cross-entropy path.
    TensorT backward_from_logits(const TensorT& grad_logits, bool want_input_grad = false);

    // Parameter gradients of node i from the last backward pass; null when
    // the node has no trainable parameters or no gradient reached it.
    const ParamMap<T>* param_grads(std::size_t i) const;

    std::size_t parameter_count() const;

    // Parameters and buffers under "<node>.<name>" keys.
    std::map<std::string, TensorT> state() const;
    std::map<std::string, TensorT> trainable_state() const;
    // Overwrites matching entries; unknown or missing keys are an error.
    void load_state(const std::map<std::string, TensorT>& state);

    const std::optional<ArchConfig>& config() const noexcept { return config_; }
    void set_config(ArchConfig cfg) { config_ = std::move(cfg); }

    std::string summary() const;

private:
    TensorT backward_from(std::size_t start, TensorT grad, bool want_input_grad);
    std::vector<TensorT> run_forward(const TensorT& x, Mode mode, bool keep_all);

    Shape example_shape_;
    std::size_t class_count_;
    std::vector<Node<T>> nodes_;
    std::vector<std::optional<ParamMap<T>>> grads_;
    std::optional<ArchConfig> config_;
};

} // namespace gradeshi

#endif
