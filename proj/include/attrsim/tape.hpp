#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attrsim/tensor.hpp"

namespace attrsim {

using NodeId = int;

enum class OpKind {
    Input,
    Constant,
    MatMul,
    Add,
    Mul,
    Scale,
    Softmax,
    LayerNorm,
    Gelu,
    Gather,
    ConcatRows,
    ConcatCols,
    Slice,
    CrossEntropy,
    Inject,
};

const char* op_name(OpKind k);

// One recorded operation. Forward values and backward buffers live here so a
// tape can be re-evaluated with fresh bindings without reallocating.
struct Node {
    OpKind op = OpKind::Input;
    std::vector<NodeId> inputs;
    std::vector<int> shape;
    std::string label;

    // op attributes
    double scale = 1.0;
    bool trans_a = false, trans_b = false;
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0;  // slice bounds on the 2-D view

    // runtime state
    Tensor value;
    Tensor grad;
    const Tensor* bound = nullptr;  // external storage for Input / Inject override
    bool overridden = false;
};

// Reverse-mode tape over a fixed graph. Build once; bind leaf tensors and
// call forward()/backward() repeatedly. Single-threaded per tape; distinct
// tapes may share read-only bound tensors across threads.
class Tape {
public:
    NodeId input(std::vector<int> shape, std::string label);
    NodeId constant(Tensor value, std::string label = "");

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId softmax(NodeId a);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
    NodeId gelu(NodeId a);
    NodeId gather(NodeId table, NodeId ids);
    NodeId concat_rows(const std::vector<NodeId>& parts, std::vector<int> shape_override = {});
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId slice(NodeId a, int r0, int r1, int c0, int c1);
    NodeId cross_entropy(NodeId logits, NodeId target_dist);
    NodeId inject(NodeId a);

    void set_output(NodeId id);
    NodeId output() const { return output_; }

    // Leaf bindings. bind() keeps a pointer (caller keeps the tensor alive);
    // binding an Inject node turns it into an override leaf until cleared.
    void bind(NodeId id, const Tensor* t);
    void clear_override(NodeId id);

    void mark(NodeId id);
    void clear_marks();
    const std::vector<NodeId>& marked() const { return marked_; }

    const Tensor& forward();
    void backward(const Tensor& seed);

    const Tensor& value(NodeId id) const;
    const Tensor& grad(NodeId id) const;

    int node_count() const { return static_cast<int>(nodes_.size()); }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    static constexpr double kMaskNegative = -1e30;   // finite stand-in for -inf logits
    static constexpr double kLayerNormEps = 1e-5;

private:
    NodeId push(Node n);
    Node& at(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    const Tensor& val(NodeId id) const;
    void check_finite(const Node& n, const Tensor& t) const;
    [[noreturn]] void fail(const Node& n, const std::string& msg) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> marked_;
    NodeId output_ = -1;
    bool forward_ran_ = false;
};

// Compares backward() against central finite differences for a scalar-valued
// graph built over a single input. Returns the max relative error with
// denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<NodeId(Tape&, NodeId)>& build,
                  const Tensor& point, double step);

}  // namespace attrsim
