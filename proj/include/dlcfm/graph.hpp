#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dlcfm/array.hpp"

namespace dlcfm::ad {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
    Input,
    Param,
    Const,
    Add,
    Mul,
    MatMul,
    Tanh,
    Relu,
    LeakyRelu,
    Softplus,
    Exp,
    Log,
    Square,
    SumAll,
    MeanAll,
    SumCols,
    MeanCols,
    ConcatCols,
    SliceCols,
    Broadcast,
};

const char* op_name(Op op);

// Reverse-mode autodiff over rank-2 dense arrays.
//
// Nodes are created in topological order (inputs must already exist), and
// both forward and backward sweeps walk node ids in a fixed order, so
// repeated evaluation on identical bindings is bit-identical. Gradients
// accumulate with += at fan-out.
//
// The primitive op set is fixed; everything else (subtraction, division,
// abs, clamps, standardization) is composed from it via the helper
// builders below. Division and square roots therefore require positive
// arguments, which every call site guarantees with an epsilon guard.
class Graph {
  public:
    // ---- leaves ----
    NodeId input(const std::string& name, Shape shape);
    NodeId param(const std::string& name, Shape shape);
    NodeId constant(Array value);
    NodeId constant(double scalar_value) { return constant(Array::scalar(scalar_value)); }

    // ---- primitive ops ----
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false);
    NodeId tanh(NodeId a);
    NodeId relu(NodeId a);
    NodeId leaky_relu(NodeId a, double slope);
    NodeId softplus(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId square(NodeId a);
    NodeId sum(NodeId a);       // -> (1 x 1)
    NodeId mean(NodeId a);      // -> (1 x 1)
    NodeId col_sum(NodeId a);   // (n x m) -> (1 x m)
    NodeId col_mean(NodeId a);  // (n x m) -> (1 x m)
    NodeId concat_cols(NodeId a, NodeId b);
    NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end);
    // (1 x 1) -> any, or (1 x m) -> (n x m).
    NodeId broadcast(NodeId a, Shape target);

    // ---- composed helpers ----
    NodeId scale(NodeId a, double s);
    NodeId add_const(NodeId a, double c);
    NodeId neg(NodeId a) { return scale(a, -1.0); }
    NodeId sub(NodeId a, NodeId b) { return add(a, neg(b)); }
    NodeId recip_pos(NodeId a) { return exp(neg(log(a))); }
    NodeId div_pos(NodeId a, NodeId b) { return mul(a, recip_pos(b)); }
    NodeId sqrt_pos(NodeId a) { return exp(scale(log(a), 0.5)); }
    NodeId abs_val(NodeId a) { return add(relu(a), relu(neg(a))); }
    NodeId clamp(NodeId a, double lo, double hi);
    // x @ w + row-broadcast bias.
    NodeId affine(NodeId x, NodeId w, NodeId b);

    // ---- evaluation ----
    void bind(const std::string& name, Array value);
    bool has_leaf(const std::string& name) const { return leaves_.count(name) > 0; }
    const Array& bound(const std::string& name) const;

    const Array& forward(NodeId root);
    void backward(NodeId root);

    const Array& value(NodeId id) const;
    const Array& grad(NodeId id) const;
    // Gradients for every Param leaf (zeros when unreachable from root).
    std::map<std::string, Array> param_grads() const;
    std::vector<std::string> param_names() const;

    // By value: node creation may reallocate the node table, so references
    // into it must not outlive the next push.
    Shape shape(NodeId id) const { return nodes_[check(id)].shape; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Op op;
        NodeId in0 = -1, in1 = -1;
        Shape shape;
        Array value;
        Array grad;
        double aux = 0.0;                  // leaky slope
        std::size_t s0 = 0, s1 = 0;        // slice bounds
        bool ta = false, tb = false;       // matmul transposes
        std::string name;                  // leaf name
        bool has_value = false;
    };

    NodeId push(Node n);
    std::size_t check(NodeId id) const;
    void eval_node(Node& n);
    void backprop_node(Node& n, std::vector<char>& touched);
    void accumulate(NodeId target, const Array& g, std::vector<char>& touched);

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> leaves_;
    NodeId last_forward_root_ = -1;
};

// Max relative error between analytic gradients and central finite
// differences of the scalar at `root`, over the named parameters.
double grad_check(Graph& g, NodeId root, const std::vector<std::string>& params, double epsilon);

}  // namespace dlcfm::ad
