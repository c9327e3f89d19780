#include "dlcfm/graph.hpp"

#include <cmath>

#include "dlcfm/errors.hpp"

namespace dlcfm::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Mul: return "multiply";
        case Op::MatMul: return "matmul";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::LeakyRelu: return "leaky-relu";
        case Op::Softplus: return "softplus";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::SumAll: return "sum";
        case Op::MeanAll: return "mean";
        case Op::SumCols: return "col-sum";
        case Op::MeanCols: return "col-mean";
        case Op::ConcatCols: return "concat";
        case Op::SliceCols: return "slice";
        case Op::Broadcast: return "broadcast";
    }
    return "?";
}

namespace {

Shape rank2(const Shape& s, const char* who) {
    if (s.size() != 2)
        throw NumericError(std::string(who) + ": expected rank-2 shape, got " + shape_str(s));
    return s;
}

void require_same(const Shape& a, const Shape& b, const char* who) {
    if (a != b)
        throw NumericError(std::string(who) + ": shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

std::size_t Graph::check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw NumericError("invalid node id " + std::to_string(id));
    return static_cast<std::size_t>(id);
}

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    last_forward_root_ = -1;
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(const std::string& name, Shape shape) {
    if (leaves_.count(name)) throw NumericError("duplicate leaf name '" + name + "'");
    Node n;
    n.op = Op::Input;
    n.shape = rank2(shape, "input");
    n.name = name;
    NodeId id = push(std::move(n));
    leaves_[name] = id;
    return id;
}

NodeId Graph::param(const std::string& name, Shape shape) {
    if (leaves_.count(name)) throw NumericError("duplicate leaf name '" + name + "'");
    Node n;
    n.op = Op::Param;
    n.shape = rank2(shape, "param");
    n.name = name;
    NodeId id = push(std::move(n));
    leaves_[name] = id;
    return id;
}

NodeId Graph::constant(Array value) {
    Node n;
    n.op = Op::Const;
    n.shape = rank2(value.shape, "const");
    n.value = std::move(value);
    n.has_value = true;
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    require_same(shape(a), shape(b), "add");
    Node n;
    n.op = Op::Add;
    n.in0 = a;
    n.in1 = b;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    require_same(shape(a), shape(b), "multiply");
    Node n;
    n.op = Op::Mul;
    n.in0 = a;
    n.in1 = b;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool ta, bool tb) {
    if (ta && tb) throw NumericError("matmul: double transpose unsupported");
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    const std::size_t ar = ta ? sa[1] : sa[0];
    const std::size_t ac = ta ? sa[0] : sa[1];
    const std::size_t br = tb ? sb[1] : sb[0];
    const std::size_t bc = tb ? sb[0] : sb[1];
    if (ac != br)
        throw NumericError("matmul: inner dimensions differ: " + shape_str(sa) + (ta ? "^T" : "") +
                           " vs " + shape_str(sb) + (tb ? "^T" : ""));
    Node n;
    n.op = Op::MatMul;
    n.in0 = a;
    n.in1 = b;
    n.ta = ta;
    n.tb = tb;
    n.shape = {ar, bc};
    return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) {
    Node n;
    n.op = Op::Tanh;
    n.in0 = a;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    Node n;
    n.op = Op::Relu;
    n.in0 = a;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::leaky_relu(NodeId a, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.in0 = a;
    n.aux = slope;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::softplus(NodeId a) {
    Node n;
    n.op = Op::Softplus;
    n.in0 = a;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::exp(NodeId a) {
    Node n;
    n.op = Op::Exp;
    n.in0 = a;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
    Node n;
    n.op = Op::Log;
    n.in0 = a;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::square(NodeId a) {
    Node n;
    n.op = Op::Square;
    n.in0 = a;
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
    Node n;
    n.op = Op::SumAll;
    n.in0 = a;
    n.shape = {1, 1};
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    Node n;
    n.op = Op::MeanAll;
    n.in0 = a;
    n.shape = {1, 1};
    return push(std::move(n));
}

NodeId Graph::col_sum(NodeId a) {
    Node n;
    n.op = Op::SumCols;
    n.in0 = a;
    n.shape = {1, shape(a)[1]};
    return push(std::move(n));
}

NodeId Graph::col_mean(NodeId a) {
    Node n;
    n.op = Op::MeanCols;
    n.in0 = a;
    n.shape = {1, shape(a)[1]};
    return push(std::move(n));
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa[0] != sb[0])
        throw NumericError("concat: row counts differ: " + shape_str(sa) + " vs " + shape_str(sb));
    Node n;
    n.op = Op::ConcatCols;
    n.in0 = a;
    n.in1 = b;
    n.shape = {sa[0], sa[1] + sb[1]};
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, std::size_t begin, std::size_t end) {
    const Shape& sa = shape(a);
    if (begin >= end || end > sa[1])
        throw NumericError("slice: bounds [" + std::to_string(begin) + ", " + std::to_string(end) +
                           ") invalid for shape " + shape_str(sa));
    Node n;
    n.op = Op::SliceCols;
    n.in0 = a;
    n.s0 = begin;
    n.s1 = end;
    n.shape = {sa[0], end - begin};
    return push(std::move(n));
}

NodeId Graph::broadcast(NodeId a, Shape target) {
    const Shape& sa = shape(a);
    rank2(target, "broadcast");
    const bool from_scalar = sa[0] == 1 && sa[1] == 1;
    const bool from_row = sa[0] == 1 && sa[1] == target[1];
    if (!from_scalar && !from_row)
        throw NumericError("broadcast: cannot expand " + shape_str(sa) + " to " + shape_str(target));
    if (sa == target) return a;
    Node n;
    n.op = Op::Broadcast;
    n.in0 = a;
    n.shape = std::move(target);
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double s) { return mul(a, broadcast(constant(s), shape(a))); }

NodeId Graph::add_const(NodeId a, double c) { return add(a, broadcast(constant(c), shape(a))); }

NodeId Graph::clamp(NodeId a, double lo, double hi) {
    if (!(lo < hi)) throw NumericError("clamp: lo must be < hi");
    // x - relu(x - hi) + relu(lo - x)
    NodeId over = relu(add_const(a, -hi));
    NodeId under = relu(add_const(neg(a), lo));
    return add(sub(a, over), under);
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
    NodeId y = matmul(x, w);
    return add(y, broadcast(b, shape(y)));
}

void Graph::bind(const std::string& name, Array value) {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw NumericError("bind: no leaf named '" + name + "'");
    Node& n = nodes_[check(it->second)];
    if (value.shape != n.shape)
        throw NumericError("bind '" + name + "': shape mismatch: " + shape_str(value.shape) +
                           " vs declared " + shape_str(n.shape));
    n.value = std::move(value);
    n.has_value = true;
    last_forward_root_ = -1;
}

const Array& Graph::bound(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw NumericError("no leaf named '" + name + "'");
    const Node& n = nodes_[it->second];
    if (!n.has_value) throw NumericError("leaf '" + name + "' not bound");
    return n.value;
}

void Graph::eval_node(Node& n) {
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            if (!n.has_value) throw NumericError(std::string(op_name(n.op)) + " '" + n.name + "' not bound");
            return;
        case Op::Const:
            return;
        default:
            break;
    }

    const Array& a = nodes_[check(n.in0)].value;
    if (n.value.shape != n.shape) n.value = Array(n.shape);
    double* out = n.value.data.data();
    const std::size_t count = n.value.numel();

    switch (n.op) {
        case Op::Add: {
            const Array& b = nodes_[check(n.in1)].value;
            for (std::size_t i = 0; i < count; ++i) out[i] = a.data[i] + b.data[i];
            break;
        }
        case Op::Mul: {
            const Array& b = nodes_[check(n.in1)].value;
            for (std::size_t i = 0; i < count; ++i) out[i] = a.data[i] * b.data[i];
            break;
        }
        case Op::MatMul: {
            const Array& b = nodes_[check(n.in1)].value;
            std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
            matmul_acc(n.value, a, b, n.ta, n.tb);
            break;
        }
        case Op::Tanh:
            for (std::size_t i = 0; i < count; ++i) out[i] = std::tanh(a.data[i]);
            break;
        case Op::Relu:
            for (std::size_t i = 0; i < count; ++i) out[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
            break;
        case Op::LeakyRelu:
            for (std::size_t i = 0; i < count; ++i) out[i] = a.data[i] > 0.0 ? a.data[i] : n.aux * a.data[i];
            break;
        case Op::Softplus:
            for (std::size_t i = 0; i < count; ++i) {
                const double x = a.data[i];
                out[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
            }
            break;
        case Op::Exp:
            for (std::size_t i = 0; i < count; ++i) out[i] = std::exp(a.data[i]);
            break;
        case Op::Log:
            for (std::size_t i = 0; i < count; ++i) out[i] = std::log(a.data[i]);
            break;
        case Op::Square:
            for (std::size_t i = 0; i < count; ++i) out[i] = a.data[i] * a.data[i];
            break;
        case Op::SumAll:
            out[0] = pairwise_sum(a.data);
            break;
        case Op::MeanAll:
            out[0] = pairwise_sum(a.data) / static_cast<double>(a.numel());
            break;
        case Op::SumCols:
        case Op::MeanCols: {
            const std::size_t rows = a.shape[0], cols = a.shape[1];
            std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) out[j] += a.data[i * cols + j];
            if (n.op == Op::MeanCols)
                for (std::size_t j = 0; j < cols; ++j) out[j] /= static_cast<double>(rows);
            break;
        }
        case Op::ConcatCols: {
            const Array& b = nodes_[check(n.in1)].value;
            const std::size_t rows = n.shape[0], ca = a.shape[1], cb = b.shape[1];
            for (std::size_t i = 0; i < rows; ++i) {
                double* row = out + i * (ca + cb);
                for (std::size_t j = 0; j < ca; ++j) row[j] = a.data[i * ca + j];
                for (std::size_t j = 0; j < cb; ++j) row[ca + j] = b.data[i * cb + j];
            }
            break;
        }
        case Op::SliceCols: {
            const std::size_t rows = n.shape[0], w = n.s1 - n.s0, cols = a.shape[1];
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.data[i * cols + n.s0 + j];
            break;
        }
        case Op::Broadcast: {
            const std::size_t rows = n.shape[0], cols = n.shape[1];
            if (a.numel() == 1) {
                std::fill(n.value.data.begin(), n.value.data.end(), a.data[0]);
            } else {
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a.data[j];
            }
            break;
        }
        default:
            throw NumericError("eval: unhandled op");
    }
}

const Array& Graph::forward(NodeId root) {
    const std::size_t r = check(root);
    for (std::size_t i = 0; i <= r; ++i) eval_node(nodes_[i]);
    last_forward_root_ = root;
    return nodes_[r].value;
}

void Graph::accumulate(NodeId target, const Array& g, std::vector<char>& touched) {
    Node& t = nodes_[check(target)];
    if (!touched[target]) {
        if (t.grad.shape != t.shape) t.grad = Array(t.shape);
        std::fill(t.grad.data.begin(), t.grad.data.end(), 0.0);
        touched[target] = 1;
    }
    for (std::size_t i = 0; i < g.data.size(); ++i) t.grad.data[i] += g.data[i];
}

void Graph::backward(NodeId root) {
    const std::size_t r = check(root);
    if (last_forward_root_ < root)
        throw NumericError("backward before forward: call forward on the same root first");
    if (nodes_[r].value.numel() != 1)
        throw NumericError("backward: root must be scalar, got shape " + shape_str(nodes_[r].shape));

    std::vector<char> touched(nodes_.size(), 0);
    accumulate(root, Array::scalar(1.0), touched);

    for (std::int64_t idn = root; idn >= 0; --idn) {
        if (!touched[idn]) continue;
        backprop_node(nodes_[idn], touched);
    }
    // Parameters never reached get zero gradients.
    for (auto& [name, id] : leaves_) {
        Node& n = nodes_[id];
        if (!touched[id]) {
            n.grad = Array(n.shape);
            (void)name;
        }
    }
}

void Graph::backprop_node(Node& n, std::vector<char>& touched) {
    if (n.op == Op::Input || n.op == Op::Param || n.op == Op::Const) return;

    const Array& g = n.grad;
    const Array& a = nodes_[check(n.in0)].value;
    Array ga(a.shape);

    auto push0 = [&] { accumulate(n.in0, ga, touched); };

    switch (n.op) {
        case Op::Add: {
            accumulate(n.in0, g, touched);
            accumulate(n.in1, g, touched);
            return;
        }
        case Op::Mul: {
            const Array& b = nodes_[check(n.in1)].value;
            Array gb(b.shape);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] = g.data[i] * b.data[i];
                gb.data[i] = g.data[i] * a.data[i];
            }
            push0();
            accumulate(n.in1, gb, touched);
            return;
        }
        case Op::MatMul: {
            const Array& b = nodes_[check(n.in1)].value;
            Array gb(b.shape);
            if (!n.ta && !n.tb) {
                matmul_acc(ga, g, b, false, true);   // dA = G B^T
                matmul_acc(gb, a, g, true, false);   // dB = A^T G
            } else if (n.ta) {
                matmul_acc(ga, b, g, false, true);   // C = A^T B: dA = B G^T
                matmul_acc(gb, a, g, false, false);  // dB = A G
            } else {
                matmul_acc(ga, g, b, false, false);  // C = A B^T: dA = G B
                matmul_acc(gb, g, a, true, false);   // dB = G^T A
            }
            push0();
            accumulate(n.in1, gb, touched);
            return;
        }
        case Op::Tanh:
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] = g.data[i] * (1.0 - n.value.data[i] * n.value.data[i]);
            push0();
            return;
        case Op::Relu:
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] = a.data[i] > 0.0 ? g.data[i] : 0.0;
            push0();
            return;
        case Op::LeakyRelu:
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] = g.data[i] * (a.data[i] > 0.0 ? 1.0 : n.aux);
            push0();
            return;
        case Op::Softplus:
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const double x = a.data[i];
                const double sig = x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                ga.data[i] = g.data[i] * sig;
            }
            push0();
            return;
        case Op::Exp:
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = g.data[i] * n.value.data[i];
            push0();
            return;
        case Op::Log:
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = g.data[i] / a.data[i];
            push0();
            return;
        case Op::Square:
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = 2.0 * g.data[i] * a.data[i];
            push0();
            return;
        case Op::SumAll: {
            const double gv = g.data[0];
            for (auto& v : ga.data) v = gv;
            push0();
            return;
        }
        case Op::MeanAll: {
            const double gv = g.data[0] / static_cast<double>(a.numel());
            for (auto& v : ga.data) v = gv;
            push0();
            return;
        }
        case Op::SumCols:
        case Op::MeanCols: {
            const std::size_t rows = a.shape[0], cols = a.shape[1];
            const double inv = n.op == Op::MeanCols ? 1.0 / static_cast<double>(rows) : 1.0;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) ga.data[i * cols + j] = g.data[j] * inv;
            push0();
            return;
        }
        case Op::ConcatCols: {
            const Array& b = nodes_[check(n.in1)].value;
            Array gb(b.shape);
            const std::size_t rows = n.shape[0], ca = a.shape[1], cb = b.shape[1];
            for (std::size_t i = 0; i < rows; ++i) {
                const double* row = g.data.data() + i * (ca + cb);
                for (std::size_t j = 0; j < ca; ++j) ga.data[i * ca + j] = row[j];
                for (std::size_t j = 0; j < cb; ++j) gb.data[i * cb + j] = row[ca + j];
            }
            push0();
            accumulate(n.in1, gb, touched);
            return;
        }
        case Op::SliceCols: {
            const std::size_t rows = n.shape[0], w = n.s1 - n.s0, cols = a.shape[1];
            std::fill(ga.data.begin(), ga.data.end(), 0.0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j) ga.data[i * cols + n.s0 + j] = g.data[i * w + j];
            push0();
            return;
        }
        case Op::Broadcast: {
            const std::size_t rows = n.shape[0], cols = n.shape[1];
            if (a.numel() == 1) {
                ga.data[0] = pairwise_sum(g.data);
            } else {
                std::fill(ga.data.begin(), ga.data.end(), 0.0);
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) ga.data[j] += g.data[i * cols + j];
            }
            push0();
            return;
        }
        default:
            throw NumericError("backward: unhandled op");
    }
}

const Array& Graph::value(NodeId id) const { return nodes_[check(id)].value; }

const Array& Graph::grad(NodeId id) const { return nodes_[check(id)].grad; }

std::map<std::string, Array> Graph::param_grads() const {
    std::map<std::string, Array> out;
    for (const auto& [name, id] : leaves_) {
        const Node& n = nodes_[id];
        if (n.op != Op::Param) continue;
        out[name] = n.grad.shape == n.shape ? n.grad : Array(n.shape);
    }
    return out;
}

std::vector<std::string> Graph::param_names() const {
    std::vector<std::string> out;
    for (const auto& [name, id] : leaves_)
        if (nodes_[id].op == Op::Param) out.push_back(name);
    return out;
}

double grad_check(Graph& g, NodeId root, const std::vector<std::string>& params, double epsilon) {
    if (!(epsilon > 0.0)) throw NumericError("grad_check: epsilon must be positive");
    g.forward(root);
    if (g.value(root).numel() != 1)
        throw NumericError("grad_check: graph output must be scalar, got shape " +
                           shape_str(g.value(root).shape));
    g.backward(root);

    std::map<std::string, Array> analytic;
    for (const auto& p : params) analytic[p] = g.param_grads().at(p);

    double worst = 0.0;
    for (const auto& p : params) {
        Array base = g.bound(p);
        for (std::size_t i = 0; i < base.numel(); ++i) {
            Array pert = base;
            pert.data[i] = base.data[i] + epsilon;
            g.bind(p, pert);
            const double fp = g.forward(root).data[0];
            pert.data[i] = base.data[i] - epsilon;
            g.bind(p, pert);
            const double fm = g.forward(root).data[0];
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double a = analytic[p].data[i];
            const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
            worst = std::max(worst, rel);
        }
        g.bind(p, base);
    }
    g.forward(root);
    g.backward(root);
    return worst;
}

}  // namespace dlcfm::ad
