#include "attrsim/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace attrsim {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

MapC cmap(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
MapM mmap(Tensor& t) { return MapM(t.data(), t.rows(), t.cols()); }

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Gelu: return "gelu";
        case OpKind::Gather: return "gather";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::Slice: return "slice";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::Inject: return "inject";
    }
    return "?";
}

void Tape::fail(const Node& n, const std::string& msg) const {
    NodeId id = static_cast<NodeId>(&n - nodes_.data());
    std::string where = std::string(op_name(n.op)) + " node " + std::to_string(id);
    if (!n.label.empty()) where += " (" + n.label + ")";
    throw Error(where + ": " + msg);
}

NodeId Tape::push(Node n) {
    for (NodeId in : n.inputs)
        if (in < 0 || in >= node_count()) throw Error("tape: input id out of range");
    nodes_.push_back(std::move(n));
    forward_ran_ = false;
    return node_count() - 1;
}

NodeId Tape::input(std::vector<int> shape, std::string label) {
    Node n;
    n.op = OpKind::Input;
    n.shape = std::move(shape);
    n.label = std::move(label);
    return push(std::move(n));
}

NodeId Tape::constant(Tensor value, std::string label) {
    Node n;
    n.op = OpKind::Constant;
    n.shape = value.shape();
    n.label = std::move(label);
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    auto rows_of = [](const std::vector<int>& s) {
        int64_t r = 1;
        for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
        return static_cast<int>(r);
    };
    auto cols_of = [](const std::vector<int>& s) { return s.back(); };
    int am = trans_a ? cols_of(na.shape) : rows_of(na.shape);
    int ak = trans_a ? rows_of(na.shape) : cols_of(na.shape);
    int bk = trans_b ? cols_of(nb.shape) : rows_of(nb.shape);
    int bn = trans_b ? rows_of(nb.shape) : cols_of(nb.shape);
    if (ak != bk) throw Error("matmul: inner dimension mismatch");
    Node n;
    n.op = OpKind::MatMul;
    n.inputs = {a, b};
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    n.shape = {am, bn};
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = OpKind::Add;
    n.inputs = {a, b};
    n.shape = at(a).shape;
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Node n;
    n.op = OpKind::Mul;
    n.inputs = {a, b};
    n.shape = at(a).shape;
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
    Node n;
    n.op = OpKind::Scale;
    n.inputs = {a};
    n.scale = factor;
    n.shape = at(a).shape;
    return push(std::move(n));
}

NodeId Tape::softmax(NodeId a) {
    Node n;
    n.op = OpKind::Softmax;
    n.inputs = {a};
    n.shape = at(a).shape;
    return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
    Node n;
    n.op = OpKind::LayerNorm;
    n.inputs = {x, gain, bias};
    n.shape = at(x).shape;
    return push(std::move(n));
}

NodeId Tape::gelu(NodeId a) {
    Node n;
    n.op = OpKind::Gelu;
    n.inputs = {a};
    n.shape = at(a).shape;
    return push(std::move(n));
}

NodeId Tape::gather(NodeId table, NodeId ids) {
    const auto& ts = at(table).shape;
    if (ts.size() != 2) throw Error("gather: table must be rank 2");
    int64_t count = 1;
    for (int d : at(ids).shape) count *= d;
    Node n;
    n.op = OpKind::Gather;
    n.inputs = {table, ids};
    n.shape = {static_cast<int>(count), ts[1]};
    return push(std::move(n));
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts, std::vector<int> shape_override) {
    if (parts.empty()) throw Error("concat_rows: no parts");
    auto cols_of = [](const std::vector<int>& s) { return s.back(); };
    int c = cols_of(at(parts[0]).shape);
    int r = 0;
    for (NodeId p : parts) {
        if (cols_of(at(p).shape) != c) throw Error("concat_rows: column mismatch");
        int64_t pr = 1;
        const auto& s = at(p).shape;
        for (size_t i = 0; i + 1 < s.size(); ++i) pr *= s[i];
        r += static_cast<int>(pr);
    }
    Node n;
    n.op = OpKind::ConcatRows;
    n.inputs = parts;
    n.shape = shape_override.empty() ? std::vector<int>{r, c} : std::move(shape_override);
    return push(std::move(n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw Error("concat_cols: no parts");
    auto rows_of = [](const std::vector<int>& s) {
        int64_t r = 1;
        for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
        return static_cast<int>(r);
    };
    int r = rows_of(at(parts[0]).shape);
    int c = 0;
    for (NodeId p : parts) {
        if (rows_of(at(p).shape) != r) throw Error("concat_cols: row mismatch");
        c += at(p).shape.back();
    }
    Node n;
    n.op = OpKind::ConcatCols;
    n.inputs = parts;
    n.shape = {r, c};
    return push(std::move(n));
}

NodeId Tape::slice(NodeId a, int r0, int r1, int c0, int c1) {
    Node n;
    n.op = OpKind::Slice;
    n.inputs = {a};
    n.r0 = r0;
    n.r1 = r1;
    n.c0 = c0;
    n.c1 = c1;
    if (r0 < 0 || c0 < 0 || r1 <= r0 || c1 <= c0) throw Error("slice: bad bounds");
    n.shape = {r1 - r0, c1 - c0};
    return push(std::move(n));
}

NodeId Tape::cross_entropy(NodeId logits, NodeId target_dist) {
    Node n;
    n.op = OpKind::CrossEntropy;
    n.inputs = {logits, target_dist};
    n.shape = {1, 1};
    return push(std::move(n));
}

NodeId Tape::inject(NodeId a) {
    Node n;
    n.op = OpKind::Inject;
    n.inputs = {a};
    n.shape = at(a).shape;
    return push(std::move(n));
}

void Tape::set_output(NodeId id) {
    if (id < 0 || id >= node_count()) throw Error("set_output: bad id");
    output_ = id;
}

void Tape::bind(NodeId id, const Tensor* t) {
    Node& n = at(id);
    if (n.op != OpKind::Input && n.op != OpKind::Inject)
        fail(n, "only input/inject nodes can be bound");
    if (t == nullptr) fail(n, "null binding");
    n.bound = t;
    if (n.op == OpKind::Inject) n.overridden = true;
    forward_ran_ = false;
}

void Tape::clear_override(NodeId id) {
    Node& n = at(id);
    if (n.op != OpKind::Inject) fail(n, "clear_override on non-inject node");
    n.bound = nullptr;
    n.overridden = false;
    forward_ran_ = false;
}

void Tape::mark(NodeId id) {
    if (std::find(marked_.begin(), marked_.end(), id) == marked_.end()) marked_.push_back(id);
}

void Tape::clear_marks() { marked_.clear(); }

const Tensor& Tape::val(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.op == OpKind::Input || (n.op == OpKind::Inject && n.overridden)) return *n.bound;
    return n.value;
}

const Tensor& Tape::value(NodeId id) const { return val(id); }

const Tensor& Tape::grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }

void Tape::check_finite(const Node& n, const Tensor& t) const {
    if (!t.all_finite()) fail(n, "non-finite value produced");
}

const Tensor& Tape::forward() {
    if (output_ < 0) throw Error("forward: no output set");
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        switch (n.op) {
            case OpKind::Input: {
                if (!n.bound) fail(n, "unbound input");
                const Tensor& b = *n.bound;
                int64_t declared = 1;
                for (int d : n.shape) declared *= d;
                if (b.size() != declared || b.cols() != n.shape.back())
                    fail(n, "bound tensor shape " + b.shape_str() + " does not match declaration");
                break;
            }
            case OpKind::Constant:
                break;
            case OpKind::Inject: {
                if (n.overridden) {
                    const Tensor& b = *n.bound;
                    const Tensor& src = val(n.inputs[0]);
                    if (b.rows() != src.rows() || b.cols() != src.cols())
                        fail(n, "override shape " + b.shape_str() + " does not match " +
                                    src.shape_str());
                    check_finite(n, b);
                } else {
                    const Tensor& src = val(n.inputs[0]);
                    if (!n.value.same_shape(src)) n.value = src;
                    else std::copy(src.data(), src.data() + src.size(), n.value.data());
                }
                break;
            }
            case OpKind::MatMul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                int k = n.trans_a ? a.rows() : a.cols();
                int kb = n.trans_b ? b.cols() : b.rows();
                if (k != kb) fail(n, "inner dimension mismatch at run time");
                if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
                auto out = mmap(n.value);
                if (!n.trans_a && !n.trans_b) out.noalias() = cmap(a) * cmap(b);
                else if (!n.trans_a && n.trans_b) out.noalias() = cmap(a) * cmap(b).transpose();
                else if (n.trans_a && !n.trans_b) out.noalias() = cmap(a).transpose() * cmap(b);
                else out.noalias() = cmap(a).transpose() * cmap(b).transpose();
                check_finite(n, n.value);
                break;
            }
            case OpKind::Add:
            case OpKind::Mul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
                const bool is_add = n.op == OpKind::Add;
                if (a.rows() == b.rows() && a.cols() == b.cols()) {
                    for (int64_t j = 0; j < a.size(); ++j)
                        n.value[j] = is_add ? a[j] + b[j] : a[j] * b[j];
                } else if (b.rows() == 1 && b.cols() == a.cols()) {
                    for (int r = 0; r < a.rows(); ++r)
                        for (int c = 0; c < a.cols(); ++c)
                            n.value.at(r, c) = is_add ? a.at(r, c) + b[c] : a.at(r, c) * b[c];
                } else if (b.cols() == 1 && b.rows() == a.rows()) {
                    for (int r = 0; r < a.rows(); ++r)
                        for (int c = 0; c < a.cols(); ++c)
                            n.value.at(r, c) = is_add ? a.at(r, c) + b[r] : a.at(r, c) * b[r];
                } else if (b.size() == 1) {
                    for (int64_t j = 0; j < a.size(); ++j)
                        n.value[j] = is_add ? a[j] + b[0] : a[j] * b[0];
                } else {
                    fail(n, "incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
                }
                check_finite(n, n.value);
                break;
            }
            case OpKind::Scale: {
                const Tensor& a = val(n.inputs[0]);
                if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
                for (int64_t j = 0; j < a.size(); ++j) n.value[j] = a[j] * n.scale;
                check_finite(n, n.value);
                break;
            }
            case OpKind::Softmax: {
                const Tensor& a = val(n.inputs[0]);
                if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
                int R = a.rows(), C = a.cols();
                for (int r = 0; r < R; ++r) {
                    const double* in = a.data() + static_cast<int64_t>(r) * C;
                    double* out = n.value.data() + static_cast<int64_t>(r) * C;
                    double mx = in[0];
                    for (int c = 1; c < C; ++c) mx = std::max(mx, in[c]);
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) {
                        out[c] = std::exp(in[c] - mx);
                        s += out[c];
                    }
                    double inv = 1.0 / s;
                    for (int c = 0; c < C; ++c) out[c] *= inv;
                }
                check_finite(n, n.value);
                break;
            }
            case OpKind::LayerNorm: {
                const Tensor& x = val(n.inputs[0]);
                const Tensor& g = val(n.inputs[1]);
                const Tensor& b = val(n.inputs[2]);
                int R = x.rows(), C = x.cols();
                if (g.size() != C || b.size() != C) fail(n, "gain/bias must have one entry per column");
                if (!n.value.same_shape(x)) n.value = Tensor(x.shape());
                for (int r = 0; r < R; ++r) {
                    const double* in = x.data() + static_cast<int64_t>(r) * C;
                    double* out = n.value.data() + static_cast<int64_t>(r) * C;
                    double mean = 0.0;
                    for (int c = 0; c < C; ++c) mean += in[c];
                    mean /= C;
                    double var = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double d = in[c] - mean;
                        var += d * d;
                    }
                    var /= C;
                    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                    for (int c = 0; c < C; ++c) out[c] = (in[c] - mean) * inv * g[c] + b[c];
                }
                check_finite(n, n.value);
                break;
            }
            case OpKind::Gelu: {
                const Tensor& a = val(n.inputs[0]);
                if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
                for (int64_t j = 0; j < a.size(); ++j) n.value[j] = gelu_fwd(a[j]);
                check_finite(n, n.value);
                break;
            }
            case OpKind::Gather: {
                const Tensor& tab = val(n.inputs[0]);
                const Tensor& ids = val(n.inputs[1]);
                int V = tab.rows(), D = tab.cols();
                int N = static_cast<int>(ids.size());
                if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
                for (int i = 0; i < N; ++i) {
                    int id = static_cast<int>(ids[i]);
                    if (id < 0 || id >= V) fail(n, "id " + std::to_string(id) + " out of range");
                    std::copy(tab.data() + static_cast<int64_t>(id) * D,
                              tab.data() + static_cast<int64_t>(id + 1) * D,
                              n.value.data() + static_cast<int64_t>(i) * D);
                }
                check_finite(n, n.value);
                break;
            }
            case OpKind::ConcatRows: {
                if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
                double* out = n.value.data();
                for (NodeId p : n.inputs) {
                    const Tensor& t = val(p);
                    std::copy(t.data(), t.data() + t.size(), out);
                    out += t.size();
                }
                break;
            }
            case OpKind::ConcatCols: {
                if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
                int R = n.value.rows();
                int off = 0;
                for (NodeId p : n.inputs) {
                    const Tensor& t = val(p);
                    int C = t.cols();
                    for (int r = 0; r < R; ++r)
                        std::copy(t.data() + static_cast<int64_t>(r) * C,
                                  t.data() + static_cast<int64_t>(r + 1) * C,
                                  n.value.data() + static_cast<int64_t>(r) * n.value.cols() + off);
                    off += C;
                }
                break;
            }
            case OpKind::Slice: {
                const Tensor& a = val(n.inputs[0]);
                if (n.r1 > a.rows() || n.c1 > a.cols()) fail(n, "slice out of range");
                if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
                for (int r = n.r0; r < n.r1; ++r)
                    std::copy(a.data() + static_cast<int64_t>(r) * a.cols() + n.c0,
                              a.data() + static_cast<int64_t>(r) * a.cols() + n.c1,
                              n.value.data() + static_cast<int64_t>(r - n.r0) * (n.c1 - n.c0));
                break;
            }
            case OpKind::CrossEntropy: {
                const Tensor& l = val(n.inputs[0]);
                const Tensor& t = val(n.inputs[1]);
                if (l.rows() != 1 || t.rows() != 1 || l.cols() != t.cols())
                    fail(n, "expects single-row logits and matching target distribution");
                int C = l.cols();
                double mx = l[0];
                for (int c = 1; c < C; ++c) mx = std::max(mx, l[c]);
                double se = 0.0;
                for (int c = 0; c < C; ++c) se += std::exp(l[c] - mx);
                double lse = mx + std::log(se);
                double loss = 0.0;
                for (int c = 0; c < C; ++c) loss += t[c] * (lse - l[c]);
                if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
                n.value[0] = loss;
                check_finite(n, n.value);
                break;
            }
        }
    }
    forward_ran_ = true;
    return val(output_);
}

void Tape::backward(const Tensor& seed) {
    if (!forward_ran_) throw Error("backward: forward has not been run on this tape");
    const Tensor& out = val(output_);
    if (seed.rows() != out.rows() || seed.cols() != out.cols())
        throw Error("backward: seed shape " + seed.shape_str() + " does not match output " +
                    out.shape_str());

    for (Node& n : nodes_) {
        const Tensor& v = val(static_cast<NodeId>(&n - nodes_.data()));
        if (!n.grad.same_shape(v)) n.grad = Tensor(v.shape());
        else n.grad.fill(0.0);
    }
    Node& on = at(output_);
    std::copy(seed.data(), seed.data() + seed.size(), on.grad.data());

    for (int i = node_count() - 1; i >= 0; --i) {
        Node& n = at(i);
        const Tensor& g = n.grad;
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Constant:
                break;
            case OpKind::Inject: {
                if (!n.overridden) {
                    Tensor& da = at(n.inputs[0]).grad;
                    for (int64_t j = 0; j < g.size(); ++j) da[j] += g[j];
                }
                break;
            }
            case OpKind::MatMul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                Tensor& da = at(n.inputs[0]).grad;
                Tensor& db = at(n.inputs[1]).grad;
                auto G = cmap(g);
                if (!n.trans_a && !n.trans_b) {
                    mmap(da).noalias() += G * cmap(b).transpose();
                    mmap(db).noalias() += cmap(a).transpose() * G;
                } else if (!n.trans_a && n.trans_b) {
                    mmap(da).noalias() += G * cmap(b);
                    mmap(db).noalias() += G.transpose() * cmap(a);
                } else if (n.trans_a && !n.trans_b) {
                    mmap(da).noalias() += cmap(b) * G.transpose();
                    mmap(db).noalias() += cmap(a) * G;
                } else {
                    mmap(da).noalias() += cmap(b).transpose() * G.transpose();
                    mmap(db).noalias() += G.transpose() * cmap(a).transpose();
                }
                break;
            }
            case OpKind::Add:
            case OpKind::Mul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                Tensor& da = at(n.inputs[0]).grad;
                Tensor& db = at(n.inputs[1]).grad;
                const bool is_add = n.op == OpKind::Add;
                if (a.rows() == b.rows() && a.cols() == b.cols()) {
                    for (int64_t j = 0; j < a.size(); ++j) {
                        da[j] += is_add ? g[j] : g[j] * b[j];
                        db[j] += is_add ? g[j] : g[j] * a[j];
                    }
                } else if (b.rows() == 1 && b.cols() == a.cols()) {
                    for (int r = 0; r < a.rows(); ++r)
                        for (int c = 0; c < a.cols(); ++c) {
                            double gv = g.at(r, c);
                            da.at(r, c) += is_add ? gv : gv * b[c];
                            db[c] += is_add ? gv : gv * a.at(r, c);
                        }
                } else if (b.cols() == 1 && b.rows() == a.rows()) {
                    for (int r = 0; r < a.rows(); ++r)
                        for (int c = 0; c < a.cols(); ++c) {
                            double gv = g.at(r, c);
                            da.at(r, c) += is_add ? gv : gv * b[r];
                            db[r] += is_add ? gv : gv * a.at(r, c);
                        }
                } else {  // b scalar
                    for (int64_t j = 0; j < a.size(); ++j) {
                        da[j] += is_add ? g[j] : g[j] * b[0];
                        db[0] += is_add ? g[j] : g[j] * a[j];
                    }
                }
                break;
            }
            case OpKind::Scale: {
                Tensor& da = at(n.inputs[0]).grad;
                for (int64_t j = 0; j < g.size(); ++j) da[j] += g[j] * n.scale;
                break;
            }
            case OpKind::Softmax: {
                const Tensor& y = n.value;
                Tensor& da = at(n.inputs[0]).grad;
                int R = y.rows(), C = y.cols();
                for (int r = 0; r < R; ++r) {
                    const double* yr = y.data() + static_cast<int64_t>(r) * C;
                    const double* gr = g.data() + static_cast<int64_t>(r) * C;
                    double* dr = da.data() + static_cast<int64_t>(r) * C;
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) dot += gr[c] * yr[c];
                    for (int c = 0; c < C; ++c) dr[c] += yr[c] * (gr[c] - dot);
                }
                break;
            }
            case OpKind::LayerNorm: {
                const Tensor& x = val(n.inputs[0]);
                const Tensor& gain = val(n.inputs[1]);
                Tensor& dx = at(n.inputs[0]).grad;
                Tensor& dgain = at(n.inputs[1]).grad;
                Tensor& dbias = at(n.inputs[2]).grad;
                int R = x.rows(), C = x.cols();
                for (int r = 0; r < R; ++r) {
                    const double* in = x.data() + static_cast<int64_t>(r) * C;
                    const double* gr = g.data() + static_cast<int64_t>(r) * C;
                    double mean = 0.0;
                    for (int c = 0; c < C; ++c) mean += in[c];
                    mean /= C;
                    double var = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double d = in[c] - mean;
                        var += d * d;
                    }
                    var /= C;
                    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                    double mh = 0.0, mhx = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double xhat = (in[c] - mean) * inv;
                        double h = gr[c] * gain[c];
                        mh += h;
                        mhx += h * xhat;
                        dgain[c] += gr[c] * xhat;
                        dbias[c] += gr[c];
                    }
                    mh /= C;
                    mhx /= C;
                    double* dr = dx.data() + static_cast<int64_t>(r) * C;
                    for (int c = 0; c < C; ++c) {
                        double xhat = (in[c] - mean) * inv;
                        dr[c] += inv * (gr[c] * gain[c] - mh - xhat * mhx);
                    }
                }
                break;
            }
            case OpKind::Gelu: {
                const Tensor& a = val(n.inputs[0]);
                Tensor& da = at(n.inputs[0]).grad;
                for (int64_t j = 0; j < a.size(); ++j) da[j] += g[j] * gelu_grad(a[j]);
                break;
            }
            case OpKind::Gather: {
                const Tensor& ids = val(n.inputs[1]);
                Tensor& dtab = at(n.inputs[0]).grad;
                int D = n.value.cols();
                int N = static_cast<int>(ids.size());
                for (int i2 = 0; i2 < N; ++i2) {
                    int id = static_cast<int>(ids[i2]);
                    const double* src = g.data() + static_cast<int64_t>(i2) * D;
                    double* dst = dtab.data() + static_cast<int64_t>(id) * D;
                    for (int c = 0; c < D; ++c) dst[c] += src[c];
                }
                break;
            }
            case OpKind::ConcatRows: {
                const double* src = g.data();
                for (NodeId p : n.inputs) {
                    Tensor& dp = at(p).grad;
                    for (int64_t j = 0; j < dp.size(); ++j) dp[j] += src[j];
                    src += dp.size();
                }
                break;
            }
            case OpKind::ConcatCols: {
                int R = n.value.rows();
                int off = 0;
                for (NodeId p : n.inputs) {
                    Tensor& dp = at(p).grad;
                    int C = dp.cols();
                    for (int r = 0; r < R; ++r)
                        for (int c = 0; c < C; ++c)
                            dp.at(r, c) += g.at(r, off + c);
                    off += C;
                }
                break;
            }
            case OpKind::Slice: {
                Tensor& da = at(n.inputs[0]).grad;
                for (int r = n.r0; r < n.r1; ++r)
                    for (int c = n.c0; c < n.c1; ++c)
                        da.at(r, c) += g.at(r - n.r0, c - n.c0);
                break;
            }
            case OpKind::CrossEntropy: {
                const Tensor& l = val(n.inputs[0]);
                const Tensor& t = val(n.inputs[1]);
                Tensor& dl = at(n.inputs[0]).grad;
                int C = l.cols();
                double mx = l[0];
                for (int c = 1; c < C; ++c) mx = std::max(mx, l[c]);
                double se = 0.0;
                for (int c = 0; c < C; ++c) se += std::exp(l[c] - mx);
                double tm = 0.0;
                for (int c = 0; c < C; ++c) tm += t[c];
                // d/dl = (softmax(l) * sum(t) - t) * g; target side is not a
                // differentiation path.
                for (int c = 0; c < C; ++c)
                    dl[c] += g[0] * (std::exp(l[c] - mx) / se * tm - t[c]);
                break;
            }
        }
    }
}

double grad_check(const std::function<NodeId(Tape&, NodeId)>& build,
                  const Tensor& point, double step) {
    if (step <= 0.0) throw Error("grad_check: step must be positive");
    Tape tape;
    NodeId in = tape.input(point.shape(), "x");
    NodeId out = build(tape, in);
    tape.set_output(out);
    tape.mark(in);

    Tensor x = point;
    tape.bind(in, &x);
    const Tensor& o = tape.forward();
    if (o.size() != 1) throw Error("grad_check: function must be scalar-valued");
    tape.backward(Tensor::scalar(1.0));
    Tensor analytic = tape.grad(in);

    double max_rel = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + step;
        double fp = tape.forward()[0];
        x[i] = keep - step;
        double fm = tape.forward()[0];
        x[i] = keep;
        double numeric = (fp - fm) / (2.0 * step);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i]))
            throw Error("grad_check: non-finite comparison");
        double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-8});
        max_rel = std::max(max_rel, std::fabs(numeric - analytic[i]) / denom);
    }
    tape.forward();  // restore cached values at the original point
    return max_rel;
}

}  // namespace attrsim
