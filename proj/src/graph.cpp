#include "fd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fd/kernels.hpp"
#include "fd/params.hpp"

namespace fd {

namespace {

int64_t prod(const std::vector<int>& shape, int from, int to) {
    int64_t p = 1;
    for (int i = from; i < to; ++i) p *= shape[static_cast<size_t>(i)];
    return p;
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Affine: return "affine";
        case Op::Conv1d: return "conv1d";
        case Op::ConvT1d: return "conv1d_t";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Relu: return "relu";
        case Op::Mish: return "mish";
        case Op::GroupNorm: return "group_norm";
        case Op::Concat: return "concat";
        case Op::Split: return "split";
        case Op::MaxPoolSet: return "max_pool_set";
        case Op::Mse: return "mse";
        case Op::SinEmbed: return "sin_embed";
        case Op::ScaleShift: return "scale_shift";
    }
    return "?";
}

void Graph::fail(int id, const std::string& msg) const {
    std::string where = "node " + std::to_string(id);
    if (id >= 0 && id < node_count()) {
        where += " (" + std::string(op_name(at(id).op));
        if (!at(id).name.empty()) where += " '" + at(id).name + "'";
        where += ")";
    }
    raise(where + ": " + msg);
}

int Graph::push(Node n) {
    forward_done_ = false;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Graph::Node& Graph::at(int id) { return nodes_[static_cast<size_t>(id)]; }
const Graph::Node& Graph::at(int id) const { return nodes_[static_cast<size_t>(id)]; }

const Array& Graph::val(int id) const {
    const Node& n = at(id);
    return n.bound ? *n.bound : n.value;
}

const Array& Graph::value(int id) const { return val(id); }
const Array& Graph::grad(int id) const { return at(id).grad; }
const std::vector<int>& Graph::shape(int id) const { return at(id).shape; }
const std::string& Graph::node_name(int id) const { return at(id).name; }

Array& Graph::owned_param(const std::string& name) {
    auto it = owned_.find(name);
    if (it == owned_.end()) raise("no owned parameter named '" + name + "'");
    return it->second;
}

std::vector<std::string> Graph::param_names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

int Graph::input(const std::string& name, std::vector<int> shape) {
    if (inputs_.count(name)) raise("duplicate input '" + name + "'");
    Node n;
    n.op = Op::Input;
    n.shape = std::move(shape);
    n.name = name;
    n.value = Array(n.shape);
    const int id = push(std::move(n));
    inputs_[name] = id;
    return id;
}

int Graph::param(const std::string& name, const Array* external) {
    if (params_.count(name)) raise("duplicate param '" + name + "'");
    Node n;
    n.op = Op::Param;
    n.shape = external->shape();
    n.name = name;
    n.bound = external;
    const int id = push(std::move(n));
    params_[name] = id;
    return id;
}

int Graph::param_owned(const std::string& name, Array value) {
    if (params_.count(name)) raise("duplicate param '" + name + "'");
    auto [it, ok] = owned_.emplace(name, std::move(value));
    (void)ok;
    Node n;
    n.op = Op::Param;
    n.shape = it->second.shape();
    n.name = name;
    n.bound = &it->second;
    const int id = push(std::move(n));
    params_[name] = id;
    return id;
}

int Graph::affine(int x, int w, int b) {
    const auto& xs = at(x).shape;
    const auto& ws = at(w).shape;
    const auto& bs = at(b).shape;
    if (ws.size() != 2) fail(w, "affine weight must be rank 2, got " + at(w).value.shape_str());
    if (xs.empty() || xs.back() != ws[0])
        fail(x, "affine input width " + std::to_string(xs.empty() ? 0 : xs.back()) +
                    " != weight rows " + std::to_string(ws[0]));
    if (bs.size() != 1 || bs[0] != ws[1]) fail(b, "affine bias must be [out]");
    Node n;
    n.op = Op::Affine;
    n.in = {x, w, b};
    n.shape = xs;
    n.shape.back() = ws[1];
    return push(std::move(n));
}

int Graph::conv1d(int x, int w, int b, int stride, Padding pad) {
    const auto& xs = at(x).shape;
    const auto& ws = at(w).shape;
    if (xs.size() != 3) fail(x, "conv1d input must be [B,C,L]");
    if (ws.size() != 3 || ws[1] != xs[1]) fail(w, "conv1d weight must be [Co,Ci,K] with Ci matching input");
    if (stride != 1 && stride != 2) fail(x, "conv1d stride must be 1 or 2");
    if (at(b).shape != std::vector<int>{ws[0]}) fail(b, "conv1d bias must be [Co]");
    const int l = xs[2], k = ws[2];
    int lo = 0, pl = 0;
    if (pad == Padding::Same) {
        lo = (l + stride - 1) / stride;
        const int total = std::max((lo - 1) * stride + k - l, 0);
        pl = total / 2;
    } else {
        if (l < k) fail(x, "conv1d valid padding needs L >= K");
        lo = (l - k) / stride + 1;
    }
    Node n;
    n.op = Op::Conv1d;
    n.in = {x, w, b};
    n.shape = {xs[0], ws[0], lo};
    n.stride = stride;
    n.pad = pl;
    n.ksize = k;
    n.lout = lo;
    return push(std::move(n));
}

int Graph::conv1d_t(int x, int w, int b) {
    const auto& xs = at(x).shape;
    const auto& ws = at(w).shape;
    if (xs.size() != 3) fail(x, "conv1d_t input must be [B,C,L]");
    if (ws.size() != 3 || ws[0] != xs[1]) fail(w, "conv1d_t weight must be [Ci,Co,K] with Ci matching input");
    const int k = ws[2];
    if (k % 2 != 0) fail(w, "conv1d_t kernel must be even for exact 2x upsampling");
    if (at(b).shape != std::vector<int>{ws[1]}) fail(b, "conv1d_t bias must be [Co]");
    const int pad = (k - 2) / 2;
    const int lo = (xs[2] - 1) * 2 - 2 * pad + k;  // == 2*L
    Node n;
    n.op = Op::ConvT1d;
    n.in = {x, w, b};
    n.shape = {xs[0], ws[1], lo};
    n.stride = 2;
    n.pad = pad;
    n.ksize = k;
    n.lout = lo;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    if (at(a).shape != at(b).shape)
        fail(a, "add shape mismatch " + at(a).value.shape_str() + " vs " + at(b).value.shape_str());
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.shape = at(a).shape;
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    if (at(a).shape != at(b).shape) fail(a, "sub shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.in = {a, b};
    n.shape = at(a).shape;
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    if (at(a).shape != at(b).shape) fail(a, "mul shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.shape = at(a).shape;
    return push(std::move(n));
}

int Graph::relu(int x) {
    Node n;
    n.op = Op::Relu;
    n.in = {x};
    n.shape = at(x).shape;
    return push(std::move(n));
}

int Graph::mish(int x) {
    Node n;
    n.op = Op::Mish;
    n.in = {x};
    n.shape = at(x).shape;
    return push(std::move(n));
}

int Graph::group_norm(int x, int gain, int bias, int groups) {
    const auto& xs = at(x).shape;
    if (xs.size() != 3) fail(x, "group_norm input must be [B,C,L]");
    if (groups < 1 || xs[1] % groups != 0) fail(x, "channels must divide into groups");
    if (at(gain).shape != std::vector<int>{xs[1]} || at(bias).shape != std::vector<int>{xs[1]})
        fail(gain, "group_norm gain/bias must be [C]");
    Node n;
    n.op = Op::GroupNorm;
    n.in = {x, gain, bias};
    n.shape = xs;
    n.groups = groups;
    return push(std::move(n));
}

int Graph::concat(int a, int b, int axis) {
    const auto& as = at(a).shape;
    const auto& bs = at(b).shape;
    if (as.size() != bs.size()) fail(a, "concat rank mismatch");
    if (axis < 0 || axis >= static_cast<int>(as.size())) fail(a, "concat axis out of range");
    for (size_t i = 0; i < as.size(); ++i)
        if (static_cast<int>(i) != axis && as[i] != bs[i])
            fail(a, "concat non-axis dims must match");
    Node n;
    n.op = Op::Concat;
    n.in = {a, b};
    n.shape = as;
    n.shape[static_cast<size_t>(axis)] += bs[static_cast<size_t>(axis)];
    n.axis = axis;
    return push(std::move(n));
}

int Graph::split(int x, int axis, int begin, int end) {
    const auto& xs = at(x).shape;
    if (axis < 0 || axis >= static_cast<int>(xs.size())) fail(x, "split axis out of range");
    if (begin < 0 || end <= begin || end > xs[static_cast<size_t>(axis)])
        fail(x, "split range invalid");
    Node n;
    n.op = Op::Split;
    n.in = {x};
    n.shape = xs;
    n.shape[static_cast<size_t>(axis)] = end - begin;
    n.axis = axis;
    n.begin = begin;
    n.end = end;
    return push(std::move(n));
}

int Graph::max_pool_set(int x) {
    const auto& xs = at(x).shape;
    if (xs.size() < 2) fail(x, "max_pool_set needs rank >= 2");
    Node n;
    n.op = Op::MaxPoolSet;
    n.in = {x};
    n.shape = xs;
    n.shape.erase(n.shape.end() - 2);
    return push(std::move(n));
}

int Graph::mse(int a, int b) {
    if (at(a).shape != at(b).shape) fail(a, "mse shape mismatch");
    Node n;
    n.op = Op::Mse;
    n.in = {a, b};
    n.shape = {1};
    return push(std::move(n));
}

int Graph::sin_embed(int k, int dim) {
    const auto& ks = at(k).shape;
    if (ks.size() != 1) fail(k, "sin_embed steps must be rank 1");
    if (dim < 2 || dim % 2 != 0) fail(k, "sin_embed dim must be even and >= 2");
    Node n;
    n.op = Op::SinEmbed;
    n.in = {k};
    n.shape = {ks[0], dim};
    n.embed_dim = dim;
    return push(std::move(n));
}

int Graph::scale_shift(int h, int gamma, int delta) {
    const auto& hs = at(h).shape;
    if (hs.size() != 3) fail(h, "scale_shift input must be [B,C,L]");
    const std::vector<int> want{hs[0], hs[1]};
    if (at(gamma).shape != want || at(delta).shape != want)
        fail(gamma, "scale_shift gamma/delta must be [B,C]");
    Node n;
    n.op = Op::ScaleShift;
    n.in = {h, gamma, delta};
    n.shape = hs;
    return push(std::move(n));
}

void Graph::mark_output(const std::string& name, int id) {
    if (id < 0 || id >= node_count()) raise("mark_output: bad node id");
    outputs_.emplace_back(name, id);
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

void Graph::eval(Node& n) {
    namespace kn = kernels;
    if (n.value.shape() != n.shape) n.value = Array(n.shape);
    double* y = n.value.data();
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            return;
        case Op::Affine: {
            const Array& x = val(n.in[0]);
            const Array& w = val(n.in[1]);
            const Array& b = val(n.in[2]);
            const int in = w.dim(0), out = w.dim(1);
            const int rows = static_cast<int>(x.numel() / in);
            kn::gemm(y, x.data(), w.data(), rows, in, out);
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < out; ++j) y[static_cast<size_t>(r) * out + j] += b[j];
            break;
        }
        case Op::Conv1d: {
            const Array& x = val(n.in[0]);
            const Array& w = val(n.in[1]);
            const Array& b = val(n.in[2]);
            kn::conv1d(y, x.data(), w.data(), b.data(), x.dim(0), x.dim(1), x.dim(2),
                       w.dim(0), n.ksize, n.stride, n.pad, n.lout);
            break;
        }
        case Op::ConvT1d: {
            const Array& x = val(n.in[0]);
            const Array& w = val(n.in[1]);
            const Array& b = val(n.in[2]);
            kn::convt1d(y, x.data(), w.data(), b.data(), x.dim(0), x.dim(1), x.dim(2),
                        w.dim(1), n.ksize, n.stride, n.pad, n.lout);
            break;
        }
        case Op::Add:
            kn::add(y, val(n.in[0]).data(), val(n.in[1]).data(), n.value.numel());
            break;
        case Op::Sub:
            kn::sub(y, val(n.in[0]).data(), val(n.in[1]).data(), n.value.numel());
            break;
        case Op::Mul:
            kn::mul(y, val(n.in[0]).data(), val(n.in[1]).data(), n.value.numel());
            break;
        case Op::Relu:
            kn::relu(y, val(n.in[0]).data(), n.value.numel());
            break;
        case Op::Mish:
            if (n.aux_a.shape() != n.shape) n.aux_a = Array(n.shape);
            kn::mish_cached(y, n.aux_a.data(), val(n.in[0]).data(), n.value.numel());
            break;
        case Op::GroupNorm: {
            const Array& x = val(n.in[0]);
            const int rows = x.dim(0) * n.groups;
            if (n.aux_a.numel() != rows) {
                n.aux_a = Array({rows});
                n.aux_b = Array({rows});
            }
            kn::group_norm(y, n.aux_a.data(), n.aux_b.data(), x.data(),
                           val(n.in[1]).data(), val(n.in[2]).data(), x.dim(0), x.dim(1),
                           x.dim(2), n.groups, 1e-5);
            break;
        }
        case Op::Concat: {
            const Array& a = val(n.in[0]);
            const Array& b = val(n.in[1]);
            const int axis = n.axis;
            const int64_t outer = prod(n.shape, 0, axis);
            const int64_t ablk = prod(a.shape(), axis, a.rank());
            const int64_t bblk = prod(b.shape(), axis, b.rank());
            for (int64_t o = 0; o < outer; ++o) {
                std::memcpy(y + o * (ablk + bblk), a.data() + o * ablk, sizeof(double) * ablk);
                std::memcpy(y + o * (ablk + bblk) + ablk, b.data() + o * bblk,
                            sizeof(double) * bblk);
            }
            break;
        }
        case Op::Split: {
            const Array& x = val(n.in[0]);
            const int axis = n.axis;
            const int64_t outer = prod(x.shape(), 0, axis);
            const int64_t inner = prod(x.shape(), axis + 1, x.rank());
            const int64_t xblk = x.dim(axis) * inner;
            const int64_t yblk = (n.end - n.begin) * inner;
            for (int64_t o = 0; o < outer; ++o)
                std::memcpy(y + o * yblk, x.data() + o * xblk + n.begin * inner,
                            sizeof(double) * yblk);
            break;
        }
        case Op::MaxPoolSet: {
            const Array& x = val(n.in[0]);
            const int c = x.shape().back();
            const int nn = x.shape()[x.rank() - 2];
            const int r = static_cast<int>(x.numel() / (static_cast<int64_t>(nn) * c));
            n.aux_argmax.resize(static_cast<size_t>(r) * c);
            kn::max_pool_set(y, n.aux_argmax.data(), x.data(), r, nn, c);
            break;
        }
        case Op::Mse:
            y[0] = kn::mse(val(n.in[0]).data(), val(n.in[1]).data(), val(n.in[0]).numel());
            break;
        case Op::SinEmbed: {
            const Array& k = val(n.in[0]);
            kn::sin_embed(y, k.data(), k.dim(0), n.embed_dim);
            break;
        }
        case Op::ScaleShift: {
            const Array& h = val(n.in[0]);
            kn::scale_shift(y, h.data(), val(n.in[1]).data(), val(n.in[2]).data(), h.dim(0),
                            h.dim(1), h.dim(2));
            break;
        }
    }
}

ArrayMap Graph::forward(const ArrayMap& inputs) {
    for (const auto& [name, id] : inputs_) {
        auto it = inputs.find(name);
        if (it == inputs.end()) raise("forward: input '" + name + "' not bound");
        if (it->second.shape() != at(id).shape)
            fail(id, "bound input shape " + it->second.shape_str() + " != declared " +
                         at(id).value.shape_str());
        at(id).value = it->second;
    }
    for (int id = 0; id < node_count(); ++id) {
        Node& n = at(id);
        eval(n);
        // Leaves are validated where they are produced (inputs above, the
        // optimizer's own loss checks for parameters).
        if (n.op == Op::Param) continue;
        const Array& v = val(id);
        if (!v.all_finite()) fail(id, "non-finite value produced");
    }
    forward_done_ = true;
    ArrayMap out;
    for (const auto& [name, id] : outputs_) out[name] = val(id);
    return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void Graph::eval_adjoint(Node& n) {
    namespace kn = kernels;
    const double* dy = n.grad.data();
    auto g = [&](int id) -> double* { return at(id).grad.data(); };
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            return;
        case Op::Affine: {
            const Array& x = val(n.in[0]);
            const Array& w = val(n.in[1]);
            const int in = w.dim(0), out = w.dim(1);
            const int rows = static_cast<int>(x.numel() / in);
            // dx += dy * W^T
            const Array wt = transposed(w);
            kn::gemm_acc(g(n.in[0]), dy, wt.data(), rows, out, in);
            // dW += x^T * dy without materializing the transpose
            kn::gemm_at_acc(g(n.in[1]), x.data(), dy, rows, in, out);
            // db += column sums of dy
            double* db = g(n.in[2]);
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < out; ++j) db[j] += dy[static_cast<size_t>(r) * out + j];
            break;
        }
        case Op::Conv1d: {
            const Array& x = val(n.in[0]);
            const Array& w = val(n.in[1]);
            kn::conv1d_backward(g(n.in[0]), g(n.in[1]), g(n.in[2]), dy, x.data(), w.data(),
                                x.dim(0), x.dim(1), x.dim(2), w.dim(0), n.ksize, n.stride,
                                n.pad, n.lout);
            break;
        }
        case Op::ConvT1d: {
            const Array& x = val(n.in[0]);
            const Array& w = val(n.in[1]);
            kn::convt1d_backward(g(n.in[0]), g(n.in[1]), g(n.in[2]), dy, x.data(), w.data(),
                                 x.dim(0), x.dim(1), x.dim(2), w.dim(1), n.ksize, n.stride,
                                 n.pad, n.lout);
            break;
        }
        case Op::Add:
            kn::axpy(g(n.in[0]), 1.0, dy, n.grad.numel());
            kn::axpy(g(n.in[1]), 1.0, dy, n.grad.numel());
            break;
        case Op::Sub:
            kn::axpy(g(n.in[0]), 1.0, dy, n.grad.numel());
            kn::axpy(g(n.in[1]), -1.0, dy, n.grad.numel());
            break;
        case Op::Mul: {
            const Array& a = val(n.in[0]);
            const Array& b = val(n.in[1]);
            double* da = g(n.in[0]);
            double* db = g(n.in[1]);
            for (int64_t i = 0; i < n.grad.numel(); ++i) {
                da[i] += dy[i] * b[i];
                db[i] += dy[i] * a[i];
            }
            break;
        }
        case Op::Relu:
            kn::relu_backward(g(n.in[0]), val(n.in[0]).data(), dy, n.grad.numel());
            break;
        case Op::Mish:
            kn::mish_backward_cached(g(n.in[0]), val(n.in[0]).data(), n.aux_a.data(), dy,
                                     n.grad.numel());
            break;
        case Op::GroupNorm: {
            const Array& x = val(n.in[0]);
            kn::group_norm_backward(g(n.in[0]), g(n.in[1]), g(n.in[2]), dy, x.data(),
                                    val(n.in[1]).data(), n.aux_a.data(), n.aux_b.data(),
                                    x.dim(0), x.dim(1), x.dim(2), n.groups);
            break;
        }
        case Op::Concat: {
            const Array& a = val(n.in[0]);
            const Array& b = val(n.in[1]);
            const int axis = n.axis;
            const int64_t outer = prod(n.shape, 0, axis);
            const int64_t ablk = prod(a.shape(), axis, a.rank());
            const int64_t bblk = prod(b.shape(), axis, b.rank());
            double* da = g(n.in[0]);
            double* db = g(n.in[1]);
            for (int64_t o = 0; o < outer; ++o) {
                kn::axpy(da + o * ablk, 1.0, dy + o * (ablk + bblk), ablk);
                kn::axpy(db + o * bblk, 1.0, dy + o * (ablk + bblk) + ablk, bblk);
            }
            break;
        }
        case Op::Split: {
            const Array& x = val(n.in[0]);
            const int axis = n.axis;
            const int64_t outer = prod(x.shape(), 0, axis);
            const int64_t inner = prod(x.shape(), axis + 1, x.rank());
            const int64_t xblk = x.dim(axis) * inner;
            const int64_t yblk = (n.end - n.begin) * inner;
            double* dx = g(n.in[0]);
            for (int64_t o = 0; o < outer; ++o)
                kn::axpy(dx + o * xblk + n.begin * inner, 1.0, dy + o * yblk, yblk);
            break;
        }
        case Op::MaxPoolSet: {
            const Array& x = val(n.in[0]);
            const int c = x.shape().back();
            const int nn = x.shape()[x.rank() - 2];
            const int r = static_cast<int>(x.numel() / (static_cast<int64_t>(nn) * c));
            kn::max_pool_set_backward(g(n.in[0]), dy, n.aux_argmax.data(), r, nn, c);
            break;
        }
        case Op::Mse: {
            const Array& a = val(n.in[0]);
            const Array& b = val(n.in[1]);
            const int64_t cnt = a.numel();
            const double scale = 2.0 * dy[0] / static_cast<double>(cnt);
            double* da = g(n.in[0]);
            double* db = g(n.in[1]);
            for (int64_t i = 0; i < cnt; ++i) {
                const double d = scale * (a[i] - b[i]);
                da[i] += d;
                db[i] -= d;
            }
            break;
        }
        case Op::SinEmbed:
            // Discrete step index: no gradient flows to it.
            break;
        case Op::ScaleShift: {
            const Array& h = val(n.in[0]);
            kn::scale_shift_backward(g(n.in[0]), g(n.in[1]), g(n.in[2]), dy, h.data(),
                                     val(n.in[1]).data(), h.dim(0), h.dim(1), h.dim(2));
            break;
        }
    }
}

ArrayMap Graph::backward(int loss) {
    if (!forward_done_) raise("backward called before forward");
    if (loss < 0 || loss >= node_count()) raise("backward: bad loss node id");
    if (val(loss).numel() != 1) fail(loss, "backward needs a scalar loss");
    for (int id = 0; id < node_count(); ++id) {
        Node& n = at(id);
        if (n.grad.shape() != n.shape)
            n.grad = Array(n.shape);
        else
            std::memset(n.grad.data(), 0, sizeof(double) * static_cast<size_t>(n.grad.numel()));
    }
    at(loss).grad[0] = 1.0;
    for (int id = loss; id >= 0; --id) eval_adjoint(at(id));
    ArrayMap grads;
    for (const auto& [name, id] : params_) grads[name] = at(id).grad;
    return grads;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

double sweep_params(Graph& g, int loss, double eps,
                    const std::function<Array&(const std::string&)>& storage) {
    if (g.shape(loss) != std::vector<int>{1}) raise("grad_check: builder must return a scalar node");
    g.forward({});
    const ArrayMap analytic = g.backward(loss);
    double worst = 0.0;
    for (const std::string& name : g.param_names()) {
        Array& p = storage(name);
        const Array& an = analytic.at(name);
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double keep = p[i];
            p[i] = keep + eps;
            g.forward({});
            const double lp = g.value(loss)[0];
            p[i] = keep - eps;
            g.forward({});
            const double lm = g.value(loss)[0];
            p[i] = keep;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double rel = std::abs(an[i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    // Restore cached values at the unperturbed point.
    g.forward({});
    return worst;
}

}  // namespace

double grad_check(const GraphBuilder& build, const ArrayMap& point, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) raise("grad_check: eps must be in (0, 1e-2]");
    Graph g;
    const int loss = build(g, point);
    return sweep_params(g, loss, eps, [&](const std::string& name) -> Array& {
        return g.owned_param(name);
    });
}

double grad_check(const StoreGraphBuilder& build, ParamStore& params, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) raise("grad_check: eps must be in (0, 1e-2]");
    Graph g;
    const int loss = build(g, params);
    return sweep_params(g, loss, eps, [&](const std::string& name) -> Array& {
        return params.has(name) ? params.at(name) : g.owned_param(name);
    });
}

}  // namespace fd
