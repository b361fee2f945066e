// Define-then-run computation graph with reverse-mode differentiation.
//
// Nodes are appended in topological order (an op can only reference ids that
// already exist). forward() binds named inputs and caches every node's output;
// backward() walks the tape in exact reverse order and accumulates adjoints.
// Parameters are leaf nodes bound either to graph-owned storage or to an
// external store, so one parameter set can serve many graphs.
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fd/array.hpp"

namespace fd {

using ArrayMap = std::map<std::string, Array>;

enum class Op {
    Input,
    Param,
    Affine,
    Conv1d,
    ConvT1d,
    Add,
    Sub,
    Mul,
    Relu,
    Mish,
    GroupNorm,
    Concat,
    Split,
    MaxPoolSet,
    Mse,
    SinEmbed,
    ScaleShift,
};

const char* op_name(Op op);

enum class Padding { Same, Valid };

class Graph {
  public:
    // Leaves --------------------------------------------------------------
    int input(const std::string& name, std::vector<int> shape);
    int param(const std::string& name, const Array* external);
    int param_owned(const std::string& name, Array value);

    // Ops ------------------------------------------------------------------
    int affine(int x, int w, int b);
    int conv1d(int x, int w, int b, int stride, Padding pad);
    int conv1d_t(int x, int w, int b);  // stride-2 upsample, kernel from w
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int relu(int x);
    int mish(int x);
    int group_norm(int x, int gain, int bias, int groups);
    int concat(int a, int b, int axis);
    int split(int x, int axis, int begin, int end);
    int max_pool_set(int x);
    int mse(int a, int b);
    int sin_embed(int k, int dim);
    int scale_shift(int h, int gamma, int delta);

    void mark_output(const std::string& name, int id);

    // Execution -------------------------------------------------------------
    // Evaluates all nodes given the named inputs; returns the marked outputs.
    ArrayMap forward(const ArrayMap& inputs);
    // Adjoints from a scalar loss node; returns gradients per parameter name.
    ArrayMap backward(int loss);

    const Array& value(int id) const;
    const Array& grad(int id) const;
    const std::vector<int>& shape(int id) const;
    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Owned-parameter access (used by grad_check's finite differences).
    Array& owned_param(const std::string& name);
    std::vector<std::string> param_names() const;
    const std::string& node_name(int id) const;

  private:
    struct Node {
        Op op;
        std::vector<int> in;
        std::vector<int> shape;
        Array value;
        Array grad;
        // op attributes
        int stride = 1;
        int pad = 0;
        int ksize = 0;
        int lout = 0;
        int groups = 0;
        int axis = -1;
        int begin = 0;
        int end = 0;
        int embed_dim = 0;
        std::string name;
        const Array* bound = nullptr;
        // backward caches (group-norm statistics, mish tanh values)
        Array aux_a, aux_b;
        std::vector<int> aux_argmax;
    };

    int push(Node n);
    const Array& val(int id) const;
    Node& at(int id);
    const Node& at(int id) const;
    [[noreturn]] void fail(int id, const std::string& msg) const;
    void eval(Node& n);
    void eval_adjoint(Node& n);

    std::vector<Node> nodes_;
    std::map<std::string, int> inputs_;
    std::map<std::string, int> params_;
    std::map<std::string, Array> owned_;
    std::vector<std::pair<std::string, int>> outputs_;
    bool forward_done_ = false;
};

// Builds a scalar-loss graph from `point` (every entry becomes an owned
// parameter), then compares analytic gradients against central differences.
// Returns max over parameter elements of |analytic - numeric| / max(1, |numeric|).
using GraphBuilder = std::function<int(Graph&, const ArrayMap&)>;
double grad_check(const GraphBuilder& build, const ArrayMap& point, double eps);

// Same check for graphs whose parameters live in an external store; the store
// entries are nudged in place and restored. Graph-owned params added by the
// builder are swept too.
class ParamStore;
using StoreGraphBuilder = std::function<int(Graph&, const ParamStore&)>;
double grad_check(const StoreGraphBuilder& build, ParamStore& params, double eps);

}  // namespace fd
