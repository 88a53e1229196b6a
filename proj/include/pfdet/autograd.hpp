#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pfdet/tensor.hpp"

namespace pfdet::ag {

// Define-by-run reverse-mode autodiff. Each forward pass builds a fresh graph
// of Nodes; leaves (parameters, inputs) persist across passes. A graph must be
// built and backpropagated on a single thread; distinct model instances are
// independent and may run on different threads.

struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily, same shape as val
    bool requires_grad = false;
    uint64_t order = 0;  // creation index, used to schedule backward
    std::vector<Value> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor::zeros(val.shape);
    }
    void add_grad(const Tensor& g);
};

// When false, ops compute values only: no parents are retained and no
// backprop closures are built. Thread-local so concurrent inference on frozen
// models does not interfere with a training thread.
bool& grad_enabled();

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
};

Value make_leaf(Tensor t, bool requires_grad = false);
Value make_const(Tensor t);

// Runs backprop from a scalar root (numel == 1). Gradients accumulate into
// every reachable node with requires_grad set.
void backward(const Value& root);

// ---- primitive ops -------------------------------------------------------

// x:[Cin,H,W] w:[Cout,Cin,kh,kw] b:[Cout] or nullptr; zero padding.
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);

// Transposed conv, factor `stride` upsampling. x:[Cin,H,W] w:[Cin,Cout,kh,kw].
// Output spatial size: (H-1)*stride - 2*pad + kh + out_pad.
Value conv_transpose2d(const Value& x, const Value& w, const Value& b, int stride, int pad,
                       int out_pad);

// v:[in] W:[out,in] b:[out] or nullptr.
Value linear(const Value& v, const Value& W, const Value& b);

Value relu(const Value& x);
Value sigmoid(const Value& x);
Value add(const Value& a, const Value& b);
Value scale(const Value& x, double s);

Value concat_channels(const std::vector<Value>& xs);
Value slice_channels(const Value& x, int c0, int c1);

// v:[d] -> [d,h,w], every spatial site holds v.
Value broadcast_hw(const Value& v, int h, int w);

// [C,H,W] -> [C,2H,2W], nearest neighbor.
Value nearest_up2(const Value& x);

// [C,H,W] -> [C,oh,ow], bilinear, half-pixel centers (align_corners=false).
Value bilinear_resize(const Value& x, int oh, int ow);

// [C,H,W] -> [C], spatial mean.
Value mean_hw(const Value& x);

// [*] -> scalar sum of all entries.
Value sum_all(const Value& x);

// Detection loss: focal classification + L1 regression on assigned cells.
//   heat_logits:[K,H,W], reg:[R,H,W]
//   heat_target:[K,H,W] in {-1,0,1} (-1 = ignore), pos_mask:[H,W] in {0,1},
//   reg_target:[R,H,W]
// loss = sum(focal(alpha,gamma)) / max(1, #positives)
//      + reg_weight * sum_{mask cells} |reg - reg_target| / max(1, #mask cells)
Value detection_loss(const Value& heat_logits, const Value& reg, const Tensor& heat_target,
                     const Tensor& pos_mask, const Tensor& reg_target, double alpha, double gamma,
                     double reg_weight);

// ---- parameters ----------------------------------------------------------

enum class Init { FanInUniform, Uniform, Zeros, IdentityMatrix };

struct InitSpec {
    Init kind = Init::FanInUniform;
    double lo = 0.0, hi = 0.0;  // for Init::Uniform
    int fan_in = 0;             // for Init::FanInUniform
};

// Registry of named parameters. Names are the checkpoint / trainability
// contract; every parameter is registered under exactly one canonical name.
class ParamStore {
public:
    Value create(const std::string& name, std::vector<int> shape, const InitSpec& init,
                 uint64_t seed);
    // Registers an externally initialized tensor (stub encoder weights).
    Value adopt(const std::string& name, Tensor t);

    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    Value get(const std::string& name) const;
    const std::map<std::string, Value>& all() const { return params_; }

    int64_t total_scalars() const;
    void zero_grads();

private:
    std::map<std::string, Value> params_;
};

}  // namespace pfdet::ag
