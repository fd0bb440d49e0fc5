#pragma once

// Dense MLP substrate for the actor and critic networks.
//
// Everything is templated on the scalar type: agents train Mlp<float>, while
// gradient checks run the same code as Mlp<double>. Batched tensors are
// column-major with one sample per column (features x batch).

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "secsched/rng.hpp"

namespace secsched::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mask = std::vector<std::uint8_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Activation { Identity, Tanh };

// Fully connected network; tanh on hidden layers, `output_activation` on the last.
template <typename S>
struct Mlp {
    std::vector<int> layer_sizes;
    std::vector<Matrix<S>> weights;  // weights[l] is (layer_sizes[l+1] x layer_sizes[l])
    std::vector<Vector<S>> biases;
    Activation output_activation = Activation::Identity;

    int num_layers() const { return static_cast<int>(weights.size()); }
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }
    std::size_t num_parameters() const;
    bool all_finite() const;

    template <typename T>
    Mlp<T> cast() const;
};

template <typename S>
Mlp<S> zero_mlp(const std::vector<int>& layer_sizes, Activation output_activation = Activation::Identity);

// Orthogonal init scaled by `hidden_gain` on hidden layers and `output_gain`
// on the last layer; zero biases.
template <typename S>
Mlp<S> make_mlp(const std::vector<int>& layer_sizes, Rng& rng, double hidden_gain = 1.0, double output_gain = 0.01,
                Activation output_activation = Activation::Identity);

template <typename S>
struct MlpCache {
    std::vector<Matrix<S>> activations;  // activations[0] is the input, back() the output
};

template <typename S>
struct MlpGradients {
    std::vector<Matrix<S>> weights;
    std::vector<Vector<S>> biases;
    Matrix<S> input;  // d loss / d input, for chaining into an upstream network

    static MlpGradients zeros_like(const Mlp<S>& net);
    MlpGradients& operator+=(const MlpGradients& o);
    MlpGradients& operator*=(S factor);
    S squared_norm() const;
};

// Output column j depends only on input column j, bitwise.
template <typename S>
Matrix<S> forward(const Mlp<S>& net, const Matrix<S>& input, MlpCache<S>* cache = nullptr);

template <typename S>
Vector<S> forward(const Mlp<S>& net, const Vector<S>& input);

// Gradients of sum_over_batch(output_grad . output) w.r.t. parameters and input.
template <typename S>
MlpGradients<S> backward(const Mlp<S>& net, const MlpCache<S>& cache, const Matrix<S>& output_grad);

template <typename S>
struct AdamState {
    std::vector<Matrix<S>> m_weights, v_weights;
    std::vector<Vector<S>> m_biases, v_biases;
    std::int64_t step = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_net(const Mlp<S>& net, double lr);
};

// Bias-corrected Adam update. Throws NumericError naming the layer on a
// non-finite gradient, leaving the parameters untouched.
template <typename S>
void adam_step(AdamState<S>& opt, Mlp<S>& net, const MlpGradients<S>& grads);

// Rescales all gradient sets jointly so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename S>
S clip_global_norm(std::vector<MlpGradients<S>*> grads, S max_norm);

// Parameters in checkpoint order: per layer, weights row-major then biases.
template <typename S>
std::vector<float> flatten(const Mlp<S>& net);
template <typename S>
void unflatten(Mlp<S>& net, const float* data, std::size_t count);

// --- categorical heads ---

template <typename S>
struct CategoricalHead {
    Vector<S> logits;
    Mask mask;  // empty means everything allowed; 0 entries get probability exactly 0
};

template <typename S>
Vector<S> masked_log_softmax(const Vector<S>& logits, const Mask& mask);

template <typename S>
Vector<S> masked_softmax(const Vector<S>& logits, const Mask& mask);

template <typename S>
S entropy(const Vector<S>& probs);

struct Sample {
    int index = 0;
    double log_prob = 0.0;
};

template <typename S>
Sample masked_sample(const CategoricalHead<S>& head, Rng& rng);

// Most probable unmasked index, lowest index on ties.
template <typename S>
int masked_argmax(const Vector<S>& logits, const Mask& mask);

}  // namespace secsched::nn
