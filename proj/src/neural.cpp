#include "secsched/neural.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace secsched::nn {

namespace {

template <typename S>
void check_sizes(const std::vector<int>& sizes)
{
    if (sizes.size() < 2) {
        throw ShapeError("mlp: need at least input and output sizes");
    }
    for (int s : sizes) {
        if (s < 1) {
            throw ShapeError("mlp: layer widths must be positive");
        }
    }
}

template <typename S>
Matrix<S> orthogonal(int rows, int cols, Rng& rng, double gain)
{
    const bool tall = rows >= cols;
    const int r = tall ? rows : cols;
    const int c = tall ? cols : rows;
    Eigen::MatrixXd g(r, c);
    for (int j = 0; j < c; ++j) {
        for (int i = 0; i < r; ++i) {
            g(i, j) = rng.normal();
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    // Sign fix so the decomposition is unique.
    const Eigen::VectorXd d = qr.matrixQR().diagonal();
    for (int j = 0; j < c; ++j) {
        if (d(j) < 0.0) {
            q.col(j) *= -1.0;
        }
    }
    Eigen::MatrixXd w = tall ? q : Eigen::MatrixXd(q.transpose());
    return (gain * w).cast<S>();
}

template <typename S>
void apply_activation(Matrix<S>& z, Activation a)
{
    if (a == Activation::Tanh) {
        z = z.array().tanh().matrix();
    }
}

}  // namespace

template <typename S>
std::size_t Mlp<S>::num_parameters() const
{
    std::size_t n = 0;
    for (int l = 0; l < num_layers(); ++l) {
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    }
    return n;
}

template <typename S>
bool Mlp<S>::all_finite() const
{
    for (int l = 0; l < num_layers(); ++l) {
        if (!weights[l].allFinite() || !biases[l].allFinite()) {
            return false;
        }
    }
    return true;
}

template <typename S>
template <typename T>
Mlp<T> Mlp<S>::cast() const
{
    Mlp<T> out;
    out.layer_sizes = layer_sizes;
    out.output_activation = output_activation;
    for (int l = 0; l < num_layers(); ++l) {
        out.weights.push_back(weights[l].template cast<T>());
        out.biases.push_back(biases[l].template cast<T>());
    }
    return out;
}

template <typename S>
Mlp<S> zero_mlp(const std::vector<int>& layer_sizes, Activation output_activation)
{
    check_sizes<S>(layer_sizes);
    Mlp<S> net;
    net.layer_sizes = layer_sizes;
    net.output_activation = output_activation;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        net.weights.push_back(Matrix<S>::Zero(layer_sizes[l + 1], layer_sizes[l]));
        net.biases.push_back(Vector<S>::Zero(layer_sizes[l + 1]));
    }
    return net;
}

template <typename S>
Mlp<S> make_mlp(const std::vector<int>& layer_sizes, Rng& rng, double hidden_gain, double output_gain,
                Activation output_activation)
{
    auto net = zero_mlp<S>(layer_sizes, output_activation);
    for (int l = 0; l < net.num_layers(); ++l) {
        const double gain = (l + 1 == net.num_layers()) ? output_gain : hidden_gain;
        net.weights[l] = orthogonal<S>(layer_sizes[l + 1], layer_sizes[l], rng, gain);
    }
    return net;
}

template <typename S>
MlpGradients<S> MlpGradients<S>::zeros_like(const Mlp<S>& net)
{
    MlpGradients g;
    for (int l = 0; l < net.num_layers(); ++l) {
        g.weights.push_back(Matrix<S>::Zero(net.weights[l].rows(), net.weights[l].cols()));
        g.biases.push_back(Vector<S>::Zero(net.biases[l].size()));
    }
    return g;
}

template <typename S>
MlpGradients<S>& MlpGradients<S>::operator+=(const MlpGradients& o)
{
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += o.weights[l];
        biases[l] += o.biases[l];
    }
    return *this;
}

template <typename S>
MlpGradients<S>& MlpGradients<S>::operator*=(S factor)
{
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] *= factor;
        biases[l] *= factor;
    }
    return *this;
}

template <typename S>
S MlpGradients<S>::squared_norm() const
{
    S total = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        total += weights[l].squaredNorm() + biases[l].squaredNorm();
    }
    return total;
}

template <typename S>
Matrix<S> forward(const Mlp<S>& net, const Matrix<S>& input, MlpCache<S>* cache)
{
    if (input.rows() != net.input_size()) {
        throw ShapeError("forward: input has " + std::to_string(input.rows()) + " features, network expects " +
                         std::to_string(net.input_size()));
    }
    Matrix<S> a = input;
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(input);
    }
    for (int l = 0; l < net.num_layers(); ++l) {
        // Column by column: a sample's output must not depend on the batch it
        // rides in, so rollout log-probs reproduce exactly during updates.
        Matrix<S> z(net.weights[l].rows(), a.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            z.col(j).noalias() = net.weights[l] * a.col(j);
        }
        z.colwise() += net.biases[l];
        apply_activation(z, l + 1 == net.num_layers() ? net.output_activation : Activation::Tanh);
        a = std::move(z);
        if (cache) {
            cache->activations.push_back(a);
        }
    }
    return a;
}

template <typename S>
Vector<S> forward(const Mlp<S>& net, const Vector<S>& input)
{
    return forward<S>(net, Matrix<S>(input), nullptr).col(0);
}

template <typename S>
MlpGradients<S> backward(const Mlp<S>& net, const MlpCache<S>& cache, const Matrix<S>& output_grad)
{
    const int layers = net.num_layers();
    if (static_cast<int>(cache.activations.size()) != layers + 1) {
        throw ShapeError("backward: cache does not belong to this network");
    }
    const auto& out = cache.activations.back();
    if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols()) {
        throw ShapeError("backward: output gradient is " + std::to_string(output_grad.rows()) + "x" +
                         std::to_string(output_grad.cols()) + ", forward output was " + std::to_string(out.rows()) +
                         "x" + std::to_string(out.cols()));
    }
    MlpGradients<S> g;
    g.weights.resize(static_cast<std::size_t>(layers));
    g.biases.resize(static_cast<std::size_t>(layers));

    Matrix<S> delta = output_grad;
    if (net.output_activation == Activation::Tanh) {
        delta.array() *= (S(1) - out.array().square());
    }
    for (int l = layers - 1; l >= 0; --l) {
        const auto& a_in = cache.activations[static_cast<std::size_t>(l)];
        g.weights[l] = delta * a_in.transpose();
        g.biases[l] = delta.rowwise().sum();
        Matrix<S> prev = net.weights[l].transpose() * delta;
        if (l > 0) {
            prev.array() *= (S(1) - a_in.array().square());
        }
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

template <typename S>
AdamState<S> AdamState<S>::for_net(const Mlp<S>& net, double lr)
{
    AdamState st;
    st.lr = lr;
    for (int l = 0; l < net.num_layers(); ++l) {
        st.m_weights.push_back(Matrix<S>::Zero(net.weights[l].rows(), net.weights[l].cols()));
        st.v_weights.push_back(Matrix<S>::Zero(net.weights[l].rows(), net.weights[l].cols()));
        st.m_biases.push_back(Vector<S>::Zero(net.biases[l].size()));
        st.v_biases.push_back(Vector<S>::Zero(net.biases[l].size()));
    }
    return st;
}

template <typename S>
void adam_step(AdamState<S>& opt, Mlp<S>& net, const MlpGradients<S>& grads)
{
    const int layers = net.num_layers();
    if (static_cast<int>(grads.weights.size()) != layers || static_cast<int>(opt.m_weights.size()) != layers) {
        throw ShapeError("adam_step: gradient/optimizer layer count does not match network");
    }
    for (int l = 0; l < layers; ++l) {
        if (grads.weights[l].rows() != net.weights[l].rows() || grads.weights[l].cols() != net.weights[l].cols() ||
            grads.biases[l].size() != net.biases[l].size()) {
            throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
        }
        if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite()) {
            throw NumericError("adam_step: non-finite gradient at layer " + std::to_string(l));
        }
    }
    ++opt.step;
    const S b1 = static_cast<S>(opt.beta1);
    const S b2 = static_cast<S>(opt.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(opt.beta1, static_cast<double>(opt.step)));
    const S c2 = static_cast<S>(1.0 - std::pow(opt.beta2, static_cast<double>(opt.step)));
    const S lr = static_cast<S>(opt.lr);
    const S eps = static_cast<S>(opt.epsilon);

    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = b1 * m + (S(1) - b1) * g;
        v = b2 * v + (S(1) - b2) * g.cwiseAbs2();
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (int l = 0; l < layers; ++l) {
        update(net.weights[l], opt.m_weights[l], opt.v_weights[l], grads.weights[l]);
        update(net.biases[l], opt.m_biases[l], opt.v_biases[l], grads.biases[l]);
    }
}

template <typename S>
S clip_global_norm(std::vector<MlpGradients<S>*> grads, S max_norm)
{
    S sq = 0;
    for (const auto* g : grads) {
        sq += g->squared_norm();
    }
    const S norm = std::sqrt(sq);
    if (norm > max_norm) {
        const S factor = max_norm / norm;
        for (auto* g : grads) {
            *g *= factor;
        }
    }
    return norm;
}

template <typename S>
std::vector<float> flatten(const Mlp<S>& net)
{
    std::vector<float> out;
    out.reserve(net.num_parameters());
    for (int l = 0; l < net.num_layers(); ++l) {
        const auto& w = net.weights[l];
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                out.push_back(static_cast<float>(w(i, j)));
            }
        }
        for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
            out.push_back(static_cast<float>(net.biases[l](i)));
        }
    }
    return out;
}

template <typename S>
void unflatten(Mlp<S>& net, const float* data, std::size_t count)
{
    if (count != net.num_parameters()) {
        throw ShapeError("unflatten: expected " + std::to_string(net.num_parameters()) + " parameters, got " +
                         std::to_string(count));
    }
    std::size_t k = 0;
    for (int l = 0; l < net.num_layers(); ++l) {
        auto& w = net.weights[l];
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = static_cast<S>(data[k++]);
            }
        }
        for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
            net.biases[l](i) = static_cast<S>(data[k++]);
        }
    }
}

template <typename S>
Vector<S> masked_log_softmax(const Vector<S>& logits, const Mask& mask)
{
    const auto n = logits.size();
    if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != n) {
        throw ShapeError("masked_log_softmax: mask length does not match logits");
    }
    auto allowed = [&](Eigen::Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)] != 0; };
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (allowed(i)) {
            mx = std::max(mx, logits(i));
        }
    }
    if (!std::isfinite(static_cast<double>(mx))) {
        throw std::invalid_argument("masked_log_softmax: no unmasked finite logit");
    }
    S sum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (allowed(i)) {
            sum += std::exp(logits(i) - mx);
        }
    }
    const S log_z = mx + std::log(sum);
    Vector<S> out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out(i) = allowed(i) ? logits(i) - log_z : -std::numeric_limits<S>::infinity();
    }
    return out;
}

template <typename S>
Vector<S> masked_softmax(const Vector<S>& logits, const Mask& mask)
{
    Vector<S> p = masked_log_softmax(logits, mask);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        p(i) = std::isinf(p(i)) ? S(0) : std::exp(p(i));
    }
    return p;
}

template <typename S>
S entropy(const Vector<S>& probs)
{
    S h = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs(i) > 0) {
            h -= probs(i) * std::log(probs(i));
        }
    }
    return h;
}

template <typename S>
Sample masked_sample(const CategoricalHead<S>& head, Rng& rng)
{
    const Vector<S> logp = masked_log_softmax(head.logits, head.mask);
    const double u = rng.uniform();
    double acc = 0.0;
    int last_allowed = -1;
    for (Eigen::Index i = 0; i < logp.size(); ++i) {
        if (!std::isfinite(static_cast<double>(logp(i)))) {
            continue;
        }
        last_allowed = static_cast<int>(i);
        acc += std::exp(static_cast<double>(logp(i)));
        if (u < acc) {
            return {static_cast<int>(i), static_cast<double>(logp(i))};
        }
    }
    // Rounding left u above the accumulated mass; fall back to the last allowed entry.
    return {last_allowed, static_cast<double>(logp(last_allowed))};
}

template <typename S>
int masked_argmax(const Vector<S>& logits, const Mask& mask)
{
    int best = -1;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (!mask.empty() && mask[static_cast<std::size_t>(i)] == 0) {
            continue;
        }
        if (best < 0 || logits(i) > logits(best)) {
            best = static_cast<int>(i);
        }
    }
    if (best < 0) {
        throw std::invalid_argument("masked_argmax: every entry is masked");
    }
    return best;
}

#define SECSCHED_INSTANTIATE(S)                                                                          \
    template struct Mlp<S>;                                                                              \
    template struct MlpGradients<S>;                                                                     \
    template struct AdamState<S>;                                                                        \
    template Mlp<S> zero_mlp<S>(const std::vector<int>&, Activation);                                    \
    template Mlp<S> make_mlp<S>(const std::vector<int>&, Rng&, double, double, Activation);              \
    template Matrix<S> forward<S>(const Mlp<S>&, const Matrix<S>&, MlpCache<S>*);                        \
    template Vector<S> forward<S>(const Mlp<S>&, const Vector<S>&);                                      \
    template MlpGradients<S> backward<S>(const Mlp<S>&, const MlpCache<S>&, const Matrix<S>&);           \
    template void adam_step<S>(AdamState<S>&, Mlp<S>&, const MlpGradients<S>&);                          \
    template S clip_global_norm<S>(std::vector<MlpGradients<S>*>, S);                                    \
    template std::vector<float> flatten<S>(const Mlp<S>&);                                               \
    template void unflatten<S>(Mlp<S>&, const float*, std::size_t);                                      \
    template Vector<S> masked_log_softmax<S>(const Vector<S>&, const Mask&);                             \
    template Vector<S> masked_softmax<S>(const Vector<S>&, const Mask&);                                 \
    template S entropy<S>(const Vector<S>&);                                                             \
    template Sample masked_sample<S>(const CategoricalHead<S>&, Rng&);                                   \
    template int masked_argmax<S>(const Vector<S>&, const Mask&);

SECSCHED_INSTANTIATE(float)
SECSCHED_INSTANTIATE(double)

template Mlp<double> Mlp<float>::cast<double>() const;
template Mlp<float> Mlp<double>::cast<float>() const;

#undef SECSCHED_INSTANTIATE

}  // namespace secsched::nn
