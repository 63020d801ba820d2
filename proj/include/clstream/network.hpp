#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "clstream/matrix.hpp"
#include "clstream/rng.hpp"
#include "clstream/tensor.hpp"

namespace clstream {

struct MlpArch {
    int input_dim = 0;
    std::vector<int> hidden = {100};  // scaled by width_multiplier
    int width_multiplier = 1;
};

/// Two conv layers (10k and 20k channels, kernel 5, max-pool 2), one hidden
/// fully connected layer of 50k units and a linear head. Operates on 28x28
/// single-channel inputs.
struct CnnArch {
    int width_multiplier = 1;
};

using Architecture = std::variant<MlpArch, CnnArch>;

inline void check_width_multiplier(int k) {
    if (k != 1 && k != 2 && k != 4 && k != 8 && k != 16)
        throw std::invalid_argument("width_multiplier must be one of {1,2,4,8,16}");
}

namespace nn {

// CNN geometry for 28x28 inputs, kernel 5, pool 2.
constexpr int kImage = 28;
constexpr int kConv1Out = 24;
constexpr int kPool1Out = 12;
constexpr int kConv2Out = 8;
constexpr int kPool2Out = 4;
constexpr int kKernel = 5;

/// y = x * W^T + b, with W of shape (out, in).
inline Matrix dense_forward(const Matrix& x, const Tensor& w, const Tensor& b) {
    const std::size_t out_dim = w.shape[0];
    const std::size_t in_dim = w.shape[1];
    if (x.cols != in_dim) throw std::invalid_argument("dense_forward: shape mismatch");
    Matrix y(x.rows, out_dim);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.data.data() + r * in_dim;
        double* yr = y.data.data() + r * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wr = w.data.data() + o * in_dim;
            double acc = b.data[o];
            for (std::size_t i = 0; i < in_dim; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

/// Accumulates dW, db and returns dx for y = x * W^T + b.
inline Matrix dense_backward(const Matrix& x, const Tensor& w, const Matrix& dy,
                             Tensor& dw, Tensor& db) {
    const std::size_t out_dim = w.shape[0];
    const std::size_t in_dim = w.shape[1];
    Matrix dx(x.rows, in_dim);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.data.data() + r * in_dim;
        const double* dyr = dy.data.data() + r * out_dim;
        double* dxr = dx.data.data() + r * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double g = dyr[o];
            if (g == 0.0) continue;
            db.data[o] += g;
            double* dwr = dw.data.data() + o * in_dim;
            const double* wr = w.data.data() + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    return dx;
}

inline void relu_inplace(Matrix& m) {
    for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

}  // namespace nn

/// Intermediate activations kept by a traced forward pass; consumed by
/// Network::backward.
struct ForwardTrace {
    Matrix input;
    std::vector<Matrix> mlp_acts;  // post-relu hidden activations

    // CNN path: pooled pre-relu maps, post-relu maps and pool argmax ids
    Matrix p1, a1, p2, a2, a3;
    std::vector<int> pool1_idx, pool2_idx;

    Matrix logits;
};

/**
 * Small differentiable classifier with a single head over all N classes.
 * Parameters live in a flat list of named tensors (checkpoint format).
 */
class Network {
public:
    Network(Architecture arch, int num_classes, std::uint64_t init_seed)
        : arch_(std::move(arch)), num_classes_(num_classes) {
        if (num_classes_ < 2) throw std::invalid_argument("Network: need at least 2 classes");
        std::visit([&](const auto& a) { build(a); }, arch_);
        init_params(init_seed);
    }

    const Architecture& arch() const { return arch_; }
    int num_classes() const { return num_classes_; }
    std::size_t input_dim() const { return input_dim_; }
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& t : params_) n += t.size();
        return n;
    }

    /// Zero-filled gradient tensors matching the parameter list.
    std::vector<Tensor> zero_grads() const {
        std::vector<Tensor> gs;
        gs.reserve(params_.size());
        for (const auto& p : params_) gs.emplace_back(p.name, p.shape);
        return gs;
    }

    Matrix forward(const Matrix& x) const { return forward_trace(x).logits; }

    ForwardTrace forward_trace(const Matrix& x) const {
        if (x.cols != input_dim_)
            throw std::invalid_argument("Network::forward: input width " +
                                        std::to_string(x.cols) + " != expected " +
                                        std::to_string(input_dim_));
        ForwardTrace tr;
        tr.input = x;
        std::visit([&](const auto& a) { forward_impl(a, tr); }, arch_);
        return tr;
    }

    /// Backpropagate d(loss)/d(logits) through the traced pass.
    std::vector<Tensor> backward(const ForwardTrace& tr, const Matrix& dlogits) const {
        auto grads = zero_grads();
        std::visit([&](const auto& a) { backward_impl(a, tr, dlogits, grads); }, arch_);
        return grads;
    }

private:
    // -- construction --------------------------------------------------------

    void build(const MlpArch& a) {
        check_width_multiplier(a.width_multiplier);
        if (a.input_dim < 1) throw std::invalid_argument("MlpArch: input_dim must be >= 1");
        input_dim_ = static_cast<std::size_t>(a.input_dim);
        std::size_t in = input_dim_;
        int li = 0;
        for (int h : a.hidden) {
            if (h < 1) throw std::invalid_argument("MlpArch: hidden width must be >= 1");
            const auto out = static_cast<std::size_t>(h) *
                             static_cast<std::size_t>(a.width_multiplier);
            params_.emplace_back("fc" + std::to_string(li) + ".weight",
                                 std::vector<std::size_t>{out, in});
            params_.emplace_back("fc" + std::to_string(li) + ".bias",
                                 std::vector<std::size_t>{out});
            in = out;
            ++li;
        }
        params_.emplace_back("head.weight",
                             std::vector<std::size_t>{static_cast<std::size_t>(num_classes_), in});
        params_.emplace_back("head.bias",
                             std::vector<std::size_t>{static_cast<std::size_t>(num_classes_)});
    }

    void build(const CnnArch& a) {
        check_width_multiplier(a.width_multiplier);
        const auto k = static_cast<std::size_t>(a.width_multiplier);
        input_dim_ = static_cast<std::size_t>(nn::kImage) * nn::kImage;
        const std::size_t c1 = 10 * k, c2 = 20 * k, fc = 50 * k;
        const std::size_t flat = c2 * nn::kPool2Out * nn::kPool2Out;  // 320k
        params_.emplace_back("conv1.weight", std::vector<std::size_t>{c1, 1, 5, 5});
        params_.emplace_back("conv1.bias", std::vector<std::size_t>{c1});
        params_.emplace_back("conv2.weight", std::vector<std::size_t>{c2, c1, 5, 5});
        params_.emplace_back("conv2.bias", std::vector<std::size_t>{c2});
        params_.emplace_back("fc1.weight", std::vector<std::size_t>{fc, flat});
        params_.emplace_back("fc1.bias", std::vector<std::size_t>{fc});
        params_.emplace_back("head.weight",
                             std::vector<std::size_t>{static_cast<std::size_t>(num_classes_), fc});
        params_.emplace_back("head.bias",
                             std::vector<std::size_t>{static_cast<std::size_t>(num_classes_)});
    }

    // Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
    // their biases alike.
    void init_params(std::uint64_t seed) {
        Rng rng = make_rng(seed, RngStream::init);
        for (std::size_t i = 0; i + 1 < params_.size(); i += 2) {
            Tensor& w = params_[i];
            Tensor& b = params_[i + 1];
            std::size_t fan_in = 1;
            for (std::size_t d = 1; d < w.shape.size(); ++d) fan_in *= w.shape[d];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : w.data) v = u(rng);
            for (auto& v : b.data) v = u(rng);
        }
    }

    // -- MLP -----------------------------------------------------------------

    void forward_impl(const MlpArch&, ForwardTrace& tr) const {
        const Matrix* cur = &tr.input;
        const std::size_t n_hidden = params_.size() / 2 - 1;
        tr.mlp_acts.clear();
        for (std::size_t l = 0; l < n_hidden; ++l) {
            Matrix z = nn::dense_forward(*cur, params_[2 * l], params_[2 * l + 1]);
            nn::relu_inplace(z);
            tr.mlp_acts.push_back(std::move(z));
            cur = &tr.mlp_acts.back();
        }
        tr.logits =
            nn::dense_forward(*cur, params_[params_.size() - 2], params_[params_.size() - 1]);
    }

    void backward_impl(const MlpArch&, const ForwardTrace& tr, const Matrix& dlogits,
                       std::vector<Tensor>& grads) const {
        const std::size_t n_hidden = tr.mlp_acts.size();
        const Matrix& head_in = n_hidden ? tr.mlp_acts.back() : tr.input;
        Matrix delta = nn::dense_backward(head_in, params_[params_.size() - 2], dlogits,
                                          grads[params_.size() - 2],
                                          grads[params_.size() - 1]);
        for (std::size_t l = n_hidden; l-- > 0;) {
            const Matrix& act = tr.mlp_acts[l];
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                if (act.data[i] <= 0.0) delta.data[i] = 0.0;
            const Matrix& in = l ? tr.mlp_acts[l - 1] : tr.input;
            delta = nn::dense_backward(in, params_[2 * l], delta, grads[2 * l],
                                       grads[2 * l + 1]);
        }
    }

    // -- CNN -----------------------------------------------------------------

    // Valid 5x5 convolution over (B, in_ch, s, s) laid out row-major.
    static void conv_forward(const Matrix& in, std::size_t in_ch, int in_s,
                             const Tensor& w, const Tensor& b, Matrix& out) {
        const std::size_t out_ch = w.shape[0];
        const int out_s = in_s - nn::kKernel + 1;
        const std::size_t in_plane = static_cast<std::size_t>(in_s) * in_s;
        const std::size_t out_plane = static_cast<std::size_t>(out_s) * out_s;
        out = Matrix(in.rows, out_ch * out_plane);
        for (std::size_t r = 0; r < in.rows; ++r) {
            const double* xr = in.data.data() + r * in.cols;
            double* yr = out.data.data() + r * out.cols;
            for (std::size_t oc = 0; oc < out_ch; ++oc) {
                double* plane = yr + oc * out_plane;
                const double bias = b.data[oc];
                for (std::size_t p = 0; p < out_plane; ++p) plane[p] = bias;
                for (std::size_t ic = 0; ic < in_ch; ++ic) {
                    const double* xplane = xr + ic * in_plane;
                    const double* wk =
                        w.data.data() + (oc * in_ch + ic) * nn::kKernel * nn::kKernel;
                    for (int ky = 0; ky < nn::kKernel; ++ky) {
                        for (int kx = 0; kx < nn::kKernel; ++kx) {
                            const double wv = wk[ky * nn::kKernel + kx];
                            for (int oy = 0; oy < out_s; ++oy) {
                                const double* src = xplane + (oy + ky) * in_s + kx;
                                double* dst = plane + oy * out_s;
                                for (int ox = 0; ox < out_s; ++ox) dst[ox] += wv * src[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    static void conv_backward(const Matrix& in, std::size_t in_ch, int in_s,
                              const Tensor& w, const Matrix& dout, Tensor& dw, Tensor& db,
                              Matrix* din) {
        const std::size_t out_ch = w.shape[0];
        const int out_s = in_s - nn::kKernel + 1;
        const std::size_t in_plane = static_cast<std::size_t>(in_s) * in_s;
        const std::size_t out_plane = static_cast<std::size_t>(out_s) * out_s;
        if (din) *din = Matrix(in.rows, in.cols);
        for (std::size_t r = 0; r < in.rows; ++r) {
            const double* xr = in.data.data() + r * in.cols;
            const double* gr = dout.data.data() + r * dout.cols;
            double* dxr = din ? din->data.data() + r * in.cols : nullptr;
            for (std::size_t oc = 0; oc < out_ch; ++oc) {
                const double* gplane = gr + oc * out_plane;
                for (std::size_t p = 0; p < out_plane; ++p) db.data[oc] += gplane[p];
                for (std::size_t ic = 0; ic < in_ch; ++ic) {
                    const double* xplane = xr + ic * in_plane;
                    double* dxplane = dxr ? dxr + ic * in_plane : nullptr;
                    const std::size_t wbase = (oc * in_ch + ic) * nn::kKernel * nn::kKernel;
                    for (int ky = 0; ky < nn::kKernel; ++ky) {
                        for (int kx = 0; kx < nn::kKernel; ++kx) {
                            double wgrad = 0.0;
                            const double wv = w.data[wbase + ky * nn::kKernel + kx];
                            for (int oy = 0; oy < out_s; ++oy) {
                                const double* src = xplane + (oy + ky) * in_s + kx;
                                const double* g = gplane + oy * out_s;
                                double* dx = dxplane ? dxplane + (oy + ky) * in_s + kx : nullptr;
                                for (int ox = 0; ox < out_s; ++ox) {
                                    wgrad += g[ox] * src[ox];
                                    if (dx) dx[ox] += g[ox] * wv;
                                }
                            }
                            dw.data[wbase + ky * nn::kKernel + kx] += wgrad;
                        }
                    }
                }
            }
        }
    }

    // 2x2 max pooling with stride 2; records the argmax offset of each cell.
    static void pool_forward(const Matrix& in, std::size_t ch, int in_s, Matrix& out,
                             std::vector<int>& idx) {
        const int out_s = in_s / 2;
        const std::size_t in_plane = static_cast<std::size_t>(in_s) * in_s;
        const std::size_t out_plane = static_cast<std::size_t>(out_s) * out_s;
        out = Matrix(in.rows, ch * out_plane);
        idx.assign(in.rows * ch * out_plane, 0);
        for (std::size_t r = 0; r < in.rows; ++r) {
            for (std::size_t c = 0; c < ch; ++c) {
                const double* src = in.data.data() + r * in.cols + c * in_plane;
                double* dst = out.data.data() + r * out.cols + c * out_plane;
                int* id = idx.data() + (r * ch + c) * out_plane;
                for (int oy = 0; oy < out_s; ++oy) {
                    for (int ox = 0; ox < out_s; ++ox) {
                        int best = (2 * oy) * in_s + 2 * ox;
                        double bv = src[best];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int p = (2 * oy + dy) * in_s + 2 * ox + dx;
                                if (src[p] > bv) {
                                    bv = src[p];
                                    best = p;
                                }
                            }
                        dst[oy * out_s + ox] = bv;
                        id[oy * out_s + ox] = best;
                    }
                }
            }
        }
    }

    static Matrix pool_backward(const Matrix& dout, std::size_t ch, int in_s,
                                const std::vector<int>& idx, std::size_t rows) {
        const int out_s = in_s / 2;
        const std::size_t in_plane = static_cast<std::size_t>(in_s) * in_s;
        const std::size_t out_plane = static_cast<std::size_t>(out_s) * out_s;
        Matrix din(rows, ch * in_plane);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < ch; ++c) {
                const double* g = dout.data.data() + r * dout.cols + c * out_plane;
                double* dst = din.data.data() + r * din.cols + c * in_plane;
                const int* id = idx.data() + (r * ch + c) * out_plane;
                for (std::size_t p = 0; p < out_plane; ++p) dst[id[p]] += g[p];
            }
        }
        return din;
    }

    void forward_impl(const CnnArch& a, ForwardTrace& tr) const {
        const auto k = static_cast<std::size_t>(a.width_multiplier);
        const std::size_t c1 = 10 * k, c2 = 20 * k;
        Matrix z1;
        conv_forward(tr.input, 1, nn::kImage, params_[0], params_[1], z1);
        pool_forward(z1, c1, nn::kConv1Out, tr.p1, tr.pool1_idx);
        tr.a1 = tr.p1;
        nn::relu_inplace(tr.a1);
        Matrix z2;
        conv_forward(tr.a1, c1, nn::kPool1Out, params_[2], params_[3], z2);
        pool_forward(z2, c2, nn::kConv2Out, tr.p2, tr.pool2_idx);
        tr.a2 = tr.p2;
        nn::relu_inplace(tr.a2);
        tr.a3 = nn::dense_forward(tr.a2, params_[4], params_[5]);
        nn::relu_inplace(tr.a3);
        tr.logits = nn::dense_forward(tr.a3, params_[6], params_[7]);
    }

    void backward_impl(const CnnArch& a, const ForwardTrace& tr, const Matrix& dlogits,
                       std::vector<Tensor>& grads) const {
        const auto k = static_cast<std::size_t>(a.width_multiplier);
        const std::size_t c1 = 10 * k, c2 = 20 * k;
        Matrix da3 = nn::dense_backward(tr.a3, params_[6], dlogits, grads[6], grads[7]);
        for (std::size_t i = 0; i < da3.data.size(); ++i)
            if (tr.a3.data[i] <= 0.0) da3.data[i] = 0.0;
        Matrix da2 = nn::dense_backward(tr.a2, params_[4], da3, grads[4], grads[5]);
        for (std::size_t i = 0; i < da2.data.size(); ++i)
            if (tr.p2.data[i] <= 0.0) da2.data[i] = 0.0;
        Matrix dz2 = pool_backward(da2, c2, nn::kConv2Out, tr.pool2_idx, tr.input.rows);
        Matrix da1;
        conv_backward(tr.a1, c1, nn::kPool1Out, params_[2], dz2, grads[2], grads[3], &da1);
        for (std::size_t i = 0; i < da1.data.size(); ++i)
            if (tr.p1.data[i] <= 0.0) da1.data[i] = 0.0;
        Matrix dz1 = pool_backward(da1, c1, nn::kConv1Out, tr.pool1_idx, tr.input.rows);
        conv_backward(tr.input, 1, nn::kImage, params_[0], dz1, grads[0], grads[1], nullptr);
    }

    Architecture arch_;
    int num_classes_;
    std::size_t input_dim_ = 0;
    std::vector<Tensor> params_;
};

}  // namespace clstream
