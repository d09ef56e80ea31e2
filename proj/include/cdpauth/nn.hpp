#pragma once

// Minimal layer toolkit for the denoiser and codec. Activations are stored
// channel-major: a C x (B*H*W) row-major matrix, so a 3x3 convolution is an
// im2col gather followed by one GEMM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdpauth/error.hpp"

namespace cdpauth::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
    int batch = 0;
    int rows = 0;
    int cols = 0;
    int pixels() const { return rows * cols; }
    int columns() const { return batch * rows * cols; }
    bool operator==(const Shape&) const = default;
};

template <typename T>
struct Param {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
};

// Owns parameters at stable addresses; layers keep raw pointers into it.
template <typename T>
class ParamStore {
public:
    Param<T>* add(std::string name, int rows, int cols) {
        m_params.push_back({std::move(name), Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols)});
        return &m_params.back();
    }
    std::deque<Param<T>>& all() { return m_params; }
    const std::deque<Param<T>>& all() const { return m_params; }
    void zero_grad() {
        for (auto& p : m_params) p.grad.setZero();
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : m_params) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

private:
    std::deque<Param<T>> m_params;
};

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
template <typename T>
void init_uniform(Param<T>& p, int fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(u(rng));
}

template <typename T>
void init_normal(Param<T>& p, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(n(rng));
}

template <typename T>
Mat<T> im2col(const Mat<T>& x, const Shape& s, int k) {
    const int pad = k / 2;
    const int channels = static_cast<int>(x.rows());
    const int hw = s.pixels();
    Mat<T> cols(static_cast<Eigen::Index>(channels) * k * k, s.columns());
    for (int ci = 0; ci < channels; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = cols.row((ci * k + ky) * k + kx).data();
                const T* src = x.row(ci).data();
                for (int b = 0; b < s.batch; ++b)
                    for (int y = 0; y < s.rows; ++y) {
                        T* d = dst + b * hw + y * s.cols;
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= s.rows) {
                            std::fill(d, d + s.cols, T(0));
                            continue;
                        }
                        const T* srow = src + b * hw + sy * s.cols;
                        const int shift = kx - pad;
                        const int lo = std::max(0, -shift), hi = std::min(s.cols, s.cols - shift);
                        for (int xx = 0; xx < lo; ++xx) d[xx] = T(0);
                        std::copy(srow + lo + shift, srow + hi + shift, d + lo);
                        for (int xx = hi; xx < s.cols; ++xx) d[xx] = T(0);
                    }
            }
    return cols;
}

template <typename T>
Mat<T> col2im(const Mat<T>& cols, int channels, const Shape& s, int k) {
    const int pad = k / 2;
    const int hw = s.pixels();
    Mat<T> x = Mat<T>::Zero(channels, s.columns());
    for (int ci = 0; ci < channels; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = cols.row((ci * k + ky) * k + kx).data();
                T* dst = x.row(ci).data();
                for (int b = 0; b < s.batch; ++b)
                    for (int y = 0; y < s.rows; ++y) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= s.rows) continue;
                        const T* srow = src + b * hw + y * s.cols;
                        T* drow = dst + b * hw + sy * s.cols;
                        const int shift = kx - pad;
                        const int lo = std::max(0, -shift), hi = std::min(s.cols, s.cols - shift);
                        for (int xx = lo; xx < hi; ++xx) drow[xx + shift] += srow[xx];
                    }
            }
    return x;
}

// Stride-1 "same" convolution with k in {1, 3}.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int k)
        : m_in(in), m_out(out), m_k(k) {
        m_weight = store.add(name + ".weight", out, in * k * k);
        m_bias = store.add(name + ".bias", out, 1);
    }

    void init(std::mt19937_64& rng) {
        init_uniform(*m_weight, m_in * m_k * m_k, rng);
        init_uniform(*m_bias, m_in * m_k * m_k, rng);
    }

    // Stateless forward for inference.
    Mat<T> apply(const Mat<T>& x, const Shape& s) const {
        Mat<T> out;
        if (m_k == 1)
            out.noalias() = m_weight->value * x;
        else
            out.noalias() = m_weight->value * im2col(x, s, m_k);
        out.colwise() += m_bias->value.col(0);
        return out;
    }

    Mat<T> forward(const Mat<T>& x, const Shape& s, bool keep) {
        m_shape = s;
        Mat<T> out;
        if (m_k == 1) {
            out.noalias() = m_weight->value * x;
            if (keep) m_cols = x;
        } else {
            Mat<T> cols = im2col(x, s, m_k);
            out.noalias() = m_weight->value * cols;
            if (keep) m_cols = std::move(cols);
        }
        out.colwise() += m_bias->value.col(0);
        return out;
    }

    Mat<T> backward(const Mat<T>& dout) {
        m_weight->grad.noalias() += dout * m_cols.transpose();
        m_bias->grad.col(0) += dout.rowwise().sum();
        Mat<T> dcols;
        dcols.noalias() = m_weight->value.transpose() * dout;
        m_cols.resize(0, 0);
        if (m_k == 1) return dcols;
        return col2im(dcols, m_in, m_shape, m_k);
    }

    Param<T>& weight() { return *m_weight; }
    Param<T>& bias() { return *m_bias; }
    int in_channels() const { return m_in; }
    int out_channels() const { return m_out; }

private:
    int m_in = 0, m_out = 0, m_k = 1;
    Param<T>* m_weight = nullptr;
    Param<T>* m_bias = nullptr;
    Shape m_shape;
    Mat<T> m_cols;
};

// Dense layer over column vectors: x is in x B.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& name, int in, int out) : m_in(in) {
        m_weight = store.add(name + ".weight", out, in);
        m_bias = store.add(name + ".bias", out, 1);
    }

    void init(std::mt19937_64& rng) {
        init_uniform(*m_weight, m_in, rng);
        init_uniform(*m_bias, m_in, rng);
    }

    Mat<T> apply(const Mat<T>& x) const {
        Mat<T> out;
        out.noalias() = m_weight->value * x;
        out.colwise() += m_bias->value.col(0);
        return out;
    }

    Mat<T> forward(const Mat<T>& x, bool keep) {
        if (keep) m_x = x;
        Mat<T> out;
        out.noalias() = m_weight->value * x;
        out.colwise() += m_bias->value.col(0);
        return out;
    }

    Mat<T> backward(const Mat<T>& dout) {
        m_weight->grad.noalias() += dout * m_x.transpose();
        m_bias->grad.col(0) += dout.rowwise().sum();
        Mat<T> dx;
        dx.noalias() = m_weight->value.transpose() * dout;
        return dx;
    }

private:
    int m_in = 0;
    Param<T>* m_weight = nullptr;
    Param<T>* m_bias = nullptr;
    Mat<T> m_x;
};

template <typename T>
Mat<T> silu(const Mat<T>& x) {
    Mat<T> out(x.rows(), x.cols());
    out.array() = x.array() / (T(1) + (-x.array()).exp());
    return out;
}

// d/dx silu given the pre-activation x.
template <typename T>
Mat<T> silu_backward(const Mat<T>& x, const Mat<T>& dout) {
    Mat<T> out(x.rows(), x.cols());
    auto s = (T(1) + (-x.array()).exp()).inverse();
    out.array() = dout.array() * s * (T(1) + x.array() * (T(1) - s));
    return out;
}

// h[c, b, :] += e(c, b)
template <typename T>
void add_channel_bias(Mat<T>& h, const Mat<T>& e, const Shape& s) {
    const int hw = s.pixels();
    for (Eigen::Index c = 0; c < h.rows(); ++c)
        for (int b = 0; b < s.batch; ++b) h.row(c).segment(b * hw, hw).array() += e(c, b);
}

template <typename T>
Mat<T> channel_bias_backward(const Mat<T>& dh, const Shape& s) {
    const int hw = s.pixels();
    Mat<T> de(dh.rows(), s.batch);
    for (Eigen::Index c = 0; c < dh.rows(); ++c)
        for (int b = 0; b < s.batch; ++b) de(c, b) = dh.row(c).segment(b * hw, hw).sum();
    return de;
}

template <typename T>
Mat<T> avg_pool2(const Mat<T>& x, const Shape& s) {
    const Shape o{s.batch, s.rows / 2, s.cols / 2};
    Mat<T> out(x.rows(), o.columns());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const T* src = x.row(c).data();
        T* dst = out.row(c).data();
        for (int b = 0; b < s.batch; ++b)
            for (int y = 0; y < o.rows; ++y)
                for (int xx = 0; xx < o.cols; ++xx) {
                    const T* p = src + b * s.pixels() + 2 * y * s.cols + 2 * xx;
                    dst[b * o.pixels() + y * o.cols + xx] = T(0.25) * (p[0] + p[1] + p[s.cols] + p[s.cols + 1]);
                }
    }
    return out;
}

// Adjoint of avg_pool2; `s` is the input (fine) shape.
template <typename T>
Mat<T> avg_pool2_backward(const Mat<T>& dout, const Shape& s) {
    const Shape o{s.batch, s.rows / 2, s.cols / 2};
    Mat<T> dx(dout.rows(), s.columns());
    for (Eigen::Index c = 0; c < dout.rows(); ++c) {
        const T* src = dout.row(c).data();
        T* dst = dx.row(c).data();
        for (int b = 0; b < s.batch; ++b)
            for (int y = 0; y < s.rows; ++y)
                for (int xx = 0; xx < s.cols; ++xx)
                    dst[b * s.pixels() + y * s.cols + xx] = T(0.25) * src[b * o.pixels() + (y / 2) * o.cols + xx / 2];
    }
    return dx;
}

// Nearest-neighbour 2x upsampling; `s` is the input (coarse) shape.
template <typename T>
Mat<T> upsample2(const Mat<T>& x, const Shape& s) {
    const Shape o{s.batch, s.rows * 2, s.cols * 2};
    Mat<T> out(x.rows(), o.columns());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const T* src = x.row(c).data();
        T* dst = out.row(c).data();
        for (int b = 0; b < s.batch; ++b)
            for (int y = 0; y < o.rows; ++y)
                for (int xx = 0; xx < o.cols; ++xx)
                    dst[b * o.pixels() + y * o.cols + xx] = src[b * s.pixels() + (y / 2) * s.cols + xx / 2];
    }
    return out;
}

template <typename T>
Mat<T> upsample2_backward(const Mat<T>& dout, const Shape& s) {
    const Shape o{s.batch, s.rows * 2, s.cols * 2};
    Mat<T> dx = Mat<T>::Zero(dout.rows(), s.columns());
    for (Eigen::Index c = 0; c < dout.rows(); ++c) {
        const T* src = dout.row(c).data();
        T* dst = dx.row(c).data();
        for (int b = 0; b < s.batch; ++b)
            for (int y = 0; y < o.rows; ++y)
                for (int xx = 0; xx < o.cols; ++xx)
                    dst[b * s.pixels() + (y / 2) * s.cols + xx / 2] += src[b * o.pixels() + y * o.cols + xx];
    }
    return dx;
}

struct AdamOptions {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    explicit Adam(ParamStore<T>& store) : m_store(&store) {
        for (auto& p : store.all()) {
            m_m.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
            m_v.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
        }
    }

    void step(double lr, const AdamOptions& o) {
        ++m_step;
        const double c1 = 1.0 - std::pow(o.beta1, m_step);
        const double c2 = 1.0 - std::pow(o.beta2, m_step);
        std::size_t i = 0;
        for (auto& p : m_store->all()) {
            auto& m = m_m[i];
            auto& v = m_v[i];
            ++i;
            m = T(o.beta1) * m + T(1 - o.beta1) * p.grad;
            v = T(o.beta2) * v + T(1 - o.beta2) * p.grad.cwiseAbs2();
            if (lr == 0.0) continue;
            p.value.array() -= T(lr) * (m.array() / T(c1)) / ((v.array() / T(c2)).sqrt() + T(o.eps));
        }
    }

    long steps() const { return m_step; }

private:
    ParamStore<T>* m_store;
    std::vector<Mat<T>> m_m, m_v;
    long m_step = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm) {
    double sq = 0.0;
    for (const auto& p : store.all()) sq += static_cast<double>(p.grad.squaredNorm());
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm)
        for (auto& p : store.all()) p.grad *= static_cast<T>(max_norm / norm);
    return norm;
}

}  // namespace cdpauth::nn
