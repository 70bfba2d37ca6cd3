#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "logpeft/errors.hpp"
#include "logpeft/rng.hpp"

namespace logpeft {

class Tensor;

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, zero-filled
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    std::size_t size() const { return values.size(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeMismatch("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace detail

/// Dense double-precision array participating in a dynamically built
/// computation graph. Copying a Tensor copies the handle, not the storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(std::vector<int> shape, double value, bool requires_grad = false) {
        auto node = std::make_shared<detail::TensorNode>();
        std::size_t n = detail::shape_numel(shape);
        node->shape = std::move(shape);
        node->values.assign(n, value);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad = false) {
        if (detail::shape_numel(shape) != values.size())
            throw ShapeMismatch("value count does not match shape " + detail::shape_str(shape));
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(std::vector<int> shape, double stddev, std::mt19937_64& rng,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        GaussianSampler gauss;
        for (double& v : t.node_->values) v = stddev * gauss(rng);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return node_->values.size(); }

    int rows() const {
        if (ndim() != 2) throw ShapeMismatch("rows() requires a 2-d tensor");
        return node_->shape[0];
    }
    int cols() const {
        if (ndim() != 2) throw ShapeMismatch("cols() requires a 2-d tensor");
        return node_->shape[1];
    }

    double* data() { return node_->values.data(); }
    const double* data() const { return node_->values.data(); }
    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }

    double& at(int i) { return node_->values[static_cast<std::size_t>(i)]; }
    double at(int i) const { return node_->values[static_cast<std::size_t>(i)]; }
    double& at(int r, int c) {
        return node_->values[static_cast<std::size_t>(r) * cols() + c];
    }
    double at(int r, int c) const {
        return node_->values[static_cast<std::size_t>(r) * cols() + c];
    }

    /// Value of a scalar (size-1) tensor.
    double value() const {
        if (size() != 1) throw NotScalar("value() requires a scalar tensor");
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

    const char* op_name() const { return node_->op; }

    /// Reverse-mode sweep from a scalar. Accumulates dLoss/dT into the grad of
    /// every requires_grad tensor this scalar depends on; each graph node is
    /// visited exactly once, in reverse topological order.
    void backward() const {
        if (size() != 1) throw NotScalar("backward() requires a scalar loss");
        if (!node_->requires_grad) return;

        std::vector<detail::TensorNode*> order;
        std::unordered_set<detail::TensorNode*> seen;
        struct Frame {
            detail::TensorNode* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                detail::TensorNode* p = f.node->parents[f.next_parent++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop(**it);
        }
    }

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& shared_node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

    friend Tensor make_op(const char* op, std::vector<int> shape, std::vector<double> values,
                          const std::vector<Tensor>& inputs,
                          std::function<void(detail::TensorNode&)> backprop);

    std::shared_ptr<detail::TensorNode> node_;
};

/// Creates a graph node. The backprop callback is retained only when some
/// input requires gradients; inference-only graphs carry no edges at all.
inline Tensor make_op(const char* op, std::vector<int> shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      std::function<void(detail::TensorNode&)> backprop) {
    auto node = std::make_shared<detail::TensorNode>();
    if (detail::shape_numel(shape) != values.size())
        throw ShapeMismatch(std::string(op) + ": result size does not match shape");
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->op = op;
    bool rg = false;
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    node->requires_grad = rg;
    if (rg) {
        node->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) node->parents.push_back(t.shared_node());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

/// C = A * B for A[m x k], B[k x n]; dA = dC * B^T, dB = A^T * dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw ShapeMismatch("matmul: incompatible shapes " + detail::shape_str(a.shape()) +
                            " and " + detail::shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* pa = a.data();
    const double* pb = b.data();
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double av = pa[static_cast<std::size_t>(i) * k + l];
            const double* brow = pb + static_cast<std::size_t>(l) * n;
            double* crow = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [an, bn, m, k, n](detail::TensorNode& self) {
                       const double* dc = self.grad.data();
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (int i = 0; i < m; ++i)
                               for (int l = 0; l < k; ++l) {
                                   const double* dcrow = dc + static_cast<std::size_t>(i) * n;
                                   const double* brow =
                                       bn->values.data() + static_cast<std::size_t>(l) * n;
                                   double acc = 0.0;
                                   for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                                   an->grad[static_cast<std::size_t>(i) * k + l] += acc;
                               }
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int i = 0; i < m; ++i) {
                               const double* arow =
                                   an->values.data() + static_cast<std::size_t>(i) * k;
                               const double* dcrow = dc + static_cast<std::size_t>(i) * n;
                               for (int l = 0; l < k; ++l) {
                                   const double av = arow[l];
                                   double* dbrow =
                                       bn->grad.data() + static_cast<std::size_t>(l) * n;
                                   for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
                               }
                           }
                       }
                   });
}

/// C = A * B^T for A[m x k], B[n x k]; dA = dC * B, dB = dC^T * A.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw ShapeMismatch("matmul_nt: incompatible shapes " + detail::shape_str(a.shape()) +
                            " and " + detail::shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* pa = a.data();
    const double* pb = b.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = pb + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op("matmul_nt", {m, n}, std::move(out), {a, b},
                   [an, bn, m, k, n](detail::TensorNode& self) {
                       const double* dc = self.grad.data();
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (int i = 0; i < m; ++i) {
                               double* darow = an->grad.data() + static_cast<std::size_t>(i) * k;
                               const double* dcrow = dc + static_cast<std::size_t>(i) * n;
                               for (int j = 0; j < n; ++j) {
                                   const double c = dcrow[j];
                                   const double* brow =
                                       bn->values.data() + static_cast<std::size_t>(j) * k;
                                   for (int l = 0; l < k; ++l) darow[l] += c * brow[l];
                               }
                           }
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int i = 0; i < m; ++i) {
                               const double* arow =
                                   an->values.data() + static_cast<std::size_t>(i) * k;
                               const double* dcrow = dc + static_cast<std::size_t>(i) * n;
                               for (int j = 0; j < n; ++j) {
                                   const double c = dcrow[j];
                                   double* dbrow =
                                       bn->grad.data() + static_cast<std::size_t>(j) * k;
                                   for (int l = 0; l < k; ++l) dbrow[l] += c * arow[l];
                               }
                           }
                       }
                   });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeMismatch("add: shapes differ, " + detail::shape_str(a.shape()) + " vs " +
                            detail::shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op("add", a.shape(), std::move(out), {a, b},
                   [an, bn](detail::TensorNode& self) {
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                               an->grad[i] += self.grad[i];
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                               bn->grad[i] += self.grad[i];
                       }
                   });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeMismatch("mul: shapes differ");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op("mul", a.shape(), std::move(out), {a, b},
                   [an, bn](detail::TensorNode& self) {
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                               an->grad[i] += self.grad[i] * bn->values[i];
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                               bn->grad[i] += self.grad[i] * an->values[i];
                       }
                   });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
    auto an = a.node();
    return make_op("scale", a.shape(), std::move(out), {a},
                   [an, c](detail::TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           an->grad[i] += c * self.grad[i];
                   });
}

/// Elementwise product with a fixed coefficient array (dropout masks).
inline Tensor mul_const(const Tensor& a, std::vector<double> coeffs) {
    if (coeffs.size() != a.size()) throw ShapeMismatch("mul_const: coefficient count mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * coeffs[i];
    auto an = a.node();
    return make_op("mul_const", a.shape(), std::move(out), {a},
                   [an, coeffs = std::move(coeffs)](detail::TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           an->grad[i] += self.grad[i] * coeffs[i];
                   });
}

/// Broadcasts a length-n bias over the rows of X[m x n].
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.cols())
        throw ShapeMismatch("add_row_bias: bias length must equal column count");
    const int m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] =
                x.at(i, j) + bias.at(j);
    auto xn = x.node();
    auto bn = bias.node();
    return make_op("add_row_bias", x.shape(), std::move(out), {x, bias},
                   [xn, bn, m, n](detail::TensorNode& self) {
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                               xn->grad[i] += self.grad[i];
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int i = 0; i < m; ++i)
                               for (int j = 0; j < n; ++j)
                                   bn->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
                       }
                   });
}

/// max(0, x); the subgradient at exactly zero is taken as zero.
inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    auto xn = x.node();
    return make_op("relu", x.shape(), std::move(out), {x},
                   [xn](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           if (xn->values[i] > 0.0) xn->grad[i] += self.grad[i];
                   });
}

/// Softmax over each row of X[m x n], with max subtraction for overflow safety.
inline Tensor rowwise_softmax(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeMismatch("rowwise_softmax: expected a 2-d tensor");
    const int m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    for (int i = 0; i < m; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * n;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
    auto xn = x.node();
    return make_op("rowwise_softmax", x.shape(), std::move(out), {x},
                   [xn, m, n](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int i = 0; i < m; ++i) {
                           const double* y = self.values.data() + static_cast<std::size_t>(i) * n;
                           const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
                           double* dx = xn->grad.data() + static_cast<std::size_t>(i) * n;
                           double dot = 0.0;
                           for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
                           for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
                       }
                   });
}

/// Per-row normalization of X[m x n]: (x - mean) / sqrt(var + eps) * gain + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.ndim() != 2 || gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != x.cols() ||
        bias.dim(0) != x.cols())
        throw ShapeMismatch("layer_norm: gain/bias must match column count");
    const int m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    std::vector<double> inv_std(static_cast<std::size_t>(m));
    std::vector<double> means(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        means[static_cast<std::size_t>(i)] = mean;
        inv_std[static_cast<std::size_t>(i)] = inv;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j)
            orow[j] = (row[j] - mean) * inv * gain.at(j) + bias.at(j);
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return make_op(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, m, n, means = std::move(means),
         inv_std = std::move(inv_std)](detail::TensorNode& self) {
            for (int i = 0; i < m; ++i) {
                const double* row = xn->values.data() + static_cast<std::size_t>(i) * n;
                const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
                const double mean = means[static_cast<std::size_t>(i)];
                const double inv = inv_std[static_cast<std::size_t>(i)];
                if (gn->requires_grad || bn->requires_grad) {
                    if (gn->requires_grad) gn->ensure_grad();
                    if (bn->requires_grad) bn->ensure_grad();
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (row[j] - mean) * inv;
                        if (gn->requires_grad) gn->grad[j] += dy[j] * xhat;
                        if (bn->requires_grad) bn->grad[j] += dy[j];
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* dx = xn->grad.data() + static_cast<std::size_t>(i) * n;
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (row[j] - mean) * inv;
                        const double dxhat = dy[j] * gn->values[static_cast<std::size_t>(j)];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (row[j] - mean) * inv;
                        const double dxhat = dy[j] * gn->values[static_cast<std::size_t>(j)];
                        dx[j] += inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
            }
        });
}

/// Mean of the rows of H[T x d] whose mask entry is 1. Masked rows contribute
/// nothing to the value or the gradient.
inline Tensor masked_mean_pool(const Tensor& h, const std::vector<int>& mask) {
    if (h.ndim() != 2 || static_cast<int>(mask.size()) != h.rows())
        throw ShapeMismatch("masked_mean_pool: mask length must equal row count");
    const int t = h.rows(), d = h.cols();
    int count = 0;
    for (int v : mask) count += (v != 0) ? 1 : 0;
    if (count == 0) throw EmptyMask("masked_mean_pool: mask selects no rows");
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < t; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const double* row = h.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += row[j];
    }
    for (double& v : out) v /= count;
    auto hn = h.node();
    return make_op("masked_mean_pool", {d}, std::move(out), {h},
                   [hn, mask, t, d, count](detail::TensorNode& self) {
                       if (!hn->requires_grad) return;
                       hn->ensure_grad();
                       for (int i = 0; i < t; ++i) {
                           if (!mask[static_cast<std::size_t>(i)]) continue;
                           double* drow = hn->grad.data() + static_cast<std::size_t>(i) * d;
                           for (int j = 0; j < d; ++j)
                               drow[j] += self.grad[static_cast<std::size_t>(j)] / count;
                       }
                   });
}

/// Row t of the result is token_table[ids[t]] + pos_table[t].
inline Tensor embed(const Tensor& token_table, const Tensor& pos_table,
                    const std::vector<int>& ids) {
    if (token_table.ndim() != 2 || pos_table.ndim() != 2 ||
        token_table.cols() != pos_table.cols())
        throw ShapeMismatch("embed: token and position tables must share width");
    const int t = static_cast<int>(ids.size());
    const int d = token_table.cols();
    if (t > pos_table.rows())
        throw SequenceTooLong("sequence length " + std::to_string(t) +
                              " exceeds positional table rows " +
                              std::to_string(pos_table.rows()));
    for (int id : ids)
        if (id < 0 || id >= token_table.rows())
            throw IdOutOfRange("token id " + std::to_string(id) + " outside vocabulary of " +
                               std::to_string(token_table.rows()));
    std::vector<double> out(static_cast<std::size_t>(t) * d);
    for (int i = 0; i < t; ++i) {
        const double* erow = token_table.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* prow = pos_table.data() + static_cast<std::size_t>(i) * d;
        double* orow = out.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = erow[j] + prow[j];
    }
    auto en = token_table.node();
    auto pn = pos_table.node();
    return make_op("embed", {t, d}, std::move(out), {token_table, pos_table},
                   [en, pn, ids, t, d](detail::TensorNode& self) {
                       for (int i = 0; i < t; ++i) {
                           const double* drow = self.grad.data() + static_cast<std::size_t>(i) * d;
                           if (en->requires_grad) {
                               en->ensure_grad();
                               double* erow =
                                   en->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                               for (int j = 0; j < d; ++j) erow[j] += drow[j];
                           }
                           if (pn->requires_grad) {
                               pn->ensure_grad();
                               double* prow = pn->grad.data() + static_cast<std::size_t>(i) * d;
                               for (int j = 0; j < d; ++j) prow[j] += drow[j];
                           }
                       }
                   });
}

/// Concatenates same-height matrices along columns.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw EmptyInput("concat_cols: no inputs");
    const int m = parts.front().rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.rows() != m)
            throw ShapeMismatch("concat_cols: inputs must share row count");
        total += p.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(m) * total);
    int off = 0;
    for (const Tensor& p : parts) {
        const int c = p.cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j)
                out[static_cast<std::size_t>(i) * total + off + j] = p.at(i, j);
        off += c;
    }
    std::vector<detail::TensorNode*> nodes;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_op("concat_cols", {m, total}, std::move(out), parts,
                   [nodes, widths, m, total](detail::TensorNode& self) {
                       int off = 0;
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                           const int c = widths[k];
                           if (nodes[k]->requires_grad) {
                               nodes[k]->ensure_grad();
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < c; ++j)
                                       nodes[k]->grad[static_cast<std::size_t>(i) * c + j] +=
                                           self.grad[static_cast<std::size_t>(i) * total + off +
                                                     j];
                           }
                           off += c;
                       }
                   });
}

/// Stacks 1-d tensors of equal length into the rows of a matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw EmptyInput("stack_rows: no inputs");
    const int n = rows.front().dim(0);
    for (const Tensor& r : rows)
        if (r.ndim() != 1 || r.dim(0) != n)
            throw ShapeMismatch("stack_rows: inputs must be 1-d of equal length");
    const int m = static_cast<int>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = rows[static_cast<std::size_t>(i)].at(j);
    std::vector<detail::TensorNode*> nodes;
    for (const Tensor& r : rows) nodes.push_back(r.node());
    return make_op("stack_rows", {m, n}, std::move(out), rows,
                   [nodes, m, n](detail::TensorNode& self) {
                       for (int i = 0; i < m; ++i) {
                           auto* p = nodes[static_cast<std::size_t>(i)];
                           if (!p->requires_grad) continue;
                           p->ensure_grad();
                           for (int j = 0; j < n; ++j)
                               p->grad[static_cast<std::size_t>(j)] +=
                                   self.grad[static_cast<std::size_t>(i) * n + j];
                       }
                   });
}

/// y = W x + b for W[o x i], x[i], b[o].
inline Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
    if (w.ndim() != 2 || x.ndim() != 1 || b.ndim() != 1 || w.cols() != x.dim(0) ||
        w.rows() != b.dim(0))
        throw ShapeMismatch("linear: incompatible shapes");
    const int o = w.rows(), in = w.cols();
    std::vector<double> out(static_cast<std::size_t>(o));
    for (int r = 0; r < o; ++r) {
        const double* wrow = w.data() + static_cast<std::size_t>(r) * in;
        double acc = b.at(r);
        for (int c = 0; c < in; ++c) acc += wrow[c] * x.at(c);
        out[static_cast<std::size_t>(r)] = acc;
    }
    auto wn = w.node();
    auto xn = x.node();
    auto bn = b.node();
    return make_op("linear", {o}, std::move(out), {w, x, b},
                   [wn, xn, bn, o, in](detail::TensorNode& self) {
                       for (int r = 0; r < o; ++r) {
                           const double dy = self.grad[static_cast<std::size_t>(r)];
                           if (wn->requires_grad) {
                               wn->ensure_grad();
                               double* wrow = wn->grad.data() + static_cast<std::size_t>(r) * in;
                               for (int c = 0; c < in; ++c) wrow[c] += dy * xn->values[static_cast<std::size_t>(c)];
                           }
                           if (xn->requires_grad) {
                               xn->ensure_grad();
                               const double* wrow =
                                   wn->values.data() + static_cast<std::size_t>(r) * in;
                               for (int c = 0; c < in; ++c) xn->grad[static_cast<std::size_t>(c)] += dy * wrow[c];
                           }
                           if (bn->requires_grad) {
                               bn->ensure_grad();
                               bn->grad[static_cast<std::size_t>(r)] += dy;
                           }
                       }
                   });
}

/// Sum of all entries, as a scalar.
inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
    auto xn = x.node();
    return make_op("sum", {1}, {acc}, {x},
                   [xn](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (double& g : xn->grad) g += self.grad[0];
                   });
}

/// Weighted cross-entropy over a batch of binary-class logits[N x 2]:
/// -(1/N) sum_i w_{y_i} log softmax(logits_i)[y_i], fused with softmax.
inline Tensor weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                     double w0, double w1) {
    if (logits.ndim() != 2 || logits.cols() != 2)
        throw ShapeMismatch("weighted_cross_entropy: logits must be N x 2");
    const int n = logits.rows();
    if (n == 0 || labels.empty()) throw EmptyBatch("weighted_cross_entropy: empty batch");
    if (static_cast<int>(labels.size()) != n)
        throw LengthMismatch("weighted_cross_entropy: labels do not match batch size");
    for (int y : labels)
        if (y != 0 && y != 1) throw ArgumentError("labels must be 0 or 1");
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double l0 = logits.at(i, 0), l1 = logits.at(i, 1);
        const double mx = std::max(l0, l1);
        const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
        const int y = labels[static_cast<std::size_t>(i)];
        const double w = y == 0 ? w0 : w1;
        loss -= w * ((y == 0 ? l0 : l1) - lse);
    }
    loss /= n;
    auto ln = logits.node();
    return make_op("weighted_cross_entropy", {1}, {loss}, {logits},
                   [ln, labels, n, w0, w1](detail::TensorNode& self) {
                       if (!ln->requires_grad) return;
                       ln->ensure_grad();
                       const double gout = self.grad[0];
                       for (int i = 0; i < n; ++i) {
                           const double l0 = ln->values[static_cast<std::size_t>(i) * 2];
                           const double l1 = ln->values[static_cast<std::size_t>(i) * 2 + 1];
                           const double mx = std::max(l0, l1);
                           const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
                           const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
                           const int y = labels[static_cast<std::size_t>(i)];
                           const double w = (y == 0 ? w0 : w1) / n;
                           ln->grad[static_cast<std::size_t>(i) * 2] +=
                               gout * w * (p0 - (y == 0 ? 1.0 : 0.0));
                           ln->grad[static_cast<std::size_t>(i) * 2 + 1] +=
                               gout * w * (p1 - (y == 1 ? 1.0 : 0.0));
                       }
                   });
}

/// Inverted dropout: keeps each entry with probability 1-p and rescales by
/// 1/(1-p). p = 0 is the identity. Draw order is consumed deterministically.
inline Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout probability must be in [0,1)");
    if (p == 0.0) return x;
    std::vector<double> coeffs(x.size());
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& c : coeffs) c = uniform_double(rng) < p ? 0.0 : keep_scale;
    return mul_const(x, std::move(coeffs));
}

/// Central-difference gradient check. Rebuilds the loss through `f` for every
/// perturbed coordinate of `params` and returns the maximum over coordinates
/// of |analytic - numeric| / max(1, |numeric|). `f` must be deterministic.
inline double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                double eps) {
    if (eps <= 0.0) throw ArgumentError("finite_diff_check: eps must be positive");
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + eps;
            const double up = f().value();
            p.data()[i] = saved - eps;
            const double down = f().value();
            p.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double err =
                std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace logpeft
