#include "sensitrim/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "sensitrim/errors.hpp"

namespace sensitrim {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

using DataPtr = std::shared_ptr<TensorData>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

DataPtr new_output(Shape shape) {
    auto data = std::make_shared<TensorData>();
    data->values.assign(shape_numel(shape), 0.0f);
    data->shape = std::move(shape);
    return data;
}

Tensor finish(const DataPtr& out, bool track, const char* op, std::function<void()> backward) {
    if (track) {
        out->requires_grad = true;
        Tape::active()->record(op, out, std::move(backward));
    }
    return make_tensor(out);
}

std::size_t trailing_dim(const Tensor& t, const char* op) {
    if (t.rank() == 0) throw ShapeError(std::string(op) + ": expected at least rank 1, got a scalar");
    return t.shape().back();
}

void require_vector(const Tensor& v, std::size_t length, const Tensor& t, const char* op) {
    if (v.rank() != 1 || v.dim(0) != length) {
        throw ShapeError(std::string(op) + ": vector of shape " + shape_str(v.shape()) +
                         " does not match trailing dimension of " + shape_str(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    auto out = new_output({m, p});
    if (k > 0) {
        MatrixMap(out->values.data(), m, p).noalias() =
            ConstMatrixMap(a.values().data(), m, k) * ConstMatrixMap(b.values().data(), k, p);
    }
    const bool track = tracking({&a, &b});
    DataPtr da = a.storage(), db = b.storage();
    return finish(out, track, "matmul", [da, db, out, m, k, p] {
        if (k == 0) return;
        ConstMatrixMap gy(out->grad.data(), m, p);
        if (da->requires_grad) {
            MatrixMap(da->ensure_grad().data(), m, k).noalias() +=
                gy * ConstMatrixMap(db->values.data(), k, p).transpose();
        }
        if (db->requires_grad) {
            MatrixMap(db->ensure_grad().data(), k, p).noalias() +=
                ConstMatrixMap(da->values.data(), m, k).transpose() * gy;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
    }
    auto out = new_output(a.shape());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] + bv[i];
    DataPtr da = a.storage(), db = b.storage();
    return finish(out, tracking({&a, &b}), "add", [da, db, out] {
        for (const auto& d : {da, db}) {
            if (!d->requires_grad) continue;
            auto& g = d->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i];
        }
    });
}

Tensor add_bias(const Tensor& t, const Tensor& v) {
    const std::size_t d = trailing_dim(t, "add_bias");
    require_vector(v, d, t, "add_bias");
    auto out = new_output(t.shape());
    auto tv = t.values(), vv = v.values();
    for (std::size_t i = 0; i < tv.size(); ++i) out->values[i] = tv[i] + vv[i % d];
    DataPtr dt = t.storage(), dv = v.storage();
    return finish(out, tracking({&t, &v}), "add_bias", [dt, dv, out, d] {
        const auto& gy = out->grad;
        if (dt->requires_grad) {
            auto& g = dt->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
        }
        if (dv->requires_grad && d > 0) {
            auto& g = dv->ensure_grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i % d] += gy[i];
        }
    });
}

Tensor broadcast_mul(const Tensor& t, const Tensor& v) {
    const std::size_t d = trailing_dim(t, "broadcast_mul");
    require_vector(v, d, t, "broadcast_mul");
    auto out = new_output(t.shape());
    auto tv = t.values(), vv = v.values();
    for (std::size_t i = 0; i < tv.size(); ++i) out->values[i] = tv[i] * vv[i % d];
    DataPtr dt = t.storage(), dv = v.storage();
    return finish(out, tracking({&t, &v}), "broadcast_mul", [dt, dv, out, d] {
        const auto& gy = out->grad;
        if (dt->requires_grad) {
            auto& g = dt->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * dv->values[i % d];
        }
        if (dv->requires_grad && d > 0) {
            auto& g = dv->ensure_grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i % d] += gy[i] * dt->values[i];
        }
    });
}

Tensor scale(const Tensor& t, float factor) {
    auto out = new_output(t.shape());
    auto tv = t.values();
    for (std::size_t i = 0; i < tv.size(); ++i) out->values[i] = tv[i] * factor;
    DataPtr dt = t.storage();
    return finish(out, tracking({&t}), "scale", [dt, out, factor] {
        if (!dt->requires_grad) return;
        auto& g = dt->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out->grad[i] * factor;
    });
}

Tensor sum(const Tensor& t) {
    double acc = 0.0;
    for (float x : t.values()) acc += x;
    auto out = new_output({});
    out->values[0] = static_cast<float>(acc);
    DataPtr dt = t.storage();
    return finish(out, tracking({&t}), "sum", [dt, out] {
        if (!dt->requires_grad) return;
        const float gy = out->grad[0];
        for (auto& g : dt->ensure_grad()) g += gy;
    });
}

Tensor softmax_rows(const Tensor& t) {
    const std::size_t d = trailing_dim(t, "softmax_rows");
    auto out = new_output(t.shape());
    const std::size_t rows = d == 0 ? 0 : t.numel() / d;
    auto tv = t.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = tv.data() + r * d;
        float* y = out->values.data() + r * d;
        const float mx = *std::max_element(x, x + d);
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        const float inv = static_cast<float>(1.0 / total);
        for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
    }
    DataPtr dt = t.storage();
    return finish(out, tracking({&t}), "softmax_rows", [dt, out, d, rows] {
        if (!dt->requires_grad) return;
        auto& g = dt->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const float* y = out->values.data() + r * d;
            const float* gy = out->grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(gy[j]) * y[j];
            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (gy[j] - static_cast<float>(dot));
        }
    });
}

Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, float eps) {
    const std::size_t d = trailing_dim(t, "layer_norm");
    if (d < 2) throw ShapeError("layer_norm: trailing dimension must be at least 2, got " + shape_str(t.shape()));
    if (!(eps > 0.0f)) throw InputError("layer_norm: eps must be positive");
    require_vector(gain, d, t, "layer_norm");
    require_vector(bias, d, t, "layer_norm");
    const std::size_t rows = t.numel() / d;
    auto out = new_output(t.shape());
    // Normalized rows and inverse std are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<float>>(t.numel());
    auto inv_std = std::make_shared<std::vector<float>>(rows);
    auto tv = t.values(), gv = gain.values(), bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = tv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = static_cast<float>(is);
        for (std::size_t j = 0; j < d; ++j) {
            const float h = static_cast<float>((x[j] - mean) * is);
            (*xhat)[r * d + j] = h;
            out->values[r * d + j] = h * gv[j] + bv[j];
        }
    }
    DataPtr dt = t.storage(), dg = gain.storage(), db = bias.storage();
    return finish(out, tracking({&t, &gain, &bias}), "layer_norm", [dt, dg, db, out, xhat, inv_std, d, rows] {
        const auto& gy = out->grad;
        if (dg->requires_grad) {
            auto& g = dg->ensure_grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i % d] += gy[i] * (*xhat)[i];
        }
        if (db->requires_grad) {
            auto& g = db->ensure_grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i % d] += gy[i];
        }
        if (!dt->requires_grad) return;
        auto& g = dt->ensure_grad();
        std::vector<float> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dxhat[j] = gy[r * d + j] * dg->values[j];
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += static_cast<double>(dxhat[j]) * (*xhat)[r * d + j];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            const double is = (*inv_std)[r];
            for (std::size_t j = 0; j < d; ++j) {
                g[r * d + j] +=
                    static_cast<float>(is * (dxhat[j] - mean_dxhat - (*xhat)[r * d + j] * mean_dxhat_xhat));
            }
        }
    });
}

Tensor gelu(const Tensor& t) {
    constexpr float kInvSqrt2 = 0.70710678118654752f;
    auto out = new_output(t.shape());
    auto tv = t.values();
    for (std::size_t i = 0; i < tv.size(); ++i) {
        out->values[i] = 0.5f * tv[i] * (1.0f + std::erf(tv[i] * kInvSqrt2));
    }
    DataPtr dt = t.storage();
    return finish(out, tracking({&t}), "gelu", [dt, out] {
        if (!dt->requires_grad) return;
        constexpr float kInvSqrt2Pi = 0.39894228040143268f;
        auto& g = dt->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float x = dt->values[i];
            const float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
            const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
            g[i] += out->grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B×C], got " + shape_str(logits.shape()));
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) +
                         " rows");
    }
    if (batch == 0 || classes == 0) throw ShapeError("cross_entropy: empty logits " + shape_str(logits.shape()));
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
            throw InputError("cross_entropy: label " + std::to_string(labels[b]) + " at row " + std::to_string(b) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
    auto probs = std::make_shared<std::vector<float>>(logits.numel());
    auto lv = logits.values();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const float* x = lv.data() + b * classes;
        const float mx = *std::max_element(x, x + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(x[c] - mx));
        for (std::size_t c = 0; c < classes; ++c) {
            (*probs)[b * classes + c] = static_cast<float>(std::exp(static_cast<double>(x[c] - mx)) / z);
        }
        total += std::log(z) - static_cast<double>(x[labels[b]] - mx);
    }
    auto out = new_output({});
    out->values[0] = static_cast<float>(total / static_cast<double>(batch));
    std::vector<std::int32_t> kept(labels.begin(), labels.end());
    DataPtr dl = logits.storage();
    return finish(out, tracking({&logits}), "cross_entropy", [dl, out, probs, kept = std::move(kept), batch, classes] {
        if (!dl->requires_grad) return;
        auto& g = dl->ensure_grad();
        const float w = out->grad[0] / static_cast<float>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < classes; ++c) {
                const float onehot = static_cast<std::size_t>(kept[b]) == c ? 1.0f : 0.0f;
                g[b * classes + c] += w * ((*probs)[b * classes + c] - onehot);
            }
        }
    });
}

Tensor l1_norm(const Tensor& t) {
    double acc = 0.0;
    for (float x : t.values()) acc += std::fabs(x);
    auto out = new_output({});
    out->values[0] = static_cast<float>(acc);
    DataPtr dt = t.storage();
    return finish(out, tracking({&t}), "l1_norm", [dt, out] {
        if (!dt->requires_grad) return;
        const float gy = out->grad[0];
        auto& g = dt->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float x = dt->values[i];
            g[i] += x > 0.0f ? gy : (x < 0.0f ? -gy : 0.0f);
        }
    });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
    if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
    const std::size_t n_rows = table.dim(0), d = table.dim(1);
    for (auto r : rows) {
        if (r >= n_rows) {
            throw InputError("gather_rows: row " + std::to_string(r) + " outside table " + shape_str(table.shape()));
        }
    }
    auto out = new_output({rows.size(), d});
    auto tv = table.values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(tv.data() + rows[i] * d, d, out->values.data() + i * d);
    }
    std::vector<std::size_t> kept(rows.begin(), rows.end());
    DataPtr dt = table.storage();
    return finish(out, tracking({&table}), "gather_rows", [dt, out, kept = std::move(kept), d] {
        if (!dt->requires_grad) return;
        auto& g = dt->ensure_grad();
        for (std::size_t i = 0; i < kept.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) g[kept[i] * d + j] += out->grad[i * d + j];
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
    const std::size_t vocab = table.dim(0);
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw InputError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    return gather_rows(table, rows);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
    const std::size_t batch = layout.batch, seq = layout.seq;
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw ShapeError("attention: q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()) + " must be equal and rank 2");
    }
    if (q.dim(0) != batch * seq) {
        throw ShapeError("attention: " + std::to_string(q.dim(0)) + " rows for batch " + std::to_string(batch) +
                         " × seq " + std::to_string(seq));
    }
    std::size_t width = 0;
    for (auto w : layout.head_widths) width += w;
    if (width != q.dim(1)) {
        throw ShapeError("attention: head widths sum to " + std::to_string(width) + " but q is " +
                         shape_str(q.shape()));
    }
    if (!layout.lengths.empty() && layout.lengths.size() != batch) {
        throw ShapeError("attention: lengths has " + std::to_string(layout.lengths.size()) + " entries for batch " +
                         std::to_string(batch));
    }
    for (auto len : layout.lengths) {
        if (len == 0 || len > seq) throw InputError("attention: sequence length " + std::to_string(len) + " invalid");
    }

    const std::size_t heads = layout.head_widths.size();
    std::vector<std::size_t> offsets(heads, 0);
    for (std::size_t h = 1; h < heads; ++h) offsets[h] = offsets[h - 1] + layout.head_widths[h - 1];

    auto probs = std::make_shared<std::vector<float>>(batch * heads * seq * seq, 0.0f);
    auto out = new_output(q.shape());
    const float* qv = q.values().data();
    const float* kv = k.values().data();
    const float* vv = v.values().data();
    std::vector<double> scores(seq);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t valid = layout.lengths.empty() ? seq : layout.lengths[b];
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = offsets[h], w = layout.head_widths[h];
            float* p = probs->data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
                const float* qi = qv + (b * seq + i) * width + off;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < valid; ++j) {
                    const float* kj = kv + (b * seq + j) * width + off;
                    float dot = 0.0f;
                    for (std::size_t c = 0; c < w; ++c) dot += qi[c] * kj[c];
                    scores[j] = static_cast<double>(layout.scale * dot);
                    mx = std::max(mx, scores[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < valid; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    z += scores[j];
                }
                for (std::size_t j = 0; j < valid; ++j) p[i * seq + j] = static_cast<float>(scores[j] / z);
                float* oi = out->values.data() + (b * seq + i) * width + off;
                for (std::size_t j = 0; j < valid; ++j) {
                    const float pij = p[i * seq + j];
                    const float* vj = vv + (b * seq + j) * width + off;
                    for (std::size_t c = 0; c < w; ++c) oi[c] += pij * vj[c];
                }
            }
        }
    }

    DataPtr dq = q.storage(), dk = k.storage(), dv = v.storage();
    return finish(out, tracking({&q, &k, &v}), "attention",
                  [dq, dk, dv, out, probs, offsets, layout, width, heads] {
        const std::size_t batch = layout.batch, seq = layout.seq;
        float* gq = dq->requires_grad ? dq->ensure_grad().data() : nullptr;
        float* gk = dk->requires_grad ? dk->ensure_grad().data() : nullptr;
        float* gv = dv->requires_grad ? dv->ensure_grad().data() : nullptr;
        const float* go = out->grad.data();
        std::vector<float> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t valid = layout.lengths.empty() ? seq : layout.lengths[b];
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = offsets[h], w = layout.head_widths[h];
                if (w == 0) continue;
                const float* p = probs->data() + (b * heads + h) * seq * seq;
                for (std::size_t i = 0; i < seq; ++i) {
                    const float* goi = go + (b * seq + i) * width + off;
                    double weighted = 0.0;
                    for (std::size_t j = 0; j < valid; ++j) {
                        const float* vj = dv->values.data() + (b * seq + j) * width + off;
                        float dot = 0.0f;
                        for (std::size_t c = 0; c < w; ++c) dot += goi[c] * vj[c];
                        dp[j] = dot;
                        weighted += static_cast<double>(dot) * p[i * seq + j];
                        if (gv) {
                            float* gvj = gv + (b * seq + j) * width + off;
                            const float pij = p[i * seq + j];
                            for (std::size_t c = 0; c < w; ++c) gvj[c] += pij * goi[c];
                        }
                    }
                    if (!gq && !gk) continue;
                    const float* qi = dq->values.data() + (b * seq + i) * width + off;
                    float* gqi = gq ? gq + (b * seq + i) * width + off : nullptr;
                    for (std::size_t j = 0; j < valid; ++j) {
                        const float ds = p[i * seq + j] * (dp[j] - static_cast<float>(weighted)) * layout.scale;
                        if (ds == 0.0f) continue;
                        const float* kj = dk->values.data() + (b * seq + j) * width + off;
                        if (gqi) {
                            for (std::size_t c = 0; c < w; ++c) gqi[c] += ds * kj[c];
                        }
                        if (gk) {
                            float* gkj = gk + (b * seq + j) * width + off;
                            for (std::size_t c = 0; c < w; ++c) gkj[c] += ds * qi[c];
                        }
                    }
                }
            }
        }
    });
}

}  // namespace sensitrim
