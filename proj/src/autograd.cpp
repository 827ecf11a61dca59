#include "pess/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "pess/errors.hpp"

namespace pess::ad {

void gemm_acc(const Mat& a, const Mat& b, Mat& c) {
    // C (r x n) += A (r x m) * B (m x n), i-k-j order for row-major locality.
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row_ptr(i);
        double* cr = c.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
}

void gemm_nt_acc(const Mat& a, const Mat& b, Mat& c) {
    // C (r x n) += A (r x m) * B^T, B is n x m.
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row_ptr(i);
        double* cr = c.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* br = b.row_ptr(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
            cr[j] += s;
        }
    }
}

void gemm_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    // C (m x n) += A^T * B, A is r x m, B is r x n.
    for (int k = 0; k < a.rows; ++k) {
        const double* ar = a.row_ptr(k);
        const double* br = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = ar[i];
            if (aki == 0.0) continue;
            double* cr = c.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
        }
    }
}

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::make_op(Mat value, bool rg, std::function<void(Graph&)> back) {
    Node n;
    const int r = value.rows, c = value.cols;
    n.val = std::move(value);
    n.rg = rg;
    if (rg) {
        n.grad = Mat::zeros(r, c);
        n.back = std::move(back);
    }
    return push(std::move(n));
}

NodeId Graph::input(Mat value) {
    Node n;
    n.val = std::move(value);
    return push(std::move(n));
}

NodeId Graph::input_ref(const Mat* value) {
    Node n;
    n.pval = value;
    return push(std::move(n));
}

NodeId Graph::param(const Mat* value, Mat* grad_out) {
    Node n;
    n.pval = value;
    n.rg = true;
    n.grad = Mat::zeros(value->rows, value->cols);
    n.external_grad = grad_out;
    return push(std::move(n));
}

const Mat& Graph::value(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.pval ? *n.pval : n.val;
}

Mat& Graph::grad(NodeId id) { return nodes_[static_cast<size_t>(id)].grad; }

bool Graph::requires_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].rg; }

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.cols != bv.rows) throw ArgumentError("matmul: inner dimensions differ");
    Mat out(av.rows, bv.cols);
    gemm_acc(av, bv, out);
    const bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, b, id](Graph& g) {
            const Mat& dc = g.grad(id);
            if (g.requires_grad(a)) gemm_nt_acc(dc, g.value(b), g.grad(a));
            if (g.requires_grad(b)) gemm_tn_acc(g.value(a), dc, g.grad(b));
        };
    }
    return id;
}

NodeId Graph::matmul_nt(NodeId a, NodeId b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.cols != bv.cols) throw ArgumentError("matmul_nt: inner dimensions differ");
    Mat out(av.rows, bv.rows);
    gemm_nt_acc(av, bv, out);
    const bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, b, id](Graph& g) {
            const Mat& dc = g.grad(id);
            if (g.requires_grad(a)) gemm_acc(dc, g.value(b), g.grad(a));
            if (g.requires_grad(b)) gemm_tn_acc(dc, g.value(a), g.grad(b));
        };
    }
    return id;
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows != bv.rows || av.cols != bv.cols) throw ArgumentError("add: shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.size(); ++i) out.a[i] += bv.a[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, b, id](Graph& g) {
            const Mat& dc = g.grad(id);
            if (g.requires_grad(a)) {
                Mat& da = g.grad(a);
                for (size_t i = 0; i < dc.size(); ++i) da.a[i] += dc.a[i];
            }
            if (g.requires_grad(b)) {
                Mat& db = g.grad(b);
                for (size_t i = 0; i < dc.size(); ++i) db.a[i] += dc.a[i];
            }
        };
    }
    return id;
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows != bv.rows || av.cols != bv.cols) throw ArgumentError("sub: shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.size(); ++i) out.a[i] -= bv.a[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, b, id](Graph& g) {
            const Mat& dc = g.grad(id);
            if (g.requires_grad(a)) {
                Mat& da = g.grad(a);
                for (size_t i = 0; i < dc.size(); ++i) da.a[i] += dc.a[i];
            }
            if (g.requires_grad(b)) {
                Mat& db = g.grad(b);
                for (size_t i = 0; i < dc.size(); ++i) db.a[i] -= dc.a[i];
            }
        };
    }
    return id;
}

NodeId Graph::elementwise_mul(NodeId a, NodeId b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows != bv.rows || av.cols != bv.cols)
        throw ArgumentError("elementwise_mul: shape mismatch");
    Mat out = av;
    for (size_t i = 0; i < out.size(); ++i) out.a[i] *= bv.a[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, b, id](Graph& g) {
            const Mat& dc = g.grad(id);
            if (g.requires_grad(a)) {
                const Mat& bv2 = g.value(b);
                Mat& da = g.grad(a);
                for (size_t i = 0; i < dc.size(); ++i) da.a[i] += dc.a[i] * bv2.a[i];
            }
            if (g.requires_grad(b)) {
                const Mat& av2 = g.value(a);
                Mat& db = g.grad(b);
                for (size_t i = 0; i < dc.size(); ++i) db.a[i] += dc.a[i] * av2.a[i];
            }
        };
    }
    return id;
}

NodeId Graph::add_rowvec(NodeId a, NodeId bias) {
    const Mat& av = value(a);
    const Mat& bv = value(bias);
    if (bv.rows != 1 || bv.cols != av.cols) throw ArgumentError("add_rowvec: bias must be 1 x cols");
    Mat out = av;
    for (int r = 0; r < out.rows; ++r) {
        double* orow = out.row_ptr(r);
        for (int c = 0; c < out.cols; ++c) orow[c] += bv.a[static_cast<size_t>(c)];
    }
    const bool rg = requires_grad(a) || requires_grad(bias);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, bias, id](Graph& g) {
            const Mat& dc = g.grad(id);
            if (g.requires_grad(a)) {
                Mat& da = g.grad(a);
                for (size_t i = 0; i < dc.size(); ++i) da.a[i] += dc.a[i];
            }
            if (g.requires_grad(bias)) {
                Mat& db = g.grad(bias);
                for (int r = 0; r < dc.rows; ++r) {
                    const double* drow = dc.row_ptr(r);
                    for (int c = 0; c < dc.cols; ++c) db.a[static_cast<size_t>(c)] += drow[c];
                }
            }
        };
    }
    return id;
}

NodeId Graph::scale(NodeId a, double s) {
    Mat out = value(a);
    for (double& x : out.a) x *= s;
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, s, id](Graph& g) {
            const Mat& dc = g.grad(id);
            Mat& da = g.grad(a);
            for (size_t i = 0; i < dc.size(); ++i) da.a[i] += s * dc.a[i];
        };
    }
    return id;
}

NodeId Graph::add_const(NodeId a, double c) {
    Mat out = value(a);
    for (double& x : out.a) x += c;
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, id](Graph& g) {
            const Mat& dc = g.grad(id);
            Mat& da = g.grad(a);
            for (size_t i = 0; i < dc.size(); ++i) da.a[i] += dc.a[i];
        };
    }
    return id;
}

NodeId Graph::relu(NodeId a) {
    Mat out = value(a);
    for (double& x : out.a) x = std::max(0.0, x);
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, id](Graph& g) {
            const Mat& dc = g.grad(id);
            const Mat& av = g.value(a);
            Mat& da = g.grad(a);
            for (size_t i = 0; i < dc.size(); ++i)
                if (av.a[i] > 0.0) da.a[i] += dc.a[i];
        };
    }
    return id;
}

NodeId Graph::exp(NodeId a) {
    Mat out = value(a);
    for (double& x : out.a) x = std::exp(x);
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, id](Graph& g) {
            const Mat& dc = g.grad(id);
            const Mat& yv = g.value(id);
            Mat& da = g.grad(a);
            for (size_t i = 0; i < dc.size(); ++i) da.a[i] += yv.a[i] * dc.a[i];
        };
    }
    return id;
}

NodeId Graph::log(NodeId a) {
    Mat out = value(a);
    for (double& x : out.a) x = std::log(x);
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, id](Graph& g) {
            const Mat& dc = g.grad(id);
            const Mat& av = g.value(a);
            Mat& da = g.grad(a);
            for (size_t i = 0; i < dc.size(); ++i) da.a[i] += dc.a[i] / av.a[i];
        };
    }
    return id;
}

NodeId Graph::softmax_rows(NodeId a) {
    Mat out = value(a);
    for (int r = 0; r < out.rows; ++r) {
        double* row = out.row_ptr(r);
        double mx = row[0];
        for (int c = 1; c < out.cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < out.cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int c = 0; c < out.cols; ++c) row[c] /= sum;
    }
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, id](Graph& g) {
            const Mat& dy = g.grad(id);
            const Mat& y = g.value(id);
            Mat& da = g.grad(a);
            for (int r = 0; r < y.rows; ++r) {
                const double* yr = y.row_ptr(r);
                const double* dyr = dy.row_ptr(r);
                double dot = 0.0;
                for (int c = 0; c < y.cols; ++c) dot += yr[c] * dyr[c];
                double* dar = da.row_ptr(r);
                for (int c = 0; c < y.cols; ++c) dar[c] += yr[c] * (dyr[c] - dot);
            }
        };
    }
    return id;
}

NodeId Graph::layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Mat& xv = value(x);
    const Mat& gv = value(gamma);
    const Mat& bv = value(beta);
    if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols)
        throw ArgumentError("layer_norm_rows: gamma/beta must be 1 x cols");

    const int d = xv.cols;
    Mat out(xv.rows, d);
    Mat xhat(xv.rows, d);
    Mat inv_sigma(xv.rows, 1);
    for (int r = 0; r < xv.rows; ++r) {
        const double* xr = xv.row_ptr(r);
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += xr[c];
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double t = xr[c] - mu;
            var += t * t;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma.a[static_cast<size_t>(r)] = inv;
        double* hr = xhat.row_ptr(r);
        double* orow = out.row_ptr(r);
        for (int c = 0; c < d; ++c) {
            hr[c] = (xr[c] - mu) * inv;
            orow[c] = hr[c] * gv.a[static_cast<size_t>(c)] + bv.a[static_cast<size_t>(c)];
        }
    }
    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [x, gamma, beta, id, xhat = std::move(xhat),
                                                inv_sigma = std::move(inv_sigma)](Graph& g) {
            const Mat& dy = g.grad(id);
            const Mat& gv2 = g.value(gamma);
            const int d2 = dy.cols;
            for (int r = 0; r < dy.rows; ++r) {
                const double* dyr = dy.row_ptr(r);
                const double* hr = xhat.row_ptr(r);
                if (g.requires_grad(gamma)) {
                    Mat& dg = g.grad(gamma);
                    for (int c = 0; c < d2; ++c) dg.a[static_cast<size_t>(c)] += dyr[c] * hr[c];
                }
                if (g.requires_grad(beta)) {
                    Mat& db = g.grad(beta);
                    for (int c = 0; c < d2; ++c) db.a[static_cast<size_t>(c)] += dyr[c];
                }
                if (g.requires_grad(x)) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (int c = 0; c < d2; ++c) {
                        const double dh = dyr[c] * gv2.a[static_cast<size_t>(c)];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[c];
                    }
                    mean_dh /= d2;
                    mean_dh_h /= d2;
                    Mat& dx = g.grad(x);
                    double* dxr = dx.row_ptr(r);
                    const double inv = inv_sigma.a[static_cast<size_t>(r)];
                    for (int c = 0; c < d2; ++c) {
                        const double dh = dyr[c] * gv2.a[static_cast<size_t>(c)];
                        dxr[c] += inv * (dh - mean_dh - hr[c] * mean_dh_h);
                    }
                }
            }
        };
    }
    return id;
}

NodeId Graph::embedding_rows(NodeId table, const std::vector<int>& ids) {
    const Mat& tv = value(table);
    Mat out(static_cast<int>(ids.size()), tv.cols);
    for (size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= tv.rows) throw ArgumentError("embedding_rows: id out of range");
        std::copy(tv.row_ptr(ids[r]), tv.row_ptr(ids[r]) + tv.cols, out.row_ptr(static_cast<int>(r)));
    }
    const bool rg = requires_grad(table);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [table, ids, id](Graph& g) {
            const Mat& dc = g.grad(id);
            Mat& dt = g.grad(table);
            for (size_t r = 0; r < ids.size(); ++r) {
                const double* drow = dc.row_ptr(static_cast<int>(r));
                double* trow = dt.row_ptr(ids[r]);
                for (int c = 0; c < dc.cols; ++c) trow[c] += drow[c];
            }
        };
    }
    return id;
}

NodeId Graph::slice_cols(NodeId a, int c0, int c1) {
    const Mat& av = value(a);
    if (c0 < 0 || c1 > av.cols || c0 >= c1) throw ArgumentError("slice_cols: bad range");
    Mat out(av.rows, c1 - c0);
    for (int r = 0; r < av.rows; ++r)
        std::copy(av.row_ptr(r) + c0, av.row_ptr(r) + c1, out.row_ptr(r));
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, c0, id](Graph& g) {
            const Mat& dc = g.grad(id);
            Mat& da = g.grad(a);
            for (int r = 0; r < dc.rows; ++r) {
                const double* drow = dc.row_ptr(r);
                double* arow = da.row_ptr(r) + c0;
                for (int c = 0; c < dc.cols; ++c) arow[c] += drow[c];
            }
        };
    }
    return id;
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: empty list");
    int rows = value(parts[0]).rows;
    int cols = 0;
    bool rg = false;
    for (NodeId p : parts) {
        const Mat& pv = value(p);
        if (pv.rows != rows) throw ArgumentError("concat_cols: row mismatch");
        cols += pv.cols;
        rg = rg || requires_grad(p);
    }
    Mat out(rows, cols);
    int off = 0;
    for (NodeId p : parts) {
        const Mat& pv = value(p);
        for (int r = 0; r < rows; ++r)
            std::copy(pv.row_ptr(r), pv.row_ptr(r) + pv.cols, out.row_ptr(r) + off);
        off += pv.cols;
    }
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [parts, id](Graph& g) {
            const Mat& dc = g.grad(id);
            int off2 = 0;
            for (NodeId p : parts) {
                const int w = g.value(p).cols;
                if (g.requires_grad(p)) {
                    Mat& dp = g.grad(p);
                    for (int r = 0; r < dc.rows; ++r) {
                        const double* drow = dc.row_ptr(r) + off2;
                        double* prow = dp.row_ptr(r);
                        for (int c = 0; c < w; ++c) prow[c] += drow[c];
                    }
                }
                off2 += w;
            }
        };
    }
    return id;
}

NodeId Graph::slice_rows(NodeId a, int r0, int r1) {
    const Mat& av = value(a);
    if (r0 < 0 || r1 > av.rows || r0 >= r1) throw ArgumentError("slice_rows: bad range");
    Mat out(r1 - r0, av.cols);
    std::copy(av.row_ptr(r0), av.row_ptr(r0) + static_cast<size_t>(r1 - r0) * av.cols,
              out.a.begin());
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, r0, id](Graph& g) {
            const Mat& dc = g.grad(id);
            Mat& da = g.grad(a);
            for (int r = 0; r < dc.rows; ++r) {
                const double* drow = dc.row_ptr(r);
                double* arow = da.row_ptr(r + r0);
                for (int c = 0; c < dc.cols; ++c) arow[c] += drow[c];
            }
        };
    }
    return id;
}

NodeId Graph::mean_rows(NodeId a, int r0, int r1) {
    const Mat& av = value(a);
    if (r0 < 0 || r1 > av.rows || r0 >= r1) throw ArgumentError("mean_rows: bad range");
    const int n = r1 - r0;
    Mat out(1, av.cols);
    for (int r = r0; r < r1; ++r) {
        const double* arow = av.row_ptr(r);
        for (int c = 0; c < av.cols; ++c) out.a[static_cast<size_t>(c)] += arow[c];
    }
    for (double& x : out.a) x /= n;
    const bool rg = requires_grad(a);
    NodeId id = make_op(std::move(out), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, r0, r1, n, id](Graph& g) {
            const Mat& dc = g.grad(id);
            Mat& da = g.grad(a);
            for (int r = r0; r < r1; ++r) {
                double* arow = da.row_ptr(r);
                for (int c = 0; c < dc.cols; ++c) arow[c] += dc.a[static_cast<size_t>(c)] / n;
            }
        };
    }
    return id;
}

NodeId Graph::cosine_vec(NodeId a, NodeId b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows != 1 || bv.rows != 1 || av.cols != bv.cols)
        throw ArgumentError("cosine_vec: expects two 1 x d vectors");
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int c = 0; c < av.cols; ++c) {
        dot += av.a[static_cast<size_t>(c)] * bv.a[static_cast<size_t>(c)];
        na2 += av.a[static_cast<size_t>(c)] * av.a[static_cast<size_t>(c)];
        nb2 += bv.a[static_cast<size_t>(c)] * bv.a[static_cast<size_t>(c)];
    }
    if (na2 <= 0.0 || nb2 <= 0.0) throw ArgumentError("cosine_vec: zero vector");
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double cos_val = dot / (na * nb);
    const bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = make_op(Mat::scalar(cos_val), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [a, b, na2, nb2, na, nb, cos_val, id](Graph& g) {
            const double dq = g.grad(id).a[0];
            const Mat& av2 = g.value(a);
            const Mat& bv2 = g.value(b);
            if (g.requires_grad(a)) {
                Mat& da = g.grad(a);
                for (int c = 0; c < av2.cols; ++c)
                    da.a[static_cast<size_t>(c)] +=
                        dq * (bv2.a[static_cast<size_t>(c)] / (na * nb) -
                              cos_val * av2.a[static_cast<size_t>(c)] / na2);
            }
            if (g.requires_grad(b)) {
                Mat& db = g.grad(b);
                for (int c = 0; c < bv2.cols; ++c)
                    db.a[static_cast<size_t>(c)] +=
                        dq * (av2.a[static_cast<size_t>(c)] / (na * nb) -
                              cos_val * bv2.a[static_cast<size_t>(c)] / nb2);
            }
        };
    }
    return id;
}

NodeId Graph::cross_entropy(NodeId logits, const std::vector<int>& targets, int ignore_id,
                            Reduction reduction) {
    const Mat& lv = value(logits);
    if (static_cast<int>(targets.size()) != lv.rows)
        throw ArgumentError("cross_entropy: targets length must equal logit rows");
    int n_valid = 0;
    for (int t : targets)
        if (t != ignore_id) ++n_valid;
    if (n_valid == 0) throw ArgumentError("cross_entropy: no non-ignored target positions");

    // softmax probabilities kept for the backward pass
    Mat probs(lv.rows, lv.cols);
    double total = 0.0;
    for (int r = 0; r < lv.rows; ++r) {
        const double* lr = lv.row_ptr(r);
        double mx = lr[0];
        for (int c = 1; c < lv.cols; ++c) mx = std::max(mx, lr[c]);
        double sum = 0.0;
        double* pr = probs.row_ptr(r);
        for (int c = 0; c < lv.cols; ++c) {
            pr[c] = std::exp(lr[c] - mx);
            sum += pr[c];
        }
        for (int c = 0; c < lv.cols; ++c) pr[c] /= sum;
        if (targets[static_cast<size_t>(r)] != ignore_id) {
            const int y = targets[static_cast<size_t>(r)];
            if (y < 0 || y >= lv.cols) throw ArgumentError("cross_entropy: target out of range");
            total += -(lr[y] - mx - std::log(sum));
        }
    }
    const double w = (reduction == Reduction::mean) ? 1.0 / n_valid : 1.0;
    const bool rg = requires_grad(logits);
    NodeId id = make_op(Mat::scalar(total * w), rg, nullptr);
    if (rg) {
        nodes_[static_cast<size_t>(id)].back = [logits, targets, ignore_id, w,
                                                probs = std::move(probs), id](Graph& g) {
            const double dq = g.grad(id).a[0];
            Mat& dl = g.grad(logits);
            for (int r = 0; r < dl.rows; ++r) {
                const int y = targets[static_cast<size_t>(r)];
                if (y == ignore_id) continue;
                const double* pr = probs.row_ptr(r);
                double* dr = dl.row_ptr(r);
                for (int c = 0; c < dl.cols; ++c) dr[c] += dq * w * pr[c];
                dr[y] -= dq * w;
            }
        };
    }
    return id;
}

void Graph::backward(NodeId root) {
    Node& r = nodes_[static_cast<size_t>(root)];
    if (!r.rg) throw ArgumentError("backward: root does not require gradients");
    const Mat& rv = r.pval ? *r.pval : r.val;
    if (rv.rows != 1 || rv.cols != 1) throw ArgumentError("backward: root must be a scalar");
    r.grad.a[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.rg && n.back) n.back(*this);
    }
    for (auto& n : nodes_) {
        if (n.external_grad) {
            for (size_t i = 0; i < n.grad.size(); ++i) n.external_grad->a[i] += n.grad.a[i];
        }
    }
}

}  // namespace pess::ad
