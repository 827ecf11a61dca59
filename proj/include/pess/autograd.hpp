#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pess::ad {

// Dense row-major matrix of doubles. Scalars are 1x1.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    static Mat zeros(int r, int c) { return Mat(r, c); }
    static Mat scalar(double v) {
        Mat m(1, 1);
        m.a[0] = v;
        return m;
    }

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    double* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return a.size(); }
    void fill(double v) { std::fill(a.begin(), a.end(), v); }
};

// C += A * B and friends; plain loops, row-major.
void gemm_acc(const Mat& a, const Mat& b, Mat& c);
void gemm_nt_acc(const Mat& a, const Mat& b, Mat& c);  // C += A * B^T
void gemm_tn_acc(const Mat& a, const Mat& b, Mat& c);  // C += A^T * B

using NodeId = int;

// Reverse-mode tape over matrices. Nodes are created in topological order;
// backward() walks the tape in reverse. Parameters are leaves that point at
// externally owned value/gradient buffers so an optimizer can read
// accumulated gradients after backward().
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    NodeId input(Mat value);            // constant leaf (owned copy)
    NodeId input_ref(const Mat* value); // constant leaf (external, not copied)
    NodeId param(const Mat* value, Mat* grad_out);

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);  // A * B^T
    NodeId add(NodeId a, NodeId b);        // same shape
    NodeId sub(NodeId a, NodeId b);
    NodeId elementwise_mul(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId a, NodeId bias);  // bias is 1 x cols
    NodeId scale(NodeId a, double s);
    NodeId add_const(NodeId a, double c);
    NodeId relu(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);  // requires strictly positive entries
    NodeId softmax_rows(NodeId a);
    NodeId layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    NodeId embedding_rows(NodeId table, const std::vector<int>& ids);
    NodeId slice_cols(NodeId a, int c0, int c1);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId slice_rows(NodeId a, int r0, int r1);
    NodeId mean_rows(NodeId a, int r0, int r1);  // 1 x cols
    NodeId cosine_vec(NodeId a, NodeId b);       // both 1 x d -> scalar

    enum class Reduction { mean, sum };
    // Token-level cross entropy over rows of `logits` (L x V) against
    // `targets` (length L); rows whose target equals `ignore_id` contribute
    // nothing. Stable log-softmax inside.
    NodeId cross_entropy(NodeId logits, const std::vector<int>& targets, int ignore_id,
                         Reduction reduction);

    const Mat& value(NodeId id) const;
    Mat& grad(NodeId id);
    bool requires_grad(NodeId id) const;

    // Seeds d(root)=1 (root must be scalar), sweeps the tape in reverse and
    // finally adds parameter gradients into their external buffers.
    void backward(NodeId root);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;                 // owned value (unused when pval set)
        const Mat* pval = nullptr;
        Mat grad;
        bool rg = false;
        Mat* external_grad = nullptr;
        std::function<void(Graph&)> back;
    };

    std::vector<Node> nodes_;

    NodeId push(Node node);
    NodeId make_op(Mat value, bool rg, std::function<void(Graph&)> back);
};

}  // namespace pess::ad
