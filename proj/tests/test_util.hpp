#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "pess/rng.hpp"
#include "pess/seq2seq.hpp"

namespace testutil {

// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("pess-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str() const { return path_.string(); }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

// Small vocabulary + model for gradient checks and oracles.
inline pess::Vocab tiny_vocab() {
    return pess::Vocab::build({"alpha bravo charlie delta echo foxtrot golf hotel india "
                               "juliet kilo lima mike november oscar papa"});
}

inline pess::ModelConfig tiny_config(int d_model = 16, std::uint64_t seed = 7) {
    pess::ModelConfig c;
    c.d_model = d_model;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_dim = 2 * d_model;
    c.max_len = 32;
    c.dropout = 0.0;
    c.seed = seed;
    return c;
}

// Max relative error between analytic gradients and central finite
// differences over a deterministic sample of coordinates of every
// parameter tensor.
//
//   loss_value: rebuilds the loss from the current parameter values
//   accumulate_grads: zeroes grads, runs forward+backward once
inline double max_grad_rel_error(pess::Seq2SeqModel& model,
                                 const std::function<double()>& loss_value,
                                 const std::function<void()>& accumulate_grads,
                                 int coords_per_tensor = 4, std::uint64_t seed = 0,
                                 double h = 1e-5) {
    model.zero_grads();
    accumulate_grads();

    pess::Rng rng(seed);
    double worst = 0.0;
    for (auto& p : model.parameters()) {
        for (int c = 0; c < coords_per_tensor; ++c) {
            const size_t idx = rng.index(p.value->size());
            const double saved = p.value->a[idx];
            p.value->a[idx] = saved + h;
            const double up = loss_value();
            p.value->a[idx] = saved - h;
            const double down = loss_value();
            p.value->a[idx] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double analytic = p.grad->a[idx];
            const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
            worst = std::max(worst, std::fabs(fd - analytic) / denom);
        }
    }
    return worst;
}

}  // namespace testutil
