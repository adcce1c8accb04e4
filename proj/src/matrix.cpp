#include "cmla/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace cmla {

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto src = m.row(idx[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
    Matrix out(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        assert(labels[i] < num_classes);
        out(i, labels[i]) = 1.0;
    }
    return out;
}

std::vector<std::size_t> row_argmax(const Matrix& m) {
    std::vector<std::size_t> out(m.rows(), 0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        // max_element returns the first maximum, which is the lowest index.
        out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto z = logits.row(i);
        auto p = out.row(i);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (std::size_t c = 0; c < z.size(); ++c) {
            p[c] = std::exp(z[c] - mx);
            s += p[c];
        }
        for (double& v : p) v /= s;
    }
    return out;
}

}  // namespace cmla
