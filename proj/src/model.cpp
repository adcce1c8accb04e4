#include "cmla/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cmla/error.hpp"
#include "cmla/format.hpp"
#include "cmla/rng.hpp"
#include "cmla/simd.hpp"

namespace cmla {
namespace {

constexpr const char* kCheckpointMagic = "cmla-checkpoint";
constexpr int kCheckpointVersion = 1;

// out_b = W x_b + bias for every row b.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& bias) {
    Matrix out(x.rows(), w.rows());
    for (std::size_t b = 0; b < x.rows(); ++b) {
        const auto xb = x.row(b);
        auto ob = out.row(b);
        for (std::size_t o = 0; o < w.rows(); ++o) ob[o] = simd::dot(w.row(o), xb) + bias(0, o);
    }
    return out;
}

// Accumulates dW, db and (optionally) returns dx for an affine layer.
void affine_backward(const Matrix& x, const Matrix& w, const Matrix& d_out, Matrix& d_w, Matrix& d_b, Matrix* d_x) {
    if (d_x) *d_x = Matrix(x.rows(), x.cols());
    for (std::size_t b = 0; b < x.rows(); ++b) {
        const auto xb = x.row(b);
        for (std::size_t o = 0; o < w.rows(); ++o) {
            const double g = d_out(b, o);
            if (g == 0.0) continue;
            simd::axpy(g, xb, d_w.row(o));
            d_b(0, o) += g;
            if (d_x) simd::axpy(g, w.row(o), d_x->row(b));
        }
    }
}

void check_dims(const ModelParams& p, const Matrix& inputs) {
    if (inputs.cols() != p.enc_w1.cols())
        throw ArgumentError("model: input dimension " + std::to_string(inputs.cols()) + " != expected " +
                            std::to_string(p.enc_w1.cols()));
}

}  // namespace

ModelParams ModelParams::zeros(const ModelShape& s) {
    ModelParams p;
    p.enc_w1 = Matrix(s.hidden_dim, s.input_dim);
    p.enc_b1 = Matrix(1, s.hidden_dim);
    p.enc_w2 = Matrix(s.embed_dim, s.hidden_dim);
    p.enc_b2 = Matrix(1, s.embed_dim);
    p.head_v_w = Matrix(s.classes_visible, s.embed_dim);
    p.head_v_b = Matrix(1, s.classes_visible);
    p.head_r_w = Matrix(s.classes_infrared, s.embed_dim);
    p.head_r_b = Matrix(1, s.classes_infrared);
    return p;
}

ModelParams ModelParams::init(const ModelShape& s, std::uint64_t seed) {
    if (s.embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
    if (s.input_dim < 1 || s.hidden_dim < 1) throw ConfigError("input_dim and hidden_dim must be >= 1");
    if (s.classes_visible < 1 || s.classes_infrared < 1) throw ConfigError("heads need at least one class");
    ModelParams p = zeros(s);
    Rng rng(derive_seed(seed, {0x696e'6974}));
    auto glorot = [&](Matrix& w) {
        const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> u(-a, a);
        for (double& v : w.values()) v = u(rng);
    };
    glorot(p.enc_w1);
    glorot(p.enc_w2);
    glorot(p.head_v_w);
    glorot(p.head_r_w);
    return p;
}

ModelShape ModelParams::shape() const {
    return {enc_w1.cols(), enc_w1.rows(), enc_w2.rows(), head_v_w.rows(), head_r_w.rows()};
}

std::size_t ModelParams::num_params() const {
    std::size_t n = 0;
    for_each_block([&](const char*, const Matrix& m) { n += m.size(); });
    return n;
}

double& ModelParams::flat(std::size_t i) {
    double* found = nullptr;
    for_each_block([&](const char*, Matrix& m) {
        if (found) return;
        if (i < m.size()) {
            found = &m.values()[i];
        } else {
            i -= m.size();
        }
    });
    if (!found) throw ArgumentError("ModelParams::flat: index out of range");
    return *found;
}

ForwardCache forward_all(const ModelParams& params, const Matrix& inputs) {
    check_dims(params, inputs);
    for (double v : inputs.values())
        if (!std::isfinite(v)) throw DataError("model: non-finite input");
    ForwardCache f;
    f.input = inputs;
    f.hidden = affine(inputs, params.enc_w1, params.enc_b1);
    for (double& v : f.hidden.values()) v = std::tanh(v);
    f.raw = affine(f.hidden, params.enc_w2, params.enc_b2);

    const std::size_t b = inputs.rows();
    f.norms.assign(b, 0.0);
    f.zero_rows.assign(b, false);
    f.embeddings = f.raw;
    for (std::size_t i = 0; i < b; ++i) {
        const double n = std::sqrt(simd::dot(f.raw.row(i), f.raw.row(i)));
        f.norms[i] = n;
        if (n == 0.0) {
            f.zero_rows[i] = true;
            continue;
        }
        for (double& v : f.embeddings.row(i)) v /= n;
    }
    f.logits_v = affine(f.embeddings, params.head_v_w, params.head_v_b);
    f.logits_r = affine(f.embeddings, params.head_r_w, params.head_r_b);
    f.probs_v = softmax_rows(f.logits_v);
    f.probs_r = softmax_rows(f.logits_r);
    return f;
}

HeadOutput forward(const ModelParams& params, const Matrix& inputs, Head head) {
    ForwardCache f = forward_all(params, inputs);
    return {std::move(f.embeddings), head == Head::visible ? std::move(f.probs_v) : std::move(f.probs_r),
            std::move(f.zero_rows)};
}

Matrix embed(const ModelParams& params, const Matrix& inputs) { return forward_all(params, inputs).embeddings; }

OutputGrad OutputGrad::zeros_like(const ForwardCache& fwd) {
    return {Matrix(fwd.embeddings.rows(), fwd.embeddings.cols()), Matrix(fwd.logits_v.rows(), fwd.logits_v.cols()),
            Matrix(fwd.logits_r.rows(), fwd.logits_r.cols())};
}

ModelParams backward(const ModelParams& params, const ForwardCache& fwd, const OutputGrad& grad) {
    ModelParams g = ModelParams::zeros(params.shape());
    Matrix d_emb_v, d_emb_r;
    affine_backward(fwd.embeddings, params.head_v_w, grad.logits_v, g.head_v_w, g.head_v_b, &d_emb_v);
    affine_backward(fwd.embeddings, params.head_r_w, grad.logits_r, g.head_r_w, g.head_r_b, &d_emb_r);

    const std::size_t b = fwd.input.rows();
    const std::size_t e = fwd.embeddings.cols();
    Matrix d_raw(b, e);
    for (std::size_t i = 0; i < b; ++i) {
        if (fwd.zero_rows[i]) continue;
        // d(o/|o|) = (I - u u^T) / |o|
        auto dr = d_raw.row(i);
        const auto u = fwd.embeddings.row(i);
        for (std::size_t c = 0; c < e; ++c) dr[c] = grad.embeddings(i, c) + d_emb_v(i, c) + d_emb_r(i, c);
        const double proj = simd::dot(u, dr);
        for (std::size_t c = 0; c < e; ++c) dr[c] = (dr[c] - proj * u[c]) / fwd.norms[i];
    }

    Matrix d_hidden;
    affine_backward(fwd.hidden, params.enc_w2, d_raw, g.enc_w2, g.enc_b2, &d_hidden);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
        const double h = fwd.hidden.values()[i];
        d_hidden.values()[i] *= 1.0 - h * h;
    }
    affine_backward(fwd.input, params.enc_w1, d_hidden, g.enc_w1, g.enc_b1, nullptr);
    return g;
}

void SgdConfig::validate() const {
    if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

double backward_and_step(ModelParams& params, SgdState& state, const Matrix& inputs, const LossClosure& loss,
                         const SgdConfig& sgd, double lr) {
    if (lr < 0.0) throw ArgumentError("backward_and_step: negative learning rate");
    const ForwardCache fwd = forward_all(params, inputs);
    OutputGrad og = OutputGrad::zeros_like(fwd);
    const double value = loss(fwd, og);
    if (!std::isfinite(value)) throw TrainingError("non-finite loss value");
    for (const auto& [name, m] : {std::pair{"embeddings", &og.embeddings}, std::pair{"logits_v", &og.logits_v},
                                  std::pair{"logits_r", &og.logits_r}})
        for (double v : m->values())
            if (!std::isfinite(v)) throw TrainingError(std::string("non-finite loss gradient w.r.t. ") + name);
    const ModelParams grads = backward(params, fwd, og);
    grads.for_each_block([](const char* name, const Matrix& m) {
        for (double v : m.values())
            if (!std::isfinite(v)) throw TrainingError(std::string("non-finite gradient in ") + name);
    });

    if (lr == 0.0) return value;
    std::vector<const Matrix*> grad_blocks;
    grads.for_each_block([&](const char*, const Matrix& m) { grad_blocks.push_back(&m); });
    std::vector<Matrix*> vel_blocks;
    state.velocity.for_each_block([&](const char*, Matrix& m) { vel_blocks.push_back(&m); });
    std::size_t k = 0;
    params.for_each_block([&](const char*, Matrix& p) {
        auto v = vel_blocks[k]->values();
        const auto g = grad_blocks[k]->values();
        auto pv = p.values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            v[i] = sgd.momentum * v[i] + g[i];
            pv[i] -= lr * v[i];
        }
        ++k;
    });
    return value;
}

GradCheckResult grad_check(const ModelParams& params, const Matrix& inputs, const LossClosure& loss, double step,
                           const GradCheckOptions& options) {
    if (!(step > 0.0)) throw ArgumentError("grad_check: step must be > 0");
    const ForwardCache fwd = forward_all(params, inputs);
    OutputGrad og = OutputGrad::zeros_like(fwd);
    loss(fwd, og);
    ModelParams analytic = backward(params, fwd, og);
    if (options.sabotage_index) analytic.flat(*options.sabotage_index) = 0.0;

    auto evaluate = [&](const ModelParams& p) {
        const ForwardCache f = forward_all(p, inputs);
        OutputGrad scratch = OutputGrad::zeros_like(f);
        return loss(f, scratch);
    };

    GradCheckResult res;
    ModelParams probe = params;
    std::size_t flat_index = 0;
    std::vector<std::pair<const char*, const Matrix*>> blocks;
    analytic.for_each_block([&](const char* name, const Matrix& m) { blocks.emplace_back(name, &m); });
    std::size_t block_no = 0;
    probe.for_each_block([&](const char*, Matrix& m) {
        const auto [name, a_block] = blocks[block_no++];
        auto values = m.values();
        for (std::size_t i = 0; i < values.size(); ++i, ++flat_index) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = evaluate(probe);
            values[i] = saved - step;
            const double down = evaluate(probe);
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = a_block->values()[i];
            const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_block = name;
                res.worst_index = flat_index;
            }
        }
    });
    return res;
}

void write_checkpoint(const ModelParams& params, std::ostream& os) {
    const ModelShape s = params.shape();
    os << kCheckpointMagic << " v" << kCheckpointVersion << '\n';
    os << "shape " << s.input_dim << ' ' << s.hidden_dim << ' ' << s.embed_dim << ' ' << s.classes_visible << ' '
       << s.classes_infrared << '\n';
    params.for_each_block([&](const char* name, const Matrix& m) {
        os << "layer " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const auto row = m.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << format_double(row[c]);
            os << '\n';
        }
    });
}

ModelParams read_checkpoint(std::istream& is) {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::istringstream {
        if (!std::getline(is, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
        ++line_no;
        return std::istringstream(line);
    };
    {
        auto ls = next_line();
        std::string magic, version;
        ls >> magic >> version;
        if (magic != kCheckpointMagic) throw ParseError(line_no, "not a checkpoint file");
        if (version != "v" + std::to_string(kCheckpointVersion))
            throw ParseError(line_no, "unsupported checkpoint version '" + version + "'");
    }
    ModelShape s;
    {
        auto ls = next_line();
        std::string tag;
        ls >> tag >> s.input_dim >> s.hidden_dim >> s.embed_dim >> s.classes_visible >> s.classes_infrared;
        if (tag != "shape" || !ls) throw ParseError(line_no, "malformed shape line");
    }
    ModelParams p = ModelParams::zeros(s);
    p.for_each_block([&](const char* name, Matrix& m) {
        auto ls = next_line();
        std::string tag, got_name;
        std::size_t rows = 0, cols = 0;
        ls >> tag >> got_name >> rows >> cols;
        if (tag != "layer" || got_name != name || rows != m.rows() || cols != m.cols())
            throw ParseError(line_no, std::string("expected layer ") + name);
        for (std::size_t r = 0; r < rows; ++r) {
            auto rs = next_line();
            std::string tok;
            std::size_t c = 0;
            while (rs >> tok) {
                if (c >= cols || !parse_double(tok, m(r, c))) throw ParseError(line_no, "bad value '" + tok + "'");
                ++c;
            }
            if (c != cols) throw ParseError(line_no, "row has " + std::to_string(c) + " values, expected " + std::to_string(cols));
        }
    });
    return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    write_checkpoint(params, os);
    if (!os) throw DataError("write failed for '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
    return read_checkpoint(is);
}

}  // namespace cmla
