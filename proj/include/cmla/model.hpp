#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmla/matrix.hpp"

namespace cmla {

enum class Head { visible, infrared };

struct ModelShape {
    std::size_t input_dim = 16;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;
    std::size_t classes_visible = 2;
    std::size_t classes_infrared = 2;

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Shared encoder (affine -> tanh -> affine -> L2 normalize) and two affine
/// classifier heads. Also used as the container for parameter gradients.
struct ModelParams {
    Matrix enc_w1, enc_b1;    // H x D_in, 1 x H
    Matrix enc_w2, enc_b2;    // D_emb x H, 1 x D_emb
    Matrix head_v_w, head_v_b;  // C_v x D_emb, 1 x C_v
    Matrix head_r_w, head_r_b;  // C_r x D_emb, 1 x C_r

    static ModelParams zeros(const ModelShape& shape);
    /// Glorot-uniform weights, zero biases.
    static ModelParams init(const ModelShape& shape, std::uint64_t seed);

    ModelShape shape() const;
    std::size_t num_params() const;

    /// Calls f(name, block) for every parameter block in checkpoint order.
    template <typename F>
    void for_each_block(F&& f) { visit(*this, f); }
    template <typename F>
    void for_each_block(F&& f) const { visit(*this, f); }

    /// Parameter at flat position `i` in for_each_block order.
    double& flat(std::size_t i);

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    template <typename Self, typename F>
    static void visit(Self& self, F& f) {
        f("encoder.w1", self.enc_w1);
        f("encoder.b1", self.enc_b1);
        f("encoder.w2", self.enc_w2);
        f("encoder.b2", self.enc_b2);
        f("head_v.w", self.head_v_w);
        f("head_v.b", self.head_v_b);
        f("head_r.w", self.head_r_w);
        f("head_r.b", self.head_r_b);
    }
};

/// Everything the backward pass needs from one forward pass over a batch.
struct ForwardCache {
    Matrix input;
    Matrix hidden;  // tanh activations
    Matrix raw;     // encoder output before normalization
    std::vector<double> norms;
    std::vector<bool> zero_rows;  // raw row was exactly zero; left unnormalized
    Matrix embeddings;
    Matrix logits_v, probs_v;
    Matrix logits_r, probs_r;

    const Matrix& probs(Head h) const { return h == Head::visible ? probs_v : probs_r; }
};

ForwardCache forward_all(const ModelParams& params, const Matrix& inputs);

struct HeadOutput {
    Matrix embeddings;
    Matrix probs;
    std::vector<bool> zero_rows;
};

/// Embeddings and one head's softmax for a batch of inputs.
HeadOutput forward(const ModelParams& params, const Matrix& inputs, Head head);

/// L2-normalized embeddings only.
Matrix embed(const ModelParams& params, const Matrix& inputs);

/// Gradients of a scalar loss w.r.t. the network outputs of one batch.
struct OutputGrad {
    Matrix embeddings;
    Matrix logits_v;
    Matrix logits_r;

    static OutputGrad zeros_like(const ForwardCache& fwd);
};

/// Computes the loss from a forward pass and fills the output gradients.
using LossClosure = std::function<double(const ForwardCache&, OutputGrad&)>;

/// Chain rule from output gradients to parameter gradients.
ModelParams backward(const ModelParams& params, const ForwardCache& fwd, const OutputGrad& grad);

struct SgdConfig {
    double lr_stage1 = 0.1;
    double lr_stage2 = 0.01;
    double momentum = 0.9;
    std::size_t warmup_epochs = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Momentum buffers matching a ModelParams.
struct SgdState {
    ModelParams velocity;
    explicit SgdState(const ModelShape& shape) : velocity(ModelParams::zeros(shape)) {}
};

/// One SGD-with-momentum step on `params` for the loss of `inputs`:
/// v <- momentum * v + grad, p <- p - lr * v. Returns the loss before the
/// step. Throws TrainingError if a parameter gradient is non-finite.
double backward_and_step(ModelParams& params, SgdState& state, const Matrix& inputs, const LossClosure& loss,
                         const SgdConfig& sgd, double lr);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_block;
    std::size_t worst_index = 0;  // flat parameter index
};

struct GradCheckOptions {
    /// Debug hook: pretend the analytic gradient at this flat index is zero.
    std::optional<std::size_t> sabotage_index;
};

/// Compares the analytic gradient with central differences of `step` on
/// every parameter: max |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const ModelParams& params, const Matrix& inputs, const LossClosure& loss, double step,
                           const GradCheckOptions& options = {});

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const ModelParams& params, std::ostream& os);
ModelParams read_checkpoint(std::istream& is);

}  // namespace cmla
