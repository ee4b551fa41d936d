#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sghf/rng.hpp"
#include "sghf/tensor.hpp"

namespace sghf {

// Named parameter collection. Iteration follows lexicographic name order
// (std::map), which keeps optimizer sweeps and checkpoints stable.
class ParamStore {
public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    Tensor add(const std::string& name, Tensor t, bool trainable = true);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    const std::map<std::string, Entry>& all() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>> trainable() const;

    // Number of scalar values across trainable tensors.
    int64_t trainable_count() const;

    void zero_grads();

private:
    std::map<std::string, Entry> entries_;
};

// Fan-in scaled normal init (He), biases start at zero.
Tensor he_normal(Shape shape, int64_t fan_in, rng::Stream& rs);
Tensor small_normal(Shape shape, double sd, rng::Stream& rs);

struct Dense {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
    Tensor operator()(const Tensor& x) const { return bias_add(matmul(x, w), b); }
    int64_t in_dim() const { return w.dim(0); }
    int64_t out_dim() const { return w.dim(1); }
};
Dense make_dense(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                 rng::Stream& rs);

struct ConvLayer {
    Tensor w;  // [cout, cin, k...]
    Tensor b;  // [cout]
    int64_t stride = 1;
    int64_t pad = 0;
    Tensor operator()(const Tensor& x) const { return bias_add(conv(x, w, stride, pad), b); }
};
ConvLayer make_conv(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
                    int64_t ksize, int spatial_rank, int64_t stride, int64_t pad,
                    rng::Stream& rs);

struct BatchNormLayer {
    Tensor gamma, beta;
    Tensor run_mean, run_var;  // running stats, mutated in training mode
    double momentum = 0.1;
    Tensor operator()(const Tensor& x, bool training) const;
};
BatchNormLayer make_bn(ParamStore& ps, const std::string& name, int64_t channels,
                       double momentum);

// Per-head projection matrices; head width d_k equals the value width.
struct AttentionParams {
    std::vector<Tensor> w_q, w_k, w_v;  // each [d_model x d_k]
    Tensor w_o;                         // [heads*d_k x d_model]
    int64_t heads = 0, d_model = 0, d_k = 0;
};
AttentionParams make_attention(ParamStore& ps, const std::string& name, int64_t d_model,
                               int64_t heads, int64_t d_k, rng::Stream& rs);

// Scaled dot-product attention per head on a [tokens x d_model] matrix;
// heads are concatenated and projected back to d_model.
Tensor multi_head_attention(const Tensor& tokens, const AttentionParams& p);

// Cross-attention flavor: queries and key/value tokens come from
// different matrices (both [n x d_model]).
Tensor multi_head_attention_kv(const Tensor& queries, const Tensor& kv,
                               const AttentionParams& p);

struct EncoderConfig {
    std::string backbone = "cnn-small";  // cnn-small | cnn-medium | vit
    int64_t feature_dim = 64;            // encoder output width F
    int64_t base_channels = 20;          // cnn stem width
    double bn_momentum = 0.1;
    // vit settings
    int64_t d_model = 32;
    int64_t heads = 4;
    int64_t d_k = 8;
    int64_t blocks = 2;
    int64_t subpatch = 32;   // square token tile side
    int64_t mlp_ratio = 2;
    bool pos_embedding = true;
};

// Residual CNN over batched [B, C, spatial...] inputs -> [B x F].
// cnn-small: stem + 2 residual stages; cnn-medium: stem + 4 stages.
class CnnEncoder {
public:
    static CnnEncoder build(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                            int64_t in_channels, int spatial_rank, rng::Stream& rs);

    Tensor forward(const Tensor& x, bool training) const;

    int64_t feature_dim() const { return head_.out_dim(); }
    int64_t in_channels() const { return in_channels_; }
    int spatial_rank() const { return spatial_rank_; }

private:
    struct ResBlock {
        ConvLayer conv1, conv2;
        BatchNormLayer bn1, bn2;
        bool has_skip = false;
        ConvLayer skip_conv;
        BatchNormLayer skip_bn;
        Tensor forward(const Tensor& x, bool training) const;
    };

    ConvLayer stem_;
    BatchNormLayer stem_bn_;
    std::vector<ResBlock> stages_;
    Dense head_;
    int64_t in_channels_ = 1;
    int spatial_rank_ = 3;
};

class VitEncoder;

// Transformer over a set of image patches. Each patch is cut into
// non-overlapping square tiles; every tile becomes one token. Position
// embeddings index the tile location inside its patch (shared across
// patches, so the patch set stays order-free). A learned class token is
// prepended and its final state is projected to the feature width.
class VitEncoder {
public:
    static VitEncoder build(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                            int64_t patch_size, int64_t in_channels, rng::Stream& rs);

    // patches: rank-2 [h x w] (single channel) or rank-3 [c x h x w].
    Tensor encode(const std::vector<Tensor>& patches) const;

    int64_t feature_dim() const { return proj_.out_dim(); }
    int64_t patch_size() const { return patch_size_; }

private:
    struct Block {
        AttentionParams attn;
        Dense mlp1, mlp2;
    };

    Dense embed_;
    Tensor pos_table_;   // [tiles_per_patch x d_model]
    Tensor class_token_; // [1 x d_model]
    std::vector<Block> blocks_;
    Dense proj_;
    int64_t patch_size_ = 0;
    int64_t subpatch_ = 0;
    int64_t in_channels_ = 1;
    bool use_pos_ = true;
};

// Feature encoder over batched volumes [B, C, d0, d1, d2] -> [B x F].
// Backed by the residual CNN, or, for the transformer backbone, by the
// patch encoder applied to the stack of axial slices of each volume.
class VolumeEncoder {
public:
    static VolumeEncoder build(ParamStore& ps, const std::string& prefix,
                               const EncoderConfig& cfg, int64_t in_channels,
                               const Shape& volume_dims, rng::Stream& rs);

    Tensor forward(const Tensor& x, bool training) const;
    int64_t feature_dim() const;

private:
    std::optional<CnnEncoder> cnn_;
    std::optional<VitEncoder> vit_;
    int64_t in_channels_ = 1;
};

}  // namespace sghf
