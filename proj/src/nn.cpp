#include "sghf/nn.hpp"

#include <cmath>

namespace sghf {

Tensor ParamStore::add(const std::string& name, Tensor t, bool trainable) {
    if (entries_.count(name)) throw ConfigError("param already registered: " + name);
    t.set_requires_grad(trainable);
    entries_[name] = Entry{t, trainable};
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second.tensor;
}

std::vector<std::pair<std::string, Tensor>> ParamStore::trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, e] : entries_) {
        if (e.trainable) out.emplace_back(name, e.tensor);
    }
    return out;
}

int64_t ParamStore::trainable_count() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (e.trainable) n += e.tensor.numel();
    }
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, e] : entries_) e.tensor.zero_grad();
}

Tensor he_normal(Shape shape, int64_t fan_in, rng::Stream& rs) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.vec()) v = rs.normal(0.0, sd);
    return t;
}

Tensor small_normal(Shape shape, double sd, rng::Stream& rs) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rs.normal(0.0, sd);
    return t;
}

Dense make_dense(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                 rng::Stream& rs) {
    Dense d;
    d.w = ps.add(name + ".w", he_normal({in, out}, in, rs));
    d.b = ps.add(name + ".b", Tensor::zeros({out}));
    return d;
}

ConvLayer make_conv(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
                    int64_t ksize, int spatial_rank, int64_t stride, int64_t pad,
                    rng::Stream& rs) {
    Shape wshape{cout, cin};
    int64_t fan_in = cin;
    for (int i = 0; i < spatial_rank; ++i) {
        wshape.push_back(ksize);
        fan_in *= ksize;
    }
    ConvLayer c;
    c.w = ps.add(name + ".w", he_normal(std::move(wshape), fan_in, rs));
    c.b = ps.add(name + ".b", Tensor::zeros({cout}));
    c.stride = stride;
    c.pad = pad;
    return c;
}

BatchNormLayer make_bn(ParamStore& ps, const std::string& name, int64_t channels,
                       double momentum) {
    BatchNormLayer bn;
    bn.gamma = ps.add(name + ".gamma", Tensor::full({channels}, 1.0));
    bn.beta = ps.add(name + ".beta", Tensor::zeros({channels}));
    bn.run_mean = ps.add(name + ".run_mean", Tensor::zeros({channels}), /*trainable=*/false);
    bn.run_var = ps.add(name + ".run_var", Tensor::full({channels}, 1.0), /*trainable=*/false);
    bn.momentum = momentum;
    return bn;
}

Tensor BatchNormLayer::operator()(const Tensor& x, bool training) const {
    Tensor rm = run_mean, rv = run_var;  // shared storage handles
    return batch_norm(x, gamma, beta, rm, rv, training, momentum);
}

AttentionParams make_attention(ParamStore& ps, const std::string& name, int64_t d_model,
                               int64_t heads, int64_t d_k, rng::Stream& rs) {
    if (heads * d_k != d_model) {
        throw ConfigError("attention: heads*d_k must equal d_model");
    }
    AttentionParams p;
    p.heads = heads;
    p.d_model = d_model;
    p.d_k = d_k;
    for (int64_t t = 0; t < heads; ++t) {
        const std::string h = name + ".h" + std::to_string(t);
        p.w_q.push_back(ps.add(h + ".wq", he_normal({d_model, d_k}, d_model, rs)));
        p.w_k.push_back(ps.add(h + ".wk", he_normal({d_model, d_k}, d_model, rs)));
        p.w_v.push_back(ps.add(h + ".wv", he_normal({d_model, d_k}, d_model, rs)));
    }
    p.w_o = ps.add(name + ".wo", he_normal({heads * d_k, d_model}, heads * d_k, rs));
    return p;
}

Tensor multi_head_attention(const Tensor& tokens, const AttentionParams& p) {
    return multi_head_attention_kv(tokens, tokens, p);
}

Tensor multi_head_attention_kv(const Tensor& queries, const Tensor& kv,
                               const AttentionParams& p) {
    if (queries.rank() != 2 || queries.dim(1) != p.d_model || kv.rank() != 2 ||
        kv.dim(1) != p.d_model) {
        throw ShapeError("attention: tokens must be [n x d_model], got " +
                         shape_str(queries.shape()) + " / " + shape_str(kv.shape()));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_k));
    Tensor heads;
    for (int64_t t = 0; t < p.heads; ++t) {
        const size_t ti = static_cast<size_t>(t);
        Tensor q = matmul(queries, p.w_q[ti]);
        Tensor k = matmul(kv, p.w_k[ti]);
        Tensor v = matmul(kv, p.w_v[ti]);
        Tensor attn = softmax(mul_scalar(matmul(q, transpose(k)), scale), 1);
        Tensor h = matmul(attn, v);
        heads = (t == 0) ? h : concat(heads, h, 1);
    }
    return matmul(heads, p.w_o);
}

// ------------------------------------------------------------- CnnEncoder

Tensor CnnEncoder::ResBlock::forward(const Tensor& x, bool training) const {
    Tensor h = conv1(x);
    h = bn1(h, training);
    h = relu(h);
    h = conv2(h);
    h = bn2(h, training);
    Tensor s = has_skip ? skip_bn(skip_conv(x), training) : x;
    return relu(add(h, s));
}

CnnEncoder CnnEncoder::build(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                             int64_t in_channels, int spatial_rank, rng::Stream& rs) {
    if (cfg.backbone != "cnn-small" && cfg.backbone != "cnn-medium") {
        throw ConfigError("CnnEncoder: unsupported backbone " + cfg.backbone);
    }
    if (cfg.feature_dim < 1) throw ConfigError("CnnEncoder: feature_dim must be >= 1");
    const int n_stages = cfg.backbone == "cnn-small" ? 2 : 4;
    const int64_t c0 = cfg.base_channels;

    CnnEncoder e;
    e.in_channels_ = in_channels;
    e.spatial_rank_ = spatial_rank;
    e.stem_ = make_conv(ps, prefix + ".stem", in_channels, c0, 3, spatial_rank, 2, 1, rs);
    e.stem_bn_ = make_bn(ps, prefix + ".stem_bn", c0, cfg.bn_momentum);

    int64_t c_in = c0;
    for (int s = 0; s < n_stages; ++s) {
        const int64_t c_out = s == 0 ? c0 : c_in * 2;
        const int64_t stride = s == 0 ? 1 : 2;
        const std::string base = prefix + ".stage" + std::to_string(s);
        ResBlock blk;
        blk.conv1 = make_conv(ps, base + ".conv1", c_in, c_out, 3, spatial_rank, stride, 1, rs);
        blk.bn1 = make_bn(ps, base + ".bn1", c_out, cfg.bn_momentum);
        blk.conv2 = make_conv(ps, base + ".conv2", c_out, c_out, 3, spatial_rank, 1, 1, rs);
        blk.bn2 = make_bn(ps, base + ".bn2", c_out, cfg.bn_momentum);
        if (c_in != c_out || stride != 1) {
            blk.has_skip = true;
            blk.skip_conv = make_conv(ps, base + ".skip", c_in, c_out, 1, spatial_rank, stride, 0, rs);
            blk.skip_bn = make_bn(ps, base + ".skip_bn", c_out, cfg.bn_momentum);
        }
        e.stages_.push_back(std::move(blk));
        c_in = c_out;
    }
    e.head_ = make_dense(ps, prefix + ".head", c_in, cfg.feature_dim, rs);
    return e;
}

Tensor CnnEncoder::forward(const Tensor& x, bool training) const {
    if (x.rank() != static_cast<size_t>(spatial_rank_) + 2) {
        throw ShapeError("CnnEncoder: expected [batch, channel, spatial...], got " +
                         shape_str(x.shape()));
    }
    if (x.dim(1) != in_channels_) {
        throw ShapeError("CnnEncoder: channel mismatch, got " + shape_str(x.shape()));
    }
    Tensor h = relu(stem_bn_(stem_(x), training));
    for (const auto& blk : stages_) h = blk.forward(h, training);
    return head_(global_avg_pool(h));
}

// ------------------------------------------------------------- VitEncoder

VitEncoder VitEncoder::build(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                             int64_t patch_size, int64_t in_channels, rng::Stream& rs) {
    if (cfg.heads * cfg.d_k != cfg.d_model) {
        throw ConfigError("VitEncoder: heads*d_k must equal d_model");
    }
    if (patch_size % cfg.subpatch != 0) {
        throw ConfigError("VitEncoder: patch size must be divisible by the token tile size");
    }
    VitEncoder v;
    v.patch_size_ = patch_size;
    v.subpatch_ = cfg.subpatch;
    v.in_channels_ = in_channels;
    v.use_pos_ = cfg.pos_embedding;

    const int64_t tiles_side = patch_size / cfg.subpatch;
    const int64_t tiles = tiles_side * tiles_side;
    const int64_t tile_len = in_channels * cfg.subpatch * cfg.subpatch;

    v.embed_ = make_dense(ps, prefix + ".embed", tile_len, cfg.d_model, rs);
    v.pos_table_ = ps.add(prefix + ".pos", small_normal({tiles, cfg.d_model}, 0.02, rs));
    v.class_token_ = ps.add(prefix + ".cls", small_normal({1, cfg.d_model}, 0.02, rs));
    for (int64_t b = 0; b < cfg.blocks; ++b) {
        const std::string base = prefix + ".block" + std::to_string(b);
        Block blk;
        blk.attn = make_attention(ps, base + ".attn", cfg.d_model, cfg.heads, cfg.d_k, rs);
        blk.mlp1 = make_dense(ps, base + ".mlp1", cfg.d_model, cfg.d_model * cfg.mlp_ratio, rs);
        blk.mlp2 = make_dense(ps, base + ".mlp2", cfg.d_model * cfg.mlp_ratio, cfg.d_model, rs);
        v.blocks_.push_back(std::move(blk));
    }
    v.proj_ = make_dense(ps, prefix + ".proj", cfg.d_model, cfg.feature_dim, rs);
    return v;
}

Tensor VitEncoder::encode(const std::vector<Tensor>& patches) const {
    if (patches.empty()) throw ShapeError("VitEncoder: empty patch list");
    const int64_t sp = subpatch_;
    const int64_t tiles_side = patch_size_ / sp;
    const int64_t tiles = tiles_side * tiles_side;
    const int64_t tile_len = in_channels_ * sp * sp;

    const int64_t n_tokens = static_cast<int64_t>(patches.size()) * tiles;
    Tensor raw({n_tokens, tile_len});
    std::vector<int64_t> pos_idx(static_cast<size_t>(n_tokens));
    int64_t tok = 0;
    for (const auto& patch : patches) {
        const bool chan = patch.rank() == 3;
        if ((chan && (patch.dim(0) != in_channels_ || patch.dim(1) != patch_size_ ||
                      patch.dim(2) != patch_size_)) ||
            (!chan && (in_channels_ != 1 || patch.rank() != 2 || patch.dim(0) != patch_size_ ||
                       patch.dim(1) != patch_size_))) {
            throw ShapeError("VitEncoder: patch shape " + shape_str(patch.shape()) +
                             " does not match configured size");
        }
        for (int64_t ty = 0; ty < tiles_side; ++ty) {
            for (int64_t tx = 0; tx < tiles_side; ++tx) {
                double* dst = raw.data() + tok * tile_len;
                for (int64_t c = 0; c < in_channels_; ++c) {
                    const double* src = patch.data() + c * patch_size_ * patch_size_;
                    for (int64_t y = 0; y < sp; ++y) {
                        const double* row = src + (ty * sp + y) * patch_size_ + tx * sp;
                        std::copy_n(row, sp, dst);
                        dst += sp;
                    }
                }
                pos_idx[static_cast<size_t>(tok)] = ty * tiles_side + tx;
                ++tok;
            }
        }
    }
    (void)tiles;

    Tensor t = embed_(raw);
    if (use_pos_) t = add(t, gather_rows(pos_table_, pos_idx));
    // The class token rides along as a query but never enters the key or
    // value set, so attention stays a weighted sum over the patch tokens
    // and the readout is invariant to duplicated patches.
    Tensor cls = class_token_;
    for (const auto& blk : blocks_) {
        cls = add(cls, multi_head_attention_kv(cls, t, blk.attn));
        t = add(t, multi_head_attention_kv(t, t, blk.attn));
        cls = add(cls, blk.mlp2(relu(blk.mlp1(cls))));
        t = add(t, blk.mlp2(relu(blk.mlp1(t))));
    }
    return reshape(proj_(cls), {proj_.out_dim()});
}

// ---------------------------------------------------------- VolumeEncoder

VolumeEncoder VolumeEncoder::build(ParamStore& ps, const std::string& prefix,
                                   const EncoderConfig& cfg, int64_t in_channels,
                                   const Shape& volume_dims, rng::Stream& rs) {
    VolumeEncoder e;
    e.in_channels_ = in_channels;
    if (cfg.backbone == "vit") {
        if (volume_dims.size() != 3 || volume_dims[0] != volume_dims[1]) {
            throw ConfigError("VolumeEncoder: transformer backbone needs square axial slices");
        }
        e.vit_ = VitEncoder::build(ps, prefix, cfg, volume_dims[0], in_channels, rs);
    } else {
        e.cnn_ = CnnEncoder::build(ps, prefix, cfg, in_channels, 3, rs);
    }
    return e;
}

Tensor VolumeEncoder::forward(const Tensor& x, bool training) const {
    if (cnn_) return cnn_->forward(x, training);
    if (x.rank() != 5 || x.dim(1) != in_channels_) {
        throw ShapeError("VolumeEncoder: expected [batch, channel, d0, d1, d2], got " +
                         shape_str(x.shape()));
    }
    // One token set per volume: the stack of axial slices.
    const int64_t b = x.dim(0), c = x.dim(1), d0 = x.dim(2), d1 = x.dim(3), d2 = x.dim(4);
    std::vector<Tensor> features;
    features.reserve(static_cast<size_t>(b));
    for (int64_t n = 0; n < b; ++n) {
        std::vector<Tensor> slices;
        slices.reserve(static_cast<size_t>(d2));
        for (int64_t z = 0; z < d2; ++z) {
            Tensor slice({c, d0, d1});
            for (int64_t ch = 0; ch < c; ++ch) {
                for (int64_t i = 0; i < d0; ++i) {
                    for (int64_t j = 0; j < d1; ++j) {
                        slice.data()[(ch * d0 + i) * d1 + j] =
                            x.data()[(((n * c + ch) * d0 + i) * d1 + j) * d2 + z];
                    }
                }
            }
            slices.push_back(std::move(slice));
        }
        features.push_back(vit_->encode(slices));
    }
    (void)training;  // no batch statistics in the transformer path
    return stack_rows(features);
}

int64_t VolumeEncoder::feature_dim() const {
    return cnn_ ? cnn_->feature_dim() : vit_->feature_dim();
}

}  // namespace sghf
