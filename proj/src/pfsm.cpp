#include "sghf/pfsm.hpp"

#include <cmath>
#include <sstream>

#include "sghf/rng.hpp"

namespace sghf {

VoiMap preprocess_all(const std::vector<const Subject*>& subjects, const Shape& voi,
                      int64_t dilate_r) {
    VoiMap out;
    for (const Subject* s : subjects) out[s->id] = preprocess_volume(*s, voi, dilate_r);
    return out;
}

Generator init_generator(const PfsmConfig& cfg, uint64_t seed) {
    Generator g;
    g.voi = cfg.voi;
    auto rs = rng::substream(seed, "pfsm-gen-init");
    g.enc = VolumeEncoder::build(g.params, "gen", cfg.gen, /*in_channels=*/2, cfg.voi, rs);
    return g;
}

namespace {

// [B, 2, d0, d1, d2]: intensity channel plus a constant class channel.
Tensor stack_conditioned(const std::vector<Tensor>& vols, const std::vector<double>& c) {
    if (vols.empty()) throw ShapeError("generator: empty batch");
    if (vols.size() != c.size()) throw ShapeError("generator: label count mismatch");
    const Shape& vd = vols[0].shape();
    const int64_t spatial = shape_numel(vd);
    Tensor out({static_cast<int64_t>(vols.size()), 2, vd[0], vd[1], vd[2]});
    for (size_t b = 0; b < vols.size(); ++b) {
        if (vols[b].shape() != vd) throw ShapeError("generator: volume shapes differ in batch");
        double* dst = out.data() + static_cast<int64_t>(b) * 2 * spatial;
        std::copy_n(vols[b].data(), spatial, dst);
        std::fill_n(dst + spatial, spatial, c[b]);
    }
    return out;
}

}  // namespace

Tensor generator_forward_batch(const Generator& g, const std::vector<Tensor>& vols,
                               const std::vector<double>& c, bool training) {
    return g.enc.forward(stack_conditioned(vols, c), training);
}

FeatureVector synthesize_feature(const Subject& s, const Generator& g, double c) {
    NoGradGuard ng;
    Tensor voi = preprocess_volume(s, g.voi);
    Tensor f = generator_forward_batch(g, {voi}, {c}, /*training=*/false);
    FeatureVector out;
    out.values = f.vec();
    out.source = FeatureSource::Synthesized;
    return out;
}

Discriminator init_discriminator(int64_t feature_dim, int64_t hidden, double bn_momentum,
                                 uint64_t seed) {
    Discriminator d;
    auto rs = rng::substream(seed, "pfsm-disc-init");
    d.fc1 = make_dense(d.params, "fc1", feature_dim, hidden, rs);
    d.bn1 = make_bn(d.params, "bn1", hidden, bn_momentum);
    d.fc2 = make_dense(d.params, "fc2", hidden, hidden, rs);
    d.bn2 = make_bn(d.params, "bn2", hidden, bn_momentum);
    d.fc3 = make_dense(d.params, "fc3", hidden, hidden, rs);
    d.head_src = make_dense(d.params, "head_src", hidden, 1, rs);
    d.head_cls = make_dense(d.params, "head_cls", hidden, 1, rs);
    return d;
}

std::pair<Tensor, Tensor> Discriminator::forward(const Tensor& x, bool training) const {
    if (x.rank() != 2 || x.dim(1) != fc1.in_dim()) {
        throw ShapeError("discriminator: expected [batch x F], got " + shape_str(x.shape()));
    }
    Tensor h = bn1(relu(fc1(x)), training);
    h = bn2(relu(fc2(h)), training);
    h = fc3(h);
    const int64_t b = x.dim(0);
    Tensor y1 = reshape(sigmoid(head_src(h)), {b});
    Tensor y2 = reshape(sigmoid(head_cls(h)), {b});
    return {y1, y2};
}

namespace {

std::vector<size_t> sample_batch(rng::Stream& rs, size_t n, size_t batch) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    rs.shuffle(idx);
    idx.resize(std::min(n, batch));
    return idx;
}

}  // namespace

PfsmResult train_pfsm(const std::vector<const Subject*>& train, const FeatureCache& cache,
                      const VoiMap& vois, const PfsmConfig& cfg, uint64_t seed,
                      const PfsmHooks* hooks) {
    if (train.empty()) throw DataError("train_pfsm: empty training set");
    for (const Subject* s : train) {
        if (!cache.count(s->id)) {
            throw DataError("train_pfsm: feature cache misses subject " + std::to_string(s->id));
        }
        if (!vois.count(s->id)) {
            throw DataError("train_pfsm: missing preprocessed volume for subject " +
                            std::to_string(s->id));
        }
    }
    const int64_t feat = static_cast<int64_t>(cache.at(train[0]->id).values.size());
    if (feat != cfg.gen.feature_dim) {
        throw ConfigError("train_pfsm: cache width does not match generator feature_dim");
    }

    PfsmResult res;
    res.gen = init_generator(cfg, seed);
    res.disc = init_discriminator(feat, cfg.disc_hidden, cfg.gen.bn_momentum, seed);
    Adam opt_g(res.gen.params.trainable(), cfg.adam_g);
    Adam opt_d(res.disc.params.trainable(), cfg.adam_d);

    const size_t batch = static_cast<size_t>(cfg.batch);

    auto gather = [&](const std::vector<size_t>& idx, std::vector<Tensor>& volumes,
                      std::vector<double>& labels, std::vector<double>& cond,
                      std::vector<Tensor>& reals) {
        volumes.clear();
        labels.clear();
        cond.clear();
        reals.clear();
        for (size_t i : idx) {
            const Subject* s = train[i];
            volumes.push_back(vois.at(s->id));
            labels.push_back(static_cast<double>(s->label));
            cond.push_back(cfg.true_label_conditioning ? static_cast<double>(s->label)
                                                       : cfg.neutral_c);
            reals.push_back(Tensor::from_vector(cache.at(s->id).values));
        }
    };

    for (int step = 0; step < cfg.steps; ++step) {
        double loss_d_sum = 0.0;
        int64_t src_correct = 0, src_total = 0, cls_correct = 0, cls_total = 0;

        for (int sub = 0; sub < cfg.k_d; ++sub) {
            auto rs = rng::substream(seed, "gan-d-batch", static_cast<uint64_t>(step),
                                     static_cast<uint64_t>(sub));
            const auto idx = sample_batch(rs, train.size(), batch);
            std::vector<Tensor> volumes, reals;
            std::vector<double> labels, cond;
            gather(idx, volumes, labels, cond, reals);

            Tensor x_fake;
            {
                NoGradGuard ng;  // generator is sampled, not updated
                x_fake = generator_forward_batch(res.gen, volumes, cond, /*training=*/true);
            }
            Tensor x_real = stack_rows(reals);
            auto [y1_real, y2_real] = res.disc.forward(x_real, /*training=*/true);
            auto [y1_fake, y2_fake] = res.disc.forward(x_fake, /*training=*/true);
            Tensor loss = mul_scalar(gan_d_loss(y1_real, y1_fake, y2_real, y2_fake, labels),
                                     cfg.lambda_p);
            const double lv = loss.value();
            if (!std::isfinite(lv)) {
                throw NumericalError("train_pfsm: non-finite discriminator loss at step " +
                                     std::to_string(step));
            }
            loss.backward();
            if (hooks && hooks->after_d_backward) hooks->after_d_backward(step, res.gen, res.disc);
            opt_d.step();
            res.disc.params.zero_grads();
            loss_d_sum += lv;

            for (size_t i = 0; i < idx.size(); ++i) {
                src_correct += y1_real.data()[i] >= 0.5 ? 1 : 0;
                src_correct += y1_fake.data()[i] < 0.5 ? 1 : 0;
                src_total += 2;
                const double li = labels[i];
                cls_correct += ((y2_real.data()[i] >= 0.5 ? 1.0 : 0.0) == li) ? 1 : 0;
                cls_correct += ((y2_fake.data()[i] >= 0.5 ? 1.0 : 0.0) == li) ? 1 : 0;
                cls_total += 2;
            }
        }

        // Generator update through an evaluation-mode discriminator; its
        // running statistics stay untouched so a k_d=0 run leaves the
        // discriminator byte-identical.
        auto rs = rng::substream(seed, "gan-g-batch", static_cast<uint64_t>(step));
        const auto idx = sample_batch(rs, train.size(), batch);
        std::vector<Tensor> volumes, reals;
        std::vector<double> labels, cond;
        gather(idx, volumes, labels, cond, reals);
        Tensor x_fake = generator_forward_batch(res.gen, volumes, cond, /*training=*/true);
        auto [y1_fake, y2_fake] = res.disc.forward(x_fake, /*training=*/false);
        Tensor loss_g = mul_scalar(gan_g_loss(y1_fake, y2_fake, labels, cfg.g_mode), cfg.lambda_p);
        const double lg = loss_g.value();
        if (!std::isfinite(lg)) {
            throw NumericalError("train_pfsm: non-finite generator loss at step " +
                                 std::to_string(step));
        }
        loss_g.backward();
        if (hooks && hooks->after_g_backward) hooks->after_g_backward(step, res.gen, res.disc);
        opt_g.step();
        res.gen.params.zero_grads();
        res.disc.params.zero_grads();  // discard tape spill-over into D

        GanLogRow row;
        row.step = step;
        row.loss_d = cfg.k_d > 0 ? loss_d_sum / cfg.k_d : 0.0;
        row.loss_g = lg;
        row.acc_src = src_total > 0 ? static_cast<double>(src_correct) / src_total : 0.0;
        row.acc_cls = cls_total > 0 ? static_cast<double>(cls_correct) / cls_total : 0.0;
        res.log.push_back(row);
    }
    return res;
}

std::string gan_log_to_csv(const std::vector<GanLogRow>& log) {
    std::ostringstream os;
    os << "step,loss_d,loss_g,acc_src,acc_cls\n";
    char line[160];
    for (const auto& r : log) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss_d,
                      r.loss_g, r.acc_src, r.acc_cls);
        os << line;
    }
    return os.str();
}

}  // namespace sghf
