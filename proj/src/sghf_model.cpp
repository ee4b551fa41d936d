#include "sghf/sghf_model.hpp"

#include <cmath>
#include <sstream>

#include "sghf/rng.hpp"

namespace sghf {

Variant variant_from_string(const std::string& s) {
    if (s == "sghf") return Variant::Sghf;
    if (s == "benchmark-rf") return Variant::BenchmarkRf;
    if (s == "spf-only") return Variant::SpfOnly;
    if (s == "double-rf") return Variant::DoubleRf;
    throw ConfigError("unknown variant: " + s);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Sghf: return "sghf";
        case Variant::BenchmarkRf: return "benchmark-rf";
        case Variant::SpfOnly: return "spf-only";
        case Variant::DoubleRf: return "double-rf";
    }
    return "?";
}

SghfModel build_model(Variant v, const SghfConfig& cfg, std::shared_ptr<const Generator> frozen,
                      uint64_t seed) {
    const bool needs_frozen = v == Variant::Sghf || v == Variant::SpfOnly;
    if (needs_frozen && !frozen) {
        throw ConfigError("build_model: variant " + to_string(v) +
                          " requires a trained generator");
    }
    if (!needs_frozen && frozen) {
        throw ConfigError("build_model: variant " + to_string(v) + " takes no generator");
    }
    if (needs_frozen && frozen->feature_dim() != cfg.rfem.feature_dim) {
        throw ConfigError("build_model: generator width differs from configured feature_dim");
    }

    SghfModel m;
    m.variant = v;
    m.frozen = std::move(frozen);
    m.voi = cfg.voi;
    m.feature_dim = cfg.rfem.feature_dim;
    m.neutral_c = cfg.neutral_c;
    m.true_label_conditioning = cfg.true_label_conditioning;
    m.two_branch = v == Variant::Sghf || v == Variant::DoubleRf;

    auto rs_enc = rng::substream(seed, "rfem-init");
    if (v != Variant::SpfOnly) {
        m.rfem = VolumeEncoder::build(m.params, "rfem", cfg.rfem, 1, cfg.voi, rs_enc);
    }
    if (v == Variant::DoubleRf) {
        auto rs2 = rng::substream(seed, "rfem2-init");
        m.rfem2 = VolumeEncoder::build(m.params, "rfem2", cfg.rfem, 1, cfg.voi, rs2);
    }
    auto rs_head = rng::substream(seed, "head-init");
    const int64_t f = m.feature_dim;
    if (m.two_branch) {
        m.fuse_hidden = make_dense(m.params, "fuse_hidden", 2 * f, f, rs_head);
    }
    m.head = make_dense(m.params, "head", f, 1, rs_head);
    return m;
}

namespace {

Tensor stack_plain(const std::vector<Tensor>& vols) {
    if (vols.empty()) throw ShapeError("forward: empty batch");
    const Shape& vd = vols[0].shape();
    const int64_t spatial = shape_numel(vd);
    Tensor out({static_cast<int64_t>(vols.size()), 1, vd[0], vd[1], vd[2]});
    for (size_t b = 0; b < vols.size(); ++b) {
        if (vols[b].shape() != vd) throw ShapeError("forward: volume shapes differ in batch");
        std::copy_n(vols[b].data(), spatial, out.data() + static_cast<int64_t>(b) * spatial);
    }
    return out;
}

}  // namespace

Tensor forward_batch(const SghfModel& m, const std::vector<Tensor>& vols,
                     const std::vector<double>& c_channel, bool training) {
    if (vols.size() != c_channel.size()) throw ShapeError("forward: label count mismatch");
    Tensor fused;
    switch (m.variant) {
        case Variant::BenchmarkRf:
            fused = m.rfem->forward(stack_plain(vols), training);
            break;
        case Variant::SpfOnly: {
            NoGradGuard ng;  // frozen prior, evaluation-mode statistics
            fused = generator_forward_batch(*m.frozen, vols, c_channel, false);
            break;
        }
        case Variant::Sghf: {
            Tensor f_p;
            {
                NoGradGuard ng;
                f_p = generator_forward_batch(*m.frozen, vols, c_channel, false);
            }
            Tensor f_r = m.rfem->forward(stack_plain(vols), training);
            fused = concat(f_p, f_r, 1);
            break;
        }
        case Variant::DoubleRf: {
            Tensor batch = stack_plain(vols);
            Tensor f_a = m.rfem2->forward(batch, training);
            Tensor f_b = m.rfem->forward(batch, training);
            fused = concat(f_a, f_b, 1);
            break;
        }
    }
    if (m.two_branch) fused = relu(m.fuse_hidden(fused));
    const int64_t b = static_cast<int64_t>(vols.size());
    return reshape(sigmoid(m.head(fused)), {b});
}

std::vector<EpochLog> train_sghf(SghfModel& m, const std::vector<const Subject*>& train,
                                 const VoiMap& vois, const SghfConfig& cfg, uint64_t seed,
                                 const TrainHooks* hooks) {
    for (const Subject* s : train) {
        if (!vois.count(s->id)) {
            throw DataError("train_sghf: missing preprocessed volume for subject " +
                            std::to_string(s->id));
        }
    }
    Adam opt(m.params.trainable(), cfg.adam);
    std::vector<EpochLog> log;
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    int step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rs = rng::substream(seed, "sghf-order", static_cast<uint64_t>(epoch));
        rs.shuffle(order);
        // batch boundaries; a trailing singleton joins the previous batch
        // so training-mode batch norm always sees at least two samples
        std::vector<size_t> bounds{0};
        while (bounds.back() + static_cast<size_t>(cfg.batch) < order.size()) {
            bounds.push_back(bounds.back() + static_cast<size_t>(cfg.batch));
        }
        bounds.push_back(order.size());
        if (bounds.size() >= 3 && bounds[bounds.size() - 1] - bounds[bounds.size() - 2] == 1) {
            bounds.erase(bounds.end() - 2);
        }
        double epoch_loss = 0.0;
        for (size_t bi = 0; bi + 1 < bounds.size(); ++bi) {
            std::vector<Tensor> volumes;
            std::vector<double> labels, cond;
            for (size_t i = bounds[bi]; i < bounds[bi + 1]; ++i) {
                const Subject* s = train[order[i]];
                volumes.push_back(vois.at(s->id));
                labels.push_back(static_cast<double>(s->label));
                cond.push_back(m.true_label_conditioning ? static_cast<double>(s->label)
                                                         : m.neutral_c);
            }
            Tensor p = forward_batch(m, volumes, cond, /*training=*/true);
            Tensor loss = mul_scalar(bce_loss(p, labels), cfg.lambda_r);
            const double lv = loss.value();
            if (!std::isfinite(lv)) {
                throw NumericalError("train_sghf: non-finite loss at epoch " +
                                     std::to_string(epoch));
            }
            loss.backward();
            if (hooks && hooks->after_backward) hooks->after_backward(step, m);
            opt.step();
            m.params.zero_grads();
            ++step;
            epoch_loss += lv * static_cast<double>(labels.size());
        }
        log.push_back({epoch, epoch_loss / static_cast<double>(train.size())});
    }
    return log;
}

Prediction predict(const SghfModel& m, const Subject& s) {
    NoGradGuard ng;
    Tensor voi = preprocess_volume(s, m.voi);
    const double c = m.true_label_conditioning ? static_cast<double>(s.label) : m.neutral_c;
    Tensor p = forward_batch(m, {voi}, {c}, /*training=*/false);
    Prediction out;
    out.p = p.value();
    out.label = out.p >= 0.5 ? 1 : 0;
    return out;
}

int64_t trainable_param_count(const SghfModel& m) { return m.params.trainable_count(); }

std::string epoch_log_to_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,loss\n";
    char line[64];
    for (const auto& r : log) {
        std::snprintf(line, sizeof(line), "%d,%.17g\n", r.epoch, r.loss);
        os << line;
    }
    return os.str();
}

}  // namespace sghf
