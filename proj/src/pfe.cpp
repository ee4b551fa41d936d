#include "sghf/pfe.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sghf/rng.hpp"

namespace sghf {

namespace {

// Channel min-max normalization stands in for stain normalization.
std::vector<Tensor> normalized_patches(const Subject& s) {
    std::vector<Tensor> out;
    out.reserve(s.patches.size());
    for (const auto& p : s.patches) out.push_back(normalize_unit(p));
    return out;
}

Tensor subject_probability(const PfeModel& model, const Subject& s) {
    Tensor f = model.encoder.encode(normalized_patches(s));
    Tensor logit = model.head(reshape(f, {1, f.dim(0)}));
    return reshape(sigmoid(logit), {1});
}

}  // namespace

PfeModel init_pfe(const PfeConfig& cfg, int64_t patch_size, uint64_t seed) {
    PfeModel m;
    m.patch_size = patch_size;
    auto rs = rng::substream(seed, "pfe-init");
    m.encoder = VitEncoder::build(m.params, "vit", cfg.vit, patch_size, 1, rs);
    m.head = make_dense(m.params, "head", cfg.vit.feature_dim, 1, rs);
    return m;
}

std::vector<EpochLog> train_pfe(PfeModel& model, const std::vector<const Subject*>& train,
                                const PfeConfig& cfg, uint64_t seed) {
    int per_class[2] = {0, 0};
    for (const Subject* s : train) per_class[s->label]++;
    if (per_class[0] < 2 || per_class[1] < 2) {
        throw DataError("train_pfe: need at least two subjects per class");
    }

    Adam opt(model.params.trainable(), cfg.adam);
    std::vector<EpochLog> log;
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rs = rng::substream(seed, "pfe-order", static_cast<uint64_t>(epoch));
        rs.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
            std::vector<Tensor> probs;
            std::vector<double> labels;
            for (size_t i = start; i < end; ++i) {
                const Subject* s = train[order[i]];
                probs.push_back(subject_probability(model, *s));
                labels.push_back(static_cast<double>(s->label));
            }
            Tensor p = reshape(stack_rows(probs), {static_cast<int64_t>(probs.size())});
            Tensor loss = bce_loss(p, labels);
            const double lv = loss.value();
            if (!std::isfinite(lv)) {
                throw NumericalError("train_pfe: non-finite loss at epoch " +
                                     std::to_string(epoch));
            }
            loss.backward();
            opt.step();
            model.params.zero_grads();
            epoch_loss += lv * static_cast<double>(end - start);
        }
        log.push_back({epoch, epoch_loss / static_cast<double>(train.size())});
    }
    return log;
}

FeatureVector extract_path_feature(const Subject& s, const PfeModel& model) {
    NoGradGuard ng;
    Tensor f = model.encoder.encode(normalized_patches(s));
    FeatureVector out;
    out.values = f.vec();
    out.source = FeatureSource::RealPathology;
    return out;
}

double pfe_classify(const Subject& s, const PfeModel& model) {
    NoGradGuard ng;
    return subject_probability(model, s).value();
}

FeatureCache build_feature_cache(const std::vector<const Subject*>& subjects,
                                 const PfeModel& model) {
    FeatureCache cache;
    for (const Subject* s : subjects) cache[s->id] = extract_path_feature(*s, model);
    return cache;
}

void save_feature_cache(const FeatureCache& cache, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create feature cache directory " + dir.string());
    nlohmann::json ids = nlohmann::json::array();
    int64_t dim = -1;
    for (const auto& [id, fv] : cache) {
        if (dim < 0) dim = static_cast<int64_t>(fv.values.size());
        char name[32];
        std::snprintf(name, sizeof(name), "feat_%05llu.bin", static_cast<unsigned long long>(id));
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write feature blob");
        out.write(reinterpret_cast<const char*>(fv.values.data()),
                  static_cast<std::streamsize>(sizeof(double) * fv.values.size()));
        ids.push_back(id);
    }
    nlohmann::json manifest{
        {"format", "sghf-features-v1"}, {"dim", dim}, {"ids", ids}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
}

FeatureCache load_feature_cache(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("missing feature cache manifest in " + dir.string());
    nlohmann::json m;
    try {
        in >> m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad feature cache manifest: " + std::string(e.what()));
    }
    if (m.value("format", "") != "sghf-features-v1") throw DataError("unknown feature cache format");
    const auto dim = m.at("dim").get<int64_t>();
    FeatureCache cache;
    for (const auto& jid : m.at("ids")) {
        const auto id = jid.get<uint64_t>();
        char name[32];
        std::snprintf(name, sizeof(name), "feat_%05llu.bin", static_cast<unsigned long long>(id));
        std::ifstream blob(dir / name, std::ios::binary);
        if (!blob) throw DataError("missing feature blob for subject " + std::to_string(id));
        FeatureVector fv;
        fv.values.resize(static_cast<size_t>(dim));
        blob.read(reinterpret_cast<char*>(fv.values.data()),
                  static_cast<std::streamsize>(sizeof(double) * fv.values.size()));
        if (!blob) throw DataError("truncated feature blob for subject " + std::to_string(id));
        cache[id] = std::move(fv);
    }
    return cache;
}

}  // namespace sghf
