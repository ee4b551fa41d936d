#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "sghf/checkpoint.hpp"
#include "sghf/sghf_model.hpp"
#include "test_support.hpp"

using namespace sghf;
using sghf::testing::random_tensor;

namespace {

SubjectShapes tiny_shapes() {
    SubjectShapes s;
    s.volume = {12, 12, 8};
    s.n_patches = 2;
    s.patch = 16;
    return s;
}

SghfConfig tiny_cfg() {
    SghfConfig cfg;
    cfg.rfem.backbone = "cnn-small";
    cfg.rfem.feature_dim = 8;
    cfg.rfem.base_channels = 3;
    cfg.voi = {8, 8, 6};
    cfg.adam.lr = 2e-3;
    cfg.epochs = 10;
    cfg.batch = 6;
    return cfg;
}

std::shared_ptr<Generator> tiny_generator(uint64_t seed) {
    PfsmConfig pcfg;
    pcfg.gen.backbone = "cnn-small";
    pcfg.gen.feature_dim = 8;
    pcfg.gen.base_channels = 3;
    pcfg.voi = {8, 8, 6};
    return std::make_shared<Generator>(init_generator(pcfg, seed));
}

std::vector<Subject> make_subjects(uint64_t seed, int n) {
    std::vector<Subject> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(generate_subject(seed, static_cast<uint64_t>(i), i % 2, tiny_shapes()));
    }
    return out;
}

std::vector<const Subject*> ptrs(const std::vector<Subject>& v) {
    std::vector<const Subject*> p;
    for (const auto& s : v) p.push_back(&s);
    return p;
}

}  // namespace

TEST_CASE("variant parsing round-trips") {
    for (const char* name : {"sghf", "benchmark-rf", "spf-only", "double-rf"}) {
        CHECK(to_string(variant_from_string(name)) == name);
    }
    CHECK_THROWS_AS(variant_from_string("resnet"), ConfigError);
}

TEST_CASE("build_model: structure contracts per variant") {
    auto cfg = tiny_cfg();
    auto gen = tiny_generator(1);

    SghfModel bench = build_model(Variant::BenchmarkRf, cfg, nullptr, 2);
    CHECK(bench.rfem.has_value());
    CHECK_FALSE(bench.rfem2.has_value());
    CHECK(bench.frozen == nullptr);
    CHECK_FALSE(bench.two_branch);
    CHECK(bench.head.in_dim() == 8);

    SghfModel full = build_model(Variant::Sghf, cfg, gen, 2);
    CHECK(full.rfem.has_value());
    CHECK(full.frozen != nullptr);
    CHECK(full.two_branch);
    CHECK(full.fuse_hidden.in_dim() == 16);  // fusion consumes both branches
    CHECK(full.fuse_hidden.out_dim() == 8);

    SghfModel spf = build_model(Variant::SpfOnly, cfg, gen, 2);
    CHECK_FALSE(spf.rfem.has_value());
    // only the head trains; every parameter belongs to it
    CHECK(spf.params.trainable_count() == 8 + 1);

    SghfModel dbl = build_model(Variant::DoubleRf, cfg, nullptr, 2);
    CHECK(dbl.rfem.has_value());
    CHECK(dbl.rfem2.has_value());

    CHECK_THROWS_AS(build_model(Variant::Sghf, cfg, nullptr, 2), ConfigError);
    CHECK_THROWS_AS(build_model(Variant::BenchmarkRf, cfg, gen, 2), ConfigError);
}

TEST_CASE("double-rf trainable parameters are ~2x the benchmark") {
    auto cfg = tiny_cfg();
    cfg.rfem.feature_dim = 16;
    cfg.rfem.base_channels = 6;
    SghfModel bench = build_model(Variant::BenchmarkRf, cfg, nullptr, 3);
    SghfModel dbl = build_model(Variant::DoubleRf, cfg, nullptr, 3);
    const double ratio = static_cast<double>(trainable_param_count(dbl)) /
                         static_cast<double>(trainable_param_count(bench));
    CHECK(ratio >= 1.9);
    CHECK(ratio <= 2.1);
}

TEST_CASE("benchmark-rf equals the radiological branch of sghf given shared weights") {
    auto cfg = tiny_cfg();
    auto gen = tiny_generator(4);
    // identical seed -> identical radiological encoder initialization
    SghfModel bench = build_model(Variant::BenchmarkRf, cfg, nullptr, 7);
    SghfModel full = build_model(Variant::Sghf, cfg, gen, 7);

    auto rs = rng::substream(80, "volumes");
    std::vector<Tensor> vols{random_tensor({8, 8, 6}, rs, 0.0, 1.0),
                             random_tensor({8, 8, 6}, rs, 0.0, 1.0)};
    Tensor batch({2, 1, 8, 8, 6});
    for (int b = 0; b < 2; ++b) {
        std::copy_n(vols[static_cast<size_t>(b)].data(), 8 * 8 * 6,
                    batch.data() + b * 8 * 8 * 6);
    }
    NoGradGuard ng;
    Tensor fa = bench.rfem->forward(batch, false);
    Tensor fb = full.rfem->forward(batch, false);
    CHECK(fa.vec() == fb.vec());
}

TEST_CASE("forward: probabilities in (0,1); batch equals per-subject in eval") {
    auto cfg = tiny_cfg();
    auto gen = tiny_generator(5);
    SghfModel m = build_model(Variant::Sghf, cfg, gen, 8);
    auto rs = rng::substream(81, "fw");
    std::vector<Tensor> vols;
    std::vector<double> cs;
    for (int i = 0; i < 3; ++i) {
        vols.push_back(random_tensor({8, 8, 6}, rs, 0.0, 1.0));
        cs.push_back(0.5);
    }
    NoGradGuard ng;
    Tensor p = forward_batch(m, vols, cs, false);
    CHECK(p.shape() == Shape{3});
    for (int64_t i = 0; i < 3; ++i) {
        CHECK(p.data()[i] > 0.0);
        CHECK(p.data()[i] < 1.0);
        Tensor single = forward_batch(m, {vols[static_cast<size_t>(i)]}, {0.5}, false);
        CHECK(single.value() == p.data()[i]);
    }
}

TEST_CASE("predict: tie at p=0.5 resolves to class 1") {
    auto cfg = tiny_cfg();
    SghfModel m = build_model(Variant::BenchmarkRf, cfg, nullptr, 9);
    // zero head -> sigmoid(0) = 0.5 exactly
    std::fill(m.head.w.vec().begin(), m.head.w.vec().end(), 0.0);
    std::fill(m.head.b.vec().begin(), m.head.b.vec().end(), 0.0);
    Subject s = generate_subject(83, 0, 0, tiny_shapes());
    Prediction pred = predict(m, s);
    CHECK(pred.p == 0.5);
    CHECK(pred.label == 1);
}

TEST_CASE("train_sghf: freeze invariant, gradient partition, determinism") {
    auto cfg = tiny_cfg();
    cfg.epochs = 4;
    auto subjects = make_subjects(29, 12);
    auto train = ptrs(subjects);
    auto vois = preprocess_all(train, cfg.voi);
    auto gen = tiny_generator(6);
    const std::string frozen_before = params_checksum(gen->params);

    SghfModel m = build_model(Variant::Sghf, cfg, gen, 10);
    int checked = 0;
    TrainHooks hooks;
    hooks.after_backward = [&](int, const SghfModel& model) {
        // the frozen generator never accumulates gradients
        for (const auto& [name, e] : model.frozen->params.all()) {
            if (e.tensor.has_grad()) {
                for (double v : e.tensor.grad()) CHECK(v == 0.0);
            }
        }
        // and never changes value
        CHECK(params_checksum(model.frozen->params) == frozen_before);
        // while at least one trainable parameter is moving
        bool any = false;
        for (const auto& [name, e] : model.params.all()) {
            if (!e.trainable || !e.tensor.has_grad()) continue;
            for (double v : e.tensor.grad()) any = any || v != 0.0;
        }
        CHECK(any);
        ++checked;
    };
    train_sghf(m, train, vois, cfg, 10, &hooks);
    CHECK(checked > 0);
    CHECK(params_checksum(gen->params) == frozen_before);

    // serialization of the frozen generator is byte-equal before/after
    SghfModel m2 = build_model(Variant::Sghf, cfg, gen, 10);
    train_sghf(m2, train, vois, cfg, 10);
    CHECK(params_checksum(m.params) == params_checksum(m2.params));
    CHECK(params_to_json(gen->params, "pfsm-g") == params_to_json(gen->params, "pfsm-g"));
}

TEST_CASE("training reaches high accuracy on the separable task") {
    auto cfg = tiny_cfg();
    cfg.epochs = 12;
    auto subjects = make_subjects(31, 40);
    auto train = ptrs(subjects);
    auto vois = preprocess_all(train, cfg.voi);
    SghfModel m = build_model(Variant::BenchmarkRf, cfg, nullptr, 11);
    auto log = train_sghf(m, train, vois, cfg, 11);
    CHECK(log.back().loss < log.front().loss);
    int correct = 0;
    for (const Subject* s : train) correct += predict(m, *s).label == s->label;
    CHECK(static_cast<double>(correct) / static_cast<double>(train.size()) > 0.9);
}

TEST_CASE("zeroing the frozen branch changes a trained model's output") {
    auto cfg = tiny_cfg();
    cfg.epochs = 6;
    auto subjects = make_subjects(37, 16);
    auto train = ptrs(subjects);
    auto vois = preprocess_all(train, cfg.voi);
    auto gen = tiny_generator(12);
    SghfModel m = build_model(Variant::Sghf, cfg, gen, 13);
    train_sghf(m, train, vois, cfg, 13);

    // same trained head/rfem, but a silenced synthesis branch
    auto dead_gen = tiny_generator(12);
    for (const auto& [name, e] : dead_gen->params.all()) {
        Tensor t = dead_gen->params.get(name);  // shared storage handle
        std::fill(t.vec().begin(), t.vec().end(), 0.0);
    }
    SghfModel cut = build_model(Variant::Sghf, cfg, dead_gen, 13);
    params_from_json(cut.params, params_to_json(m.params, "sghf-model:sghf"),
                     "sghf-model:sghf");

    const Subject& probe = subjects[0];
    CHECK(predict(m, probe).p != predict(cut, probe).p);
}

TEST_CASE("model checkpoints round-trip through json") {
    auto cfg = tiny_cfg();
    auto subjects = make_subjects(41, 8);
    SghfModel m = build_model(Variant::BenchmarkRf, cfg, nullptr, 14);
    const std::string blob = params_to_json(m.params, "sghf-model:benchmark-rf");
    SghfModel fresh = build_model(Variant::BenchmarkRf, cfg, nullptr, 999);
    CHECK(params_checksum(fresh.params) != params_checksum(m.params));
    params_from_json(fresh.params, blob, "sghf-model:benchmark-rf");
    CHECK(params_checksum(fresh.params) == params_checksum(m.params));
    CHECK_THROWS_AS(params_from_json(fresh.params, blob, "pfe"), DataError);
}
