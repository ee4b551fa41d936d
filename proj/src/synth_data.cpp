#include "sghf/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "sghf/rng.hpp"
#include "sghf/sha256.hpp"

namespace sghf {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

}  // namespace

int64_t Mask3::count() const {
    int64_t n = 0;
    for (uint8_t b : v) n += b ? 1 : 0;
    return n;
}

Subject generate_subject(uint64_t seed, uint64_t id, int label, const SubjectShapes& shapes,
                         double shift) {
    if (shapes.volume.size() != 3) throw ConfigError("generate_subject: volume must be rank-3");
    auto rs = rng::substream(seed, "subject", id);

    Subject s;
    s.id = id;
    s.label = label;

    // Shared latent factor; the shift shrinks class separation.
    const double mu = (label == 1 ? 0.5 : -0.5) * (1.0 - 0.3 * shift);
    for (auto& u : s.latent) u = rs.normal(mu, 0.3);
    const auto& u = s.latent;

    const double noise_sd = 0.05 * (1.0 + 2.0 * shift);
    const double gamma = 1.0 + 0.5 * shift;

    // Volume: ellipsoid blob with latent-driven semi-axes, multiplicative
    // sinusoidal texture, additive noise, clamped to [0,1].
    const Shape& vd = shapes.volume;
    s.volume = Tensor(vd);
    s.mask.dims = vd;
    s.mask.v.assign(static_cast<size_t>(shape_numel(vd)), 0);
    const double a0 = 4.0 + 2.0 * sigmoid(u[0]);
    const double a1 = 4.0 + 2.0 * sigmoid(u[1]);
    const double a2 = 4.0 + 2.0 * sigmoid(u[2]);
    const double w1 = 0.5 + sigmoid(u[3]);
    const double w2 = 0.5 + sigmoid(u[4]);
    const double c0 = (static_cast<double>(vd[0]) - 1.0) / 2.0;
    const double c1 = (static_cast<double>(vd[1]) - 1.0) / 2.0;
    const double c2 = (static_cast<double>(vd[2]) - 1.0) / 2.0;
    int64_t idx = 0;
    for (int64_t x = 0; x < vd[0]; ++x) {
        for (int64_t y = 0; y < vd[1]; ++y) {
            for (int64_t z = 0; z < vd[2]; ++z, ++idx) {
                const double dx = (static_cast<double>(x) - c0) / a0;
                const double dy = (static_cast<double>(y) - c1) / a1;
                const double dz = (static_cast<double>(z) - c2) / a2;
                const double blob = std::exp(-(dx * dx + dy * dy + dz * dz));
                const double mod =
                    1.0 + 0.3 * std::sin(w1 * static_cast<double>(x)) *
                              std::sin(w2 * static_cast<double>(y));
                double v = clamp01(blob * mod + rs.normal(0.0, noise_sd));
                if (gamma != 1.0) v = std::pow(v, gamma);
                s.volume.data()[idx] = v;
                s.mask.v[static_cast<size_t>(idx)] = blob > 0.2 ? 1 : 0;
            }
        }
    }

    // Patches: sinusoidal base texture plus a dot lattice whose strength
    // and spacing come from the same latent, then noise, clamped.
    const double w3 = 0.5 + sigmoid(u[5]);
    const double w4 = 0.5 + sigmoid(u[6]);
    const double dot_amp = 0.4 * sigmoid(u[4]);
    const double spacing = 4.0 + 4.0 * sigmoid(u[5]);
    const int64_t p = shapes.patch;
    for (int64_t pi = 0; pi < shapes.n_patches; ++pi) {
        const double phase = rs.uniform(0.0, 2.0 * std::numbers::pi);
        Tensor patch({p, p});
        for (int64_t x = 0; x < p; ++x) {
            for (int64_t y = 0; y < p; ++y) {
                double v = 0.5 + 0.25 * std::sin(w3 * static_cast<double>(x) + phase) *
                                     std::cos(w4 * static_cast<double>(y));
                // nearest lattice site distance
                const double rx = std::fmod(static_cast<double>(x), spacing);
                const double ry = std::fmod(static_cast<double>(y), spacing);
                const double ddx = std::min(rx, spacing - rx);
                const double ddy = std::min(ry, spacing - ry);
                v += dot_amp * std::exp(-(ddx * ddx + ddy * ddy) / 1.5);
                v += rs.normal(0.0, noise_sd);
                patch.data()[x * p + y] = clamp01(v);
            }
        }
        s.patches.push_back(std::move(patch));
    }
    return s;
}

Mask3 dilate_mask(const Mask3& mask, int64_t r) {
    Mask3 cur = mask;
    const Shape& d = mask.dims;
    for (int64_t it = 0; it < r; ++it) {
        Mask3 next = cur;
        for (int64_t a = 0; a < d[0]; ++a) {
            for (int64_t b = 0; b < d[1]; ++b) {
                for (int64_t c = 0; c < d[2]; ++c) {
                    if (next.at(a, b, c)) continue;
                    const bool hit = (a > 0 && cur.at(a - 1, b, c)) ||
                                     (a + 1 < d[0] && cur.at(a + 1, b, c)) ||
                                     (b > 0 && cur.at(a, b - 1, c)) ||
                                     (b + 1 < d[1] && cur.at(a, b + 1, c)) ||
                                     (c > 0 && cur.at(a, b, c - 1)) ||
                                     (c + 1 < d[2] && cur.at(a, b, c + 1));
                    if (hit) next.v[static_cast<size_t>((a * d[1] + b) * d[2] + c)] = 1;
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

Tensor crop_voi(const Tensor& volume, const Mask3& mask, const Shape& out_shape) {
    if (volume.rank() != 3 || out_shape.size() != 3) {
        throw ShapeError("crop_voi: volume and output shape must be rank-3");
    }
    const Shape& vd = volume.shape();
    for (int i = 0; i < 3; ++i) {
        if (out_shape[static_cast<size_t>(i)] > vd[static_cast<size_t>(i)]) {
            throw ShapeError("crop_voi: output larger than volume on axis " + std::to_string(i));
        }
    }
    // Rounded centroid of the set voxels (volume center if the mask is empty).
    double com[3] = {(static_cast<double>(vd[0]) - 1) / 2, (static_cast<double>(vd[1]) - 1) / 2,
                     (static_cast<double>(vd[2]) - 1) / 2};
    if (!mask.empty()) {
        double sa = 0, sb = 0, sc = 0, n = 0;
        for (int64_t a = 0; a < vd[0]; ++a)
            for (int64_t b = 0; b < vd[1]; ++b)
                for (int64_t c = 0; c < vd[2]; ++c)
                    if (mask.at(a, b, c)) {
                        sa += static_cast<double>(a);
                        sb += static_cast<double>(b);
                        sc += static_cast<double>(c);
                        n += 1.0;
                    }
        com[0] = sa / n;
        com[1] = sb / n;
        com[2] = sc / n;
    }
    int64_t start[3];
    for (int i = 0; i < 3; ++i) {
        const int64_t center = static_cast<int64_t>(std::llround(com[i]));
        const int64_t want = center - out_shape[static_cast<size_t>(i)] / 2;
        const int64_t hi = vd[static_cast<size_t>(i)] - out_shape[static_cast<size_t>(i)];
        start[i] = std::min(hi, std::max<int64_t>(0, want));
    }
    Tensor out(out_shape);
    for (int64_t a = 0; a < out_shape[0]; ++a)
        for (int64_t b = 0; b < out_shape[1]; ++b)
            for (int64_t c = 0; c < out_shape[2]; ++c)
                out.data()[(a * out_shape[1] + b) * out_shape[2] + c] =
                    volume.at({start[0] + a, start[1] + b, start[2] + c});
    return out;
}

Tensor normalize_unit(const Tensor& x) {
    double lo = x.data()[0], hi = x.data()[0];
    for (int64_t i = 0; i < x.numel(); ++i) {
        lo = std::min(lo, x.data()[i]);
        hi = std::max(hi, x.data()[i]);
    }
    Tensor out(x.shape());
    if (hi == lo) return out;  // constant input maps to zeros
    const double range = hi - lo;
    // divide (rather than multiply by a reciprocal) so the extremes land
    // exactly on 0 and 1
    for (int64_t i = 0; i < x.numel(); ++i) out.data()[i] = (x.data()[i] - lo) / range;
    return out;
}

std::vector<ExtractedPatch> extract_patches_with_coverage(const Tensor& image2d,
                                                          const std::vector<uint8_t>& roi,
                                                          int64_t patch, int64_t stride) {
    if (image2d.rank() != 2) throw ShapeError("extract_patches: image must be rank-2");
    const int64_t h = image2d.dim(0), w = image2d.dim(1);
    if (patch > h || patch > w) throw ShapeError("extract_patches: patch larger than image");
    if (static_cast<int64_t>(roi.size()) != h * w) {
        throw ShapeError("extract_patches: roi size does not match image");
    }
    if (stride < 1) throw ShapeError("extract_patches: stride must be >= 1");
    std::vector<ExtractedPatch> out;
    for (int64_t r = 0; r + patch <= h; r += stride) {
        for (int64_t c = 0; c + patch <= w; c += stride) {
            int64_t inside = 0;
            for (int64_t y = 0; y < patch; ++y) {
                const uint8_t* row = roi.data() + (r + y) * w + c;
                for (int64_t x = 0; x < patch; ++x) inside += row[x] ? 1 : 0;
            }
            // keep iff coverage > 0.8 strictly; integer compare is exact
            if (5 * inside <= 4 * patch * patch) continue;
            ExtractedPatch ep;
            ep.row = r;
            ep.col = c;
            ep.image = Tensor({patch, patch});
            for (int64_t y = 0; y < patch; ++y)
                for (int64_t x = 0; x < patch; ++x)
                    ep.image.data()[y * patch + x] = image2d.at({r + y, c + x});
            out.push_back(std::move(ep));
        }
    }
    return out;
}

FoldSplit split_folds(const std::vector<uint64_t>& ids, const std::vector<int>& labels, int k,
                      uint64_t seed) {
    if (ids.size() != labels.size()) throw ConfigError("split_folds: ids/labels length mismatch");
    if (k < 2) throw ConfigError("split_folds: k must be >= 2");
    std::vector<size_t> by_class[2];
    for (size_t i = 0; i < ids.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ConfigError("split_folds: labels must be 0/1");
        by_class[labels[i]].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (static_cast<int>(by_class[c].size()) < k) {
            throw DataError("split_folds: fewer than k subjects in class " + std::to_string(c));
        }
    }
    FoldSplit fs;
    fs.k = k;
    fs.fold_of.assign(ids.size(), -1);
    fs.test_ids.resize(static_cast<size_t>(k));
    fs.train_ids.resize(static_cast<size_t>(k));
    for (int c = 0; c < 2; ++c) {
        auto rs = rng::substream(seed, "fold-split", static_cast<uint64_t>(c));
        auto order = by_class[c];
        rs.shuffle(order);
        for (size_t pos = 0; pos < order.size(); ++pos) {
            fs.fold_of[order[pos]] = static_cast<int>(pos % static_cast<size_t>(k));
        }
    }
    for (size_t i = 0; i < ids.size(); ++i) {
        for (int f = 0; f < k; ++f) {
            if (fs.fold_of[i] == f) {
                fs.test_ids[static_cast<size_t>(f)].push_back(ids[i]);
            } else {
                fs.train_ids[static_cast<size_t>(f)].push_back(ids[i]);
            }
        }
    }
    return fs;
}

std::vector<uint64_t> Dataset::ids() const {
    std::vector<uint64_t> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) out.push_back(s.id);
    return out;
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) out.push_back(s.label);
    return out;
}

const Subject& Dataset::by_id(uint64_t id) const {
    for (const auto& s : subjects) {
        if (s.id == id) return s;
    }
    throw DataError("dataset: unknown subject id " + std::to_string(id));
}

Dataset generate_dataset(uint64_t seed, int64_t n, double balance, const SubjectShapes& shapes,
                         double shift) {
    if (n < 1) throw ConfigError("generate_dataset: need at least one subject");
    if (balance < 0.0 || balance > 1.0) throw ConfigError("generate_dataset: balance in [0,1]");
    Dataset ds;
    ds.seed = seed;
    ds.shift = shift;
    ds.balance = balance;
    ds.shapes = shapes;
    const int64_t n1 = static_cast<int64_t>(std::llround(static_cast<double>(n) * balance));
    for (int64_t i = 0; i < n; ++i) {
        const int label = i < n1 ? 1 : 0;
        ds.subjects.push_back(generate_subject(seed, static_cast<uint64_t>(i), label, shapes, shift));
    }
    return ds;
}

// ------------------------------------------------------------ persistence

namespace {

constexpr uint64_t kBlobMagic = 0x53474846424c4f42ULL;  // "SGHFBLOB"
constexpr uint32_t kBlobVersion = 1;

template <class T>
void put(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("subject blob truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

std::string encode_subject_blob(const Subject& s) {
    std::string buf;
    put(buf, kBlobMagic);
    put(buf, kBlobVersion);
    put(buf, s.id);
    put(buf, static_cast<int32_t>(s.label));
    for (int i = 0; i < 3; ++i) put(buf, s.volume.shape()[static_cast<size_t>(i)]);
    buf.append(reinterpret_cast<const char*>(s.volume.data()),
               sizeof(double) * static_cast<size_t>(s.volume.numel()));
    buf.append(reinterpret_cast<const char*>(s.mask.v.data()), s.mask.v.size());
    put(buf, static_cast<int64_t>(s.patches.size()));
    const int64_t p = s.patches.empty() ? 0 : s.patches[0].dim(0);
    put(buf, p);
    for (const auto& patch : s.patches) {
        buf.append(reinterpret_cast<const char*>(patch.data()),
                   sizeof(double) * static_cast<size_t>(patch.numel()));
    }
    for (double u : s.latent) put(buf, u);
    return buf;
}

namespace {

Subject decode_subject(const std::string& buf) {
    size_t off = 0;
    if (take<uint64_t>(buf, off) != kBlobMagic) throw DataError("subject blob: bad magic");
    if (take<uint32_t>(buf, off) != kBlobVersion) throw DataError("subject blob: bad version");
    Subject s;
    s.id = take<uint64_t>(buf, off);
    s.label = static_cast<int>(take<int32_t>(buf, off));
    Shape vd(3);
    for (int i = 0; i < 3; ++i) vd[static_cast<size_t>(i)] = take<int64_t>(buf, off);
    s.volume = Tensor(vd);
    const size_t vbytes = sizeof(double) * static_cast<size_t>(s.volume.numel());
    if (off + vbytes > buf.size()) throw DataError("subject blob truncated");
    std::memcpy(s.volume.data(), buf.data() + off, vbytes);
    off += vbytes;
    s.mask.dims = vd;
    s.mask.v.resize(static_cast<size_t>(shape_numel(vd)));
    if (off + s.mask.v.size() > buf.size()) throw DataError("subject blob truncated");
    std::memcpy(s.mask.v.data(), buf.data() + off, s.mask.v.size());
    off += s.mask.v.size();
    const int64_t n_patches = take<int64_t>(buf, off);
    const int64_t p = take<int64_t>(buf, off);
    for (int64_t i = 0; i < n_patches; ++i) {
        Tensor patch({p, p});
        const size_t pbytes = sizeof(double) * static_cast<size_t>(patch.numel());
        if (off + pbytes > buf.size()) throw DataError("subject blob truncated");
        std::memcpy(patch.data(), buf.data() + off, pbytes);
        off += pbytes;
        s.patches.push_back(std::move(patch));
    }
    for (auto& u : s.latent) u = take<double>(buf, off);
    return s;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

void write_file(const std::filesystem::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create dataset directory " + dir.string());

    Sha256 content;
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& s : ds.subjects) {
        const std::string blob = encode_subject_blob(s);
        char name[32];
        std::snprintf(name, sizeof(name), "subject_%05llu.bin",
                      static_cast<unsigned long long>(s.id));
        write_file(dir / name, blob);
        content.update(blob);
        subjects.push_back({{"id", s.id}, {"label", s.label}, {"file", name}});
    }
    nlohmann::json manifest{
        {"format", "sghf-dataset-v1"},
        {"seed", ds.seed},
        {"shift", ds.shift},
        {"balance", ds.balance},
        {"n", ds.subjects.size()},
        {"volume", ds.shapes.volume},
        {"n_patches", ds.shapes.n_patches},
        {"patch", ds.shapes.patch},
        {"subjects", subjects},
        {"content_hash", content.hex_digest()},
    };
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
        throw DataError("missing dataset manifest: " + manifest_path.string());
    }
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad dataset manifest: " + std::string(e.what()));
    }
    if (m.value("format", "") != "sghf-dataset-v1") throw DataError("unknown dataset format");
    Dataset ds;
    ds.seed = m.at("seed").get<uint64_t>();
    ds.shift = m.at("shift").get<double>();
    ds.balance = m.at("balance").get<double>();
    ds.shapes.volume = m.at("volume").get<Shape>();
    ds.shapes.n_patches = m.at("n_patches").get<int64_t>();
    ds.shapes.patch = m.at("patch").get<int64_t>();
    ds.content_hash = m.at("content_hash").get<std::string>();
    Sha256 content;
    for (const auto& entry : m.at("subjects")) {
        const std::string blob = read_file(dir / entry.at("file").get<std::string>());
        content.update(blob);
        Subject s = decode_subject(blob);
        if (s.id != entry.at("id").get<uint64_t>() || s.label != entry.at("label").get<int>()) {
            throw DataError("dataset blob disagrees with manifest");
        }
        ds.subjects.push_back(std::move(s));
    }
    if (content.hex_digest() != ds.content_hash) throw DataError("dataset content hash mismatch");
    return ds;
}

Tensor preprocess_volume(const Subject& s, const Shape& voi, int64_t dilate_r) {
    const Mask3 grown = dilate_mask(s.mask, dilate_r);
    return normalize_unit(crop_voi(s.volume, grown, voi));
}

}  // namespace sghf
