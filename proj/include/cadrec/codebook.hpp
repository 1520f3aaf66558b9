#pragma once

#include "cadrec/geometry.hpp"
#include "cadrec/ppf.hpp"
#include "cadrec/sampling.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

namespace cadrec {

struct CodebookEntry {
    std::uint32_t model_ref_index = 0;
    double alpha_model = 0.0;  // radians in (-pi, pi]
};

// Inverted file over quantized PPFs of every ordered sampled-model pair.
// Each bucket stores the local parameterization (reference index, alpha)
// that turns a matched scene pair into a full 6DoF pose.
struct Codebook {
    std::unordered_map<QuantizedPPF, std::vector<CodebookEntry>, QuantizedPPFHash> table;
    OrientedPointCloud sampled_model;
    double dist_step = 0.0;
    std::uint32_t n_angle_bins = 0;
    double model_diameter = 0.0;

    double angle_step() const { return kPi / n_angle_bins; }

    const std::vector<CodebookEntry>* lookup(const QuantizedPPF& key) const {
        auto it = table.find(key);
        return it == table.end() ? nullptr : &it->second;
    }

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& [k, v] : table) n += v.size();
        return n;
    }
};

// Builds the model description: samples the surface at tau * diam(M) and
// hashes every ordered pair under its quantized PPF.
inline Codebook train(const TriMesh& model, double tau, double angle_step = kPi / 15.0) {
    if (model.empty() || model.faces.empty())
        throw Error(ErrorCode::EmptyModel, "train: empty model mesh");
    if (tau <= 0.0 || tau >= 0.2)
        throw Error(ErrorCode::InvalidConfig, "train: tau must be in (0, 0.2)");

    Codebook cb;
    cb.model_diameter = diameter(model);
    cb.dist_step = tau * cb.model_diameter;
    cb.n_angle_bins = angle_bin_count(angle_step);
    cb.sampled_model = sample_mesh_uniform(model, cb.dist_step);

    const std::size_t n = cb.sampled_model.size();
    if (n < 10) throw Error(ErrorCode::TooFewSamples, "train: fewer than 10 model samples");

    const double astep = cb.angle_step();
    for (std::uint32_t i = 0; i < n; ++i) {
        const Vec3& pi = cb.sampled_model.points[i];
        const Vec3& ni = cb.sampled_model.normals[i];
        for (std::uint32_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const Vec3& pj = cb.sampled_model.points[j];
            const PPF f = compute_ppf(pi, ni, pj, cb.sampled_model.normals[j]);
            const QuantizedPPF key = quantize(f, cb.dist_step, astep);
            double alpha;
            try {
                alpha = compute_alpha(pi, ni, pj);
            } catch (const Error&) {
                alpha = 0.0;  // paired point on the normal axis: spin undefined
            }
            cb.table[key].push_back({i, alpha});
        }
    }
    return cb;
}

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}
template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    put_bytes(out, &v, sizeof(T));  // host is little-endian
}

struct Reader {
    const char* p;
    const char* end;
    std::size_t offset(const char* base) const { return static_cast<std::size_t>(p - base); }
    template <typename T>
    T get(const char* base) {
        if (p + sizeof(T) > end)
            throw Error(ErrorCode::MalformedFile,
                        "codebook: truncated at byte " + std::to_string(offset(base)));
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        return v;
    }
};

}  // namespace detail

// Versioned little-endian binary format:
//   magic "PPFC", version u32, dist_step f64, n_angle_bins u32,
//   model_diameter f64, sample count u64, points f64x3, normals f64x3,
//   bucket count u64, then per bucket (sorted by key): key u32x4,
//   entry count u64, entries (model_ref u32, alpha f64).
inline std::string serialize_codebook(const Codebook& cb) {
    using detail::put;
    std::string out;
    out.append("PPFC", 4);
    put<std::uint32_t>(out, 1);
    put<double>(out, cb.dist_step);
    put<std::uint32_t>(out, cb.n_angle_bins);
    put<double>(out, cb.model_diameter);
    put<std::uint64_t>(out, cb.sampled_model.size());
    for (const Vec3& p : cb.sampled_model.points)
        for (int k = 0; k < 3; ++k) put<double>(out, p[k]);
    for (const Vec3& n : cb.sampled_model.normals)
        for (int k = 0; k < 3; ++k) put<double>(out, n[k]);

    std::vector<const std::pair<const QuantizedPPF, std::vector<CodebookEntry>>*> buckets;
    buckets.reserve(cb.table.size());
    for (const auto& kv : cb.table) buckets.push_back(&kv);
    std::sort(buckets.begin(), buckets.end(), [](const auto* a, const auto* b) {
        const auto& x = a->first;
        const auto& y = b->first;
        return std::tie(x.dist_bin, x.nd1_bin, x.nd2_bin, x.nn_bin) <
               std::tie(y.dist_bin, y.nd1_bin, y.nd2_bin, y.nn_bin);
    });
    put<std::uint64_t>(out, buckets.size());
    for (const auto* kv : buckets) {
        put<std::uint32_t>(out, kv->first.dist_bin);
        put<std::uint32_t>(out, kv->first.nd1_bin);
        put<std::uint32_t>(out, kv->first.nd2_bin);
        put<std::uint32_t>(out, kv->first.nn_bin);
        put<std::uint64_t>(out, kv->second.size());
        for (const CodebookEntry& e : kv->second) {
            put<std::uint32_t>(out, e.model_ref_index);
            put<double>(out, e.alpha_model);
        }
    }
    return out;
}

inline Codebook deserialize_codebook(const std::string& bytes) {
    detail::Reader r{bytes.data(), bytes.data() + bytes.size()};
    const char* base = bytes.data();
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "PPFC", 4) != 0)
        throw Error(ErrorCode::MalformedFile, "codebook: bad magic");
    r.p += 4;
    const auto version = r.get<std::uint32_t>(base);
    if (version != 1)
        throw Error(ErrorCode::MalformedFile,
                    "codebook: unsupported version " + std::to_string(version));
    Codebook cb;
    cb.dist_step = r.get<double>(base);
    cb.n_angle_bins = r.get<std::uint32_t>(base);
    cb.model_diameter = r.get<double>(base);
    const auto n = r.get<std::uint64_t>(base);
    cb.sampled_model.points.resize(n);
    cb.sampled_model.normals.resize(n);
    for (auto& p : cb.sampled_model.points)
        for (int k = 0; k < 3; ++k) p[k] = r.get<double>(base);
    for (auto& nrm : cb.sampled_model.normals)
        for (int k = 0; k < 3; ++k) nrm[k] = r.get<double>(base);
    const auto n_buckets = r.get<std::uint64_t>(base);
    cb.table.reserve(n_buckets);
    for (std::uint64_t b = 0; b < n_buckets; ++b) {
        QuantizedPPF key;
        key.dist_bin = r.get<std::uint32_t>(base);
        key.nd1_bin = r.get<std::uint32_t>(base);
        key.nd2_bin = r.get<std::uint32_t>(base);
        key.nn_bin = r.get<std::uint32_t>(base);
        const auto count = r.get<std::uint64_t>(base);
        auto& bucket = cb.table[key];
        bucket.resize(count);
        for (auto& e : bucket) {
            e.model_ref_index = r.get<std::uint32_t>(base);
            e.alpha_model = r.get<double>(base);
        }
    }
    return cb;
}

inline void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
    const std::string bytes = serialize_codebook(cb);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::MalformedFile, "cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline Codebook load_codebook(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MalformedFile, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_codebook(bytes);
}

}  // namespace cadrec
