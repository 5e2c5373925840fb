#pragma once

#include <lrim/transfer.hpp>

#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>

namespace lrim {

using json = nlohmann::json;

/// Version of every file format written here; bump on layout changes so
/// stale cache entries get new keys.
inline constexpr int schema_version = 1;
inline constexpr const char* code_version = "1.0.0";

// ---------------------------------------------------------------------------
// Hashing and number formatting

inline std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// JSON forms

inline json to_json(const MeshSpec& s) {
    return json{{"alpha", s.alpha}, {"n", s.n}, {"orbit_points", s.orbit_points}, {"x_min", s.x_min},
                {"per_decade", s.per_decade}};
}

inline MeshSpec mesh_spec_from_json(const json& j) {
    MeshSpec s;
    s.alpha = j.at("alpha").get<double>();
    s.n = j.at("n").get<int>();
    s.orbit_points = j.at("orbit_points").get<int>();
    s.x_min = j.at("x_min").get<double>();
    s.per_decade = j.at("per_decade").get<int>();
    return s;
}

inline json to_json(const DensityRecord& d) {
    return json{{"schema_version", schema_version},
                {"kind", "density"},
                {"alpha", d.params.alpha()},
                {"mesh", to_json(d.density.mesh().spec())},
                {"exponent", d.density.exponent()},
                {"nodes", d.density.mesh().nodes()},
                {"values", d.density.values()},
                {"iterations", d.iterations},
                {"residual", d.residual},
                {"normalization", d.normalization},
                {"converged", d.converged},
                {"method", to_string(d.method)},
                {"tol", d.tol}};
}

/// Rebuilds the mesh from its MeshSpec and checks it against the stored nodes.
/// Pass `mesh` to attach the record to an existing mesh with the same nodes.
inline DensityRecord density_from_json(const json& j, MeshPtr mesh = nullptr) {
    if (j.at("schema_version").get<int>() != schema_version) {
        throw std::runtime_error("density record: unsupported schema version");
    }
    if (j.at("kind").get<std::string>() != "density") throw std::runtime_error("density record: wrong kind");
    const MapParams p(j.at("alpha").get<double>());
    const auto nodes = j.at("nodes").get<std::vector<double>>();
    if (!mesh) mesh = build_mesh(p, mesh_spec_from_json(j.at("mesh")));
    if (mesh->nodes() != nodes) throw std::runtime_error("density record: mesh does not match the stored nodes");
    DensityRecord d;
    d.params = p;
    d.density = GridFunction(mesh, j.at("values").get<std::vector<double>>(), j.at("exponent").get<double>());
    d.iterations = j.at("iterations").get<int>();
    d.residual = j.at("residual").get<double>();
    d.normalization = j.at("normalization").get<double>();
    d.converged = j.at("converged").get<bool>();
    d.method = density_method_from_string(j.at("method").get<std::string>());
    d.tol = j.at("tol").get<double>();
    return d;
}

// ---------------------------------------------------------------------------
// Files

/// Writes through a uniquely named temporary in the same directory and
/// renames it into place, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::random_device rd;
    std::ostringstream tag;
    tag << ".tmp." << std::hex << rd() << rd() << '.' << std::hash<std::thread::id>{}(std::this_thread::get_id());
    fs::path tmp = path;
    tmp += tag.str();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot rename into " + path.string() + ": " + ec.message());
    }
}

inline std::optional<std::string> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Density cache

inline std::filesystem::path default_cache_dir() {
    if (const char* env = std::getenv("LRIM_CACHE_DIR"); env && *env) return env;
    return ".lrim_cache";
}

/// SHA-256 of the canonical JSON of (alpha, mesh parameters, tol, method,
/// schema version).
inline std::string density_cache_key(double alpha, const MeshSpec& mesh, double tol, DensityMethod method) {
    const json key{{"alpha", alpha},
                   {"mesh", to_json(mesh)},
                   {"tol", tol},
                   {"method", to_string(method)},
                   {"schema_version", schema_version}};
    return sha256_hex(key.dump());
}

class DensityCache {
public:
    explicit DensityCache(std::filesystem::path dir = default_cache_dir()) : dir_(std::move(dir)) {}

    const std::filesystem::path& dir() const noexcept { return dir_; }
    std::filesystem::path path_for(const std::string& key) const { return dir_ / ("density-" + key + ".json"); }

    std::optional<DensityRecord> load(const std::string& key, MeshPtr mesh = nullptr) const {
        const auto text = read_file(path_for(key));
        if (!text) return std::nullopt;
        try {
            return density_from_json(json::parse(*text), std::move(mesh));
        } catch (const std::exception&) {
            return std::nullopt;  // unreadable or stale entries are recomputed
        }
    }

    void store(const std::string& key, const DensityRecord& d) const {
        write_file_atomic(path_for(key), to_json(d).dump());
    }

private:
    std::filesystem::path dir_;
};

struct CachedDensity {
    DensityRecord record;
    std::string key;
    bool hit = false;
};

/// Density for op from the cache, computing and storing it on a miss.
inline CachedDensity load_or_compute_density(const TransferOperator& op, double tol, DensityMethod method,
                                             const DensityCache& cache, int max_iter = 0) {
    CachedDensity out;
    out.key = density_cache_key(op.params().alpha(), op.mesh().spec(), tol, method);
    if (auto d = cache.load(out.key, op.mesh_ptr())) {
        out.record = std::move(*d);
        out.hit = true;
        return out;
    }
    out.record = compute_density(op, tol, max_iter, method);
    cache.store(out.key, out.record);
    return out;
}

} // namespace lrim
