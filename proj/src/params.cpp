#include "kecrs/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kecrs/errors.hpp"

namespace kecrs {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) {
        auto copy = std::make_unique<Parameter>(*p);
        index_[copy->name] = params_.size();
        params_.push_back(std::move(copy));
    }
    return *this;
}

Parameter& ParamStore::add(std::string name, Matrix init, bool trainable) {
    if (index_.count(name) != 0) throw ShapeError("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->grad = Matrix::Zero(init.rows(), init.cols());
    p->value = std::move(init);
    p->trainable = trainable;
    index_[p->name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParamStore::get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw LookupError("unknown parameter '" + std::string(name) + "'");
    return *params_[it->second];
}

const Parameter& ParamStore::get(std::string_view name) const {
    return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(std::string_view name) const {
    return index_.count(std::string(name)) != 0;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
}

std::size_t ParamStore::num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParamStore::assign_values(const ParamStore& other) {
    if (other.size() != size()) throw ShapeError("assign_values: parameter count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
        Parameter& dst = *params_[i];
        const Parameter& src = other[i];
        if (dst.name != src.name || dst.value.rows() != src.value.rows() ||
            dst.value.cols() != src.value.cols()) {
            throw ShapeError("assign_values: layout mismatch at '" + dst.name + "'");
        }
        dst.value = src.value;
    }
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
    }
    return m;
}

Matrix glorot_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return uniform_matrix(rows, cols, bound, rng);
}

void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const nlohmann::json& meta) {
    std::filesystem::create_directories(dir);
    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IngestionError("cannot write " + (dir / "params.bin").string());
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = params[i];
        tensors.push_back({{"name", p.name},
                           {"offset", offset},
                           {"rows", p.value.rows()},
                           {"cols", p.value.cols()},
                           {"trainable", p.trainable}});
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                const double v = p.value(r, c);
                bin.write(reinterpret_cast<const char*>(&v), sizeof v);
            }
        }
        offset += static_cast<std::uint64_t>(p.value.size()) * sizeof(double);
    }
    nlohmann::json manifest = {{"format", "kecrs-checkpoint"},
                               {"version", 1},
                               {"dtype", "float64-le"},
                               {"order", "row-major"},
                               {"total_bytes", offset},
                               {"tensors", tensors},
                               {"meta", meta}};
    std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << "\n";
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IngestionError("missing checkpoint manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    return manifest;
}

ParamStore load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta) {
    const nlohmann::json manifest = read_checkpoint_meta(dir);
    if (manifest.value("format", "") != "kecrs-checkpoint") {
        throw IngestionError("not a checkpoint manifest: " + dir.string());
    }
    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IngestionError("missing params.bin in " + dir.string());
    ParamStore store;
    for (const auto& t : manifest.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        Matrix m(rows, cols);
        bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                double v;
                if (!bin.read(reinterpret_cast<char*>(&v), sizeof v)) {
                    throw IngestionError("truncated params.bin in " + dir.string());
                }
                m(r, c) = v;
            }
        }
        store.add(t.at("name").get<std::string>(), std::move(m), t.value("trainable", true));
    }
    if (meta != nullptr) *meta = manifest.value("meta", nlohmann::json::object());
    return store;
}

}  // namespace kecrs
