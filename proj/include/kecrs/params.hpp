#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "kecrs/autodiff.hpp"
#include "kecrs/rng.hpp"

namespace kecrs {

using ad::Matrix;
using ad::Parameter;

/// Ordered collection of named parameters with stable addresses.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Parameter& add(std::string name, Matrix init, bool trainable = true);
    Parameter& get(std::string_view name);
    const Parameter& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    void zero_grad();
    std::size_t num_values() const;
    /// Copies values (not gradients) from a store with identical layout.
    void assign_values(const ParamStore& other);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-bound, bound) fill.
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);
/// Glorot-uniform fill for a fan_in x fan_out weight.
Matrix glorot_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Checkpoint layout: `<dir>/params.bin` holds every tensor as row-major
// little-endian float64, back to back; `<dir>/manifest.json` maps each tensor
// name to its byte offset and shape, plus a free-form "meta" object.
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const nlohmann::json& meta);
/// Loads every tensor in the manifest into a fresh store.
ParamStore load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

}  // namespace kecrs
