#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include "json.hpp"
#include "kecrs/params.hpp"

namespace kecrs::testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(KECRS_FIXTURES) / name;
}

inline nlohmann::json load_json(const std::string& name) {
    std::ifstream in(fixture(name));
    return nlohmann::json::parse(in);
}

// Same formula as tests/oracles/numeric_oracles.py.
inline Matrix fill(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    int s = 0;
    for (unsigned char c : name) s += c;
    s %= 97;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = 0.5 * std::sin(0.37 * static_cast<double>(i + 1) + 0.61 * static_cast<double>(j + 1) +
                                     0.11 * s);
        }
    }
    return m;
}

inline void fill_params(ParamStore& store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        Parameter& p = store[i];
        p.value = fill(p.name, p.value.rows(), p.value.cols());
    }
}

inline Matrix to_matrix(const nlohmann::json& rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows.at(i).at(j).get<double>();
    }
    return m;
}

inline ad::RowVector to_row(const nlohmann::json& v) {
    ad::RowVector r(static_cast<Eigen::Index>(v.size()));
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = v.at(i).get<double>();
    return r;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
    return (a - b).cwiseAbs().maxCoeff();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("kecrs-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace kecrs::testing
