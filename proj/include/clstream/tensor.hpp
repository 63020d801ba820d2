#pragma once

#include <cstddef>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace clstream {

/// Named nd-array. Checkpoints are flat lists of these.
struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::string n, std::vector<std::size_t> s)
        : name(std::move(n)), shape(std::move(s)) {
        data.assign(element_count(shape), 0.0);
    }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    std::size_t size() const { return data.size(); }
};

inline nlohmann::json tensors_to_json(const std::vector<Tensor>& ts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : ts) {
        arr.push_back({{"name", t.name}, {"shape", t.shape}, {"data", t.data}});
    }
    return arr;
}

inline std::vector<Tensor> tensors_from_json(const nlohmann::json& arr) {
    std::vector<Tensor> out;
    for (const auto& j : arr) {
        Tensor t;
        t.name = j.at("name").get<std::string>();
        t.shape = j.at("shape").get<std::vector<std::size_t>>();
        t.data = j.at("data").get<std::vector<double>>();
        if (t.data.size() != Tensor::element_count(t.shape))
            throw std::runtime_error("tensor '" + t.name + "': shape/data size mismatch");
        out.push_back(std::move(t));
    }
    return out;
}

inline void save_tensors(const std::vector<Tensor>& ts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint file: " + path);
    out << nlohmann::json{{"tensors", tensors_to_json(ts)}}.dump();
}

inline std::vector<Tensor> load_tensors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
    nlohmann::json j;
    in >> j;
    return tensors_from_json(j.at("tensors"));
}

}  // namespace clstream
