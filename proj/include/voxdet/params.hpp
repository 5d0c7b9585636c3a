#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "voxdet/autodiff.hpp"

namespace voxdet {

// Adam with decoupled weight decay. Moments live inside the ParameterStore
// entries so optimizer state follows the parameters.
struct AdamConfig {
  double learning_rate = 0.0002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0001;
};

template <typename Scalar>
void adam_step(ad::ParameterStore<Scalar>& store, const AdamConfig& cfg, int step_1based) {
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
  const Scalar bias1 = Scalar(1) - Scalar(std::pow(cfg.beta1, step_1based));
  const Scalar bias2 = Scalar(1) - Scalar(std::pow(cfg.beta2, step_1based));
  const Scalar lr = Scalar(cfg.learning_rate);
  for (auto& [name, e] : store.entries) {
    e.m = b1 * e.m + (Scalar(1) - b1) * e.grad;
    e.v = (b2 * e.v.array() + (Scalar(1) - b2) * e.grad.array().square()).matrix();
    const auto m_hat = e.m.array() / bias1;
    const auto v_hat = e.v.array() / bias2;
    e.value.array() -= lr * (m_hat / (v_hat.sqrt() + Scalar(cfg.eps)) +
                             Scalar(cfg.weight_decay) * e.value.array());
  }
}

// Checkpoint: manifest.json plus params.f32, a single little-endian float32
// blob holding every array in manifest order (sorted names), each in Eigen
// column-major storage order.
struct CheckpointInfo {
  std::uint64_t config_hash = 0;
  int iteration = 0;
  std::map<std::string, double> metrics;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const ad::ParameterStore<Scalar>& store,
                     const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["config_hash"] = info.config_hash;
  manifest["iteration"] = info.iteration;
  manifest["dtype"] = "f32le";
  manifest["blob"] = "params.f32";
  for (const auto& [k, v] : info.metrics) manifest["metrics"][k] = v;

  std::ofstream blob(dir / "params.f32", std::ios::binary);
  VOXDET_REQUIRE(blob.good(), "save_checkpoint: cannot write blob");
  std::size_t offset = 0;
  for (const auto& [name, e] : store.entries) {
    nlohmann::json p;
    p["name"] = name;
    p["rows"] = e.value.rows();
    p["cols"] = e.value.cols();
    p["offset"] = offset;
    manifest["params"].push_back(p);
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      const float f = static_cast<float>(e.value(i));
      blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    offset += static_cast<std::size_t>(e.value.size());
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(1) << "\n";
}

template <typename Scalar>
CheckpointInfo load_checkpoint(const std::filesystem::path& dir, ad::ParameterStore<Scalar>& store) {
  std::ifstream in(dir / "manifest.json");
  VOXDET_REQUIRE(in.good(), "load_checkpoint: missing manifest.json in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  VOXDET_REQUIRE(manifest["dtype"] == "f32le", "load_checkpoint: unsupported dtype");
  CheckpointInfo info;
  info.config_hash = manifest["config_hash"];
  info.iteration = manifest["iteration"];
  if (manifest.contains("metrics"))
    for (auto it = manifest["metrics"].begin(); it != manifest["metrics"].end(); ++it)
      info.metrics[it.key()] = it.value();

  std::ifstream blob(dir / manifest["blob"].get<std::string>(), std::ios::binary);
  VOXDET_REQUIRE(blob.good(), "load_checkpoint: missing parameter blob");
  for (const auto& p : manifest["params"]) {
    const std::string name = p["name"];
    const Eigen::Index rows = p["rows"], cols = p["cols"];
    MatX<Scalar> value(rows, cols);
    blob.seekg(static_cast<std::streamoff>(p["offset"].get<std::size_t>() * sizeof(float)));
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      float f;
      blob.read(reinterpret_cast<char*>(&f), sizeof(float));
      value(i) = static_cast<Scalar>(f);
    }
    store.emplace(name, std::move(value));
  }
  return info;
}

}  // namespace voxdet
