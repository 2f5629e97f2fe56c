#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeloss/backbone.hpp"

namespace gradeloss {

// Checkpoint layout: "GMCK", u32 version, u32 manifest length, manifest
// JSON (config, head, mode, tensor names/shapes/dtypes), then float32
// little-endian payloads in manifest order.
inline constexpr char kCheckpointMagic[4] = {'G', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"input_channels", c.input_channels}, {"input_size", c.input_size},
          {"conv_channels", c.conv_channels},   {"kernel", c.kernel},
          {"padding", c.padding},               {"linear_dims", c.linear_dims},
          {"classifier_dim", c.classifier_dim}, {"leaky_slope", c.leaky_slope},
          {"bn_epsilon", c.bn_epsilon},         {"bn_momentum", c.bn_momentum}};
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.input_channels = j.value("input_channels", c.input_channels);
  c.input_size = j.value("input_size", c.input_size);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.kernel = j.value("kernel", c.kernel);
  c.padding = j.value("padding", c.padding);
  c.linear_dims = j.value("linear_dims", c.linear_dims);
  c.classifier_dim = j.value("classifier_dim", c.classifier_dim);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("truncated checkpoint");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace detail

template <typename Scalar>
std::string serialize_checkpoint(Backbone<Scalar>& model) {
  auto tensors = model.parameters();
  for (auto& b : model.buffers()) tensors.push_back(b);

  nlohmann::json manifest;
  manifest["config"] = config_to_json(model.config());
  manifest["head"] = head_name(model.head());
  manifest["mode"] = model.mode() == Mode::Train ? "train" : "eval";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors)
    manifest["tensors"].push_back({{"name", t.name}, {"shape", {t.value->rows(), t.value->cols()}}, {"dtype", "f32"}});
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : tensors) {
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      const auto f = static_cast<float>(t.value->data()[i]);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  return out;
}

template <typename Scalar = float>
Backbone<Scalar> deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("not a GMCK checkpoint");
  std::size_t pos = 4;
  const auto version = detail::get_u32(bytes, pos);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::get_u32(bytes, pos);
  if (pos + len > bytes.size()) throw std::runtime_error("truncated checkpoint manifest");
  const auto manifest = nlohmann::json::parse(bytes.substr(pos, len));
  pos += len;

  Backbone<Scalar> model(config_from_json(manifest.at("config")), 0);
  const Head head = parse_head(manifest.at("head").get<std::string>());
  if (head != model.head()) model.swap_head(head, 0);
  model.set_mode(manifest.at("mode").get<std::string>() == "train" ? Mode::Train : Mode::Eval);

  auto tensors = model.parameters();
  for (auto& b : model.buffers()) tensors.push_back(b);
  const auto& entries = manifest.at("tensors");
  if (entries.size() != tensors.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& e = entries[k];
    auto& t = tensors[k];
    const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
    if (e.at("name").get<std::string>() != t.name || e.at("dtype").get<std::string>() != "f32" ||
        shape.size() != 2 || shape[0] != t.value->rows() || shape[1] != t.value->cols())
      throw std::runtime_error("checkpoint tensor '" + e.at("name").get<std::string>() + "' does not match model");
    const auto n = static_cast<std::size_t>(t.value->size());
    if (pos + 4 * n > bytes.size()) throw std::runtime_error("truncated checkpoint payload");
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + pos + 4 * i, 4);
      t.value->data()[i] = static_cast<Scalar>(f);
    }
    pos += 4 * n;
  }
  if (pos != bytes.size()) throw std::runtime_error("trailing bytes after checkpoint payload");
  return model;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Scalar>
void save_checkpoint(Backbone<Scalar>& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(model));
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<float>(read_file_bytes(path));
}

}  // namespace gradeloss
