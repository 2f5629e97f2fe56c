#include "gradeloss/tensor_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "gradeloss/checkpoint.hpp"

namespace gradeloss {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("truncated tensor file");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

void put_floats(std::string& out, const float* data, std::size_t n) {
  out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t h) {
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string fnv1a64_hex(std::string_view data, std::uint64_t state) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(data, state)));
  return buf;
}

std::string encode_vpat(const std::vector<const Image*>& channels) {
  if (channels.empty()) throw std::invalid_argument("VPAT needs at least one channel");
  const auto h = channels.front()->rows(), w = channels.front()->cols();
  std::string out("VPAT");
  put_u32(out, static_cast<std::uint32_t>(channels.size()));
  put_u32(out, static_cast<std::uint32_t>(h));
  put_u32(out, static_cast<std::uint32_t>(w));
  for (const Image* c : channels) {
    if (c->rows() != h || c->cols() != w) throw std::invalid_argument("VPAT channels differ in shape");
    put_floats(out, c->data(), static_cast<std::size_t>(c->size()));
  }
  return out;
}

std::vector<Image> decode_vpat(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "VPAT") != 0) throw std::runtime_error("not a VPAT file");
  std::size_t pos = 4;
  const auto c = get_u32(bytes, pos), h = get_u32(bytes, pos), w = get_u32(bytes, pos);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 16 + 4 * n * c) throw std::runtime_error("VPAT payload size mismatch");
  std::vector<Image> out;
  for (std::uint32_t k = 0; k < c; ++k) {
    Image img(h, w);
    std::memcpy(img.data(), bytes.data() + pos, 4 * n);
    pos += 4 * n;
    out.push_back(std::move(img));
  }
  return out;
}

void write_vpat(const std::filesystem::path& path, const std::vector<const Image*>& channels) {
  write_file_bytes(path, encode_vpat(channels));
}

std::vector<Image> read_vpat(const std::filesystem::path& path) { return decode_vpat(read_file_bytes(path)); }

std::string encode_vvol(const SpineVolume& v) {
  std::string out("VVOL");
  put_u32(out, static_cast<std::uint32_t>(v.nx));
  put_u32(out, static_cast<std::uint32_t>(v.ny));
  put_u32(out, static_cast<std::uint32_t>(v.nz));
  put_floats(out, v.voxels.data(), v.voxels.size());
  nlohmann::json trailer;
  trailer["centroids"] = nlohmann::json::array();
  for (const auto& c : v.centroids) trailer["centroids"].push_back({{"label", c.label}, {"position", c.position}});
  out += trailer.dump();
  return out;
}

SpineVolume decode_vvol(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "VVOL") != 0) throw std::runtime_error("not a VVOL file");
  std::size_t pos = 4;
  SpineVolume v;
  v.nx = static_cast<int>(get_u32(bytes, pos));
  v.ny = static_cast<int>(get_u32(bytes, pos));
  v.nz = static_cast<int>(get_u32(bytes, pos));
  const std::size_t n = static_cast<std::size_t>(v.nx) * v.ny * v.nz;
  if (bytes.size() < pos + 4 * n) throw std::runtime_error("truncated VVOL payload");
  v.voxels.resize(n);
  std::memcpy(v.voxels.data(), bytes.data() + pos, 4 * n);
  pos += 4 * n;
  const auto trailer = nlohmann::json::parse(bytes.substr(pos));
  for (const auto& c : trailer.at("centroids"))
    v.centroids.push_back({c.at("label").get<std::string>(), c.at("position").get<std::array<double, 3>>()});
  return v;
}

std::string dataset_digest(const Dataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a64(dataset.manifest.dump(), h);
  for (const auto& s : dataset.samples) h = fnv1a64(encode_vpat({&s.patch.image, &s.patch.heatmap}), h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir / "samples");
  const auto& entries = dataset.manifest.at("samples");
  if (entries.size() != dataset.samples.size()) throw std::invalid_argument("manifest does not match samples");
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    write_vpat(dir / entries[i].at("file").get<std::string>(), {&s.patch.image, &s.patch.heatmap});
  }
  write_file_bytes(dir / "manifest.json", dataset.manifest.dump(1) + "\n");
  return dataset_digest(dataset);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw std::runtime_error("no dataset at " + dir.string() + " (manifest.json missing; run `gradeloss gen` first)");
  Dataset ds;
  ds.manifest = nlohmann::json::parse(read_file_bytes(manifest_path));
  for (const auto& e : ds.manifest.at("samples")) {
    PatchSample s;
    s.id = e.at("id").get<std::int64_t>();
    s.grade = parse_grade(e.at("grade").get<std::string>());
    s.region = parse_region(e.at("region").get<std::string>());
    auto ch = read_vpat(dir / e.at("file").get<std::string>());
    if (ch.size() != 2) throw std::runtime_error("sample file must hold image and heatmap channels");
    s.patch.image = std::move(ch[0]);
    s.patch.heatmap = std::move(ch[1]);
    if (e.contains("params")) {
      const auto& p = e["params"];
      s.params.body_width_mm = p.value("body_width_mm", 0.0);
      s.params.body_height_mm = p.value("body_height_mm", 0.0);
      s.params.height_loss = p.value("height_loss", 0.0);
      s.params.foreground = p.value("foreground", 0.0);
      s.params.background = p.value("background", 0.0);
      s.params.center_row = p.value("center_row", 0);
      s.params.center_col = p.value("center_col", 0);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace gradeloss
